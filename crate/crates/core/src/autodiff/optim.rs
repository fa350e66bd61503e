//! First-order optimizers over flat parameter slices.

use std::f64::consts::PI;

/// Learning-rate schedule, evaluated per step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant(f64),
    /// Cosine one-cycle: warm up from `max_lr / 25` to `max_lr` over the first
    /// 30% of steps, then anneal to `max_lr / 1e4`.
    OneCycle { max_lr: f64, total_steps: usize },
}

impl LrSchedule {
    pub fn at(&self, step: usize) -> f64 {
        match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::OneCycle { max_lr, total_steps } => {
                let total = total_steps.max(2) as f64;
                let warm = (0.3 * total).max(1.0);
                let initial = max_lr / 25.0;
                let last = initial / 1e4;
                let s = step as f64;
                let cos_interp = |from: f64, to: f64, frac: f64| {
                    to + (from - to) * 0.5 * (1.0 + (PI * frac.clamp(0.0, 1.0)).cos())
                };
                if s <= warm {
                    cos_interp(initial, max_lr, s / warm)
                } else {
                    cos_interp(max_lr, last, (s - warm) / (total - 1.0 - warm).max(1.0))
                }
            }
        }
    }
}

pub trait Optimizer {
    /// Moves `params` against `grad` (descent).
    fn descend(&mut self, params: &mut [f64], grad: &[f64]);

    /// Moves `params` along `grad` (ascent).
    fn ascend(&mut self, params: &mut [f64], grad: &[f64]) {
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        self.descend(params, &neg);
    }
}

#[derive(Debug, Clone)]
pub struct Sgd {
    pub schedule: LrSchedule,
    step: usize,
}

impl Sgd {
    pub fn new(lr: f64) -> Self {
        Self::with_schedule(LrSchedule::Constant(lr))
    }

    pub fn with_schedule(schedule: LrSchedule) -> Self {
        Self { schedule, step: 0 }
    }
}

impl Optimizer for Sgd {
    fn descend(&mut self, params: &mut [f64], grad: &[f64]) {
        let lr = self.schedule.at(self.step);
        for (p, g) in params.iter_mut().zip(grad) {
            *p -= lr * g;
        }
        self.step += 1;
    }

    fn ascend(&mut self, params: &mut [f64], grad: &[f64]) {
        let lr = self.schedule.at(self.step);
        for (p, g) in params.iter_mut().zip(grad) {
            *p += lr * g;
        }
        self.step += 1;
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self::with_schedule(LrSchedule::Constant(lr))
    }

    pub fn with_schedule(schedule: LrSchedule) -> Self {
        Self {
            schedule,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.step
    }
}

impl Optimizer for Adam {
    fn descend(&mut self, params: &mut [f64], grad: &[f64]) {
        if self.m.len() != params.len() {
            self.m = vec![0.0; params.len()];
            self.v = vec![0.0; params.len()];
        }
        let lr = self.schedule.at(self.step);
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}
