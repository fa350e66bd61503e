//! Variational inference over the latent variable of a trained generator.
//!
//! `q(z) = N(μ, diag(exp(lv)))` is fitted by stochastic ascent on
//! `L = E_q[log π(z, d)] + H[q]` with reparameterized samples
//! `z = μ + exp(½ lv) ⊙ ε`. `log π(z, d) = −Φ(G(z)) + log N(z; 0, I)` drops
//! only the likelihood normalizer. The prior and entropy keep their `2π`
//! terms, so in expectation `L = −Φ − KL(q ‖ N(0, I))`.

use std::f64::consts::{E, PI};
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::Rng;

use crate::autodiff::{self, Adam, BlockVars, EngineError, Optimizer, ParamVector, Sgd, Tape, Tensor, Var};
use crate::darcy::DarcySolver;
use crate::error::{Error, Result};
use crate::grid::{Grid2D, ObservationPlan, ObservationSet, ScalarField};
use crate::rng;
use crate::sparse::CsrMatrix;
use crate::surrogate::{observation_matrix, SurrogateModel};
use crate::vae::VaeDecoder;

type EResult<T> = std::result::Result<T, EngineError>;

pub const TRACE_CONVENTION: &str =
    "# log_joint = -misfit + log N(z; 0, I) (likelihood normalizer dropped); entropy exact, so elbo = -misfit - KL(q || N(0, I)) in expectation";

/// Maps latent rows to log-permeability rows.
pub trait Decoder: Sync {
    fn latent_dim(&self) -> usize;
    fn grid(&self) -> Grid2D;
    fn decode(&self, z: &Tensor) -> Result<Tensor>;
    /// `k = G(z)` and `J_Gᵀ w(k)` per row.
    fn decode_and_pullback(
        &self,
        z: &Tensor,
        w: &mut dyn FnMut(&Tensor) -> Result<Tensor>,
    ) -> Result<(Tensor, Tensor)>;
}

impl Decoder for VaeDecoder {
    fn latent_dim(&self) -> usize {
        VaeDecoder::latent_dim(self)
    }

    fn grid(&self) -> Grid2D {
        VaeDecoder::grid(self)
    }

    fn decode(&self, z: &Tensor) -> Result<Tensor> {
        Ok(self.decode_rows(z)?)
    }

    fn decode_and_pullback(
        &self,
        z: &Tensor,
        w: &mut dyn FnMut(&Tensor) -> Result<Tensor>,
    ) -> Result<(Tensor, Tensor)> {
        self.decode_and_vjp(z, w)
    }
}

/// Provides `Φ(k)` and `∂Φ/∂k` for rows of log-permeability, with the
/// observations bound at construction.
pub trait GradientBackend: Sync {
    fn misfit_rows(&self, k: &Tensor) -> Result<Vec<f64>>;
    fn misfit_and_grad_rows(&self, k: &Tensor) -> Result<(Vec<f64>, Tensor)>;
}

fn row_field(grid: Grid2D, k: &Tensor, r: usize) -> Result<ScalarField> {
    ScalarField::new(grid, k.row(r).to_vec())
}

/// Finite-volume solver with adjoint gradients; rows are solved in parallel.
#[derive(Debug, Clone)]
pub struct AdjointBackend {
    pub solver: DarcySolver,
    pub grid: Grid2D,
    pub plan: ObservationPlan,
    pub obs: ObservationSet,
}

impl AdjointBackend {
    pub fn new(grid: Grid2D, plan: ObservationPlan, obs: ObservationSet) -> Self {
        Self {
            solver: DarcySolver::default(),
            grid,
            plan,
            obs,
        }
    }
}

impl GradientBackend for AdjointBackend {
    fn misfit_rows(&self, k: &Tensor) -> Result<Vec<f64>> {
        rng::par_map(k.nrows(), |r| {
            self.solver.misfit(&row_field(self.grid, k, r)?, &self.plan, &self.obs)
        })
        .into_iter()
        .collect()
    }

    fn misfit_and_grad_rows(&self, k: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        let rows = rng::par_map(k.nrows(), |r| {
            self.solver
                .misfit_and_adjoint_grad(&row_field(self.grid, k, r)?, &self.plan, &self.obs)
        });
        let mut phi = Vec::with_capacity(k.nrows());
        let mut g = Array2::zeros(k.dim());
        for (r, res) in rows.into_iter().enumerate() {
            let (p, gr) = res?;
            phi.push(p);
            g.row_mut(r).assign(&ndarray::ArrayView1::from(gr.values()));
        }
        Ok((phi, g))
    }
}

/// Trained surrogate in place of the solver.
#[derive(Debug, Clone)]
pub struct SurrogateBackend {
    pub model: SurrogateModel,
    obs_matrix: Arc<CsrMatrix>,
    pub obs: ObservationSet,
}

impl SurrogateBackend {
    pub fn new(model: SurrogateModel, plan: &ObservationPlan, obs: ObservationSet) -> Self {
        let obs_matrix = Arc::new(observation_matrix(model.grid(), plan));
        Self { model, obs_matrix, obs }
    }
}

impl GradientBackend for SurrogateBackend {
    fn misfit_rows(&self, k: &Tensor) -> Result<Vec<f64>> {
        Ok(self.misfit_and_grad_rows(k)?.0)
    }

    fn misfit_and_grad_rows(&self, k: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        self.model.misfit_and_grad_rows(k, &self.obs_matrix, &self.obs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntropyMode {
    ClosedForm,
    /// Monte Carlo entropy with the score term removed from its gradient.
    McScoreRemoved,
    /// Monte Carlo entropy, full pathwise gradient.
    McFull,
}

impl EntropyMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            EntropyMode::ClosedForm => "closed-form",
            EntropyMode::McScoreRemoved => "mc-stl",
            EntropyMode::McFull => "mc-full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "closed-form" => Ok(EntropyMode::ClosedForm),
            "mc-stl" => Ok(EntropyMode::McScoreRemoved),
            "mc-full" => Ok(EntropyMode::McFull),
            _ => Err(Error::Config(format!("unknown entropy mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViOptimizer {
    Sgd,
    Adam,
}

impl ViOptimizer {
    pub fn as_str(&self) -> &'static str {
        match self {
            ViOptimizer::Sgd => "sgd",
            ViOptimizer::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(ViOptimizer::Sgd),
            "adam" => Ok(ViOptimizer::Adam),
            _ => Err(Error::Config(format!("unknown optimizer `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViConfig {
    pub n_opt: usize,
    pub m_s: usize,
    pub lr_mu: f64,
    pub lr_logvar: f64,
    pub entropy: EntropyMode,
    pub n_samples: usize,
    pub optimizer: ViOptimizer,
    /// Max-norm on the joint `(μ, lv)` gradient.
    pub clip_norm: Option<f64>,
}

impl Default for ViConfig {
    fn default() -> Self {
        Self {
            n_opt: 5000,
            m_s: 1,
            lr_mu: 8e-4,
            lr_logvar: 8e-4,
            entropy: EntropyMode::ClosedForm,
            n_samples: 10_000,
            optimizer: ViOptimizer::Sgd,
            clip_norm: None,
        }
    }
}

impl ViConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_s == 0 {
            return Err(Error::Config("m_s must be at least 1".into()));
        }
        if !(self.lr_mu > 0.0 && self.lr_logvar > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalParams {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl VariationalParams {
    pub fn zeros(h: usize) -> Self {
        Self {
            mu: vec![0.0; h],
            logvar: vec![0.0; h],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.logvar.iter().map(|l| (0.5 * l).exp()).collect()
    }

    pub fn to_params(&self) -> ParamVector {
        let h = self.dim();
        let mut v = self.mu.clone();
        v.extend(&self.logvar);
        ParamVector::from_blocks(vec![("mu", 1, h), ("logvar", 1, h)], v).expect("two blocks")
    }

    pub fn from_params(p: &ParamVector) -> Result<Self> {
        let get = |n: &str| {
            p.block(n)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| Error::Config(format!("variational parameters lack block `{n}`")))
        };
        let (mu, logvar) = (get("mu")?, get("logvar")?);
        if mu.len() != logvar.len() {
            return Err(Error::Shape {
                expected: mu.len(),
                got: logvar.len(),
            });
        }
        Ok(Self { mu, logvar })
    }

    /// `z = μ + σ ⊙ ε` for each row of `eps`.
    pub fn reparameterize(&self, eps: &Tensor) -> Result<Tensor> {
        if eps.ncols() != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                got: eps.ncols(),
            });
        }
        let s = self.sigma();
        Ok(Array2::from_shape_fn(eps.dim(), |(r, c)| self.mu[c] + s[c] * eps[[r, c]]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalGrad {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl VariationalGrad {
    pub fn norm_mu(&self) -> f64 {
        l2(&self.mu)
    }

    pub fn norm_logvar(&self) -> f64 {
        l2(&self.logvar)
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.mu.clone();
        v.extend(&self.logvar);
        v
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn draw_eps<R: Rng + ?Sized>(rng: &mut R, m_s: usize, h: usize) -> Tensor {
    Array2::from_shape_vec((m_s, h), rng::standard_normal_vec(rng, m_s * h)).expect("shape")
}

/// `log π(z, d)` and its latent gradient for each row of `z`.
pub fn log_joint_and_grad(
    z: &Tensor,
    backend: &dyn GradientBackend,
    decoder: &dyn Decoder,
) -> Result<(Vec<f64>, Tensor)> {
    if z.ncols() != decoder.latent_dim() {
        return Err(Error::Shape {
            expected: decoder.latent_dim(),
            got: z.ncols(),
        });
    }
    let mut phi = Vec::new();
    let (_, jtg) = decoder.decode_and_pullback(z, &mut |k| {
        let (p, g) = backend.misfit_and_grad_rows(k)?;
        phi = p;
        Ok(g)
    })?;
    let lj = phi
        .iter()
        .zip(z.axis_iter(Axis(0)))
        .map(|(p, zr)| -p + log_prior(zr))
        .collect();
    Ok((lj, -jtg - z))
}

pub fn log_joint(z: &[f64], backend: &dyn GradientBackend, decoder: &dyn Decoder) -> Result<f64> {
    let zr = Array2::from_shape_vec((1, z.len()), z.to_vec()).map_err(|_| Error::Shape {
        expected: decoder.latent_dim(),
        got: z.len(),
    })?;
    if zr.ncols() != decoder.latent_dim() {
        return Err(Error::Shape {
            expected: decoder.latent_dim(),
            got: z.len(),
        });
    }
    let k = decoder.decode(&zr)?;
    let phi = backend.misfit_rows(&k)?[0];
    Ok(-phi + log_prior(zr.row(0)))
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// `log N(z; 0, I)`.
fn log_prior(z: ndarray::ArrayView1<f64>) -> f64 {
    -0.5 * z.dot(&z) - z.len() as f64 * HALF_LN_2PI
}

/// Closed-form `H[q] = Σ (½ lv + ½ log 2πe)`.
pub fn entropy_closed_form(logvar: &[f64]) -> f64 {
    logvar.iter().map(|l| 0.5 * l + 0.5 * (2.0 * PI * E).ln()).sum()
}

/// `−log q(z)` at `z = μ + σ ⊙ ε`.
fn neg_log_q(logvar: &[f64], eps: ndarray::ArrayView1<f64>) -> f64 {
    logvar
        .iter()
        .zip(eps)
        .map(|(l, e)| HALF_LN_2PI + 0.5 * l + 0.5 * e * e)
        .sum()
}

fn elbo_from(lambda: &VariationalParams, eps: &Tensor, lj: &[f64], mode: EntropyMode) -> f64 {
    let n = lj.len() as f64;
    let mean_lj = lj.iter().sum::<f64>() / n;
    match mode {
        EntropyMode::ClosedForm => mean_lj + entropy_closed_form(&lambda.logvar),
        _ => {
            let h: f64 = eps.axis_iter(Axis(0)).map(|e| neg_log_q(&lambda.logvar, e)).sum();
            mean_lj + h / n
        }
    }
}

/// Monte Carlo `L` with the supplied draws (one row per sample).
pub fn elbo_vi(
    lambda: &VariationalParams,
    eps: &Tensor,
    mode: EntropyMode,
    backend: &dyn GradientBackend,
    decoder: &dyn Decoder,
) -> Result<f64> {
    let z = lambda.reparameterize(eps)?;
    let k = decoder.decode(&z)?;
    let phi = backend.misfit_rows(&k)?;
    let lj: Vec<f64> = phi
        .iter()
        .zip(z.axis_iter(Axis(0)))
        .map(|(p, zr)| -p + log_prior(zr))
        .collect();
    Ok(elbo_from(lambda, eps, &lj, mode))
}

/// Entropy part of the per-sample gradient, `(∂/∂μ, ∂/∂lv)`.
fn entropy_grad(mode: EntropyMode, sigma: f64, eps: f64) -> (f64, f64) {
    match mode {
        EntropyMode::ClosedForm | EntropyMode::McFull => (0.0, 0.5),
        EntropyMode::McScoreRemoved => (eps / sigma, 0.5 * eps * eps),
    }
}

/// Pathwise estimate of `∇L` with the supplied draws, and the matching
/// estimate of `L`.
pub fn grad_elbo_vi(
    lambda: &VariationalParams,
    eps: &Tensor,
    mode: EntropyMode,
    backend: &dyn GradientBackend,
    decoder: &dyn Decoder,
) -> Result<(f64, VariationalGrad)> {
    let z = lambda.reparameterize(eps)?;
    let (lj, dz) = log_joint_and_grad(&z, backend, decoder)?;
    let (n, h) = eps.dim();
    let s = lambda.sigma();
    let mut g = VariationalGrad {
        mu: vec![0.0; h],
        logvar: vec![0.0; h],
    };
    for r in 0..n {
        for c in 0..h {
            let e = eps[[r, c]];
            let (hm, hl) = entropy_grad(mode, s[c], e);
            g.mu[c] += dz[[r, c]] + hm;
            g.logvar[c] += dz[[r, c]] * 0.5 * s[c] * e + hl;
        }
    }
    for v in g.mu.iter_mut().chain(g.logvar.iter_mut()) {
        *v /= n as f64;
    }
    Ok((elbo_from(lambda, eps, &lj, mode), g))
}

/// `L` at fixed draws as a program of `(μ, lv)`; the data term enters as an
/// external node, so the tape sees the exact latent gradient.
pub struct ViObjective<'a> {
    pub eps: Tensor,
    pub mode: EntropyMode,
    pub backend: &'a dyn GradientBackend,
    pub decoder: &'a dyn Decoder,
}

impl autodiff::DiffProgram for ViObjective<'_> {
    fn forward(&self, t: &mut Tape, params: &BlockVars) -> EResult<Var> {
        let (n, h) = self.eps.dim();
        let mu = params.get("mu")?;
        let lv = params.get("logvar")?;
        let ones = t.constant(Array2::ones((n, 1)))?;
        let mu_r = t.matmul(ones, mu)?;
        let lv_r = t.matmul(ones, lv)?;
        let half = t.scale(lv_r, 0.5)?;
        let sd = t.exp(half)?;
        let eps = t.constant(self.eps.clone())?;
        let noise = t.mul(sd, eps)?;
        let z = t.add(mu_r, noise)?;
        let zv = t.value(z).clone();
        let mut phi = Vec::new();
        let (_, jtg) = self
            .decoder
            .decode_and_pullback(&zv, &mut |k| {
                let (p, g) = self.backend.misfit_and_grad_rows(k)?;
                phi = p;
                Ok(g)
            })
            .map_err(|e| EngineError::Params(e.to_string()))?;
        let neg_phi: Vec<f64> = phi.iter().map(|p| -p).collect();
        let data = t.external_rows(z, neg_phi, -jtg)?;
        let data = t.sum(data)?;
        let zz = t.square(z)?;
        let zz = t.sum(zz)?;
        let prior = t.scale(zz, -0.5)?;
        let prior = t.offset(prior, -((n * h) as f64) * HALF_LN_2PI)?;
        let joint = t.add(data, prior)?;
        let joint = t.scale(joint, 1.0 / n as f64)?;
        let ent = match self.mode {
            EntropyMode::ClosedForm => {
                let s = t.sum(lv)?;
                let s = t.scale(s, 0.5)?;
                t.offset(s, h as f64 * 0.5 * (2.0 * PI * E).ln())?
            }
            _ => {
                let d = t.sub(z, mu_r)?;
                let inv = ones_like_inv(t, sd)?;
                let d = t.mul(d, inv)?;
                let d = t.square(d)?;
                let d = t.sum(d)?;
                let d = t.scale(d, 0.5 / n as f64)?;
                let s = t.sum(lv)?;
                let s = t.scale(s, 0.5)?;
                let s = t.add(s, d)?;
                t.offset(s, h as f64 * HALF_LN_2PI)?
            }
        };
        t.add(joint, ent)
    }
}

/// `1/x` as `exp(−log x)`.
fn ones_like_inv(t: &mut Tape, x: Var) -> EResult<Var> {
    let l = t.log(x)?;
    let l = t.scale(l, -1.0)?;
    t.exp(l)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViTraceRow {
    pub iter: usize,
    pub elbo: f64,
    pub grad_norm_mu: f64,
    pub grad_norm_logvar: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ViTrace {
    pub rows: Vec<ViTraceRow>,
}

impl ViTrace {
    pub fn elbo(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.elbo).collect()
    }

    /// CSV with the constant convention on a leading comment line. With
    /// `timing = false` the wall-clock column is written as 0.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut s = String::new();
        s.push_str(TRACE_CONVENTION);
        s.push('\n');
        s.push_str("iter,elbo_estimate,grad_norm_mu,grad_norm_logvar,wall_ms\n");
        for r in &self.rows {
            let ms = if timing { r.wall_ms } else { 0.0 };
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e},{:.3}",
                r.iter, r.elbo, r.grad_norm_mu, r.grad_norm_logvar, ms
            );
        }
        s
    }
}

/// Trailing moving average with the given window (shorter at the start).
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        acc += v;
        if i >= w {
            acc -= values[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

fn clip(g: &mut VariationalGrad, max_norm: f64) {
    let n = l2(&g.flat());
    if n > max_norm {
        let c = max_norm / n;
        for v in g.mu.iter_mut().chain(g.logvar.iter_mut()) {
            *v *= c;
        }
    }
}

enum Opt {
    Sgd(Sgd, Sgd),
    Adam(Adam, Adam),
}

impl Opt {
    fn ascend(&mut self, lambda: &mut VariationalParams, g: &VariationalGrad) {
        match self {
            Opt::Sgd(a, b) => {
                a.ascend(&mut lambda.mu, &g.mu);
                b.ascend(&mut lambda.logvar, &g.logvar);
            }
            Opt::Adam(a, b) => {
                a.ascend(&mut lambda.mu, &g.mu);
                b.ascend(&mut lambda.logvar, &g.logvar);
            }
        }
    }
}

/// Stochastic ascent from `start` for `config.n_opt` iterations.
pub fn optimize_from<R: Rng + ?Sized>(
    config: &ViConfig,
    start: VariationalParams,
    backend: &dyn GradientBackend,
    decoder: &dyn Decoder,
    rng: &mut R,
) -> Result<(VariationalParams, ViTrace)> {
    config.validate()?;
    let h = decoder.latent_dim();
    if start.dim() != h {
        return Err(Error::Shape {
            expected: h,
            got: start.dim(),
        });
    }
    let mut lambda = start;
    let mut opt = match config.optimizer {
        ViOptimizer::Sgd => Opt::Sgd(Sgd::new(config.lr_mu), Sgd::new(config.lr_logvar)),
        ViOptimizer::Adam => Opt::Adam(Adam::new(config.lr_mu), Adam::new(config.lr_logvar)),
    };
    let mut trace = ViTrace {
        rows: Vec::with_capacity(config.n_opt),
    };
    let t0 = Instant::now();
    for iter in 0..config.n_opt {
        let eps = draw_eps(rng, config.m_s, h);
        let (elbo, mut g) = grad_elbo_vi(&lambda, &eps, config.entropy, backend, decoder).map_err(|e| {
            Error::Optimization {
                iteration: iter,
                reason: e.to_string(),
            }
        })?;
        let row = ViTraceRow {
            iter,
            elbo,
            grad_norm_mu: g.norm_mu(),
            grad_norm_logvar: g.norm_logvar(),
            wall_ms: 0.0,
        };
        if let Some(c) = config.clip_norm {
            clip(&mut g, c);
        }
        opt.ascend(&mut lambda, &g);
        if !lambda.mu.iter().chain(&lambda.logvar).all(|v| v.is_finite()) || !elbo.is_finite() {
            return Err(Error::Optimization {
                iteration: iter,
                reason: "non-finite variational parameters".into(),
            });
        }
        trace.rows.push(ViTraceRow {
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            ..row
        });
    }
    Ok((lambda, trace))
}

/// Ascent from the zero initialization.
pub fn optimize<R: Rng + ?Sized>(
    config: &ViConfig,
    backend: &dyn GradientBackend,
    decoder: &dyn Decoder,
    rng: &mut R,
) -> Result<(VariationalParams, ViTrace)> {
    optimize_from(config, VariationalParams::zeros(decoder.latent_dim()), backend, decoder, rng)
}

/// `n` draws of `z ~ q`, one per row.
pub fn posterior_latents<R: Rng + ?Sized>(lambda: &VariationalParams, n: usize, rng: &mut R) -> Tensor {
    let eps = draw_eps(rng, n, lambda.dim());
    lambda.reparameterize(&eps).expect("matching dimension")
}

/// `n` decoded posterior fields.
pub fn posterior_sample<R: Rng + ?Sized>(
    lambda: &VariationalParams,
    decoder: &dyn Decoder,
    n: usize,
    rng: &mut R,
) -> Result<Vec<ScalarField>> {
    let z = posterior_latents(lambda, n, rng);
    decode_fields(&z, decoder)
}

/// Decodes latent rows in chunks into fields.
pub fn decode_fields(z: &Tensor, decoder: &dyn Decoder) -> Result<Vec<ScalarField>> {
    let grid = decoder.grid();
    let mut out = Vec::with_capacity(z.nrows());
    for chunk in z.axis_chunks_iter(Axis(0), 256) {
        let k = decoder.decode(&chunk.to_owned())?;
        for r in 0..k.nrows() {
            out.push(row_field(grid, &k, r)?);
        }
    }
    Ok(out)
}
