//! Physics-constrained surrogate: an MLP from a log-permeability field to
//! pressure and Darcy velocity, trained on PDE and boundary residuals only.
//!
//! Three residual forms are available.
//!
//! `Pressure` (default): the network outputs cell pressures and the pressures
//! on the Dirichlet faces. Two-point fluxes `−K_f ∇_f p` (harmonic face
//! permeability, half-cell distance at Dirichlet faces, zero on no-flow
//! faces) give the cell conservation residual `div q − f`; `J_pde` is the
//! mean square of that residual mapped through the inverse unit-permeability
//! operator, i.e. of the pressure correction a unit-permeability solve would
//! apply. Without the mapping the loss is conditioned like the fourth power
//! of the grid resolution. `J_b` compares the face pressures with the
//! boundary values. Velocities are recomputed from `p` and `k`.
//!
//! `Mixed`: the network also outputs normal fluxes on every x face and on the
//! interior y faces. `J_pde` collects `div q − f` and the flux residual
//! `q + K_f ∇_f p` on interior faces; `J_b` is the flux residual on the
//! Dirichlet faces. Cell velocities are means of opposing faces.
//!
//! `Central`: the output is `(p, vx, vy)` on cells, with second-order central
//! differences (one-sided at boundary cells). `J_b` compares linear
//! extrapolations of the two nearest centres with the boundary values.
//!
//! All residuals of the first two forms vanish at the finite-volume solution.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{self, Adam, BlockVars, EngineError, LrSchedule, Optimizer, ParamVector, Tape, Tensor, Var};
use crate::config::KeyValues;
use crate::darcy::{DarcySolution, P_LEFT, P_RIGHT};
use crate::error::{Error, Result};
use crate::grid::{FieldDataset, Grid2D, ObservationPlan, ObservationSet, ScalarField};
use crate::nn::{self, Activation, Mlp};
use crate::sparse::CsrMatrix;

type EResult<T> = std::result::Result<T, EngineError>;

pub const META_TAG: &str = "surrogateconfig";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualForm {
    Pressure,
    Mixed,
    Central,
}

impl ResidualForm {
    pub fn as_str(&self) -> &'static str {
        match self {
            ResidualForm::Pressure => "pressure",
            ResidualForm::Mixed => "mixed",
            ResidualForm::Central => "central",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pressure" => Ok(ResidualForm::Pressure),
            "mixed" => Ok(ResidualForm::Mixed),
            "central" => Ok(ResidualForm::Central),
            _ => Err(Error::Config(format!("unknown residual form `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Constant(f64),
    OneCycle(f64),
}

impl Schedule {
    fn to_meta(self) -> String {
        match self {
            Schedule::Constant(lr) => format!("constant {lr:?}"),
            Schedule::OneCycle(lr) => format!("onecycle {lr:?}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let t: Vec<&str> = s.split_whitespace().collect();
        let lr = |v: &str| {
            v.parse::<f64>()
                .ok()
                .filter(|x| *x > 0.0)
                .ok_or_else(|| Error::Config(format!("bad learning rate `{v}`")))
        };
        match t.as_slice() {
            ["constant", v] => Ok(Schedule::Constant(lr(v)?)),
            ["onecycle", v] => Ok(Schedule::OneCycle(lr(v)?)),
            _ => Err(Error::Config(format!("bad schedule `{s}`"))),
        }
    }

    fn lr_schedule(self, total_steps: usize) -> LrSchedule {
        match self {
            Schedule::Constant(lr) => LrSchedule::Constant(lr),
            Schedule::OneCycle(max_lr) => LrSchedule::OneCycle { max_lr, total_steps },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateConfig {
    pub nx: usize,
    pub ny: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub form: ResidualForm,
    pub f_const: f64,
}

impl SurrogateConfig {
    pub fn new(nx: usize, ny: usize) -> Self {
        Self {
            nx,
            ny,
            hidden: vec![256, 256, 256],
            activation: Activation::Relu,
            gamma: 10.0,
            epochs: 300,
            batch_size: 32,
            schedule: Schedule::Constant(1e-3),
            form: ResidualForm::Pressure,
            f_const: 3.0,
        }
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn grid(&self) -> Result<Grid2D> {
        Grid2D::new(self.nx, self.ny)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        if self.form == ResidualForm::Central && (self.nx < 3 || self.ny < 3) {
            return Err(Error::Config("central stencils need at least 3 cells per direction".into()));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.hidden.iter().any(|&w| w == 0) || self.batch_size == 0 {
            return Err(Error::Config("hidden widths and batch size must be positive".into()));
        }
        Ok(())
    }

    fn net(&self) -> Mlp {
        let mut widths = vec![self.cells()];
        widths.extend(&self.hidden);
        widths.push(output_width(self.grid().expect("validated grid"), self.form));
        Mlp::new("sur", widths, self.activation, Activation::Identity)
    }

    pub fn to_meta(&self) -> Vec<(String, String)> {
        let mut kv = KeyValues::new();
        kv.set("nx", self.nx.to_string());
        kv.set("ny", self.ny.to_string());
        kv.set("backend", "mlp");
        kv.set(
            "hidden",
            self.hidden.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","),
        );
        kv.set("activation", self.activation.as_str());
        kv.set("gamma", format!("{:?}", self.gamma));
        kv.set("epochs", self.epochs.to_string());
        kv.set("batch_size", self.batch_size.to_string());
        kv.set("schedule", self.schedule.to_meta());
        kv.set("residual", self.form.as_str());
        kv.set("f_const", format!("{:?}", self.f_const));
        kv.into_pairs()
    }

    pub fn from_meta(pairs: &[(String, String)]) -> Result<Self> {
        let kv = KeyValues::from_pairs(pairs.to_vec());
        if let Some(b) = kv.get("backend") {
            if b != "mlp" {
                return Err(Error::Config(format!("unsupported surrogate backend `{b}`")));
            }
        }
        let cfg = Self {
            nx: kv.require("nx")?,
            ny: kv.require("ny")?,
            hidden: kv.list("hidden")?.unwrap_or_default(),
            activation: Activation::parse(kv.get("activation").unwrap_or("relu"))?,
            gamma: kv.get_or("gamma", 10.0)?,
            epochs: kv.get_or("epochs", 0)?,
            batch_size: kv.get_or("batch_size", 32)?,
            schedule: Schedule::parse(kv.get("schedule").unwrap_or("constant 0.001"))?,
            form: ResidualForm::parse(kv.get("residual").unwrap_or("pressure"))?,
            f_const: kv.get_or("f_const", 3.0)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Fixed linear operators of the residual loss for one grid.
#[derive(Debug, Clone)]
struct Operators {
    grid: Grid2D,
    kind: ResidualForm,
    // pressure and mixed: x-face pressure gradients (+ Dirichlet constant), interior
    // y-face gradients, divergence, face-to-cell averages, face selection
    grad_x: Arc<CsrMatrix>,
    grad_x_const: Vec<f64>,
    grad_y: Arc<CsrMatrix>,
    div_x: Arc<CsrMatrix>,
    div_y: Arc<CsrMatrix>,
    avg_x: Arc<CsrMatrix>,
    avg_y: Arc<CsrMatrix>,
    interior_x: Arc<CsrMatrix>,
    boundary_x: Arc<CsrMatrix>,
    // central: cell-centred derivatives and boundary extrapolation
    dx: Arc<CsrMatrix>,
    dy: Arc<CsrMatrix>,
    bnd_p: Arc<CsrMatrix>,
    bnd_p_target: Vec<f64>,
    bnd_v: Arc<CsrMatrix>,
}

fn central_diff(grid: Grid2D, along_x: bool) -> CsrMatrix {
    let (nx, ny) = (grid.nx(), grid.ny());
    let (n, h) = if along_x { (nx, grid.hx()) } else { (ny, grid.hy()) };
    let idx = |c: usize, other: usize| {
        if along_x {
            grid.index(c, other)
        } else {
            grid.index(other, c)
        }
    };
    let mut t = Vec::new();
    let others = if along_x { ny } else { nx };
    for o in 0..others {
        for c in 0..n {
            let row = idx(c, o);
            let w = 1.0 / (2.0 * h);
            if c == 0 {
                t.extend([(row, idx(0, o), -3.0 * w), (row, idx(1, o), 4.0 * w), (row, idx(2, o), -w)]);
            } else if c == n - 1 {
                t.extend([
                    (row, idx(n - 1, o), 3.0 * w),
                    (row, idx(n - 2, o), -4.0 * w),
                    (row, idx(n - 3, o), w),
                ]);
            } else {
                t.extend([(row, idx(c + 1, o), w), (row, idx(c - 1, o), -w)]);
            }
        }
    }
    CsrMatrix::from_triplets(grid.len(), grid.len(), &t)
}

/// Inverse of the unit-permeability finite-volume operator with homogeneous
/// Dirichlet faces. It is symmetric, so it acts on rows from the right.
fn unit_inverse(grid: Grid2D) -> Arc<Tensor> {
    static CACHE: OnceLock<Mutex<HashMap<Grid2D, Arc<Tensor>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(v) = cache.lock().expect("cache lock").get(&grid) {
        return v.clone();
    }
    let m = grid.len();
    let ops = Operators::new(grid, ResidualForm::Pressure);
    let mut l = nalgebra::DMatrix::zeros(m, m);
    let mut e = vec![0.0; ops.grad_x.ncols()];
    for c in 0..m {
        e[c] = 1.0;
        let a = ops.div_x.matvec(&ops.grad_x.matvec(&e));
        let b = ops.div_y.matvec(&ops.grad_y.matvec(&e));
        for r in 0..m {
            l[(r, c)] = -(a[r] + b[r]);
        }
        e[c] = 0.0;
    }
    let inv = l.cholesky().expect("unit operator is positive definite").inverse();
    let t = Arc::new(Array2::from_shape_fn((m, m), |(r, c)| inv[(r, c)]));
    cache.lock().expect("cache lock").insert(grid, t.clone());
    t
}

/// Number of x faces and of interior y faces.
fn face_counts(grid: Grid2D) -> (usize, usize) {
    ((grid.nx() + 1) * grid.ny(), grid.nx() * (grid.ny() - 1))
}

/// Width of the network output for a stencil choice.
pub fn output_width(grid: Grid2D, kind: ResidualForm) -> usize {
    match kind {
        ResidualForm::Pressure => grid.len() + 2 * grid.ny(),
        ResidualForm::Mixed => {
            let (fx, fy) = face_counts(grid);
            grid.len() + fx + fy
        }
        ResidualForm::Central => 3 * grid.len(),
    }
}

impl Operators {
    fn new(grid: Grid2D, kind: ResidualForm) -> Self {
        let (nx, ny, m) = (grid.nx(), grid.ny(), grid.len());
        let (hx, hy) = (grid.hx(), grid.hy());
        let (fx, fy) = face_counts(grid);
        let xf = |i: usize, j: usize| j * (nx + 1) + i;
        // interior y face below cell row j (j >= 1)
        let yf = |i: usize, j: usize| (j - 1) * nx + i;

        // the pressure form reads the Dirichlet face values from the output
        let pressure = kind == ResidualForm::Pressure;
        let width = if pressure { m + 2 * ny } else { m };
        let mut gx = Vec::new();
        let mut gx_c = vec![0.0; fx];
        let mut sel_i = Vec::new();
        let mut sel_b = Vec::new();
        for j in 0..ny {
            gx.push((xf(0, j), grid.index(0, j), 2.0 / hx));
            if pressure {
                gx.push((xf(0, j), m + j, -2.0 / hx));
            } else {
                gx_c[xf(0, j)] = -2.0 * P_LEFT / hx;
            }
            sel_b.push((2 * j, xf(0, j), 1.0));
            for i in 1..nx {
                gx.push((xf(i, j), grid.index(i, j), 1.0 / hx));
                gx.push((xf(i, j), grid.index(i - 1, j), -1.0 / hx));
                sel_i.push((j * (nx - 1) + i - 1, xf(i, j), 1.0));
            }
            gx.push((xf(nx, j), grid.index(nx - 1, j), -2.0 / hx));
            if pressure {
                gx.push((xf(nx, j), m + ny + j, 2.0 / hx));
            } else {
                gx_c[xf(nx, j)] = 2.0 * P_RIGHT / hx;
            }
            sel_b.push((2 * j + 1, xf(nx, j), 1.0));
        }
        let mut gy = Vec::new();
        for j in 1..ny {
            for i in 0..nx {
                gy.push((yf(i, j), grid.index(i, j), 1.0 / hy));
                gy.push((yf(i, j), grid.index(i, j - 1), -1.0 / hy));
            }
        }
        let mut dvx = Vec::new();
        let mut dvy = Vec::new();
        let mut ax = Vec::new();
        let mut ay = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let c = grid.index(i, j);
                dvx.extend([(c, xf(i + 1, j), 1.0 / hx), (c, xf(i, j), -1.0 / hx)]);
                ax.extend([(c, xf(i + 1, j), 0.5), (c, xf(i, j), 0.5)]);
                if j + 1 < ny {
                    dvy.push((c, yf(i, j + 1), 1.0 / hy));
                    ay.push((c, yf(i, j + 1), 0.5));
                }
                if j > 0 {
                    dvy.push((c, yf(i, j), -1.0 / hy));
                    ay.push((c, yf(i, j), 0.5));
                }
            }
        }

        let central = kind == ResidualForm::Central;
        let mut bp = Vec::new();
        let mut target = Vec::new();
        let mut bv = Vec::new();
        if pressure {
            target.extend(std::iter::repeat_n(P_LEFT, ny));
            target.extend(std::iter::repeat_n(P_RIGHT, ny));
        }
        if central {
            for j in 0..ny {
                let r = target.len();
                bp.extend([(r, grid.index(0, j), 1.5), (r, grid.index(1, j), -0.5)]);
                target.push(P_LEFT);
                let r = target.len();
                bp.extend([(r, grid.index(nx - 1, j), 1.5), (r, grid.index(nx - 2, j), -0.5)]);
                target.push(P_RIGHT);
            }
            for i in 0..nx {
                bv.extend([(2 * i, grid.index(i, 0), 1.5), (2 * i, grid.index(i, 1), -0.5)]);
                bv.extend([
                    (2 * i + 1, grid.index(i, ny - 1), 1.5),
                    (2 * i + 1, grid.index(i, ny - 2), -0.5),
                ]);
            }
        }
        let csr = |r: usize, c: usize, t: &[(usize, usize, f64)]| Arc::new(CsrMatrix::from_triplets(r, c, t));
        Self {
            grid,
            kind,
            grad_x: csr(fx, width, &gx),
            grad_x_const: gx_c,
            grad_y: csr(fy, width, &gy),
            div_x: csr(m, fx, &dvx),
            div_y: csr(m, fy, &dvy),
            avg_x: csr(m, fx, &ax),
            avg_y: csr(m, fy, &ay),
            interior_x: csr((nx - 1) * ny, fx, &sel_i),
            boundary_x: csr(2 * ny, fx, &sel_b),
            dx: if central { Arc::new(central_diff(grid, true)) } else { csr(m, m, &[]) },
            dy: if central { Arc::new(central_diff(grid, false)) } else { csr(m, m, &[]) },
            bnd_p: csr(target.len(), m, &bp),
            bnd_p_target: target,
            bnd_v: csr(if central { 2 * nx } else { 0 }, m, &bv),
        }
    }

    /// Permeability coefficients for a batch of `k` rows: x-face and
    /// interior y-face values for `Flux`, cell values twice for `Central`.
    fn coefficients(&self, k: &Tensor) -> (Tensor, Tensor) {
        let g = self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        match self.kind {
            ResidualForm::Central => {
                let e = k.mapv(f64::exp);
                (e.clone(), e)
            }
            ResidualForm::Pressure | ResidualForm::Mixed => {
                let n = k.nrows();
                let (fx, fy) = face_counts(g);
                let mut cx = Array2::zeros((n, fx));
                let mut cy = Array2::zeros((n, fy));
                for r in 0..n {
                    let e: Vec<f64> = k.row(r).iter().map(|v| v.exp()).collect();
                    let hm = |a: f64, b: f64| 2.0 * a * b / (a + b);
                    for j in 0..ny {
                        cx[[r, j * (nx + 1)]] = e[g.index(0, j)];
                        cx[[r, j * (nx + 1) + nx]] = e[g.index(nx - 1, j)];
                        for i in 1..nx {
                            cx[[r, j * (nx + 1) + i]] = hm(e[g.index(i - 1, j)], e[g.index(i, j)]);
                        }
                    }
                    for j in 1..ny {
                        for i in 0..nx {
                            cy[[r, (j - 1) * nx + i]] = hm(e[g.index(i, j - 1)], e[g.index(i, j)]);
                        }
                    }
                }
                (cx, cy)
            }
        }
    }

    fn tiled(row: &[f64], n: usize) -> Tensor {
        Array2::from_shape_fn((n, row.len()), |(_, c)| row[c])
    }

    fn mean_square(t: &mut Tape, r: Var) -> EResult<Var> {
        let s = t.square(r)?;
        t.mean(s)
    }

    /// `(J, J_pde, J_b)` for batched raw outputs.
    fn loss(
        &self,
        t: &mut Tape,
        out: Var,
        coeff: &(Tensor, Tensor),
        f: f64,
        gamma: f64,
    ) -> EResult<(Var, Var, Var)> {
        let m = self.grid.len();
        let n = t.value(out).nrows();
        let p = t.columns(out, 0, m)?;
        let (jpde, jb) = match self.kind {
            ResidualForm::Pressure => {
                // K ∇p on faces, its divergence, then the unit-permeability
                // pressure correction that would cancel the residual
                let gx = t.stencil(out, self.grad_x.clone())?;
                let kx = t.constant(coeff.0.clone())?;
                let fx = t.mul(kx, gx)?;
                let gy = t.stencil(out, self.grad_y.clone())?;
                let ky = t.constant(coeff.1.clone())?;
                let fy = t.mul(ky, gy)?;
                let dx = t.stencil(fx, self.div_x.clone())?;
                let dy = t.stencil(fy, self.div_y.clone())?;
                let div = t.add(dx, dy)?;
                let r = t.offset(div, f)?;
                let inv = t.constant(unit_inverse(self.grid).as_ref().clone())?;
                let corr = t.matmul(r, inv)?;
                let bf = t.columns(out, m, 2 * self.grid.ny())?;
                let target = t.constant(Self::tiled(&self.bnd_p_target, n))?;
                let db = t.sub(bf, target)?;
                (Self::mean_square(t, corr)?, Self::mean_square(t, db)?)
            }
            ResidualForm::Mixed => {
                let (fx, fy) = face_counts(self.grid);
                let qx = t.columns(out, m, fx)?;
                let qy = t.columns(out, m + fx, fy)?;
                let dx = t.stencil(qx, self.div_x.clone())?;
                let dy = t.stencil(qy, self.div_y.clone())?;
                let div = t.add(dx, dy)?;
                let r1 = t.offset(div, -f)?;
                let gp = t.stencil(p, self.grad_x.clone())?;
                let c = t.constant(Self::tiled(&self.grad_x_const, n))?;
                let gp = t.add(gp, c)?;
                let kx = t.constant(coeff.0.clone())?;
                let tx = t.mul(kx, gp)?;
                let rx = t.add(qx, tx)?;
                let gq = t.stencil(p, self.grad_y.clone())?;
                let ky = t.constant(coeff.1.clone())?;
                let ty = t.mul(ky, gq)?;
                let ry = t.add(qy, ty)?;
                let rxi = t.stencil(rx, self.interior_x.clone())?;
                let rxb = t.stencil(rx, self.boundary_x.clone())?;
                let a = Self::mean_square(t, r1)?;
                let b = Self::mean_square(t, rxi)?;
                let c = Self::mean_square(t, ry)?;
                let ab = t.add(a, b)?;
                (t.add(ab, c)?, Self::mean_square(t, rxb)?)
            }
            ResidualForm::Central => {
                let vx = t.columns(out, m, m)?;
                let vy = t.columns(out, 2 * m, m)?;
                let dvx = t.stencil(vx, self.dx.clone())?;
                let dvy = t.stencil(vy, self.dy.clone())?;
                let div = t.add(dvx, dvy)?;
                let r1 = t.offset(div, -f)?;
                let kc = t.constant(coeff.0.clone())?;
                let px = t.stencil(p, self.dx.clone())?;
                let py = t.stencil(p, self.dy.clone())?;
                let fx = t.mul(kc, px)?;
                let fy = t.mul(kc, py)?;
                let r2 = t.add(vx, fx)?;
                let r3 = t.add(vy, fy)?;
                let a = Self::mean_square(t, r1)?;
                let b = Self::mean_square(t, r2)?;
                let c = Self::mean_square(t, r3)?;
                let ab = t.add(a, b)?;
                let jpde = t.add(ab, c)?;
                let bp = t.stencil(p, self.bnd_p.clone())?;
                let target = t.constant(Self::tiled(&self.bnd_p_target, n))?;
                let bp = t.sub(bp, target)?;
                let bv = t.stencil(vy, self.bnd_v.clone())?;
                let sp = t.square(bp)?;
                let sp = t.sum(sp)?;
                let sv = t.square(bv)?;
                let sv = t.sum(sv)?;
                let jb = t.add(sp, sv)?;
                let count = n * (self.bnd_p_target.len() + self.bnd_v.nrows());
                (jpde, t.scale(jb, 1.0 / count as f64)?)
            }
        };
        let pen = t.scale(jb, gamma)?;
        let j = t.add(jpde, pen)?;
        Ok((j, jpde, jb))
    }

    /// Splits one raw output row into cell fields; `k` is the input row.
    fn prediction(&self, raw: Vec<f64>, k: &[f64]) -> Result<SurrogatePrediction> {
        let g = self.grid;
        let m = g.len();
        let (vx, vy) = match self.kind {
            ResidualForm::Pressure => {
                let krow = Array2::from_shape_vec((1, m), k.to_vec()).expect("row");
                let (cx, cy) = self.coefficients(&krow);
                let qx: Vec<f64> = self.grad_x.matvec(&raw).iter().zip(cx.iter()).map(|(g, c)| -g * c).collect();
                let qy: Vec<f64> = self.grad_y.matvec(&raw).iter().zip(cy.iter()).map(|(g, c)| -g * c).collect();
                (self.avg_x.matvec(&qx), self.avg_y.matvec(&qy))
            }
            ResidualForm::Mixed => {
                let (fx, _) = face_counts(g);
                (self.avg_x.matvec(&raw[m..m + fx]), self.avg_y.matvec(&raw[m + fx..]))
            }
            ResidualForm::Central => (raw[m..2 * m].to_vec(), raw[2 * m..].to_vec()),
        };
        Ok(SurrogatePrediction {
            p: ScalarField::new(g, raw[..m].to_vec())?,
            vx: ScalarField::new(g, vx)?,
            vy: ScalarField::new(g, vy)?,
            form: self.kind,
            raw,
        })
    }
}

/// Cell-centred fields, plus the raw output they were read from. For the
/// flux stencil the raw output carries face fluxes and the cell velocities
/// are face averages.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogatePrediction {
    pub p: ScalarField,
    pub vx: ScalarField,
    pub vy: ScalarField,
    pub form: ResidualForm,
    pub raw: Vec<f64>,
}

impl SurrogatePrediction {
    /// Cell-centred fields for the central stencil.
    pub fn central(p: ScalarField, vx: ScalarField, vy: ScalarField) -> Result<Self> {
        let g = p.grid();
        if vx.grid() != g || vy.grid() != g {
            return Err(Error::Shape {
                expected: g.len(),
                got: vx.grid().len().max(vy.grid().len()),
            });
        }
        let mut raw = p.values().to_vec();
        raw.extend_from_slice(vx.values());
        raw.extend_from_slice(vy.values());
        Ok(Self {
            p,
            vx,
            vy,
            form: ResidualForm::Central,
            raw,
        })
    }

    /// The solver solution laid out as a surrogate output.
    pub fn from_solution(sol: &DarcySolution, form: ResidualForm) -> Result<Self> {
        let g = sol.p.grid();
        let mut raw = sol.p.values().to_vec();
        match form {
            ResidualForm::Pressure => {
                raw.extend(std::iter::repeat_n(P_LEFT, g.ny()));
                raw.extend(std::iter::repeat_n(P_RIGHT, g.ny()));
                let (cx, cy) = sol.cell_velocity();
                return Ok(Self {
                    p: sol.p.clone(),
                    vx: ScalarField::new(g, cx)?,
                    vy: ScalarField::new(g, cy)?,
                    form,
                    raw,
                });
            }
            ResidualForm::Mixed => {
                raw.extend_from_slice(&sol.vx);
                raw.extend_from_slice(&sol.vy[g.nx()..g.nx() * g.ny()]);
            }
            ResidualForm::Central => {
                let (cx, cy) = sol.cell_velocity();
                raw.extend(cx);
                raw.extend(cy);
            }
        }
        // velocities of the mixed and central layouts are read from `raw`
        Operators::new(g, form).prediction(raw, &[])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualLoss {
    pub total: f64,
    pub pde: f64,
    pub boundary: f64,
}

/// `J = J_pde + γ J_b` of a prediction for log-permeability `k`.
pub fn residual_loss(pred: &SurrogatePrediction, k: &ScalarField, f_const: f64, gamma: f64) -> Result<ResidualLoss> {
    let grid = k.grid();
    if pred.p.grid() != grid || pred.raw.len() != output_width(grid, pred.form) {
        return Err(Error::Shape {
            expected: output_width(grid, pred.form),
            got: pred.raw.len(),
        });
    }
    let ops = Operators::new(grid, pred.form);
    let kt = Array2::from_shape_vec((1, grid.len()), k.values().to_vec()).expect("row");
    let coeff = ops.coefficients(&kt);
    let mut t = Tape::new();
    let out = t.row(&pred.raw)?;
    let (j, jp, jb) = ops.loss(&mut t, out, &coeff, f_const, gamma)?;
    Ok(ResidualLoss {
        total: t.scalar(j),
        pde: t.scalar(jp),
        boundary: t.scalar(jb),
    })
}

/// Observation operator as a `D × M` sparse matrix.
pub fn observation_matrix(grid: Grid2D, plan: &ObservationPlan) -> CsrMatrix {
    let mut t = Vec::new();
    for (r, st) in plan.stencils(grid).iter().enumerate() {
        for &(c, w) in st {
            t.push((r, c, w));
        }
    }
    CsrMatrix::from_triplets(plan.len(), grid.len(), &t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    pub config: SurrogateConfig,
    pub params: ParamVector,
}

impl SurrogateModel {
    pub fn zeros(config: SurrogateConfig) -> Result<Self> {
        config.validate()?;
        let params = nn::layout(&[&config.net()]);
        Ok(Self { config, params })
    }

    pub fn init<R: Rng + ?Sized>(config: SurrogateConfig, rng: &mut R) -> Result<Self> {
        let mut s = Self::zeros(config)?;
        s.config.net().init_uniform(&mut s.params, rng);
        Ok(s)
    }

    pub fn grid(&self) -> Grid2D {
        self.config.grid().expect("validated grid")
    }

    fn check_field(&self, k: &ScalarField) -> Result<()> {
        if k.grid() != self.grid() {
            return Err(Error::Shape {
                expected: self.grid().len(),
                got: k.grid().len(),
            });
        }
        Ok(())
    }

    /// Raw network output rows for each row of `k`; the first `M` columns
    /// are the pressure.
    pub fn predict_rows(&self, k: &Tensor) -> Result<Tensor> {
        let net = self.config.net();
        let mut t = Tape::new();
        let v = autodiff::load_params(&mut t, &self.params, false)?;
        let x = t.constant(k.clone())?;
        let y = net.forward(&mut t, &v, x)?;
        Ok(t.value(y).clone())
    }

    pub fn predict(&self, k: &ScalarField) -> Result<SurrogatePrediction> {
        self.check_field(k)?;
        let row = Array2::from_shape_vec((1, k.grid().len()), k.values().to_vec()).expect("row");
        let out = self.predict_rows(&row)?;
        Operators::new(self.grid(), self.config.form).prediction(out.row(0).to_vec(), k.values())
    }

    /// Observed surrogate pressure.
    pub fn forward(&self, k: &ScalarField, plan: &ObservationPlan) -> Result<Vec<f64>> {
        Ok(crate::grid::observe(&self.predict(k)?.p, plan))
    }

    /// `Φ̂(k)` and `∂Φ̂/∂k` for each row of `k`, sharing one tape.
    pub fn misfit_and_grad_rows(
        &self,
        k: &Tensor,
        obs_matrix: &Arc<CsrMatrix>,
        obs: &ObservationSet,
    ) -> Result<(Vec<f64>, Tensor)> {
        if k.ncols() != self.grid().len() {
            return Err(Error::Shape {
                expected: self.grid().len(),
                got: k.ncols(),
            });
        }
        if obs.len() != obs_matrix.nrows() {
            return Err(Error::Shape {
                expected: obs_matrix.nrows(),
                got: obs.len(),
            });
        }
        let m = self.grid().len();
        let n = k.nrows();
        let net = self.config.net();
        let mut t = Tape::new();
        let v = autodiff::load_params(&mut t, &self.params, false)?;
        let x = t.leaf(k.clone())?;
        let y = net.forward(&mut t, &v, x)?;
        let p = t.columns(y, 0, m)?;
        let pred = t.stencil(p, obs_matrix.clone())?;
        let d = Array2::from_shape_fn((n, obs.len()), |(_, c)| obs.noisy[c] / obs.sigma[c]);
        let inv = Array2::from_shape_fn((n, obs.len()), |(_, c)| 1.0 / obs.sigma[c]);
        let inv = t.constant(inv)?;
        let scaled = t.mul(pred, inv)?;
        let d = t.constant(d)?;
        let r = t.sub(scaled, d)?;
        let r2 = t.square(r)?;
        let rv = t.value(r2).clone();
        let phi: Vec<f64> = rv.sum_axis(Axis(1)).iter().map(|s| 0.5 * s).collect();
        let total = t.sum(r2)?;
        let total = t.scale(total, 0.5)?;
        let grads = t.backward(total)?;
        Ok((phi, grads.get_or_zeros(x, k.dim())))
    }

    /// `∂Φ̂/∂k` with `Φ̂(k) = ½ Σ ((observe(p̂(k)) − d) / σ)²`.
    pub fn misfit_and_grad_k(
        &self,
        k: &ScalarField,
        plan: &ObservationPlan,
        obs: &ObservationSet,
    ) -> Result<(f64, ScalarField)> {
        self.check_field(k)?;
        let a = Arc::new(observation_matrix(self.grid(), plan));
        let row = Array2::from_shape_vec((1, k.grid().len()), k.values().to_vec()).expect("row");
        let (phi, g) = self.misfit_and_grad_rows(&row, &a, obs)?;
        Ok((phi[0], ScalarField::new(self.grid(), g.row(0).to_vec())?))
    }

    /// Residual loss of the network on a batch, as a program of its weights.
    pub fn loss_program(&self, batch: Tensor) -> LossProgram {
        let ops = Operators::new(self.grid(), self.config.form);
        let coeff = ops.coefficients(&batch);
        LossProgram {
            net: self.config.net(),
            ops,
            batch,
            coeff,
            f: self.config.f_const,
            gamma: self.config.gamma,
        }
    }

    pub fn to_text(&self) -> String {
        self.params.to_text(&[(META_TAG, self.config.to_meta())])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (params, meta) = ParamVector::from_text(text)?;
        let pairs = meta
            .iter()
            .find(|(tag, _)| tag == META_TAG)
            .map(|(_, p)| p.clone())
            .ok_or_else(|| Error::parse("model file", format!("missing `{META_TAG}` section")))?;
        let config = SurrogateConfig::from_meta(&pairs)?;
        let expected = Self::zeros(config.clone())?;
        if expected.params.blocks() != params.blocks() {
            return Err(Error::parse("model file", "parameter layout does not match surrogateconfig"));
        }
        Ok(Self { config, params })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

pub struct LossProgram {
    net: Mlp,
    ops: Operators,
    batch: Tensor,
    coeff: (Tensor, Tensor),
    f: f64,
    gamma: f64,
}

impl LossProgram {
    fn terms(&self, tape: &mut Tape, params: &BlockVars) -> EResult<(Var, Var, Var)> {
        let x = tape.constant(self.batch.clone())?;
        let out = self.net.forward(tape, params, x)?;
        self.ops.loss(tape, out, &self.coeff, self.f, self.gamma)
    }
}

impl autodiff::DiffProgram for LossProgram {
    fn forward(&self, tape: &mut Tape, params: &BlockVars) -> EResult<Var> {
        Ok(self.terms(tape, params)?.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateTrace {
    pub total: Vec<f64>,
    pub pde: Vec<f64>,
    pub boundary: Vec<f64>,
}

/// Adam descent on the minibatch residual loss. Uses every field of `data`.
pub fn train_surrogate<R: Rng + ?Sized>(
    data: &FieldDataset,
    config: &SurrogateConfig,
    rng: &mut R,
) -> Result<(SurrogateModel, SurrogateTrace)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if data.grid != config.grid()? {
        return Err(Error::Config("dataset grid differs from surrogate config".into()));
    }
    let m = config.cells();
    let mut model = SurrogateModel::init(config.clone(), rng)?;
    let net = config.net();
    let ops = Operators::new(model.grid(), config.form);
    let steps = config.epochs * data.len().div_ceil(config.batch_size);
    let mut opt = Adam::with_schedule(config.schedule.lr_schedule(steps));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = SurrogateTrace {
        total: Vec::with_capacity(config.epochs),
        pde: Vec::with_capacity(config.epochs),
        boundary: Vec::with_capacity(config.epochs),
    };
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut acc = [0.0; 3];
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = Array2::from_shape_fn((chunk.len(), m), |(r, c)| data.fields[chunk[r]].values()[c]);
            let coeff = ops.coefficients(&batch);
            let mut t = Tape::new();
            let result = (|| -> EResult<_> {
                let vars = autodiff::load_params(&mut t, &model.params, true)?;
                let x = t.constant(batch)?;
                let out = net.forward(&mut t, &vars, x)?;
                let (j, jp, jb) = ops.loss(&mut t, out, &coeff, config.f_const, config.gamma)?;
                let g = t.backward(j)?;
                let mut flat = vec![0.0; model.params.len()];
                for (b, &v) in model.params.blocks().iter().zip(vars.vars()) {
                    if let Some(gv) = g.get(v) {
                        flat[b.offset..b.offset + b.len()].copy_from_slice(gv.as_slice().expect("layout"));
                    }
                }
                Ok(([t.scalar(j), t.scalar(jp), t.scalar(jb)], flat))
            })();
            let (vals, grad) = result.map_err(|e| Error::Training {
                epoch,
                batch: bi,
                reason: e.to_string(),
            })?;
            opt.descend(model.params.values_mut(), &grad);
            for (a, v) in acc.iter_mut().zip(vals) {
                *a += v * chunk.len() as f64;
            }
        }
        let n = data.len() as f64;
        trace.total.push(acc[0] / n);
        trace.pde.push(acc[1] / n);
        trace.boundary.push(acc[2] / n);
    }
    Ok((model, trace))
}
