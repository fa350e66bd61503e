//! Cell-centred finite-volume solver for steady single-phase Darcy flow
//!
//! ```text
//!   v = -exp(k) ∇p,   ∇·v = f   in (0,1)²
//!   p = 1 on x1 = 0,  p = 0 on x1 = 1,  v·n = 0 on x2 ∈ {0, 1}
//! ```
//!
//! Interior faces use the harmonic mean of `exp(k)` in the two neighbouring
//! cells; Dirichlet faces use a half-cell transmissibility to a ghost value on
//! the face. The resulting matrix is symmetric positive definite for every
//! finite `k`, so the discrete adjoint reuses the forward factorization.

use crate::error::{Error, Result};
use crate::grid::{observe_transpose, observe_values, Grid2D, ObservationPlan, ObservationSet, ScalarField};
use crate::sparse::{CsrMatrix, LinearSolver, PreparedSolver};

pub const P_LEFT: f64 = 1.0;
pub const P_RIGHT: f64 = 0.0;
pub const SOLVE_TOL: f64 = 1e-10;

/// Source term `f` in `∇·v = f`.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Constant(f64),
    PerCell(Vec<f64>),
}

impl Source {
    fn at(&self, c: usize) -> f64 {
        match self {
            Source::Constant(f) => *f,
            Source::PerCell(v) => v[c],
        }
    }
}

#[inline]
fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// `∂ harmonic(a, b) / ∂ ln a`.
#[inline]
fn harmonic_dlog_a(a: f64, b: f64) -> f64 {
    2.0 * a * b * b / ((a + b) * (a + b))
}

/// Face transmissibilities for one permeability field.
#[derive(Debug, Clone)]
struct Transmissibility {
    // (nx - 1) * ny interior x-faces, index j * (nx - 1) + i for the face between i and i + 1
    x: Vec<f64>,
    // nx * (ny - 1) interior y-faces, index j * nx + i for the face between j and j + 1
    y: Vec<f64>,
    left: Vec<f64>,
    right: Vec<f64>,
}

impl Transmissibility {
    fn new(grid: Grid2D, perm: &[f64]) -> Self {
        let (nx, ny) = (grid.nx(), grid.ny());
        let gx = grid.hy() / grid.hx();
        let gy = grid.hx() / grid.hy();
        let mut x = Vec::with_capacity((nx - 1) * ny);
        for j in 0..ny {
            for i in 0..nx - 1 {
                x.push(gx * harmonic(perm[grid.index(i, j)], perm[grid.index(i + 1, j)]));
            }
        }
        let mut y = Vec::with_capacity(nx * (ny - 1));
        for j in 0..ny - 1 {
            for i in 0..nx {
                y.push(gy * harmonic(perm[grid.index(i, j)], perm[grid.index(i, j + 1)]));
            }
        }
        let left = (0..ny).map(|j| 2.0 * gx * perm[grid.index(0, j)]).collect();
        let right = (0..ny).map(|j| 2.0 * gx * perm[grid.index(nx - 1, j)]).collect();
        Self { x, y, left, right }
    }
}

/// Assembled pressure system `A p = rhs`.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

impl SparseSystem {
    pub fn dimension(&self) -> usize {
        self.rhs.len()
    }
}

#[derive(Debug, Clone)]
pub struct DarcySolution {
    pub p: ScalarField,
    /// x-velocity on the `(nx + 1) * ny` vertical faces, index `j * (nx + 1) + i`.
    pub vx: Vec<f64>,
    /// y-velocity on the `nx * (ny + 1)` horizontal faces, index `j * nx + i`.
    pub vy: Vec<f64>,
    pub residual_norm: f64,
}

impl DarcySolution {
    /// Cell-centred velocity components, each the mean of the two opposing faces.
    pub fn cell_velocity(&self) -> (Vec<f64>, Vec<f64>) {
        let g = self.p.grid();
        let (nx, ny) = (g.nx(), g.ny());
        let mut cx = Vec::with_capacity(g.len());
        let mut cy = Vec::with_capacity(g.len());
        for j in 0..ny {
            for i in 0..nx {
                cx.push(0.5 * (self.vx[j * (nx + 1) + i] + self.vx[j * (nx + 1) + i + 1]));
                cy.push(0.5 * (self.vy[j * nx + i] + self.vy[(j + 1) * nx + i]));
            }
        }
        (cx, cy)
    }

    /// Net outflow through the two Dirichlet boundaries.
    pub fn dirichlet_outflow(&self) -> f64 {
        let g = self.p.grid();
        let (nx, ny) = (g.nx(), g.ny());
        (0..ny)
            .map(|j| (self.vx[j * (nx + 1) + nx] - self.vx[j * (nx + 1)]) * g.hy())
            .sum()
    }
}

/// Forward model configuration: source term and linear solver.
#[derive(Debug, Clone)]
pub struct DarcySolver {
    pub source: Source,
    pub linear: LinearSolver,
    pub tol: f64,
}

impl Default for DarcySolver {
    fn default() -> Self {
        Self::new(3.0)
    }
}

struct Solved {
    solution: DarcySolution,
    trans: Transmissibility,
    system: SparseSystem,
    prepared: PreparedSolver,
}

impl DarcySolver {
    pub fn new(f_const: f64) -> Self {
        Self {
            source: Source::Constant(f_const),
            linear: LinearSolver::BandedCholesky,
            tol: SOLVE_TOL,
        }
    }

    pub fn with_linear_solver(mut self, linear: LinearSolver) -> Self {
        self.linear = linear;
        self
    }

    fn check_input(&self, k: &ScalarField) -> Result<Vec<f64>> {
        if let Source::PerCell(v) = &self.source {
            if v.len() != k.grid().len() {
                return Err(Error::Shape {
                    expected: k.grid().len(),
                    got: v.len(),
                });
            }
        }
        let perm: Vec<f64> = k.values().iter().map(|v| v.exp()).collect();
        if let Some(c) = perm.iter().position(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Assembly(format!(
                "permeability exp(k) is not finite and positive at cell {c} (k = {})",
                k.values()[c]
            )));
        }
        Ok(perm)
    }

    fn assemble_with(&self, grid: Grid2D, t: &Transmissibility) -> SparseSystem {
        let (nx, ny) = (grid.nx(), grid.ny());
        let n = grid.len();
        let mut trip = Vec::with_capacity(5 * n);
        let mut diag = vec![0.0; n];
        let mut rhs: Vec<f64> = (0..n).map(|c| self.source.at(c) * grid.hx() * grid.hy()).collect();
        for j in 0..ny {
            for i in 0..nx - 1 {
                let (a, b) = (grid.index(i, j), grid.index(i + 1, j));
                let tf = t.x[j * (nx - 1) + i];
                diag[a] += tf;
                diag[b] += tf;
                trip.push((a, b, -tf));
                trip.push((b, a, -tf));
            }
        }
        for j in 0..ny - 1 {
            for i in 0..nx {
                let (a, b) = (grid.index(i, j), grid.index(i, j + 1));
                let tf = t.y[j * nx + i];
                diag[a] += tf;
                diag[b] += tf;
                trip.push((a, b, -tf));
                trip.push((b, a, -tf));
            }
        }
        for j in 0..ny {
            let (l, r) = (grid.index(0, j), grid.index(nx - 1, j));
            diag[l] += t.left[j];
            rhs[l] += t.left[j] * P_LEFT;
            diag[r] += t.right[j];
            rhs[r] += t.right[j] * P_RIGHT;
        }
        for (c, d) in diag.into_iter().enumerate() {
            trip.push((c, c, d));
        }
        SparseSystem {
            matrix: CsrMatrix::from_triplets(n, n, &trip),
            rhs,
        }
    }

    pub fn assemble(&self, k: &ScalarField) -> Result<SparseSystem> {
        let perm = self.check_input(k)?;
        Ok(self.assemble_with(k.grid(), &Transmissibility::new(k.grid(), &perm)))
    }

    fn solve_full(&self, k: &ScalarField) -> Result<Solved> {
        let grid = k.grid();
        let perm = self.check_input(k)?;
        let trans = Transmissibility::new(grid, &perm);
        let system = self.assemble_with(grid, &trans);
        let prepared = PreparedSolver::new(self.linear, &system.matrix)?;
        let (p, residual_norm) = prepared.solve(&system.matrix, &system.rhs, self.tol)?;

        let (nx, ny) = (grid.nx(), grid.ny());
        let (hx, hy) = (grid.hx(), grid.hy());
        let mut vx = vec![0.0; (nx + 1) * ny];
        for j in 0..ny {
            let row = j * (nx + 1);
            vx[row] = -trans.left[j] / hy * (p[grid.index(0, j)] - P_LEFT);
            for i in 0..nx - 1 {
                let tf = trans.x[j * (nx - 1) + i];
                vx[row + i + 1] = -tf / hy * (p[grid.index(i + 1, j)] - p[grid.index(i, j)]);
            }
            vx[row + nx] = -trans.right[j] / hy * (P_RIGHT - p[grid.index(nx - 1, j)]);
        }
        let mut vy = vec![0.0; nx * (ny + 1)];
        for j in 0..ny - 1 {
            for i in 0..nx {
                let tf = trans.y[j * nx + i];
                vy[(j + 1) * nx + i] = -tf / hx * (p[grid.index(i, j + 1)] - p[grid.index(i, j)]);
            }
        }
        let solution = DarcySolution {
            p: ScalarField::new(grid, p)?,
            vx,
            vy,
            residual_norm,
        };
        Ok(Solved {
            solution,
            trans,
            system,
            prepared,
        })
    }

    pub fn solve_pressure(&self, k: &ScalarField) -> Result<DarcySolution> {
        Ok(self.solve_full(k)?.solution)
    }

    /// `F(k)`: pressure at the plan locations.
    pub fn forward(&self, k: &ScalarField, plan: &ObservationPlan) -> Result<Vec<f64>> {
        let sol = self.solve_pressure(k)?;
        Ok(observe_values(k.grid(), sol.p.values(), plan))
    }

    /// `Φ(k) = ½ Σ ((F(k)_j − d_j) / σ_j)²`.
    pub fn misfit(&self, k: &ScalarField, plan: &ObservationPlan, obs: &ObservationSet) -> Result<f64> {
        let pred = self.forward(k, plan)?;
        Ok(misfit_from_prediction(&pred, obs))
    }

    /// Misfit and its gradient with respect to every cell of `k`, via one
    /// extra solve with the (symmetric) pressure matrix.
    pub fn misfit_and_adjoint_grad(
        &self,
        k: &ScalarField,
        plan: &ObservationPlan,
        obs: &ObservationSet,
    ) -> Result<(f64, ScalarField)> {
        let grid = k.grid();
        let solved = self.solve_full(k)?;
        let p = solved.solution.p.values();
        let pred = observe_values(grid, p, plan);
        check_obs_len(&pred, obs)?;
        let phi = misfit_from_prediction(&pred, obs);
        let weighted: Vec<f64> = pred
            .iter()
            .zip(&obs.noisy)
            .zip(&obs.sigma)
            .map(|((f, d), s)| -(f - d) / (s * s))
            .collect();
        let adj_rhs = observe_transpose(grid, plan, &weighted);
        let lambda = if adj_rhs.iter().all(|v| *v == 0.0) {
            vec![0.0; grid.len()]
        } else {
            solved
                .prepared
                .solve(&solved.system.matrix, &adj_rhs, self.tol)?
                .0
        };

        let perm: Vec<f64> = k.values().iter().map(|v| v.exp()).collect();
        let (nx, ny) = (grid.nx(), grid.ny());
        let gx = grid.hy() / grid.hx();
        let gy = grid.hx() / grid.hy();
        let t = &solved.trans;
        let mut g = vec![0.0; grid.len()];
        for j in 0..ny {
            for i in 0..nx - 1 {
                let (a, b) = (grid.index(i, j), grid.index(i + 1, j));
                let w = (lambda[a] - lambda[b]) * (p[a] - p[b]);
                g[a] += gx * harmonic_dlog_a(perm[a], perm[b]) * w;
                g[b] += gx * harmonic_dlog_a(perm[b], perm[a]) * w;
            }
        }
        for j in 0..ny - 1 {
            for i in 0..nx {
                let (a, b) = (grid.index(i, j), grid.index(i, j + 1));
                let w = (lambda[a] - lambda[b]) * (p[a] - p[b]);
                g[a] += gy * harmonic_dlog_a(perm[a], perm[b]) * w;
                g[b] += gy * harmonic_dlog_a(perm[b], perm[a]) * w;
            }
        }
        for j in 0..ny {
            let (l, r) = (grid.index(0, j), grid.index(nx - 1, j));
            g[l] += t.left[j] * lambda[l] * (p[l] - P_LEFT);
            g[r] += t.right[j] * lambda[r] * (p[r] - P_RIGHT);
        }
        Ok((phi, ScalarField::new(grid, g)?))
    }

    pub fn adjoint_grad(
        &self,
        k: &ScalarField,
        plan: &ObservationPlan,
        obs: &ObservationSet,
    ) -> Result<ScalarField> {
        Ok(self.misfit_and_adjoint_grad(k, plan, obs)?.1)
    }
}

fn check_obs_len(pred: &[f64], obs: &ObservationSet) -> Result<()> {
    if pred.len() != obs.len() || obs.sigma.len() != obs.len() {
        return Err(Error::Shape {
            expected: pred.len(),
            got: obs.len(),
        });
    }
    Ok(())
}

pub fn misfit_from_prediction(pred: &[f64], obs: &ObservationSet) -> f64 {
    0.5 * pred
        .iter()
        .zip(&obs.noisy)
        .zip(&obs.sigma)
        .map(|((f, d), s)| {
            let r = (f - d) / s;
            r * r
        })
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_k(grid: Grid2D, rng: &mut impl Rng) -> ScalarField {
        ScalarField::new(grid, (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn uniform_2x2_transmissibilities() {
        let g = Grid2D::square(2).unwrap();
        let sys = DarcySolver::new(0.0).assemble(&ScalarField::constant(g, 0.0)).unwrap();
        // harmonic(1, 1) * (hy / hx) = 1 on interior faces, 2 on Dirichlet faces
        assert_eq!(sys.matrix.get(0, 1), -1.0);
        assert_eq!(sys.matrix.get(0, 2), -1.0);
        assert_eq!(sys.matrix.get(0, 3), 0.0);
        assert_eq!(sys.matrix.get(0, 0), 4.0);
        assert_eq!(sys.rhs, vec![2.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn assembled_matrix_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [2, 3, 5, 8] {
            let g = Grid2D::new(n, n + 1).unwrap();
            let sys = DarcySolver::new(3.0).assemble(&random_k(g, &mut rng)).unwrap();
            assert!(sys.matrix.is_symmetric(0.0));
        }
    }

    #[test]
    fn row_sums_equal_dirichlet_coefficients() {
        let g = Grid2D::square(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let k = random_k(g, &mut rng);
        let sys = DarcySolver::new(0.0).assemble(&k).unwrap();
        for j in 0..4 {
            for i in 0..4 {
                let c = g.index(i, j);
                let sum: f64 = sys.matrix.row(c).map(|(_, v)| v).sum();
                let mut expect = 0.0;
                if i == 0 {
                    expect += 2.0 * k.at(i, j).exp();
                }
                if i == 3 {
                    expect += 2.0 * k.at(i, j).exp();
                }
                assert!((sum - expect).abs() < 1e-12, "cell ({i},{j}) sum {sum} vs {expect}");
            }
        }
    }

    #[test]
    fn linear_profile_without_source() {
        let g = Grid2D::new(7, 5).unwrap();
        let sol = DarcySolver::new(0.0).solve_pressure(&ScalarField::constant(g, 0.0)).unwrap();
        for j in 0..5 {
            for i in 0..7 {
                let x = g.center(i, j).0;
                assert!((sol.p.at(i, j) - (1.0 - x)).abs() < 1e-13);
            }
        }
        assert!(sol.residual_norm <= SOLVE_TOL);
    }

    #[test]
    fn source_outflow_is_conserved() {
        let g = Grid2D::square(8).unwrap();
        let sol = DarcySolver::new(3.0).solve_pressure(&ScalarField::constant(g, 0.0)).unwrap();
        assert!((sol.dirichlet_outflow() - 3.0).abs() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let sol = DarcySolver::new(3.0).solve_pressure(&random_k(g, &mut rng)).unwrap();
            assert!((sol.dirichlet_outflow() - 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn matches_dense_lu_reference() {
        let g = Grid2D::square(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let k = random_k(g, &mut rng);
        let solver = DarcySolver::new(3.0);
        let sys = solver.assemble(&k).unwrap();
        let dense = sys.matrix.to_dense();
        let n = sys.dimension();
        let a = nalgebra::DMatrix::from_fn(n, n, |r, c| dense[r][c]);
        let b = nalgebra::DVector::from_vec(sys.rhs.clone());
        let x = a.lu().solve(&b).unwrap();
        let sol = solver.solve_pressure(&k).unwrap();
        for c in 0..n {
            assert!((sol.p.values()[c] - x[c]).abs() < 1e-10);
        }
    }

    #[test]
    fn cg_and_cholesky_give_same_pressure() {
        let g = Grid2D::square(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let k = random_k(g, &mut rng);
        let a = DarcySolver::new(3.0).solve_pressure(&k).unwrap();
        let b = DarcySolver::new(3.0)
            .with_linear_solver(LinearSolver::ConjugateGradient { max_iter: 500 })
            .solve_pressure(&k)
            .unwrap();
        for (x, y) in a.p.values().iter().zip(b.p.values()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_at_quarter_point() {
        let g = Grid2D::square(8).unwrap();
        let plan = ObservationPlan::new(vec![(0.25, 0.5)]).unwrap();
        let f = DarcySolver::new(0.0).forward(&ScalarField::constant(g, 0.0), &plan).unwrap();
        assert!((f[0] - 0.75).abs() < 1e-13);
    }

    #[test]
    fn forward_is_observe_of_pressure() {
        let g = Grid2D::square(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = random_k(g, &mut rng);
        let plan = ObservationPlan::uniform(8);
        let s = DarcySolver::new(3.0);
        let f = s.forward(&k, &plan).unwrap();
        assert_eq!(f.len(), 64);
        assert_eq!(f, crate::grid::observe(&s.solve_pressure(&k).unwrap().p, &plan));
    }

    #[test]
    fn uniform_shift_leaves_pressure_unchanged_without_source() {
        let g = Grid2D::square(6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let k = random_k(g, &mut rng);
        let shifted = ScalarField::new(g, k.values().iter().map(|v| v + 1.7).collect()).unwrap();
        let s = DarcySolver::new(0.0);
        let a = s.solve_pressure(&k).unwrap();
        let b = s.solve_pressure(&shifted).unwrap();
        for (x, y) in a.p.values().iter().zip(b.p.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_k_is_an_assembly_error() {
        let g = Grid2D::square(3).unwrap();
        let mut vals = vec![0.0; 9];
        vals[4] = 800.0;
        let k = ScalarField::new(g, vals).unwrap();
        assert!(matches!(DarcySolver::new(3.0).assemble(&k), Err(Error::Assembly(_))));
    }

    #[test]
    fn misfit_definitions() {
        let g = Grid2D::square(4).unwrap();
        let k = ScalarField::constant(g, 0.0);
        let plan = ObservationPlan::new(vec![(0.3, 0.6)]).unwrap();
        let s = DarcySolver::new(3.0);
        let f = s.forward(&k, &plan).unwrap();
        let exact = ObservationSet::exact(f.clone(), 0.1).unwrap();
        assert_eq!(s.misfit(&k, &plan, &exact).unwrap(), 0.0);
        let mut shifted = exact.clone();
        shifted.noisy[0] = f[0] - 0.1;
        assert!((s.misfit(&k, &plan, &shifted).unwrap() - 0.5).abs() < 1e-12);
        let grad = s.adjoint_grad(&k, &plan, &exact).unwrap();
        assert!(grad.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn misfit_matches_hand_sum() {
        let g = Grid2D::square(6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let k = random_k(g, &mut rng);
        let plan = ObservationPlan::uniform(3);
        let d: Vec<f64> = (0..9).map(|_| rng.random_range(0.0..1.5)).collect();
        let sigma: Vec<f64> = (0..9).map(|_| rng.random_range(0.05..0.2)).collect();
        let obs = ObservationSet {
            clean: d.clone(),
            noisy: d.clone(),
            sigma: sigma.clone(),
            noise_level: 0.0,
        };
        let s = DarcySolver::new(3.0);
        let f = s.forward(&k, &plan).unwrap();
        let mut hand = 0.0;
        for j in 0..9 {
            hand += ((f[j] - d[j]) / sigma[j]).powi(2);
        }
        assert!((s.misfit(&k, &plan, &obs).unwrap() - 0.5 * hand).abs() < 1e-12);
    }

    #[test]
    fn adjoint_matches_finite_differences_5x5() {
        let g = Grid2D::square(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let k = random_k(g, &mut rng);
        let plan = ObservationPlan::uniform(3);
        let d: Vec<f64> = (0..9).map(|_| rng.random_range(0.0..1.5)).collect();
        let obs = ObservationSet {
            clean: d.clone(),
            noisy: d,
            sigma: vec![0.05; 9],
            noise_level: 0.05,
        };
        let s = DarcySolver::new(3.0);
        let grad = s.adjoint_grad(&k, &plan, &obs).unwrap();
        let h = 1e-6;
        for c in 0..g.len() {
            let mut kp = k.values().to_vec();
            let mut km = k.values().to_vec();
            kp[c] += h;
            km[c] -= h;
            let fp = s.misfit(&ScalarField::new(g, kp).unwrap(), &plan, &obs).unwrap();
            let fm = s.misfit(&ScalarField::new(g, km).unwrap(), &plan, &obs).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            let a = grad.values()[c];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-12);
            assert!(rel <= 1e-6, "cell {c}: adjoint {a} fd {fd} rel {rel}");
        }
    }

    #[test]
    fn gradient_ignores_observation_order() {
        let g = Grid2D::square(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let k = random_k(g, &mut rng);
        let locs = vec![(0.2, 0.3), (0.7, 0.1), (0.5, 0.9), (0.9, 0.6)];
        let d = vec![0.9, 0.3, 0.7, 0.2];
        let sig = vec![0.1, 0.2, 0.05, 0.1];
        let perm = [2usize, 0, 3, 1];
        let mk = |ix: &[usize]| {
            (
                ObservationPlan::new(ix.iter().map(|&i| locs[i]).collect()).unwrap(),
                ObservationSet {
                    clean: ix.iter().map(|&i| d[i]).collect(),
                    noisy: ix.iter().map(|&i| d[i]).collect(),
                    sigma: ix.iter().map(|&i| sig[i]).collect(),
                    noise_level: 0.0,
                },
            )
        };
        let (p1, o1) = mk(&[0, 1, 2, 3]);
        let (p2, o2) = mk(&perm);
        let s = DarcySolver::new(3.0);
        let g1 = s.adjoint_grad(&k, &p1, &o1).unwrap();
        let g2 = s.adjoint_grad(&k, &p2, &o2).unwrap();
        for (a, b) in g1.values().iter().zip(g2.values()) {
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }
    }
}
