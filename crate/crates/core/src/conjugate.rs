//! Linear-Gaussian test problems with closed-form posteriors: a linear
//! decoder `k = A z + c`, a linear forward map `F(k) = B k`, Gaussian noise
//! and a standard normal prior on `z`.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::grid::{Grid2D, ObservationSet};
use crate::vi::{Decoder, GradientBackend, VariationalParams};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearDecoder {
    grid: Grid2D,
    /// `M × h`
    a: Array2<f64>,
    offset: Vec<f64>,
}

impl LinearDecoder {
    /// `a` is row-major `M × h`.
    pub fn new(grid: Grid2D, a: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        let m = grid.len();
        if offset.len() != m || a.is_empty() || a.len() % m != 0 {
            return Err(Error::Shape {
                expected: m,
                got: offset.len(),
            });
        }
        let h = a.len() / m;
        Ok(Self {
            grid,
            a: Array2::from_shape_vec((m, h), a).expect("checked shape"),
            offset,
        })
    }
}

impl Decoder for LinearDecoder {
    fn latent_dim(&self) -> usize {
        self.a.ncols()
    }

    fn grid(&self) -> Grid2D {
        self.grid
    }

    fn decode(&self, z: &Tensor) -> Result<Tensor> {
        if z.ncols() != self.latent_dim() {
            return Err(Error::Shape {
                expected: self.latent_dim(),
                got: z.ncols(),
            });
        }
        let mut k = z.dot(&self.a.t());
        for mut row in k.rows_mut() {
            row.iter_mut().zip(&self.offset).for_each(|(v, c)| *v += c);
        }
        Ok(k)
    }

    fn decode_and_pullback(
        &self,
        z: &Tensor,
        w: &mut dyn FnMut(&Tensor) -> Result<Tensor>,
    ) -> Result<(Tensor, Tensor)> {
        let k = self.decode(z)?;
        let g = w(&k)?;
        let jt = g.dot(&self.a);
        Ok((k, jt))
    }
}

/// `Φ(k) = ½ Σ ((B k − d) / σ)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBackend {
    /// `D × M`
    b: Array2<f64>,
    pub obs: ObservationSet,
}

impl LinearBackend {
    pub fn new(b: Vec<f64>, n_cells: usize, obs: ObservationSet) -> Result<Self> {
        let d = obs.len();
        if b.len() != d * n_cells {
            return Err(Error::Shape {
                expected: d * n_cells,
                got: b.len(),
            });
        }
        Ok(Self {
            b: Array2::from_shape_vec((d, n_cells), b).expect("checked shape"),
            obs,
        })
    }

    fn residuals(&self, k: &Tensor) -> Result<Tensor> {
        if k.ncols() != self.b.ncols() {
            return Err(Error::Shape {
                expected: self.b.ncols(),
                got: k.ncols(),
            });
        }
        let mut r = k.dot(&self.b.t());
        for mut row in r.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.obs.noisy[j]) / self.obs.sigma[j];
            }
        }
        Ok(r)
    }
}

impl GradientBackend for LinearBackend {
    fn misfit_rows(&self, k: &Tensor) -> Result<Vec<f64>> {
        let r = self.residuals(k)?;
        Ok(r.rows().into_iter().map(|row| 0.5 * row.dot(&row)).collect())
    }

    fn misfit_and_grad_rows(&self, k: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        let r = self.residuals(k)?;
        let phi = r.rows().into_iter().map(|row| 0.5 * row.dot(&row)).collect();
        let mut w = r;
        for mut row in w.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v /= self.obs.sigma[j];
            }
        }
        Ok((phi, w.dot(&self.b)))
    }
}

/// `Φ ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroBackend;

impl GradientBackend for ZeroBackend {
    fn misfit_rows(&self, k: &Tensor) -> Result<Vec<f64>> {
        Ok(vec![0.0; k.nrows()])
    }

    fn misfit_and_grad_rows(&self, k: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        Ok((vec![0.0; k.nrows()], Array2::zeros(k.dim())))
    }
}

#[derive(Debug, Clone)]
pub struct ConjugateProblem {
    pub decoder: LinearDecoder,
    pub backend: LinearBackend,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    precision: Vec<Vec<f64>>,
}

impl ConjugateProblem {
    /// Posterior of `z` for decoder `a` (M × h, row-major, zero offset),
    /// forward `b` (D × M) and observations `obs`.
    pub fn new(grid: Grid2D, a: Vec<f64>, b: Vec<f64>, obs: ObservationSet) -> Result<Self> {
        let m = grid.len();
        let decoder = LinearDecoder::new(grid, a.clone(), vec![0.0; m])?;
        let backend = LinearBackend::new(b.clone(), m, obs.clone())?;
        let h = a.len() / m;
        let d = obs.len();
        let a = DMatrix::from_row_slice(m, h, &a);
        let b = DMatrix::from_row_slice(d, m, &b);
        let g = &b * &a;
        let w = DMatrix::from_diagonal(&DVector::from_iterator(d, obs.sigma.iter().map(|s| 1.0 / (s * s))));
        let prec = DMatrix::identity(h, h) + g.transpose() * &w * &g;
        let chol = prec
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("posterior precision is not positive definite".into()))?;
        let rhs = g.transpose() * &w * DVector::from_column_slice(&obs.noisy);
        let mean = chol.solve(&rhs);
        let cov = chol.inverse();
        let rows = |x: &DMatrix<f64>| (0..h).map(|i| x.row(i).iter().copied().collect()).collect();
        Ok(Self {
            decoder,
            backend,
            mean: mean.iter().copied().collect(),
            cov: rows(&cov),
            precision: rows(&prec),
        })
    }

    /// Two latent coordinates, four cells observed directly. The decoder
    /// columns are orthogonal, so the posterior covariance is diagonal with
    /// variances 1/3 and 2/3 and mean (1, −1).
    pub fn standard() -> Self {
        let grid = Grid2D::square(2).expect("2x2 grid");
        let (a1, a2) = (0.5, 0.25);
        #[rustfmt::skip]
        let a = vec![
            a1, 0.0,
            0.0, a2,
            a1, 0.0,
            0.0, -a2,
        ];
        let mut b = vec![0.0; 16];
        for i in 0..4 {
            b[i * 4 + i] = 1.0;
        }
        let z0 = [1.5, -3.0];
        let d: Vec<f64> = (0..4).map(|i| a[2 * i] * z0[0] + a[2 * i + 1] * z0[1]).collect();
        let obs = ObservationSet::exact(d, 0.5).expect("positive sigma");
        Self::new(grid, a, b, obs).expect("well-posed problem")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// The best diagonal Gaussian: exact mean, variances `1 / P_ii`.
    pub fn optimal_mean_field(&self) -> VariationalParams {
        VariationalParams {
            mu: self.mean.clone(),
            logvar: (0..self.dim()).map(|i| -self.precision[i][i].ln()).collect(),
        }
    }

    /// `−Φ(A z)`.
    pub fn log_likelihood(&self, z: &[f64]) -> Result<f64> {
        let zr = Array2::from_shape_vec((1, z.len()), z.to_vec()).map_err(|_| Error::Shape {
            expected: self.dim(),
            got: z.len(),
        })?;
        let k = self.decoder.decode(&zr)?;
        Ok(-self.backend.misfit_rows(&k)?[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::vi::log_joint_and_grad;

    #[test]
    fn standard_problem_moments() {
        let p = ConjugateProblem::standard();
        assert!((p.mean[0] - 1.0).abs() < 1e-12 && (p.mean[1] + 1.0).abs() < 1e-12);
        assert!((p.cov[0][0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((p.cov[1][1] - 2.0 / 3.0).abs() < 1e-12);
        assert!(p.cov[0][1].abs() < 1e-14);
        let mf = p.optimal_mean_field();
        assert!((mf.logvar[0].exp() - p.cov[0][0]).abs() < 1e-12);
    }

    #[test]
    fn log_joint_gradient_vanishes_at_posterior_mean() {
        let p = ConjugateProblem::standard();
        let z = Array2::from_shape_vec((1, 2), p.mean.clone()).unwrap();
        let (_, g) = log_joint_and_grad(&z, &p.backend, &p.decoder).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn general_problem_matches_dense_bayes() {
        let grid = Grid2D::square(2).unwrap();
        let mut r = rng::seeded(3);
        let a = rng::standard_normal_vec(&mut r, 8);
        let b = rng::standard_normal_vec(&mut r, 12);
        let obs = ObservationSet::exact(rng::standard_normal_vec(&mut r, 3), 0.7).unwrap();
        let p = ConjugateProblem::new(grid, a, b, obs).unwrap();
        // gradient of the log posterior at the mean is zero
        let z = Array2::from_shape_vec((1, 2), p.mean.clone()).unwrap();
        let (_, g) = log_joint_and_grad(&z, &p.backend, &p.decoder).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-10));
        // and its Hessian is −P: a small step changes the gradient by −P δ
        let dz = 1e-3;
        let z1 = Array2::from_shape_vec((1, 2), vec![p.mean[0] + dz, p.mean[1]]).unwrap();
        let (_, g1) = log_joint_and_grad(&z1, &p.backend, &p.decoder).unwrap();
        let prec = nalgebra::Matrix2::new(p.cov[0][0], p.cov[0][1], p.cov[1][0], p.cov[1][1])
            .try_inverse()
            .unwrap();
        assert!((g1[[0, 0]] / dz + prec[(0, 0)]).abs() < 1e-8);
        assert!((g1[[0, 1]] / dz + prec[(1, 0)]).abs() < 1e-8);
    }

    #[test]
    fn bad_shapes() {
        let g = Grid2D::square(2).unwrap();
        assert!(LinearDecoder::new(g, vec![1.0; 3], vec![0.0; 4]).is_err());
        let obs = ObservationSet::exact(vec![0.0; 2], 1.0).unwrap();
        assert!(LinearBackend::new(vec![0.0; 7], 4, obs).is_err());
    }
}
