//! Gradient agreement and posterior summaries.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::rng;
use crate::vi::{draw_eps, grad_elbo_vi, Decoder, EntropyMode, GradientBackend, VariationalParams};

#[derive(Debug, Clone, PartialEq)]
pub struct GradientPair {
    pub g_nn: Vec<f64>,
    pub g_a: Vec<f64>,
}

/// Mean cosine similarity over the pairs.
pub fn cos_alpha(pairs: &[GradientPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Metric("no gradient pairs".into()));
    }
    let mut acc = 0.0;
    for (i, p) in pairs.iter().enumerate() {
        if p.g_nn.len() != p.g_a.len() {
            return Err(Error::Shape {
                expected: p.g_a.len(),
                got: p.g_nn.len(),
            });
        }
        let dot: f64 = p.g_nn.iter().zip(&p.g_a).map(|(a, b)| a * b).sum();
        let na = p.g_nn.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = p.g_a.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return Err(Error::Metric(format!("gradient pair {i} has a zero vector")));
        }
        acc += (dot / (na * nb)).clamp(-1.0, 1.0);
    }
    Ok(acc / pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgreementRow {
    pub block: &'static str,
    pub dataset_size: usize,
    pub cos_alpha: f64,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AgreementReport {
    pub rows: Vec<AgreementRow>,
}

impl AgreementReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("block,dataset_size,cos_alpha,n_pairs\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{:.6},{}", r.block, r.dataset_size, r.cos_alpha, r.n_pairs);
        }
        s
    }

    pub fn get(&self, block: &str, dataset_size: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.block == block && r.dataset_size == dataset_size)
            .map(|r| r.cos_alpha)
    }
}

/// Compares `∇L` under each surrogate with the reference backend at `n_g`
/// draws of `μ, lv ~ N(0, I)` with one shared `ε` per draw (closed-form
/// entropy, one sample). Every surrogate sees the same draws.
pub fn gradient_agreement_study<R: Rng + ?Sized>(
    surrogates: &[(usize, &dyn GradientBackend)],
    reference: &dyn GradientBackend,
    decoder: &dyn Decoder,
    n_g: usize,
    rng: &mut R,
) -> Result<AgreementReport> {
    let h = decoder.latent_dim();
    let draws: Vec<(VariationalParams, ndarray::Array2<f64>)> = (0..n_g)
        .map(|_| {
            let lambda = VariationalParams {
                mu: rng::standard_normal_vec(rng, h),
                logvar: rng::standard_normal_vec(rng, h),
            };
            (lambda, draw_eps(rng, 1, h))
        })
        .collect();
    let grads = |b: &dyn GradientBackend| -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        rng::par_map(n_g, |i| {
            let (l, e) = &draws[i];
            grad_elbo_vi(l, e, EntropyMode::ClosedForm, b, decoder).map(|(_, g)| (g.mu, g.logvar))
        })
        .into_iter()
        .collect()
    };
    let reference = grads(reference)?;
    let mut report = AgreementReport::default();
    for &(size, s) in surrogates {
        let g = grads(s)?;
        for (block, pick) in [("mu", 0usize), ("logvar", 1)] {
            let pairs: Vec<GradientPair> = g
                .iter()
                .zip(&reference)
                .map(|(a, b)| {
                    let (x, y) = if pick == 0 { (&a.0, &b.0) } else { (&a.1, &b.1) };
                    GradientPair {
                        g_nn: x.clone(),
                        g_a: y.clone(),
                    }
                })
                .collect();
            report.rows.push(AgreementRow {
                block,
                dataset_size: size,
                cos_alpha: cos_alpha(&pairs)?,
                n_pairs: n_g,
            });
        }
    }
    Ok(report)
}

/// Cosine agreement of `∂Φ/∂k` between two backends over fields `ks`.
pub fn misfit_gradient_agreement(
    surrogate: &dyn GradientBackend,
    reference: &dyn GradientBackend,
    ks: &ndarray::Array2<f64>,
) -> Result<f64> {
    let (_, a) = surrogate.misfit_and_grad_rows(ks)?;
    let (_, b) = reference.misfit_and_grad_rows(ks)?;
    let pairs: Vec<GradientPair> = a
        .rows()
        .into_iter()
        .zip(b.rows())
        .map(|(x, y)| GradientPair {
            g_nn: x.to_vec(),
            g_a: y.to_vec(),
        })
        .collect();
    cos_alpha(&pairs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub mean: ScalarField,
    /// Population standard deviation.
    pub std: ScalarField,
    pub rel_l2: Option<f64>,
}

/// `‖a − truth‖ / ‖truth‖`.
pub fn relative_l2(a: &ScalarField, truth: &ScalarField) -> Result<f64> {
    if a.grid() != truth.grid() {
        return Err(Error::Shape {
            expected: truth.grid().len(),
            got: a.grid().len(),
        });
    }
    let n = truth.l2_norm();
    if n == 0.0 {
        return Err(Error::Metric("truth field has zero norm".into()));
    }
    let d: f64 = a
        .values()
        .iter()
        .zip(truth.values())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(d / n)
}

pub fn posterior_stats(samples: &[ScalarField], truth: Option<&ScalarField>) -> Result<PosteriorSummary> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Metric("no posterior samples".into()))?;
    let grid = first.grid();
    let m = grid.len();
    let mut mean = vec![0.0; m];
    for s in samples {
        if s.grid() != grid {
            return Err(Error::Shape {
                expected: m,
                got: s.grid().len(),
            });
        }
        mean.iter_mut().zip(s.values()).for_each(|(a, v)| *a += v);
    }
    let n = samples.len() as f64;
    mean.iter_mut().for_each(|a| *a /= n);
    let mut var = vec![0.0; m];
    for s in samples {
        var.iter_mut()
            .zip(s.values().iter().zip(&mean))
            .for_each(|(a, (v, mu))| *a += (v - mu).powi(2));
    }
    let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
    let mean = ScalarField::new(grid, mean)?;
    let rel_l2 = truth.map(|t| relative_l2(&mean, t)).transpose()?;
    Ok(PosteriorSummary {
        mean,
        std: ScalarField::new(grid, std)?,
        rel_l2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conjugate::ConjugateProblem;
    use crate::grid::Grid2D;
    use proptest::prelude::*;

    fn pair(a: Vec<f64>, b: Vec<f64>) -> GradientPair {
        GradientPair { g_nn: a, g_a: b }
    }

    #[test]
    fn cosine_extremes() {
        assert!((cos_alpha(&[pair(vec![1.0, 2.0], vec![1.0, 2.0])]).unwrap() - 1.0).abs() < 1e-15);
        assert!((cos_alpha(&[pair(vec![1.0, 2.0], vec![-1.0, -2.0])]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(cos_alpha(&[pair(vec![1.0, 0.0], vec![0.0, 3.0])]).unwrap(), 0.0);
        let err = cos_alpha(&[pair(vec![1.0], vec![1.0]), pair(vec![0.0], vec![1.0])]).unwrap_err();
        assert!(err.to_string().contains("pair 1"), "{err}");
        assert!(cos_alpha(&[]).is_err());
    }

    #[test]
    fn wrapped_reference_agrees_exactly() {
        let p = ConjugateProblem::standard();
        let rep = gradient_agreement_study(&[(0, &p.backend)], &p.backend, &p.decoder, 20, &mut rng::seeded(1)).unwrap();
        assert_eq!(rep.rows.len(), 2);
        for r in &rep.rows {
            assert!((r.cos_alpha - 1.0).abs() < 1e-12);
            assert_eq!(r.n_pairs, 20);
        }
        assert!(rep.to_csv().starts_with("block,dataset_size,cos_alpha,n_pairs\nmu,0,1.000000,20\n"));
    }

    #[test]
    fn summary_of_identical_and_mirrored_samples() {
        let g = Grid2D::square(2).unwrap();
        let a = ScalarField::new(g, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let s = posterior_stats(&[a.clone(), a.clone()], Some(&a)).unwrap();
        assert_eq!(s.mean, a);
        assert!(s.std.values().iter().all(|&v| v == 0.0));
        assert_eq!(s.rel_l2, Some(0.0));
        let neg = ScalarField::new(g, a.values().iter().map(|v| -v).collect()).unwrap();
        let s = posterior_stats(&[a.clone(), neg], None).unwrap();
        assert!(s.mean.values().iter().all(|&v| v == 0.0));
        for (sd, v) in s.std.values().iter().zip(a.values()) {
            assert!((sd - v.abs()).abs() < 1e-15);
        }
        assert!(posterior_stats(&[], None).is_err());
        let other = ScalarField::constant(Grid2D::square(3).unwrap(), 0.0);
        assert!(posterior_stats(&[a, other], None).is_err());
    }

    #[test]
    fn monte_carlo_moments() {
        let g = Grid2D::square(2).unwrap();
        let x = rng::standard_normal_vec(&mut rng::seeded(2), 40_000);
        let samples: Vec<ScalarField> = x.chunks(4).map(|c| ScalarField::new(g, c.to_vec()).unwrap()).collect();
        let s = posterior_stats(&samples, None).unwrap();
        let se = 1.0 / (samples.len() as f64).sqrt();
        for (m, sd) in s.mean.values().iter().zip(s.std.values()) {
            assert!(m.abs() < 3.0 * se);
            assert!((sd - 1.0).abs() < 0.02);
        }
    }

    proptest! {
        #[test]
        fn cosine_is_scale_invariant(
            a in prop::collection::vec(-5.0f64..5.0, 4),
            b in prop::collection::vec(-5.0f64..5.0, 4),
            c in 0.01f64..100.0,
        ) {
            prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
            let base = cos_alpha(&[pair(a.clone(), b.clone())]).unwrap();
            let scaled = cos_alpha(&[pair(a.iter().map(|v| v * c).collect(), b)]).unwrap();
            prop_assert!((base - scaled).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&base));
        }

        #[test]
        fn mean_is_linear_and_std_translation_invariant(
            vals in prop::collection::vec(-3.0f64..3.0, 12),
            shift in -10.0f64..10.0,
            scale in -4.0f64..4.0,
        ) {
            let g = Grid2D::square(2).unwrap();
            let fields: Vec<ScalarField> = vals.chunks(4).map(|c| ScalarField::new(g, c.to_vec()).unwrap()).collect();
            let moved: Vec<ScalarField> = fields
                .iter()
                .map(|f| ScalarField::new(g, f.values().iter().map(|v| scale * v + shift).collect()).unwrap())
                .collect();
            let a = posterior_stats(&fields, None).unwrap();
            let b = posterior_stats(&moved, None).unwrap();
            for (x, y) in a.mean.values().iter().zip(b.mean.values()) {
                prop_assert!((scale * x + shift - y).abs() < 1e-9);
            }
            for (x, y) in a.std.values().iter().zip(b.std.values()) {
                prop_assert!((scale.abs() * x - y).abs() < 1e-9);
            }
        }
    }
}
