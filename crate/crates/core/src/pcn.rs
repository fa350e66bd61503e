//! Preconditioned Crank–Nicolson sampling of the latent posterior under a
//! standard normal prior.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::ParamVector;
use crate::error::{Error, Result};
use crate::rng;
use crate::vi::{Decoder, GradientBackend};

#[derive(Debug, Clone, PartialEq)]
pub struct PcnConfig {
    pub beta: f64,
    pub n_ite: usize,
    pub n_burn: usize,
    pub thin: usize,
}

impl Default for PcnConfig {
    fn default() -> Self {
        Self {
            beta: 0.15,
            n_ite: 50_000,
            n_burn: 40_000,
            thin: 1,
        }
    }
}

impl PcnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if self.n_burn >= self.n_ite {
            return Err(Error::Config(format!(
                "burn-in {} must be shorter than the chain {}",
                self.n_burn, self.n_ite
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thinning stride must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub z: Vec<f64>,
    pub loglik: f64,
    pub accepted: usize,
    pub steps: usize,
}

impl ChainState {
    pub fn new(z: Vec<f64>, loglik: &mut dyn FnMut(&[f64]) -> Result<f64>) -> Result<Self> {
        let l = loglik(&z)?;
        if !l.is_finite() {
            return Err(Error::NonFinite("log-likelihood at the chain start".into()));
        }
        Ok(Self {
            z,
            loglik: l,
            accepted: 0,
            steps: 0,
        })
    }
}

/// One proposal and accept/reject; returns whether the move was accepted.
pub fn pcn_step<R: Rng + ?Sized>(
    state: &mut ChainState,
    beta: f64,
    loglik: &mut dyn FnMut(&[f64]) -> Result<f64>,
    rng: &mut R,
) -> Result<bool> {
    let c = (1.0 - beta * beta).sqrt();
    let xi = rng::standard_normal_vec(rng, state.z.len());
    let prop: Vec<f64> = state.z.iter().zip(&xi).map(|(z, x)| c * z + beta * x).collect();
    let l = loglik(&prop)?;
    // f64::min would turn a NaN ratio into 0, so reject those explicitly
    let diff = l - state.loglik;
    let log_ratio = if diff.is_nan() { f64::NEG_INFINITY } else { diff.min(0.0) };
    let u: f64 = rng.random();
    let accept = u.ln() < log_ratio;
    if accept {
        state.z = prop;
        state.loglik = l;
        state.accepted += 1;
    }
    state.steps += 1;
    Ok(accept)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainRecord {
    pub accepted: Vec<bool>,
    pub loglik: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult {
    /// Kept states, one per row.
    pub samples: Array2<f64>,
    pub record: ChainRecord,
    pub acceptance_rate: f64,
    /// Batch-means effective sample size per coordinate of `samples`.
    pub ess: Vec<f64>,
}

impl ChainResult {
    pub fn mean(&self) -> Vec<f64> {
        self.samples.mean_axis(ndarray::Axis(0)).expect("nonempty").to_vec()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.samples.var_axis(ndarray::Axis(0), 0.0).to_vec()
    }

    pub fn chain_csv(&self) -> String {
        let mut s = String::from("iter,accepted,loglik\n");
        for (i, (a, l)) in self.record.accepted.iter().zip(&self.record.loglik).enumerate() {
            let _ = writeln!(s, "{i},{},{l:e}", u8::from(*a));
        }
        s
    }

    pub fn samples_params(&self) -> ParamVector {
        let (n, h) = self.samples.dim();
        ParamVector::from_blocks(vec![("z", n, h)], self.samples.iter().copied().collect()).expect("one block")
    }
}

/// Batch-means ESS with `⌊√n⌋` batches of `⌊√n⌋` states.
pub fn batch_means_ess(x: &[f64]) -> f64 {
    let n = x.len();
    let b = (n as f64).sqrt().floor() as usize;
    if b < 2 {
        return n as f64;
    }
    let nb = n / b;
    let used = &x[..nb * b];
    let mean = used.iter().sum::<f64>() / used.len() as f64;
    let var = used.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (used.len() - 1) as f64;
    if var == 0.0 {
        return n as f64;
    }
    let bm: Vec<f64> = used.chunks(b).map(|c| c.iter().sum::<f64>() / b as f64).collect();
    let bvar = bm.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (nb - 1) as f64 * b as f64;
    if bvar == 0.0 {
        return n as f64;
    }
    (used.len() as f64 * var / bvar).min(n as f64)
}

/// Runs a chain from `z0` with an arbitrary log-likelihood.
pub fn run_chain_with<R: Rng + ?Sized>(
    config: &PcnConfig,
    z0: Vec<f64>,
    loglik: &mut dyn FnMut(&[f64]) -> Result<f64>,
    rng: &mut R,
) -> Result<ChainResult> {
    config.validate()?;
    let h = z0.len();
    let mut state = ChainState::new(z0, loglik)?;
    let mut record = ChainRecord {
        accepted: Vec::with_capacity(config.n_ite),
        loglik: Vec::with_capacity(config.n_ite),
    };
    let keep = (config.n_ite - config.n_burn).div_ceil(config.thin);
    let mut kept = Vec::with_capacity(keep * h);
    for i in 0..config.n_ite {
        let a = pcn_step(&mut state, config.beta, loglik, rng)?;
        record.accepted.push(a);
        record.loglik.push(state.loglik);
        if i >= config.n_burn && (i - config.n_burn) % config.thin == 0 {
            kept.extend_from_slice(&state.z);
        }
    }
    let n = kept.len() / h.max(1);
    let samples = Array2::from_shape_vec((n, h), kept).expect("row-major states");
    let ess = (0..h).map(|c| batch_means_ess(&samples.column(c).to_vec())).collect();
    Ok(ChainResult {
        samples,
        acceptance_rate: state.accepted as f64 / config.n_ite as f64,
        record,
        ess,
    })
}

/// `log π(d | z) = −Φ(G(z))` through a decoder and backend.
pub fn latent_loglik<'a>(
    backend: &'a dyn GradientBackend,
    decoder: &'a dyn Decoder,
) -> impl FnMut(&[f64]) -> Result<f64> + 'a {
    move |z: &[f64]| {
        let zr = Array2::from_shape_vec((1, z.len()), z.to_vec()).expect("row");
        let k = decoder.decode(&zr)?;
        Ok(-backend.misfit_rows(&k)?[0])
    }
}

/// Chain over the decoder latent space, started from a prior draw.
pub fn run_chain<R: Rng + ?Sized>(
    config: &PcnConfig,
    backend: &dyn GradientBackend,
    decoder: &dyn Decoder,
    rng: &mut R,
) -> Result<ChainResult> {
    let z0 = rng::standard_normal_vec(rng, decoder.latent_dim());
    let mut ll = latent_loglik(backend, decoder);
    run_chain_with(config, z0, &mut ll, rng)
}

/// Independent chains on derived streams of `seed`, run in parallel.
pub fn run_chains(
    config: &PcnConfig,
    n_chains: usize,
    seed: u64,
    backend: &dyn GradientBackend,
    decoder: &dyn Decoder,
) -> Result<Vec<ChainResult>> {
    rng::par_map(n_chains, |i| {
        run_chain(config, backend, decoder, &mut rng::derive(seed, i as u64))
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conjugate::{ConjugateProblem, ZeroBackend};
    use proptest::prelude::*;

    fn flat(_: &[f64]) -> Result<f64> {
        Ok(0.0)
    }

    #[test]
    fn zero_beta_freezes_the_chain() {
        let cfg = PcnConfig {
            beta: 0.0,
            n_ite: 200,
            n_burn: 0,
            thin: 1,
        };
        let mut ll = |z: &[f64]| Ok(-z[0] * z[0]);
        let r = run_chain_with(&cfg, vec![0.7, -0.2], &mut ll, &mut rng::seeded(1)).unwrap();
        assert_eq!(r.acceptance_rate, 1.0);
        assert!(r.samples.rows().into_iter().all(|row| row.to_vec() == vec![0.7, -0.2]));
    }

    #[test]
    fn flat_likelihood_preserves_the_prior() {
        let cfg = PcnConfig {
            beta: 0.15,
            n_ite: 100_000,
            n_burn: 0,
            thin: 1,
        };
        let r = run_chain_with(&cfg, vec![0.0; 2], &mut flat, &mut rng::seeded(2)).unwrap();
        assert_eq!(r.acceptance_rate, 1.0);
        let m = r.mean();
        let v = r.variance();
        for c in 0..2 {
            let se = (v[c] / r.ess[c]).sqrt();
            assert!(m[c].abs() < 3.0 * se, "mean {c}: {} (se {se})", m[c]);
            assert!((v[c] - 1.0).abs() < 0.05, "var {c}: {}", v[c]);
        }
    }

    #[test]
    fn one_likelihood_call_per_step() {
        let mut calls = 0usize;
        let mut ll = |z: &[f64]| {
            calls += 1;
            Ok(-z.iter().map(|v| v * v).sum::<f64>())
        };
        let cfg = PcnConfig {
            n_ite: 50,
            n_burn: 10,
            ..Default::default()
        };
        let r = run_chain_with(&cfg, vec![0.0; 3], &mut ll, &mut rng::seeded(3)).unwrap();
        assert_eq!(calls, 51);
        assert_eq!(r.samples.nrows(), 40);
    }

    #[test]
    fn conjugate_posterior_mean() {
        let p = ConjugateProblem::standard();
        let cfg = PcnConfig {
            n_ite: 110_000,
            n_burn: 10_000,
            ..Default::default()
        };
        let r = run_chain(&cfg, &p.backend, &p.decoder, &mut rng::seeded(4)).unwrap();
        let m = r.mean();
        for c in 0..2 {
            assert!((m[c] - p.mean[c]).abs() < 0.03 * p.mean[c].abs(), "{c}: {}", m[c]);
        }
        assert!(r.acceptance_rate > 0.2 && r.acceptance_rate < 1.0);
    }

    #[test]
    fn moment_error_shrinks_with_chain_length() {
        let p = ConjugateProblem::standard();
        let err = |n: usize, seed: u64| {
            let cfg = PcnConfig {
                n_ite: n + 1000,
                n_burn: 1000,
                ..Default::default()
            };
            let r = run_chain(&cfg, &p.backend, &p.decoder, &mut rng::seeded(seed)).unwrap();
            let m = r.mean();
            let v = r.variance();
            (0..2)
                .map(|c| (m[c] - p.mean[c]).abs() + (v[c] - p.cov[c][c]).abs())
                .sum::<f64>()
        };
        let median = |n: usize| {
            let mut e: Vec<f64> = (0..10).map(|s| err(n, 100 + s)).collect();
            e.sort_by(f64::total_cmp);
            0.5 * (e[4] + e[5])
        };
        let (short, long) = (median(10_000), median(100_000));
        assert!(long < short, "{long} vs {short}");
    }

    #[test]
    fn seeded_chains_repeat() {
        let p = ConjugateProblem::standard();
        let cfg = PcnConfig {
            n_ite: 500,
            n_burn: 100,
            thin: 3,
            ..Default::default()
        };
        let a = run_chains(&cfg, 3, 7, &p.backend, &p.decoder).unwrap();
        let b = run_chains(&cfg, 3, 7, &p.backend, &p.decoder).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].samples, a[1].samples);
        assert_eq!(a[0].samples.nrows(), 134);
        let csv = a[0].chain_csv();
        assert_eq!(csv.lines().next(), Some("iter,accepted,loglik"));
        assert_eq!(csv.lines().count(), 501);
        let (back, _) = ParamVector::from_text(&a[0].samples_params().to_text(&[])).unwrap();
        assert_eq!(back, a[0].samples_params());
    }

    #[test]
    fn overflowing_likelihood_ratio_is_safe() {
        let mut state = ChainState::new(vec![0.0], &mut |_| Ok(-1e300)).unwrap();
        let mut ll = |z: &[f64]| Ok(if z[0] > 0.0 { 1e300 } else { f64::NAN });
        let mut r = rng::seeded(5);
        for _ in 0..20 {
            pcn_step(&mut state, 0.5, &mut ll, &mut r).unwrap();
            assert!(state.loglik == -1e300 || state.loglik == 1e300);
        }
        assert!(PcnConfig { beta: 1.5, ..Default::default() }.validate().is_err());
        assert!(PcnConfig { n_burn: 50_000, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn ess_of_independent_draws_is_near_n() {
        let x = rng::standard_normal_vec(&mut rng::seeded(6), 10_000);
        let e = batch_means_ess(&x);
        assert!(e > 5000.0, "{e}");
        let mut ar = vec![0.0; 10_000];
        let mut r = rng::seeded(7);
        for i in 1..ar.len() {
            ar[i] = 0.95 * ar[i - 1] + rng::standard_normal_vec(&mut r, 1)[0];
        }
        assert!(batch_means_ess(&ar) < 0.2 * 10_000.0);
    }

    #[test]
    fn zero_backend_chain_has_full_acceptance() {
        let dec = ConjugateProblem::standard().decoder;
        let cfg = PcnConfig {
            n_ite: 300,
            n_burn: 0,
            ..Default::default()
        };
        let r = run_chain(&cfg, &ZeroBackend, &dec, &mut rng::seeded(8)).unwrap();
        assert_eq!(r.acceptance_rate, 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn cached_loglik_matches_state(seed in 0u64..1000, beta in 0.0f64..1.0) {
            let ll = |z: &[f64]| -> Result<f64> { Ok(-(z[0] - 1.0).powi(2) * 4.0 - z[1].abs()) };
            let mut f = ll;
            let mut s = ChainState::new(vec![0.0, 0.0], &mut f).unwrap();
            let mut r = rng::seeded(seed);
            for _ in 0..50 {
                pcn_step(&mut s, beta, &mut f, &mut r).unwrap();
                prop_assert_eq!(s.loglik, ll(&s.z).unwrap());
            }
            prop_assert!(s.accepted <= s.steps);
        }
    }
}
