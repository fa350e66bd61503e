//! In-process pipeline stages. Each stage draws from its own derived stream
//! of the run seed, so stages can be rerun independently.

use std::time::Instant;

use vidgp::autodiff::Tensor;
use vidgp::diagnostics::{gradient_agreement_study, posterior_stats, AgreementReport, AgreementRow};
use vidgp::grid::{add_noise, FieldDataset, ObservationSet, ScalarField};
use vidgp::pcn::{run_chain, ChainResult};
use vidgp::prior::{sample_channel, sample_channel_dataset, sample_grf, sample_grf_dataset, GrfSpec};
use vidgp::rng::{self, SimRng};
use vidgp::surrogate::{train_surrogate, SurrogateModel, SurrogateTrace};
use vidgp::vae::{train_vae, VaeModel, VaeTrace};
use vidgp::vi::{
    decode_fields, optimize, posterior_sample, AdjointBackend, GradientBackend, SurrogateBackend, VariationalParams,
    ViTrace,
};
use vidgp::{Error, Result};

use crate::settings::{Method, PriorKind, RunConfig};

pub mod stream {
    pub const DATA: u64 = 1;
    pub const TRUTH: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const VAE: u64 = 4;
    pub const SURROGATE: u64 = 5;
    pub const INFER: u64 = 6;
    pub const POSTERIOR: u64 = 7;
    pub const GRADCHECK: u64 = 8;
}

pub fn stream(cfg: &RunConfig, s: u64) -> SimRng {
    rng::derive(cfg.seed, s)
}

pub fn corpus(cfg: &RunConfig) -> Result<FieldDataset> {
    let mut r = stream(cfg, stream::DATA);
    match cfg.prior {
        PriorKind::Grf => sample_grf_dataset(cfg.grid, &cfg.grf, &mut r),
        PriorKind::Channel => sample_channel_dataset(cfg.grid, &cfg.channel, cfg.n_channel_fields, &mut r),
    }
}

/// The held-out truth: a GRF at the configured lengths, or a channel draw.
pub fn truth(cfg: &RunConfig) -> Result<ScalarField> {
    let mut r = stream(cfg, stream::TRUTH);
    match cfg.prior {
        PriorKind::Grf => {
            let (l1, l2) = cfg.truth_lengths;
            let spec = GrfSpec {
                mean: cfg.grf.mean,
                ..GrfSpec::new(cfg.grf.variance, l1, l2)
            };
            sample_grf(cfg.grid, &spec, &mut r)
        }
        PriorKind::Channel => sample_channel(cfg.grid, &cfg.channel, &mut r),
    }
}

/// Noisy observations of the truth. The standard normal draws depend on
/// the seed only, so changing `noise_level` rescales the same noise.
pub fn observations(cfg: &RunConfig, truth: &ScalarField) -> Result<ObservationSet> {
    let clean = cfg.solver().forward(truth, &cfg.plan())?;
    add_noise(&clean, cfg.noise_level, &mut stream(cfg, stream::NOISE))
}

pub fn train_prior(cfg: &RunConfig, data: &FieldDataset) -> Result<(VaeModel, VaeTrace)> {
    train_vae(data, &cfg.vae, &mut stream(cfg, stream::VAE))
}

/// `n` fields taken at an even stride through `data`.
pub fn training_subset(data: &FieldDataset, n: usize) -> Result<FieldDataset> {
    let len = data.len();
    if n == 0 || n > len {
        return Err(Error::Config(format!("n_train {n} exceeds the {len} available fields")));
    }
    let fields = (0..n).map(|i| data.fields[i * len / n].clone()).collect();
    FieldDataset::new(data.grid, fields, data.metadata.clone())
}

/// Every size starts from the same initialization.
pub fn train_surrogate_n(cfg: &RunConfig, data: &FieldDataset, n: usize) -> Result<(SurrogateModel, SurrogateTrace)> {
    let sub = training_subset(data, n)?;
    train_surrogate(&sub, &cfg.surrogate, &mut stream(cfg, stream::SURROGATE))
}

pub fn adjoint_backend(cfg: &RunConfig, obs: &ObservationSet) -> AdjointBackend {
    let mut b = AdjointBackend::new(cfg.grid, cfg.plan(), obs.clone());
    b.solver = cfg.solver();
    b
}

pub fn backend(
    cfg: &RunConfig,
    method: Method,
    surrogate: Option<&SurrogateModel>,
    obs: &ObservationSet,
) -> Result<Box<dyn GradientBackend>> {
    if method.uses_surrogate() {
        let model = surrogate
            .ok_or_else(|| Error::Config(format!("method {} needs a trained surrogate", method.as_str())))?;
        if model.grid() != cfg.grid {
            return Err(Error::Config("surrogate grid differs from the run grid".into()));
        }
        Ok(Box::new(SurrogateBackend::new(model.clone(), &cfg.plan(), obs.clone())))
    } else {
        Ok(Box::new(adjoint_backend(cfg, obs)))
    }
}

#[derive(Debug, Clone)]
pub enum Posterior {
    Vi { lambda: VariationalParams, trace: ViTrace },
    Mcmc { chain: ChainResult },
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub method: Method,
    pub iterations: usize,
    /// Wall clock around the optimization or sampling loop only.
    pub seconds: f64,
    pub mean: ScalarField,
    pub std: ScalarField,
    pub rel_l2: f64,
    pub posterior: Posterior,
}

impl Inference {
    pub fn report_header() -> &'static str {
        "method,iterations,inference_seconds,rel_l2_error"
    }

    pub fn report_row(&self, timing: bool) -> String {
        let secs = if timing { self.seconds } else { 0.0 };
        format!("{},{},{secs:.3},{:.6}", self.method.as_str(), self.iterations, self.rel_l2)
    }
}

pub fn infer(
    cfg: &RunConfig,
    method: Method,
    vae: &VaeModel,
    surrogate: Option<&SurrogateModel>,
    obs: &ObservationSet,
    truth: &ScalarField,
) -> Result<Inference> {
    if vae.decoder().grid() != cfg.grid {
        return Err(Error::Config("generative prior grid differs from the run grid".into()));
    }
    let decoder = vae.decoder();
    let be = backend(cfg, method, surrogate, obs)?;
    let mut r = stream(cfg, stream::INFER);
    let t0 = Instant::now();
    let (posterior, iterations) = if method.is_mcmc() {
        let chain = run_chain(&cfg.pcn, be.as_ref(), &decoder, &mut r)?;
        (Posterior::Mcmc { chain }, cfg.pcn.n_ite)
    } else {
        let (lambda, trace) = optimize(&cfg.vi, be.as_ref(), &decoder, &mut r)?;
        (Posterior::Vi { lambda, trace }, cfg.vi.n_opt)
    };
    let seconds = t0.elapsed().as_secs_f64();
    let fields = match &posterior {
        Posterior::Vi { lambda, .. } => {
            posterior_sample(lambda, &decoder, cfg.vi.n_samples, &mut stream(cfg, stream::POSTERIOR))?
        }
        Posterior::Mcmc { chain } => decode_fields(&chain.samples, &decoder)?,
    };
    let stats = posterior_stats(&fields, Some(truth))?;
    Ok(Inference {
        method,
        iterations,
        seconds,
        mean: stats.mean,
        std: stats.std,
        rel_l2: stats.rel_l2.expect("truth supplied"),
        posterior,
    })
}

/// Forwards to an adjoint backend; the self-test entry of a gradient study.
struct Wrapped<'a>(&'a AdjointBackend);

impl GradientBackend for Wrapped<'_> {
    fn misfit_rows(&self, k: &Tensor) -> Result<Vec<f64>> {
        self.0.misfit_rows(k)
    }

    fn misfit_and_grad_rows(&self, k: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        self.0.misfit_and_grad_rows(k)
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckOutcome {
    pub report: AgreementReport,
    /// `(check, passed)` in evaluation order.
    pub checks: Vec<(String, bool)>,
}

impl GradcheckOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|(_, ok)| *ok)
    }

    pub fn verdict_text(&self) -> String {
        let mut s = String::new();
        for (name, ok) in &self.checks {
            s.push_str(&format!("{name}: {}\n", if *ok { "PASS" } else { "FAIL" }));
        }
        s.push_str(&format!("verdict: {}\n", if self.passed() { "PASS" } else { "FAIL" }));
        s
    }

    /// `cos α̃` of the μ block per surrogate size, ascending by size.
    pub fn mu_trend(&self) -> Vec<(usize, f64)> {
        let mut v: Vec<(usize, f64)> = self
            .report
            .rows
            .iter()
            .filter(|r| r.block == "mu" && r.dataset_size > 0)
            .map(|r| (r.dataset_size, r.cos_alpha))
            .collect();
        v.sort_by_key(|(n, _)| *n);
        v
    }
}

/// Agreement of each surrogate with the adjoint on the μ and log-variance
/// gradients. The wrapped adjoint appears as dataset size 0. Checks: the
/// self-test is 1, μ agreement is non-decreasing in size and clears
/// `gc_min_cos` at the largest size.
pub fn gradcheck(
    cfg: &RunConfig,
    vae: &VaeModel,
    surrogates: &[(usize, SurrogateModel)],
    obs: &ObservationSet,
) -> Result<GradcheckOutcome> {
    let adjoint = adjoint_backend(cfg, obs);
    let wrapped = Wrapped(&adjoint);
    let backends: Vec<(usize, SurrogateBackend)> = surrogates
        .iter()
        .map(|(n, m)| (*n, SurrogateBackend::new(m.clone(), &cfg.plan(), obs.clone())))
        .collect();
    let mut list: Vec<(usize, &dyn GradientBackend)> = vec![(0, &wrapped)];
    list.extend(backends.iter().map(|(n, b)| (*n, b as &dyn GradientBackend)));
    let report = gradient_agreement_study(
        &list,
        &adjoint,
        &vae.decoder(),
        cfg.gc_pairs,
        &mut stream(cfg, stream::GRADCHECK),
    )?;
    let mut out = GradcheckOutcome {
        report,
        checks: Vec::new(),
    };
    let self_test = out
        .report
        .rows
        .iter()
        .filter(|r: &&AgreementRow| r.dataset_size == 0)
        .all(|r| (r.cos_alpha - 1.0).abs() < 1e-9);
    out.checks.push(("self_test cos_alpha = 1".into(), self_test));
    let trend = out.mu_trend();
    if !trend.is_empty() {
        let mono = trend.windows(2).all(|w| w[1].1 >= w[0].1);
        let (n, last) = *trend.last().expect("nonempty");
        out.checks.push(("mu cos_alpha non-decreasing in dataset size".into(), mono));
        out.checks
            .push((format!("mu cos_alpha at n={n} >= {}", cfg.gc_min_cos), last >= cfg.gc_min_cos));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        RunConfig::parse(
            "nx=6\nny=6\nobs_per_side=3\nn_lengths=2\nn_per_length=8\nlatent_dim=3\nvae_hidden=8\nvae_epochs=2\n\
             vae_batch=8\nn_train=4,8\nsur_hidden=8\nsur_epochs=2\nsur_batch=4\nvi_iters=20\nn_post_samples=10\n\
             pcn_iters=40\npcn_burn=20\ngc_pairs=5\ngc_min_cos=-1\n",
        )
        .unwrap()
    }

    #[test]
    fn noise_draws_are_shared_across_levels() {
        let c = tiny();
        let t = truth(&c).unwrap();
        let a = observations(&c, &t).unwrap();
        let b = observations(&c.with(&[("noise_level", "0.1".into())]).unwrap(), &t).unwrap();
        for i in 0..a.len() {
            let xa = (a.noisy[i] - a.clean[i]) / a.sigma[i];
            let xb = (b.noisy[i] - b.clean[i]) / b.sigma[i];
            assert!((xa - xb).abs() < 1e-9);
        }
    }

    #[test]
    fn subsets_are_strided_and_bounded() {
        let c = tiny();
        let d = corpus(&c).unwrap();
        let s = training_subset(&d, 4).unwrap();
        assert_eq!(s.fields[1], d.fields[4]);
        assert!(training_subset(&d, 17).is_err());
    }

    #[test]
    fn small_pipeline_runs_every_method() {
        let c = tiny();
        let d = corpus(&c).unwrap();
        let t = truth(&c).unwrap();
        let obs = observations(&c, &t).unwrap();
        let (vae, _) = train_prior(&c, &d).unwrap();
        let (sur, tr) = train_surrogate_n(&c, &d, 8).unwrap();
        assert_eq!(tr.total.len(), 2);
        for m in Method::ALL {
            let r = infer(&c, m, &vae, Some(&sur), &obs, &t).unwrap();
            assert!(r.rel_l2.is_finite());
            assert_eq!(r.iterations, if m.is_mcmc() { 40 } else { 20 });
        }
        assert!(infer(&c, Method::ViNn, &vae, None, &obs, &t).is_err());
        let g = gradcheck(&c, &vae, &[(8, sur)], &obs).unwrap();
        assert_eq!(g.report.rows.len(), 4);
        assert!(g.checks[0].1);
    }
}
