//! Small end-to-end runs through the public API.

use vidgp::darcy::DarcySolver;
use vidgp::diagnostics::{posterior_stats, relative_l2};
use vidgp::grid::{add_noise, Grid2D, ObservationPlan};
use vidgp::pcn::{run_chain, PcnConfig};
use vidgp::prior::{Normalization, sample_grf, sample_grf_dataset, GrfDatasetSpec, GrfSpec};
use vidgp::rng;
use vidgp::surrogate::{train_surrogate, Schedule, SurrogateConfig};
use vidgp::vae::{train_vae, VaeConfig};
use vidgp::vi::{decode_fields, optimize, posterior_sample, AdjointBackend, SurrogateBackend, ViConfig, VariationalParams};

fn corpus(g: Grid2D, n: usize, seed: u64) -> vidgp::grid::FieldDataset {
    let spec = GrfDatasetSpec {
        n_lengths: 4,
        n_per_length: n / 4,
        ..GrfDatasetSpec::default()
    };
    sample_grf_dataset(g, &spec, &mut rng::seeded(seed)).unwrap()
}

#[test]
fn vi_with_adjoint_fits_the_data() {
    let g = Grid2D::square(8).unwrap();
    let data = corpus(g, 256, 1);
    let cfg = VaeConfig {
        decoder_hidden: 64,
        epochs: 200,
        batch_size: 32,
        learning_rate: 2e-3,
        normalization: Normalization::Affine { low: 0.0, high: 0.2 },
        ..VaeConfig::grf(8, 8, 6)
    };
    let (vae, _) = train_vae(&data, &cfg, &mut rng::seeded(2)).unwrap();
    // a truth the decoder can represent exactly
    let z_true = [1.0, -0.8, 0.6, 0.0, -1.2, 0.4];
    let truth = vidgp::grid::ScalarField::new(g, vae.decode(&z_true).unwrap()).unwrap();
    let plan = ObservationPlan::uniform(4);
    let clean = DarcySolver::default().forward(&truth, &plan).unwrap();
    let obs = add_noise(&clean, 0.05, &mut rng::seeded(4)).unwrap();
    let backend = AdjointBackend::new(g, plan.clone(), obs.clone());
    let dec = vae.decoder();
    let vi = ViConfig {
        n_opt: 600,
        lr_mu: 1e-2,
        lr_logvar: 1e-2,
        n_samples: 200,
        ..ViConfig::default()
    };
    let (lambda, trace) = optimize(&vi, &backend, &dec, &mut rng::seeded(5)).unwrap();
    let e = trace.elbo();
    let early = e[..50].iter().sum::<f64>() / 50.0;
    let late = e[e.len() - 50..].iter().sum::<f64>() / 50.0;
    assert!(late > early, "{early} -> {late}");
    let s = DarcySolver::default();
    let avg = |fs: &[vidgp::grid::ScalarField]| {
        fs.iter().map(|f| s.misfit(f, &plan, &obs).unwrap()).sum::<f64>() / fs.len() as f64
    };
    let fields = posterior_sample(&lambda, &dec, 200, &mut rng::seeded(6)).unwrap();
    let prior = posterior_sample(&VariationalParams::zeros(6), &dec, 200, &mut rng::seeded(6)).unwrap();
    let (fitted, spread) = (avg(&fields), avg(&prior));
    assert!(fitted < 0.5 * spread, "posterior misfit {fitted} vs prior {spread}");
    let stats = posterior_stats(&fields, Some(&truth)).unwrap();
    assert!(stats.rel_l2.unwrap().is_finite());
}

#[test]
fn surrogate_backend_tracks_the_solver_after_training() {
    let g = Grid2D::square(6).unwrap();
    let data = corpus(g, 128, 7);
    let cfg = SurrogateConfig {
        hidden: vec![48, 48],
        epochs: 60,
        batch_size: 8,
        schedule: Schedule::OneCycle(3e-3),
        ..SurrogateConfig::new(6, 6)
    };
    let (model, trace) = train_surrogate(&data, &cfg, &mut rng::seeded(8)).unwrap();
    assert!(trace.total.last().unwrap() < &trace.total[0]);
    let held = sample_grf(g, &GrfSpec::new(0.5, 0.3, 0.3), &mut rng::seeded(9)).unwrap();
    let exact = DarcySolver::default().solve_pressure(&held).unwrap();
    let pred = model.predict(&held).unwrap();
    let err = relative_l2(&pred.p, &exact.p).unwrap();
    assert!(err < 0.2, "pressure rel err {err}");
    let plan = ObservationPlan::uniform(3);
    let obs = add_noise(&DarcySolver::default().forward(&held, &plan).unwrap(), 0.05, &mut rng::seeded(10)).unwrap();
    let sb = SurrogateBackend::new(model, &plan, obs);
    let k = ndarray::Array2::from_shape_vec((1, g.len()), held.values().to_vec()).unwrap();
    let (phi, grad) = vidgp::vi::GradientBackend::misfit_and_grad_rows(&sb, &k).unwrap();
    assert!(phi[0].is_finite() && grad.iter().all(|v| v.is_finite()));
}

#[test]
fn pcn_chain_decodes_to_fields() {
    let p = vidgp::conjugate::ConjugateProblem::standard();
    let cfg = PcnConfig {
        n_ite: 3000,
        n_burn: 1000,
        thin: 10,
        ..PcnConfig::default()
    };
    let chain = run_chain(&cfg, &p.backend, &p.decoder, &mut rng::seeded(11)).unwrap();
    assert_eq!(chain.samples.nrows(), 200);
    let fields = decode_fields(&chain.samples, &p.decoder).unwrap();
    assert_eq!(fields.len(), 200);
    assert_eq!(chain.chain_csv().lines().count(), 3001);
}
