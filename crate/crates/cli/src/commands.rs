//! Subcommands over a run directory.
//!
//! ```text
//! <out>/data/                 training corpus
//! <out>/truth/                field.txt, observations.csv, meta.txt
//! <out>/dgp/                  vae.txt, trace.csv
//! <out>/surrogate/            surrogate_n<N>.txt, trace_n<N>.csv
//! <out>/infer/<method>/       posterior_mean.txt, posterior_std.txt, report.csv, trace or chain
//! <out>/gradcheck/            agreement.csv, verdict.txt
//! <out>/report/               report.csv
//! ```
//!
//! Every directory a command writes gets a `config.txt` snapshot.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use vidgp::fieldio::{format_value, read_dataset, read_field, read_meta, write_dataset, write_field, write_meta};
use vidgp::grid::{ObservationSet, ScalarField};
use vidgp::surrogate::{SurrogateModel, SurrogateTrace};
use vidgp::vae::VaeModel;
use vidgp::{Error, Result};

use crate::pgm;
use crate::pipeline::{self, Inference, Posterior};
use crate::settings::{Method, RunConfig};

pub const CONFIG_FILE: &str = "config.txt";
pub const OBS_HEADER: &str = "x,y,clean,noisy,sigma";

/// Flags shared by the pipeline commands.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Invocation {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub overrides: Vec<(String, String)>,
}

impl Invocation {
    /// Reads `--key value` and `--key=value` pairs. `--config`, `--seed` and
    /// `--out` fill their own fields; other keys become config overrides
    /// with dashes mapped to underscores.
    pub fn absorb(&mut self, args: &[String]) -> Result<()> {
        let mut it = args.iter();
        while let Some(a) = it.next() {
            let body = a
                .strip_prefix("--")
                .ok_or_else(|| Error::Config(format!("expected `--key value`, got `{a}`")))?;
            let (key, value) = match body.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = it
                        .next()
                        .ok_or_else(|| Error::Config(format!("flag `{a}` needs a value")))?;
                    (body.to_string(), v.clone())
                }
            };
            match key.as_str() {
                "config" => self.config = Some(value.into()),
                "out" => self.out = Some(value.into()),
                "seed" => {
                    self.seed = Some(
                        value
                            .parse()
                            .map_err(|_| Error::Config(format!("seed must be an unsigned integer, got `{value}`")))?,
                    )
                }
                _ => self.overrides.push((key.replace('-', "_"), value)),
            }
        }
        Ok(())
    }

    /// Defaults, then the config file, then overrides, then `--seed`.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut ov = self.overrides.clone();
        if let Some(s) = self.seed {
            ov.push(("seed".into(), s.to_string()));
        }
        RunConfig::load(self.config.as_deref(), &ov)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("run"))
    }
}

fn prepare(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_FILE), cfg.snapshot())?;
    Ok(())
}

fn missing(what: &str, path: &Path, hint: &str) -> Error {
    Error::Config(format!("{what} not found at {} (run `vidgp {hint}` first)", path.display()))
}

fn require_file(path: &Path, what: &str, hint: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(missing(what, path, hint))
    }
}

pub fn observations_csv(cfg: &RunConfig, obs: &ObservationSet) -> String {
    let mut s = format!("{OBS_HEADER}\n");
    for (i, (x, y)) in cfg.plan().locations().iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            format_value(*x),
            format_value(*y),
            format_value(obs.clean[i]),
            format_value(obs.noisy[i]),
            format_value(obs.sigma[i])
        );
    }
    s
}

/// Parses an observations file and checks its locations against the plan.
pub fn parse_observations(cfg: &RunConfig, text: &str, noise_level: f64) -> Result<ObservationSet> {
    let mut lines = text.lines();
    if lines.next() != Some(OBS_HEADER) {
        return Err(Error::Parse {
            location: "observations line 1".into(),
            message: format!("expected header `{OBS_HEADER}`"),
        });
    }
    let plan = cfg.plan();
    let mut obs = ObservationSet {
        clean: Vec::new(),
        noisy: Vec::new(),
        sigma: Vec::new(),
        noise_level,
    };
    for (n, line) in lines.enumerate() {
        let bad = |m: String| Error::Parse {
            location: format!("observations line {}", n + 2),
            message: m,
        };
        let v: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| bad(format!("invalid number `{t}`"))))
            .collect::<Result<_>>()?;
        if v.len() != 5 {
            return Err(bad(format!("expected 5 columns, got {}", v.len())));
        }
        let loc = plan
            .locations()
            .get(n)
            .ok_or_else(|| bad(format!("more rows than the {} planned locations", plan.len())))?;
        if (loc.0 - v[0]).abs() > 1e-12 || (loc.1 - v[1]).abs() > 1e-12 {
            return Err(bad("location differs from the configured observation plan".into()));
        }
        obs.clean.push(v[2]);
        obs.noisy.push(v[3]);
        obs.sigma.push(v[4]);
    }
    if obs.len() != plan.len() {
        return Err(Error::Config(format!(
            "observations file has {} rows, the plan has {} locations",
            obs.len(),
            plan.len()
        )));
    }
    obs.validate()?;
    Ok(obs)
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<String> {
    let data = pipeline::corpus(cfg)?;
    let truth = pipeline::truth(cfg)?;
    let obs = pipeline::observations(cfg, &truth)?;
    let ddir = out.join("data");
    prepare(&ddir, cfg)?;
    write_dataset(&ddir, &data)?;
    let tdir = out.join("truth");
    prepare(&tdir, cfg)?;
    write_field(tdir.join("field.txt"), &truth)?;
    fs::write(tdir.join("observations.csv"), observations_csv(cfg, &obs))?;
    write_meta(
        tdir.join("meta.txt"),
        &[
            ("seed".into(), cfg.seed.to_string()),
            ("noise_level".into(), format_value(cfg.noise_level)),
            ("prior".into(), cfg.get("prior").unwrap_or_default().to_string()),
            ("n_obs".into(), obs.len().to_string()),
        ],
    )?;
    Ok(format!(
        "wrote {} fields to {} and truth with {} observations to {}",
        data.len(),
        ddir.display(),
        obs.len(),
        tdir.display()
    ))
}

fn load_corpus(out: &Path) -> Result<vidgp::grid::FieldDataset> {
    let dir = out.join("data");
    require_file(&dir.join(vidgp::fieldio::META_FILE), "training corpus", "gen-data")?;
    read_dataset(&dir)
}

pub fn train_dgp(cfg: &RunConfig, out: &Path) -> Result<String> {
    let data = load_corpus(out)?;
    let (model, trace) = pipeline::train_prior(cfg, &data)?;
    let dir = out.join("dgp");
    prepare(&dir, cfg)?;
    model.save(dir.join("vae.txt"))?;
    let mut csv = String::from("epoch,elbo\n");
    for (e, v) in trace.epoch_elbo.iter().enumerate() {
        let _ = writeln!(csv, "{e},{}", format_value(*v));
    }
    fs::write(dir.join("trace.csv"), csv)?;
    Ok(format!(
        "trained generative prior for {} epochs, final elbo {:.4}",
        trace.epoch_elbo.len(),
        trace.epoch_elbo.last().copied().unwrap_or(f64::NAN)
    ))
}

pub fn surrogate_trace_csv(trace: &SurrogateTrace) -> String {
    let mut csv = String::from("epoch,total,pde,boundary\n");
    for (e, ((t, p), b)) in trace.total.iter().zip(&trace.pde).zip(&trace.boundary).enumerate() {
        let _ = writeln!(csv, "{e},{},{},{}", format_value(*t), format_value(*p), format_value(*b));
    }
    csv
}

pub fn surrogate_path(out: &Path, n: usize) -> PathBuf {
    out.join("surrogate").join(format!("surrogate_n{n}.txt"))
}

pub fn train_surrogates(cfg: &RunConfig, out: &Path) -> Result<String> {
    let data = load_corpus(out)?;
    let dir = out.join("surrogate");
    prepare(&dir, cfg)?;
    let mut msg = Vec::new();
    for &n in &cfg.n_train {
        let (model, trace) = pipeline::train_surrogate_n(cfg, &data, n)?;
        model.save(surrogate_path(out, n))?;
        fs::write(dir.join(format!("trace_n{n}.csv")), surrogate_trace_csv(&trace))?;
        msg.push(format!(
            "n_train {n}: final loss {:.4e} (pde {:.4e}, boundary {:.4e})",
            trace.total.last().copied().unwrap_or(f64::NAN),
            trace.pde.last().copied().unwrap_or(f64::NAN),
            trace.boundary.last().copied().unwrap_or(f64::NAN)
        ));
    }
    Ok(msg.join("\n"))
}

/// Truth field and observations, checked against the run settings.
pub fn load_truth(cfg: &RunConfig, out: &Path) -> Result<(ScalarField, ObservationSet)> {
    let dir = out.join("truth");
    let fpath = dir.join("field.txt");
    require_file(&fpath, "truth field", "gen-data")?;
    let truth = read_field(&fpath)?;
    if truth.grid() != cfg.grid {
        return Err(Error::Config("truth field grid differs from the run grid".into()));
    }
    let meta = read_meta(dir.join("meta.txt"))?;
    let level: f64 = meta
        .iter()
        .find(|(k, _)| k == "noise_level")
        .and_then(|(_, v)| v.parse().ok())
        .ok_or_else(|| Error::Config("truth/meta.txt lacks noise_level".into()))?;
    if level != cfg.noise_level {
        return Err(Error::Config(format!(
            "observations were generated at noise_level {level}, the run asks for {}; rerun gen-data",
            cfg.noise_level
        )));
    }
    let opath = dir.join("observations.csv");
    require_file(&opath, "observations", "gen-data")?;
    let obs = parse_observations(cfg, &fs::read_to_string(&opath)?, level)?;
    Ok((truth, obs))
}

fn load_vae(out: &Path) -> Result<VaeModel> {
    let p = out.join("dgp").join("vae.txt");
    require_file(&p, "generative prior", "train-dgp")?;
    VaeModel::load(p)
}

fn load_surrogate(out: &Path, n: usize) -> Result<SurrogateModel> {
    let p = surrogate_path(out, n);
    require_file(&p, "surrogate", "train-surrogate")?;
    SurrogateModel::load(p)
}

pub fn write_inference(cfg: &RunConfig, dir: &Path, r: &Inference) -> Result<()> {
    prepare(dir, cfg)?;
    write_field(dir.join("posterior_mean.txt"), &r.mean)?;
    write_field(dir.join("posterior_std.txt"), &r.std)?;
    match &r.posterior {
        Posterior::Vi { lambda, trace } => {
            fs::write(dir.join("trace.csv"), trace.to_csv(cfg.record_timing))?;
            lambda.to_params().save(dir.join("lambda.txt"), &[])?;
        }
        Posterior::Mcmc { chain } => {
            fs::write(dir.join("chain.csv"), chain.chain_csv())?;
            chain.samples_params().save(dir.join("samples.txt"), &[])?;
        }
    }
    fs::write(
        dir.join("report.csv"),
        format!("{}\n{}\n", Inference::report_header(), r.report_row(cfg.record_timing)),
    )?;
    Ok(())
}

pub fn infer(cfg: &RunConfig, out: &Path) -> Result<String> {
    let (truth, obs) = load_truth(cfg, out)?;
    let vae = load_vae(out)?;
    let n = cfg.largest_n_train();
    let sur = if cfg.method.uses_surrogate() {
        Some(load_surrogate(out, n)?)
    } else {
        None
    };
    let r = pipeline::infer(cfg, cfg.method, &vae, sur.as_ref(), &obs, &truth)?;
    let dir = out.join("infer").join(cfg.method.as_str());
    write_inference(cfg, &dir, &r)?;
    let extra = match &r.posterior {
        Posterior::Vi { trace, .. } => format!("final elbo estimate {:.4}", trace.elbo().last().copied().unwrap_or(f64::NAN)),
        Posterior::Mcmc { chain } => format!("acceptance rate {:.4}", chain.acceptance_rate),
    };
    Ok(format!(
        "{}: {} iterations in {:.2} s, posterior-mean relative L2 error {:.4}, {extra}",
        cfg.method.as_str(),
        r.iterations,
        r.seconds,
        r.rel_l2
    ))
}

/// Runs the study; the returned flag is the verdict.
pub fn gradcheck(cfg: &RunConfig, out: &Path) -> Result<(String, bool)> {
    let (_, obs) = load_truth(cfg, out)?;
    let vae = load_vae(out)?;
    let surrogates = cfg
        .n_train
        .iter()
        .map(|&n| Ok((n, load_surrogate(out, n)?)))
        .collect::<Result<Vec<_>>>()?;
    let g = pipeline::gradcheck(cfg, &vae, &surrogates, &obs)?;
    let dir = out.join("gradcheck");
    prepare(&dir, cfg)?;
    fs::write(dir.join("agreement.csv"), g.report.to_csv())?;
    let verdict = g.verdict_text();
    fs::write(dir.join("verdict.txt"), &verdict)?;
    Ok((format!("{}{verdict}", g.report.to_csv()), g.passed()))
}

/// Collects every `infer/<method>/report.csv` row.
pub fn report(cfg: &RunConfig, out: &Path) -> Result<String> {
    let mut rows = Vec::new();
    for m in Method::ALL {
        let p = out.join("infer").join(m.as_str()).join("report.csv");
        if !p.is_file() {
            continue;
        }
        let text = fs::read_to_string(&p)?;
        let mut lines = text.lines();
        if lines.next() != Some(Inference::report_header()) {
            return Err(Error::Parse {
                location: p.display().to_string(),
                message: "unexpected report header".into(),
            });
        }
        rows.extend(lines.map(str::to_string));
    }
    if rows.is_empty() {
        return Err(missing("inference reports", &out.join("infer"), "infer"));
    }
    let dir = out.join("report");
    prepare(&dir, cfg)?;
    let text = format!("{}\n{}\n", Inference::report_header(), rows.join("\n"));
    fs::write(dir.join("report.csv"), &text)?;
    Ok(text)
}

/// Writes a field file as a graymap; `plain` selects the ASCII variant.
pub fn render(field: &Path, image: &Path, plain: bool) -> Result<String> {
    let f = read_field(field)?;
    if plain {
        fs::write(image, pgm::to_plain_pgm(&f))?;
    } else {
        fs::write(image, pgm::to_pgm(&f))?;
    }
    let (lo, hi) = f.min_max();
    Ok(format!(
        "rendered {}x{} field (min {lo:.4}, max {hi:.4}) to {}",
        f.grid().nx(),
        f.grid().ny(),
        image.display()
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn flags_and_overrides() {
        let mut inv = Invocation::default();
        inv.absorb(&args("--vi-iters 7 --seed 3 --method=mcmc-nn --out d")).unwrap();
        assert_eq!(inv.seed, Some(3));
        assert_eq!(inv.out.as_deref(), Some(Path::new("d")));
        assert_eq!(
            inv.overrides,
            vec![("vi_iters".into(), "7".into()), ("method".into(), "mcmc-nn".into())]
        );
        let c = inv.resolve().unwrap();
        assert_eq!((c.seed, c.vi.n_opt, c.method), (3, 7, Method::McmcNn));
        assert!(Invocation::default().absorb(&args("--vi-iters")).is_err());
        assert!(Invocation::default().absorb(&args("stray")).is_err());
        let mut bad = Invocation::default();
        bad.absorb(&args("--no-such-key 1")).unwrap();
        assert!(bad.resolve().is_err());
    }

    #[test]
    fn observations_round_trip() {
        let cfg = RunConfig::parse("nx=4\nny=4\nlatent_dim=3\nobs_per_side=2\n").unwrap();
        let obs = ObservationSet {
            clean: vec![0.1, 0.2, 0.3, 0.4],
            noisy: vec![0.11, 0.19, 0.3, 0.41],
            sigma: vec![0.005, 0.01, 0.015, 0.02],
            noise_level: 0.05,
        };
        let text = observations_csv(&cfg, &obs);
        assert_eq!(parse_observations(&cfg, &text, 0.05).unwrap(), obs);
        let other = RunConfig::parse("nx=4\nny=4\nlatent_dim=3\nobs_per_side=3\n").unwrap();
        assert!(parse_observations(&other, &text, 0.05).is_err());
        assert!(parse_observations(&cfg, "x,y\n", 0.05).is_err());
    }
}
