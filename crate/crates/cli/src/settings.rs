//! Run configuration: `key=value` settings checked against a fixed schema.
//! Defaults are the 32×32 desk setup; unknown keys are errors.

use std::path::Path;

use vidgp::config::KeyValues;
use vidgp::darcy::DarcySolver;
use vidgp::grid::{Grid2D, ObservationPlan};
use vidgp::nn::Activation;
use vidgp::pcn::PcnConfig;
use vidgp::prior::{ChannelSpec, GrfDatasetSpec, Normalization};
use vidgp::surrogate::{ResidualForm, Schedule, SurrogateConfig};
use vidgp::vae::VaeConfig;
use vidgp::vi::{EntropyMode, ViConfig, ViOptimizer};
use vidgp::{Error, Result};

/// Every accepted key with its default, in snapshot order.
pub const SCHEMA: &[(&str, &str)] = &[
    ("seed", "0"),
    ("prior", "grf"),
    ("nx", "32"),
    ("ny", "32"),
    ("obs_per_side", "8"),
    ("noise_level", "0.05"),
    ("f_const", "3"),
    // GRF corpus
    ("sigma_k2", "0.5"),
    ("n_lengths", "8"),
    ("n_per_length", "512"),
    ("length_range", "0.1,0.4"),
    ("truth_lengths", "0.25,0.25"),
    // channel corpus
    ("n_channel_fields", "4096"),
    ("n_channels", "2"),
    ("k_low", "0"),
    ("k_high", "4"),
    // generative prior
    ("latent_dim", "64"),
    ("vae_hidden", "512"),
    ("vae_epochs", "60"),
    ("vae_batch", "64"),
    ("vae_lr", "0.001"),
    ("vae_mc", "1"),
    ("vae_scale", "0.2"),
    // surrogate
    ("n_train", "1024"),
    ("sur_hidden", "128,128,128"),
    ("sur_activation", "relu"),
    ("sur_residual", "pressure"),
    ("sur_gamma", "10"),
    ("sur_epochs", "120"),
    ("sur_batch", "8"),
    ("sur_schedule", "onecycle 0.002"),
    // inference
    ("method", "vi-nn"),
    ("vi_iters", "5000"),
    ("vi_ms", "1"),
    ("vi_lr_mu", "0.01"),
    ("vi_lr_logvar", "0.01"),
    ("vi_optimizer", "adam"),
    ("vi_entropy", "closed-form"),
    ("vi_clip", "none"),
    ("n_post_samples", "2000"),
    ("pcn_beta", "0.15"),
    ("pcn_iters", "50000"),
    ("pcn_burn", "40000"),
    ("pcn_thin", "1"),
    // gradient agreement
    ("gc_pairs", "1000"),
    ("gc_min_cos", "0.7"),
    ("record_timing", "true"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    ViNn,
    ViAdjoint,
    McmcNn,
    McmcFemAnalog,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::ViNn, Method::ViAdjoint, Method::McmcNn, Method::McmcFemAnalog];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::ViNn => "vi-nn",
            Method::ViAdjoint => "vi-adjoint",
            Method::McmcNn => "mcmc-nn",
            Method::McmcFemAnalog => "mcmc-fem-analog",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }

    pub fn uses_surrogate(&self) -> bool {
        matches!(self, Method::ViNn | Method::McmcNn)
    }

    pub fn is_mcmc(&self) -> bool {
        matches!(self, Method::McmcNn | Method::McmcFemAnalog)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorKind {
    Grf,
    Channel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub prior: PriorKind,
    pub grid: Grid2D,
    pub obs_per_side: usize,
    pub noise_level: f64,
    pub f_const: f64,
    pub grf: GrfDatasetSpec,
    pub truth_lengths: (f64, f64),
    pub n_channel_fields: usize,
    pub channel: ChannelSpec,
    /// GRF fields are divided by this before VAE training.
    pub vae_scale: f64,
    pub vae: VaeConfig,
    /// One surrogate is trained per size; inference uses the largest.
    pub n_train: Vec<usize>,
    pub surrogate: SurrogateConfig,
    pub method: Method,
    pub vi: ViConfig,
    pub pcn: PcnConfig,
    pub gc_pairs: usize,
    pub gc_min_cos: f64,
    pub record_timing: bool,
    values: KeyValues,
}

fn pair(kv: &KeyValues, key: &str) -> Result<(f64, f64)> {
    match kv.list::<f64>(key)?.as_deref() {
        Some([a, b]) => Ok((*a, *b)),
        _ => Err(Error::Config(format!("`{key}` needs two comma-separated numbers"))),
    }
}

fn flag(kv: &KeyValues, key: &str) -> Result<bool> {
    match kv.get(key) {
        Some("true") => Ok(true),
        Some("false") => Ok(false),
        v => Err(Error::Config(format!("`{key}` must be true or false, got {v:?}"))),
    }
}

impl RunConfig {
    /// Defaults overlaid with `kv`.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let allowed: Vec<&str> = SCHEMA.iter().map(|(k, _)| *k).collect();
        kv.check_keys(&allowed)?;
        let mut v = KeyValues::new();
        for (k, d) in SCHEMA {
            v.set(k, kv.get(k).unwrap_or(d));
        }
        let nx: usize = v.require("nx")?;
        let ny: usize = v.require("ny")?;
        let grid = Grid2D::new(nx, ny)?;
        let prior = match v.get("prior") {
            Some("grf") => PriorKind::Grf,
            Some("channel") => PriorKind::Channel,
            p => return Err(Error::Config(format!("unknown prior {p:?}"))),
        };
        let channel = ChannelSpec {
            n_channels: v.require("n_channels")?,
            k_low: v.require("k_low")?,
            k_high: v.require("k_high")?,
            ..ChannelSpec::default()
        };
        let vae_scale: f64 = v.require("vae_scale")?;
        if !(vae_scale > 0.0) {
            return Err(Error::Config("vae_scale must be positive".into()));
        }
        let latent: usize = v.require("latent_dim")?;
        let base = match prior {
            PriorKind::Grf => VaeConfig::grf(nx, ny, latent),
            PriorKind::Channel => VaeConfig::channel(nx, ny, latent, channel.normalization()),
        };
        let vae = VaeConfig {
            decoder_hidden: v.require("vae_hidden")?,
            epochs: v.require("vae_epochs")?,
            batch_size: v.require("vae_batch")?,
            learning_rate: v.require("vae_lr")?,
            mc_samples: v.require("vae_mc")?,
            normalization: match prior {
                PriorKind::Grf if vae_scale == 1.0 => Normalization::None,
                PriorKind::Grf => Normalization::Affine {
                    low: 0.0,
                    high: vae_scale,
                },
                PriorKind::Channel => channel.normalization(),
            },
            ..base
        };
        vae.validate()?;
        let f_const: f64 = v.require("f_const")?;
        let surrogate = SurrogateConfig {
            hidden: v.list("sur_hidden")?.unwrap_or_default(),
            activation: Activation::parse(v.get("sur_activation").unwrap_or_default())?,
            form: ResidualForm::parse(v.get("sur_residual").unwrap_or_default())?,
            gamma: v.require("sur_gamma")?,
            epochs: v.require("sur_epochs")?,
            batch_size: v.require("sur_batch")?,
            schedule: Schedule::parse(v.get("sur_schedule").unwrap_or_default())?,
            f_const,
            ..SurrogateConfig::new(nx, ny)
        };
        surrogate.validate()?;
        let n_train: Vec<usize> = v.list("n_train")?.unwrap_or_default();
        if n_train.is_empty() || n_train.contains(&0) {
            return Err(Error::Config("n_train needs at least one positive size".into()));
        }
        let vi = ViConfig {
            n_opt: v.require("vi_iters")?,
            m_s: v.require("vi_ms")?,
            lr_mu: v.require("vi_lr_mu")?,
            lr_logvar: v.require("vi_lr_logvar")?,
            entropy: EntropyMode::parse(v.get("vi_entropy").unwrap_or_default())?,
            n_samples: v.require("n_post_samples")?,
            optimizer: match v.get("vi_optimizer") {
                Some("sgd") => ViOptimizer::Sgd,
                Some("adam") => ViOptimizer::Adam,
                o => return Err(Error::Config(format!("unknown optimizer {o:?}"))),
            },
            clip_norm: match v.get("vi_clip") {
                Some("none") => None,
                _ => Some(v.require("vi_clip")?),
            },
        };
        vi.validate()?;
        let pcn = PcnConfig {
            beta: v.require("pcn_beta")?,
            n_ite: v.require("pcn_iters")?,
            n_burn: v.require("pcn_burn")?,
            thin: v.require("pcn_thin")?,
        };
        pcn.validate()?;
        let cfg = Self {
            seed: v.require("seed")?,
            prior,
            grid,
            obs_per_side: v.require("obs_per_side")?,
            noise_level: v.require("noise_level")?,
            f_const,
            grf: GrfDatasetSpec {
                variance: v.require("sigma_k2")?,
                n_lengths: v.require("n_lengths")?,
                n_per_length: v.require("n_per_length")?,
                length_range: pair(&v, "length_range")?,
                ..GrfDatasetSpec::default()
            },
            truth_lengths: pair(&v, "truth_lengths")?,
            n_channel_fields: v.require("n_channel_fields")?,
            channel,
            vae_scale,
            vae,
            n_train,
            surrogate,
            method: Method::parse(v.get("method").unwrap_or_default())?,
            vi,
            pcn,
            gc_pairs: v.require("gc_pairs")?,
            gc_min_cos: v.require("gc_min_cos")?,
            record_timing: flag(&v, "record_timing")?,
            values: v,
        };
        if cfg.obs_per_side == 0 || !(cfg.noise_level >= 0.0) || cfg.gc_pairs == 0 {
            return Err(Error::Config("obs_per_side and gc_pairs must be positive, noise_level >= 0".into()));
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(&KeyValues::parse(text)?)
    }

    /// The config file at `path` (defaults when `None`) with `overrides`
    /// applied on top.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut kv = match path {
            Some(p) => KeyValues::parse(&std::fs::read_to_string(p)?)?,
            None => KeyValues::new(),
        };
        for (k, v) in overrides {
            kv.set(k, v.clone());
        }
        Self::from_kv(&kv)
    }

    /// A copy with some keys replaced.
    pub fn with(&self, overrides: &[(&str, String)]) -> Result<Self> {
        let mut kv = self.values.clone();
        for (k, v) in overrides {
            kv.set(k, v.clone());
        }
        Self::from_kv(&kv)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key)
    }

    /// Every resolved key, in schema order.
    pub fn snapshot(&self) -> String {
        format!("# resolved configuration\n{}", self.values.to_text())
    }

    pub fn plan(&self) -> ObservationPlan {
        ObservationPlan::uniform(self.obs_per_side)
    }

    pub fn solver(&self) -> DarcySolver {
        DarcySolver::new(self.f_const)
    }

    pub fn largest_n_train(&self) -> usize {
        *self.n_train.iter().max().expect("validated nonempty")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_snapshot_round_trips() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c.grid, Grid2D::square(32).unwrap());
        assert_eq!(c.method, Method::ViNn);
        assert_eq!(c.vae.normalization, Normalization::Affine { low: 0.0, high: 0.2 });
        let back = RunConfig::parse(&c.snapshot()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.snapshot().lines().count(), SCHEMA.len() + 1);
    }

    #[test]
    fn unknown_and_bad_keys_are_rejected() {
        assert!(RunConfig::parse("nxx=3\n").is_err());
        assert!(RunConfig::parse("method=hmc\n").is_err());
        assert!(RunConfig::parse("record_timing=yes\n").is_err());
        assert!(RunConfig::parse("truth_lengths=0.2\n").is_err());
        assert!(RunConfig::parse("n_train=\n").is_err());
    }

    #[test]
    fn overrides_win_over_file_values() {
        let c = RunConfig::parse("noise_level=0.07\n").unwrap();
        let d = c.with(&[("noise_level", "0.1".into()), ("vi_clip", "5".into())]).unwrap();
        assert_eq!(d.noise_level, 0.1);
        assert_eq!(d.vi.clip_norm, Some(5.0));
        assert_eq!(c.noise_level, 0.07);
    }

    #[test]
    fn method_names() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.as_str()).unwrap(), m);
        }
        assert!(Method::McmcFemAnalog.is_mcmc() && !Method::McmcFemAnalog.uses_surrogate());
    }
}
