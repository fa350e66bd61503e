//! Variational autoencoder prior over flattened fields.
//!
//! Encoder: `Linear(M,h)-ReLU-Linear(h,h)-ReLU`, then two heads
//! `Linear(h,h)-ReLU-Linear(h,h)` giving `μ` and `log σ²`.
//! Decoder: `Linear(h,H)-act-Linear(H,H)-act-Linear(H,H)-act-Linear(H,M)`,
//! with an optional final sigmoid for fields normalized to `[0, 1]`.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{self, Adam, BlockVars, EngineError, Optimizer, ParamVector, Tape, Tensor, Var};
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::grid::{FieldDataset, Grid2D, ScalarField};
use crate::nn::{self, Activation, Mlp};
use crate::prior::Normalization;

type EResult<T> = std::result::Result<T, EngineError>;

pub const META_TAG: &str = "vaeconfig";

#[derive(Debug, Clone, PartialEq)]
pub struct VaeConfig {
    pub nx: usize,
    pub ny: usize,
    pub latent_dim: usize,
    /// Width `H` of the three decoder hidden layers.
    pub decoder_hidden: usize,
    pub activation: Activation,
    pub output_sigmoid: bool,
    /// Monte Carlo draws per field in the reconstruction term.
    pub mc_samples: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub normalization: Normalization,
}

impl VaeConfig {
    /// GRF prior with decoder width equal to the number of cells.
    pub fn grf(nx: usize, ny: usize, latent_dim: usize) -> Self {
        Self {
            nx,
            ny,
            latent_dim,
            decoder_hidden: nx * ny,
            activation: Activation::Relu,
            output_sigmoid: false,
            mc_samples: 1,
            epochs: 300,
            batch_size: 64,
            learning_rate: 1e-4,
            normalization: Normalization::None,
        }
    }

    /// Channel prior: sigmoid hidden and output layers on `[0, 1]` data.
    pub fn channel(nx: usize, ny: usize, latent_dim: usize, normalization: Normalization) -> Self {
        Self {
            activation: Activation::Sigmoid,
            output_sigmoid: true,
            normalization,
            ..Self::grf(nx, ny, latent_dim)
        }
    }

    pub fn input_dim(&self) -> usize {
        self.nx * self.ny
    }

    pub fn grid(&self) -> Result<Grid2D> {
        Grid2D::new(self.nx, self.ny)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.input_dim();
        if self.latent_dim == 0 || self.latent_dim >= m {
            return Err(Error::Config(format!("latent_dim must lie in 1..{m}, got {}", self.latent_dim)));
        }
        if self.decoder_hidden == 0 || self.mc_samples == 0 || self.batch_size == 0 {
            return Err(Error::Config("widths, mc_samples and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }

    pub fn to_meta(&self) -> Vec<(String, String)> {
        let mut kv = KeyValues::new();
        kv.set("nx", self.nx.to_string());
        kv.set("ny", self.ny.to_string());
        kv.set("latent_dim", self.latent_dim.to_string());
        kv.set("decoder_hidden", self.decoder_hidden.to_string());
        kv.set("activation", self.activation.as_str());
        kv.set("output_sigmoid", self.output_sigmoid.to_string());
        kv.set("mc_samples", self.mc_samples.to_string());
        kv.set("epochs", self.epochs.to_string());
        kv.set("batch_size", self.batch_size.to_string());
        kv.set("learning_rate", format!("{:?}", self.learning_rate));
        kv.set("normalization", self.normalization.to_meta());
        kv.into_pairs()
    }

    pub fn from_meta(pairs: &[(String, String)]) -> Result<Self> {
        let kv = KeyValues::from_pairs(pairs.to_vec());
        let cfg = Self {
            nx: kv.require("nx")?,
            ny: kv.require("ny")?,
            latent_dim: kv.require("latent_dim")?,
            decoder_hidden: kv.require("decoder_hidden")?,
            activation: Activation::parse(kv.get("activation").unwrap_or("relu"))?,
            output_sigmoid: kv.require("output_sigmoid")?,
            mc_samples: kv.get_or("mc_samples", 1)?,
            epochs: kv.get_or("epochs", 0)?,
            batch_size: kv.get_or("batch_size", 64)?,
            learning_rate: kv.get_or("learning_rate", 1e-4)?,
            normalization: Normalization::from_meta(kv.get("normalization").unwrap_or("none"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn nets(&self) -> Nets {
        let (m, h, hh) = (self.input_dim(), self.latent_dim, self.decoder_hidden);
        let out = if self.output_sigmoid {
            Activation::Sigmoid
        } else {
            Activation::Identity
        };
        Nets {
            trunk: Mlp::new("enc", vec![m, h, h], Activation::Relu, Activation::Relu),
            mu: Mlp::new("mu", vec![h, h, h], Activation::Relu, Activation::Identity),
            logvar: Mlp::new("logvar", vec![h, h, h], Activation::Relu, Activation::Identity),
            decoder: Mlp::new("dec", vec![h, hh, hh, hh, m], self.activation, out),
        }
    }
}

#[derive(Debug, Clone)]
struct Nets {
    trunk: Mlp,
    mu: Mlp,
    logvar: Mlp,
    decoder: Mlp,
}

impl Nets {
    fn encode(&self, t: &mut Tape, v: &BlockVars, x: Var) -> EResult<(Var, Var)> {
        let h = self.trunk.forward(t, v, x)?;
        Ok((self.mu.forward(t, v, h)?, self.logvar.forward(t, v, h)?))
    }

    /// Batch-mean ELBO; `eps` holds one `(n, h)` draw per MC sample.
    fn elbo(&self, t: &mut Tape, v: &BlockVars, x: &Tensor, eps: &[Tensor]) -> EResult<Var> {
        let n = x.nrows() as f64;
        let xv = t.constant(x.clone())?;
        let (mu, lv) = self.encode(t, v, xv)?;
        let half = t.scale(lv, 0.5)?;
        let sigma = t.exp(half)?;
        let mut rec = None;
        for e in eps {
            let ev = t.constant(e.clone())?;
            let se = t.mul(sigma, ev)?;
            let z = t.add(mu, se)?;
            let g = self.decoder.forward(t, v, z)?;
            let d = t.sub(xv, g)?;
            let d = t.square(d)?;
            let s = t.sum(d)?;
            rec = Some(match rec {
                None => s,
                Some(r) => t.add(r, s)?,
            });
        }
        let rec = rec.ok_or(EngineError::Params("at least one MC draw is required".into()))?;
        let rec = t.scale(rec, -0.5 / (n * eps.len() as f64))?;
        let kl = kl_on_tape(t, mu, lv)?;
        let kl = t.scale(kl, 1.0 / n)?;
        t.sub(rec, kl)
    }
}

/// `½ Σ (μ² + exp(lv) − 1 − lv)` summed over all entries.
fn kl_on_tape(t: &mut Tape, mu: Var, lv: Var) -> EResult<Var> {
    let m2 = t.square(mu)?;
    let s2 = t.exp(lv)?;
    let a = t.add(m2, s2)?;
    let a = t.sub(a, lv)?;
    let a = t.offset(a, -1.0)?;
    let s = t.sum(a)?;
    t.scale(s, 0.5)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    pub config: VaeConfig,
    pub params: ParamVector,
}

fn row_tensor(values: &[f64]) -> Tensor {
    Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape")
}

fn check_len(got: usize, expected: usize) -> Result<()> {
    if got == expected {
        Ok(())
    } else {
        Err(Error::Shape { expected, got })
    }
}

impl VaeModel {
    /// All-zero parameters.
    pub fn zeros(config: VaeConfig) -> Result<Self> {
        config.validate()?;
        let n = config.nets();
        let params = nn::layout(&[&n.trunk, &n.mu, &n.logvar, &n.decoder]);
        Ok(Self { config, params })
    }

    pub fn init<R: Rng + ?Sized>(config: VaeConfig, rng: &mut R) -> Result<Self> {
        let mut m = Self::zeros(config)?;
        let n = m.config.nets();
        for net in [&n.trunk, &n.mu, &n.logvar, &n.decoder] {
            net.init_uniform(&mut m.params, rng);
        }
        Ok(m)
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// `(μ, log σ²)` for one normalized field.
    pub fn encode(&self, k: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len(k.len(), self.config.input_dim())?;
        let nets = self.config.nets();
        let mut t = Tape::new();
        let v = autodiff::load_params(&mut t, &self.params, false)?;
        let x = t.row(k)?;
        let (mu, lv) = nets.encode(&mut t, &v, x)?;
        Ok((t.value(mu).iter().copied().collect(), t.value(lv).iter().copied().collect()))
    }

    /// Decoder output in normalized units.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len(z.len(), self.config.latent_dim)?;
        Ok(self.decoder().decode_normalized(&row_tensor(z))?.iter().copied().collect())
    }

    /// `k = G(z)` in physical units.
    pub fn generate(&self, z: &[f64]) -> Result<ScalarField> {
        let norm = self.config.normalization;
        let u = self.decode(z)?;
        ScalarField::new(self.config.grid()?, u.into_iter().map(|v| norm.denormalize(v)).collect())
    }

    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ScalarField> {
        let z: Vec<f64> = (0..self.config.latent_dim).map(|_| rng.sample(StandardNormal)).collect();
        self.generate(&z)
    }

    /// ELBO of one normalized field with the given `(L, h)` noise draws.
    pub fn elbo(&self, k: &[f64], eps: &[Vec<f64>]) -> Result<f64> {
        check_len(k.len(), self.config.input_dim())?;
        let prog = self.elbo_program(row_tensor(k), eps.iter().map(|e| row_tensor(e)).collect());
        Ok(autodiff::value_of(&prog, &self.params)?)
    }

    /// Batch-mean ELBO as a differentiable program of the model parameters.
    pub fn elbo_program(&self, batch: Tensor, eps: Vec<Tensor>) -> ElboProgram {
        ElboProgram {
            nets: self.config.nets(),
            batch,
            eps,
        }
    }

    pub fn decoder(&self) -> VaeDecoder {
        let net = self.config.nets().decoder;
        let mut params = nn::layout(&[&net]);
        nn::extract(&self.params, &mut params).expect("decoder blocks present");
        VaeDecoder {
            net,
            params,
            normalization: self.config.normalization,
            grid: self.config.grid().expect("validated grid"),
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
        let config = VaeConfig::from_meta(&pairs)?;
        let expected = Self::zeros(config.clone())?;
        if expected.params.blocks() != params.blocks() {
            return Err(Error::parse("model file", "parameter layout does not match vaeconfig"));
        }
        Ok(Self { config, params })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

pub struct ElboProgram {
    nets: Nets,
    batch: Tensor,
    eps: Vec<Tensor>,
}

impl autodiff::DiffProgram for ElboProgram {
    fn forward(&self, tape: &mut Tape, params: &BlockVars) -> EResult<Var> {
        self.nets.elbo(tape, params, &self.batch, &self.eps)
    }
}

/// The trained generator `G`, detached from the encoder.
#[derive(Debug, Clone)]
pub struct VaeDecoder {
    net: Mlp,
    params: ParamVector,
    normalization: Normalization,
    grid: Grid2D,
}

impl VaeDecoder {
    pub fn latent_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    /// Rows of `z` to rows of normalized output.
    pub fn decode_normalized(&self, z: &Tensor) -> EResult<Tensor> {
        let mut t = Tape::new();
        let v = autodiff::load_params(&mut t, &self.params, false)?;
        let x = t.constant(z.clone())?;
        let y = self.net.forward(&mut t, &v, x)?;
        Ok(t.value(y).clone())
    }

    /// Physical-unit fields for each row of `z`.
    pub fn decode_rows(&self, z: &Tensor) -> EResult<Tensor> {
        let norm = self.normalization;
        Ok(self.decode_normalized(z)?.mapv(|u| norm.denormalize(u)))
    }

    /// `k = G(z)` and `J_Gᵀ w` for every row pair of `z` and `w`.
    pub fn decode_and_vjp(&self, z: &Tensor, w: impl FnOnce(&Tensor) -> Result<Tensor>) -> Result<(Tensor, Tensor)> {
        let norm = self.normalization;
        let mut t = Tape::new();
        let v = autodiff::load_params(&mut t, &self.params, false)?;
        let x = t.leaf(z.clone())?;
        let y = self.net.forward(&mut t, &v, x)?;
        let k = t.value(y).mapv(|u| norm.denormalize(u));
        let cot = w(&k)? * norm.scale();
        let grads = t.backward_with(y, cot)?;
        let g = grads.get_or_zeros(x, z.dim());
        Ok((k, g))
    }
}

/// `z = μ + exp(½ lv) ⊙ ε`.
pub fn reparameterize(mu: &[f64], logvar: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    check_len(logvar.len(), mu.len())?;
    check_len(eps.len(), mu.len())?;
    Ok(mu
        .iter()
        .zip(logvar)
        .zip(eps)
        .map(|((m, l), e)| m + (0.5 * l).exp() * e)
        .collect())
}

/// `KL(N(μ, diag σ²) ‖ N(0, I)) = ½ Σ (μ² + σ² − 1 − log σ²)`.
pub fn kl_diag_gaussian(mu: &[f64], logvar: &[f64]) -> Result<f64> {
    check_len(logvar.len(), mu.len())?;
    Ok(0.5
        * mu
            .iter()
            .zip(logvar)
            .map(|(m, l)| m * m + l.exp() - 1.0 - l)
            .sum::<f64>())
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeTrace {
    /// Mean minibatch ELBO per epoch.
    pub epoch_elbo: Vec<f64>,
}

fn engine_to_training(e: EngineError, epoch: usize, batch: usize) -> Error {
    Error::Training {
        epoch,
        batch,
        reason: e.to_string(),
    }
}

/// Adam ascent on the minibatch ELBO.
pub fn train_vae<R: Rng + ?Sized>(data: &FieldDataset, config: &VaeConfig, rng: &mut R) -> Result<(VaeModel, VaeTrace)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if data.grid != config.grid()? {
        return Err(Error::Config(format!(
            "dataset grid {}x{} differs from config {}x{}",
            data.grid.nx(),
            data.grid.ny(),
            config.nx,
            config.ny
        )));
    }
    let norm = config.normalization;
    let m = config.input_dim();
    let rows: Vec<Vec<f64>> = data
        .fields
        .iter()
        .map(|f| f.values().iter().map(|&v| norm.normalize(v)).collect())
        .collect();
    let mut model = VaeModel::init(config.clone(), rng)?;
    let mut opt = Adam::new(config.learning_rate);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    let h = config.latent_dim;
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = Array2::from_shape_fn((chunk.len(), m), |(r, c)| rows[chunk[r]][c]);
            let eps: Vec<Tensor> = (0..config.mc_samples)
                .map(|_| Array2::from_shape_simple_fn((chunk.len(), h), || rng.sample(StandardNormal)))
                .collect();
            let prog = model.elbo_program(batch, eps);
            let (value, grad) =
                autodiff::value_and_grad(&prog, &model.params).map_err(|e| engine_to_training(e, epoch, bi))?;
            if !value.is_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: bi,
                    reason: "non-finite ELBO".into(),
                });
            }
            opt.ascend(model.params.values_mut(), grad.values());
            total += value * chunk.len() as f64;
        }
        trace.push(total / rows.len() as f64);
    }
    Ok((model, VaeTrace { epoch_elbo: trace }))
}
