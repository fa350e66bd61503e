//! Training corpora for the generative prior: Gaussian random fields with an
//! L2-norm exponential covariance and uncertain correlation lengths, and
//! synthetic binary channelized media.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{FieldDataset, Grid2D, ScalarField};
use crate::rng::{self, standard_normal_vec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrfSpec {
    pub mean: f64,
    pub variance: f64,
    pub l1: f64,
    pub l2: f64,
    /// Diagonal boost added before factorization (absolute).
    pub jitter: f64,
}

impl GrfSpec {
    pub fn new(variance: f64, l1: f64, l2: f64) -> Self {
        Self {
            mean: 0.0,
            variance,
            l1,
            l2,
            jitter: 1e-10 * variance,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.variance > 0.0 && self.l1 > 0.0 && self.l2 > 0.0 && self.jitter >= 0.0) {
            return Err(Error::Config(format!("invalid GRF spec {self:?}")));
        }
        Ok(())
    }
}

impl Default for GrfSpec {
    fn default() -> Self {
        Self::new(0.5, 0.2, 0.2)
    }
}

/// `σ² exp(−√((Δx1/l1)² + (Δx2/l2)²))`.
pub fn exp_cov(x: (f64, f64), y: (f64, f64), spec: &GrfSpec) -> f64 {
    let a = (x.0 - y.0) / spec.l1;
    let b = (x.1 - y.1) / spec.l2;
    spec.variance * (-(a * a + b * b).sqrt()).exp()
}

/// Exact sampler for one covariance: the Cholesky factor over all cell
/// centres, built once and reused for every draw.
#[derive(Debug, Clone)]
pub struct GrfSampler {
    grid: Grid2D,
    spec: GrfSpec,
    factor: DMatrix<f64>,
}

impl GrfSampler {
    pub fn new(grid: Grid2D, spec: GrfSpec) -> Result<Self> {
        spec.validate()?;
        let centers: Vec<(f64, f64)> = grid.centers().collect();
        let n = centers.len();
        let cov = DMatrix::from_fn(n, n, |r, c| exp_cov(centers[r], centers[c], &spec));
        let mut jitter = spec.jitter;
        for attempt in 0..=3 {
            let mut m = cov.clone();
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            if let Some(ch) = m.cholesky() {
                return Ok(Self {
                    grid,
                    spec: GrfSpec { jitter, ..spec },
                    factor: ch.unpack(),
                });
            }
            if attempt == 3 {
                break;
            }
            jitter = if jitter > 0.0 { jitter * 10.0 } else { 1e-12 * spec.variance };
        }
        Err(Error::Numerical(format!(
            "covariance factorization failed after jitter escalation to {jitter:e}"
        )))
    }

    pub fn spec(&self) -> &GrfSpec {
        &self.spec
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ScalarField {
        let xi = DVector::from_vec(standard_normal_vec(rng, self.grid.len()));
        let v = &self.factor * xi;
        let values = v.iter().map(|x| self.spec.mean + x).collect();
        ScalarField::new(self.grid, values).expect("finite GRF sample")
    }
}

pub fn sample_grf<R: Rng + ?Sized>(grid: Grid2D, spec: &GrfSpec, rng: &mut R) -> Result<ScalarField> {
    Ok(GrfSampler::new(grid, *spec)?.sample(rng))
}

/// Corpus settings for GRFs with per-group correlation lengths drawn from
/// `U[length_range]²`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrfDatasetSpec {
    pub mean: f64,
    pub variance: f64,
    pub n_lengths: usize,
    pub n_per_length: usize,
    pub length_range: (f64, f64),
}

impl Default for GrfDatasetSpec {
    fn default() -> Self {
        Self {
            mean: 0.0,
            variance: 0.5,
            n_lengths: 10,
            n_per_length: 100,
            length_range: (0.1, 0.4),
        }
    }
}

pub fn sample_grf_dataset<R: Rng + ?Sized>(
    grid: Grid2D,
    spec: &GrfDatasetSpec,
    rng: &mut R,
) -> Result<FieldDataset> {
    let (lo, hi) = spec.length_range;
    if !(lo > 0.0 && lo <= hi && hi < 1.0) {
        return Err(Error::Config(format!("length range must lie in (0, 1), got [{lo}, {hi}]")));
    }
    let pairs: Vec<(f64, f64)> = (0..spec.n_lengths)
        .map(|_| (rng.random_range(lo..=hi), rng.random_range(lo..=hi)))
        .collect();
    let base = rng::fork(rng);
    let mut fields = Vec::with_capacity(spec.n_lengths * spec.n_per_length);
    for (g, &(l1, l2)) in pairs.iter().enumerate() {
        let gs = GrfSpec {
            mean: spec.mean,
            ..GrfSpec::new(spec.variance, l1, l2)
        };
        let sampler = GrfSampler::new(grid, gs)?;
        let group = rng::par_map(spec.n_per_length, |i| {
            let idx = g * spec.n_per_length + i;
            sampler.sample(&mut rng::derive(base, idx as u64))
        });
        fields.extend(group);
    }
    let length_pairs = pairs
        .iter()
        .map(|(a, b)| format!("{a:?}:{b:?}"))
        .collect::<Vec<_>>()
        .join(",");
    let metadata = vec![
        ("generator".to_string(), "grf".to_string()),
        ("mean".to_string(), format!("{:?}", spec.mean)),
        ("sigma_k2".to_string(), format!("{:?}", spec.variance)),
        ("length_pairs".to_string(), length_pairs),
        ("normalization".to_string(), "none".to_string()),
    ];
    FieldDataset::new(grid, fields, metadata)
}

/// Parses the `length_pairs` metadata value back into `(l1, l2)` pairs.
pub fn parse_length_pairs(s: &str) -> Result<Vec<(f64, f64)>> {
    s.split(',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            let (a, b) = t
                .split_once(':')
                .ok_or_else(|| Error::parse("length_pairs", format!("bad pair `{t}`")))?;
            let pa = a.parse().map_err(|_| Error::parse("length_pairs", format!("bad value `{a}`")))?;
            let pb = b.parse().map_err(|_| Error::parse("length_pairs", format!("bad value `{b}`")))?;
            Ok((pa, pb))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSpec {
    pub n_channels: usize,
    /// Band width as a fraction of the domain height.
    pub width_range: (f64, f64),
    pub amplitude_range: (f64, f64),
    pub wavelength_range: (f64, f64),
    pub k_low: f64,
    pub k_high: f64,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        Self {
            n_channels: 2,
            width_range: (0.12, 0.2),
            amplitude_range: (0.05, 0.2),
            wavelength_range: (0.5, 1.5),
            k_low: 0.0,
            k_high: 4.0,
        }
    }
}

impl ChannelSpec {
    fn validate(&self) -> Result<()> {
        let (w0, w1) = self.width_range;
        let ok = w0 > 0.0
            && w0 <= w1
            && w1 < 1.0
            && self.amplitude_range.0 >= 0.0
            && self.amplitude_range.0 <= self.amplitude_range.1
            && self.wavelength_range.0 > 0.0
            && self.wavelength_range.0 <= self.wavelength_range.1
            && self.k_low < self.k_high;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid channel spec {self:?}")))
        }
    }

    /// Affine map of `[k_low, k_high]` onto `[0, 1]`.
    pub fn normalization(&self) -> Normalization {
        Normalization::Affine {
            low: self.k_low,
            high: self.k_high,
        }
    }
}

/// Sinusoidal bands along `x1`; cells whose centre lies within half a band
/// width of any centreline get `k_high`, all others `k_low`.
pub fn sample_channel<R: Rng + ?Sized>(grid: Grid2D, spec: &ChannelSpec, rng: &mut R) -> Result<ScalarField> {
    spec.validate()?;
    let pick = |rng: &mut R, (a, b): (f64, f64)| if a == b { a } else { rng.random_range(a..b) };
    let bands: Vec<[f64; 5]> = (0..spec.n_channels)
        .map(|_| {
            let center = rng.random_range(0.0..1.0);
            let amp = pick(rng, spec.amplitude_range);
            let wavelength = pick(rng, spec.wavelength_range);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let width = pick(rng, spec.width_range);
            [center, amp, wavelength, phase, width]
        })
        .collect();
    let values = grid
        .centers()
        .map(|(x1, x2)| {
            let inside = bands.iter().any(|&[c, a, l, ph, w]| {
                let line = c + a * (std::f64::consts::TAU * x1 / l + ph).sin();
                (x2 - line).abs() < 0.5 * w
            });
            if inside {
                spec.k_high
            } else {
                spec.k_low
            }
        })
        .collect();
    ScalarField::new(grid, values)
}

pub fn sample_channel_dataset<R: Rng + ?Sized>(
    grid: Grid2D,
    spec: &ChannelSpec,
    n: usize,
    rng: &mut R,
) -> Result<FieldDataset> {
    spec.validate()?;
    let base = rng::fork(rng);
    let fields = rng::par_map(n, |i| sample_channel(grid, spec, &mut rng::derive(base, i as u64)));
    let fields = fields.into_iter().collect::<Result<Vec<_>>>()?;
    let metadata = vec![
        ("generator".to_string(), "channel".to_string()),
        ("k_low".to_string(), format!("{:?}", spec.k_low)),
        ("k_high".to_string(), format!("{:?}", spec.k_high)),
        ("normalization".to_string(), spec.normalization().to_meta()),
    ];
    FieldDataset::new(grid, fields, metadata)
}

/// Affine pre-processing applied to fields before VAE training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Normalization {
    None,
    /// `(k − low) / (high − low)`.
    Affine { low: f64, high: f64 },
}

impl Normalization {
    pub fn normalize(&self, k: f64) -> f64 {
        match *self {
            Normalization::None => k,
            Normalization::Affine { low, high } => (k - low) / (high - low),
        }
    }

    pub fn denormalize(&self, u: f64) -> f64 {
        match *self {
            Normalization::None => u,
            Normalization::Affine { low, high } => low + u * (high - low),
        }
    }

    /// `d k / d u`.
    pub fn scale(&self) -> f64 {
        match *self {
            Normalization::None => 1.0,
            Normalization::Affine { low, high } => high - low,
        }
    }

    pub fn to_meta(&self) -> String {
        match *self {
            Normalization::None => "none".into(),
            Normalization::Affine { low, high } => format!("affine {low:?} {high:?}"),
        }
    }

    pub fn from_meta(s: &str) -> Result<Self> {
        let t: Vec<&str> = s.split_whitespace().collect();
        match t.as_slice() {
            ["none"] => Ok(Normalization::None),
            ["affine", a, b] => {
                let low = a.parse().map_err(|_| Error::parse("normalization", format!("bad value `{a}`")))?;
                let high = b.parse().map_err(|_| Error::parse("normalization", format!("bad value `{b}`")))?;
                Ok(Normalization::Affine { low, high })
            }
            _ => Err(Error::parse("normalization", format!("unknown normalization `{s}`"))),
        }
    }

    pub fn for_dataset(ds: &FieldDataset) -> Result<Self> {
        ds.meta("normalization").map_or(Ok(Normalization::None), Self::from_meta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_values() {
        let s = GrfSpec::new(0.5, 0.2, 0.3);
        assert_eq!(exp_cov((0.3, 0.4), (0.3, 0.4), &s), 0.5);
        let v = exp_cov((0.1, 0.5), (0.3, 0.5), &s);
        assert!((v - 0.5 * (-1.0f64).exp()).abs() < 1e-15);
        let mut r = rng::seeded(0);
        for _ in 0..50 {
            let a = (r.random::<f64>(), r.random::<f64>());
            let b = (r.random::<f64>(), r.random::<f64>());
            assert_eq!(exp_cov(a, b, &s), exp_cov(b, a, &s));
        }
    }

    #[test]
    fn factorization_succeeds_across_lengths() {
        let g = Grid2D::square(16).unwrap();
        for &l1 in &[0.1, 0.25, 0.4] {
            for &l2 in &[0.1, 0.4] {
                assert!(GrfSampler::new(g, GrfSpec::new(0.5, l1, l2)).is_ok());
            }
        }
    }

    #[test]
    fn per_cell_variance() {
        let g = Grid2D::square(8).unwrap();
        let s = GrfSampler::new(g, GrfSpec::new(0.5, 0.2, 0.3)).unwrap();
        let mut r = rng::seeded(1);
        let n = 2000;
        let mut acc = vec![0.0; g.len()];
        for _ in 0..n {
            for (a, v) in acc.iter_mut().zip(s.sample(&mut r).values()) {
                *a += v * v;
            }
        }
        let mean_var = acc.iter().sum::<f64>() / (n * g.len()) as f64;
        assert!((mean_var - 0.5).abs() < 0.05, "variance {mean_var}");
        for a in &acc {
            assert!((a / n as f64 - 0.5).abs() < 0.1);
        }
    }

    #[test]
    fn pairwise_covariance() {
        let g = Grid2D::square(8).unwrap();
        let spec = GrfSpec::new(0.5, 0.3, 0.2);
        let s = GrfSampler::new(g, spec).unwrap();
        let (a, b) = (g.index(2, 3), g.index(3, 4));
        let mut r = rng::seeded(2);
        let n = 5000;
        let mut c = 0.0;
        for _ in 0..n {
            let f = s.sample(&mut r);
            c += f.values()[a] * f.values()[b];
        }
        let emp = c / n as f64;
        let exact = exp_cov(g.center(2, 3), g.center(3, 4), &spec);
        assert!((emp - exact).abs() < 0.15 * exact, "{emp} vs {exact}");
    }

    #[test]
    fn degenerate_variance_returns_mean() {
        let g = Grid2D::square(6).unwrap();
        let spec = GrfSpec {
            mean: 0.7,
            ..GrfSpec::new(1e-12, 0.2, 0.2)
        };
        let f = sample_grf(g, &spec, &mut rng::seeded(3)).unwrap();
        assert!(f.values().iter().all(|v| (v - 0.7).abs() < 1e-5));
    }

    #[test]
    fn grf_determinism() {
        let g = Grid2D::square(6).unwrap();
        let a = sample_grf(g, &GrfSpec::default(), &mut rng::seeded(5)).unwrap();
        let b = sample_grf(g, &GrfSpec::default(), &mut rng::seeded(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dataset_counts_and_metadata() {
        let g = Grid2D::square(6).unwrap();
        let spec = GrfDatasetSpec {
            n_lengths: 3,
            n_per_length: 4,
            ..Default::default()
        };
        let ds = sample_grf_dataset(g, &spec, &mut rng::seeded(9)).unwrap();
        assert_eq!(ds.len(), 12);
        let pairs = parse_length_pairs(ds.meta("length_pairs").unwrap()).unwrap();
        assert_eq!(pairs.len(), 3);
        assert!(pairs.iter().all(|&(a, b)| (0.1..=0.4).contains(&a) && (0.1..=0.4).contains(&b)));
        assert_eq!(ds.meta("sigma_k2"), Some("0.5"));
        let again = sample_grf_dataset(g, &spec, &mut rng::seeded(9)).unwrap();
        assert_eq!(again, ds);
        let bad = GrfDatasetSpec {
            length_range: (0.1, 1.2),
            ..spec
        };
        assert!(sample_grf_dataset(g, &bad, &mut rng::seeded(9)).is_err());
    }

    #[test]
    fn full_scale_count() {
        let spec = GrfDatasetSpec {
            n_per_length: 1000,
            ..Default::default()
        };
        assert_eq!(spec.n_lengths * spec.n_per_length, 10_000);
        assert_eq!(GrfDatasetSpec::default().n_lengths * GrfDatasetSpec::default().n_per_length, 1000);
    }

    #[test]
    fn channels_are_binary() {
        let g = Grid2D::square(32).unwrap();
        let spec = ChannelSpec::default();
        let mut r = rng::seeded(4);
        for _ in 0..20 {
            let f = sample_channel(g, &spec, &mut r).unwrap();
            assert!(f.values().iter().all(|&v| v == 0.0 || v == 4.0));
        }
        let none = ChannelSpec {
            n_channels: 0,
            ..spec
        };
        let f = sample_channel(g, &none, &mut r).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.0));
    }

    fn high_fraction(n: usize, spec: &ChannelSpec, seed: u64) -> f64 {
        let g = Grid2D::square(n).unwrap();
        let mut total = 0.0;
        for s in 0..500 {
            let f = sample_channel(g, spec, &mut rng::derive(seed, s)).unwrap();
            total += f.values().iter().filter(|&&v| v == spec.k_high).count() as f64 / g.len() as f64;
        }
        total / 500.0
    }

    #[test]
    fn channel_fraction_band_and_resolution_independence() {
        let spec = ChannelSpec {
            width_range: (0.2, 0.2),
            ..Default::default()
        };
        let f32 = high_fraction(32, &spec, 17);
        let f64_ = high_fraction(64, &spec, 17);
        assert!((0.1..=0.5).contains(&f32), "fraction {f32}");
        assert!((f32 - f64_).abs() <= 0.05 * f64_, "{f32} vs {f64_}");
    }

    #[test]
    fn normalization_round_trip() {
        let n = ChannelSpec::default().normalization();
        assert_eq!(n.normalize(4.0), 1.0);
        assert_eq!(n.denormalize(0.25), 1.0);
        assert_eq!(Normalization::from_meta(&n.to_meta()).unwrap(), n);
        assert_eq!(Normalization::from_meta("none").unwrap(), Normalization::None);
    }
}
