//! Uniform grids on the unit square, cell-centred scalar fields and pressure
//! observations.
//!
//! Storage is row-major with `x1` varying fastest: cell `(i, j)` lives at
//! index `j * nx + i` and has centre `((i + ½)/nx, (j + ½)/ny)`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Default lower bound on per-observation noise standard deviations.
pub const SIGMA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid2D {
    nx: usize,
    ny: usize,
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::Grid(format!("need at least 2x2 cells, got {nx}x{ny}")));
        }
        Ok(Self { nx, ny })
    }

    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn hx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        1.0 / self.ny as f64
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.hx(), (j as f64 + 0.5) * self.hy())
    }

    /// Iterator over all cell centres in storage order.
    pub fn centers(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..self.ny).flat_map(move |j| (0..self.nx).map(move |i| self.center(i, j)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid2D,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("field value at index {pos}")));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid2D, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.centers().map(|(x, y)| f(x, y)).collect())
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Ordered observation locations strictly inside the unit square.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPlan {
    locations: Vec<(f64, f64)>,
}

impl ObservationPlan {
    pub fn new(locations: Vec<(f64, f64)>) -> Result<Self> {
        for &(x1, x2) in &locations {
            if !(x1 > 0.0 && x1 < 1.0 && x2 > 0.0 && x2 < 1.0) {
                return Err(Error::Domain { x1, x2 });
            }
        }
        for (a, p) in locations.iter().enumerate() {
            if locations[..a].contains(p) {
                return Err(Error::Config(format!(
                    "duplicate observation location ({}, {})",
                    p.0, p.1
                )));
            }
        }
        Ok(Self { locations })
    }

    /// Tensor-product plan with `n` points per axis at `(a + 0.5) / n`.
    ///
    /// `n = 8` gives the 64-point layout `0.0625 + 0.125 i`.
    pub fn uniform(n: usize) -> Self {
        let h = 1.0 / n as f64;
        let locations = (0..n)
            .flat_map(|j| (0..n).map(move |i| ((i as f64 + 0.5) * h, (j as f64 + 0.5) * h)))
            .collect();
        Self { locations }
    }

    pub fn locations(&self) -> &[(f64, f64)] {
        &self.locations
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    /// Bilinear stencils: for each location, four `(cell index, weight)` pairs
    /// whose weights sum to one.
    ///
    /// Locations within half a cell of the boundary extrapolate linearly from
    /// the two nearest cell centres, which keeps affine fields exact.
    pub fn stencils(&self, grid: Grid2D) -> Vec<[(usize, f64); 4]> {
        self.locations
            .iter()
            .map(|&(x1, x2)| {
                let (i0, tx) = bracket(x1, grid.nx());
                let (j0, ty) = bracket(x2, grid.ny());
                [
                    (grid.index(i0, j0), (1.0 - tx) * (1.0 - ty)),
                    (grid.index(i0 + 1, j0), tx * (1.0 - ty)),
                    (grid.index(i0, j0 + 1), (1.0 - tx) * ty),
                    (grid.index(i0 + 1, j0 + 1), tx * ty),
                ]
            })
            .collect()
    }
}

fn bracket(x: f64, n: usize) -> (usize, f64) {
    let s = x * n as f64 - 0.5;
    let i0 = (s.floor().max(0.0) as usize).min(n - 2);
    (i0, s - i0 as f64)
}

/// Bilinear interpolation of `field` at every plan location, in plan order.
pub fn observe(field: &ScalarField, plan: &ObservationPlan) -> Vec<f64> {
    observe_values(field.grid(), field.values(), plan)
}

pub(crate) fn observe_values(grid: Grid2D, values: &[f64], plan: &ObservationPlan) -> Vec<f64> {
    plan.stencils(grid)
        .iter()
        .map(|st| st.iter().map(|&(c, w)| w * values[c]).sum())
        .collect()
}

/// Scatter a cotangent on the observations back onto the grid (the transpose
/// of [`observe`]).
pub fn observe_transpose(grid: Grid2D, plan: &ObservationPlan, cot: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    for (st, &c) in plan.stencils(grid).iter().zip(cot) {
        for &(idx, w) in st {
            out[idx] += w * c;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub clean: Vec<f64>,
    pub noisy: Vec<f64>,
    pub sigma: Vec<f64>,
    pub noise_level: f64,
}

impl ObservationSet {
    /// Observations taken as exact, with a common noise scale.
    pub fn exact(values: Vec<f64>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
        }
        let n = values.len();
        Ok(Self {
            noisy: values.clone(),
            clean: values,
            sigma: vec![sigma; n],
            noise_level: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.noisy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noisy.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.noisy.len();
        if self.clean.len() != n || self.sigma.len() != n {
            return Err(Error::Shape {
                expected: n,
                got: self.clean.len().min(self.sigma.len()),
            });
        }
        if self.sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("observation sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Relative Gaussian noise: `sigma_j = max(level * |clean_j|, SIGMA_FLOOR)`.
pub fn add_noise<R: Rng + ?Sized>(
    clean: &[f64],
    noise_level: f64,
    rng: &mut R,
) -> Result<ObservationSet> {
    add_noise_with_floor(clean, noise_level, SIGMA_FLOOR, rng)
}

pub fn add_noise_with_floor<R: Rng + ?Sized>(
    clean: &[f64],
    noise_level: f64,
    sigma_floor: f64,
    rng: &mut R,
) -> Result<ObservationSet> {
    if !(noise_level >= 0.0) {
        return Err(Error::Config(format!("noise level must be >= 0, got {noise_level}")));
    }
    if let Some(pos) = clean.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("clean observation {pos}")));
    }
    let sigma: Vec<f64> = clean
        .iter()
        .map(|c| (noise_level * c.abs()).max(sigma_floor))
        .collect();
    let noisy = if noise_level == 0.0 {
        clean.to_vec()
    } else {
        clean
            .iter()
            .zip(&sigma)
            .map(|(c, s)| {
                let xi: f64 = rng.sample(StandardNormal);
                c + s * xi
            })
            .collect()
    };
    Ok(ObservationSet {
        clean: clean.to_vec(),
        noisy,
        sigma,
        noise_level,
    })
}

/// A collection of fields on one grid plus generator metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDataset {
    pub grid: Grid2D,
    pub fields: Vec<ScalarField>,
    pub metadata: Vec<(String, String)>,
}

impl FieldDataset {
    pub fn new(grid: Grid2D, fields: Vec<ScalarField>, metadata: Vec<(String, String)>) -> Result<Self> {
        if let Some(f) = fields.iter().find(|f| f.grid() != grid) {
            return Err(Error::Grid(format!(
                "dataset member is {}x{}, expected {}x{}",
                f.grid().nx(),
                f.grid().ny(),
                grid.nx(),
                grid.ny()
            )));
        }
        Ok(Self {
            grid,
            fields,
            metadata,
        })
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn set_meta(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.metadata.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.metadata.push((key.to_string(), value)),
        }
    }

    /// Flattened copy of the first `n` fields, one field per row.
    pub fn to_rows(&self, n: usize) -> Vec<Vec<f64>> {
        self.fields.iter().take(n).map(|f| f.values().to_vec()).collect()
    }
}
