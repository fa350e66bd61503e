//! wasm-bindgen exports for `www/index.html`. Fields cross the boundary as
//! flat row-major `Float64Array`s, `nx` values per row.

use vidgp::darcy::DarcySolver;
use vidgp::grid::{Grid2D, ScalarField};
use vidgp::prior::{sample_channel, sample_grf, ChannelSpec, GrfSpec};
use vidgp::rng;
use wasm_bindgen::prelude::*;

/// Largest grid side the page offers; the GRF sampler factorizes an
/// `(nx·ny)²` covariance.
pub const MAX_SIDE: usize = 48;

fn grid(nx: usize, ny: usize) -> Result<Grid2D, String> {
    if nx > MAX_SIDE || ny > MAX_SIDE {
        return Err(format!("grid sides are limited to {MAX_SIDE}"));
    }
    Grid2D::new(nx, ny).map_err(|e| e.to_string())
}

pub fn grf(nx: usize, ny: usize, variance: f64, l1: f64, l2: f64, seed: u64) -> Result<Vec<f64>, String> {
    let f = sample_grf(grid(nx, ny)?, &GrfSpec::new(variance, l1, l2), &mut rng::seeded(seed)).map_err(|e| e.to_string())?;
    Ok(f.into_values())
}

pub fn channel(nx: usize, ny: usize, n_channels: usize, seed: u64) -> Result<Vec<f64>, String> {
    let spec = ChannelSpec {
        n_channels,
        ..ChannelSpec::default()
    };
    let f = sample_channel(grid(nx, ny)?, &spec, &mut rng::seeded(seed)).map_err(|e| e.to_string())?;
    Ok(f.into_values())
}

/// Cell pressures for log-permeability `k`.
pub fn pressure(nx: usize, ny: usize, k: Vec<f64>, f_const: f64) -> Result<Vec<f64>, String> {
    let field = ScalarField::new(grid(nx, ny)?, k).map_err(|e| e.to_string())?;
    let sol = DarcySolver::new(f_const).solve_pressure(&field).map_err(|e| e.to_string())?;
    Ok(sol.p.into_values())
}

#[wasm_bindgen(js_name = sampleGrf)]
pub fn sample_grf_js(nx: usize, ny: usize, variance: f64, l1: f64, l2: f64, seed: u32) -> Result<Vec<f64>, JsError> {
    grf(nx, ny, variance, l1, l2, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = sampleChannel)]
pub fn sample_channel_js(nx: usize, ny: usize, n_channels: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    channel(nx, ny, n_channels, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = solvePressure)]
pub fn solve_pressure_js(nx: usize, ny: usize, k: Vec<f64>, f_const: f64) -> Result<Vec<f64>, JsError> {
    pressure(nx, ny, k, f_const).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_are_seeded_and_sized() {
        let a = grf(6, 4, 0.5, 0.2, 0.3, 9).unwrap();
        assert_eq!(a.len(), 24);
        assert_eq!(a, grf(6, 4, 0.5, 0.2, 0.3, 9).unwrap());
        let c = channel(8, 8, 2, 1).unwrap();
        assert!(c.iter().all(|v| *v == 0.0 || *v == 4.0));
    }

    #[test]
    fn pressure_of_uniform_medium_without_source_is_linear() {
        let p = pressure(4, 2, vec![0.0; 8], 0.0).unwrap();
        for (i, v) in p.iter().take(4).enumerate() {
            assert!((v - (1.0 - (i as f64 + 0.5) / 4.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn bad_input_is_an_error() {
        assert!(grf(100, 100, 0.5, 0.2, 0.2, 0).is_err());
        assert!(pressure(3, 3, vec![0.0; 8], 3.0).is_err());
        assert!(grf(4, 4, -1.0, 0.2, 0.2, 0).is_err());
    }
}
