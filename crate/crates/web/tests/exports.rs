use vidgp::darcy::DarcySolver;
use vidgp::grid::{Grid2D, ScalarField};
use vidgp_web::{channel, grf, pressure, MAX_SIDE};

#[test]
fn grf_then_pressure_matches_the_core_solver() {
    let k = grf(12, 10, 0.5, 0.2, 0.3, 7).unwrap();
    assert_eq!(k.len(), 120);
    let p = pressure(12, 10, k.clone(), 3.0).unwrap();
    let field = ScalarField::new(Grid2D::new(12, 10).unwrap(), k).unwrap();
    let direct = DarcySolver::new(3.0).solve_pressure(&field).unwrap();
    assert_eq!(p, direct.p.values());
}

#[test]
fn same_seed_same_field() {
    assert_eq!(grf(8, 8, 0.5, 0.25, 0.25, 3).unwrap(), grf(8, 8, 0.5, 0.25, 0.25, 3).unwrap());
    assert_eq!(channel(8, 8, 2, 3).unwrap(), channel(8, 8, 2, 3).unwrap());
    assert_ne!(grf(8, 8, 0.5, 0.25, 0.25, 3).unwrap(), grf(8, 8, 0.5, 0.25, 0.25, 4).unwrap());
}

#[test]
fn oversized_and_mismatched_inputs_fail() {
    assert!(grf(MAX_SIDE + 1, 4, 0.5, 0.2, 0.2, 0).is_err());
    assert!(pressure(4, 4, vec![0.0; 15], 3.0).is_err());
}
