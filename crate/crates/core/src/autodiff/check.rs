//! Finite-difference oracles for the reverse sweep.

use super::{load_params, value_and_grad, DiffProgram, EngineError, ParamVector, Tape};

type EResult<T> = std::result::Result<T, EngineError>;

/// Forward evaluation only.
pub fn value_of(prog: &dyn DiffProgram, params: &ParamVector) -> EResult<f64> {
    let mut tape = Tape::new();
    let vars = load_params(&mut tape, params, false)?;
    let out = prog.forward(&mut tape, &vars)?;
    Ok(tape.scalar(out))
}

/// Central differences with per-component step `h * max(1, |θ_i|)`.
pub fn finite_diff_grad(prog: &dyn DiffProgram, params: &ParamVector, h: f64) -> EResult<ParamVector> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut work = params.clone();
    let mut grad = vec![0.0; params.len()];
    for i in 0..params.len() {
        let x = params.values()[i];
        let step = h * x.abs().max(1.0);
        work.values_mut()[i] = x + step;
        let fp = value_of(prog, &work)?;
        work.values_mut()[i] = x - step;
        let fm = value_of(prog, &work)?;
        work.values_mut()[i] = x;
        grad[i] = (fp - fm) / (2.0 * step);
    }
    Ok(params.with_values(grad))
}

/// Ridders' extrapolation of central differences, starting from step
/// `h0 * max(1, |θ_i|)` and shrinking by 1.4 per stage. Far less roundoff
/// than a single tiny step, so small components are resolved too.
pub fn ridders_grad(prog: &dyn DiffProgram, params: &ParamVector, h0: f64) -> EResult<ParamVector> {
    assert!(h0 > 0.0, "finite-difference step must be positive");
    const CON: f64 = 1.4;
    const NTAB: usize = 8;
    let mut work = params.clone();
    let mut grad = vec![0.0; params.len()];
    for i in 0..params.len() {
        let x = params.values()[i];
        let mut central = |h: f64| -> EResult<f64> {
            work.values_mut()[i] = x + h;
            let fp = value_of(prog, &work)?;
            work.values_mut()[i] = x - h;
            let fm = value_of(prog, &work)?;
            work.values_mut()[i] = x;
            Ok((fp - fm) / (2.0 * h))
        };
        let mut table = [[0.0f64; NTAB]; NTAB];
        let mut h = h0 * x.abs().max(1.0);
        table[0][0] = central(h)?;
        let mut best = table[0][0];
        let mut err = f64::INFINITY;
        for col in 1..NTAB {
            h /= CON;
            table[0][col] = central(h)?;
            let mut fac = CON * CON;
            for row in 1..=col {
                table[row][col] = (table[row - 1][col] * fac - table[row - 1][col - 1]) / (fac - 1.0);
                fac *= CON * CON;
                let e = (table[row][col] - table[row - 1][col])
                    .abs()
                    .max((table[row][col] - table[row - 1][col - 1]).abs());
                if e <= err {
                    err = e;
                    best = table[row][col];
                }
            }
            if (table[col][col] - table[col - 1][col - 1]).abs() >= 2.0 * err {
                break;
            }
        }
        grad[i] = best;
    }
    Ok(params.with_values(grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub passed: bool,
    /// Smallest ReLU input magnitude seen in the forward pass.
    pub relu_margin: f64,
}

/// Componentwise relative error with `max(|a|, |b|, 1e-12)` denominators.
pub fn compare_gradients(analytic: &[f64], numeric: &[f64], tol: f64) -> GradCheckReport {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    let mut worst = (0.0f64, 0usize);
    for (i, (a, b)) in analytic.iter().zip(numeric).enumerate() {
        let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-12);
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    GradCheckReport {
        max_rel_err: worst.0,
        worst_index: worst.1,
        passed: worst.0 <= tol,
        relu_margin: f64::INFINITY,
    }
}

/// Reverse sweep against [`ridders_grad`] with `h0 = 1e-4`. ReLU programs
/// should be checked only where [`GradCheckReport::relu_margin`] exceeds the
/// largest step.
pub fn grad_check(prog: &dyn DiffProgram, params: &ParamVector, tol: f64) -> EResult<GradCheckReport> {
    let (_, analytic) = value_and_grad(prog, params)?;
    let numeric = ridders_grad(prog, params, 1e-4)?;
    let mut report = compare_gradients(analytic.values(), numeric.values(), tol);
    let mut tape = Tape::new();
    let vars = load_params(&mut tape, params, false)?;
    prog.forward(&mut tape, &vars)?;
    report.relu_margin = tape.relu_margin();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::super::{BlockVars, Tape, Var};
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct TwoLayer {
        x: Array2<f64>,
    }

    impl DiffProgram for TwoLayer {
        fn forward(&self, t: &mut Tape, v: &BlockVars) -> EResult<Var> {
            let x = t.constant(self.x.clone())?;
            let h = t.affine(x, v.get("w1")?, v.get("b1")?)?;
            let h = t.relu(h)?;
            let o = t.affine(h, v.get("w2")?, v.get("b2")?)?;
            let o = t.square(o)?;
            t.mean(o)
        }
    }

    fn random_net(rng: &mut ChaCha8Rng) -> (TwoLayer, ParamVector) {
        let x = Array2::from_shape_fn((4, 5), |_| rng.random_range(-1.0..1.0));
        let shapes = vec![("w1", 5, 6), ("b1", 1, 6), ("w2", 6, 2), ("b2", 1, 2)];
        let n = shapes.iter().map(|(_, r, c)| r * c).sum();
        let vals = (0..n).map(|_| rng.random_range(-0.8..0.8)).collect();
        (TwoLayer { x }, ParamVector::from_blocks(shapes, vals).unwrap())
    }

    #[test]
    fn relu_network_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut checked = 0;
        while checked < 5 {
            let (prog, p) = random_net(&mut rng);
            let (_, analytic) = value_and_grad(&prog, &p).unwrap();
            let numeric = finite_diff_grad(&prog, &p, 1e-6).unwrap();
            let mut r = compare_gradients(analytic.values(), numeric.values(), 1e-5);
            r.relu_margin = grad_check(&prog, &p, 1e-5).unwrap().relu_margin;
            if r.relu_margin < 1e-3 {
                continue;
            }
            assert!(r.passed, "max rel err {} at {}", r.max_rel_err, r.worst_index);
            checked += 1;
        }
    }

    #[test]
    fn ridders_resolves_small_components() {
        let p = ParamVector::from_blocks(vec![("w", 1, 2)], vec![1e-3, 2.0]).unwrap();
        let prog = |t: &mut Tape, v: &BlockVars| {
            let w = v.get("w")?;
            let s = t.square(w)?;
            let e = t.exp(s)?;
            let e = t.scale(e, 1e3)?;
            t.sum(e)
        };
        let r = grad_check(&prog, &p, 1e-7).unwrap();
        assert!(r.passed, "{}", r.max_rel_err);
    }

    #[test]
    fn identical_gradients_report_zero() {
        let g = [1.0, -2.0, 0.0];
        let r = compare_gradients(&g, &g, 1e-4);
        assert_eq!(r.max_rel_err, 0.0);
        assert!(r.passed);
    }

    #[test]
    fn corrupted_component_is_found() {
        let a = [0.5, -1.0, 2.0, 0.25];
        let mut b = a;
        b[2] *= 2.0;
        let r = compare_gradients(&a, &b, 1e-4);
        assert_eq!(r.worst_index, 2);
        assert!(!r.passed);
    }

    #[test]
    fn gradient_is_linear_in_programs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (p1, params) = random_net(&mut rng);
        let x2 = Array2::from_shape_fn((4, 5), |_| rng.random_range(-1.0..1.0));
        let p2 = TwoLayer { x: x2 };
        let (a, b) = (0.7, -1.3);
        let mix = |t: &mut Tape, v: &BlockVars| {
            let u = p1.forward(t, v)?;
            let w = p2.forward(t, v)?;
            let u = t.scale(u, a)?;
            let w = t.scale(w, b)?;
            t.add(u, w)
        };
        let (_, g) = value_and_grad(&mix, &params).unwrap();
        let (_, g1) = value_and_grad(&p1, &params).unwrap();
        let (_, g2) = value_and_grad(&p2, &params).unwrap();
        for i in 0..params.len() {
            let e = a * g1.values()[i] + b * g2.values()[i];
            assert!((g.values()[i] - e).abs() <= 1e-12 * e.abs().max(1.0));
        }
    }

    #[test]
    fn finite_differences_of_quadratic() {
        let p = ParamVector::from_blocks(vec![("w", 1, 3)], vec![0.5, -3.0, 20.0]).unwrap();
        let prog = |t: &mut Tape, v: &BlockVars| {
            let s = t.square(v.get("w")?)?;
            let s = t.sum(s)?;
            t.scale(s, 0.5)
        };
        let fd = finite_diff_grad(&prog, &p, 1e-6).unwrap();
        for (a, b) in fd.values().iter().zip(p.values()) {
            assert!((a - b).abs() / b.abs() < 1e-8);
        }
    }
}
