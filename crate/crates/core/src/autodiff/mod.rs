//! A small tape-based reverse-mode differentiation engine over dense 2-D
//! tensors.
//!
//! Operations execute eagerly as they're recorded; [`Tape::backward`] then
//! walks the tape in reverse and accumulates adjoints. Rows are batch items
//! everywhere: a layer maps an `(n, in)` tensor to `(n, out)`.
//!
//! The primitive set is deliberately narrow: affine maps, elementwise
//! activations, products, reductions, sparse stencils and an escape hatch
//! ([`Tape::external_rows`]) for scalar functions whose gradients come from
//! elsewhere, such as an adjoint PDE solve.
//!
//! ReLU uses the subgradient 0 at exactly 0.

mod check;
mod optim;
mod params;

pub use check::{compare_gradients, finite_diff_grad, grad_check, ridders_grad, value_of, GradCheckReport};
pub use optim::{Adam, LrSchedule, Optimizer, Sgd};
pub use params::{Block, ParamVector};

use std::sync::Arc;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Axis};
use thiserror::Error;

use crate::sparse::CsrMatrix;

pub type Tensor = Array2<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("{primitive}: shape mismatch ({detail})")]
    Shape {
        primitive: &'static str,
        detail: String,
    },
    #[error("{primitive}: produced a non-finite value")]
    NonFinite { primitive: &'static str },
    #[error("backward requires a 1x1 output, got {0}x{1}")]
    NotScalar(usize, usize),
    #[error("unknown parameter block `{0}`")]
    UnknownBlock(String),
    #[error("malformed parameter vector: {0}")]
    Params(String),
}

type EResult<T> = std::result::Result<T, EngineError>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    Stencil(Var, Arc<CsrMatrix>),
    Columns(Var, usize),
    External(Var, Tensor),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    relu_margin: f64,
}

fn check_finite(primitive: &'static str, t: &Tensor) -> EResult<()> {
    if t.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(EngineError::NonFinite { primitive })
    }
}

fn same_shape(primitive: &'static str, a: &Tensor, b: &Tensor) -> EResult<()> {
    if a.dim() == b.dim() {
        Ok(())
    } else {
        Err(EngineError::Shape {
            primitive,
            detail: format!("{:?} vs {:?}", a.dim(), b.dim()),
        })
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            relu_margin: f64::INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, primitive: &'static str, value: Tensor, op: Op, tracked: bool) -> EResult<Var> {
        check_finite(primitive, &value)?;
        self.nodes.push(Node { value, op, tracked });
        Ok(Var(self.nodes.len() - 1))
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> EResult<Var> {
        self.push("leaf", value, Op::Leaf, true)
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> EResult<Var> {
        self.push("constant", value, Op::Leaf, false)
    }

    pub fn row(&mut self, values: &[f64]) -> EResult<Var> {
        self.constant(Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape"))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// Smallest `|x|` seen at any ReLU input; finite-difference checks use it
    /// to avoid kinks.
    pub fn relu_margin(&self) -> f64 {
        self.relu_margin
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> EResult<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(EngineError::Shape {
                primitive: "matmul",
                detail: format!("{:?} x {:?}", va.dim(), vb.dim()),
            });
        }
        let out = va.dot(vb);
        let t = self.tracked(a) || self.tracked(b);
        self.push("matmul", out, Op::MatMul(a, b), t)
    }

    /// `x + b` with the `(1, n)` row `b` broadcast over rows of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> EResult<Var> {
        let (vx, vb) = (self.value(x), self.value(b));
        if vb.nrows() != 1 || vb.ncols() != vx.ncols() {
            return Err(EngineError::Shape {
                primitive: "add_bias",
                detail: format!("{:?} + {:?}", vx.dim(), vb.dim()),
            });
        }
        let out = vx + vb;
        let t = self.tracked(x) || self.tracked(b);
        self.push("add_bias", out, Op::AddBias(x, b), t)
    }

    /// `x W + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> EResult<Var> {
        let h = self.matmul(x, w)?;
        self.add_bias(h, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> EResult<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = self.value(a) + self.value(b);
        let t = self.tracked(a) || self.tracked(b);
        self.push("add", out, Op::Add(a, b), t)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> EResult<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = self.value(a) - self.value(b);
        let t = self.tracked(a) || self.tracked(b);
        self.push("sub", out, Op::Sub(a, b), t)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> EResult<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = self.value(a) * self.value(b);
        let t = self.tracked(a) || self.tracked(b);
        self.push("mul", out, Op::Mul(a, b), t)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> EResult<Var> {
        let out = self.value(a) * c;
        let t = self.tracked(a);
        self.push("scale", out, Op::Scale(a, c), t)
    }

    pub fn offset(&mut self, a: Var, c: f64) -> EResult<Var> {
        let out = self.value(a) + c;
        let t = self.tracked(a);
        self.push("offset", out, Op::Offset(a), t)
    }

    pub fn relu(&mut self, a: Var) -> EResult<Var> {
        let va = self.value(a);
        let margin = va.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        let out = va.mapv(|v| v.max(0.0));
        self.relu_margin = self.relu_margin.min(margin);
        let t = self.tracked(a);
        self.push("relu", out, Op::Relu(a), t)
    }

    pub fn sigmoid(&mut self, a: Var) -> EResult<Var> {
        let out = self.value(a).mapv(sigmoid);
        let t = self.tracked(a);
        self.push("sigmoid", out, Op::Sigmoid(a), t)
    }

    pub fn exp(&mut self, a: Var) -> EResult<Var> {
        let out = self.value(a).mapv(f64::exp);
        let t = self.tracked(a);
        self.push("exp", out, Op::Exp(a), t)
    }

    pub fn log(&mut self, a: Var) -> EResult<Var> {
        let out = self.value(a).mapv(f64::ln);
        let t = self.tracked(a);
        self.push("log", out, Op::Log(a), t)
    }

    pub fn square(&mut self, a: Var) -> EResult<Var> {
        let out = self.value(a).mapv(|v| v * v);
        let t = self.tracked(a);
        self.push("square", out, Op::Square(a), t)
    }

    /// Sum of all entries, as a `1x1` tensor.
    pub fn sum(&mut self, a: Var) -> EResult<Var> {
        let s = self.value(a).sum();
        let t = self.tracked(a);
        self.push("sum", Array2::from_elem((1, 1), s), Op::Sum(a), t)
    }

    pub fn mean(&mut self, a: Var) -> EResult<Var> {
        let va = self.value(a);
        let n = va.len().max(1) as f64;
        let s = va.sum() / n;
        let t = self.tracked(a);
        self.push("mean", Array2::from_elem((1, 1), s), Op::Mean(a), t)
    }

    /// Applies the sparse operator `S` to every row: `y_r = S x_r`.
    pub fn stencil(&mut self, x: Var, op: Arc<CsrMatrix>) -> EResult<Var> {
        let vx = self.value(x);
        if vx.ncols() != op.ncols() {
            return Err(EngineError::Shape {
                primitive: "stencil",
                detail: format!("operator {}x{} on rows of {}", op.nrows(), op.ncols(), vx.ncols()),
            });
        }
        let mut out = Array2::zeros((vx.nrows(), op.nrows()));
        for (xr, mut yr) in vx.outer_iter().zip(out.outer_iter_mut()) {
            let xs = xr.as_slice().expect("standard layout");
            op.matvec_into(xs, yr.as_slice_mut().expect("standard layout"));
        }
        let t = self.tracked(x);
        self.push("stencil", out, Op::Stencil(x, op), t)
    }

    /// Columns `start..start + len` of `x`.
    pub fn columns(&mut self, x: Var, start: usize, len: usize) -> EResult<Var> {
        let vx = self.value(x);
        if start + len > vx.ncols() {
            return Err(EngineError::Shape {
                primitive: "columns",
                detail: format!("{start}..{} of {}", start + len, vx.ncols()),
            });
        }
        let out = vx.slice(ndarray::s![.., start..start + len]).to_owned();
        let t = self.tracked(x);
        self.push("columns", out, Op::Columns(x, start), t)
    }

    /// Row-wise scalar functions evaluated outside the tape: row `r` of the
    /// `(n, 1)` output is `values[r]`, and `grads` row `r` is its gradient
    /// with respect to row `r` of `x`.
    pub fn external_rows(&mut self, x: Var, values: Vec<f64>, grads: Tensor) -> EResult<Var> {
        let vx = self.value(x);
        if grads.dim() != vx.dim() || values.len() != vx.nrows() {
            return Err(EngineError::Shape {
                primitive: "external",
                detail: format!("input {:?}, gradient {:?}, {} values", vx.dim(), grads.dim(), values.len()),
            });
        }
        check_finite("external", &grads)?;
        let n = values.len();
        let out = Array2::from_shape_vec((n, 1), values).expect("column shape");
        let t = self.tracked(x);
        self.push("external", out, Op::External(x, grads), t)
    }

    /// Reverse sweep from the scalar `out`.
    pub fn backward(&self, out: Var) -> EResult<Gradients> {
        let (r, c) = self.value(out).dim();
        if (r, c) != (1, 1) {
            return Err(EngineError::NotScalar(r, c));
        }
        self.backward_with(out, Array2::from_elem((1, 1), 1.0))
    }

    /// Reverse sweep from `out` seeded with the cotangent `seed`.
    pub fn backward_with(&self, out: Var, seed: Tensor) -> EResult<Gradients> {
        same_shape("backward", self.value(out), &seed)?;
        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adj[out.0] = Some(seed);
        for idx in (0..=out.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.tracked {
                adj[idx] = Some(g);
                continue;
            }
            self.propagate(&node.op, idx, &g, &mut adj);
            adj[idx] = Some(g);
        }
        for (slot, node) in adj.iter_mut().zip(&self.nodes) {
            if !node.tracked {
                *slot = None;
            }
        }
        Ok(Gradients(adj))
    }

    fn propagate(&self, op: &Op, idx: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let acc = |v: Var, delta: Tensor, adj: &mut [Option<Tensor>]| {
            if !self.nodes[v.0].tracked {
                return;
            }
            match &mut adj[v.0] {
                Some(a) => *a += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.tracked(*a) {
                    let (va, vb) = (val(*a), val(*b));
                    let mut da = Array2::zeros(va.dim());
                    general_mat_mul(1.0, g, &vb.t(), 0.0, &mut da);
                    acc(*a, da, adj);
                }
                if self.tracked(*b) {
                    let (va, vb) = (val(*a), val(*b));
                    let mut db = Array2::zeros(vb.dim());
                    general_mat_mul(1.0, &va.t(), g, 0.0, &mut db);
                    acc(*b, db, adj);
                }
            }
            Op::AddBias(x, b) => {
                acc(*x, g.clone(), adj);
                if self.tracked(*b) {
                    acc(*b, g.sum_axis(Axis(0)).insert_axis(Axis(0)), adj);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone(), adj);
                acc(*b, g.clone(), adj);
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone(), adj);
                acc(*b, -g, adj);
            }
            Op::Mul(a, b) => {
                if self.tracked(*a) {
                    acc(*a, g * val(*b), adj);
                }
                if self.tracked(*b) {
                    acc(*b, g * val(*a), adj);
                }
            }
            Op::Scale(a, c) => acc(*a, g * *c, adj),
            Op::Offset(a) => acc(*a, g.clone(), adj),
            Op::Relu(a) => {
                let mut d = g.clone();
                d.zip_mut_with(val(*a), |d, &x| {
                    if x <= 0.0 {
                        *d = 0.0
                    }
                });
                acc(*a, d, adj);
            }
            Op::Sigmoid(_) | Op::Exp(_) => {
                let y = &self.nodes[idx].value;
                let a = match op {
                    Op::Sigmoid(a) | Op::Exp(a) => *a,
                    _ => unreachable!(),
                };
                let d = if matches!(op, Op::Sigmoid(_)) {
                    g * &y.mapv(|s| s * (1.0 - s))
                } else {
                    g * y
                };
                acc(a, d, adj);
            }
            Op::Log(a) => acc(*a, g / val(*a), adj),
            Op::Square(a) => acc(*a, g * &(val(*a) * 2.0), adj),
            Op::Sum(a) => acc(*a, Array2::from_elem(val(*a).dim(), g[[0, 0]]), adj),
            Op::Mean(a) => {
                let va = val(*a);
                acc(*a, Array2::from_elem(va.dim(), g[[0, 0]] / va.len().max(1) as f64), adj)
            }
            Op::Stencil(x, s) => {
                let vx = val(*x);
                let mut d = Array2::zeros(vx.dim());
                for (gr, mut dr) in g.outer_iter().zip(d.outer_iter_mut()) {
                    let gs = gr.to_vec();
                    s.matvec_transpose_add(&gs, dr.as_slice_mut().expect("standard layout"));
                }
                acc(*x, d, adj);
            }
            Op::Columns(x, start) => {
                let mut d = Array2::zeros(val(*x).dim());
                d.slice_mut(ndarray::s![.., *start..*start + g.ncols()]).assign(g);
                acc(*x, d, adj);
            }
            Op::External(x, grads) => {
                let mut d = grads.clone();
                for (mut row, gv) in d.outer_iter_mut().zip(g.column(0)) {
                    row *= *gv;
                }
                acc(*x, d, adj);
            }
        }
    }
}

/// Adjoints of tracked nodes after a reverse sweep.
#[derive(Debug)]
pub struct Gradients(Vec<Option<Tensor>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, zeros when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Array2::zeros(shape))
    }
}

/// Named leaf handles for every block of a [`ParamVector`].
#[derive(Debug, Clone)]
pub struct BlockVars {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl BlockVars {
    pub fn get(&self, name: &str) -> EResult<Var> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| EngineError::UnknownBlock(name.to_string()))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// A scalar objective of a parameter vector. Auxiliary inputs (data batches,
/// frozen noise draws) live in the implementing type.
pub trait DiffProgram {
    fn forward(&self, tape: &mut Tape, params: &BlockVars) -> EResult<Var>;
}

impl<F> DiffProgram for F
where
    F: Fn(&mut Tape, &BlockVars) -> EResult<Var>,
{
    fn forward(&self, tape: &mut Tape, params: &BlockVars) -> EResult<Var> {
        self(tape, params)
    }
}

/// Records every block of `params` as a tracked (or constant) leaf.
pub fn load_params(tape: &mut Tape, params: &ParamVector, tracked: bool) -> EResult<BlockVars> {
    let mut vars = Vec::with_capacity(params.blocks().len());
    let mut names = Vec::with_capacity(params.blocks().len());
    for (i, b) in params.blocks().iter().enumerate() {
        let t = params.block_tensor(i);
        vars.push(if tracked { tape.leaf(t)? } else { tape.constant(t)? });
        names.push(b.name.clone());
    }
    Ok(BlockVars { names, vars })
}

/// Value of `prog` and its exact gradient, shaped like `params`.
pub fn value_and_grad(prog: &dyn DiffProgram, params: &ParamVector) -> EResult<(f64, ParamVector)> {
    let mut tape = Tape::new();
    let vars = load_params(&mut tape, params, true)?;
    let out = prog.forward(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let mut flat = vec![0.0; params.len()];
    for (b, &v) in params.blocks().iter().zip(vars.vars()) {
        if let Some(g) = grads.get(v) {
            flat[b.offset..b.offset + b.len()].copy_from_slice(g.as_slice().expect("standard layout"));
        }
    }
    Ok((tape.scalar(out), params.with_values(flat)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn scalar_leaf(tape: &mut Tape, v: f64) -> Var {
        tape.leaf(array![[v]]).unwrap()
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut t = Tape::new();
        let w = scalar_leaf(&mut t, 0.0);
        let s = t.sigmoid(w).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(t.scalar(s), 0.5);
        assert_eq!(g.get(w).unwrap()[[0, 0]], 0.25);
    }

    #[test]
    fn half_squared_norm_gives_identity_gradient() {
        let p = ParamVector::from_blocks(vec![("w", 2, 3)], vec![1.0, -2.0, 0.5, 3.0, 0.0, -1.5]).unwrap();
        let prog = |t: &mut Tape, v: &BlockVars| {
            let w = v.get("w")?;
            let sq = t.square(w)?;
            let s = t.sum(sq)?;
            t.scale(s, 0.5)
        };
        let (val, g) = value_and_grad(&prog, &p).unwrap();
        assert!((val - 0.5 * p.values().iter().map(|x| x * x).sum::<f64>()).abs() < 1e-15);
        assert_eq!(g.values(), p.values());
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut t = Tape::new();
        let x = t.leaf(array![[0.0, 1.0, -1.0]]).unwrap();
        let r = t.relu(x).unwrap();
        let s = t.sum(r).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &array![[0.0, 1.0, 0.0]]);
        assert_eq!(t.relu_margin(), 0.0);
    }

    #[test]
    fn non_finite_names_the_primitive() {
        let mut t = Tape::new();
        let x = t.leaf(array![[-1.0]]).unwrap();
        assert_eq!(t.log(x), Err(EngineError::NonFinite { primitive: "log" }));
        let y = t.leaf(array![[1000.0]]).unwrap();
        assert_eq!(t.exp(y), Err(EngineError::NonFinite { primitive: "exp" }));
    }

    #[test]
    fn shape_errors() {
        let mut t = Tape::new();
        let a = t.leaf(Array2::zeros((2, 3))).unwrap();
        let b = t.leaf(Array2::zeros((2, 3))).unwrap();
        assert!(matches!(t.matmul(a, b), Err(EngineError::Shape { primitive: "matmul", .. })));
        let c = t.leaf(Array2::zeros((3, 2))).unwrap();
        assert!(t.add(a, c).is_err());
        assert!(matches!(t.backward(a), Err(EngineError::NotScalar(2, 3))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(array![[2.0]]).unwrap();
        let c = t.constant(array![[3.0]]).unwrap();
        let y = t.mul(x, c).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap()[[0, 0]], 3.0);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn stencil_backward_is_transpose() {
        let s = Arc::new(CsrMatrix::from_triplets(2, 3, &[(0, 0, 1.0), (0, 2, -1.0), (1, 1, 2.0)]));
        let mut t = Tape::new();
        let x = t.leaf(array![[1.0, 2.0, 3.0], [0.0, 1.0, 0.0]]).unwrap();
        let y = t.stencil(x, s).unwrap();
        assert_eq!(t.value(y), &array![[-2.0, 4.0], [0.0, 2.0]]);
        let w = t.constant(array![[1.0, 10.0], [100.0, 1000.0]]).unwrap();
        let p = t.mul(y, w).unwrap();
        let o = t.sum(p).unwrap();
        let g = t.backward(o).unwrap();
        assert_eq!(g.get(x).unwrap(), &array![[1.0, 20.0, -1.0], [100.0, 2000.0, -100.0]]);
    }

    #[test]
    fn external_rows_chain_supplied_gradients() {
        let mut t = Tape::new();
        let x = t.leaf(array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let e = t
            .external_rows(x, vec![5.0, 6.0], array![[0.1, 0.2], [0.3, 0.4]])
            .unwrap();
        let w = t.constant(array![[2.0], [-1.0]]).unwrap();
        let p = t.mul(e, w).unwrap();
        let s = t.sum(p).unwrap();
        assert_eq!(t.scalar(s), 4.0);
        let g = t.backward(s).unwrap();
        let gx = g.get(x).unwrap();
        assert!((gx[[0, 1]] - 0.4).abs() < 1e-15 && (gx[[1, 0]] + 0.3).abs() < 1e-15);
    }

    #[test]
    fn deterministic_bit_identical() {
        let p = ParamVector::from_blocks(vec![("w", 3, 3), ("b", 1, 3)], (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let prog = |t: &mut Tape, v: &BlockVars| {
            let x = t.constant(array![[0.3, -0.2, 0.9]])?;
            let h = t.affine(x, v.get("w")?, v.get("b")?)?;
            let s = t.sigmoid(h)?;
            t.sum(s)
        };
        let a = value_and_grad(&prog, &p).unwrap();
        let b = value_and_grad(&prog, &p).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1, b.1);
    }
}
