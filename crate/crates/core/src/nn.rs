//! Dense layers over the tape. A network is a named run of blocks inside a
//! [`ParamVector`]: `<prefix>.w<i>` (fan_in × fan_out) and `<prefix>.b<i>`
//! (1 × fan_out).

use rand::Rng;

use crate::autodiff::{BlockVars, EngineError, ParamVector, Tape, Var};
use crate::error::{Error, Result};

type EResult<T> = std::result::Result<T, EngineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            _ => Err(Error::Config(format!("unknown activation `{s}`"))),
        }
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> EResult<Var> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub prefix: String,
    /// Layer widths including input and output.
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl Mlp {
    pub fn new(prefix: &str, widths: Vec<usize>, hidden: Activation, output: Activation) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        Self {
            prefix: prefix.to_string(),
            widths,
            hidden,
            output,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("nonempty widths")
    }

    fn w_name(&self, i: usize) -> String {
        format!("{}.w{i}", self.prefix)
    }

    fn b_name(&self, i: usize) -> String {
        format!("{}.b{i}", self.prefix)
    }

    pub fn shapes(&self) -> Vec<(String, usize, usize)> {
        let mut s = Vec::with_capacity(2 * self.n_layers());
        for i in 0..self.n_layers() {
            s.push((self.w_name(i), self.widths[i], self.widths[i + 1]));
            s.push((self.b_name(i), 1, self.widths[i + 1]));
        }
        s
    }

    pub fn forward(&self, tape: &mut Tape, vars: &BlockVars, x: Var) -> EResult<Var> {
        let mut h = x;
        for i in 0..self.n_layers() {
            h = tape.affine(h, vars.get(&self.w_name(i))?, vars.get(&self.b_name(i))?)?;
            let act = if i + 1 == self.n_layers() { self.output } else { self.hidden };
            h = act.apply(tape, h)?;
        }
        Ok(h)
    }

    /// Uniform `±1/√fan_in` for weights and biases of every layer.
    pub fn init_uniform<R: Rng + ?Sized>(&self, params: &mut ParamVector, rng: &mut R) {
        for i in 0..self.n_layers() {
            let bound = 1.0 / (self.widths[i] as f64).sqrt();
            for name in [self.w_name(i), self.b_name(i)] {
                let block = params.block_mut(&name).expect("layer block present");
                for v in block.iter_mut() {
                    *v = rng.random_range(-bound..bound);
                }
            }
        }
    }

    /// Zeroes the weights and bias of the output layer.
    pub fn zero_output_layer(&self, params: &mut ParamVector) {
        let last = self.n_layers() - 1;
        for name in [self.w_name(last), self.b_name(last)] {
            params.block_mut(&name).expect("layer block present").fill(0.0);
        }
    }
}

/// Zero parameter vector holding every block of `nets`, in order.
pub fn layout(nets: &[&Mlp]) -> ParamVector {
    ParamVector::zeros(nets.iter().flat_map(|n| n.shapes()).collect())
}

/// Copies the blocks named in `to` out of `from`.
pub fn extract(from: &ParamVector, to: &mut ParamVector) -> Result<()> {
    let names: Vec<String> = to.blocks().iter().map(|b| b.name.clone()).collect();
    for name in names {
        let src = from
            .block(&name)
            .ok_or_else(|| Error::Config(format!("parameter block `{name}` missing")))?
            .to_vec();
        let dst = to.block_mut(&name).expect("own block");
        if dst.len() != src.len() {
            return Err(Error::Shape {
                expected: dst.len(),
                got: src.len(),
            });
        }
        dst.copy_from_slice(&src);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, load_params};
    use crate::rng;
    use ndarray::Array2;

    #[test]
    fn shapes_and_zero_network() {
        let net = Mlp::new("n", vec![3, 4, 2], Activation::Relu, Activation::Identity);
        let p = layout(&[&net]);
        assert_eq!(p.len(), 3 * 4 + 4 + 4 * 2 + 2);
        let mut t = Tape::new();
        let v = load_params(&mut t, &p, false).unwrap();
        let x = t.constant(Array2::from_elem((5, 3), 0.7)).unwrap();
        let y = net.forward(&mut t, &v, x).unwrap();
        assert_eq!(t.value(y).dim(), (5, 2));
        assert!(t.value(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_respects_bounds() {
        let net = Mlp::new("n", vec![16, 9, 2], Activation::Relu, Activation::Identity);
        let mut p = layout(&[&net]);
        net.init_uniform(&mut p, &mut rng::seeded(0));
        assert!(p.block("n.w0").unwrap().iter().all(|v| v.abs() < 0.25));
        assert!(p.block("n.w1").unwrap().iter().all(|v| v.abs() < 1.0 / 3.0));
        assert!(p.values().iter().any(|&v| v != 0.0));
        net.zero_output_layer(&mut p);
        assert!(p.block("n.w1").unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sigmoid_network_gradient() {
        let net = Mlp::new("n", vec![4, 6, 3], Activation::Sigmoid, Activation::Sigmoid);
        let mut p = layout(&[&net]);
        net.init_uniform(&mut p, &mut rng::seeded(4));
        let x = Array2::from_shape_fn((3, 4), |(i, j)| (i as f64 - j as f64) * 0.3);
        let prog = |t: &mut Tape, v: &BlockVars| {
            let xv = t.constant(x.clone())?;
            let y = net.forward(t, v, xv)?;
            let y = t.square(y)?;
            t.sum(y)
        };
        assert!(grad_check(&prog, &p, 1e-6).unwrap().passed);
    }
}
