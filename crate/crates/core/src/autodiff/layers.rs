//! Dense layers and multi-layer perceptrons on top of [`Graph`].

use rand::distr::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::graph::{sigmoid, Graph, Var};
use crate::autodiff::matrix::Matrix;
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu,
    Sigmoid,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::LeakyRelu => 2,
            Activation::Sigmoid => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => Activation::LeakyRelu,
            3 => Activation::Sigmoid,
            _ => return None,
        })
    }

    fn record(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => g.relu(x),
            Activation::LeakyRelu => g.leaky_relu(x, LEAKY_SLOPE),
            Activation::Sigmoid => g.sigmoid(x),
        }
    }

    // Must stay bit-identical to the graph ops.
    fn apply(self, m: Matrix) -> Matrix {
        match self {
            Activation::Identity => m,
            Activation::Relu => m.map(|v| if v > 0.0 { v } else { 0.0 * v }),
            Activation::LeakyRelu => m.map(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v }),
            Activation::Sigmoid => m.map(sigmoid),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `in_dim × out_dim`.
    pub weight: Matrix,
    /// `1 × out_dim`.
    pub bias: Matrix,
    pub activation: Activation,
}

impl DenseLayer {
    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite glorot limit");
        let data = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
        DenseLayer {
            weight: Matrix::from_vec(in_dim, out_dim, data).expect("sized above"),
            bias: Matrix::zeros(1, out_dim),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward_value(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = x.matmul(&self.weight)?;
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(self.bias.data()) {
                *o += b;
            }
        }
        Ok(self.activation.apply(out))
    }
}

/// Parameter handles of an [`Mlp`] registered in one graph, in
/// `[w0, b0, w1, b1, ...]` order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    /// `dims = [in, h1, ..., out]`. Every layer but the last uses `hidden`.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output widths");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::new(dims[i], dims[i + 1], act, rng)
            })
            .collect();
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, DenseLayer::in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::out_dim)
    }

    /// Registers the parameters in `g`; frozen networks are added as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        let mut vars = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            vars.push(g.leaf(l.weight.clone(), trainable));
            vars.push(g.leaf(l.bias.clone(), trainable));
        }
        BoundParams { vars }
    }

    pub fn forward(&self, g: &mut Graph, params: &BoundParams, x: Var) -> Result<Var> {
        let in_cols = g.value(x).cols();
        if in_cols != self.in_dim() {
            return Err(Error::Dimension {
                op: "mlp forward",
                lhs: g.value(x).shape(),
                rhs: (self.in_dim(), self.out_dim()),
            });
        }
        let mut h = x;
        for (l, wb) in self.layers.iter().zip(params.vars.chunks(2)) {
            let z = g.matmul(h, wb[0])?;
            let z = g.add_row(z, wb[1])?;
            h = l.activation.record(g, z);
        }
        Ok(h)
    }

    /// Like [`Mlp::forward`] but stops before a final sigmoid, for use with
    /// [`Graph::bce_with_logits`].
    pub fn forward_logits(&self, g: &mut Graph, params: &BoundParams, x: Var) -> Result<Var> {
        let Some(last) = self.layers.last() else {
            return Err(Error::Contract("forward_logits on an empty network".into()));
        };
        if last.activation != Activation::Sigmoid {
            return Err(Error::Contract(
                "forward_logits needs a sigmoid output layer".into(),
            ));
        }
        let in_cols = g.value(x).cols();
        if in_cols != self.in_dim() {
            return Err(Error::Dimension {
                op: "mlp forward",
                lhs: g.value(x).shape(),
                rhs: (self.in_dim(), self.out_dim()),
            });
        }
        let n = self.layers.len();
        let mut h = x;
        for (i, (l, wb)) in self.layers.iter().zip(params.vars.chunks(2)).enumerate() {
            let z = g.matmul(h, wb[0])?;
            h = g.add_row(z, wb[1])?;
            if i + 1 < n {
                h = l.activation.record(g, h);
            }
        }
        Ok(h)
    }

    /// Graph-free inference; bit-identical to [`Mlp::forward`].
    pub fn forward_value(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(Error::Dimension {
                op: "mlp forward",
                lhs: x.shape(),
                rhs: (self.in_dim(), self.out_dim()),
            });
        }
        let mut h = x.clone();
        for l in &self.layers {
            h = l.forward_value(&h)?;
        }
        Ok(h)
    }

    /// Accumulated gradients of bound parameters, in `params_mut` order.
    /// Zero matrices for parameters that were bound frozen.
    pub fn grads(&self, g: &Graph, params: &BoundParams) -> Vec<Matrix> {
        params
            .vars
            .iter()
            .map(|&v| match g.grad(v) {
                Some(m) => m.clone(),
                None => {
                    let (r, c) = g.value(v).shape();
                    Matrix::zeros(r, c)
                }
            })
            .collect()
    }

    pub fn params(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.params().iter().map(|m| m.shape()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|m| m.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_shape_and_bit_identical_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new(&[5, 4, 3], Activation::LeakyRelu, Activation::Sigmoid, &mut rng);
        let x = Matrix::from_vec(7, 5, (0..35).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let mut g = Graph::new();
        let p = mlp.bind(&mut g, true);
        let xv = g.constant(x.clone());
        let out = mlp.forward(&mut g, &p, xv).unwrap();
        assert_eq!(g.value(out).shape(), (7, 3));
        assert_eq!(g.value(out), &mlp.forward_value(&x).unwrap());
    }

    #[test]
    fn glorot_bounds_and_seeded_init() {
        let mut a = ChaCha8Rng::seed_from_u64(11);
        let mut b = ChaCha8Rng::seed_from_u64(11);
        let la = DenseLayer::new(10, 6, Activation::Identity, &mut a);
        let lb = DenseLayer::new(10, 6, Activation::Identity, &mut b);
        assert_eq!(la, lb);
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(la.weight.data().iter().all(|w| w.abs() <= limit));
        assert!(la.bias.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn width_mismatch_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(&[3, 2], Activation::Identity, Activation::Identity, &mut rng);
        assert!(matches!(
            mlp.forward_value(&Matrix::zeros(1, 4)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn activation_codes_round_trip() {
        for a in [
            Activation::Identity,
            Activation::Relu,
            Activation::LeakyRelu,
            Activation::Sigmoid,
        ] {
            assert_eq!(Activation::from_code(a.code()), Some(a));
        }
        assert_eq!(Activation::from_code(9), None);
    }
}
