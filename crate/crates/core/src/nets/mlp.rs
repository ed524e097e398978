use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Result, TuvfError};
use crate::params::ParamStore;

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn leaky() -> Self {
        Activation::LeakyRelu(LEAKY_SLOPE)
    }

    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Relu => tape.relu(x),
            Activation::LeakyRelu(s) => tape.leaky_relu(x, s),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Tanh => tape.tanh(x),
        }
    }

    /// Elementwise derivative given the pre-activation, for piecewise-linear
    /// activations only (used to build input gradients explicitly).
    pub fn slope_mask(self, pre: &[f64]) -> Option<Vec<f64>> {
        match self {
            Activation::Identity => Some(vec![1.0; pre.len()]),
            Activation::Relu => Some(pre.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect()),
            Activation::LeakyRelu(s) => Some(pre.iter().map(|&v| if v > 0.0 { 1.0 } else { s }).collect()),
            Activation::Sigmoid | Activation::Tanh => None,
        }
    }
}

/// Affine layer `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub prefix: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(prefix: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Linear {
            prefix: prefix.into(),
            in_dim,
            out_dim,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.prefix)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.prefix)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let bound = 1.0 / (self.in_dim.max(1) as f64).sqrt();
        store.init_uniform(self.weight_name(), &[self.in_dim, self.out_dim], self.in_dim, rng);
        store.insert(
            self.bias_name(),
            crate::Tensor::uniform(&[self.out_dim], bound, rng).with_grad(),
        );
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let width = tape.shape(x).last().copied().unwrap_or(0);
        if tape.shape(x).len() != 2 || width != self.in_dim {
            return Err(TuvfError::shape(
                "linear",
                format!("{} expects [batch, {}], got {:?}", self.prefix, self.in_dim, tape.shape(x)),
            ));
        }
        let w = tape.param(store, &self.weight_name())?;
        let b = tape.param(store, &self.bias_name())?;
        let xw = tape.matmul(x, w)?;
        tape.add(xw, b)
    }
}

/// Layer widths including the input width: `[in, h1, ..., out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub final_activation: Activation,
    pub init_seed: u64,
}

impl MlpSpec {
    pub fn new(widths: &[usize], activation: Activation, final_activation: Activation) -> Self {
        MlpSpec {
            widths: widths.to_vec(),
            activation,
            final_activation,
            init_seed: 0,
        }
    }

    pub fn seeded(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(TuvfError::invalid("an MLP needs at least one layer"));
        }
        if self.widths.contains(&0) {
            return Err(TuvfError::invalid("MLP widths must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(prefix: &str, spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(format!("{prefix}.l{i}"), w[0], w[1]))
            .collect();
        Ok(Mlp { spec, layers })
    }

    pub fn in_dim(&self) -> usize {
        self.spec.widths[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.spec.widths.last().unwrap()
    }

    /// Initialises every layer from the spec's seed.
    pub fn init(&self, store: &mut ParamStore) {
        let mut rng = crate::rng(self.spec.init_seed);
        for l in &self.layers {
            l.init(store, &mut rng);
        }
    }

    pub fn last(&self) -> &Linear {
        self.layers.last().unwrap()
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        self.forward_with_preacts(tape, store, x).map(|(y, _)| y)
    }

    /// Forward pass that also returns each layer's pre-activation.
    pub fn forward_with_preacts(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<(Var, Vec<Var>)> {
        let mut h = x;
        let mut pre = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let a = layer.forward(tape, store, h)?;
            pre.push(a);
            let act = if i + 1 == self.layers.len() {
                self.spec.final_activation
            } else {
                self.spec.activation
            };
            h = act.apply(tape, a)?;
        }
        Ok((h, pre))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    fn store_with(layer: &Linear, w: Vec<f64>, b: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(layer.weight_name(), Tensor::new(vec![layer.in_dim, layer.out_dim], w).unwrap());
        s.insert(layer.bias_name(), Tensor::new(vec![layer.out_dim], b).unwrap());
        s
    }

    #[test]
    fn identity_layer() {
        let mlp = Mlp::new("m", MlpSpec::new(&[3, 3], Activation::Relu, Activation::Identity)).unwrap();
        let s = store_with(&mlp.layers[0], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], vec![0.0; 3]);
        let mut tape = Tape::new();
        let x = tape.constant(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.25, -7.0]).unwrap();
        let y = mlp.forward(&mut tape, &s, x).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn zero_weights_give_bias_rows() {
        let mlp = Mlp::new("m", MlpSpec::new(&[4, 2], Activation::Relu, Activation::Identity)).unwrap();
        let s = store_with(&mlp.layers[0], vec![0.0; 8], vec![0.5, -1.5]);
        let mut tape = Tape::new();
        let x = tape.constant(&[3, 4], (0..12).map(f64::from).collect()).unwrap();
        let y = mlp.forward(&mut tape, &s, x).unwrap();
        assert_eq!(tape.value(y), &[0.5, -1.5, 0.5, -1.5, 0.5, -1.5]);
    }

    #[test]
    fn two_layer_hand_computation() {
        let mlp = Mlp::new("m", MlpSpec::new(&[2, 2, 2], Activation::Relu, Activation::Identity)).unwrap();
        let mut s = store_with(&mlp.layers[0], vec![1.0, -1.0, 2.0, 0.5], vec![0.0, 0.1]);
        s.extend(store_with(&mlp.layers[1], vec![1.0, 2.0, 3.0, -1.0], vec![0.5, 0.0]));
        let mut tape = Tape::new();
        let x = tape.constant(&[2, 2], vec![1.0, 1.0, -1.0, 2.0]).unwrap();
        let y = mlp.forward(&mut tape, &s, x).unwrap();
        // row 0: h = relu([3, -0.4]) = [3, 0]; y = [3 + 0.5, 6] = [3.5, 6]
        // row 1: h = relu([3, 2.1]) ; y = [3 + 6.3 + 0.5, 6 - 2.1] = [9.8, 3.9]
        let expect = [3.5, 6.0, 9.8, 3.9];
        for (a, b) in tape.value(y).iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn width_mismatch() {
        let mlp = Mlp::new("m", MlpSpec::new(&[3, 1], Activation::Relu, Activation::Identity)).unwrap();
        let mut s = ParamStore::new();
        mlp.init(&mut s);
        let mut tape = Tape::new();
        let x = tape.constant(&[1, 2], vec![0.0, 0.0]).unwrap();
        assert!(mlp.forward(&mut tape, &s, x).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(Mlp::new("m", MlpSpec::new(&[3], Activation::Relu, Activation::Identity)).is_err());
        assert!(Mlp::new("m", MlpSpec::new(&[3, 0], Activation::Relu, Activation::Identity)).is_err());
    }
}
