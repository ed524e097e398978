use rand::Rng;

use super::mlp::Linear;
use crate::autodiff::{Tape, Var};
use crate::error::{Result, TuvfError};
use crate::params::ParamStore;
use crate::Tensor;

pub const DEMOD_EPS: f64 = 1e-8;

/// Modulated fully connected layer.
///
/// The style affine produces one scale per input channel, `s = A(style) + 1`.
/// The weight `W: [in, out]` becomes `W'[i, o] = W[i, o] s[i]`; with
/// demodulation every output column is divided by `sqrt(sum_i W'[i, o]^2 + eps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModFcLayer {
    pub prefix: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub style_dim: usize,
    pub demodulate: bool,
}

impl ModFcLayer {
    pub fn new(prefix: impl Into<String>, in_dim: usize, out_dim: usize, style_dim: usize, demodulate: bool) -> Self {
        ModFcLayer {
            prefix: prefix.into(),
            in_dim,
            out_dim,
            style_dim,
            demodulate,
        }
    }

    pub fn linear(&self) -> Linear {
        Linear::new(self.prefix.clone(), self.in_dim, self.out_dim)
    }

    pub fn affine(&self) -> Linear {
        Linear::new(format!("{}.affine", self.prefix), self.style_dim, self.in_dim)
    }

    /// Weights uniform in `±1/sqrt(in)`, affine zeroed so modulation starts neutral.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.linear().init(store, rng);
        let a = self.affine();
        store.init_uniform(a.weight_name(), &[self.style_dim, self.in_dim], self.style_dim, rng);
        store.init_const(a.bias_name(), &[self.in_dim], 0.0);
    }

    /// Per-input scales `s` for a style vector.
    pub fn scales(&self, tape: &mut Tape, store: &ParamStore, style: Var) -> Result<Var> {
        let n = tape.value(style).len();
        if n != self.style_dim {
            return Err(TuvfError::shape(
                "modfc",
                format!("{} expects style dim {}, got {n}", self.prefix, self.style_dim),
            ));
        }
        let style = tape.reshape(style, &[1, self.style_dim])?;
        let a = self.affine().forward(tape, store, style)?;
        let s = tape.offset(a, 1.0)?;
        tape.reshape(s, &[self.in_dim, 1])
    }

    /// Effective weight after modulation and optional demodulation.
    pub fn effective_weight(&self, tape: &mut Tape, store: &ParamStore, style: Var) -> Result<Var> {
        let s = self.scales(tape, store, style)?;
        let w = tape.param(store, &self.linear().weight_name())?;
        let wm = tape.mul(w, s)?;
        if !self.demodulate {
            return Ok(wm);
        }
        let sq = tape.square(wm)?;
        let col = tape.sum_axis(sq, 0)?;
        let col = tape.offset(col, DEMOD_EPS)?;
        let d = tape.sqrt(col)?;
        tape.div(wm, d)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, style: Var) -> Result<Var> {
        let xs = tape.shape(x);
        if xs.len() != 2 || xs[1] != self.in_dim {
            return Err(TuvfError::shape(
                "modfc",
                format!("{} expects [batch, {}], got {xs:?}", self.prefix, self.in_dim),
            ));
        }
        let w = self.effective_weight(tape, store, style)?;
        let b = tape.param(store, &self.linear().bias_name())?;
        let xw = tape.matmul(x, w)?;
        tape.add(xw, b)
    }
}

/// Plain tensor version used by tests and pointwise evaluation checks.
pub fn effective_weight_values(layer: &ModFcLayer, store: &ParamStore, style: &[f64]) -> Result<Tensor> {
    let mut tape = Tape::inference();
    let s = tape.constant(&[style.len()], style.to_vec())?;
    let w = layer.effective_weight(&mut tape, store, s)?;
    Ok(tape.tensor(w))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(demod: bool) -> (ModFcLayer, ParamStore) {
        let l = ModFcLayer::new("m", 3, 3, 4, demod);
        let mut s = ParamStore::new();
        l.init(&mut s, &mut crate::rng(5));
        (l, s)
    }

    #[test]
    fn neutral_style_is_plain_linear() {
        let (l, s) = layer(false);
        let mut tape = Tape::new();
        let x = tape.constant(&[2, 3], vec![0.1, 0.2, -0.3, 1.0, -1.0, 0.5]).unwrap();
        let style = tape.constant(&[4], vec![0.0; 4]).unwrap();
        let y = l.forward(&mut tape, &s, x, style).unwrap();
        let z = l.linear().forward(&mut tape, &s, x).unwrap();
        assert_eq!(tape.value(y), tape.value(z));
    }

    #[test]
    fn doubled_scale_identity_weight() {
        let (l, mut s) = layer(false);
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 4] = 1.0;
        }
        s.insert("m.w", Tensor::new(vec![3, 3], eye).unwrap());
        s.insert("m.b", Tensor::zeros(&[3]));
        s.insert("m.affine.b", Tensor::filled(&[3], 1.0));
        let mut tape = Tape::new();
        let x = tape.constant(&[1, 3], vec![1.0, 0.0, 0.0]).unwrap();
        let style = tape.constant(&[4], vec![0.0; 4]).unwrap();
        let y = l.forward(&mut tape, &s, x, style).unwrap();
        assert_eq!(tape.value(y), &[2.0, 0.0, 0.0]);
    }

    #[test]
    fn demodulated_columns_are_unit() {
        let (l, mut s) = layer(true);
        let mut rng = crate::rng(9);
        s.insert("m.affine.w", Tensor::uniform(&[4, 3], 1.0, &mut rng));
        let w = effective_weight_values(&l, &s, &[0.5, -1.0, 0.25, 2.0]).unwrap();
        for o in 0..3 {
            let n: f64 = (0..3).map(|i| w.data()[i * 3 + o].powi(2)).sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn style_dim_mismatch() {
        let (l, s) = layer(true);
        let mut tape = Tape::new();
        let x = tape.constant(&[1, 3], vec![0.0; 3]).unwrap();
        let style = tape.constant(&[2], vec![0.0; 2]).unwrap();
        assert!(l.forward(&mut tape, &s, x, style).is_err());
    }
}
