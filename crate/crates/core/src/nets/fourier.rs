use std::f64::consts::PI;

use crate::autodiff::{Tape, Var};
use crate::error::{Result, TuvfError};

/// Octave Fourier features: `[x?, sin(2^0 π x), cos(2^0 π x), ..., sin(2^(n-1) π x), cos(2^(n-1) π x)]`,
/// each block spanning all input dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourierEncoding {
    pub in_dim: usize,
    pub n_freq: usize,
    pub include_input: bool,
}

impl FourierEncoding {
    pub fn new(in_dim: usize, n_freq: usize, include_input: bool) -> Self {
        FourierEncoding {
            in_dim,
            n_freq,
            include_input,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.in_dim * (2 * self.n_freq + usize::from(self.include_input))
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let s = tape.shape(x);
        if s.len() != 2 || s[1] != self.in_dim {
            return Err(TuvfError::shape("fourier_encode", format!("expected [batch, {}], got {s:?}", self.in_dim)));
        }
        let mut parts = Vec::with_capacity(2 * self.n_freq + 1);
        if self.include_input {
            parts.push(x);
        }
        for k in 0..self.n_freq {
            let scaled = tape.scale(x, 2f64.powi(k as i32) * PI)?;
            parts.push(tape.sin(scaled)?);
            parts.push(tape.cos(scaled)?);
        }
        tape.concat(&parts, 1)
    }

    /// Encoding of one point without a tape.
    pub fn encode_point(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.out_dim());
        if self.include_input {
            out.extend_from_slice(x);
        }
        for k in 0..self.n_freq {
            let f = 2f64.powi(k as i32) * PI;
            out.extend(x.iter().map(|v| (f * v).sin()));
            out.extend(x.iter().map(|v| (f * v).cos()));
        }
        out
    }
}
