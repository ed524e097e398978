//! Central finite-difference gradient checks.
//!
//! The finite-difference side only evaluates forward values, so it shares no
//! code with the backward rules it checks.

use rand::seq::index::sample;
use rand::Rng;

use super::{Tape, Var};
use crate::error::{Result, TuvfError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    pub rel_tol: f64,
    /// Absolute differences at or below this pass regardless of `rel_tol`.
    pub abs_floor: f64,
    /// Maximum number of coordinates probed across all inputs.
    pub max_coords: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            rel_tol: 1e-4,
            abs_floor: 1e-6,
            max_coords: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failures: usize,
    /// Worst relative error over coordinates with a gradient above the floor.
    pub max_rel_err: f64,
    /// `(input, index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }
}

/// Relative error with the convention used throughout the test suite.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn eval_loss<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::inference();
    let vars = inputs
        .iter()
        .map(|t| tape.constant_tensor(t))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    Ok(tape.scalar(out))
}

/// Compares the tape gradient of `f(inputs)` against central differences on
/// a random subset of coordinates. Inputs with `requires_grad == false` are
/// held fixed.
pub fn check<F>(inputs: &[Tensor], f: F, cfg: GradCheckConfig, rng: &mut impl Rng) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = inputs.iter().map(|t| tape.leaf(t)).collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(TuvfError::NotScalar(tape.shape(out).to_vec()));
    }
    let grads = tape.backward(out)?;

    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .filter(|(_, t)| t.requires_grad)
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect();
    let picked: Vec<(usize, usize)> = if coords.len() <= cfg.max_coords {
        coords
    } else {
        let mut idx = sample(rng, coords.len(), cfg.max_coords).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|k| coords[k]).collect()
    };

    let mut report = GradCheckReport {
        checked: 0,
        failures: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, j) in picked {
        let analytic = grads.wrt(vars[i]).map_or(0.0, |g| g[j]);
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = orig + cfg.step;
        let plus = eval_loss(&f, &work)?;
        work[i].data_mut()[j] = orig - cfg.step;
        let minus = eval_loss(&f, &work)?;
        work[i].data_mut()[j] = orig;
        let numeric = (plus - minus) / (2.0 * cfg.step);

        let diff = (analytic - numeric).abs();
        let err = rel_err(analytic, numeric);
        report.checked += 1;
        if diff > cfg.abs_floor && err >= cfg.rel_tol {
            report.failures += 1;
        }
        // Coordinates whose gradient is below the floor on both sides say nothing.
        if analytic.abs().max(numeric.abs()) > cfg.abs_floor && err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst = Some((i, j, analytic, numeric));
        }
    }
    Ok(report)
}
