//! Bidirectional squared Chamfer distance, averaged per direction.

use rayon::prelude::*;

use super::kdtree::KnnIndex;
use super::vec3::{self, Vec3};
use crate::autodiff::{CustomOp, Tape, Var};
use crate::error::{Result, TuvfError};

/// Nearest index in `target` for every point of `queries`.
fn nearest_all(queries: &[Vec3], target: &KnnIndex) -> Vec<usize> {
    queries
        .par_iter()
        .map(|q| target.nearest(*q).map(|(i, _)| i).expect("non-empty index"))
        .collect()
}

fn check_non_empty(a: &[Vec3], b: &[Vec3]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(TuvfError::invalid("chamfer distance of an empty cloud"));
    }
    Ok(())
}

/// `mean_a min_b |a-b|^2 + mean_b min_a |a-b|^2`.
pub fn chamfer_distance(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    check_non_empty(a, b)?;
    let (ia, ib) = (KnnIndex::new(a), KnnIndex::new(b));
    let a_to_b = nearest_all(a, &ib);
    let b_to_a = nearest_all(b, &ia);
    let fwd: f64 = a.iter().zip(&a_to_b).map(|(p, &j)| vec3::dist2(*p, b[j])).sum::<f64>() / a.len() as f64;
    let bwd: f64 = b.iter().zip(&b_to_a).map(|(p, &j)| vec3::dist2(*p, a[j])).sum::<f64>() / b.len() as f64;
    Ok(fwd + bwd)
}

struct ChamferBackward {
    a_to_b: Vec<usize>,
    b_to_a: Vec<usize>,
    target: Vec<Vec3>,
}

impl CustomOp for ChamferBackward {
    fn name(&self) -> &'static str {
        "chamfer"
    }

    fn backward(&self, inputs: &[&[f64]], _output: &[f64], g: &[f64], _needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let a = inputs[0];
        let (na, nb) = (self.a_to_b.len() as f64, self.b_to_a.len() as f64);
        let mut ga = vec![0.0; a.len()];
        for (i, &j) in self.a_to_b.iter().enumerate() {
            for c in 0..3 {
                ga[3 * i + c] += g[0] * 2.0 * (a[3 * i + c] - self.target[j][c]) / na;
            }
        }
        for (j, &i) in self.b_to_a.iter().enumerate() {
            for c in 0..3 {
                ga[3 * i + c] += g[0] * 2.0 * (a[3 * i + c] - self.target[j][c]) / nb;
            }
        }
        vec![Some(ga)]
    }
}

/// Chamfer distance between the `[n, 3]` tape value `a` and a fixed target,
/// differentiable with respect to `a`.
pub fn chamfer_loss(tape: &mut Tape, a: Var, target: &[Vec3]) -> Result<Var> {
    if tape.shape(a).len() != 2 || tape.shape(a)[1] != 3 {
        return Err(TuvfError::shape("chamfer", format!("expected [n, 3], got {:?}", tape.shape(a))));
    }
    let pts = vec3::unflatten(tape.value(a));
    check_non_empty(&pts, target)?;
    let (ia, ib) = (KnnIndex::new(&pts), KnnIndex::new(target));
    let a_to_b = nearest_all(&pts, &ib);
    let b_to_a = nearest_all(target, &ia);
    let fwd: f64 = pts.iter().zip(&a_to_b).map(|(p, &j)| vec3::dist2(*p, target[j])).sum::<f64>() / pts.len() as f64;
    let bwd: f64 = target.iter().zip(&b_to_a).map(|(p, &j)| vec3::dist2(*p, pts[j])).sum::<f64>() / target.len() as f64;
    let op = ChamferBackward {
        a_to_b,
        b_to_a,
        target: target.to_vec(),
    };
    tape.custom(&[a], vec![], vec![fwd + bwd], Box::new(op))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_clouds() {
        let a = vec![[0.1, 0.2, 0.3], [0.4, -0.1, 0.0]];
        assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn single_points() {
        let d = chamfer_distance(&[[0.0, 0.0, 0.0]], &[[1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(d, 2.0);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(chamfer_distance(&[], &[[0.0; 3]]).is_err());
    }
}
