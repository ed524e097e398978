//! Pixel-space linear maps on square patches: area resampling, the
//! translate/scale warp and Gaussian blur.
//!
//! Patches live on the tape as channel planes `[planes, res * res]`
//! (row-major pixels), so every map here is a [`SparseMatrix`] applied along
//! the last axis.

use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{SparseMatrix, Tape, Var};
use crate::error::{Result, TuvfError};

/// 1-D area-overlap weights from `src` cells onto `dst` cells.
fn area_1d(src: usize, dst: usize) -> SparseMatrix {
    let ratio = src as f64 / dst as f64;
    let rows = (0..dst)
        .map(|j| {
            let (a, b) = (j as f64 * ratio, (j + 1) as f64 * ratio);
            let first = a.floor() as usize;
            let last = (b.ceil() as usize).min(src);
            (first..last)
                .filter_map(|i| {
                    let overlap = b.min(i as f64 + 1.0) - a.max(i as f64);
                    (overlap > 1e-12).then_some((i, overlap / ratio))
                })
                .collect()
        })
        .collect();
    SparseMatrix::from_rows(src, rows)
}

/// Maps one 1-D operator onto row-major `res x res` planes: `along_x` acts
/// within each row, otherwise within each column.
fn lift(op: &SparseMatrix, res: usize, along_x: bool) -> SparseMatrix {
    let id = SparseMatrix::identity(res);
    if along_x {
        id.kron(op)
    } else {
        op.kron(&id)
    }
}

/// Area resampling of `src x src` planes to `dst x dst`.
pub fn area_resample(src: usize, dst: usize) -> SparseMatrix {
    let a = area_1d(src, dst);
    a.kron(&a)
}

/// Normalised Gaussian taps on `[-ceil(3 sigma), ceil(3 sigma)]`; `[1]` for sigma 0.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

fn blur_1d(res: usize, sigma: f64) -> SparseMatrix {
    let taps = gaussian_kernel(sigma);
    let r = (taps.len() / 2) as i64;
    let rows = (0..res as i64)
        .map(|i| {
            let mut acc = vec![0.0; res];
            for (t, w) in taps.iter().enumerate() {
                let j = (i + t as i64 - r).clamp(0, res as i64 - 1) as usize;
                acc[j] += w;
            }
            acc.into_iter().enumerate().filter(|(_, w)| *w != 0.0).collect()
        })
        .collect();
    SparseMatrix::from_rows(res, rows)
}

/// Bilinear warp `out(p) = in(c + (p - c) / scale - shift)` in normalised
/// coordinates, clamp-to-edge.
fn warp_1d(res: usize, scale: f64, shift: f64) -> SparseMatrix {
    let n = res as f64;
    let rows = (0..res)
        .map(|i| {
            let p = (i as f64 + 0.5) / n;
            let src = 0.5 + (p - 0.5) / scale - shift;
            let x = (src * n - 0.5).clamp(0.0, n - 1.0);
            let x0 = x.floor() as usize;
            let f = x - x0 as f64;
            if f == 0.0 || x0 + 1 >= res {
                vec![(x0, 1.0)]
            } else {
                vec![(x0, 1.0 - f), (x0 + 1, f)]
            }
        })
        .collect();
    SparseMatrix::from_rows(res, rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub translate: bool,
    pub scale: bool,
    pub max_shift: f64,
    pub scale_range: (f64, f64),
    /// Blur sigma in patch pixels at the start of training.
    pub blur_sigma: f64,
    /// Images after which the blur has decayed to zero.
    pub blur_images: usize,
}

impl AugmentConfig {
    /// Defaults for a given patch resolution: the blur starts at `60 res / 128`.
    pub fn for_resolution(res: usize) -> Self {
        AugmentConfig {
            translate: true,
            scale: true,
            max_shift: 0.05,
            scale_range: (0.9, 1.1),
            blur_sigma: 60.0 * res as f64 / 128.0,
            blur_images: 5000,
        }
    }

    pub fn disabled() -> Self {
        AugmentConfig {
            translate: false,
            scale: false,
            max_shift: 0.0,
            scale_range: (1.0, 1.0),
            blur_sigma: 0.0,
            blur_images: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.blur_sigma >= 0.0) {
            return Err(TuvfError::Config(format!("gan.blur_sigma must be >= 0, got {}", self.blur_sigma)));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi) || !(self.max_shift >= 0.0) {
            return Err(TuvfError::Config("invalid augmentation ranges".into()));
        }
        if self.blur_images == 0 {
            return Err(TuvfError::Config("gan.blur_images must be positive".into()));
        }
        Ok(())
    }

    /// Linear decay to zero over `blur_images`.
    pub fn sigma_at(&self, images_seen: usize) -> f64 {
        let t = (images_seen as f64 / self.blur_images as f64).min(1.0);
        self.blur_sigma * (1.0 - t)
    }
}

/// One sampled transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub shift: [f64; 2],
    pub scale: f64,
    pub sigma: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        shift: [0.0, 0.0],
        scale: 1.0,
        sigma: 0.0,
    };

    pub fn sample(rng: &mut impl Rng, cfg: &AugmentConfig, images_seen: usize) -> Self {
        let mut p = AugmentParams::IDENTITY;
        if cfg.translate && cfg.max_shift > 0.0 {
            p.shift = [0, 1].map(|_| rng.random_range(-cfg.max_shift..=cfg.max_shift));
        }
        if cfg.scale && cfg.scale_range.0 < cfg.scale_range.1 {
            p.scale = rng.random_range(cfg.scale_range.0..=cfg.scale_range.1);
        }
        p.sigma = cfg.sigma_at(images_seen);
        p
    }
}

/// A sampled augmentation as two separable passes over `res x res` planes.
#[derive(Debug, Clone)]
pub struct Augmentation {
    pub params: AugmentParams,
    pub res: usize,
    along_x: Option<Arc<SparseMatrix>>,
    along_y: Option<Arc<SparseMatrix>>,
}

impl Augmentation {
    pub fn new(params: AugmentParams, res: usize) -> Self {
        let geometric = params.shift != [0.0, 0.0] || params.scale != 1.0;
        let pass = |shift: f64, along_x: bool| -> Option<Arc<SparseMatrix>> {
            let warp = geometric.then(|| warp_1d(res, params.scale, shift));
            let blur = (params.sigma > 0.0).then(|| blur_1d(res, params.sigma));
            let op = match (blur, warp) {
                (Some(b), Some(w)) => b.compose(&w),
                (Some(b), None) => b,
                (None, Some(w)) => w,
                (None, None) => return None,
            };
            Some(Arc::new(lift(&op, res, along_x)))
        };
        Augmentation {
            params,
            res,
            along_x: pass(params.shift[0], true),
            along_y: pass(params.shift[1], false),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.along_x.is_none() && self.along_y.is_none()
    }

    /// Applies the transform to planes `[planes, res * res]`.
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut y = x;
        for op in [&self.along_x, &self.along_y].into_iter().flatten() {
            y = tape.sparse(y, op.clone())?;
        }
        Ok(y)
    }

    pub fn apply_values(&self, planes: &[f64]) -> Vec<f64> {
        let n = self.res * self.res;
        let mut out = planes.to_vec();
        for op in [&self.along_x, &self.along_y].into_iter().flatten() {
            out = out.chunks(n).flat_map(|c| op.apply(c)).collect();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn area_resample_rows_sum_to_one() {
        for (s, d) in [(32, 16), (4, 16), (7, 16), (16, 16)] {
            let m = area_resample(s, d);
            assert_eq!((m.rows(), m.cols()), (d * d, s * s));
            assert!(m.row_sums().iter().all(|r| (r - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn two_to_one_is_box_average() {
        let m = area_resample(4, 2);
        let x: Vec<f64> = (0..16).map(|i| i as f64).collect();
        assert_eq!(m.apply(&x), vec![2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn identity_warp_is_exact() {
        let w = warp_1d(32, 1.0, 0.0);
        assert_eq!(w, SparseMatrix::identity(32));
    }

    #[test]
    fn config_validation() {
        let mut c = AugmentConfig::for_resolution(32);
        assert!((c.blur_sigma - 15.0).abs() < 1e-12);
        c.blur_sigma = -1.0;
        assert!(c.validate().is_err());
    }
}
