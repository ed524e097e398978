use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Result, TuvfError};

/// Square crop of a frame: side `scale` (fraction of the frame), top-left at
/// `(u, v)` in normalised frame coordinates, sampled at `resolution` pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchSpec {
    pub scale: f64,
    pub u: f64,
    pub v: f64,
    pub resolution: usize,
}

impl PatchSpec {
    pub fn full(resolution: usize) -> Self {
        PatchSpec {
            scale: 1.0,
            u: 0.0,
            v: 0.0,
            resolution,
        }
    }

    pub fn fits(&self) -> bool {
        let tol = 1e-12;
        self.scale > 0.0
            && self.scale <= 1.0
            && self.u >= 0.0
            && self.v >= 0.0
            && self.u + self.scale <= 1.0 + tol
            && self.v + self.scale <= 1.0 + tol
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || !self.fits() {
            return Err(TuvfError::invalid(format!("patch {self:?} does not fit inside the frame")));
        }
        Ok(())
    }

    /// Continuous frame coordinates of the patch pixel centres, row-major.
    pub fn frame_coords(&self, width: usize, height: usize) -> Vec<(f64, f64)> {
        let p = self.resolution as f64;
        let mut out = Vec::with_capacity(self.resolution * self.resolution);
        for j in 0..self.resolution {
            for i in 0..self.resolution {
                let x = (self.u + (i as f64 + 0.5) / p * self.scale) * width as f64;
                let y = (self.v + (j as f64 + 0.5) / p * self.scale) * height as f64;
                out.push((x, y));
            }
        }
        out
    }

    /// Conditioning vector `(s, u, v)` seen by the discriminator.
    pub fn condition(&self) -> [f64; 3] {
        [self.scale, self.u, self.v]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchConfig {
    pub resolution: usize,
    pub min_scale: f64,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            resolution: 32,
            min_scale: 0.125,
            beta_start: 1e-4,
            beta_end: 0.8,
        }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 {
            return Err(TuvfError::Config("gan.patch must be positive".into()));
        }
        if !(self.min_scale > 0.0 && self.min_scale <= 1.0) {
            return Err(TuvfError::Config(format!("gan.min_scale must lie in (0, 1], got {}", self.min_scale)));
        }
        if !(self.beta_start > 0.0 && self.beta_end > 0.0) {
            return Err(TuvfError::Config("gan.beta_start and gan.beta_end must be > 0".into()));
        }
        Ok(())
    }

    /// Second Beta shape parameter at `progress`, linear between the endpoints.
    pub fn beta_at(&self, progress: f64) -> f64 {
        self.beta_start + (self.beta_end - self.beta_start) * progress
    }
}

/// Scale `s = s_min + (1 - s_min) x` with `x ~ Beta(1, b(progress))`, so
/// early patches cover the whole frame; the offset is uniform over the valid range.
pub fn sample_patch_spec(rng: &mut impl Rng, progress: f64, cfg: &PatchConfig) -> Result<PatchSpec> {
    if !(0.0..=1.0).contains(&progress) {
        return Err(TuvfError::invalid(format!("progress must lie in [0, 1], got {progress}")));
    }
    let beta = Beta::new(1.0, cfg.beta_at(progress)).map_err(|e| TuvfError::invalid(format!("beta distribution: {e}")))?;
    let x: f64 = beta.sample(rng);
    let x = if x.is_finite() { x.clamp(0.0, 1.0) } else { 1.0 };
    let scale = (cfg.min_scale + (1.0 - cfg.min_scale) * x).min(1.0);
    let room = 1.0 - scale;
    let (u, v) = if room > 0.0 {
        (rng.random::<f64>() * room, rng.random::<f64>() * room)
    } else {
        (0.0, 0.0)
    };
    Ok(PatchSpec {
        scale,
        u,
        v,
        resolution: cfg.resolution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_patch_is_the_frame() {
        let p = PatchSpec::full(2);
        assert!(p.fits());
        assert_eq!(p.frame_coords(4, 4), vec![(1.0, 1.0), (3.0, 1.0), (1.0, 3.0), (3.0, 3.0)]);
    }

    #[test]
    fn progress_out_of_range() {
        assert!(sample_patch_spec(&mut crate::rng(0), 1.5, &PatchConfig::default()).is_err());
    }

    #[test]
    fn overhanging_patch_is_rejected() {
        let p = PatchSpec {
            scale: 0.5,
            u: 0.6,
            v: 0.0,
            resolution: 8,
        };
        assert!(p.validate().is_err());
    }
}
