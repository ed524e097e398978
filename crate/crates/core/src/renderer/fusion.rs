use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;

use super::camera::Camera;
use super::sampling::{pixel_seed, sample_ray, RendererConfig};
use super::SceneGeometry;
use crate::autodiff::{SparseMatrix, Tape, Var};
use crate::error::{Result, TuvfError};
use crate::geometry::vec3::{self, Vec3};
use crate::nets::{Activation, Mlp, MlpSpec};
use crate::params::ParamStore;

pub const RHO_FLOOR: f64 = 1e-8;

/// Normalised inverse-distance weights.
pub fn idw_weights(distances: &[f64]) -> Vec<f64> {
    let rho: Vec<f64> = distances.iter().map(|d| 1.0 / d.max(RHO_FLOOR)).collect();
    let s: f64 = rho.iter().sum();
    rho.iter().map(|r| r / s).collect()
}

/// The two shading networks: `MLP_F` on (feature, offset) pairs and `MLP_C`
/// on the fused feature and optionally the view direction.
#[derive(Debug, Clone)]
pub struct ShadingNets {
    pub mlpf: Mlp,
    pub mlpc: Mlp,
    pub view_dir: bool,
}

impl ShadingNets {
    pub fn new(cfg: &RendererConfig) -> Result<Self> {
        let mlpf = Mlp::new(
            "render.mlpf",
            MlpSpec::new(
                &[cfg.feature_dim + 3, cfg.mlpf_hidden, cfg.mlpf_out],
                Activation::leaky(),
                Activation::leaky(),
            )
            .seeded(cfg.init_seed ^ 0x6d6c_7066),
        )?;
        let c_in = cfg.mlpf_out + if cfg.view_dir { 3 } else { 0 };
        let mlpc = Mlp::new(
            "render.mlpc",
            MlpSpec::new(&[c_in, cfg.mlpc_hidden, 3], Activation::leaky(), Activation::Sigmoid)
                .seeded(cfg.init_seed ^ 0x6d6c_7063),
        )?;
        Ok(ShadingNets {
            mlpf,
            mlpc,
            view_dir: cfg.view_dir,
        })
    }

    pub fn init(&self, store: &mut ParamStore) {
        self.mlpf.init(store);
        self.mlpc.init(store);
    }

    /// Fused features `[m, mlpf_out]` for `m` shading points, each with `k`
    /// neighbours. `gathered: [m * k, feature_dim]`, `offsets: [m * k, 3]`,
    /// `weights: [m * k]`.
    pub fn fuse(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        gathered: Var,
        offsets: Vec<f64>,
        weights: Vec<f64>,
        k: usize,
    ) -> Result<Var> {
        let mk = tape.shape(gathered)[0];
        if mk % k != 0 || offsets.len() != mk * 3 || weights.len() != mk {
            return Err(TuvfError::shape("fuse_features", format!("{mk} rows for k={k}")));
        }
        let off = tape.constant(&[mk, 3], offsets)?;
        let inp = tape.concat(&[gathered, off], 1)?;
        let h = self.mlpf.forward(tape, store, inp)?;
        let w = tape.constant(&[mk, 1], weights)?;
        let hw = tape.mul(h, w)?;
        let width = self.mlpf.out_dim();
        let hw = tape.reshape(hw, &[mk / k, k, width])?;
        tape.sum_axis(hw, 1)
    }

    /// Colours `[m, 3]` in `[0, 1]` from fused features and unit view directions.
    pub fn shade(&self, tape: &mut Tape, store: &ParamStore, fused: Var, dirs: Vec<f64>) -> Result<Var> {
        let m = tape.shape(fused)[0];
        let inp = if self.view_dir {
            let d = tape.constant(&[m, 3], dirs)?;
            tape.concat(&[fused, d], 1)?
        } else {
            fused
        };
        self.mlpc.forward(tape, store, inp)
    }
}

/// A shading point selected on some pixel's ray, with its surface neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadeSample {
    pub pixel: usize,
    pub weight: f64,
    pub position: Vec3,
    pub dir: Vec3,
    pub neighbors: Vec<usize>,
    pub offsets: Vec<Vec3>,
    pub idw: Vec<f64>,
}

/// Everything about a render that does not depend on texture or shading
/// parameters: ray samples, selected points and their neighbour sets.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderPlan {
    pub n_pixels: usize,
    pub k: usize,
    pub samples: Vec<ShadeSample>,
    /// Sum of selected weights per pixel.
    pub alpha: Vec<f64>,
}

impl RenderPlan {
    /// Plans one pixel per entry of `coords` (continuous frame coordinates).
    pub fn build(scene: &SceneGeometry, cam: &Camera, coords: &[(f64, f64)], cfg: &RendererConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.k;
        if k > scene.len() {
            return Err(TuvfError::invalid(format!("k={k} exceeds {} surface points", scene.len())));
        }
        let per_pixel: Vec<Vec<ShadeSample>> = coords
            .par_iter()
            .enumerate()
            .map(|(pixel, &(px, py))| {
                let ray = cam.ray_through(px, py);
                let batch = sample_ray(&ray, &scene.grid, cfg, pixel_seed(seed, px, py));
                batch
                    .selected
                    .iter()
                    .zip(&batch.selected_weights)
                    .map(|(&i, &w)| {
                        let x = batch.positions[i];
                        let found = scene.knn.knn(x, k).expect("index is non-empty");
                        let neighbors: Vec<usize> = found.iter().map(|f| f.0).collect();
                        let offsets = neighbors.iter().map(|&j| vec3::sub(scene.positions[j], x)).collect();
                        let idw = idw_weights(&found.iter().map(|f| f.1).collect::<Vec<_>>());
                        ShadeSample {
                            pixel,
                            weight: w,
                            position: x,
                            dir: ray.dir,
                            neighbors,
                            offsets,
                            idw,
                        }
                    })
                    .collect()
            })
            .collect();
        let mut alpha = vec![0.0; coords.len()];
        let samples: Vec<ShadeSample> = per_pixel.into_iter().flatten().collect();
        for s in &samples {
            alpha[s.pixel] += s.weight;
        }
        Ok(RenderPlan {
            n_pixels: coords.len(),
            k,
            samples,
            alpha,
        })
    }

    pub fn neighbor_indices(&self) -> Vec<usize> {
        self.samples.iter().flat_map(|s| s.neighbors.iter().copied()).collect()
    }

    /// Pixels `[n_pixels, 3]` composited over `background`, recorded on
    /// `tape` from a feature table `field: [n_vertices, feature_dim]`.
    pub fn shade(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        nets: &ShadingNets,
        field: Var,
        background: [f64; 3],
    ) -> Result<ShadedPixels> {
        let p = self.n_pixels;
        let mut bg = Vec::with_capacity(p * 3);
        for c in background {
            bg.extend(self.alpha.iter().map(|a| c * (1.0 - a)));
        }
        let bg = tape.constant(&[3, p], bg)?;
        if self.samples.is_empty() {
            let rgb = tape.transpose(bg)?;
            return Ok(ShadedPixels { rgb, gathered: None });
        }
        let idx = self.neighbor_indices();
        let gathered = tape.gather_rows(field, &idx)?;
        let offsets: Vec<f64> = self.samples.iter().flat_map(|s| s.offsets.iter().flatten().copied()).collect();
        let weights: Vec<f64> = self.samples.iter().flat_map(|s| s.idw.iter().copied()).collect();
        let fused = nets.fuse(tape, store, gathered, offsets, weights, self.k)?;
        let dirs: Vec<f64> = self.samples.iter().flat_map(|s| s.dir).collect();
        let colors = nets.shade(tape, store, fused, dirs)?;
        let ct = tape.transpose(colors)?;
        let mut rows = vec![Vec::new(); p];
        for (m, s) in self.samples.iter().enumerate() {
            rows[s.pixel].push((m, s.weight));
        }
        let comp = Arc::new(SparseMatrix::from_rows(self.samples.len(), rows));
        let fg = tape.sparse(ct, comp)?;
        let out = tape.add(fg, bg)?;
        let rgb = tape.transpose(out)?;
        Ok(ShadedPixels {
            rgb,
            gathered: Some(gathered),
        })
    }

    /// Composites fixed per-surface-point colours with the same selection and
    /// inverse-distance weights. Used for procedurally coloured references.
    pub fn shade_reference(&self, colors: &[[f64; 3]], background: [f64; 3]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_pixels * 3);
        for a in &self.alpha {
            out.extend(background.iter().map(|c| c * (1.0 - a)));
        }
        for s in &self.samples {
            for (j, w) in s.neighbors.iter().zip(&s.idw) {
                for c in 0..3 {
                    out[s.pixel * 3 + c] += s.weight * w * colors[*j][c];
                }
            }
        }
        out
    }
}

pub struct ShadedPixels {
    pub rgb: Var,
    /// Feature rows as read by fusion, one per (shading point, neighbour).
    pub gathered: Option<Var>,
}

/// Feature rows consumed by a render, keyed by UV index, stored as f64 bit
/// patterns so comparisons are exact.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureLog {
    pub rows: BTreeMap<usize, Vec<u64>>,
}

impl FeatureLog {
    pub fn record(&mut self, indices: &[usize], gathered: &[f64], dim: usize) {
        for (r, &i) in indices.iter().enumerate() {
            let bits: Vec<u64> = gathered[r * dim..(r + 1) * dim].iter().map(|v| v.to_bits()).collect();
            self.rows.entry(i).or_insert(bits);
        }
    }

    pub fn merge(&mut self, other: FeatureLog) {
        for (k, v) in other.rows {
            self.rows.entry(k).or_insert(v);
        }
    }

    /// True when every index present in both logs carries identical bits.
    pub fn consistent_with(&self, other: &FeatureLog) -> bool {
        self.rows
            .iter()
            .all(|(k, v)| other.rows.get(k).is_none_or(|w| w == v))
    }

    pub fn shared_indices(&self, other: &FeatureLog) -> usize {
        self.rows.keys().filter(|k| other.rows.contains_key(k)).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idw_cases() {
        let w = idw_weights(&[1.0, 3.0]);
        assert!((w[0] - 0.75).abs() < 1e-12 && (w[1] - 0.25).abs() < 1e-12);
        assert_eq!(idw_weights(&[0.4]), vec![1.0]);
        let w = idw_weights(&[0.0, 0.01, 0.02, 0.5]);
        assert!(w[0] >= 0.9999);
    }

    #[test]
    fn zero_final_layer_is_grey() {
        let cfg = RendererConfig::default();
        let nets = ShadingNets::new(&cfg).unwrap();
        let mut store = ParamStore::new();
        nets.init(&mut store);
        let last = nets.mlpc.last();
        store.init_const(last.weight_name(), &[last.in_dim, 3], 0.0);
        store.init_const(last.bias_name(), &[3], 0.0);
        let mut tape = Tape::new();
        let f = tape.constant(&[2, cfg.mlpf_out], vec![0.3; 2 * cfg.mlpf_out]).unwrap();
        let c = nets.shade(&mut tape, &store, f, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert!(tape.value(c).iter().all(|&v| v == 0.5));
    }
}
