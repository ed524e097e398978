use rand::{Rng, SeedableRng};

use super::camera::Ray;
use crate::dpsr::IndicatorGrid;
use crate::error::{Result, TuvfError};
use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransmittanceMode {
    /// `T_i = prod_{j<i} (1 - alpha_j)`.
    Standard,
    /// `T_i = exp(-sum_{j<i} alpha_j delta_j)`.
    ExpSum,
}

impl TransmittanceMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(TransmittanceMode::Standard),
            "exp-sum" => Ok(TransmittanceMode::ExpSum),
            other => Err(TuvfError::Config(format!(
                "unknown transmittance mode {other:?} (expected standard or exp-sum)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TransmittanceMode::Standard => "standard",
            TransmittanceMode::ExpSum => "exp-sum",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RendererConfig {
    pub gamma: f64,
    pub coarse_samples: usize,
    pub shading_points: usize,
    pub k: usize,
    pub near: f64,
    pub far: f64,
    pub weight_eps: f64,
    pub background: [f64; 3],
    pub transmittance: TransmittanceMode,
    pub view_dir: bool,
    pub jitter: bool,
    pub feature_dim: usize,
    pub mlpf_hidden: usize,
    pub mlpf_out: usize,
    pub mlpc_hidden: usize,
    pub tile: usize,
    pub init_seed: u64,
}

impl Default for RendererConfig {
    fn default() -> Self {
        RendererConfig {
            gamma: 5e-4,
            coarse_samples: 256,
            shading_points: 3,
            k: 4,
            near: 1.0,
            far: 3.0,
            weight_eps: 1e-4,
            background: [1.0, 1.0, 1.0],
            transmittance: TransmittanceMode::Standard,
            view_dir: true,
            jitter: true,
            feature_dim: 32,
            mlpf_hidden: 64,
            mlpf_out: 32,
            mlpc_hidden: 64,
            tile: 32,
            init_seed: 0,
        }
    }
}

impl RendererConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TuvfError::Config(m));
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("render.gamma must be > 0, got {}", self.gamma));
        }
        if self.coarse_samples == 0 || self.shading_points == 0 || self.shading_points > self.coarse_samples {
            return bad("render.shading_points must lie in 1..=render.coarse_samples".into());
        }
        if self.k == 0 {
            return bad("render.k must be >= 1".into());
        }
        if !(self.near >= 0.0 && self.near < self.far) {
            return bad(format!("render.near ({}) must be >= 0 and below render.far ({})", self.near, self.far));
        }
        if !(self.weight_eps >= 0.0) {
            return bad("render.weight_eps must be >= 0".into());
        }
        if self.tile == 0 {
            return bad("render.tile must be positive".into());
        }
        if self.feature_dim == 0 || self.mlpf_hidden == 0 || self.mlpf_out == 0 || self.mlpc_hidden == 0 {
            return bad("render network widths must be positive".into());
        }
        Ok(())
    }
}

/// `sigma = sigmoid(-chi / gamma) / gamma`.
pub fn density(chi: f64, gamma: f64) -> f64 {
    crate::autodiff::kernels::sigmoid(-chi / gamma) / gamma
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaySampleBatch {
    pub t: Vec<f64>,
    pub positions: Vec<Vec3>,
    pub sigma: Vec<f64>,
    pub delta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub transmittance: Vec<f64>,
    pub weights: Vec<f64>,
    /// Chosen shading samples in depth order.
    pub selected: Vec<usize>,
    /// Weights of `selected`, rescaled to sum to `min(1, sum(weights))`.
    pub selected_weights: Vec<f64>,
}

/// Opacity, transmittance and weight per sample.
pub fn composite_weights(sigma: &[f64], delta: &[f64], mode: TransmittanceMode) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = sigma.len();
    let mut alpha = Vec::with_capacity(n);
    let mut trans = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    let mut t = 1.0;
    let mut acc = 0.0f64;
    for i in 0..n {
        let a = 1.0 - (-sigma[i] * delta[i]).exp();
        let ti = match mode {
            TransmittanceMode::Standard => t,
            TransmittanceMode::ExpSum => (-acc).exp(),
        };
        alpha.push(a);
        trans.push(ti);
        w.push(a * ti);
        t *= 1.0 - a;
        acc += a * delta[i];
    }
    (alpha, trans, w)
}

/// Top `count` samples by weight among those above `eps`, in depth order,
/// rescaled so their sum is `min(1, sum(weights))`.
pub fn select_shading(weights: &[f64], count: usize, eps: f64) -> (Vec<usize>, Vec<f64>) {
    let mut valid: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > eps).collect();
    valid.sort_by(|&a, &b| weights[b].partial_cmp(&weights[a]).unwrap().then(a.cmp(&b)));
    valid.truncate(count);
    valid.sort_unstable();
    let picked: f64 = valid.iter().map(|&i| weights[i]).sum();
    if valid.is_empty() || picked == 0.0 {
        return (Vec::new(), Vec::new());
    }
    let total: f64 = weights.iter().sum::<f64>().min(1.0);
    let scale = total / picked;
    let w = valid.iter().map(|&i| weights[i] * scale).collect();
    (valid, w)
}

fn inside_cube(p: Vec3) -> bool {
    p.iter().all(|c| (-0.5..=0.5).contains(c))
}

/// Stratified samples along `ray`; `jitter_seed` is used only when jitter is on.
pub fn sample_ray(ray: &Ray, grid: &IndicatorGrid, cfg: &RendererConfig, jitter_seed: u64) -> RaySampleBatch {
    let n = cfg.coarse_samples;
    let bin = (cfg.far - cfg.near) / n as f64;
    let mut rng = crate::Rng::seed_from_u64(jitter_seed);
    let t: Vec<f64> = (0..n)
        .map(|i| {
            let u = if cfg.jitter { rng.random::<f64>() } else { 0.5 };
            cfg.near + (i as f64 + u) * bin
        })
        .collect();
    let positions: Vec<Vec3> = t.iter().map(|&ti| ray.at(ti)).collect();
    let sigma: Vec<f64> = positions
        .iter()
        .map(|&p| if inside_cube(p) { density(grid.query(p), cfg.gamma) } else { 0.0 })
        .collect();
    let delta = vec![bin; n];
    let (alpha, transmittance, weights) = composite_weights(&sigma, &delta, cfg.transmittance);
    let (selected, selected_weights) = select_shading(&weights, cfg.shading_points, cfg.weight_eps);
    RaySampleBatch {
        t,
        positions,
        sigma,
        delta,
        alpha,
        transmittance,
        weights,
        selected,
        selected_weights,
    }
}

/// Deterministic per-pixel seed from a frame seed and continuous pixel coordinates.
pub fn pixel_seed(seed: u64, px: f64, py: f64) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [px.to_bits(), py.to_bits()] {
        h ^= v;
        h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    h
}
