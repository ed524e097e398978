//! Spectral Poisson indicator grids.
//!
//! Oriented points are splatted onto a periodic `R^3` lattice with nodes at
//! `-0.5 + i / R`. The Poisson equation `lap(chi) = div(V)` is solved in the
//! Fourier domain with Gaussian smoothing, giving an indicator that is
//! negative inside and positive outside.

mod fft;

use std::f64::consts::PI;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::autodiff::{CustomOp, Tape, Var};
use crate::error::{Result, TuvfError};
use crate::geometry::Vec3;
pub use fft::Fft3;
use fft::{signed_freq, C64};

pub const DEFAULT_RESOLUTION: usize = 128;
pub const DEFAULT_SIGMA: f64 = 2.0;
const CONVENTION: &str = "inside-negative";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpsrConfig {
    pub resolution: usize,
    /// Gaussian smoothing width in grid cells.
    pub sigma: f64,
}

impl Default for DpsrConfig {
    fn default() -> Self {
        DpsrConfig {
            resolution: DEFAULT_RESOLUTION,
            sigma: DEFAULT_SIGMA,
        }
    }
}

impl DpsrConfig {
    pub fn validate(&self) -> Result<()> {
        check_resolution(self.resolution)?;
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(TuvfError::Config(format!("dpsr sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

fn check_resolution(r: usize) -> Result<()> {
    if r < 2 || !r.is_power_of_two() {
        return Err(TuvfError::Config(format!("grid resolution must be a power of two >= 2, got {r}")));
    }
    Ok(())
}

/// Scalar field on the periodic lattice, index `(x * R + y) * R + z`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorGrid {
    pub resolution: usize,
    pub values: Vec<f64>,
}

impl IndicatorGrid {
    pub fn new(resolution: usize, values: Vec<f64>) -> Result<Self> {
        check_resolution(resolution)?;
        if values.len() != resolution.pow(3) {
            return Err(TuvfError::shape("indicator_grid", format!("{} values for R={resolution}", values.len())));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(TuvfError::NonFinite { op: "indicator_grid", index });
        }
        Ok(IndicatorGrid { resolution, values })
    }

    pub fn node(&self, x: usize, y: usize, z: usize) -> f64 {
        let r = self.resolution;
        self.values[(x * r + y) * r + z]
    }

    /// Position of lattice index `i` along any axis.
    pub fn coord(&self, i: usize) -> f64 {
        -0.5 + i as f64 / self.resolution as f64
    }

    /// Trilinear interpolation; coordinates are clamped to `[-0.5, 0.5]`.
    pub fn query(&self, p: Vec3) -> f64 {
        trilinear(&self.values, self.resolution, clamp_point(p))
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
    }

    /// Header lines then little-endian f32 values.
    pub fn dump_bytes(&self) -> Vec<u8> {
        let (lo, hi) = self.min_max();
        let mut out = Vec::with_capacity(self.values.len() * 4 + 128);
        write!(
            out,
            "TUVF-GRID 1\nresolution {}\nmin {lo:e}\nmax {hi:e}\nconvention {CONVENTION}\npayload {}\n",
            self.resolution,
            self.values.len() * 4
        )
        .expect("writing to a Vec");
        for v in &self.values {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn parse_dump(bytes: &[u8], source: &str) -> Result<Self> {
        let err = |line: usize, message: String| TuvfError::Parse {
            source_name: source.to_string(),
            line,
            message,
        };
        let mut pos = 0;
        let mut lines = Vec::new();
        while lines.len() < 6 {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| err(lines.len() + 1, "truncated header".into()))?;
            let line = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| err(lines.len() + 1, "header is not UTF-8".into()))?;
            lines.push(line.to_string());
            pos += end + 1;
        }
        if lines[0] != "TUVF-GRID 1" {
            return Err(err(1, format!("bad magic {:?}", lines[0])));
        }
        let field = |i: usize, key: &str| -> Result<String> {
            lines[i]
                .strip_prefix(key)
                .and_then(|s| s.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| err(i + 1, format!("expected `{key} <value>`")))
        };
        let r: usize = field(1, "resolution")?.parse().map_err(|_| err(2, "bad resolution".into()))?;
        let conv = field(4, "convention")?;
        if conv != CONVENTION {
            return Err(err(5, format!("unknown convention {conv}")));
        }
        let n: usize = field(5, "payload")?.parse().map_err(|_| err(6, "bad payload size".into()))?;
        let payload = &bytes[pos..];
        if payload.len() != n || n != r.pow(3) * 4 {
            return Err(err(6, format!("payload of {} bytes, expected {}", payload.len(), r.pow(3) * 4)));
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        IndicatorGrid::new(r, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.dump_bytes()).map_err(|e| TuvfError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| TuvfError::io(path, e))?;
        IndicatorGrid::parse_dump(&bytes, &path.display().to_string())
    }
}

fn clamp_point(p: Vec3) -> Vec3 {
    [p[0].clamp(-0.5, 0.5), p[1].clamp(-0.5, 0.5), p[2].clamp(-0.5, 0.5)]
}

/// The 8 lattice nodes around `p` with trilinear weights and the weight
/// gradients with respect to `p`. Indices wrap periodically.
pub fn corner_weights(r: usize, p: Vec3) -> [(usize, f64, Vec3); 8] {
    let rf = r as f64;
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let u = (p[a] + 0.5) * rf;
        let i = u.floor();
        frac[a] = u - i;
        base[a] = (i as i64).rem_euclid(r as i64) as usize;
    }
    let mut out = [(0usize, 0.0, [0.0; 3]); 8];
    for (c, slot) in out.iter_mut().enumerate() {
        let bits = [(c >> 2) & 1, (c >> 1) & 1, c & 1];
        let mut w = [0.0; 3];
        let mut dw = [0.0; 3];
        let mut idx = [0usize; 3];
        for a in 0..3 {
            if bits[a] == 1 {
                w[a] = frac[a];
                dw[a] = rf;
            } else {
                w[a] = 1.0 - frac[a];
                dw[a] = -rf;
            }
            idx[a] = (base[a] + bits[a]) % r;
        }
        let weight = w[0] * w[1] * w[2];
        let grad = [dw[0] * w[1] * w[2], w[0] * dw[1] * w[2], w[0] * w[1] * dw[2]];
        *slot = ((idx[0] * r + idx[1]) * r + idx[2], weight, grad);
    }
    out
}

pub fn trilinear(values: &[f64], r: usize, p: Vec3) -> f64 {
    corner_weights(r, p).iter().map(|&(i, w, _)| w * values[i]).sum()
}

fn check_in_grid(points: &[Vec3]) -> Result<()> {
    for (i, p) in points.iter().enumerate() {
        if p.iter().any(|c| !(-0.5..=0.5).contains(c)) {
            return Err(TuvfError::invalid(format!("point {i} at {p:?} lies outside the grid [-0.5, 0.5]^3")));
        }
    }
    Ok(())
}

/// Distributes each normal to its 8 enclosing nodes. Output is component-major
/// `[3, R^3]`.
pub fn splat(points: &[Vec3], normals: &[Vec3], r: usize) -> Result<Vec<f64>> {
    check_resolution(r)?;
    if points.len() != normals.len() {
        return Err(TuvfError::shape("splat", format!("{} points, {} normals", points.len(), normals.len())));
    }
    check_in_grid(points)?;
    let n3 = r * r * r;
    let mut v = vec![0.0; 3 * n3];
    for (p, nrm) in points.iter().zip(normals) {
        for (idx, w, _) in corner_weights(r, *p) {
            for c in 0..3 {
                v[c * n3 + idx] += w * nrm[c];
            }
        }
    }
    Ok(v)
}

struct Filter {
    r: usize,
    sigma: f64,
}

impl Filter {
    /// `-i k_c g(k) / |k|^2` for bin `(a, b, c)`; zero at DC, and the
    /// derivative component is zero on its Nyquist bin.
    fn at(&self, bins: [usize; 3]) -> [C64; 3] {
        let r = self.r;
        let f = bins.map(|m| 2.0 * PI * signed_freq(m, r));
        let k2 = f[0] * f[0] + f[1] * f[1] + f[2] * f[2];
        if k2 == 0.0 {
            return [C64::default(); 3];
        }
        let s = self.sigma / r as f64;
        let g = (-0.5 * s * s * k2).exp();
        let mut h = [C64::default(); 3];
        for a in 0..3 {
            if 2 * bins[a] != r {
                h[a] = C64::new(0.0, -f[a] * g / k2);
            }
        }
        h
    }
}

fn bins_of(i: usize, r: usize) -> [usize; 3] {
    [i / (r * r), (i / r) % r, i % r]
}

/// Raw spectral solve, no normalisation. `v` is component-major `[3, R^3]`.
pub fn spectral_solve_raw(v: &[f64], r: usize, sigma: f64) -> Result<Vec<f64>> {
    check_resolution(r)?;
    let n3 = r * r * r;
    if v.len() != 3 * n3 {
        return Err(TuvfError::shape("poisson_solve", format!("{} values for [3, {r}^3]", v.len())));
    }
    if v.iter().all(|&x| x == 0.0) {
        return Err(TuvfError::invalid("vector field is zero everywhere: no surface to reconstruct"));
    }
    let fft = Fft3::new(r);
    let filter = Filter { r, sigma };
    let comps: Vec<Vec<C64>> = (0..3)
        .map(|c| {
            let mut d: Vec<C64> = v[c * n3..(c + 1) * n3].iter().map(|&x| C64::new(x, 0.0)).collect();
            fft.forward(&mut d);
            d
        })
        .collect();
    let mut chi: Vec<C64> = (0..n3)
        .into_par_iter()
        .map(|i| {
            let h = filter.at(bins_of(i, r));
            h[0] * comps[0][i] + h[1] * comps[1][i] + h[2] * comps[2][i]
        })
        .collect();
    fft.inverse(&mut chi);
    let scale = 1.0 / n3 as f64;
    Ok(chi.into_iter().map(|c| c.re * scale).collect())
}

/// Adjoint of [`spectral_solve_raw`]: maps a grid gradient to `[3, R^3]`.
pub fn spectral_solve_adjoint(g: &[f64], r: usize, sigma: f64) -> Vec<f64> {
    let n3 = r * r * r;
    let fft = Fft3::new(r);
    let filter = Filter { r, sigma };
    let mut gh: Vec<C64> = g.iter().map(|&x| C64::new(x, 0.0)).collect();
    fft.forward(&mut gh);
    let scale = 1.0 / n3 as f64;
    let mut out = vec![0.0; 3 * n3];
    for c in 0..3 {
        let mut d: Vec<C64> = (0..n3)
            .into_par_iter()
            .map(|i| filter.at(bins_of(i, r))[c].conj() * gh[i])
            .collect();
        fft.inverse(&mut d);
        for (o, x) in out[c * n3..(c + 1) * n3].iter_mut().zip(d) {
            *o = x.re * scale;
        }
    }
    out
}

/// Shift so the mean at `points` is zero, then divide by twice the max
/// absolute value. Returns `(values, shift, scale)`.
pub fn normalize_indicator(raw: &[f64], r: usize, points: &[Vec3]) -> Result<(Vec<f64>, f64, f64)> {
    if points.is_empty() {
        return Err(TuvfError::invalid("normalisation needs at least one point"));
    }
    let shift = points.iter().map(|&p| trilinear(raw, r, p)).sum::<f64>() / points.len() as f64;
    let maxabs = raw.iter().map(|v| (v - shift).abs()).fold(0.0, f64::max);
    if maxabs == 0.0 {
        return Err(TuvfError::invalid("indicator is constant"));
    }
    let scale = 1.0 / (2.0 * maxabs);
    Ok((raw.iter().map(|v| (v - shift) * scale).collect(), shift, scale))
}

/// Full pipeline without gradients: splat, solve, normalise.
pub fn indicator_grid(points: &[Vec3], normals: &[Vec3], cfg: &DpsrConfig) -> Result<IndicatorGrid> {
    cfg.validate()?;
    let v = splat(points, normals, cfg.resolution)?;
    let raw = spectral_solve_raw(&v, cfg.resolution, cfg.sigma)?;
    let (values, _, _) = normalize_indicator(&raw, cfg.resolution, points)?;
    IndicatorGrid::new(cfg.resolution, values)
}

// ------------------------------------------------------------------ tape ops

struct SplatOp {
    r: usize,
}

impl CustomOp for SplatOp {
    fn name(&self) -> &'static str {
        "splat"
    }

    fn backward(&self, inputs: &[&[f64]], _output: &[f64], g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (pts, nrm) = (inputs[0], inputs[1]);
        let n3 = self.r.pow(3);
        let n = pts.len() / 3;
        let mut gp = vec![0.0; pts.len()];
        let mut gn = vec![0.0; nrm.len()];
        for i in 0..n {
            let p = [pts[3 * i], pts[3 * i + 1], pts[3 * i + 2]];
            for (idx, w, dw) in corner_weights(self.r, p) {
                let gv = [g[idx], g[n3 + idx], g[2 * n3 + idx]];
                let dot = gv[0] * nrm[3 * i] + gv[1] * nrm[3 * i + 1] + gv[2] * nrm[3 * i + 2];
                for a in 0..3 {
                    gn[3 * i + a] += w * gv[a];
                    gp[3 * i + a] += dw[a] * dot;
                }
            }
        }
        vec![needs[0].then_some(gp), needs[1].then_some(gn)]
    }
}

/// Differentiable splat of `points: [n, 3]` and `normals: [n, 3]` into `[3, R^3]`.
pub fn splat_op(tape: &mut Tape, points: Var, normals: Var, r: usize) -> Result<Var> {
    for v in [points, normals] {
        let s = tape.shape(v);
        if s.len() != 2 || s[1] != 3 {
            return Err(TuvfError::shape("splat", format!("expected [n, 3], got {s:?}")));
        }
    }
    let pts = crate::geometry::vec3::unflatten(tape.value(points));
    let nrm = crate::geometry::vec3::unflatten(tape.value(normals));
    let v = splat(&pts, &nrm, r)?;
    tape.custom(&[points, normals], vec![3, r.pow(3)], v, Box::new(SplatOp { r }))
}

struct SolveOp {
    r: usize,
    sigma: f64,
}

impl CustomOp for SolveOp {
    fn name(&self) -> &'static str {
        "poisson_solve"
    }

    fn backward(&self, _inputs: &[&[f64]], _output: &[f64], g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![needs[0].then(|| spectral_solve_adjoint(g, self.r, self.sigma))]
    }
}

/// Differentiable raw solve of a `[3, R^3]` field into an `[R^3]` grid.
pub fn solve_op(tape: &mut Tape, v: Var, r: usize, sigma: f64) -> Result<Var> {
    let chi = spectral_solve_raw(tape.value(v), r, sigma)?;
    tape.custom(&[v], vec![r.pow(3)], chi, Box::new(SolveOp { r, sigma }))
}

struct TrilinearOp {
    r: usize,
}

impl CustomOp for TrilinearOp {
    fn name(&self) -> &'static str {
        "trilinear"
    }

    fn backward(&self, inputs: &[&[f64]], _output: &[f64], g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (grid, pts) = (inputs[0], inputs[1]);
        let mut gg = vec![0.0; grid.len()];
        let mut gp = vec![0.0; pts.len()];
        for (i, gi) in g.iter().enumerate() {
            let p = [pts[3 * i], pts[3 * i + 1], pts[3 * i + 2]];
            for (idx, w, dw) in corner_weights(self.r, p) {
                gg[idx] += w * gi;
                for a in 0..3 {
                    gp[3 * i + a] += dw[a] * grid[idx] * gi;
                }
            }
        }
        vec![needs[0].then_some(gg), needs[1].then_some(gp)]
    }
}

/// Trilinear samples `[n]` of `grid: [R^3]` at `points: [n, 3]`.
pub fn trilinear_op(tape: &mut Tape, grid: Var, points: Var, r: usize) -> Result<Var> {
    if tape.value(grid).len() != r.pow(3) {
        return Err(TuvfError::shape("trilinear", format!("grid of {} values for R={r}", tape.value(grid).len())));
    }
    let pts = crate::geometry::vec3::unflatten(tape.value(points));
    check_in_grid(&pts)?;
    let g = tape.value(grid);
    let out: Vec<f64> = pts.iter().map(|&p| trilinear(g, r, p)).collect();
    tape.custom(&[grid, points], vec![pts.len()], out, Box::new(TrilinearOp { r }))
}

/// Normalised indicator grid `[R^3]` from oriented points, differentiable
/// with respect to both inputs.
pub fn indicator_op(tape: &mut Tape, points: Var, normals: Var, cfg: &DpsrConfig) -> Result<Var> {
    cfg.validate()?;
    let r = cfg.resolution;
    let v = splat_op(tape, points, normals, r)?;
    let raw = solve_op(tape, v, r, cfg.sigma)?;
    let at_pts = trilinear_op(tape, raw, points, r)?;
    let shift = tape.mean(at_pts)?;
    let centred = tape.sub(raw, shift)?;
    let abs = tape.abs(centred)?;
    let flat = tape.reshape(abs, &[1, r.pow(3)])?;
    let maxabs = tape.max_axis(flat, 1)?;
    let denom = tape.scale(maxabs, 2.0)?;
    tape.div(centred, denom)
}

/// Mean squared difference between two grids of equal size.
pub fn l_dpsr(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    if tape.shape(pred) != tape.shape(target) {
        return Err(TuvfError::shape(
            "l_dpsr",
            format!("resolution mismatch: {:?} vs {:?}", tape.shape(pred), tape.shape(target)),
        ));
    }
    let d = tape.sub(pred, target)?;
    let sq = tape.square(d)?;
    tape.mean(sq)
}
