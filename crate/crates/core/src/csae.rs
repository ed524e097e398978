//! Canonical surface auto-encoder.
//!
//! An EdgeConv encoder turns a normalised point cloud into a geometry code.
//! The surface decoder maps every UV-sphere vertex to a surface point, so
//! vertex `i` means the same place on every shape of a category. A second
//! decoder predicts normals from the decoded positions.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;

use crate::autodiff::optim::{Optimizer, OptimizerKind};
use crate::autodiff::{Tape, Var};
use crate::dpsr::{self, DpsrConfig, IndicatorGrid};
use crate::error::{Result, TuvfError};
use crate::geometry::{build_icosphere, chamfer_loss, vec3, PointCloud, UvSphere, Vec3};
use crate::nets::{adain, knn_graph, Activation, EdgeConv, Linear, Mlp, MlpSpec};
use crate::params::ParamStore;

pub const PREFIX: &str = "csae";

#[derive(Debug, Clone, PartialEq)]
pub struct CsaeConfig {
    pub level: u32,
    pub code_dim: usize,
    pub encoder_points: usize,
    pub encoder_widths: Vec<usize>,
    pub encoder_k: usize,
    pub hidden: usize,
    pub decoder_k: usize,
    pub init_seed: u64,
}

impl Default for CsaeConfig {
    fn default() -> Self {
        CsaeConfig {
            level: 4,
            code_dim: 256,
            encoder_points: 4096,
            encoder_widths: vec![64, 64, 128],
            encoder_k: 20,
            hidden: 128,
            decoder_k: 10,
            init_seed: 0,
        }
    }
}

impl CsaeConfig {
    /// Single-core training size: the encoder sees 1024 points.
    pub fn toy() -> Self {
        CsaeConfig {
            encoder_points: 1024,
            ..CsaeConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TuvfError::Config(m.to_string()));
        if self.encoder_widths.is_empty() || self.encoder_widths.contains(&0) {
            return bad("csae encoder widths must be non-empty and positive");
        }
        if self.code_dim == 0 || self.hidden == 0 {
            return bad("csae code_dim and hidden must be positive");
        }
        if self.encoder_k == 0 || self.encoder_points <= self.encoder_k {
            return bad("csae encoder needs more points than neighbours");
        }
        if self.decoder_k == 0 || crate::geometry::icosphere::vertex_count(self.level) <= self.decoder_k {
            return bad("csae decoder_k must be positive and below the sphere vertex count");
        }
        Ok(())
    }
}

/// Decoded surface: row `i` belongs to UV vertex `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePointSet {
    pub positions: Vec<Vec3>,
    pub normals: Vec<Vec3>,
}

impl SurfacePointSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

pub struct Csae {
    pub config: CsaeConfig,
    pub sphere: UvSphere,
    sphere_neighbors: Vec<usize>,
    pub encoder: Vec<EdgeConv>,
    pub encoder_head: Linear,
    pub spatial: EdgeConv,
    /// z -> (mean, std) for both fusion stages.
    pub style: Mlp,
    pub mid: Linear,
    pub head: Linear,
    pub normal_in: Linear,
    pub normal_style: Linear,
    pub normal_mlp: Mlp,
}

fn unit_rows(tape: &mut Tape, x: Var) -> Result<Var> {
    let n = tape.shape(x)[0];
    let sq = tape.square(x)?;
    let s = tape.sum_axis(sq, 1)?;
    let len = tape.sqrt(s)?;
    let len = tape.clamp_min(len, 1e-8)?;
    let len = tape.reshape(len, &[n, 1])?;
    tape.div(x, len)
}

impl Csae {
    pub fn new(config: CsaeConfig) -> Result<Self> {
        config.validate()?;
        let sphere = build_icosphere(config.level)?;
        let sphere_neighbors = knn_graph(&sphere.flat(), sphere.len(), 3, config.decoder_k)?;
        let mut encoder = Vec::new();
        let mut width = 3;
        for (i, &w) in config.encoder_widths.iter().enumerate() {
            encoder.push(EdgeConv::new(
                format!("{PREFIX}.encoder.e{i}"),
                width,
                &[w],
                config.encoder_k,
                Activation::leaky(),
            ));
            width = w;
        }
        let cat: usize = config.encoder_widths.iter().sum();
        let encoder_head = Linear::new(format!("{PREFIX}.encoder.head"), 2 * cat, config.code_dim);
        let h = config.hidden;
        let spatial = EdgeConv::new(format!("{PREFIX}.f.spatial"), 3, &[h], config.decoder_k, Activation::Relu).with_attention();
        let style = Mlp::new(
            &format!("{PREFIX}.f.style"),
            MlpSpec::new(&[config.code_dim, h, 4 * h], Activation::Relu, Activation::Identity).seeded(config.init_seed ^ 0x7374),
        )?;
        let mid = Linear::new(format!("{PREFIX}.f.mid"), h, h);
        let head = Linear::new(format!("{PREFIX}.f.head"), h + 3, 3);
        let normal_in = Linear::new(format!("{PREFIX}.g.in"), 3, h);
        let normal_style = Linear::new(format!("{PREFIX}.g.style"), config.code_dim, h);
        let normal_mlp = Mlp::new(
            &format!("{PREFIX}.g.mlp"),
            MlpSpec::new(&[h, h, 3], Activation::Relu, Activation::Identity).seeded(config.init_seed ^ 0x676d),
        )?;
        Ok(Csae {
            config,
            sphere,
            sphere_neighbors,
            encoder,
            encoder_head,
            spatial,
            style,
            mid,
            head,
            normal_in,
            normal_style,
            normal_mlp,
        })
    }

    pub fn init(&self, store: &mut ParamStore) {
        let mut rng = crate::rng(self.config.init_seed ^ 0x6373_6165);
        for e in &self.encoder {
            e.init(store, &mut rng);
        }
        self.encoder_head.init(store, &mut rng);
        self.spatial.init(store, &mut rng);
        self.style.init(store);
        self.mid.init(store, &mut rng);
        self.head.init(store, &mut rng);
        self.normal_in.init(store, &mut rng);
        self.normal_style.init(store, &mut rng);
        self.normal_mlp.init(store);
    }

    fn check_cloud(&self, points: &[Vec3]) -> Result<()> {
        if points.len() != self.config.encoder_points {
            return Err(TuvfError::invalid(format!(
                "encoder expects {} points, got {}",
                self.config.encoder_points,
                points.len()
            )));
        }
        if points.iter().any(|p| p.iter().any(|c| !(c.abs() <= 0.5 + 1e-9))) {
            return Err(TuvfError::invalid("encoder input is not normalised to the unit cube"));
        }
        Ok(())
    }

    /// Geometry code `[code_dim]`.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, points: &[Vec3]) -> Result<Var> {
        self.check_cloud(points)?;
        let mut h = tape.constant(&[points.len(), 3], vec3::flatten(points))?;
        let mut outs = Vec::with_capacity(self.encoder.len());
        for e in &self.encoder {
            h = e.forward(tape, store, h)?;
            outs.push(h);
        }
        let cat = tape.concat(&outs, 1)?;
        let mx = tape.max_axis(cat, 0)?;
        let mean = tape.mean_axis(cat, 0)?;
        let pooled = tape.concat(&[mx, mean], 0)?;
        let width = tape.shape(pooled)[0];
        let pooled = tape.reshape(pooled, &[1, width])?;
        let z = self.encoder_head.forward(tape, store, pooled)?;
        tape.reshape(z, &[self.config.code_dim])
    }

    pub fn encode_code(&self, store: &ParamStore, points: &[Vec3]) -> Result<Vec<f64>> {
        let mut tape = Tape::inference();
        let z = self.encode(&mut tape, store, points)?;
        Ok(tape.value(z).to_vec())
    }

    /// Surface points `[n_vertices, 3]` for the code `z`.
    pub fn decode_surface(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> Result<Var> {
        let d = tape.value(z).len();
        if d != self.config.code_dim {
            return Err(TuvfError::shape("decode_surface", format!("code of length {d}, expected {}", self.config.code_dim)));
        }
        let h = self.config.hidden;
        let xp = tape.constant(&[self.sphere.len(), 3], self.sphere.flat())?;
        let feat = self.spatial.forward_with_neighbors(tape, store, xp, &self.sphere_neighbors)?;
        let z = tape.reshape(z, &[1, d])?;
        let st = self.style.forward(tape, store, z)?;
        let st = tape.reshape(st, &[4 * h])?;
        let stats: Vec<Var> = (0..4).map(|i| tape.slice(st, 0, i * h, (i + 1) * h)).collect::<Result<_>>()?;
        let s1 = tape.softplus(stats[1])?;
        let a = adain(tape, feat, stats[0], s1)?;
        let a = tape.relu(a)?;
        let a = self.mid.forward(tape, store, a)?;
        let s2 = tape.softplus(stats[3])?;
        let b = adain(tape, a, stats[2], s2)?;
        let b = tape.relu(b)?;
        let b = tape.concat(&[b, xp], 1)?;
        self.head.forward(tape, store, b)
    }

    /// Unit normals `[n, 3]` from decoded `positions: [n, 3]`.
    pub fn decode_normals(&self, tape: &mut Tape, store: &ParamStore, z: Var, positions: Var) -> Result<Var> {
        let d = tape.value(z).len();
        let z = tape.reshape(z, &[1, d])?;
        let s = self.normal_style.forward(tape, store, z)?;
        let p = self.normal_in.forward(tape, store, positions)?;
        let x = tape.add(p, s)?;
        let x = tape.relu(x)?;
        let raw = self.normal_mlp.forward(tape, store, x)?;
        unit_rows(tape, raw)
    }

    pub fn decode_code(&self, store: &ParamStore, z: &[f64]) -> Result<SurfacePointSet> {
        let mut tape = Tape::inference();
        let zv = tape.constant(&[z.len()], z.to_vec())?;
        let pos = self.decode_surface(&mut tape, store, zv)?;
        let nrm = self.decode_normals(&mut tape, store, zv, pos)?;
        Ok(SurfacePointSet {
            positions: vec3::unflatten(tape.value(pos)),
            normals: vec3::unflatten(tape.value(nrm)),
        })
    }

    /// Encode then decode without recording gradients.
    pub fn reconstruct(&self, store: &ParamStore, points: &[Vec3]) -> Result<SurfacePointSet> {
        let z = self.encode_code(store, points)?;
        self.decode_code(store, &z)
    }

    /// The encoder input for a shape: all points when the count matches,
    /// otherwise an evenly strided subset.
    pub fn encoder_input(&self, cloud: &[Vec3]) -> Result<Vec<Vec3>> {
        let m = self.config.encoder_points;
        if cloud.len() < m {
            return Err(TuvfError::invalid(format!("shape has {} points, encoder needs {m}", cloud.len())));
        }
        Ok((0..m).map(|i| cloud[i * cloud.len() / m]).collect())
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Median decoded distance across sphere edges divided by the median over
/// `pairs` random vertex pairs. Small values mean neighbouring UV vertices
/// land near each other.
pub fn smoothness_ratio(sphere: &UvSphere, positions: &[Vec3], pairs: usize, seed: u64) -> Result<f64> {
    if positions.len() != sphere.len() || pairs == 0 {
        return Err(TuvfError::invalid(format!(
            "{} positions for {} sphere vertices",
            positions.len(),
            sphere.len()
        )));
    }
    let d = |i: usize, j: usize| vec3::dist2(positions[i], positions[j]).sqrt();
    let edges = median(sphere.edges().into_iter().map(|(i, j)| d(i, j)).collect());
    let mut rng = crate::rng(seed);
    let random = median(
        (0..pairs)
            .map(|_| {
                let p = sample(&mut rng, positions.len(), 2);
                d(p.index(0), p.index(1))
            })
            .collect(),
    );
    Ok(if random > 0.0 { edges / random } else { f64::INFINITY })
}

/// A normalised training shape with its precomputed target grid.
#[derive(Debug, Clone)]
pub struct TrainingShape {
    pub name: String,
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
}

impl TrainingShape {
    pub fn from_cloud(name: impl Into<String>, cloud: &PointCloud) -> Result<Self> {
        let normals = cloud
            .normals
            .clone()
            .ok_or_else(|| TuvfError::invalid("training shapes need normals"))?;
        if !cloud.in_unit_cube(1e-9) {
            return Err(TuvfError::invalid("training shape is not normalised to the unit cube"));
        }
        Ok(TrainingShape {
            name: name.into(),
            points: cloud.points.clone(),
            normals,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsaeTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub lambda_dpsr: f64,
    pub dpsr: DpsrConfig,
    pub target_points: usize,
    pub seed: u64,
}

impl Default for CsaeTrainConfig {
    fn default() -> Self {
        CsaeTrainConfig {
            steps: 500,
            lr: 1e-3,
            lambda_dpsr: 1.0,
            dpsr: DpsrConfig {
                resolution: 32,
                sigma: 2.0,
            },
            target_points: 2562,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsaeLogRow {
    pub step: usize,
    pub epoch: usize,
    pub shape: usize,
    pub chamfer: f64,
    pub dpsr: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsaeLog {
    pub rows: Vec<CsaeLogRow>,
}

impl CsaeLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,epoch,shape,chamfer,dpsr,total\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{:.8e},{:.8e},{:.8e}", r.step, r.epoch, r.shape, r.chamfer, r.dpsr, r.total);
        }
        s
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| TuvfError::io(path, e))
    }
}

/// Loss terms of one step; gradients land in `store` when `tape` records.
pub struct CsaeLoss {
    pub chamfer: Var,
    pub dpsr: Option<Var>,
    pub total: Var,
}

pub fn csae_loss(
    tape: &mut Tape,
    csae: &Csae,
    store: &ParamStore,
    encoder_input: &[Vec3],
    target: &[Vec3],
    target_grid: Option<&IndicatorGrid>,
    cfg: &CsaeTrainConfig,
) -> Result<CsaeLoss> {
    let z = csae.encode(tape, store, encoder_input)?;
    let pos = csae.decode_surface(tape, store, z)?;
    let chamfer = chamfer_loss(tape, pos, target)?;
    if cfg.lambda_dpsr == 0.0 {
        return Ok(CsaeLoss {
            chamfer,
            dpsr: None,
            total: chamfer,
        });
    }
    let grid = target_grid.ok_or_else(|| TuvfError::invalid("a target grid is needed when lambda_dpsr > 0"))?;
    let nrm = csae.decode_normals(tape, store, z, pos)?;
    let inside = tape.clamp(pos, -0.5, 0.5)?;
    let chi = dpsr::indicator_op(tape, inside, nrm, &cfg.dpsr)?;
    let target = tape.constant(&[grid.values.len()], grid.values.clone())?;
    let d = dpsr::l_dpsr(tape, chi, target)?;
    let wd = tape.scale(d, cfg.lambda_dpsr)?;
    let total = tape.add(chamfer, wd)?;
    Ok(CsaeLoss {
        chamfer,
        dpsr: Some(d),
        total,
    })
}

/// Trains every `csae.` parameter in `store`, one shape per step, cycling
/// through `shapes`.
pub fn train_csae(csae: &Csae, store: &mut ParamStore, shapes: &[TrainingShape], cfg: &CsaeTrainConfig) -> Result<CsaeLog> {
    if shapes.is_empty() {
        return Err(TuvfError::invalid("train_csae needs at least one shape"));
    }
    cfg.dpsr.validate()?;
    let inputs: Vec<Vec<Vec3>> = shapes.iter().map(|s| csae.encoder_input(&s.points)).collect::<Result<_>>()?;
    let grids: Vec<Option<IndicatorGrid>> = shapes
        .iter()
        .map(|s| {
            if cfg.lambda_dpsr == 0.0 {
                Ok(None)
            } else {
                dpsr::indicator_grid(&s.points, &s.normals, &cfg.dpsr).map(Some)
            }
        })
        .collect::<Result<_>>()?;
    // the normal decoder only receives gradient through the grid term
    let trained: Vec<String> = if cfg.lambda_dpsr == 0.0 {
        vec![format!("{PREFIX}.encoder."), format!("{PREFIX}.f.")]
    } else {
        vec![format!("{PREFIX}.")]
    };
    let prefixes: Vec<&str> = trained.iter().map(String::as_str).collect();
    let mut opt = Optimizer::for_prefixes(OptimizerKind::adam(), cfg.lr, store, &prefixes);
    let mut rng = crate::rng(cfg.seed);
    let mut log = CsaeLog::default();
    for step in 0..cfg.steps {
        let si = step % shapes.len();
        let epoch = step / shapes.len();
        let shape = &shapes[si];
        let diag = |e: TuvfError| TuvfError::Diverged(format!("epoch {epoch}, step {step}, shape {:?}: {e}", shape.name));
        let m = cfg.target_points.min(shape.points.len());
        let target: Vec<Vec3> = sample(&mut rng, shape.points.len(), m).into_iter().map(|i| shape.points[i]).collect();
        let mut tape = Tape::new();
        let loss = csae_loss(&mut tape, csae, store, &inputs[si], &target, grids[si].as_ref(), cfg).map_err(diag)?;
        let total = tape.scalar(loss.total);
        if !total.is_finite() {
            return Err(diag(TuvfError::NonFinite { op: "csae_loss", index: 0 }));
        }
        store.zero_grad();
        tape.backward_into(loss.total, store).map_err(diag)?;
        opt.step(store).map_err(diag)?;
        log.rows.push(CsaeLogRow {
            step,
            epoch,
            shape: si,
            chamfer: tape.scalar(loss.chamfer),
            dpsr: loss.dpsr.map_or(0.0, |d| tape.scalar(d)),
            total,
        });
    }
    Ok(log)
}
