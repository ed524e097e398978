//! Texture transfer across shapes and single-view texture editing.
//!
//! Both operate on a [`UvTextureField`]. Transfer only re-pairs the field with
//! another shape's geometry. Editing fine-tunes the feature table against an
//! edited render while every network and the geometry stay frozen.

use std::collections::BTreeSet;

use crate::autodiff::optim::{Optimizer, OptimizerKind};
use crate::autodiff::Tape;
use crate::error::{Result, TuvfError};
use crate::geometry::{vec3, Vec3};
use crate::image_io::Image;
use crate::params::ParamStore;
use crate::renderer::{Camera, FeatureLog, PixelRect, RenderPlan, Renderer, SceneGeometry};
use crate::texgen::{UvTextureField, FIELD_NAME};

/// A texture field paired with the geometry it is rendered on.
#[derive(Debug, Clone, Copy)]
pub struct TexturedScene<'a> {
    pub field: &'a UvTextureField,
    pub scene: &'a SceneGeometry,
}

impl TexturedScene<'_> {
    pub fn render(&self, renderer: &Renderer, store: &ParamStore, cam: &Camera, seed: u64) -> Result<Image> {
        renderer.render_image(self.scene, self.field, store, cam, seed)
    }

    pub fn render_logged(&self, renderer: &Renderer, store: &ParamStore, cam: &Camera, seed: u64) -> Result<(Image, FeatureLog)> {
        renderer.render_image_logged(self.scene, self.field, store, cam, seed)
    }
}

/// Pairs `tex` with `target`. The features are borrowed, never copied or
/// modified.
pub fn transfer_texture<'a>(tex: &'a UvTextureField, target: &'a SceneGeometry) -> Result<TexturedScene<'a>> {
    if tex.len() != target.len() {
        return Err(TuvfError::invalid(format!(
            "UV level mismatch: texture field has {} vertices, target shape has {} surface points",
            tex.len(),
            target.len()
        )));
    }
    Ok(TexturedScene { field: tex, scene: target })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditConfig {
    pub steps: usize,
    pub lr: f64,
    /// Weight of the drift penalty on features outside the mask support.
    pub drift_weight: f64,
    /// Mask values above this count as edited pixels.
    pub mask_threshold: f64,
    /// Jitter seed of the render being matched.
    pub render_seed: u64,
}

impl Default for EditConfig {
    fn default() -> Self {
        EditConfig {
            steps: 300,
            lr: 0.1,
            drift_weight: 0.1,
            mask_threshold: 0.5,
            render_seed: 0,
        }
    }
}

impl EditConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TuvfError::Config(format!("edit.lr must be positive, got {}", self.lr)));
        }
        if !(self.drift_weight >= 0.0 && self.drift_weight.is_finite()) {
            return Err(TuvfError::Config(format!("edit.drift_weight must be >= 0, got {}", self.drift_weight)));
        }
        if !(0.0..1.0).contains(&self.mask_threshold) {
            return Err(TuvfError::Config(format!("edit.mask_threshold must lie in [0, 1), got {}", self.mask_threshold)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EditResult {
    pub field: UvTextureField,
    /// Masked squared error before each step, then after the last one.
    pub masked_error: Vec<f64>,
    /// Total loss before each step.
    pub loss: Vec<f64>,
    /// UV vertices read by any masked pixel.
    pub support: BTreeSet<usize>,
}

impl EditResult {
    pub fn initial_error(&self) -> f64 {
        self.masked_error[0]
    }

    pub fn final_error(&self) -> f64 {
        *self.masked_error.last().expect("at least the initial error")
    }

    /// Fraction of the initial masked error removed by the edit.
    pub fn reduction(&self) -> f64 {
        if self.initial_error() == 0.0 {
            return 1.0;
        }
        1.0 - self.final_error() / self.initial_error()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss,masked_error\n");
        for (i, e) in self.masked_error.iter().enumerate() {
            let l = self.loss.get(i).map(|l| l.to_string()).unwrap_or_default();
            s.push_str(&format!("{i},{l},{e}\n"));
        }
        s
    }
}

/// Pixel-centre coordinates of the pixels selected by `mask`.
pub fn masked_coords(mask: &[f64], width: usize, threshold: f64) -> Vec<(f64, f64)> {
    mask.iter()
        .enumerate()
        .filter(|(_, &m)| m > threshold)
        .map(|(i, _)| ((i % width) as f64 + 0.5, (i / width) as f64 + 0.5))
        .collect()
}

fn check_inputs(field: &UvTextureField, scene: &SceneGeometry, cam: &Camera, edited: &Image, mask: &[f64]) -> Result<()> {
    if edited.width != cam.width || edited.height != cam.height {
        return Err(TuvfError::invalid(format!(
            "edited image is {}x{} but the camera renders {}x{}",
            edited.width, edited.height, cam.width, cam.height
        )));
    }
    if mask.len() != edited.width * edited.height {
        return Err(TuvfError::invalid(format!(
            "mask has {} values for a {}x{} image",
            mask.len(),
            edited.width,
            edited.height
        )));
    }
    transfer_texture(field, scene).map(|_| ())
}

/// Fine-tunes the feature table so the render from `cam` matches `edited`
/// inside `mask`. Networks in `store` are read, never written.
#[allow(clippy::too_many_arguments)]
pub fn edit_texture(
    renderer: &Renderer,
    store: &ParamStore,
    scene: &SceneGeometry,
    field: &UvTextureField,
    cam: &Camera,
    edited: &Image,
    mask: &[f64],
    cfg: &EditConfig,
) -> Result<EditResult> {
    cfg.validate()?;
    check_inputs(field, scene, cam, edited, mask)?;
    let coords = masked_coords(mask, edited.width, cfg.mask_threshold);
    if coords.is_empty() {
        return Err(TuvfError::invalid("edit mask selects no pixels"));
    }
    let plan = renderer.plan(scene, cam, &coords, cfg.render_seed)?;
    let support: BTreeSet<usize> = plan.neighbor_indices().into_iter().collect();
    let outside: Vec<usize> = (0..field.len()).filter(|i| !support.contains(i)).collect();

    let mut target = Vec::with_capacity(coords.len() * 3);
    for &(x, y) in &coords {
        target.extend(edited.pixel(x as usize, y as usize));
    }
    let original: Vec<f64> = outside.iter().flat_map(|&i| field.row(i).iter().copied()).collect();

    let mut feats = ParamStore::new();
    feats.insert(FIELD_NAME, field.features.clone().with_grad());
    let mut opt = Optimizer::new(OptimizerKind::adam(), cfg.lr, vec![FIELD_NAME.to_string()]);
    let mut masked_error = Vec::with_capacity(cfg.steps + 1);
    let mut loss_log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut tape = Tape::new();
        let f = tape.leaf(feats.get(FIELD_NAME)?)?;
        let (err, loss) = edit_loss(&mut tape, renderer, store, &plan, f, &target, &outside, &original, cfg.drift_weight)?;
        let (e, l) = (tape.scalar(err), tape.scalar(loss));
        if !(l.is_finite() && e.is_finite()) {
            return Err(TuvfError::Diverged(format!("edit step {step}: loss {l}, masked error {e}")));
        }
        masked_error.push(e);
        loss_log.push(l);
        let grads = tape.backward(loss)?;
        let g = grads.wrt(f).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; field.features.data().len()]);
        feats.get_mut(FIELD_NAME)?.grad = Some(g);
        opt.step(&mut feats)?;
    }
    let mut tape = Tape::inference();
    let f = tape.leaf(feats.get(FIELD_NAME)?)?;
    let (err, _) = edit_loss(&mut tape, renderer, store, &plan, f, &target, &outside, &original, cfg.drift_weight)?;
    masked_error.push(tape.scalar(err));

    let mut out = feats.remove(FIELD_NAME).expect("inserted above");
    out.grad = None;
    out.requires_grad = false;
    Ok(EditResult {
        field: UvTextureField::new(out)?,
        masked_error,
        loss: loss_log,
        support,
    })
}

/// Returns `(masked squared error, total loss)`.
#[allow(clippy::too_many_arguments)]
fn edit_loss(
    tape: &mut Tape,
    renderer: &Renderer,
    store: &ParamStore,
    plan: &RenderPlan,
    field: crate::autodiff::Var,
    target: &[f64],
    outside: &[usize],
    original: &[f64],
    drift_weight: f64,
) -> Result<(crate::autodiff::Var, crate::autodiff::Var)> {
    let rgb = renderer.render_on_tape(tape, store, field, plan)?;
    let t = tape.constant(&[plan.n_pixels, 3], target.to_vec())?;
    let d = tape.sub(rgb, t)?;
    let sq = tape.square(d)?;
    let err = tape.mean(sq)?;
    if outside.is_empty() || drift_weight == 0.0 {
        return Ok((err, err));
    }
    let dim = original.len() / outside.len();
    let rows = tape.gather_rows(field, outside)?;
    let o = tape.constant(&[outside.len(), dim], original.to_vec())?;
    let dd = tape.sub(rows, o)?;
    let dsq = tape.square(dd)?;
    let drift = tape.mean(dsq)?;
    let drift = tape.scale(drift, drift_weight)?;
    let total = tape.add(err, drift)?;
    Ok((err, total))
}

/// Expected surface point behind each masked pixel, from the render plan's
/// compositing weights. Pixels that miss the surface are skipped.
pub fn masked_surface_points(renderer: &Renderer, scene: &SceneGeometry, cam: &Camera, mask: &[f64], seed: u64) -> Result<Vec<Vec3>> {
    let coords = masked_coords(mask, cam.width, 0.5);
    let plan = renderer.plan(scene, cam, &coords, seed)?;
    let mut acc = vec![([0.0; 3], 0.0); coords.len()];
    for s in &plan.samples {
        let a = &mut acc[s.pixel];
        a.0 = vec3::add(a.0, vec3::scale(s.position, s.weight));
        a.1 += s.weight;
    }
    Ok(acc.into_iter().filter(|a| a.1 > 0.5).map(|(p, w)| vec3::scale(p, 1.0 / w)).collect())
}

/// Pixels of `cam` onto which `points` project, deduplicated, row-major
/// indices. Only points whose projection lands in frame are kept.
pub fn reproject(points: &[Vec3], cam: &Camera) -> Vec<usize> {
    let mut out = BTreeSet::new();
    for &p in points {
        if let Some((x, y)) = cam.project(p) {
            if x >= 0.0 && y >= 0.0 && x < cam.width as f64 && y < cam.height as f64 {
                out.insert(y as usize * cam.width + x as usize);
            }
        }
    }
    out.into_iter().collect()
}

/// Mean colour of `img` over the listed pixels.
pub fn region_mean(img: &Image, pixels: &[usize]) -> [f64; 3] {
    let mut m = [0.0; 3];
    for &i in pixels {
        let c = img.pixel(i % img.width, i / img.width);
        for k in 0..3 {
            m[k] += c[k] / pixels.len() as f64;
        }
    }
    m
}

/// Square mask of side `size` with top-left corner `(x0, y0)`.
pub fn square_mask(width: usize, height: usize, x0: usize, y0: usize, size: usize) -> Vec<f64> {
    let mut m = vec![0.0; width * height];
    let r = PixelRect::new(x0, y0, size.min(width - x0), size.min(height - y0));
    for y in r.y0..r.y0 + r.height {
        for x in r.x0..r.x0 + r.width {
            m[y * width + x] = 1.0;
        }
    }
    m
}
