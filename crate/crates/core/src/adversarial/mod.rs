//! Adversarial texture training on rendered patches.
//!
//! Each step renders one patch per batch item from the texture generator,
//! crops the same footprint out of a real image, applies one shared
//! augmentation to both, and takes a discriminator step followed by a
//! generator step. The discriminator is an MLP over downsampled patches
//! conditioned on the patch scale and offset.

pub mod augment;
pub mod disc;
pub mod patch;

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

pub use augment::{area_resample, gaussian_kernel, AugmentConfig, AugmentParams, Augmentation};
pub use disc::{DiscConfig, DiscOutput, Discriminator};
pub use patch::{sample_patch_spec, PatchConfig, PatchSpec};

use crate::autodiff::kernels::softplus;
use crate::autodiff::optim::{Optimizer, OptimizerKind};
use crate::autodiff::{Tape, Var};
use crate::error::{Result, TuvfError};
use crate::geometry::{build_icosphere, UvSphere};
use crate::image_io::Image;
use crate::params::ParamStore;
use crate::renderer::{Camera, RenderPlan, Renderer, RendererConfig, SceneGeometry};
use crate::texgen::{self, sample_code, TexGenConfig, TextureGenerator, UvTextureField};

/// `f(u) = -log(1 + exp(-u))` as printed; note `f(u) = -softplus(-u)`.
pub fn printed_f(u: f64) -> f64 {
    -softplus(-u)
}

pub struct GanLosses {
    pub loss_d: Var,
    pub loss_g: Var,
    pub r1: Var,
    pub real_logits: Var,
    pub fake_logits: Var,
}

/// Non-saturating logistic losses with an R1 penalty on the real patches:
///
/// `loss_D = mean softplus(D(fake)) + mean softplus(-D(real)) + λ R1`,
/// `loss_G = mean softplus(-D(fake))`.
#[allow(clippy::too_many_arguments)]
pub fn gan_losses(
    tape: &mut Tape,
    disc: &Discriminator,
    store: &ParamStore,
    real: Var,
    real_specs: &[PatchSpec],
    fake: Var,
    fake_specs: &[PatchSpec],
    r1_weight: f64,
) -> Result<GanLosses> {
    if real_specs.len() != fake_specs.len() {
        return Err(TuvfError::invalid(format!(
            "{} real patches against {} fake patches",
            real_specs.len(),
            fake_specs.len()
        )));
    }
    let dr = disc.forward(tape, store, real, real_specs)?;
    let df = disc.forward(tape, store, fake, fake_specs)?;
    let r1 = disc.r1(tape, store, &dr)?;
    let sf = tape.softplus(df.logits)?;
    let fake_term = tape.mean(sf)?;
    let neg = tape.neg(dr.logits)?;
    let sr = tape.softplus(neg)?;
    let real_term = tape.mean(sr)?;
    let mut loss_d = tape.add(fake_term, real_term)?;
    if r1_weight != 0.0 {
        let w = tape.scale(r1, r1_weight)?;
        loss_d = tape.add(loss_d, w)?;
    }
    let loss_g = generator_loss(tape, df.logits)?;
    Ok(GanLosses {
        loss_d,
        loss_g,
        r1,
        real_logits: dr.logits,
        fake_logits: df.logits,
    })
}

/// `mean softplus(-D(fake))`.
pub fn generator_loss(tape: &mut Tape, fake_logits: Var) -> Result<Var> {
    let n = tape.neg(fake_logits)?;
    let s = tape.softplus(n)?;
    tape.mean(s)
}

/// Orbit cameras with uniform azimuth and elevation at a fixed radius.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSampler {
    pub radius: f64,
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
    pub azimuth: (f64, f64),
    pub elevation: (f64, f64),
}

impl Default for PoseSampler {
    fn default() -> Self {
        PoseSampler {
            radius: 2.0,
            fov_deg: 40.0,
            width: 64,
            height: 64,
            azimuth: (0.0, 360.0),
            elevation: (10.0, 40.0),
        }
    }
}

impl PoseSampler {
    pub fn sample(&self, rng: &mut impl Rng) -> Result<Camera> {
        let az = rng.random_range(self.azimuth.0..self.azimuth.1);
        let el = rng.random_range(self.elevation.0..=self.elevation.1);
        Camera::orbit(az, el, self.radius, self.fov_deg, self.width, self.height)
    }
}

/// Texture generator plus shading networks: everything a texture checkpoint holds.
pub struct TextureModel {
    pub generator: TextureGenerator,
    pub renderer: Renderer,
    pub sphere: UvSphere,
}

impl TextureModel {
    pub fn new(texgen: TexGenConfig, render: RendererConfig) -> Result<Self> {
        if texgen.feature_dim != render.feature_dim {
            return Err(TuvfError::Config(format!(
                "texgen feature_dim {} does not match render feature_dim {}",
                texgen.feature_dim, render.feature_dim
            )));
        }
        let sphere = build_icosphere(texgen.level)?;
        Ok(TextureModel {
            generator: TextureGenerator::new(texgen)?,
            renderer: Renderer::new(render)?,
            sphere,
        })
    }

    pub fn init(&self, store: &mut ParamStore) {
        self.generator.init(store);
        self.renderer.init(store);
    }

    /// Parameter prefixes owned by the model.
    pub fn prefixes() -> [&'static str; 2] {
        [texgen::PREFIX, "render."]
    }

    pub fn field(&self, store: &ParamStore, z: &[f64]) -> Result<UvTextureField> {
        self.generator.generate(store, &self.sphere, z)
    }

    /// Rendered colours at `coords` as channel planes `[3, coords.len()]`.
    /// Only the UV vertices the plan reads are pushed through the generator.
    #[allow(clippy::too_many_arguments)]
    pub fn render_planes(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        scene: &SceneGeometry,
        z: &[f64],
        cam: &Camera,
        coords: &[(f64, f64)],
        seed: u64,
    ) -> Result<Var> {
        if scene.len() != self.sphere.len() {
            return Err(TuvfError::invalid(format!(
                "scene has {} points but the UV sphere has {}",
                scene.len(),
                self.sphere.len()
            )));
        }
        let plan = self.renderer.plan(scene, cam, coords, seed)?;
        let (plan, used) = compact_plan(plan);
        let field = if used.is_empty() {
            tape.constant(&[1, self.renderer.config.feature_dim], vec![0.0; self.renderer.config.feature_dim])?
        } else {
            let c: Vec<f64> = used.iter().flat_map(|&i| self.sphere.vertices[i]).collect();
            let c = tape.constant(&[used.len(), 3], c)?;
            let zv = tape.constant(&[z.len()], z.to_vec())?;
            self.generator.features(tape, store, c, zv)?
        };
        let rgb = self.renderer.render_on_tape(tape, store, field, &plan)?;
        tape.transpose(rgb)
    }
}

/// Renumbers the plan's neighbour indices into the sorted set of vertices it
/// reads, returned alongside.
fn compact_plan(mut plan: RenderPlan) -> (RenderPlan, Vec<usize>) {
    let mut used = plan.neighbor_indices();
    used.sort_unstable();
    used.dedup();
    for s in &mut plan.samples {
        for j in &mut s.neighbors {
            *j = used.binary_search(j).expect("index collected above");
        }
    }
    (plan, used)
}

/// Real patch as channel planes `[3, res * res]`, bilinearly sampled at the
/// patch pixel centres.
pub fn real_patch_planes(img: &Image, spec: &PatchSpec) -> Vec<f64> {
    let coords = spec.frame_coords(img.width, img.height);
    let mut out = vec![0.0; 3 * coords.len()];
    for (i, &(x, y)) in coords.iter().enumerate() {
        let c = img.sample_bilinear(x, y);
        for k in 0..3 {
            out[k * coords.len() + i] = c[k];
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub r1_weight: f64,
    /// Images after which the patch-scale anneal reaches its end value.
    pub anneal_images: usize,
    pub patch: PatchConfig,
    pub augment: AugmentConfig,
    pub disc: DiscConfig,
    /// Steps between sample renders; 0 disables them.
    pub sample_every: usize,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        let patch = PatchConfig::default();
        GanConfig {
            steps: 2000,
            batch: 4,
            lr_g: 1e-3,
            lr_d: 1e-3,
            r1_weight: 1.0,
            anneal_images: 5000,
            augment: AugmentConfig::for_resolution(patch.resolution),
            disc: DiscConfig {
                patch_res: patch.resolution,
                ..DiscConfig::default()
            },
            patch,
            sample_every: 500,
            seed: 0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        self.patch.validate()?;
        self.augment.validate()?;
        if !(self.r1_weight >= 0.0) {
            return Err(TuvfError::Config(format!("gan.r1_weight must be >= 0, got {}", self.r1_weight)));
        }
        if self.batch == 0 || self.anneal_images == 0 {
            return Err(TuvfError::Config("gan.batch and gan.anneal_images must be positive".into()));
        }
        if !(self.lr_g >= 0.0 && self.lr_d >= 0.0) {
            return Err(TuvfError::Config("learning rates must be >= 0".into()));
        }
        if self.disc.patch_res != self.patch.resolution {
            return Err(TuvfError::Config(format!(
                "discriminator patch size {} differs from gan.patch {}",
                self.disc.patch_res, self.patch.resolution
            )));
        }
        Ok(())
    }
}

/// Adam with no first-moment decay, as usual for adversarial training.
pub fn gan_optimizer() -> OptimizerKind {
    OptimizerKind::Adam {
        beta1: 0.0,
        beta2: 0.99,
        eps: 1e-8,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanLogRow {
    pub step: usize,
    pub images: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub r1: f64,
    pub real_logit: f64,
    pub fake_logit: f64,
    pub beta: f64,
    pub blur_sigma: f64,
    pub mean_scale: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GanLog {
    pub rows: Vec<GanLogRow>,
    /// `(step, frame)` sample renders.
    pub samples: Vec<(usize, Image)>,
    /// Augmentation applied to the real and the fake side of every batch item.
    pub augment_trace: Vec<(AugmentParams, AugmentParams)>,
}

impl GanLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,images,loss_d,loss_g,r1,real_logit,fake_logit,beta,blur_sigma,mean_scale\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.6e},{:.6},{:.6}",
                r.step, r.images, r.loss_d, r.loss_g, r.r1, r.real_logit, r.fake_logit, r.beta, r.blur_sigma, r.mean_scale
            );
        }
        s
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| TuvfError::io(path, e))
    }

    /// Sample renders side by side in one image.
    pub fn sample_grid(&self) -> Option<Image> {
        let (_, first) = self.samples.first()?;
        let (w, h) = (first.width, first.height);
        let mut grid = Image::filled(w * self.samples.len(), h, [1.0; 3]);
        for (i, (_, img)) in self.samples.iter().enumerate() {
            grid.blit(img, i * w, 0);
        }
        Some(grid)
    }
}

/// Inputs held fixed during texture training.
pub struct TextureData<'a> {
    /// One frozen scene per training shape.
    pub scenes: &'a [SceneGeometry],
    pub reals: &'a [Image],
    pub poses: PoseSampler,
}

fn fill_missing_grads(store: &mut ParamStore, names: &[String]) -> Result<()> {
    for n in names {
        let t = store.get_mut(n)?;
        if t.grad.is_none() {
            t.grad = Some(vec![0.0; t.len()]);
        }
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Alternating discriminator / generator training. Discriminator parameters
/// (`disc.*`) are created in `store` when missing.
pub fn train_texture(
    model: &TextureModel,
    disc: &Discriminator,
    store: &mut ParamStore,
    data: &TextureData,
    cfg: &GanConfig,
) -> Result<GanLog> {
    cfg.validate()?;
    if data.scenes.is_empty() || data.reals.is_empty() {
        return Err(TuvfError::invalid("texture training needs at least one shape and one real image"));
    }
    if let Some(img) = data.reals.iter().find(|i| i.width != data.poses.width || i.height != data.poses.height) {
        return Err(TuvfError::invalid(format!(
            "real image is {}x{} but cameras render {}x{}",
            img.width, img.height, data.poses.width, data.poses.height
        )));
    }
    if disc.config != cfg.disc {
        return Err(TuvfError::Config("discriminator was built from a different config".into()));
    }
    if !store.contains(&disc.mlp.layers[0].weight_name()) {
        disc.init(store);
    }
    let mut opt_g = Optimizer::for_prefixes(gan_optimizer(), cfg.lr_g, store, &TextureModel::prefixes());
    let mut opt_d = Optimizer::for_prefixes(gan_optimizer(), cfg.lr_d, store, &[&format!("{}.", disc::PREFIX)]);
    let g_names = opt_g.names().to_vec();
    let mut rng = crate::rng(cfg.seed);
    let sample_z = sample_code(&mut crate::rng(cfg.seed ^ 0x5341_4d50), model.generator.config.z_dim);
    let sample_cam = Camera::orbit(30.0, 25.0, data.poses.radius, data.poses.fov_deg, data.poses.width, data.poses.height)?;
    let res = cfg.patch.resolution;
    let b = cfg.batch;
    let mut log = GanLog::default();
    let mut images = 0usize;
    for step in 0..cfg.steps {
        let diag = |e: TuvfError| TuvfError::Diverged(format!("texture step {step}: {e}"));
        let progress = (images as f64 / cfg.anneal_images as f64).min(1.0);
        let mut specs = Vec::with_capacity(b);
        let mut augs = Vec::with_capacity(b);
        let mut real = Vec::with_capacity(b * 3 * res * res);
        let mut tape = Tape::new();
        let mut fakes = Vec::with_capacity(b);
        for item in 0..b {
            let scene = &data.scenes[rng.random_range(0..data.scenes.len())];
            let cam = data.poses.sample(&mut rng)?;
            let spec = sample_patch_spec(&mut rng, progress, &cfg.patch)?;
            let z = sample_code(&mut rng, model.generator.config.z_dim);
            let img = &data.reals[rng.random_range(0..data.reals.len())];
            let aug = Augmentation::new(AugmentParams::sample(&mut rng, &cfg.augment, images), res);
            let seed = cfg.seed ^ ((step * b + item) as u64).wrapping_mul(0x9e37_79b9);
            let coords = spec.frame_coords(cam.width, cam.height);
            let planes = model.render_planes(&mut tape, store, scene, &z, &cam, &coords, seed).map_err(diag)?;
            fakes.push(planes);
            real.extend(aug.apply_values(&real_patch_planes(img, &spec)));
            log.augment_trace.push((aug.params, aug.params));
            specs.push(spec);
            augs.push(aug);
        }
        images += b;

        // discriminator step on detached fakes
        let mut td = Tape::new();
        let mut fake_vals = Vec::with_capacity(b * 3 * res * res);
        for (f, aug) in fakes.iter().zip(&augs) {
            fake_vals.extend(aug.apply_values(tape.value(*f)));
        }
        let fv = td.constant(&[b * 3, res * res], fake_vals)?;
        let rv = td.constant(&[b * 3, res * res], real)?;
        let losses = gan_losses(&mut td, disc, store, rv, &specs, fv, &specs, cfg.r1_weight).map_err(diag)?;
        let loss_d = td.scalar(losses.loss_d);
        let r1 = td.scalar(losses.r1);
        if !loss_d.is_finite() || !(r1 >= 0.0) {
            return Err(diag(TuvfError::NonFinite { op: "loss_d", index: 0 }));
        }
        store.zero_grad();
        td.backward_into(losses.loss_d, store).map_err(diag)?;
        opt_d.step(store).map_err(diag)?;

        // generator step against the updated discriminator
        let mut aug_fakes = Vec::with_capacity(b);
        for (f, aug) in fakes.iter().zip(&augs) {
            aug_fakes.push(aug.apply(&mut tape, *f)?);
        }
        let fake = tape.concat(&aug_fakes, 0)?;
        let df = disc.forward(&mut tape, store, fake, &specs).map_err(diag)?;
        let loss_g_var = generator_loss(&mut tape, df.logits)?;
        let loss_g = tape.scalar(loss_g_var);
        if !loss_g.is_finite() {
            return Err(diag(TuvfError::NonFinite { op: "loss_g", index: 0 }));
        }
        store.zero_grad();
        tape.backward_into(loss_g_var, store).map_err(diag)?;
        fill_missing_grads(store, &g_names)?;
        opt_g.step(store).map_err(diag)?;
        store.zero_grad();

        log.rows.push(GanLogRow {
            step,
            images,
            loss_d,
            loss_g,
            r1,
            real_logit: mean(td.value(losses.real_logits)),
            fake_logit: mean(td.value(losses.fake_logits)),
            beta: cfg.patch.beta_at(progress),
            blur_sigma: augs[0].params.sigma,
            mean_scale: specs.iter().map(|s| s.scale).sum::<f64>() / b as f64,
        });
        let last = step + 1 == cfg.steps;
        if cfg.sample_every > 0 && (step % cfg.sample_every == 0 || last) {
            let field = model.field(store, &sample_z)?;
            let img = model.renderer.render_image(&data.scenes[0], &field, store, &sample_cam, cfg.seed)?;
            log.samples.push((step, img));
        }
    }
    Ok(log)
}
