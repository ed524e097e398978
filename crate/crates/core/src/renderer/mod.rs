//! Density-guided point-based rendering of a UV texture field.
//!
//! Geometry-only work (ray sampling against the indicator grid, shading
//! point selection, nearest-neighbour lookups) is collected into a
//! [`RenderPlan`] outside the tape. Only feature fusion, shading and
//! compositing are recorded, so gradients reach the texture field and the
//! shading networks.

pub mod camera;
pub mod fusion;
pub mod sampling;

use rayon::prelude::*;

pub use camera::{Camera, PixelRect, Ray};
pub use fusion::{idw_weights, FeatureLog, RenderPlan, ShadeSample, ShadingNets};
pub use sampling::{density, sample_ray, RaySampleBatch, RendererConfig, TransmittanceMode};

use crate::autodiff::{Tape, Var};
use crate::dpsr::{self, DpsrConfig, IndicatorGrid};
use crate::error::{Result, TuvfError};
use crate::geometry::{KnnIndex, Vec3};
use crate::image_io::Image;
use crate::params::ParamStore;
use crate::texgen::UvTextureField;

/// Frozen per-shape render inputs.
#[derive(Debug, Clone)]
pub struct SceneGeometry {
    pub positions: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub grid: IndicatorGrid,
    pub knn: KnnIndex,
}

impl SceneGeometry {
    pub fn new(positions: Vec<Vec3>, normals: Vec<Vec3>, grid: IndicatorGrid) -> Result<Self> {
        if positions.is_empty() || positions.len() != normals.len() {
            return Err(TuvfError::invalid(format!(
                "scene needs matching non-empty positions and normals, got {} and {}",
                positions.len(),
                normals.len()
            )));
        }
        let knn = KnnIndex::new(&positions);
        Ok(SceneGeometry {
            positions,
            normals,
            grid,
            knn,
        })
    }

    /// Builds the indicator grid from the oriented surface points. Points are
    /// clamped into the grid cube for splatting only.
    pub fn from_surface(positions: Vec<Vec3>, normals: Vec<Vec3>, cfg: &DpsrConfig) -> Result<Self> {
        let clamped: Vec<Vec3> = positions.iter().map(|p| p.map(|c| c.clamp(-0.5, 0.5))).collect();
        let grid = dpsr::indicator_grid(&clamped, &normals, cfg)?;
        SceneGeometry::new(positions, normals, grid)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

pub struct Renderer {
    pub config: RendererConfig,
    pub nets: ShadingNets,
}

impl Renderer {
    pub fn new(config: RendererConfig) -> Result<Self> {
        config.validate()?;
        let nets = ShadingNets::new(&config)?;
        Ok(Renderer { config, nets })
    }

    pub fn init(&self, store: &mut ParamStore) {
        self.nets.init(store);
    }

    fn check_field(&self, scene: &SceneGeometry, field: &UvTextureField) -> Result<()> {
        if field.len() != scene.len() || field.dim() != self.config.feature_dim {
            return Err(TuvfError::invalid(format!(
                "inconsistent artifacts: texture field is {}x{}, scene has {} points and renderer expects {} features",
                field.len(),
                field.dim(),
                scene.len(),
                self.config.feature_dim
            )));
        }
        Ok(())
    }

    pub fn plan(&self, scene: &SceneGeometry, cam: &Camera, coords: &[(f64, f64)], seed: u64) -> Result<RenderPlan> {
        RenderPlan::build(scene, cam, coords, &self.config, seed)
    }

    /// Differentiable pixels `[n_pixels, 3]` for a planned render.
    pub fn render_on_tape(&self, tape: &mut Tape, store: &ParamStore, field: Var, plan: &RenderPlan) -> Result<Var> {
        Ok(plan.shade(tape, store, &self.nets, field, self.config.background)?.rgb)
    }

    /// Renders arbitrary frame coordinates without gradients.
    pub fn render_coords(
        &self,
        scene: &SceneGeometry,
        field: &UvTextureField,
        store: &ParamStore,
        cam: &Camera,
        coords: &[(f64, f64)],
        seed: u64,
    ) -> Result<(Vec<f64>, Vec<f64>, FeatureLog)> {
        self.check_field(scene, field)?;
        let plan = self.plan(scene, cam, coords, seed)?;
        let mut tape = Tape::inference();
        let f = tape.constant_tensor(&field.features)?;
        let out = plan.shade(&mut tape, store, &self.nets, f, self.config.background)?;
        let mut log = FeatureLog::default();
        if let Some(g) = out.gathered {
            log.record(&plan.neighbor_indices(), tape.value(g), field.dim());
        }
        Ok((tape.value(out.rgb).to_vec(), plan.alpha, log))
    }

    pub fn render_patch(
        &self,
        scene: &SceneGeometry,
        field: &UvTextureField,
        store: &ParamStore,
        cam: &Camera,
        rect: PixelRect,
        seed: u64,
    ) -> Result<Image> {
        self.render_patch_logged(scene, field, store, cam, rect, seed).map(|r| r.0)
    }

    pub fn render_patch_logged(
        &self,
        scene: &SceneGeometry,
        field: &UvTextureField,
        store: &ParamStore,
        cam: &Camera,
        rect: PixelRect,
        seed: u64,
    ) -> Result<(Image, FeatureLog)> {
        cam.generate_rays(rect)?;
        let (rgb, alpha, log) = self.render_coords(scene, field, store, cam, &rect.centers(), seed)?;
        Ok((Image::new(rect.width, rect.height, rgb, alpha)?, log))
    }

    fn tiles(&self, cam: &Camera) -> Vec<PixelRect> {
        let t = self.config.tile;
        let mut out = Vec::new();
        for y0 in (0..cam.height).step_by(t) {
            for x0 in (0..cam.width).step_by(t) {
                out.push(PixelRect::new(x0, y0, t.min(cam.width - x0), t.min(cam.height - y0)));
            }
        }
        out
    }

    /// Full frame, rendered tile by tile in parallel.
    pub fn render_image(&self, scene: &SceneGeometry, field: &UvTextureField, store: &ParamStore, cam: &Camera, seed: u64) -> Result<Image> {
        self.render_image_logged(scene, field, store, cam, seed).map(|r| r.0)
    }

    pub fn render_image_logged(
        &self,
        scene: &SceneGeometry,
        field: &UvTextureField,
        store: &ParamStore,
        cam: &Camera,
        seed: u64,
    ) -> Result<(Image, FeatureLog)> {
        let tiles = self.tiles(cam);
        let parts: Vec<(PixelRect, Image, FeatureLog)> = tiles
            .into_par_iter()
            .map(|r| {
                self.render_patch_logged(scene, field, store, cam, r, seed)
                    .map(|(img, log)| (r, img, log))
            })
            .collect::<Result<_>>()?;
        let mut img = Image::new(cam.width, cam.height, vec![0.0; cam.width * cam.height * 3], vec![0.0; cam.width * cam.height])?;
        let mut log = FeatureLog::default();
        for (r, tile, l) in parts {
            img.blit(&tile, r.x0, r.y0);
            log.merge(l);
        }
        Ok((img, log))
    }

    /// Frame with fixed per-surface-point colours instead of learned shading.
    pub fn reference_image(&self, scene: &SceneGeometry, colors: &[[f64; 3]], cam: &Camera, seed: u64) -> Result<Image> {
        let rect = PixelRect::new(0, 0, cam.width, cam.height);
        let (rgb, alpha) = self.reference_coords(scene, colors, cam, &rect.centers(), seed)?;
        Image::new(cam.width, cam.height, rgb, alpha)
    }

    pub fn reference_coords(
        &self,
        scene: &SceneGeometry,
        colors: &[[f64; 3]],
        cam: &Camera,
        coords: &[(f64, f64)],
        seed: u64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        if colors.len() != scene.len() {
            return Err(TuvfError::invalid(format!("{} colours for {} surface points", colors.len(), scene.len())));
        }
        let plan = self.plan(scene, cam, coords, seed)?;
        Ok((plan.shade_reference(colors, self.config.background), plan.alpha))
    }
}
