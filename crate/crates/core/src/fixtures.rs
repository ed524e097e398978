//! Procedural shapes and textured reference views used as a closed-world
//! dataset.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::adversarial::PoseSampler;
use crate::csae::TrainingShape;
use crate::dpsr::DpsrConfig;
use crate::error::{Result, TuvfError};
use crate::geometry::{normalize_into_cube, sample_mesh_surface, vec3, PointCloud, TriMesh, Vec3};
use crate::image_io::Image;
use crate::renderer::{Camera, Renderer, RendererConfig, SceneGeometry};

/// Fraction of the cube a normalised fixture occupies.
pub const FILL: f64 = 0.7;
pub const CLOUD_POINTS: usize = 4096;

fn spow(v: f64, e: f64) -> f64 {
    v.signum() * v.abs().powf(e)
}

pub fn sphere_mesh(rings: usize, segments: usize) -> TriMesh {
    crate::geometry::mesh::polar_mesh(rings, segments, |t, a| [t.sin() * a.cos(), t.sin() * a.sin(), t.cos()])
}

/// `|x/a|^(2/e2) + ... ` style superellipsoid with semi-axes `axes`.
pub fn superellipsoid_mesh(axes: Vec3, e1: f64, e2: f64) -> TriMesh {
    crate::geometry::mesh::polar_mesh(32, 64, |t, a| {
        let (st, ct) = (t.sin(), t.cos());
        [
            axes[0] * spow(st, e1) * spow(a.cos(), e2),
            axes[1] * spow(st, e1) * spow(a.sin(), e2),
            axes[2] * spow(ct, e1),
        ]
    })
}

/// Capsule stretched along x with a flattened cross-section: a toy "car".
pub fn capsule_car_mesh(length: f64, width: f64, height: f64) -> TriMesh {
    let half = (length - width).max(0.0) / 2.0;
    crate::geometry::mesh::polar_mesh(32, 64, |t, a| {
        // polar axis along x
        let (st, ct) = (t.sin(), t.cos());
        let shift = if ct.abs() > 1e-12 { half * ct.signum() } else { 0.0 };
        let x = ct * width / 2.0 + shift;
        [x, st * a.cos() * width / 2.0, st * a.sin() * height / 2.0]
    })
}

#[derive(Debug, Clone)]
pub struct FixtureShape {
    pub name: String,
    pub mesh: TriMesh,
}

/// At least ten shapes; the parameters are a pure function of `seed`.
pub fn fixture_shapes(seed: u64) -> Vec<FixtureShape> {
    let mut rng = crate::rng(seed ^ 0x5348_4150);
    let mut out = vec![FixtureShape {
        name: "sphere".into(),
        mesh: sphere_mesh(32, 64),
    }];
    for i in 0..4 {
        let axes = [1.0, rng.random_range(0.6..1.0), rng.random_range(0.5..0.9)];
        let e1 = rng.random_range(0.4..1.0);
        let e2 = rng.random_range(0.4..1.0);
        out.push(FixtureShape {
            name: format!("superellipsoid{i}"),
            mesh: superellipsoid_mesh(axes, e1, e2),
        });
    }
    for i in 0..5 {
        let length = rng.random_range(1.8..2.6);
        let width = rng.random_range(0.8..1.1);
        let height = rng.random_range(0.5..0.8);
        out.push(FixtureShape {
            name: format!("car{i}"),
            mesh: capsule_car_mesh(length, width, height),
        });
    }
    out
}

/// Oriented samples of `mesh`, normalised into the central [`FILL`] of the cube.
pub fn normalized_cloud(mesh: &TriMesh, n: usize, seed: u64) -> Result<PointCloud> {
    let cloud = sample_mesh_surface(mesh, n, &mut crate::rng(seed))?;
    Ok(normalize_into_cube(&cloud, FILL)?.0)
}

pub fn training_shape(shape: &FixtureShape, seed: u64) -> Result<TrainingShape> {
    TrainingShape::from_cloud(&shape.name, &normalized_cloud(&shape.mesh, CLOUD_POINTS, seed)?)
}

/// Hand-specified colour per surface point: smooth bands plus a stripe
/// pattern, with hue picked by `style`.
pub fn procedural_colors(points: &[Vec3], style: u64) -> Vec<[f64; 3]> {
    let base = [
        [0.8, 0.2, 0.2],
        [0.2, 0.4, 0.85],
        [0.2, 0.7, 0.3],
        [0.9, 0.75, 0.2],
    ][(style % 4) as usize];
    points
        .iter()
        .map(|p| {
            let stripe = 0.5 + 0.5 * (2.0 * PI * 4.0 * p[0]).sin();
            let shade = 0.6 + 0.4 * (p[2] + 0.5);
            [0, 1, 2].map(|c| (base[c] * shade * (0.6 + 0.4 * stripe)).clamp(0.0, 1.0))
        })
        .collect()
}


#[derive(Debug, Clone)]
pub struct FixtureConfig {
    pub views: usize,
    pub resolution: usize,
    pub dpsr: DpsrConfig,
    pub render: RendererConfig,
}

impl FixtureConfig {
    /// Camera distribution of the reference views.
    pub fn poses(&self) -> PoseSampler {
        PoseSampler {
            width: self.resolution,
            height: self.resolution,
            ..PoseSampler::default()
        }
    }
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            views: 8,
            resolution: 64,
            dpsr: DpsrConfig {
                resolution: 64,
                sigma: 2.0,
            },
            render: RendererConfig {
                coarse_samples: 128,
                ..RendererConfig::default()
            },
        }
    }
}

/// One fixture shape with its reference views.
pub struct RenderedFixture {
    pub shape: FixtureShape,
    pub cloud: PointCloud,
    pub views: Vec<(Camera, Image)>,
}

pub fn render_fixture(shape: &FixtureShape, index: usize, cfg: &FixtureConfig, seed: u64) -> Result<RenderedFixture> {
    let cloud = normalized_cloud(&shape.mesh, CLOUD_POINTS, seed ^ index as u64)?;
    let normals = cloud.normals.clone().expect("sampled clouds carry normals");
    let scene = SceneGeometry::from_surface(cloud.points.clone(), normals, &cfg.dpsr)?;
    let colors = procedural_colors(&cloud.points, index as u64);
    let renderer = Renderer::new(cfg.render.clone())?;
    let mut rng = crate::rng(seed ^ 0x5649_4557 ^ index as u64);
    let poses = cfg.poses();
    let mut views = Vec::with_capacity(cfg.views);
    for v in 0..cfg.views {
        let cam = poses.sample(&mut rng)?;
        let img = renderer.reference_image(&scene, &colors, &cam, seed ^ v as u64)?;
        views.push((cam, img));
    }
    Ok(RenderedFixture {
        shape: shape.clone(),
        cloud,
        views,
    })
}

/// Writes meshes (`shapes/<name>.obj`), oriented clouds (`clouds/<name>.ply`),
/// reference views (`reals/<name>_<v>.png`) and `cameras.csv`. Returns the
/// written paths in order.
pub fn gen_fixtures(out: &Path, seed: u64, cfg: &FixtureConfig) -> Result<Vec<PathBuf>> {
    let dirs = ["shapes", "clouds", "reals"].map(|d| out.join(d));
    for d in &dirs {
        std::fs::create_dir_all(d).map_err(|e| TuvfError::io(d, e))?;
    }
    let mut written = Vec::new();
    let mut cams = String::from("image,azimuth_deg,elevation_deg,radius,fov_deg\n");
    let rendered: Vec<RenderedFixture> = fixture_shapes(seed)
        .iter()
        .enumerate()
        .map(|(i, s)| render_fixture(s, i, cfg, seed))
        .collect::<Result<_>>()?;
    for r in &rendered {
        let name = &r.shape.name;
        let mesh_path = dirs[0].join(format!("{name}.obj"));
        r.shape.mesh.save_obj(&mesh_path)?;
        written.push(mesh_path);
        let cloud_path = dirs[1].join(format!("{name}.ply"));
        std::fs::write(&cloud_path, crate::geometry::mesh::cloud_to_ply(&r.cloud)).map_err(|e| TuvfError::io(&cloud_path, e))?;
        written.push(cloud_path);
        for (v, (cam, img)) in r.views.iter().enumerate() {
            let file = format!("{name}_{v}.png");
            let path = dirs[2].join(&file);
            img.save_png(&path, true)?;
            written.push(path);
            let (az, el, radius) = cam.orbit_params();
            let _ = writeln!(cams, "{file},{az:.6},{el:.6},{radius:.6},{:.6}", cam.fov_deg);
        }
    }
    let cam_path = out.join("cameras.csv");
    std::fs::write(&cam_path, cams).map_err(|e| TuvfError::io(&cam_path, e))?;
    written.push(cam_path);
    Ok(written)
}

/// Outward normal check used by tests: mean dot of normals with the
/// direction from the centroid.
pub fn outwardness(points: &[Vec3], normals: &[Vec3]) -> f64 {
    let c = vec3::scale(points.iter().fold([0.0; 3], |a, p| vec3::add(a, *p)), 1.0 / points.len() as f64);
    points
        .iter()
        .zip(normals)
        .map(|(p, n)| vec3::dot(vec3::normalize(vec3::sub(*p, c)), *n))
        .sum::<f64>()
        / points.len() as f64
}
