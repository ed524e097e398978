//! File-level workflows shared by the command-line front end and the
//! acceptance suite: loading shapes and checkpoints, building scenes from a
//! trained auto-encoder, and the texture checkpoint layout.

use std::path::{Path, PathBuf};

use crate::adversarial::TextureModel;
use crate::checkpoint;
use crate::config::Config;
use crate::csae::{Csae, TrainingShape};
use crate::dpsr::DpsrConfig;
use crate::error::{Result, TuvfError};
use crate::geometry::mesh::load_cloud_ply;
use crate::geometry::{normalize_into_cube, sample_mesh_surface, PointCloud, TriMesh};
use crate::image_io::Image;
use crate::params::ParamStore;
use crate::renderer::SceneGeometry;
use crate::texgen::{self, UvTextureField, FIELD_NAME};

/// Fraction of the unit cube that normalised shapes fill.
pub const FILL: f64 = crate::fixtures::FILL;

/// Oriented points of a mesh (`.obj`, `.ply` with faces) or an oriented
/// point cloud (`.ply` with normals), normalised into the cube.
pub fn load_shape(path: &Path, n: usize, seed: u64) -> Result<PointCloud> {
    let cloud = match TriMesh::load(path) {
        Ok(mesh) => sample_mesh_surface(&mesh, n, &mut crate::rng(seed))?,
        Err(e) => {
            let is_ply = path.extension().is_some_and(|x| x.eq_ignore_ascii_case("ply"));
            if !is_ply {
                return Err(e);
            }
            let c = load_cloud_ply(path)?;
            if c.normals.is_none() || c.len() < n {
                return Err(TuvfError::invalid(format!(
                    "{}: point cloud needs normals and at least {n} points",
                    path.display()
                )));
            }
            let idx: Vec<usize> = (0..n).map(|i| i * c.len() / n).collect();
            c.subset(&idx)
        }
    };
    Ok(normalize_into_cube(&cloud, FILL)?.0)
}

/// Mesh and cloud files of `dir`, sorted by name.
pub fn shape_files(dir: &Path) -> Result<Vec<PathBuf>> {
    list_files(dir, &["obj", "ply"])
}

pub fn list_files(dir: &Path, extensions: &[&str]) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| TuvfError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| TuvfError::io(dir, e))?.path();
        let ok = p
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| extensions.iter().any(|x| e.eq_ignore_ascii_case(x)));
        if ok && p.is_file() {
            out.push(p);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(TuvfError::invalid(format!(
            "{} contains no {} files",
            dir.display(),
            extensions.join("/")
        )));
    }
    Ok(out)
}

pub fn load_training_shapes(dir: &Path, n: usize, seed: u64) -> Result<Vec<TrainingShape>> {
    shape_files(dir)?
        .iter()
        .map(|p| {
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            TrainingShape::from_cloud(name, &load_shape(p, n, seed)?)
        })
        .collect()
}

pub fn load_images(dir: &Path) -> Result<Vec<Image>> {
    list_files(dir, &["png"])?.iter().map(|p| Image::load_png(p)).collect()
}

/// Decoded surface of `points` turned into render inputs.
pub fn scene_from_points(csae: &Csae, store: &ParamStore, points: &[crate::geometry::Vec3], grid: &DpsrConfig) -> Result<SceneGeometry> {
    let input = csae.encoder_input(points)?;
    let surf = csae.reconstruct(store, &input)?;
    SceneGeometry::from_surface(surf.positions, surf.normals, grid)
}

/// Checkpoint sitting next to `ckpt` with the configuration it was trained with.
pub fn config_sidecar(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".toml");
    PathBuf::from(s)
}

/// The explicit config if given, else the sidecar of `ckpt` if present,
/// else defaults.
pub fn resolve_config(explicit: Option<&Path>, ckpt: Option<&Path>) -> Result<Config> {
    if let Some(p) = explicit {
        return Config::load(p);
    }
    if let Some(side) = ckpt.map(config_sidecar).filter(|p| p.exists()) {
        return Config::load(&side);
    }
    Ok(Config::default())
}

pub fn save_with_config(store: &ParamStore, path: &Path, cfg: &Config) -> Result<()> {
    checkpoint::save(store, path)?;
    let side = config_sidecar(path);
    std::fs::write(&side, cfg.to_toml()).map_err(|e| TuvfError::io(&side, e))
}

pub fn load_csae(path: &Path, cfg: &Config) -> Result<(Csae, ParamStore)> {
    let store = checkpoint::load(path)?;
    let csae = Csae::new(cfg.csae()?)?;
    let mut expected = ParamStore::new();
    csae.init(&mut expected);
    check_layout(&store, &expected, path)?;
    Ok((csae, store))
}

/// Generator and shading networks, plus an optional baked field under
/// `tex.field`.
pub fn load_texture(path: &Path, cfg: &Config) -> Result<(TextureModel, ParamStore)> {
    let store = checkpoint::load(path)?;
    let model = TextureModel::new(cfg.texgen()?, cfg.renderer()?)?;
    let mut expected = ParamStore::new();
    model.init(&mut expected);
    check_layout(&store, &expected, path)?;
    Ok((model, store))
}

fn check_layout(store: &ParamStore, expected: &ParamStore, path: &Path) -> Result<()> {
    for (name, t) in expected.iter() {
        let got = store.get(name).map_err(|_| {
            TuvfError::invalid(format!("{}: checkpoint lacks `{name}`; was it written with another config?", path.display()))
        })?;
        if got.shape() != t.shape() {
            return Err(TuvfError::invalid(format!(
                "{}: `{name}` has shape {:?}, the config expects {:?}",
                path.display(),
                got.shape(),
                t.shape()
            )));
        }
    }
    Ok(())
}

/// The baked field if the checkpoint has one, otherwise the generator's
/// field for the code drawn from `seed_tex`.
pub fn texture_field(model: &TextureModel, store: &ParamStore, seed_tex: u64) -> Result<UvTextureField> {
    if store.contains(FIELD_NAME) {
        return UvTextureField::from_store(store);
    }
    let z = texgen::sample_code(&mut crate::rng(seed_tex), model.generator.config.z_dim);
    model.field(store, &z)
}

/// Texture checkpoint with `field` baked in. Network tensors are copied
/// unchanged.
pub fn bake_field(store: &ParamStore, field: &UvTextureField) -> ParamStore {
    let mut out = ParamStore::new();
    for (k, t) in store.iter().filter(|(k, _)| *k != FIELD_NAME) {
        out.insert(k, t.clone());
    }
    out.insert(FIELD_NAME, field.features.clone());
    out
}

/// Checksum over every network tensor, excluding a baked field.
pub fn network_checksum(store: &ParamStore) -> String {
    let mut nets = store.clone();
    nets.remove(FIELD_NAME);
    nets.checksum("")
}

/// `"WxH"`.
pub fn parse_resolution(s: &str) -> Result<(usize, usize)> {
    let bad = || TuvfError::invalid(format!("resolution {s:?} is not WxH"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolutions() {
        assert_eq!(parse_resolution("64x48").unwrap(), (64, 48));
        assert!(parse_resolution("64").is_err());
        assert!(parse_resolution("0x4").is_err());
    }

    #[test]
    fn sidecar_name() {
        assert_eq!(config_sidecar(Path::new("a/b.ckpt")), PathBuf::from("a/b.ckpt.toml"));
    }
}
