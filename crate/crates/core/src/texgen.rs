//! Implicit texture generator on the UV sphere.
//!
//! Each sphere vertex is Fourier-encoded and pushed through a stack of
//! style-modulated layers. Vertices never interact, so any subset of rows can
//! be evaluated on its own.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Tape, Var};
use crate::error::{Result, TuvfError};
use crate::geometry::UvSphere;
use crate::nets::{Activation, FourierEncoding, Mlp, MlpSpec, ModFcLayer};
use crate::params::ParamStore;
use crate::{checkpoint, Tensor};

pub const PREFIX: &str = "tex.cips";
pub const FIELD_NAME: &str = "tex.field";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorArch {
    CipsUv,
    Cips2dEquirect,
    SpatialConv,
}

impl GeneratorArch {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cips-uv" => Ok(GeneratorArch::CipsUv),
            "cips-2d-equirect" => Ok(GeneratorArch::Cips2dEquirect),
            "spatial-conv" => Ok(GeneratorArch::SpatialConv),
            other => Err(TuvfError::Config(format!(
                "unknown generator architecture {other:?} (expected cips-uv, cips-2d-equirect or spatial-conv)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GeneratorArch::CipsUv => "cips-uv",
            GeneratorArch::Cips2dEquirect => "cips-2d-equirect",
            GeneratorArch::SpatialConv => "spatial-conv",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TexGenConfig {
    pub arch: GeneratorArch,
    pub level: u32,
    pub n_freq: usize,
    pub layers: usize,
    pub hidden: usize,
    pub z_dim: usize,
    pub feature_dim: usize,
    pub demodulate: bool,
    pub init_seed: u64,
}

impl Default for TexGenConfig {
    fn default() -> Self {
        TexGenConfig {
            arch: GeneratorArch::CipsUv,
            level: 4,
            n_freq: 6,
            layers: 6,
            hidden: 128,
            z_dim: 64,
            feature_dim: 32,
            demodulate: true,
            init_seed: 0,
        }
    }
}

impl TexGenConfig {
    pub fn validate(&self) -> Result<()> {
        match self.arch {
            GeneratorArch::CipsUv => {}
            other => {
                return Err(TuvfError::OutOfScope(format!(
                    "generator architecture {} is listed for ablations but not implemented",
                    other.name()
                )))
            }
        }
        if self.layers < 1 || self.hidden == 0 || self.z_dim == 0 || self.feature_dim == 0 || self.n_freq == 0 {
            return Err(TuvfError::Config("texgen sizes must be positive".into()));
        }
        Ok(())
    }
}

pub struct TextureGenerator {
    pub config: TexGenConfig,
    pub encoding: FourierEncoding,
    pub mapping: Mlp,
    pub layers: Vec<ModFcLayer>,
}

impl TextureGenerator {
    pub fn new(config: TexGenConfig) -> Result<Self> {
        config.validate()?;
        let encoding = FourierEncoding::new(3, config.n_freq, true);
        let z = config.z_dim;
        let mapping = Mlp::new(
            &format!("{PREFIX}.map"),
            MlpSpec::new(&[z, z, z], Activation::leaky(), Activation::Identity).seeded(config.init_seed),
        )?;
        let mut layers = Vec::with_capacity(config.layers);
        let mut width = encoding.out_dim();
        for i in 0..config.layers {
            let last = i + 1 == config.layers;
            let out = if last { config.feature_dim } else { config.hidden };
            layers.push(ModFcLayer::new(
                format!("{PREFIX}.fc{i}"),
                width,
                out,
                z,
                config.demodulate && !last,
            ));
            width = out;
        }
        Ok(TextureGenerator {
            config,
            encoding,
            mapping,
            layers,
        })
    }

    pub fn init(&self, store: &mut ParamStore) {
        self.mapping.init(store);
        let mut rng = crate::rng(self.config.init_seed ^ 0x7465_7867);
        for l in &self.layers {
            l.init(store, &mut rng);
        }
    }

    pub fn map_style(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> Result<Var> {
        let n = tape.value(z).len();
        if n != self.config.z_dim {
            return Err(TuvfError::shape("map_style", format!("code of length {n}, expected {}", self.config.z_dim)));
        }
        let z = tape.reshape(z, &[1, n])?;
        let s = self.mapping.forward(tape, store, z)?;
        tape.reshape(s, &[n])
    }

    /// Features `[n, feature_dim]` for sphere coordinates `coords: [n, 3]`.
    pub fn features(&self, tape: &mut Tape, store: &ParamStore, coords: Var, z: Var) -> Result<Var> {
        let style = self.map_style(tape, store, z)?;
        let mut h = self.encoding.forward(tape, coords)?;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(tape, store, h, style)?;
            if i + 1 < self.layers.len() {
                h = tape.leaky_relu(h, crate::nets::mlp::LEAKY_SLOPE)?;
            }
        }
        Ok(h)
    }

    /// Full field for `sphere`, without recording gradients.
    pub fn generate(&self, store: &ParamStore, sphere: &UvSphere, z: &[f64]) -> Result<UvTextureField> {
        if sphere.level != self.config.level {
            return Err(TuvfError::invalid(format!(
                "sphere level {} does not match generator level {}",
                sphere.level, self.config.level
            )));
        }
        let mut tape = Tape::inference();
        let c = tape.constant(&[sphere.len(), 3], sphere.flat())?;
        let zv = tape.constant(&[z.len()], z.to_vec())?;
        let f = self.features(&mut tape, store, c, zv)?;
        UvTextureField::new(tape.tensor(f))
    }
}

/// Standard-normal texture code.
pub fn sample_code(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Per-UV-vertex feature table `[n_vertices, feature_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UvTextureField {
    pub features: Tensor,
}

impl UvTextureField {
    pub fn new(features: Tensor) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(TuvfError::shape("texture_field", format!("expected rank 2, got {:?}", features.shape())));
        }
        features.check_finite("texture_field")?;
        Ok(UvTextureField { features })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    /// SHA-256 over the stored f32 values.
    pub fn checksum(&self) -> String {
        let mut s = ParamStore::new();
        s.insert(FIELD_NAME, self.features.clone());
        s.checksum(FIELD_NAME)
    }

    pub fn to_store(&self) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(FIELD_NAME, self.features.clone());
        s
    }

    pub fn from_store(store: &ParamStore) -> Result<Self> {
        let mut t = store.get(FIELD_NAME)?.clone();
        t.requires_grad = false;
        t.grad = None;
        UvTextureField::new(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(&self.to_store(), path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        UvTextureField::from_store(&checkpoint::load(path)?)
    }
}
