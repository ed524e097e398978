//! TOML configuration for the whole pipeline.
//!
//! Sections are `geometry`, `dpsr`, `render`, `gan` and `edit`. Every key is
//! optional; unknown keys are errors. [`Config::to_toml`] writes every value
//! with a comment naming where its default comes from, and its output parses
//! back to the same tree.

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use crate::adversarial::{AugmentConfig, DiscConfig, GanConfig, PatchConfig};
use crate::csae::{CsaeConfig, CsaeTrainConfig};
use crate::dpsr::DpsrConfig;
use crate::editing::EditConfig;
use crate::error::{Result, TuvfError};
use crate::renderer::{RendererConfig, TransmittanceMode};
use crate::texgen::{GeneratorArch, TexGenConfig};

const PUBLISHED: &str = "published default";
const DESK: &str = "desk-scale choice";

trait TomlValue {
    fn toml(&self) -> String;
}

impl TomlValue for f64 {
    fn toml(&self) -> String {
        let s = format!("{self:?}");
        if s.contains(['.', 'e', 'i', 'N']) {
            s
        } else {
            format!("{s}.0")
        }
    }
}

macro_rules! int_value {
    ($($t:ty),*) => {$(
        impl TomlValue for $t {
            fn toml(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
int_value!(u32, u64, usize, bool);

impl TomlValue for String {
    fn toml(&self) -> String {
        format!("{self:?}")
    }
}

impl<T: TomlValue> TomlValue for Vec<T> {
    fn toml(&self) -> String {
        let parts: Vec<String> = self.iter().map(TomlValue::toml).collect();
        format!("[{}]", parts.join(", "))
    }
}

impl<T: TomlValue, const N: usize> TomlValue for [T; N] {
    fn toml(&self) -> String {
        let parts: Vec<String> = self.iter().map(TomlValue::toml).collect();
        format!("[{}]", parts.join(", "))
    }
}

macro_rules! section {
    ($name:ident, $title:literal, { $($field:ident : $ty:ty = $default:expr, $prov:expr;)* }) => {
        #[derive(Debug, Clone, PartialEq, Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct $name {
            $(pub $field: $ty,)*
        }

        impl Default for $name {
            fn default() -> Self {
                $name { $($field: $default,)* }
            }
        }

        impl $name {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($field)),*];

            fn write(&self, out: &mut String) {
                let _ = writeln!(out, "[{}]", $title);
                $(let _ = writeln!(out, "{} = {}  # {}", stringify!($field), self.$field.toml(), $prov);)*
            }
        }
    };
}

section!(GeometrySection, "geometry", {
    level: u32 = 4, PUBLISHED;
    code_dim: usize = 256, PUBLISHED;
    encoder_points: usize = 4096, PUBLISHED;
    encoder_widths: Vec<usize> = vec![64, 64, 128], DESK;
    encoder_k: usize = 20, PUBLISHED;
    hidden: usize = 128, DESK;
    decoder_k: usize = 10, DESK;
    init_seed: u64 = 0, DESK;
    steps: usize = 500, DESK;
    lr: f64 = 1e-3, DESK;
    lambda_dpsr: f64 = 1.0, DESK;
    train_grid: usize = 32, DESK;
    target_points: usize = 2562, PUBLISHED;
});

section!(DpsrSection, "dpsr", {
    resolution: usize = 128, PUBLISHED;
    sigma: f64 = 2.0, DESK;
});

section!(RenderSection, "render", {
    gamma: f64 = 5e-4, PUBLISHED;
    coarse_samples: usize = 256, PUBLISHED;
    shading_points: usize = 3, PUBLISHED;
    k: usize = 4, PUBLISHED;
    near: f64 = 1.0, DESK;
    far: f64 = 3.0, DESK;
    weight_eps: f64 = 1e-4, DESK;
    background: [f64; 3] = [1.0, 1.0, 1.0], DESK;
    transmittance: String = "standard".into(), DESK;
    view_dir: bool = true, PUBLISHED;
    jitter: bool = true, DESK;
    feature_dim: usize = 32, PUBLISHED;
    mlpf_hidden: usize = 64, DESK;
    mlpf_out: usize = 32, DESK;
    mlpc_hidden: usize = 64, DESK;
    tile: usize = 32, DESK;
    init_seed: u64 = 0, DESK;
});

section!(GanSection, "gan", {
    generator: String = "cips-uv".into(), PUBLISHED;
    generator_layers: usize = 6, DESK;
    generator_hidden: usize = 128, DESK;
    n_freq: usize = 6, DESK;
    z_dim: usize = 64, DESK;
    generator_seed: u64 = 0, DESK;
    steps: usize = 2000, DESK;
    batch: usize = 4, DESK;
    lr_g: f64 = 1e-3, DESK;
    lr_d: f64 = 1e-3, DESK;
    r1_weight: f64 = 1.0, PUBLISHED;
    patch: usize = 32, DESK;
    min_scale: f64 = 0.125, DESK;
    beta_start: f64 = 1e-4, PUBLISHED;
    beta_end: f64 = 0.8, PUBLISHED;
    anneal_images: usize = 5000, DESK;
    translate: bool = true, PUBLISHED;
    scale: bool = true, PUBLISHED;
    max_shift: f64 = 0.05, DESK;
    scale_range: [f64; 2] = [0.9, 1.1], DESK;
    blur_sigma: f64 = 15.0, "published 60 at 128 px, scaled to the patch size";
    blur_images: usize = 5000, DESK;
    disc_input_res: usize = 16, DESK;
    disc_hidden: Vec<usize> = vec![256, 128], DESK;
    disc_n_freq: usize = 4, DESK;
    disc_seed: u64 = 0, DESK;
    sample_every: usize = 500, DESK;
});

section!(EditSection, "edit", {
    steps: usize = 300, DESK;
    lr: f64 = 0.1, DESK;
    drift_weight: f64 = 0.1, DESK;
    mask_threshold: f64 = 0.5, DESK;
});

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub geometry: GeometrySection,
    pub dpsr: DpsrSection,
    pub render: RenderSection,
    pub gan: GanSection,
    pub edit: EditSection,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl Config {
    /// Parses and validates. `source` names the input in error messages.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| TuvfError::Parse {
            source_name: source.to_string(),
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TuvfError::io(path, e))?;
        Config::parse(&text, &path.display().to_string())
    }

    /// Every key with its value and the origin of its default.
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        self.geometry.write(&mut out);
        out.push('\n');
        self.dpsr.write(&mut out);
        out.push('\n');
        self.render.write(&mut out);
        out.push('\n');
        self.gan.write(&mut out);
        out.push('\n');
        self.edit.write(&mut out);
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.csae()?.validate()?;
        self.csae_train().dpsr.validate()?;
        self.dpsr().validate()?;
        self.renderer()?.validate()?;
        self.texgen()?.validate()?;
        self.gan()?.validate()?;
        self.edit().validate()?;
        if self.gan.steps == 0 || self.geometry.steps == 0 {
            return Err(TuvfError::Config("step counts must be positive".into()));
        }
        Ok(())
    }

    pub fn csae(&self) -> Result<CsaeConfig> {
        let g = &self.geometry;
        Ok(CsaeConfig {
            level: g.level,
            code_dim: g.code_dim,
            encoder_points: g.encoder_points,
            encoder_widths: g.encoder_widths.clone(),
            encoder_k: g.encoder_k,
            hidden: g.hidden,
            decoder_k: g.decoder_k,
            init_seed: g.init_seed,
        })
    }

    pub fn csae_train(&self) -> CsaeTrainConfig {
        let g = &self.geometry;
        CsaeTrainConfig {
            steps: g.steps,
            lr: g.lr,
            lambda_dpsr: g.lambda_dpsr,
            dpsr: DpsrConfig {
                resolution: g.train_grid,
                sigma: self.dpsr.sigma,
            },
            target_points: g.target_points,
            seed: 0,
        }
    }

    /// Grid used for rendering.
    pub fn dpsr(&self) -> DpsrConfig {
        DpsrConfig {
            resolution: self.dpsr.resolution,
            sigma: self.dpsr.sigma,
        }
    }

    pub fn renderer(&self) -> Result<RendererConfig> {
        let r = &self.render;
        Ok(RendererConfig {
            gamma: r.gamma,
            coarse_samples: r.coarse_samples,
            shading_points: r.shading_points,
            k: r.k,
            near: r.near,
            far: r.far,
            weight_eps: r.weight_eps,
            background: r.background,
            transmittance: TransmittanceMode::parse(&r.transmittance)?,
            view_dir: r.view_dir,
            jitter: r.jitter,
            feature_dim: r.feature_dim,
            mlpf_hidden: r.mlpf_hidden,
            mlpf_out: r.mlpf_out,
            mlpc_hidden: r.mlpc_hidden,
            tile: r.tile,
            init_seed: r.init_seed,
        })
    }

    pub fn texgen(&self) -> Result<TexGenConfig> {
        let g = &self.gan;
        Ok(TexGenConfig {
            arch: GeneratorArch::parse(&g.generator)?,
            level: self.geometry.level,
            n_freq: g.n_freq,
            layers: g.generator_layers,
            hidden: g.generator_hidden,
            z_dim: g.z_dim,
            feature_dim: self.render.feature_dim,
            demodulate: true,
            init_seed: g.generator_seed,
        })
    }

    pub fn gan(&self) -> Result<GanConfig> {
        let g = &self.gan;
        if !(g.blur_sigma >= 0.0) {
            return Err(TuvfError::Config(format!("gan.blur_sigma must be >= 0, got {}", g.blur_sigma)));
        }
        Ok(GanConfig {
            steps: g.steps,
            batch: g.batch,
            lr_g: g.lr_g,
            lr_d: g.lr_d,
            r1_weight: g.r1_weight,
            anneal_images: g.anneal_images,
            patch: PatchConfig {
                resolution: g.patch,
                min_scale: g.min_scale,
                beta_start: g.beta_start,
                beta_end: g.beta_end,
            },
            augment: AugmentConfig {
                translate: g.translate,
                scale: g.scale,
                max_shift: g.max_shift,
                scale_range: (g.scale_range[0], g.scale_range[1]),
                blur_sigma: g.blur_sigma,
                blur_images: g.blur_images,
            },
            disc: DiscConfig {
                patch_res: g.patch,
                input_res: g.disc_input_res,
                hidden: g.disc_hidden.clone(),
                n_freq: g.disc_n_freq,
                init_seed: g.disc_seed,
            },
            sample_every: g.sample_every,
            seed: 0,
        })
    }

    pub fn edit(&self) -> EditConfig {
        let e = &self.edit;
        EditConfig {
            steps: e.steps,
            lr: e.lr,
            drift_weight: e.drift_weight,
            mask_threshold: e.mask_threshold,
            render_seed: 0,
        }
    }
}
