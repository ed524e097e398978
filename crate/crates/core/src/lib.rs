//! Texture UV radiance fields at desk scale.
//!
//! A canonical surface auto-encoder maps the vertices of a UV icosphere onto
//! an object's surface. Texture features are generated per UV vertex, so one
//! texture can be rendered on every shape of a category. Rendering samples a
//! density derived from a spectral Poisson indicator grid and fuses the
//! features of the K nearest surface points at each shading location.

pub mod adversarial;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod csae;
pub mod dpsr;
pub mod editing;
pub mod geometry;
pub mod gradsuite;
pub mod image_io;
pub mod nets;
pub mod error;
pub mod fixtures;
pub mod params;
pub mod pipeline;
pub mod renderer;
pub mod selfcheck;
pub mod tensor;
pub mod texgen;

pub use error::{Result, TuvfError};
pub use params::ParamStore;
pub use tensor::Tensor;

/// Deterministic RNG used everywhere a seed is accepted.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

/// Sizes the global worker pool used by rendering and the heavier kernels.
/// Only the first call in a process takes effect.
pub fn set_workers(n: usize) -> Result<()> {
    if n == 0 {
        return Err(TuvfError::invalid("--workers must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| TuvfError::invalid(format!("worker pool: {e}")))
}
