//! Shared network layers.

pub mod adain;
pub mod edgeconv;
pub mod fourier;
pub mod mlp;
pub mod modfc;

pub use adain::adain;
pub use edgeconv::{knn_graph, EdgeConv};
pub use fourier::FourierEncoding;
pub use mlp::{Activation, Linear, Mlp, MlpSpec};
pub use modfc::ModFcLayer;
