use std::sync::Arc;

use super::augment::area_resample;
use super::patch::PatchSpec;
use crate::autodiff::{SparseMatrix, Tape, Var};
use crate::error::{Result, TuvfError};
use crate::nets::{Activation, FourierEncoding, Mlp, MlpSpec};
use crate::params::ParamStore;

pub const PREFIX: &str = "disc";

#[derive(Debug, Clone, PartialEq)]
pub struct DiscConfig {
    pub patch_res: usize,
    /// Side of the downsampled patch fed to the MLP.
    pub input_res: usize,
    pub hidden: Vec<usize>,
    pub n_freq: usize,
    pub init_seed: u64,
}

impl Default for DiscConfig {
    fn default() -> Self {
        DiscConfig {
            patch_res: 32,
            input_res: 16,
            hidden: vec![256, 128],
            n_freq: 4,
            init_seed: 0,
        }
    }
}

/// MLP patch discriminator conditioned on the patch scale and offset.
pub struct Discriminator {
    pub config: DiscConfig,
    pub encoding: FourierEncoding,
    pub mlp: Mlp,
    down: Arc<SparseMatrix>,
    down_t: Arc<SparseMatrix>,
}

/// Logits plus what the explicit input-gradient graph needs.
pub struct DiscOutput {
    pub logits: Var,
    pub batch: usize,
    preacts: Vec<Var>,
}

impl Discriminator {
    pub fn new(config: DiscConfig) -> Result<Self> {
        if config.patch_res == 0 || config.input_res == 0 || config.hidden.is_empty() {
            return Err(TuvfError::Config("discriminator sizes must be positive".into()));
        }
        let encoding = FourierEncoding::new(3, config.n_freq, true);
        let mut widths = vec![3 * config.input_res * config.input_res + encoding.out_dim()];
        widths.extend(&config.hidden);
        widths.push(1);
        let mlp = Mlp::new(
            PREFIX,
            MlpSpec::new(&widths, Activation::leaky(), Activation::Identity).seeded(config.init_seed ^ 0x6469_7363),
        )?;
        let down = area_resample(config.patch_res, config.input_res);
        let down_t = down.transpose();
        Ok(Discriminator {
            config,
            encoding,
            mlp,
            down: Arc::new(down),
            down_t: Arc::new(down_t),
        })
    }

    pub fn init(&self, store: &mut ParamStore) {
        self.mlp.init(store);
    }

    /// Logits `[batch]` for patches given as channel planes `[batch * 3, res * res]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, planes: Var, specs: &[PatchSpec]) -> Result<DiscOutput> {
        let p = self.config.patch_res;
        let s = tape.shape(planes).to_vec();
        let b = specs.len();
        if s != [b * 3, p * p] {
            return Err(TuvfError::shape(
                "discriminator",
                format!("expected [{}, {}] planes for {b} patches, got {s:?}", b * 3, p * p),
            ));
        }
        if let Some(bad) = specs.iter().find(|sp| sp.resolution != p) {
            return Err(TuvfError::invalid(format!("patch resolution {} does not match the discriminator's {p}", bad.resolution)));
        }
        let small = tape.sparse(planes, self.down.clone())?;
        let r = self.config.input_res;
        let flat = tape.reshape(small, &[b, 3 * r * r])?;
        let cond: Vec<f64> = specs.iter().flat_map(|sp| sp.condition()).collect();
        let cond = tape.constant(&[b, 3], cond)?;
        let enc = self.encoding.forward(tape, cond)?;
        let x = tape.concat(&[flat, enc], 1)?;
        let (y, preacts) = self.mlp.forward_with_preacts(tape, store, x)?;
        if let Some(i) = tape.value(y).iter().position(|v| !v.is_finite()) {
            return Err(TuvfError::NonFinite {
                op: "discriminator",
                index: i,
            });
        }
        let logits = tape.reshape(y, &[b])?;
        Ok(DiscOutput {
            logits,
            batch: b,
            preacts,
        })
    }

    /// `d logit_b / d pixels` as planes `[batch * 3, res * res]`, recorded as an
    /// ordinary forward graph so it can itself be differentiated w.r.t. the
    /// weights. Activation slopes are taken as constants, which is exact
    /// almost everywhere for piecewise-linear activations.
    pub fn input_gradient(&self, tape: &mut Tape, store: &ParamStore, out: &DiscOutput) -> Result<Var> {
        let b = out.batch;
        let layers = &self.mlp.layers;
        let mut g = tape.constant(&[b, 1], vec![1.0; b])?;
        for (i, layer) in layers.iter().enumerate().rev() {
            if i + 1 < layers.len() {
                let mask = self
                    .mlp
                    .spec
                    .activation
                    .slope_mask(tape.value(out.preacts[i]))
                    .ok_or_else(|| TuvfError::invalid("input gradient needs piecewise-linear activations"))?;
                let m = tape.constant(&[b, layer.out_dim], mask)?;
                g = tape.mul(g, m)?;
            }
            let w = tape.param(store, &layer.weight_name())?;
            let wt = tape.transpose(w)?;
            g = tape.matmul(g, wt)?;
        }
        let r = self.config.input_res;
        let pix = tape.slice(g, 1, 0, 3 * r * r)?;
        let pix = tape.reshape(pix, &[b * 3, r * r])?;
        tape.sparse(pix, self.down_t.clone())
    }

    /// `mean_b ||d logit_b / d pixels||^2`.
    pub fn r1(&self, tape: &mut Tape, store: &ParamStore, out: &DiscOutput) -> Result<Var> {
        let g = self.input_gradient(tape, store, out)?;
        let sq = tape.square(g)?;
        let total = tape.sum(sq)?;
        tape.scale(total, 1.0 / out.batch as f64)
    }
}
