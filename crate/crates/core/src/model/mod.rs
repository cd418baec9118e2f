//! Dual-encoder model: frozen random backbones, trainable low-rank adapters
//! and projectors, the symmetric InfoNCE objective and the Forget Lock.

mod encoder;
mod lock;
mod loss;
pub(crate) mod params;
mod sgd;

pub use encoder::{backward, encode, forward, FrozenBackbone, ForwardCache};
pub use lock::{forget_lock, ForgetLock};
pub use loss::{infonce_grad, infonce_loss, infonce_with_grad, AlignmentGrad};
pub use params::{BlockKey, BlockKind, Modality, ParamVector};
pub use sgd::{local_sgd, LocalOutcome, Objective, SgdSettings};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_dim_v: usize,
    pub input_dim_t: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub lora_rank: usize,
    pub n_adapter_blocks: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim_v: 16,
            input_dim_t: 16,
            hidden_dim: 32,
            embed_dim: 16,
            lora_rank: 4,
            n_adapter_blocks: 1,
            temperature: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lora_rank == 0 || self.lora_rank >= self.hidden_dim {
            return Err(Error::usage(format!(
                "lora_rank must be in [1, hidden_dim), got {} with hidden_dim {}",
                self.lora_rank, self.hidden_dim
            )));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::usage("temperature must be positive"));
        }
        if self.embed_dim < 2 {
            return Err(Error::usage("embed_dim must be at least 2"));
        }
        if self.input_dim_v == 0 || self.input_dim_t == 0 {
            return Err(Error::usage("input dimensions must be positive"));
        }
        Ok(())
    }

    pub fn input_dim(&self, m: Modality) -> usize {
        match m {
            Modality::Visual => self.input_dim_v,
            Modality::Text => self.input_dim_t,
        }
    }

    pub fn adapter_len(&self) -> usize {
        2 * self.hidden_dim * self.lora_rank
    }

    pub fn projector_len(&self) -> usize {
        let h = self.hidden_dim;
        h * h + h + self.embed_dim * h + self.embed_dim
    }

    /// Block keys and lengths in canonical order.
    pub fn layout(&self) -> Vec<(BlockKey, usize)> {
        let mut out = Vec::new();
        for m in Modality::ALL {
            for i in 0..self.n_adapter_blocks {
                out.push((BlockKey::adapter(m, i), self.adapter_len()));
            }
            out.push((BlockKey::projector(m), self.projector_len()));
        }
        out
    }

    /// Total trainable parameter count.
    pub fn dim(&self) -> usize {
        self.layout().iter().map(|(_, n)| n).sum()
    }

    pub fn hash(&self) -> String {
        crate::config_hash(self)
    }
}

/// Read-only views of one adapter block's factors.
pub(crate) fn adapter_factors(cfg: &ModelConfig, flat: &[f64]) -> (DenseMatrix, DenseMatrix) {
    let (h, r) = (cfg.hidden_dim, cfg.lora_rank);
    let b = DenseMatrix::from_col_major(h, r, flat[..h * r].to_vec()).expect("adapter layout");
    let a = DenseMatrix::from_col_major(r, h, flat[h * r..2 * h * r].to_vec()).expect("adapter layout");
    (b, a)
}

pub(crate) struct ProjectorView {
    pub w1: DenseMatrix,
    pub b1: Vec<f64>,
    pub w2: DenseMatrix,
    pub b2: Vec<f64>,
}

pub(crate) fn projector_view(cfg: &ModelConfig, flat: &[f64]) -> ProjectorView {
    let (h, m) = (cfg.hidden_dim, cfg.embed_dim);
    let mut o = 0;
    let mut take = |n: usize| {
        let s = flat[o..o + n].to_vec();
        o += n;
        s
    };
    let w1 = DenseMatrix::from_col_major(h, h, take(h * h)).expect("projector layout");
    let b1 = take(h);
    let w2 = DenseMatrix::from_col_major(m, h, take(m * h)).expect("projector layout");
    let b2 = take(m);
    ProjectorView { w1, b1, w2, b2 }
}

/// Fresh trainable parameters: zero `B` factors (so adapters start as the
/// identity), Gaussian `A` factors and projector weights, zero biases.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamVector> {
    use rand_distr::{Distribution, Normal};
    cfg.validate()?;
    let mut rng = crate::rng::rng_from(seed);
    let std = (1.0 / cfg.hidden_dim as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let (h, r, m) = (cfg.hidden_dim, cfg.lora_rank, cfg.embed_dim);
    let mut pv = ParamVector::zeros(cfg);
    for (key, len) in cfg.layout() {
        let block = pv.block_mut(&key).expect("layout key");
        match key.kind {
            BlockKind::Adapter(_) => {
                for x in &mut block[h * r..] {
                    *x = normal.sample(&mut rng);
                }
            }
            BlockKind::Projector => {
                for x in &mut block[..h * h] {
                    *x = normal.sample(&mut rng);
                }
                let w2 = h * h + h;
                for x in &mut block[w2..w2 + m * h] {
                    *x = normal.sample(&mut rng);
                }
            }
        }
        debug_assert_eq!(block.len(), len);
    }
    Ok(pv)
}
