use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::{adapter_factors, infonce_grad, BlockKey, BlockKind, ForgetLock, FrozenBackbone, ParamVector};
use crate::error::{Error, Result};
use crate::numerics::{matmul, DenseMatrix};

/// What a client minimizes during local training.
#[derive(Clone, Copy, Debug)]
pub enum Objective<'a> {
    Alignment,
    /// Alignment plus `alpha` times the lock penalty.
    AlignmentWithLock { lock: &'a ForgetLock, alpha: f64 },
    /// Ascent on the alignment loss.
    NegatedAlignment,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdSettings {
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct LocalOutcome {
    pub params: ParamVector,
    /// `params − start`, blockwise.
    pub delta: ParamVector,
    /// `B′A′ − BA` per adapter block.
    pub product_delta: BTreeMap<BlockKey, DenseMatrix>,
    /// Largest per-step `‖Π_u ∇L_a‖` per locked block; empty without a lock.
    pub max_projected_align_grad: BTreeMap<BlockKey, f64>,
    /// Mean alignment loss over the steps taken.
    pub mean_loss: f64,
}

/// Plain mini-batch SGD over the samples `idx` of (`xv`, `xt`).
///
/// Each epoch reshuffles `idx` without replacement from a stream seeded by
/// `settings.seed`; the last batch of an epoch may be short.
pub fn local_sgd(
    backbone: &FrozenBackbone,
    start: &ParamVector,
    xv: &DenseMatrix,
    xt: &DenseMatrix,
    idx: &[usize],
    objective: Objective<'_>,
    settings: SgdSettings,
) -> Result<LocalOutcome> {
    if idx.is_empty() {
        return Err(Error::usage("local training on an empty shard"));
    }
    if !(settings.lr >= 0.0) {
        return Err(Error::usage("learning rate must be non-negative"));
    }
    let mut batch = settings.batch_size.max(1);
    if batch > idx.len() {
        log::warn!(
            "batch size {} exceeds shard size {}; clamping",
            settings.batch_size,
            idx.len()
        );
        batch = idx.len();
    }
    let mut rng = crate::rng::rng_from(settings.seed);
    let mut params = start.clone();
    let mut order: Vec<usize> = idx.to_vec();
    let mut cursor = order.len();
    let mut max_proj: BTreeMap<BlockKey, f64> = BTreeMap::new();
    let mut loss_sum = 0.0;

    for _ in 0..settings.steps {
        if cursor >= order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + batch).min(order.len());
        let chosen = &order[cursor..end];
        cursor = end;
        let bv = xv.select_columns(chosen);
        let bt = xt.select_columns(chosen);
        let ag = infonce_grad(backbone, &params, &bv, &bt)?;
        loss_sum += ag.loss;
        let step = match objective {
            Objective::Alignment => ag.grad,
            Objective::NegatedAlignment => {
                let mut g = ag.grad;
                g.scale(-1.0);
                g
            }
            Objective::AlignmentWithLock { lock, alpha } => {
                for (k, n) in lock.projected_norms(&ag.grad)? {
                    let e = max_proj.entry(k).or_insert(0.0);
                    *e = e.max(n);
                }
                let (_, lg) = lock.value_and_grad(&params)?;
                let mut g = ag.grad;
                g.axpy(alpha, &lg)?;
                g
            }
        };
        params.axpy(-settings.lr, &step)?;
        if !params.is_finite() {
            return Err(Error::numeric("local training diverged to non-finite parameters"));
        }
    }

    let delta = params.sub(start)?;
    let product_delta = adapter_product_delta(backbone, start, &params)?;
    Ok(LocalOutcome {
        params,
        delta,
        product_delta,
        max_projected_align_grad: max_proj,
        mean_loss: if settings.steps == 0 {
            0.0
        } else {
            loss_sum / settings.steps as f64
        },
    })
}

fn adapter_product_delta(
    backbone: &FrozenBackbone,
    before: &ParamVector,
    after: &ParamVector,
) -> Result<BTreeMap<BlockKey, DenseMatrix>> {
    let cfg = backbone.config();
    let mut out = BTreeMap::new();
    for key in before.keys() {
        if let BlockKind::Adapter(_) = key.kind {
            let (b0, a0) = adapter_factors(cfg, before.expect_block(key)?);
            let (b1, a1) = adapter_factors(cfg, after.expect_block(key)?);
            out.insert(*key, matmul(&b1, &a1)?.sub(&matmul(&b0, &a0)?)?);
        }
    }
    Ok(out)
}
