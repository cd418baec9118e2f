use rand_distr::{Distribution, Normal};

use super::{adapter_factors, projector_view, BlockKey, BlockKind, Modality, ModelConfig, ParamVector};
use crate::error::{Error, Result};
use crate::numerics::{matmul, matmul_nt, matmul_tn, DenseMatrix};

/// Fixed random input maps, one per modality. Never trained.
#[derive(Clone, Debug)]
pub struct FrozenBackbone {
    config: ModelConfig,
    visual: DenseMatrix,
    text: DenseMatrix,
}

impl FrozenBackbone {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let draw = |m: Modality| {
            let input = config.input_dim(m);
            let mut rng = crate::rng::child_rng(config.seed, &format!("backbone.{}", m.tag()));
            let normal = Normal::new(0.0, (1.0 / input as f64).sqrt()).expect("positive std");
            DenseMatrix::from_fn(config.hidden_dim, input, |_, _| normal.sample(&mut rng))
        };
        Ok(FrozenBackbone {
            config: config.clone(),
            visual: draw(Modality::Visual),
            text: draw(Modality::Text),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self, m: Modality) -> &DenseMatrix {
        match m {
            Modality::Visual => &self.visual,
            Modality::Text => &self.text,
        }
    }
}

/// Intermediate activations kept for the backward pass. Every matrix has
/// one column per sample.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub modality: Modality,
    adapter_inputs: Vec<DenseMatrix>,
    adapter_codes: Vec<DenseMatrix>,
    hidden: DenseMatrix,
    activations: DenseMatrix,
    raw_norms: Vec<f64>,
    /// Unit-norm embeddings, `embed_dim × N`.
    pub z: DenseMatrix,
}

/// Run the encoder for one modality. `inputs` is `input_dim × N`.
pub fn forward(
    backbone: &FrozenBackbone,
    params: &ParamVector,
    modality: Modality,
    inputs: &DenseMatrix,
) -> Result<ForwardCache> {
    let cfg = &backbone.config;
    if inputs.cols() == 0 {
        return Err(Error::usage("encode needs at least one sample"));
    }
    if inputs.rows() != cfg.input_dim(modality) {
        return Err(Error::usage(format!(
            "{} inputs have dimension {}, expected {}",
            modality.tag(),
            inputs.rows(),
            cfg.input_dim(modality)
        )));
    }
    let mut h = matmul(backbone.weights(modality), inputs)?;
    let mut adapter_inputs = Vec::with_capacity(cfg.n_adapter_blocks);
    let mut adapter_codes = Vec::with_capacity(cfg.n_adapter_blocks);
    for i in 0..cfg.n_adapter_blocks {
        let (b, a) = adapter_factors(cfg, params.expect_block(&BlockKey::adapter(modality, i))?);
        let u = matmul(&a, &h)?;
        let next = h.add(&matmul(&b, &u)?)?;
        adapter_inputs.push(std::mem::replace(&mut h, next));
        adapter_codes.push(u);
    }
    let proj = projector_view(cfg, params.expect_block(&BlockKey::projector(modality))?);
    let mut act = matmul(&proj.w1, &h)?;
    for j in 0..act.cols() {
        for (x, b) in act.col_mut(j).iter_mut().zip(&proj.b1) {
            *x = (*x + b).tanh();
        }
    }
    let mut z = matmul(&proj.w2, &act)?;
    let mut raw_norms = Vec::with_capacity(z.cols());
    for j in 0..z.cols() {
        let col = z.col_mut(j);
        for (x, b) in col.iter_mut().zip(&proj.b2) {
            *x += b;
        }
        let n = crate::numerics::norm(col);
        if !(n > 1e-300) || !n.is_finite() {
            return Err(Error::numeric(format!(
                "degenerate {} embedding for sample {j} (raw norm {n:e})",
                modality.tag()
            )));
        }
        col.iter_mut().for_each(|x| *x /= n);
        raw_norms.push(n);
    }
    Ok(ForwardCache {
        modality,
        adapter_inputs,
        adapter_codes,
        hidden: h,
        activations: act,
        raw_norms,
        z,
    })
}

/// Unit-norm embeddings, `embed_dim × N`.
pub fn encode(
    backbone: &FrozenBackbone,
    params: &ParamVector,
    modality: Modality,
    inputs: &DenseMatrix,
) -> Result<DenseMatrix> {
    Ok(forward(backbone, params, modality, inputs)?.z)
}

/// Backpropagate `dz` (gradient w.r.t. the unit embeddings) into the
/// trainable blocks of `cache.modality`. Blocks of the other modality are
/// returned as zeros.
pub fn backward(
    backbone: &FrozenBackbone,
    params: &ParamVector,
    cache: &ForwardCache,
    dz: &DenseMatrix,
) -> Result<ParamVector> {
    let cfg = &backbone.config;
    let m = cache.modality;
    if dz.shape() != cache.z.shape() {
        return Err(Error::usage("embedding gradient shape mismatch"));
    }
    let mut grad = params.zeros_like();

    // Through the normalization: dz_raw = (dz - z (z·dz)) / |z_raw|.
    let mut dzr = dz.clone();
    for j in 0..dzr.cols() {
        let z = cache.z.col(j);
        let proj = crate::numerics::dot(z, dz.col(j));
        let n = cache.raw_norms[j];
        for (g, zi) in dzr.col_mut(j).iter_mut().zip(z) {
            *g = (*g - zi * proj) / n;
        }
    }

    let proj = projector_view(cfg, params.expect_block(&BlockKey::projector(m))?);
    let dw2 = matmul_nt(&dzr, &cache.activations)?;
    let db2 = row_sums(&dzr);
    let mut da = matmul_tn(&proj.w2, &dzr)?;
    for j in 0..da.cols() {
        for (g, t) in da.col_mut(j).iter_mut().zip(cache.activations.col(j)) {
            *g *= 1.0 - t * t;
        }
    }
    let dw1 = matmul_nt(&da, &cache.hidden)?;
    let db1 = row_sums(&da);
    let mut dh = matmul_tn(&proj.w1, &da)?;
    {
        let out = grad
            .block_mut(&BlockKey::projector(m))
            .expect("projector block present");
        let mut o = 0;
        for part in [dw1.as_slice(), &db1, dw2.as_slice(), &db2] {
            out[o..o + part.len()].copy_from_slice(part);
            o += part.len();
        }
    }

    for i in (0..cfg.n_adapter_blocks).rev() {
        let key = BlockKey::adapter(m, i);
        let (b, a) = adapter_factors(cfg, params.expect_block(&key)?);
        let u = &cache.adapter_codes[i];
        let h_in = &cache.adapter_inputs[i];
        let db = matmul_nt(&dh, u)?;
        let du = matmul_tn(&b, &dh)?;
        let dafac = matmul_nt(&du, h_in)?;
        let back = matmul_tn(&a, &du)?;
        dh = dh.add(&back)?;
        let out = grad.block_mut(&key).expect("adapter block present");
        let nb = db.as_slice().len();
        out[..nb].copy_from_slice(db.as_slice());
        out[nb..].copy_from_slice(dafac.as_slice());
        debug_assert!(matches!(key.kind, BlockKind::Adapter(_)));
    }
    Ok(grad)
}

fn row_sums(m: &DenseMatrix) -> Vec<f64> {
    let mut out = vec![0.0; m.rows()];
    for j in 0..m.cols() {
        for (o, x) in out.iter_mut().zip(m.col(j)) {
            *o += x;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use rand::Rng;

    fn inputs(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = crate::rng::rng_from(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn embeddings_are_unit_norm_and_deterministic() {
        let cfg = ModelConfig::default();
        let bb = FrozenBackbone::new(&cfg).unwrap();
        let mut p = init_params(&cfg, 2).unwrap();
        for (_, v) in p.iter_mut() {
            v.iter_mut().enumerate().for_each(|(i, x)| *x += 0.01 * ((i % 7) as f64 - 3.0));
        }
        let x = inputs(16, 9, 3);
        let z1 = encode(&bb, &p, Modality::Visual, &x).unwrap();
        let z2 = encode(&FrozenBackbone::new(&cfg).unwrap(), &p, Modality::Visual, &x).unwrap();
        assert_eq!(z1, z2);
        for j in 0..z1.cols() {
            assert!((crate::numerics::norm(z1.col(j)) - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn zero_adapters_reduce_to_projector_of_backbone() {
        let base = ModelConfig::default();
        let x = inputs(16, 5, 4);
        let mut outs = Vec::new();
        for rank in [1, 4, 8] {
            let cfg = ModelConfig { lora_rank: rank, ..base.clone() };
            let bb = FrozenBackbone::new(&cfg).unwrap();
            let mut p = init_params(&cfg, 5).unwrap();
            // Same projector weights across ranks.
            let reference = init_params(&base, 5).unwrap();
            for m in Modality::ALL {
                let key = BlockKey::projector(m);
                p.block_mut(&key).unwrap().copy_from_slice(reference.block(&key).unwrap());
            }
            outs.push(encode(&bb, &p, Modality::Text, &x).unwrap());
        }
        assert_eq!(outs[0], outs[1]);
        assert_eq!(outs[1], outs[2]);
    }

    #[test]
    fn wrong_input_dimension_is_usage_error() {
        let cfg = ModelConfig::default();
        let bb = FrozenBackbone::new(&cfg).unwrap();
        let p = init_params(&cfg, 1).unwrap();
        assert!(matches!(
            encode(&bb, &p, Modality::Visual, &inputs(3, 2, 1)),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn zero_projector_output_is_numeric_error() {
        let cfg = ModelConfig::default();
        let bb = FrozenBackbone::new(&cfg).unwrap();
        let p = ParamVector::zeros(&cfg);
        let err = encode(&bb, &p, Modality::Visual, &inputs(16, 2, 1)).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert!(err.to_string().contains("sample 0"));
    }
}
