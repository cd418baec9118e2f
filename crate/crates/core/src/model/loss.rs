use super::{backward, forward, FrozenBackbone, Modality, ParamVector};
use crate::error::{Error, Result};
use crate::numerics::{matmul, matmul_nt, matmul_tn, DenseMatrix};

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Symmetric InfoNCE value and its gradient with respect to both embedding
/// matrices (`m × N`, one unit column per pair).
pub fn infonce_with_grad(
    zv: &DenseMatrix,
    zt: &DenseMatrix,
    gamma: f64,
) -> Result<(f64, DenseMatrix, DenseMatrix)> {
    let n = zv.cols();
    if n == 0 {
        return Err(Error::usage("InfoNCE of an empty batch"));
    }
    if zt.shape() != zv.shape() {
        return Err(Error::usage(format!(
            "embedding batches differ: {:?} vs {:?}",
            zv.shape(),
            zt.shape()
        )));
    }
    if !(gamma > 0.0) {
        return Err(Error::usage("temperature must be positive"));
    }
    if n == 1 {
        return Ok((0.0, DenseMatrix::zeros(zv.rows(), 1), DenseMatrix::zeros(zt.rows(), 1)));
    }
    // s[i][j] = <zv_i, zt_j> / gamma, stored with i as the row index.
    let s = matmul_tn(zv, zt)?.scaled(1.0 / gamma);
    let row_lse: Vec<f64> = (0..n).map(|i| log_sum_exp((0..n).map(|j| s.get(i, j)))).collect();
    let col_lse: Vec<f64> = (0..n).map(|j| log_sum_exp(s.col(j).iter().copied())).collect();
    let mut loss = 0.0;
    for i in 0..n {
        loss += (row_lse[i] - s.get(i, i)) + (col_lse[i] - s.get(i, i));
    }
    let scale = 1.0 / (2.0 * n as f64);
    loss *= scale;

    let ds = DenseMatrix::from_fn(n, n, |i, j| {
        let p = (s.get(i, j) - row_lse[i]).exp();
        let q = (s.get(i, j) - col_lse[j]).exp();
        let delta = if i == j { 2.0 } else { 0.0 };
        scale * (p + q - delta) / gamma
    });
    let dzv = matmul_nt(zt, &ds)?;
    let dzt = matmul(zv, &ds)?;
    Ok((loss.max(0.0), dzv, dzt))
}

/// Symmetric InfoNCE over aligned embedding batches.
pub fn infonce_loss(zv: &DenseMatrix, zt: &DenseMatrix, gamma: f64) -> Result<f64> {
    Ok(infonce_with_grad(zv, zt, gamma)?.0)
}

#[derive(Clone, Debug)]
pub struct AlignmentGrad {
    pub loss: f64,
    pub grad: ParamVector,
}

/// Loss and analytic parameter gradient for a batch of aligned pairs
/// (`xv`, `xt` hold one column per pair).
pub fn infonce_grad(
    backbone: &FrozenBackbone,
    params: &ParamVector,
    xv: &DenseMatrix,
    xt: &DenseMatrix,
) -> Result<AlignmentGrad> {
    if xv.cols() != xt.cols() {
        return Err(Error::usage("visual and text batches differ in size"));
    }
    let gamma = backbone.config().temperature;
    let cv = forward(backbone, params, Modality::Visual, xv)?;
    let ct = forward(backbone, params, Modality::Text, xt)?;
    let (loss, dzv, dzt) = infonce_with_grad(&cv.z, &ct.z, gamma)?;
    if xv.cols() == 1 {
        return Ok(AlignmentGrad {
            loss,
            grad: params.zeros_like(),
        });
    }
    let mut grad = backward(backbone, params, &cv, &dzv)?;
    grad.axpy(1.0, &backward(backbone, params, &ct, &dzt)?)?;
    Ok(AlignmentGrad { loss, grad })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cols(v: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_columns(v[0].len(), &v.iter().map(|c| c.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_pair_has_zero_loss() {
        let z = cols(&[&[0.6, 0.8]]);
        let w = cols(&[&[1.0, 0.0]]);
        assert_eq!(infonce_loss(&z, &w, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn two_orthogonal_pairs_match_hand_value() {
        let z = cols(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let loss = infonce_loss(&z, &z, 1.0).unwrap();
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-15);
        assert!((loss - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn swapped_partners_cost_more() {
        let zv = cols(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let zt = cols(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert!(infonce_loss(&zv, &zt, 1.0).unwrap() > infonce_loss(&zv, &zv, 1.0).unwrap());
    }

    #[test]
    fn empty_batch_is_usage_error() {
        let z = DenseMatrix::zeros(2, 0);
        assert!(matches!(infonce_loss(&z, &z, 1.0), Err(Error::Usage(_))));
    }
}

#[cfg(test)]
mod gradient_checks {
    use super::*;
    use crate::model::{init_params, ModelConfig};
    use crate::oracles::{finite_diff_gradient, max_relative_error};
    use rand::Rng;

    fn perturbed(cfg: &ModelConfig, seed: u64) -> ParamVector {
        let mut p = init_params(cfg, seed).unwrap();
        let mut rng = crate::rng::rng_from(seed ^ 0xabc);
        for (_, v) in p.iter_mut() {
            v.iter_mut().for_each(|x| *x += 0.3 * rng.random_range(-1.0..1.0));
        }
        p
    }

    fn batch(cfg: &ModelConfig, n: usize, seed: u64) -> (DenseMatrix, DenseMatrix) {
        let mut rng = crate::rng::rng_from(seed);
        (
            DenseMatrix::from_fn(cfg.input_dim_v, n, |_, _| rng.random_range(-1.0..1.0)),
            DenseMatrix::from_fn(cfg.input_dim_t, n, |_, _| rng.random_range(-1.0..1.0)),
        )
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let cfg = ModelConfig {
            input_dim_v: 8,
            input_dim_t: 8,
            hidden_dim: 12,
            embed_dim: 6,
            lora_rank: 2,
            n_adapter_blocks: 1,
            temperature: 0.5,
            seed: 3,
        };
        let bb = FrozenBackbone::new(&cfg).unwrap();
        let p = perturbed(&cfg, 4);
        let (xv, xt) = batch(&cfg, 5, 5);
        let analytic = infonce_grad(&bb, &p, &xv, &xt).unwrap().grad;
        let numeric = finite_diff_gradient(
            |w| Ok(infonce_grad(&bb, w, &xv, &xt)?.loss),
            &p,
            1e-5,
        )
        .unwrap();
        assert!(max_relative_error(&analytic, &numeric, 1e-8) <= 1e-4);
    }

    #[test]
    fn single_pair_gradient_is_exactly_zero() {
        let cfg = ModelConfig::default();
        let bb = FrozenBackbone::new(&cfg).unwrap();
        let p = perturbed(&cfg, 1);
        let (xv, xt) = batch(&cfg, 1, 2);
        let g = infonce_grad(&bb, &p, &xv, &xt).unwrap().grad;
        assert!(g.flatten().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn text_parameters_steer_the_visual_gradient() {
        let cfg = ModelConfig::default();
        let bb = FrozenBackbone::new(&cfg).unwrap();
        let p = perturbed(&cfg, 7);
        let mut q = p.clone();
        let mut rng = crate::rng::rng_from(8);
        for (k, v) in q.iter_mut() {
            if k.modality == Modality::Text {
                v.iter_mut().for_each(|x| *x += 0.1 * rng.random_range(-1.0..1.0));
            }
        }
        let (xv, xt) = batch(&cfg, 6, 9);
        let gv = infonce_grad(&bb, &p, &xv, &xt).unwrap().grad.restricted_to(Modality::Visual);
        let gv2 = infonce_grad(&bb, &q, &xv, &xt).unwrap().grad.restricted_to(Modality::Visual);
        assert!(gv.sub(&gv2).unwrap().norm() > 1e-10);
    }
}
