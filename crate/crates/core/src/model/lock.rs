use std::collections::BTreeMap;

use super::{BlockKey, ParamVector};
use crate::error::{Error, Result};
use crate::numerics::{mat_t_vec, mat_vec, DenseMatrix};

/// Quadratic penalty `Σ_b ‖B_bᵀ(w_b − ref_b)‖²` on per-block orthonormal bases.
///
/// Blocks without an entry (or with a zero-width basis) are unconstrained.
#[derive(Clone, Debug)]
pub struct ForgetLock {
    bases: BTreeMap<BlockKey, DenseMatrix>,
    reference: ParamVector,
}

impl ForgetLock {
    pub fn new(bases: BTreeMap<BlockKey, DenseMatrix>, reference: ParamVector) -> Result<Self> {
        for (key, b) in &bases {
            let block = reference.block(key).ok_or_else(|| {
                Error::usage(format!("lock basis for {key} has no matching parameter block"))
            })?;
            if b.rows() != block.len() {
                return Err(Error::usage(format!(
                    "lock basis for {key} has {} rows, block has {}",
                    b.rows(),
                    block.len()
                )));
            }
            if b.cols() > 0 {
                let err = b.orthonormality_error();
                if err > 1e-8 {
                    return Err(Error::usage(format!(
                        "lock basis for {key} is not orthonormal (deviation {err:.2e})"
                    )));
                }
            }
        }
        Ok(ForgetLock { bases, reference })
    }

    pub fn reference(&self) -> &ParamVector {
        &self.reference
    }

    pub fn bases(&self) -> &BTreeMap<BlockKey, DenseMatrix> {
        &self.bases
    }

    /// Coordinates `B_bᵀ x_b` per constrained block.
    pub fn coordinates(&self, x: &ParamVector) -> Result<BTreeMap<BlockKey, Vec<f64>>> {
        let mut out = BTreeMap::new();
        for (key, b) in &self.bases {
            out.insert(*key, mat_t_vec(b, x.expect_block(key)?)?);
        }
        Ok(out)
    }

    /// `Π x` blockwise; unconstrained blocks map to zero.
    pub fn project(&self, x: &ParamVector) -> Result<ParamVector> {
        self.reference.check_layout(x)?;
        let mut out = x.zeros_like();
        for (key, coords) in self.coordinates(x)? {
            let b = &self.bases[&key];
            let y = mat_vec(b, &coords)?;
            out.block_mut(&key).expect("layout checked").copy_from_slice(&y);
        }
        Ok(out)
    }

    /// Per-block `‖B_bᵀ x_b‖`, which equals `‖Π_b x_b‖`.
    pub fn projected_norms(&self, x: &ParamVector) -> Result<BTreeMap<BlockKey, f64>> {
        Ok(self
            .coordinates(x)?
            .into_iter()
            .map(|(k, c)| (k, crate::numerics::norm(&c)))
            .collect())
    }

    pub fn value_and_grad(&self, params: &ParamVector) -> Result<(f64, ParamVector)> {
        let disp = params.sub(&self.reference)?;
        let mut value = 0.0;
        let mut grad = params.zeros_like();
        for (key, coords) in self.coordinates(&disp)? {
            value += crate::numerics::dot(&coords, &coords);
            let y = mat_vec(&self.bases[&key], &coords)?;
            for (g, v) in grad.block_mut(&key).expect("layout checked").iter_mut().zip(y) {
                *g = 2.0 * v;
            }
        }
        Ok((value, grad))
    }

    pub fn value(&self, params: &ParamVector) -> Result<f64> {
        Ok(self.value_and_grad(params)?.0)
    }
}

/// Penalty value and gradient around `reference` for the given bases.
pub fn forget_lock(
    params: &ParamVector,
    reference: &ParamVector,
    bases: &BTreeMap<BlockKey, DenseMatrix>,
) -> Result<(f64, ParamVector)> {
    ForgetLock::new(bases.clone(), reference.clone())?.value_and_grad(params)
}


#[cfg(test)]
mod gradient_checks {
    use super::*;
    use crate::model::{init_params, Modality, ModelConfig};
    use crate::numerics::orthonormal_columns;
    use crate::oracles::{finite_diff_gradient, max_relative_error};
    use rand::Rng;

    #[test]
    fn lock_gradient_matches_central_differences() {
        let cfg = ModelConfig { hidden_dim: 8, embed_dim: 4, lora_rank: 2, ..ModelConfig::default() };
        let reference = init_params(&cfg, 1).unwrap();
        let mut rng = crate::rng::rng_from(2);
        let mut bases = BTreeMap::new();
        for (key, len) in cfg.layout() {
            if key.modality == Modality::Visual {
                let raw = DenseMatrix::from_fn(len, 3, |_, _| rng.random_range(-1.0..1.0));
                bases.insert(key, orthonormal_columns(&raw, 1e-10));
            }
        }
        let lock = ForgetLock::new(bases, reference.clone()).unwrap();
        let mut w = reference.clone();
        for (_, v) in w.iter_mut() {
            v.iter_mut().for_each(|x| *x += rng.random_range(-1.0..1.0));
        }
        let (_, g) = lock.value_and_grad(&w).unwrap();
        let numeric = finite_diff_gradient(|p| lock.value(p), &w, 1e-5).unwrap();
        assert!(max_relative_error(&g, &numeric, 1e-8) <= 1e-6);
    }
}
