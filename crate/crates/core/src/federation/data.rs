use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::rng::Rng;

/// Knobs of the synthetic image–text generator.
///
/// Each concept `k` owns a latent centre `λ_k` and a pair of mixing maps.
/// A pair of concept `k` is drawn as
/// `x_μ = A_{μ,k}(λ_k + σ ξ) + σ ρ ε_μ`, with `ξ` shared by both modalities
/// (so partners are identifiable within a concept) and `ε_μ` independent.
/// `A_{μ,k}` mixes a map shared by all concepts with a concept-specific one,
/// weighted by `specificity`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_pairs: usize,
    pub n_concepts: usize,
    pub latent_dim: usize,
    /// `σ`: spread of pairs around their concept.
    pub intra_noise: f64,
    /// `ρ`: modality-private noise relative to `σ`.
    pub modality_noise: f64,
    pub specificity: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_pairs: 2000,
            n_concepts: 20,
            latent_dim: 8,
            intra_noise: 0.6,
            modality_noise: 0.3,
            specificity: 1.0,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_concepts < 2 {
            return Err(Error::usage("n_concepts must be at least 2"));
        }
        if self.n_pairs < self.n_concepts {
            return Err(Error::usage("n_pairs must be at least n_concepts"));
        }
        if self.latent_dim == 0 {
            return Err(Error::usage("latent_dim must be positive"));
        }
        if !(self.intra_noise >= 0.0) || !(self.modality_noise >= 0.0) || !(self.specificity >= 0.0) {
            return Err(Error::usage("noise and specificity must be non-negative"));
        }
        Ok(())
    }
}

/// Concept parameters shared by the training set and every evaluation set.
#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    config: DataConfig,
    centres: Vec<Vec<f64>>,
    maps_v: Vec<DenseMatrix>,
    maps_t: Vec<DenseMatrix>,
}

/// Paired inputs with one column per pair; column index is the sample id.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub xv: DenseMatrix,
    pub xt: DenseMatrix,
    pub concept: Vec<usize>,
    pub n_concepts: usize,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.concept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concept.is_empty()
    }

    /// Concatenated `[x_v; x_t]` features, one column per pair.
    pub fn joint_features(&self) -> DenseMatrix {
        let (dv, dt) = (self.xv.rows(), self.xt.rows());
        DenseMatrix::from_fn(dv + dt, self.len(), |i, j| {
            if i < dv {
                self.xv.get(i, j)
            } else {
                self.xt.get(i - dv, j)
            }
        })
    }

    pub fn subset(&self, idx: &[usize]) -> SyntheticDataset {
        SyntheticDataset {
            xv: self.xv.select_columns(idx),
            xt: self.xt.select_columns(idx),
            concept: idx.iter().map(|&i| self.concept[i]).collect(),
            n_concepts: self.n_concepts,
        }
    }

    /// Column-wise concatenation.
    pub fn concat(&self, other: &SyntheticDataset) -> Result<SyntheticDataset> {
        Ok(SyntheticDataset {
            xv: DenseMatrix::hstack(&[&self.xv, &other.xv])?,
            xt: DenseMatrix::hstack(&[&self.xt, &other.xt])?,
            concept: self.concept.iter().chain(&other.concept).copied().collect(),
            n_concepts: self.n_concepts.max(other.n_concepts),
        })
    }
}

fn gaussian(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

impl SyntheticWorld {
    pub fn new(config: &DataConfig, input_dim_v: usize, input_dim_t: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = crate::rng::rng_from(seed);
        let l = config.latent_dim;
        let centres: Vec<Vec<f64>> = (0..config.n_concepts)
            .map(|_| (0..l).map(|_| gaussian(&mut rng)).collect())
            .collect();
        let scale = (1.0 / l as f64).sqrt();
        let draw = |d: usize, rng: &mut Rng| DenseMatrix::from_fn(d, l, |_, _| scale * gaussian(rng));
        let shared_v = draw(input_dim_v, &mut rng);
        let shared_t = draw(input_dim_t, &mut rng);
        let s = config.specificity;
        let norm = 1.0 / (1.0 + s * s).sqrt();
        let mut maps_v = Vec::new();
        let mut maps_t = Vec::new();
        for _ in 0..config.n_concepts {
            let own_v = draw(input_dim_v, &mut rng);
            let own_t = draw(input_dim_t, &mut rng);
            maps_v.push(shared_v.add(&own_v.scaled(s))?.scaled(norm));
            maps_t.push(shared_t.add(&own_t.scaled(s))?.scaled(norm));
        }
        Ok(SyntheticWorld {
            config: config.clone(),
            centres,
            maps_v,
            maps_t,
        })
    }

    pub fn config(&self) -> &DataConfig {
        &self.config
    }

    /// Noise-free input of concept `k` in the visual modality.
    pub fn visual_centroid(&self, k: usize) -> Vec<f64> {
        crate::numerics::mat_vec(&self.maps_v[k], &self.centres[k]).expect("shapes fixed")
    }

    /// Draw one pair per entry of `concepts`.
    pub fn sample(&self, concepts: &[usize], rng: &mut Rng) -> SyntheticDataset {
        let sigma = self.config.intra_noise;
        let rho = self.config.modality_noise;
        let l = self.config.latent_dim;
        let dv = self.maps_v[0].rows();
        let dt = self.maps_t[0].rows();
        let mut xv = DenseMatrix::zeros(dv, concepts.len());
        let mut xt = DenseMatrix::zeros(dt, concepts.len());
        for (j, &k) in concepts.iter().enumerate() {
            let latent: Vec<f64> = self.centres[k]
                .iter()
                .map(|c| c + sigma * gaussian(rng))
                .collect();
            let v = crate::numerics::mat_vec(&self.maps_v[k], &latent).expect("shapes fixed");
            let t = crate::numerics::mat_vec(&self.maps_t[k], &latent).expect("shapes fixed");
            for (o, x) in xv.col_mut(j).iter_mut().zip(v) {
                *o = x + sigma * rho * gaussian(rng);
            }
            for (o, x) in xt.col_mut(j).iter_mut().zip(t) {
                *o = x + sigma * rho * gaussian(rng);
            }
            debug_assert_eq!(latent.len(), l);
        }
        SyntheticDataset {
            xv,
            xt,
            concept: concepts.to_vec(),
            n_concepts: self.config.n_concepts,
        }
    }

    /// `n` pairs with concepts assigned round-robin and then shuffled.
    pub fn sample_balanced(&self, n: usize, rng: &mut Rng) -> SyntheticDataset {
        use rand::seq::SliceRandom;
        let mut concepts: Vec<usize> = (0..n).map(|i| i % self.config.n_concepts).collect();
        concepts.shuffle(rng);
        self.sample(&concepts, rng)
    }
}

/// Training set of `config.n_pairs` pairs drawn from a fresh world.
pub fn synthesize_dataset(
    config: &DataConfig,
    input_dim_v: usize,
    input_dim_t: usize,
    seed: u64,
) -> Result<(SyntheticWorld, SyntheticDataset)> {
    let world = SyntheticWorld::new(config, input_dim_v, input_dim_t, crate::rng::derive_seed(seed, "world"))?;
    let mut rng = crate::rng::child_rng(seed, "train");
    let data = world.sample_balanced(config.n_pairs, &mut rng);
    Ok((world, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_concepts_collapse() {
        let cfg = DataConfig { n_pairs: 60, intra_noise: 0.0, ..DataConfig::default() };
        let (_, d) = synthesize_dataset(&cfg, 16, 16, 1).unwrap();
        for i in 0..d.len() {
            for j in 0..d.len() {
                if d.concept[i] == d.concept[j] {
                    assert_eq!(d.xv.col(i), d.xv.col(j));
                    assert_eq!(d.xt.col(i), d.xt.col(j));
                }
            }
        }
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = DataConfig { n_pairs: 100, ..DataConfig::default() };
        assert_eq!(
            synthesize_dataset(&cfg, 16, 16, 4).unwrap().1,
            synthesize_dataset(&cfg, 16, 16, 4).unwrap().1
        );
    }

    #[test]
    fn concepts_are_balanced_and_in_range() {
        let cfg = DataConfig { n_pairs: 100, ..DataConfig::default() };
        let (_, d) = synthesize_dataset(&cfg, 16, 16, 4).unwrap();
        let mut counts = vec![0; cfg.n_concepts];
        for &c in &d.concept {
            counts[c] += 1;
        }
        assert!(counts.iter().all(|&c| c == 5));
    }

    #[test]
    fn small_noise_is_nearest_centroid_separable() {
        let cfg = DataConfig { n_pairs: 1000, intra_noise: 0.02, ..DataConfig::default() };
        let (world, d) = synthesize_dataset(&cfg, 16, 16, 7).unwrap();
        let centroids: Vec<Vec<f64>> = (0..cfg.n_concepts).map(|k| world.visual_centroid(k)).collect();
        let hits = (0..d.len())
            .filter(|&j| {
                let x = d.xv.col(j);
                let best = (0..cfg.n_concepts)
                    .min_by(|&a, &b| {
                        let da: f64 = x.iter().zip(&centroids[a]).map(|(p, q)| (p - q).powi(2)).sum();
                        let db: f64 = x.iter().zip(&centroids[b]).map(|(p, q)| (p - q).powi(2)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                best == d.concept[j]
            })
            .count();
        assert!(hits as f64 >= 0.99 * d.len() as f64, "{hits}");
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = DataConfig { n_concepts: 1, ..DataConfig::default() };
        assert!(synthesize_dataset(&cfg, 4, 4, 0).is_err());
        let cfg = DataConfig { n_pairs: 3, n_concepts: 5, ..DataConfig::default() };
        assert!(synthesize_dataset(&cfg, 4, 4, 0).is_err());
    }
}
