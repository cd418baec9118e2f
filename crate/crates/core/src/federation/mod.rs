//! Synthetic federation: data generation, non-IID partitioning, FedAvg,
//! per-client update history and communication accounting.

mod data;
mod fedavg;
mod kmeans;
mod partition;

pub use data::{synthesize_dataset, DataConfig, SyntheticDataset, SyntheticWorld};
pub use fedavg::{
    fedavg_round, params_to_mb, run_round, sample_clients, train_federation, ClientTask, CommLedger,
    GradientHistory, LedgerEntry, RoundOutput, RoundResult, TrainOutcome,
};
pub use kmeans::kmeans_clusters;
pub use partition::dirichlet_partition;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationConfig {
    pub clients: usize,
    pub beta: f64,
    pub rounds: usize,
    pub local_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub client_fraction: f64,
    /// Weight the server mean by client sample counts.
    pub weighted_aggregation: bool,
    pub kmeans_iters: usize,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            clients: 10,
            beta: 0.5,
            rounds: 30,
            local_steps: 10,
            batch_size: 32,
            lr: 0.1,
            client_fraction: 1.0,
            weighted_aggregation: false,
            kmeans_iters: 50,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clients < 2 {
            return Err(Error::usage("federation needs at least 2 clients"));
        }
        if !(self.beta > 0.0) {
            return Err(Error::usage("beta must be positive"));
        }
        if self.rounds == 0 {
            return Err(Error::usage("rounds must be at least 1"));
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(Error::usage("client_fraction must be in (0, 1]"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::usage("lr must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::usage("batch_size must be positive"));
        }
        Ok(())
    }
}

/// Pseudo-class labels (KMeans on joint raw features) and the Dirichlet
/// shards built over them.
pub fn partition_dataset(
    data: &SyntheticDataset,
    cfg: &FederationConfig,
    n_classes: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<Vec<usize>>)> {
    let labels = kmeans_clusters(
        &data.joint_features(),
        n_classes,
        cfg.kmeans_iters,
        crate::rng::derive_seed(seed, "kmeans"),
    )?;
    let shards = dirichlet_partition(&labels, cfg.clients, cfg.beta, crate::rng::derive_seed(seed, "dirichlet"))?;
    Ok((labels, shards))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{infonce_grad, init_params, FrozenBackbone, ModelConfig, Objective, ParamVector};

    fn setup(n: usize) -> (FrozenBackbone, ParamVector, SyntheticDataset) {
        let mcfg = ModelConfig::default();
        let bb = FrozenBackbone::new(&mcfg).unwrap();
        let w0 = init_params(&mcfg, 1).unwrap();
        let dcfg = DataConfig { n_pairs: n, ..DataConfig::default() };
        let (_, d) = synthesize_dataset(&dcfg, 16, 16, 2).unwrap();
        (bb, w0, d)
    }

    #[test]
    fn identical_clients_reproduce_single_client() {
        let (bb, w0, d) = setup(40);
        let cfg = FederationConfig::default();
        let task = ClientTask { client: 0, samples: (0..40).collect() };
        let both = run_round(&bb, &w0, &d, &[task.clone(), task.clone()], Objective::Alignment, &cfg, 3, 7).unwrap();
        let one = run_round(&bb, &w0, &d, &[task], Objective::Alignment, &cfg, 3, 7).unwrap();
        assert_eq!(both.global, one.global);
    }

    #[test]
    fn zero_local_steps_keep_global() {
        let (bb, w0, d) = setup(40);
        let cfg = FederationConfig { local_steps: 0, ..FederationConfig::default() };
        let shards = vec![(0..20).collect(), (20..40).collect()];
        let mut h = GradientHistory::default();
        let mut l = CommLedger::default();
        let out = fedavg_round(&bb, &w0, &d, &shards, &cfg, 0, 3, &mut h, &mut l).unwrap();
        assert_eq!(out.global, w0);
    }

    #[test]
    fn one_step_matches_mean_gradient_closed_form() {
        let (bb, w0, d) = setup(40);
        let cfg = FederationConfig { local_steps: 1, batch_size: 20, lr: 0.07, ..FederationConfig::default() };
        let shards: Vec<Vec<usize>> = vec![(0..20).collect(), (20..40).collect()];
        let mut h = GradientHistory::default();
        let mut l = CommLedger::default();
        let out = fedavg_round(&bb, &w0, &d, &shards, &cfg, 0, 3, &mut h, &mut l).unwrap();
        let g: Vec<ParamVector> = shards
            .iter()
            .map(|s| infonce_grad(&bb, &w0, &d.xv.select_columns(s), &d.xt.select_columns(s)).unwrap().grad)
            .collect();
        let mut expected = w0.clone();
        expected.axpy(-cfg.lr * 0.5, &g[0]).unwrap();
        expected.axpy(-cfg.lr * 0.5, &g[1]).unwrap();
        assert!(out.global.max_abs_diff(&expected).unwrap() <= 1e-12);
    }

    #[test]
    fn training_bookkeeping_and_determinism() {
        let (bb, w0, d) = setup(200);
        let cfg = FederationConfig { clients: 4, rounds: 3, local_steps: 2, ..FederationConfig::default() };
        let (_, shards) = partition_dataset(&d, &cfg, 5, 11).unwrap();
        let a = train_federation(&bb, &w0, &d, &shards, &cfg, 3, 5).unwrap();
        let b = train_federation(&bb, &w0, &d, &shards, &cfg, 3, 5).unwrap();
        assert_eq!(a.w_n, b.w_n);
        assert_eq!(a.history.len(), 12);
        assert_eq!(a.ledger.entries.len(), 3);
        let sum: f64 = a.ledger.entries.iter().map(|e| e.downlink_mb + e.uplink_mb).sum();
        assert_eq!(a.ledger.total_mb(), sum);
        for c in 0..4 {
            let rounds: Vec<usize> = a.history.client(c).iter().map(|(r, _)| *r).collect();
            assert_eq!(rounds, vec![0, 1, 2]);
        }
        let zero = train_federation(&bb, &w0, &d, &shards, &cfg, 0, 5).unwrap();
        assert_eq!(zero.w_n, w0);
    }

    #[test]
    fn partial_participation_counts() {
        let picked = sample_clients(10, 0.3, 4, 2);
        assert_eq!(picked.len(), 3);
        assert!(picked.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(sample_clients(10, 1.0, 4, 2), (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn history_round_trips_and_rejects_reordering() {
        let (bb, w0, d) = setup(60);
        let cfg = FederationConfig { clients: 2, local_steps: 1, ..FederationConfig::default() };
        let shards = vec![(0..30).collect(), (30..60).collect()];
        let out = train_federation(&bb, &w0, &d, &shards, &cfg, 2, 1).unwrap();
        let blob = out.history.to_bytes("h");
        assert_eq!(GradientHistory::from_bytes(&blob, "h").unwrap(), out.history);
        let mut h = out.history.clone();
        assert!(h.push(0, 1, w0.clone()).is_err());
    }
}
