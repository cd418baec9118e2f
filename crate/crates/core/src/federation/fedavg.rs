use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FederationConfig, SyntheticDataset};
use crate::error::{Error, Result};
use crate::model::params::{write_str, Reader};
use crate::model::{local_sgd, FrozenBackbone, LocalOutcome, Objective, ParamVector, SgdSettings};
use crate::rng::derive_seed;

/// Megabytes for `n` 64-bit parameters.
pub fn params_to_mb(n: usize) -> f64 {
    n as f64 * 8.0 / 1e6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub phase: String,
    pub round: usize,
    pub downlink_mb: f64,
    pub uplink_mb: f64,
}

/// Per-round payload accounting.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CommLedger {
    pub entries: Vec<LedgerEntry>,
}

impl CommLedger {
    /// Charge a round in which `down` and `up` parameters crossed the wire in total.
    pub fn record(&mut self, phase: &str, round: usize, down: usize, up: usize) {
        self.entries.push(LedgerEntry {
            phase: phase.to_string(),
            round,
            downlink_mb: params_to_mb(down),
            uplink_mb: params_to_mb(up),
        });
    }

    pub fn total_mb(&self) -> f64 {
        self.entries.iter().fold(0.0, |acc, e| acc + (e.downlink_mb + e.uplink_mb))
    }

    pub fn phase_total_mb(&self, phase: &str) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.phase == phase)
            .fold(0.0, |acc, e| acc + (e.downlink_mb + e.uplink_mb))
    }

    pub fn extend(&mut self, other: &CommLedger) {
        self.entries.extend(other.entries.iter().cloned());
    }
}

/// Per-client record of uploaded deltas, keyed by round.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientHistory {
    clients: BTreeMap<usize, Vec<(usize, ParamVector)>>,
}

const HISTORY_MAGIC: &[u8; 4] = b"FXGH";

impl GradientHistory {
    pub fn push(&mut self, client: usize, round: usize, delta: ParamVector) -> Result<()> {
        let entries = self.clients.entry(client).or_default();
        if let Some((last, first)) = entries.last().map(|(r, d)| (*r, d)) {
            if round <= last {
                return Err(Error::usage(format!(
                    "history rounds must increase for client {client}: {round} after {last}"
                )));
            }
            first.check_layout(&delta)?;
        }
        entries.push((round, delta));
        Ok(())
    }

    pub fn client(&self, client: usize) -> &[(usize, ParamVector)] {
        self.clients.get(&client).map_or(&[], Vec::as_slice)
    }

    pub fn clients(&self) -> impl Iterator<Item = usize> + '_ {
        self.clients.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.clients.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_bytes(&self, config_hash: &str) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(HISTORY_MAGIC);
        out.extend_from_slice(&1u32.to_le_bytes());
        write_str(&mut out, config_hash);
        out.extend_from_slice(&(self.clients.len() as u32).to_le_bytes());
        for (client, entries) in &self.clients {
            out.extend_from_slice(&(*client as u32).to_le_bytes());
            out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
            for (round, delta) in entries {
                out.extend_from_slice(&(*round as u32).to_le_bytes());
                let blob = delta.to_bytes(config_hash);
                out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
                out.extend_from_slice(&blob);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], expected_hash: &str) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != HISTORY_MAGIC {
            return Err(Error::Format("not a history blob".into()));
        }
        if r.u32()? != 1 {
            return Err(Error::Format("unsupported history version".into()));
        }
        let hash = r.string()?;
        if hash != expected_hash {
            return Err(Error::usage(format!(
                "history belongs to config {hash}, expected {expected_hash}"
            )));
        }
        let mut h = GradientHistory::default();
        for _ in 0..r.u32()? {
            let client = r.u32()? as usize;
            for _ in 0..r.u32()? {
                let round = r.u32()? as usize;
                let len = r.u64()? as usize;
                let delta = ParamVector::from_bytes(r.take(len)?, expected_hash)?;
                h.push(client, round, delta)?;
            }
        }
        Ok(h)
    }
}

/// One participant's work order for a round.
#[derive(Clone, Debug)]
pub struct ClientTask {
    pub client: usize,
    pub samples: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct RoundResult {
    pub global: ParamVector,
    /// In ascending client order.
    pub outcomes: Vec<(usize, LocalOutcome)>,
}

/// Broadcast `global`, run local training for every task in parallel, and
/// aggregate in task order. Tasks with no samples are skipped.
pub fn run_round(
    backbone: &FrozenBackbone,
    global: &ParamVector,
    data: &SyntheticDataset,
    tasks: &[ClientTask],
    objective: Objective<'_>,
    cfg: &FederationConfig,
    steps: usize,
    round_seed: u64,
) -> Result<RoundResult> {
    let mut tasks: Vec<&ClientTask> = tasks.iter().filter(|t| !t.samples.is_empty()).collect();
    tasks.sort_by_key(|t| t.client);
    if tasks.is_empty() {
        return Err(Error::usage("round has no participating client with data"));
    }
    let outcomes: Vec<(usize, LocalOutcome)> = tasks
        .par_iter()
        .map(|t| {
            let settings = SgdSettings {
                lr: cfg.lr,
                steps,
                batch_size: cfg.batch_size,
                seed: derive_seed(round_seed, &format!("client{}", t.client)),
            };
            local_sgd(backbone, global, &data.xv, &data.xt, &t.samples, objective, settings)
                .map(|o| (t.client, o))
                .map_err(|e| e.context(format!("client {}", t.client)))
        })
        .collect::<Result<_>>()?;
    let params: Vec<ParamVector> = outcomes.iter().map(|(_, o)| o.params.clone()).collect();
    let new_global = if cfg.weighted_aggregation {
        let w: Vec<f64> = tasks.iter().map(|t| t.samples.len() as f64).collect();
        ParamVector::weighted_mean(&params, &w)?
    } else {
        ParamVector::mean(&params)?
    };
    Ok(RoundResult {
        global: new_global,
        outcomes,
    })
}

/// Clients taking part in round `t`: all of them at fraction 1, otherwise a
/// seeded subset of size `⌈fraction·K⌉`, returned in ascending order.
pub fn sample_clients(k: usize, fraction: f64, seed: u64, round: usize) -> Vec<usize> {
    let m = ((fraction * k as f64).ceil() as usize).clamp(1, k);
    let mut all: Vec<usize> = (0..k).collect();
    if m < k {
        let mut rng = crate::rng::child_rng(seed, &format!("round{round}.sample"));
        all.shuffle(&mut rng);
        all.truncate(m);
        all.sort_unstable();
    }
    all
}

#[derive(Clone, Debug)]
pub struct RoundOutput {
    pub global: ParamVector,
    pub deltas: Vec<(usize, ParamVector)>,
    pub mean_loss: f64,
}

/// One FedAvg round over `shards`, appending deltas to `history` and
/// charging `ledger`.
#[allow(clippy::too_many_arguments)]
pub fn fedavg_round(
    backbone: &FrozenBackbone,
    global: &ParamVector,
    data: &SyntheticDataset,
    shards: &[Vec<usize>],
    cfg: &FederationConfig,
    round: usize,
    seed: u64,
    history: &mut GradientHistory,
    ledger: &mut CommLedger,
) -> Result<RoundOutput> {
    let chosen = sample_clients(shards.len(), cfg.client_fraction, seed, round);
    let tasks: Vec<ClientTask> = chosen
        .iter()
        .map(|&c| ClientTask {
            client: c,
            samples: shards[c].clone(),
        })
        .collect();
    let res = run_round(
        backbone,
        global,
        data,
        &tasks,
        Objective::Alignment,
        cfg,
        cfg.local_steps,
        derive_seed(seed, &format!("round{round}")),
    )?;
    let p = global.dim();
    let n = res.outcomes.len();
    ledger.record("train", round, n * p, n * p);
    let mut deltas = Vec::with_capacity(n);
    let mut loss = 0.0;
    for (c, o) in res.outcomes {
        history.push(c, round, o.delta.clone())?;
        loss += o.mean_loss;
        deltas.push((c, o.delta));
    }
    Ok(RoundOutput {
        global: res.global,
        deltas,
        mean_loss: loss / n as f64,
    })
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub w_0: ParamVector,
    pub w_n: ParamVector,
    pub history: GradientHistory,
    pub ledger: CommLedger,
    /// Mean client training loss per round.
    pub round_losses: Vec<f64>,
}

/// `rounds` FedAvg rounds from `w_0`.
#[allow(clippy::too_many_arguments)]
pub fn train_federation(
    backbone: &FrozenBackbone,
    w_0: &ParamVector,
    data: &SyntheticDataset,
    shards: &[Vec<usize>],
    cfg: &FederationConfig,
    rounds: usize,
    seed: u64,
) -> Result<TrainOutcome> {
    let mut history = GradientHistory::default();
    let mut ledger = CommLedger::default();
    let mut global = w_0.clone();
    let mut round_losses = Vec::with_capacity(rounds);
    for t in 0..rounds {
        let out = fedavg_round(backbone, &global, data, shards, cfg, t, seed, &mut history, &mut ledger)?;
        log::debug!("round {t}: mean client loss {:.4}", out.mean_loss);
        round_losses.push(out.mean_loss);
        global = out.global;
    }
    Ok(TrainOutcome {
        w_0: w_0.clone(),
        w_n: global,
        history,
        ledger,
        round_losses,
    })
}
