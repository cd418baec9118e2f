//! The three-phase excision pipeline, its ablations, and the retrain and
//! gradient-ascent baselines.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{run_round, sample_clients, train_federation, ClientTask, CommLedger, GradientHistory};
use crate::gsd::{decompose, BlockBases, ColumnSource, Decomposition, ExcisionBases, FederationView, GsdSettings, RetainSource, UnlearnRequest};
use crate::model::{
    encode, infonce_grad, infonce_loss, init_params, BlockKey, ForgetLock, FrozenBackbone, Modality, ModelConfig, Objective,
    ParamVector,
};
use crate::numerics::{mat_vec, norm, DenseMatrix};
use crate::rng::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoBkeVisual,
    NoBkeText,
    NoGsd,
    NoLock,
}

/// Point the projection and the lock pull back to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExcisionReference {
    /// The model before federated training.
    #[default]
    Initial,
    /// The trained model itself.
    Trained,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnlearnPlan {
    pub delta: f64,
    pub tau_e: f64,
    pub alpha: f64,
    pub r2: usize,
    pub r3: usize,
    /// Falls back to the federation's learning rate.
    pub lr: Option<f64>,
    /// Falls back to the federation's local step count.
    pub local_steps: Option<usize>,
    pub variant: Variant,
    pub reference: ExcisionReference,
    /// Charge bases and reference on every broadcast instead of once.
    pub charge_bases_per_round: bool,
    pub column_source: ColumnSource,
    pub retain_source: RetainSource,
}

impl Default for UnlearnPlan {
    fn default() -> Self {
        UnlearnPlan {
            delta: 0.6,
            tau_e: 0.9,
            alpha: 0.1,
            r2: 1,
            r3: 1,
            lr: None,
            local_steps: None,
            variant: Variant::Full,
            reference: ExcisionReference::Initial,
            charge_bases_per_round: true,
            column_source: ColumnSource::LocalEpoch,
            retain_source: RetainSource::History,
        }
    }
}

impl UnlearnPlan {
    pub fn validate(&self, fed_lr: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::usage(format!("delta must be in [0, 1], got {}", self.delta)));
        }
        if !(self.tau_e > 0.0 && self.tau_e <= 1.0) {
            return Err(Error::usage(format!("tau_e must be in (0, 1], got {}", self.tau_e)));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::usage("alpha must be non-negative"));
        }
        let lr = self.lr.unwrap_or(fed_lr);
        if !(lr > 0.0) {
            return Err(Error::usage("unlearning lr must be positive"));
        }
        check_step_size(self.effective_alpha(), lr)
    }

    /// Lock strength actually applied.
    pub fn effective_alpha(&self) -> f64 {
        if self.variant == Variant::NoLock {
            0.0
        } else {
            self.alpha
        }
    }

    fn gsd_settings(&self) -> GsdSettings {
        GsdSettings {
            delta: self.delta,
            tau: self.tau_e,
            column_source: self.column_source,
            retain_source: self.retain_source,
        }
    }
}

/// The lock contracts drift only when `lr < 1/(2α)`.
pub fn check_step_size(alpha: f64, lr: f64) -> Result<()> {
    if alpha > 0.0 && lr * 2.0 * alpha >= 1.0 {
        return Err(Error::usage(format!(
            "step size {lr} with lock strength {alpha} violates lr < 1/(2*alpha) = {}",
            0.5 / alpha
        )));
    }
    Ok(())
}

/// `w_g − Π_u(w_g − reference)` blockwise.
pub fn bilateral_excision_step(
    w_g: &ParamVector,
    reference: &ParamVector,
    bases: &ExcisionBases,
) -> Result<ParamVector> {
    let disp = w_g.sub(reference)?;
    let mut out = w_g.clone();
    out.axpy(-1.0, &bases.apply_projector(&disp)?)?;
    Ok(out)
}

/// Per-block `‖Π_u(w − reference)‖`.
pub fn unique_drift(
    w: &ParamVector,
    reference: &ParamVector,
    bases: &ExcisionBases,
) -> Result<BTreeMap<BlockKey, f64>> {
    let disp = w.sub(reference)?;
    let mut out = BTreeMap::new();
    for (key, b) in &bases.blocks {
        out.insert(*key, norm(&b.project(disp.expect_block(key)?)?));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Excision,
    Stabilization,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Excision => "excision",
            Phase::Stabilization => "stabilization",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub round: usize,
    pub phase: Phase,
    pub block: String,
    pub drift: f64,
    pub align_loss: f64,
    pub lock_value: f64,
}

/// Per-round, per-block record of an unlearning run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTrace {
    pub rows: Vec<TraceRow>,
    /// Largest drift right after each projection.
    pub post_projection_drift: Vec<f64>,
    /// Largest per-step `‖Π_u ∇L_a‖` seen per block over the run.
    pub g_u_hat: BTreeMap<String, f64>,
    /// Mean forget-pair cosine similarity at the start point (after the
    /// first projection) and after every round.
    pub forget_similarity: Vec<f64>,
    /// Local steps taken per round.
    pub local_steps: usize,
    pub lr: f64,
    pub alpha: f64,
}

impl PhaseTrace {
    pub fn rounds(&self) -> usize {
        self.rows.iter().map(|r| r.round + 1).max().unwrap_or(0)
    }

    /// Drift summed in quadrature over blocks at the last round.
    pub fn final_drift(&self) -> f64 {
        let last = match self.rows.last() {
            Some(r) => r.round,
            None => return 0.0,
        };
        self.rows
            .iter()
            .filter(|r| r.round == last)
            .map(|r| r.drift * r.drift)
            .sum::<f64>()
            .sqrt()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,phase,block,drift,align_loss,lock_value\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.12e},{:.12e},{:.12e}\n",
                r.round,
                r.phase.name(),
                r.block,
                r.drift,
                r.align_loss,
                r.lock_value
            ));
        }
        out
    }
}

/// Everything the pipeline reads from a finished federation.
#[derive(Clone, Copy, Debug)]
pub struct TrainedFederation<'a> {
    pub view: FederationView<'a>,
    pub w_0: &'a ParamVector,
    pub w_n: &'a ParamVector,
    pub history: &'a GradientHistory,
}

impl TrainedFederation<'_> {
    fn reference(&self, r: ExcisionReference) -> &ParamVector {
        match r {
            ExcisionReference::Initial => self.w_0,
            ExcisionReference::Trained => self.w_n,
        }
    }
}

#[derive(Clone, Debug)]
pub struct UnlearnOutcome {
    pub w_star: ParamVector,
    pub trace: PhaseTrace,
    pub ledger: CommLedger,
    pub decomposition: Decomposition,
    /// Bases actually used for projection and lock.
    pub bases: ExcisionBases,
}

/// Samples each client keeps, with forgotten clients dropped.
pub fn retain_tasks(view: &FederationView<'_>, request: &UnlearnRequest) -> Result<Vec<ClientTask>> {
    let tasks: Vec<ClientTask> = request
        .splits(view.shards, view.labels)?
        .into_iter()
        .filter(|s| !s.retain.is_empty())
        .map(|s| ClientTask { client: s.client, samples: s.retain })
        .collect();
    if tasks.is_empty() {
        return Err(Error::usage("no client retains any data"));
    }
    Ok(tasks)
}

/// Evenly strided subset of at most `cap` retained samples.
fn loss_probe(tasks: &[ClientTask], cap: usize) -> Vec<usize> {
    let mut all: Vec<usize> = tasks.iter().flat_map(|t| t.samples.iter().copied()).collect();
    all.sort_unstable();
    let stride = all.len().div_ceil(cap).max(1);
    all.into_iter().step_by(stride).collect()
}

fn mean_pair_similarity(fed: &TrainedFederation<'_>, w: &ParamVector, ids: &[usize]) -> Result<f64> {
    let d = fed.view.data;
    let bb = fed.view.backbone;
    let zv = encode(bb, w, Modality::Visual, &d.xv.select_columns(ids))?;
    let zt = encode(bb, w, Modality::Text, &d.xt.select_columns(ids))?;
    let total: f64 = (0..ids.len()).map(|j| crate::numerics::dot(zv.col(j), zt.col(j))).sum();
    Ok(total / ids.len() as f64)
}

fn probe_loss(fed: &TrainedFederation<'_>, w: &ParamVector, probe: &[usize]) -> Result<f64> {
    let d = fed.view.data;
    let bb = fed.view.backbone;
    let zv = encode(bb, w, Modality::Visual, &d.xv.select_columns(probe))?;
    let zt = encode(bb, w, Modality::Text, &d.xt.select_columns(probe))?;
    infonce_loss(&zv, &zt, bb.config().temperature)
}

/// Full method or one of its ablations.
pub fn run_unlearning(fed: &TrainedFederation<'_>, request: &UnlearnRequest, plan: &UnlearnPlan, seed: u64) -> Result<UnlearnOutcome> {
    let cfg = fed.view.config;
    plan.validate(cfg.lr)?;
    let reference = fed.reference(plan.reference).clone();
    let gsd = decompose(&fed.view, fed.history, request, fed.w_n, &plan.gsd_settings(), derive_seed(seed, "gsd"))?;
    let mut ledger = gsd.ledger.clone();
    let decomposition = gsd.decomposition;
    let bases = match plan.variant {
        Variant::Full | Variant::NoLock => decomposition.bases.clone(),
        Variant::NoBkeVisual => decomposition.bases.restricted_to(Modality::Visual),
        Variant::NoBkeText => decomposition.bases.restricted_to(Modality::Text),
        Variant::NoGsd => decomposition.whole_forget_bases(),
    };
    let alpha = plan.effective_alpha();
    let lock = ForgetLock::new(bases.unique_bases(), reference.clone())?;
    let objective = if alpha > 0.0 {
        Objective::AlignmentWithLock { lock: &lock, alpha }
    } else {
        Objective::Alignment
    };
    let lr = plan.lr.unwrap_or(cfg.lr);
    let steps = plan.local_steps.unwrap_or(cfg.local_steps);
    let round_cfg = crate::federation::FederationConfig { lr, ..cfg.clone() };
    let tasks = retain_tasks(&fed.view, request)?;
    let probe = loss_probe(&tasks, 256);
    let forget_ids = request.forget_ids(fed.view.shards, fed.view.labels)?;
    let forget_probe = loss_probe(&[ClientTask { client: 0, samples: forget_ids }], 256);
    let p = fed.w_n.dim();
    let extra = bases.payload_params() + p;

    let mut trace = PhaseTrace { local_steps: steps, lr, alpha, ..PhaseTrace::default() };
    let mut w_g = fed.w_n.clone();
    for round in 0..plan.r2 + plan.r3 {
        let phase = if round < plan.r2 { Phase::Excision } else { Phase::Stabilization };
        if phase == Phase::Excision {
            w_g = bilateral_excision_step(&w_g, &reference, &bases)?;
            let worst = unique_drift(&w_g, &reference, &bases)?.into_values().fold(0.0, f64::max);
            trace.post_projection_drift.push(worst);
        }
        if round == 0 {
            trace.forget_similarity.push(mean_pair_similarity(fed, &w_g, &forget_probe)?);
        }
        let chosen = sample_clients(cfg.clients, cfg.client_fraction, derive_seed(seed, "participation"), round);
        let round_tasks: Vec<ClientTask> = tasks.iter().filter(|t| chosen.contains(&t.client)).cloned().collect();
        let n = round_tasks.len();
        let down = if plan.charge_bases_per_round || round == 0 { n * (p + extra) } else { n * p };
        ledger.record(phase.name(), round, down, n * p);
        let res = run_round(
            fed.view.backbone,
            &w_g,
            fed.view.data,
            &round_tasks,
            objective,
            &round_cfg,
            steps,
            derive_seed(seed, &format!("unlearn.round{round}")),
        )?;
        w_g = res.global;
        for (_, o) in &res.outcomes {
            for (k, v) in &o.max_projected_align_grad {
                let e = trace.g_u_hat.entry(k.to_string()).or_insert(0.0);
                *e = e.max(*v);
            }
        }
        let drift = unique_drift(&w_g, &reference, &bases)?;
        let align_loss = probe_loss(fed, &w_g, &probe)?;
        let lock_value = lock.value(&w_g)?;
        trace.forget_similarity.push(mean_pair_similarity(fed, &w_g, &forget_probe)?);
        log::debug!("unlearn round {round} ({}): probe loss {align_loss:.4}, lock {lock_value:.3e}", phase.name());
        for (key, d) in drift {
            trace.rows.push(TraceRow {
                round,
                phase,
                block: key.to_string(),
                drift: d,
                align_loss,
                lock_value,
            });
        }
    }
    if plan.r2 + plan.r3 == 0 {
        w_g = bilateral_excision_step(&w_g, &reference, &bases)?;
    }
    Ok(UnlearnOutcome {
        w_star: w_g,
        trace,
        ledger,
        decomposition,
        bases,
    })
}

/// Upper bound on unique-subspace drift after `t` locked steps from zero.
pub fn drift_bound(g_u: f64, alpha: f64, lr: f64, t: usize) -> f64 {
    if alpha == 0.0 {
        return g_u * lr * t as f64;
    }
    g_u / (2.0 * alpha) * (1.0 - (1.0 - 2.0 * lr * alpha).powi(t as i32))
}

/// Check every trace entry against the drift bound with the measured
/// per-block gradient bound and a relative `slack`. Returns the worst
/// ratio of observed drift to bound.
pub fn durability_ratio(trace: &PhaseTrace, r2: usize, slack: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for row in &trace.rows {
        let g = trace.g_u_hat.get(&row.block).copied().unwrap_or(0.0);
        let rounds_since = match r2 {
            0 => row.round + 1,
            _ if row.round < r2 => 1,
            _ => row.round + 2 - r2,
        };
        let bound = drift_bound(g, trace.alpha, trace.lr, rounds_since * trace.local_steps) * (1.0 + slack);
        let ratio = if bound > 0.0 {
            row.drift / bound
        } else if row.drift <= 1e-12 {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(ratio);
    }
    worst
}

/// How a retrain's initialization and client streams relate to the original run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrainSeeding {
    /// Same initial weights and client streams as the trained model.
    #[default]
    SameBranch,
    /// A fresh initialization and fresh client streams.
    FreshBranch,
}

#[derive(Clone, Debug)]
pub struct RetrainOutcome {
    pub w: ParamVector,
    pub ledger: CommLedger,
    pub rounds: usize,
}

/// Retrain on retained data only for `⌈fraction·R1⌉` rounds. `init_seed`
/// and `fed_seed` are the streams of the original run.
pub fn run_retrain(
    view: &FederationView<'_>,
    request: &UnlearnRequest,
    fraction: f64,
    seeding: RetrainSeeding,
    init_seed: u64,
    fed_seed: u64,
) -> Result<RetrainOutcome> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::usage(format!("retrain fraction must be in (0, 1], got {fraction}")));
    }
    let (init_seed, fed_seed) = match seeding {
        RetrainSeeding::SameBranch => (init_seed, fed_seed),
        RetrainSeeding::FreshBranch => (derive_seed(init_seed, "retrain"), derive_seed(fed_seed, "retrain")),
    };
    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); view.shards.len()];
    for s in request.splits(view.shards, view.labels)? {
        if s.retain.is_empty() {
            log::info!("client {} has no retained data and sits out the retrain", s.client);
        }
        shards[s.client] = s.retain;
    }
    let rounds = (fraction * view.config.rounds as f64).ceil() as usize;
    let w_0 = init_params(view.backbone.config(), init_seed)?;
    let out = train_federation(view.backbone, &w_0, view.data, &shards, view.config, rounds, fed_seed)?;
    let mut ledger = CommLedger::default();
    for e in out.ledger.entries {
        ledger.entries.push(crate::federation::LedgerEntry { phase: "retrain".into(), ..e });
    }
    Ok(RetrainOutcome { w: out.w_n, ledger, rounds })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AscentPlan {
    pub steps: usize,
    pub lr: f64,
    pub then_rounds: usize,
}

impl Default for AscentPlan {
    fn default() -> Self {
        AscentPlan { steps: 10, lr: 0.05, then_rounds: 3 }
    }
}

/// Ascent on forget data at each holding client, averaged, followed by
/// ordinary FedAvg rounds on retained data.
pub fn run_gradient_ascent(
    fed: &TrainedFederation<'_>,
    request: &UnlearnRequest,
    plan: &AscentPlan,
    seed: u64,
) -> Result<(ParamVector, CommLedger)> {
    let cfg = fed.view.config;
    let mut ledger = CommLedger::default();
    let holders: Vec<ClientTask> = request
        .splits(fed.view.shards, fed.view.labels)?
        .into_iter()
        .filter(|s| !s.forget.is_empty())
        .map(|s| ClientTask { client: s.client, samples: s.forget })
        .collect();
    let p = fed.w_n.dim();
    let mut w = fed.w_n.clone();
    if plan.steps > 0 {
        let ascent_cfg = crate::federation::FederationConfig { lr: plan.lr, ..cfg.clone() };
        w = run_round(
            fed.view.backbone,
            &w,
            fed.view.data,
            &holders,
            Objective::NegatedAlignment,
            &ascent_cfg,
            plan.steps,
            derive_seed(seed, "ascent"),
        )?
        .global;
        ledger.record("ascent", 0, holders.len() * p, holders.len() * p);
    }
    if plan.then_rounds > 0 {
        let tasks = retain_tasks(&fed.view, request)?;
        for round in 0..plan.then_rounds {
            let res = run_round(
                fed.view.backbone,
                &w,
                fed.view.data,
                &tasks,
                Objective::Alignment,
                cfg,
                cfg.local_steps,
                derive_seed(seed, &format!("ascent.round{round}")),
            )?;
            ledger.record("ascent_repair", round, tasks.len() * p, tasks.len() * p);
            w = res.global;
        }
    }
    Ok((w, ledger))
}

/// How the per-step alignment gradient is chosen in [`simulate_recurrence`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GradientSequence {
    /// Constant magnitude `G_u`, always opposing the contraction.
    WorstCase,
    /// Random directions in `R^dim` with norms uniform on `[0, G_u]`.
    Random { dim: usize, seed: u64 },
}

/// `‖d(t)‖` for `t = 0..=t_max` under `d(t+1) = (1 − 2ηα)d(t) − ηg(t)`, `d(0) = 0`.
pub fn simulate_recurrence(g_u: f64, alpha: f64, lr: f64, t_max: usize, seq: GradientSequence) -> Result<Vec<f64>> {
    check_step_size(alpha, lr)?;
    if !(g_u >= 0.0) || !(alpha >= 0.0) || !(lr > 0.0) {
        return Err(Error::usage("recurrence needs G_u ≥ 0, α ≥ 0 and lr > 0"));
    }
    let c = 1.0 - 2.0 * lr * alpha;
    let mut out = Vec::with_capacity(t_max + 1);
    out.push(0.0);
    match seq {
        GradientSequence::WorstCase => {
            let mut d = 0.0;
            for _ in 0..t_max {
                d = c * d + lr * g_u;
                out.push(d);
            }
        }
        GradientSequence::Random { dim, seed } => {
            if dim == 0 {
                return Err(Error::usage("recurrence dimension must be positive"));
            }
            let mut rng = crate::rng::rng_from(seed);
            let mut d = vec![0.0; dim];
            for _ in 0..t_max {
                let mut g: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let n = norm(&g).max(1e-300);
                let mag = g_u * rng.random::<f64>();
                g.iter_mut().for_each(|x| *x *= mag / n);
                for (di, gi) in d.iter_mut().zip(&g) {
                    *di = c * *di - lr * gi;
                }
                out.push(norm(&d));
            }
        }
    }
    Ok(out)
}

/// `‖Π_u ∇_{w_μ} L_a‖` over the given pairs, with `Π_u` restricted to the
/// blocks of `modality`.
pub fn anchor_signal(
    backbone: &FrozenBackbone,
    params: &ParamVector,
    xv: &DenseMatrix,
    xt: &DenseMatrix,
    bases: &ExcisionBases,
    modality: Modality,
) -> Result<f64> {
    let grad = infonce_grad(backbone, params, xv, xt)?.grad;
    let projected = bases.restricted_to(modality).apply_projector(&grad)?;
    Ok(projected.restricted_to(modality).norm())
}

/// Anchor signals of one modality at its unilaterally excised point and at
/// the bilaterally excised point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorComparison {
    pub modality: Modality,
    pub unilateral: f64,
    pub bilateral: f64,
}

impl AnchorComparison {
    pub fn ratio(&self) -> f64 {
        self.unilateral / self.bilateral.max(f64::MIN_POSITIVE)
    }
}

/// Small model whose forgotten pairs are told apart only through one
/// adapter direction per modality.
///
/// Each modality's inputs are `x̄ + s_i e` for a shared scalar `s_i`. The
/// reference projector annihilates the hidden image of `e`, so at the
/// reference every forgotten pair embeds identically; the trained point
/// adds a rank-one adapter update that routes `s_i` around that null
/// direction. The unique basis of each modality is that update.
pub struct AnchorScenario {
    pub backbone: FrozenBackbone,
    pub reference: ParamVector,
    pub trained: ParamVector,
    pub bases: ExcisionBases,
    pub xv: DenseMatrix,
    pub xt: DenseMatrix,
}

impl AnchorScenario {
    pub fn new(n_pairs: usize, seed: u64) -> Result<Self> {
        use rand_distr::{Distribution, StandardNormal};
        if n_pairs < 2 {
            return Err(Error::usage("anchor scenario needs at least two pairs"));
        }
        let cfg = ModelConfig { seed: derive_seed(seed, "backbone"), ..ModelConfig::default() };
        let backbone = FrozenBackbone::new(&cfg)?;
        let mut rng = crate::rng::child_rng(seed, "anchor");
        let mut gauss = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
        let unit = |mut v: Vec<f64>| {
            let n = norm(&v);
            v.iter_mut().for_each(|x| *x /= n);
            v
        };
        let shifts: Vec<f64> = gauss(n_pairs).into_iter().map(|s| 2.0 * s).collect();
        let mut reference = init_params(&cfg, derive_seed(seed, "init"))?;
        let mut trained_blocks = BTreeMap::new();
        let mut bases = BTreeMap::new();
        let mut inputs = Vec::new();
        let (h, r) = (cfg.hidden_dim, cfg.lora_rank);
        for m in [Modality::Visual, Modality::Text] {
            let dim = cfg.input_dim(m);
            let e = unit(gauss(dim));
            let base = gauss(dim);
            let x = DenseMatrix::from_fn(dim, n_pairs, |i, j| base[i] + shifts[j] * e[i]);
            inputs.push(x);
            let q = unit(mat_vec(backbone.weights(m), &e)?);

            // W1 ← W1 (I − q qᵀ)
            let proj = reference.block_mut(&BlockKey::projector(m)).expect("projector block");
            let w1q: Vec<f64> = (0..h).map(|i| (0..h).map(|j| proj[j * h + i] * q[j]).sum()).collect();
            for j in 0..h {
                for i in 0..h {
                    proj[j * h + i] -= w1q[i] * q[j];
                }
            }

            let mut u = gauss(h);
            let uq = crate::numerics::dot(&u, &q);
            u.iter_mut().zip(&q).for_each(|(a, b)| *a -= uq * b);
            let u = unit(u);
            let v = unit(gauss(r));
            let key = BlockKey::adapter(m, 0);
            let mut delta = vec![0.0; cfg.adapter_len()];
            for j in 0..r {
                for i in 0..h {
                    delta[j * h + i] = 3.0 * u[i] * v[j];
                }
            }
            let basis = DenseMatrix::from_col_major(delta.len(), 1, unit(delta.clone()))?;
            let mut b = BlockBases::empty(delta.len());
            b.b_u = basis;
            bases.insert(key, b);
            trained_blocks.insert(key, delta);
        }
        let mut trained = reference.clone();
        for (key, delta) in &trained_blocks {
            let block = trained.block_mut(key).expect("adapter block");
            block.iter_mut().zip(delta).for_each(|(w, d)| *w += d);
        }
        let xt = inputs.pop().expect("text inputs");
        let xv = inputs.pop().expect("visual inputs");
        Ok(AnchorScenario { backbone, reference, trained, bases: ExcisionBases { blocks: bases }, xv, xt })
    }

    /// Trained point with `modality`'s unique component excised.
    pub fn unilateral_point(&self, modality: Modality) -> Result<ParamVector> {
        bilateral_excision_step(&self.trained, &self.reference, &self.bases.restricted_to(modality))
    }

    pub fn bilateral_point(&self) -> Result<ParamVector> {
        bilateral_excision_step(&self.trained, &self.reference, &self.bases)
    }

    pub fn compare(&self) -> Result<Vec<AnchorComparison>> {
        let both = self.bilateral_point()?;
        [Modality::Visual, Modality::Text]
            .into_iter()
            .map(|m| {
                let one = self.unilateral_point(m)?;
                Ok(AnchorComparison {
                    modality: m,
                    unilateral: anchor_signal(&self.backbone, &one, &self.xv, &self.xt, &self.bases, m)?,
                    bilateral: anchor_signal(&self.backbone, &both, &self.xv, &self.xt, &self.bases, m)?,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gsd::{BlockBases, partition_spectrum, EntanglementSpectrum};
    use crate::model::ModelConfig;
    use crate::numerics::{orthonormal_columns, DenseMatrix};

    fn random_bases(cfg: &ModelConfig, width: usize, seed: u64) -> ExcisionBases {
        let mut rng = crate::rng::rng_from(seed);
        let mut blocks = BTreeMap::new();
        for (key, len) in cfg.layout() {
            let raw = DenseMatrix::from_fn(len, width, |_, _| rng.random_range(-1.0..1.0));
            let spec = EntanglementSpectrum { canonical_dirs: orthonormal_columns(&raw, 1e-12), kappa: vec![0.0; width] };
            blocks.insert(key, partition_spectrum(&spec, 0.5));
        }
        ExcisionBases { blocks }
    }

    fn perturbed(w: &ParamVector, scale: f64, seed: u64) -> ParamVector {
        let mut rng = crate::rng::rng_from(seed);
        let mut out = w.clone();
        for (_, v) in out.iter_mut() {
            v.iter_mut().for_each(|x| *x += scale * rng.random_range(-1.0..1.0));
        }
        out
    }

    #[test]
    fn excision_step_laws() {
        let cfg = ModelConfig::default();
        let w_n = init_params(&cfg, 1).unwrap();
        let bases = random_bases(&cfg, 3, 2);
        assert_eq!(bilateral_excision_step(&w_n, &w_n, &bases).unwrap(), w_n);
        for s in 0..5 {
            let w = perturbed(&w_n, 1.0, s);
            let out = bilateral_excision_step(&w, &w_n, &bases).unwrap();
            for d in unique_drift(&out, &w_n, &bases).unwrap().values() {
                assert!(*d <= 1e-10);
            }
        }
        let mut w = w_n.clone();
        let disp = perturbed(&w_n.zeros_like(), 1.0, 9);
        let inside = bases.apply_projector(&disp).unwrap();
        let orth = disp.sub(&inside).unwrap();
        w.axpy(1.0, &orth).unwrap();
        let out = bilateral_excision_step(&w, &w_n, &bases).unwrap();
        assert!(out.max_abs_diff(&w).unwrap() <= 1e-12);
    }

    #[test]
    fn excision_rejects_layout_mismatch() {
        let cfg = ModelConfig::default();
        let small = ModelConfig { hidden_dim: 8, lora_rank: 2, ..cfg.clone() };
        let a = init_params(&cfg, 1).unwrap();
        let b = init_params(&small, 1).unwrap();
        let err = bilateral_excision_step(&a, &b, &ExcisionBases::default()).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn empty_bases_leave_everything_alone() {
        let cfg = ModelConfig::default();
        let w = init_params(&cfg, 3).unwrap();
        let mut bases = ExcisionBases::default();
        bases.blocks.insert(BlockKey::projector(Modality::Visual), BlockBases::empty(cfg.projector_len()));
        let r = init_params(&cfg, 4).unwrap();
        assert_eq!(bilateral_excision_step(&w, &r, &bases).unwrap(), w);
    }

    #[test]
    fn recurrence_closed_form_example() {
        let d = simulate_recurrence(1.0, 0.5, 0.1, 3, GradientSequence::WorstCase).unwrap();
        assert!((d[3] - 0.271).abs() < 1e-12);
        assert!((drift_bound(1.0, 0.5, 0.1, 3) - 0.271).abs() < 1e-12);
        assert_eq!(d[0], 0.0);
    }

    #[test]
    fn recurrence_without_lock_grows_linearly() {
        let d = simulate_recurrence(2.0, 0.0, 0.1, 50, GradientSequence::WorstCase).unwrap();
        for (t, v) in d.iter().enumerate() {
            assert!((v - 0.2 * t as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn recurrence_step_size_guard() {
        let err = simulate_recurrence(1.0, 1.0, 0.5, 3, GradientSequence::WorstCase).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
        assert!(err.to_string().contains("1/(2*alpha)"));
    }

    #[test]
    fn random_bounded_gradients_respect_bound() {
        for seed in 0..50 {
            let (alpha, lr) = (0.2 + 0.1 * (seed % 7) as f64, 0.05 + 0.01 * (seed % 5) as f64);
            let d = simulate_recurrence(1.3, alpha, lr, 200, GradientSequence::Random { dim: 6, seed }).unwrap();
            for (t, v) in d.iter().enumerate() {
                assert!(*v <= drift_bound(1.3, alpha, lr, t) * (1.0 + 1e-12) + 1e-15);
            }
        }
    }

    #[test]
    fn trace_csv_schema() {
        let trace = PhaseTrace {
            rows: vec![TraceRow { round: 0, phase: Phase::Excision, block: "v.adapter0".into(), drift: 0.5, align_loss: 1.0, lock_value: 0.0 }],
            ..PhaseTrace::default()
        };
        let csv = trace.to_csv();
        assert!(csv.starts_with("round,phase,block,drift,align_loss,lock_value\n0,excision,v.adapter0,"));
        assert_eq!(trace.rounds(), 1);
        assert_eq!(trace.final_drift(), 0.5);
    }

    #[test]
    fn plan_validation() {
        assert!(UnlearnPlan::default().validate(0.1).is_ok());
        assert!(UnlearnPlan { alpha: 10.0, ..UnlearnPlan::default() }.validate(0.1).is_err());
        assert!(UnlearnPlan { alpha: 10.0, variant: Variant::NoLock, ..UnlearnPlan::default() }.validate(0.1).is_ok());
        assert!(UnlearnPlan { delta: 1.5, ..UnlearnPlan::default() }.validate(0.1).is_err());
    }
    #[test]
    fn anchor_scenario_separates_unilateral_from_bilateral() {
        for seed in 0..3 {
            let sc = AnchorScenario::new(16, seed).unwrap();
            for c in sc.compare().unwrap() {
                assert!(c.unilateral > 1e-3, "{c:?}");
                assert!(c.bilateral < 1e-9, "{c:?}");
                assert!(c.ratio() >= 10.0);
            }
        }
    }

    #[test]
    fn anchor_scenario_reference_collapses_forget_pairs() {
        let sc = AnchorScenario::new(8, 5).unwrap();
        let both = sc.bilateral_point().unwrap();
        assert!(both.max_abs_diff(&sc.reference).unwrap() < 1e-12);
        let grad = infonce_grad(&sc.backbone, &sc.reference, &sc.xv, &sc.xt).unwrap().grad;
        assert!(grad.norm() < 1e-9);
        assert!(AnchorScenario::new(1, 0).is_err());
    }
    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn excision_erases_and_is_idempotent(width in 1usize..4, scale in 0.01f64..10.0, seed in any::<u64>()) {
                let cfg = ModelConfig { hidden_dim: 8, embed_dim: 4, lora_rank: 2, ..ModelConfig::default() };
                let reference = init_params(&cfg, seed).unwrap();
                let bases = random_bases(&cfg, width, seed ^ 1);
                let w = perturbed(&reference, scale, seed ^ 2);
                let once = bilateral_excision_step(&w, &reference, &bases).unwrap();
                for d in unique_drift(&once, &reference, &bases).unwrap().values() {
                    prop_assert!(*d <= 1e-10 * scale.max(1.0));
                }
                let twice = bilateral_excision_step(&once, &reference, &bases).unwrap();
                prop_assert!(twice.max_abs_diff(&once).unwrap() <= 1e-10 * scale.max(1.0));
            }

            #[test]
            fn worst_case_recurrence_never_exceeds_limit(g in 0.0f64..5.0, alpha in 0.01f64..4.0, frac in 0.01f64..0.99) {
                let lr = frac / (2.0 * alpha);
                let d = simulate_recurrence(g, alpha, lr, 200, GradientSequence::WorstCase).unwrap();
                prop_assert!(d.windows(2).all(|w| w[1] >= w[0] - 1e-12));
                prop_assert!(d.iter().all(|v| *v <= g / (2.0 * alpha) * (1.0 + 1e-12)));
            }
        }
    }
}
