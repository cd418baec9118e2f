//! End-to-end cells: data, federated training, every unlearning method and
//! the evaluation that turns each into a [`RunReport`].

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{
    partition_dataset, synthesize_dataset, train_federation, CommLedger, DataConfig, FederationConfig, GradientHistory,
    SyntheticDataset, SyntheticWorld, TrainOutcome,
};
use crate::gsd::{Decomposition, FederationView, Scenario, UnlearnRequest};
use crate::metrics::{
    alignment_residual, embed_pairs, mia_attack, pair_losses, pair_similarities, MiaConfig, RecallTriple, RunReport,
    ShadowPool,
};
use crate::model::{init_params, FrozenBackbone, ModelConfig, ParamVector};
use crate::rng::{child_rng, derive_seed};
use crate::unlearn::{
    run_gradient_ascent, run_retrain, run_unlearning, AscentPlan, PhaseTrace, RetrainSeeding, TrainedFederation,
    UnlearnPlan, Variant,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Original,
    Ease,
    Retrain,
    #[serde(rename = "retrain_25")]
    Retrain25,
    #[serde(rename = "retrain_50")]
    Retrain50,
    #[serde(rename = "retrain_75")]
    Retrain75,
    GradAscent,
    NoBkeV,
    NoBkeT,
    NoGsd,
    NoLock,
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::Original,
        Method::Ease,
        Method::Retrain,
        Method::Retrain25,
        Method::Retrain50,
        Method::Retrain75,
        Method::GradAscent,
        Method::NoBkeV,
        Method::NoBkeT,
        Method::NoGsd,
        Method::NoLock,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Original => "original",
            Method::Ease => "ease",
            Method::Retrain => "retrain",
            Method::Retrain25 => "retrain_25",
            Method::Retrain50 => "retrain_50",
            Method::Retrain75 => "retrain_75",
            Method::GradAscent => "grad_ascent",
            Method::NoBkeV => "no_bke_v",
            Method::NoBkeT => "no_bke_t",
            Method::NoGsd => "no_gsd",
            Method::NoLock => "no_lock",
        }
    }

    /// Excision variant, for methods that run the three-phase pipeline.
    pub fn variant(self) -> Option<Variant> {
        match self {
            Method::Ease => Some(Variant::Full),
            Method::NoBkeV => Some(Variant::NoBkeVisual),
            Method::NoBkeT => Some(Variant::NoBkeText),
            Method::NoGsd => Some(Variant::NoGsd),
            Method::NoLock => Some(Variant::NoLock),
            _ => None,
        }
    }

    pub fn retrain_fraction(self) -> Option<f64> {
        match self {
            Method::Retrain => Some(1.0),
            Method::Retrain25 => Some(0.25),
            Method::Retrain50 => Some(0.5),
            Method::Retrain75 => Some(0.75),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::usage(format!("unknown method '{s}' (known: {})", known.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub kind: Scenario,
    /// Client index (client scenario) or pseudo-class (class scenario).
    pub target: usize,
    /// Share of all pairs forgotten in the sample scenario.
    pub sample_fraction: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig { kind: Scenario::Client, target: 0, sample_fraction: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Candidates per retrieval split.
    pub pool: usize,
    pub mia: MiaConfig,
    pub retrain_seeding: RetrainSeeding,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { pool: 200, mia: MiaConfig::default(), retrain_seeding: RetrainSeeding::SameBranch }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub federation: FederationConfig,
    pub plan: UnlearnPlan,
    pub ascent: AscentPlan,
    pub eval: EvalConfig,
    pub scenario: ScenarioConfig,
    /// KMeans pseudo-classes used for partitioning and class requests.
    pub n_classes: usize,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelConfig::default(),
            data: DataConfig::default(),
            federation: FederationConfig::default(),
            plan: UnlearnPlan::default(),
            ascent: AscentPlan::default(),
            eval: EvalConfig::default(),
            scenario: ScenarioConfig::default(),
            n_classes: 10,
            methods: Method::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            output_dir: "runs".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.data.validate()?;
        self.federation.validate()?;
        self.plan.validate(self.federation.lr)?;
        self.eval.mia.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::usage("at least one seed is required"));
        }
        if self.methods.is_empty() {
            return Err(Error::usage("at least one method is required"));
        }
        if self.n_classes == 0 || self.n_classes > self.data.n_pairs {
            return Err(Error::usage("n_classes must be in [1, n_pairs]"));
        }
        if self.eval.pool < 10 {
            return Err(Error::usage("evaluation pool must hold at least 10 pairs"));
        }
        match self.scenario.kind {
            Scenario::Client if self.scenario.target >= self.federation.clients => Err(Error::usage(format!(
                "client {} does not exist with {} clients",
                self.scenario.target, self.federation.clients
            ))),
            Scenario::Class if self.scenario.target >= self.n_classes => Err(Error::usage(format!(
                "class {} does not exist with {} classes",
                self.scenario.target, self.n_classes
            ))),
            Scenario::Sample if !(self.scenario.sample_fraction > 0.0 && self.scenario.sample_fraction < 1.0) => {
                Err(Error::usage("sample_fraction must be in (0, 1)"))
            }
            _ => Ok(()),
        }
    }

    /// Hash of the parts that determine artifacts; `seeds`, `methods` and
    /// `output_dir` are excluded so that cells can be shared between runs.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("seeds");
            m.remove("methods");
            m.remove("output_dir");
        }
        crate::config_hash(&v)
    }
}

/// Independent seed streams derived from a master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedStreams {
    pub master: u64,
    pub data: u64,
    pub federation: u64,
    pub unlearning: u64,
}

impl SeedStreams {
    pub fn new(master: u64) -> Self {
        SeedStreams {
            master,
            data: derive_seed(master, "data"),
            federation: derive_seed(master, "federation"),
            unlearning: derive_seed(master, "unlearning"),
        }
    }

    pub fn init(&self) -> u64 {
        derive_seed(self.federation, "init")
    }

    pub fn rounds(&self) -> u64 {
        derive_seed(self.federation, "rounds")
    }
}

/// Data, partition and backbone for one seed; no training yet.
pub struct Setup {
    pub config: ExperimentConfig,
    pub streams: SeedStreams,
    pub backbone: FrozenBackbone,
    pub world: SyntheticWorld,
    pub data: SyntheticDataset,
    pub test: SyntheticDataset,
    pub nonmembers: SyntheticDataset,
    pub background: SyntheticDataset,
    pub labels: Vec<usize>,
    pub shards: Vec<Vec<usize>>,
}

impl Setup {
    pub fn new(config: &ExperimentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let streams = SeedStreams::new(seed);
        let model = ModelConfig { seed: derive_seed(seed, "backbone"), ..config.model.clone() };
        let backbone = FrozenBackbone::new(&model)?;
        let (world, data) = synthesize_dataset(&config.data, model.input_dim_v, model.input_dim_t, streams.data)?;
        let held_out = |label: &str, n: usize| world.sample_balanced(n, &mut child_rng(streams.data, label));
        let test = held_out("test", config.eval.pool);
        let nonmembers = held_out("nonmembers", config.eval.mia.nonmember_pool);
        let background = held_out("background", config.eval.mia.background);
        let (labels, shards) = partition_dataset(&data, &config.federation, config.n_classes, streams.federation)?;
        Ok(Setup { config: config.clone(), streams, backbone, world, data, test, nonmembers, background, labels, shards })
    }

    pub fn view(&self) -> FederationView<'_> {
        FederationView {
            backbone: &self.backbone,
            data: &self.data,
            shards: &self.shards,
            labels: &self.labels,
            config: &self.config.federation,
        }
    }

    pub fn initial_params(&self) -> Result<ParamVector> {
        init_params(self.backbone.config(), self.streams.init())
    }

    pub fn train(&self) -> Result<TrainOutcome> {
        let w_0 = self.initial_params()?;
        train_federation(
            &self.backbone,
            &w_0,
            &self.data,
            &self.shards,
            &self.config.federation,
            self.config.federation.rounds,
            self.streams.rounds(),
        )
    }

    pub fn request(&self) -> Result<UnlearnRequest> {
        let sc = &self.config.scenario;
        Ok(match sc.kind {
            Scenario::Client => UnlearnRequest::Client(sc.target),
            Scenario::Class => UnlearnRequest::Class(sc.target),
            Scenario::Sample => {
                let n = ((sc.sample_fraction * self.data.len() as f64).round() as usize).max(1);
                let mut ids: Vec<usize> = (0..self.data.len()).collect();
                ids.shuffle(&mut child_rng(self.streams.unlearning, "sample_request"));
                ids.truncate(n);
                ids.sort_unstable();
                UnlearnRequest::Samples(ids)
            }
        })
    }
}

/// A trained federation: setup plus the artifacts of training.
pub struct Trained {
    pub setup: Setup,
    pub w_0: ParamVector,
    pub w_n: ParamVector,
    pub history: GradientHistory,
    pub ledger: CommLedger,
}

impl Trained {
    pub fn new(setup: Setup) -> Result<Self> {
        let out = setup.train()?;
        Ok(Trained { setup, w_0: out.w_0, w_n: out.w_n, history: out.history, ledger: out.ledger })
    }

    /// Rebuild from stored artifacts.
    pub fn from_parts(setup: Setup, w_n: ParamVector, history: GradientHistory, ledger: CommLedger) -> Result<Self> {
        let w_0 = setup.initial_params()?;
        w_0.check_layout(&w_n)?;
        Ok(Trained { setup, w_0, w_n, history, ledger })
    }

    pub fn federation(&self) -> TrainedFederation<'_> {
        TrainedFederation { view: self.setup.view(), w_0: &self.w_0, w_n: &self.w_n, history: &self.history }
    }

    pub fn run_method(&self, method: Method, request: &UnlearnRequest) -> Result<MethodResult> {
        self.run_method_with(method, request, &self.setup.config.plan)
    }

    /// Run `method` with an explicit plan (variant is taken from the method).
    pub fn run_method_with(&self, method: Method, request: &UnlearnRequest, plan: &UnlearnPlan) -> Result<MethodResult> {
        let s = &self.setup;
        let seed = derive_seed(s.streams.unlearning, method.name());
        let mut decomposition = None;
        let (w, ledger, trace) = if let Some(variant) = method.variant() {
            let plan = UnlearnPlan { variant, ..plan.clone() };
            let out = run_unlearning(&self.federation(), request, &plan, seed)?;
            decomposition = Some(out.decomposition);
            (out.w_star, out.ledger, Some(out.trace))
        } else if let Some(fraction) = method.retrain_fraction() {
            let out = run_retrain(
                &s.view(),
                request,
                fraction,
                s.config.eval.retrain_seeding,
                s.streams.init(),
                s.streams.rounds(),
            )?;
            (out.w, out.ledger, None)
        } else if method == Method::GradAscent {
            let (w, ledger) = run_gradient_ascent(&self.federation(), request, &s.config.ascent, seed)?;
            (w, ledger, None)
        } else {
            (self.w_n.clone(), CommLedger::default(), None)
        };
        Ok(MethodResult { method, w, ledger, trace, decomposition })
    }
}

#[derive(Clone, Debug)]
pub struct MethodResult {
    pub method: Method,
    pub w: ParamVector,
    pub ledger: CommLedger,
    pub trace: Option<PhaseTrace>,
    pub decomposition: Option<Decomposition>,
}

/// Evaluation splits and the shadow pool for one trained federation.
pub struct Evaluator {
    forget_ids: Vec<usize>,
    forget_pool: (crate::numerics::DenseMatrix, crate::numerics::DenseMatrix),
    forget_queries: Vec<usize>,
    retain_pool: (crate::numerics::DenseMatrix, crate::numerics::DenseMatrix),
    shadows: ShadowPool,
    calibration_items: Vec<usize>,
    scenario: Scenario,
    seed: u64,
    fpr_target: f64,
}

fn strided(ids: &[usize], cap: usize) -> Vec<usize> {
    if ids.len() <= cap {
        return ids.to_vec();
    }
    (0..cap).map(|i| ids[i * ids.len() / cap]).collect()
}

impl Evaluator {
    pub fn new(trained: &Trained, request: &UnlearnRequest) -> Result<Self> {
        let s = &trained.setup;
        let pool = s.config.eval.pool;
        let forget_ids = request.forget_ids(&s.shards, &s.labels)?;
        let forget_set: std::collections::BTreeSet<usize> = forget_ids.iter().copied().collect();
        let retain_ids: Vec<usize> = (0..s.data.len()).filter(|i| !forget_set.contains(i)).collect();

        let f_eval = strided(&forget_ids, pool);
        let mut fv = s.data.xv.select_columns(&f_eval);
        let mut ft = s.data.xt.select_columns(&f_eval);
        let fill = pool - f_eval.len();
        if fill > 0 {
            let extra: Vec<usize> = (0..fill.min(s.test.len())).collect();
            fv = crate::numerics::DenseMatrix::hstack(&[&fv, &s.test.xv.select_columns(&extra)])?;
            ft = crate::numerics::DenseMatrix::hstack(&[&ft, &s.test.xt.select_columns(&extra)])?;
        }
        let r_eval = strided(&retain_ids, pool);
        let retain_pool = (s.data.xv.select_columns(&r_eval), s.data.xt.select_columns(&r_eval));

        let shadows = train_shadows(trained)?;
        let n = s.data.len();
        let calibration_items: Vec<usize> = (n..n + s.nonmembers.len()).collect();
        Ok(Evaluator {
            forget_queries: (0..f_eval.len()).collect(),
            forget_ids,
            forget_pool: (fv, ft),
            retain_pool,
            shadows,
            calibration_items,
            scenario: request.scenario(),
            seed: s.streams.master,
            fpr_target: s.config.eval.mia.fpr_target,
        })
    }

    pub fn forget_ids(&self) -> &[usize] {
        &self.forget_ids
    }

    /// Per-pair similarities of all forgotten pairs under `w`.
    pub fn forget_similarities(&self, trained: &Trained, w: &ParamVector) -> Result<Vec<f64>> {
        let s = &trained.setup;
        let (zv, zt) = embed_pairs(
            &s.backbone,
            w,
            &s.data.xv.select_columns(&self.forget_ids),
            &s.data.xt.select_columns(&self.forget_ids),
        )?;
        Ok(pair_similarities(&zv, &zt))
    }

    /// Report for `result`; `retrain` feeds the residual and `None` leaves it absent.
    pub fn evaluate(&self, trained: &Trained, result: &MethodResult, retrain: Option<&ParamVector>) -> Result<RunReport> {
        let s = &trained.setup;
        let bb = &s.backbone;
        let w = &result.w;
        let (zv, zt) = embed_pairs(bb, w, &self.forget_pool.0, &self.forget_pool.1)?;
        let f = RecallTriple::measure(&zv, &zt, &self.forget_queries)?;
        let (zv, zt) = embed_pairs(bb, w, &self.retain_pool.0, &self.retain_pool.1)?;
        let all: Vec<usize> = (0..zv.cols()).collect();
        let r = RecallTriple::measure(&zv, &zt, &all)?;

        let rho = match retrain {
            Some(w_tilde) => {
                let s_star = self.forget_similarities(trained, w)?;
                let s_tilde = self.forget_similarities(trained, w_tilde)?;
                let s_n = self.forget_similarities(trained, &trained.w_n)?;
                Some(alignment_residual(&s_star, &s_tilde, &s_n)?)
            }
            None => None,
        };

        let gamma = bb.config().temperature;
        let (bv, bt) = embed_pairs(bb, w, &s.background.xv, &s.background.xt)?;
        let losses_of = |xv: &crate::numerics::DenseMatrix, xt: &crate::numerics::DenseMatrix| -> Result<Vec<f64>> {
            let (zv, zt) = embed_pairs(bb, w, xv, xt)?;
            pair_losses(&zv, &zt, &bv, &bt, gamma)
        };
        let forget_losses = losses_of(
            &s.data.xv.select_columns(&self.forget_ids),
            &s.data.xt.select_columns(&self.forget_ids),
        )?;
        let cal_losses = losses_of(&s.nonmembers.xv, &s.nonmembers.xt)?;
        let mia = mia_attack(
            &self.shadows,
            &self.forget_ids,
            &forget_losses,
            &self.calibration_items,
            &cal_losses,
            self.fpr_target,
        )?;

        Ok(RunReport {
            scenario: self.scenario.name().into(),
            method: result.method.name().into(),
            seed: self.seed,
            f_r1: Some(f.r1),
            f_r5: Some(f.r5),
            f_r10: Some(f.r10),
            r_r1: Some(r.r1),
            r_r5: Some(r.r5),
            r_r10: Some(r.r10),
            rho,
            mia: Some(mia.tpr),
            lira_tpr: Some(mia.lira_tpr),
            comm_mb: Some(result.ledger.total_mb()),
            drift_final: result.trace.as_ref().map(PhaseTrace::final_drift),
            gaps: Default::default(),
        })
    }
}

/// Shadow federations, each trained on a random half of training data plus
/// nonmember pool; returns every population item's loss under each shadow.
fn train_shadows(trained: &Trained) -> Result<ShadowPool> {
    let s = &trained.setup;
    let population = s.data.concat(&s.nonmembers)?;
    let n = population.len();
    let cfg = &s.config.federation;
    let k = cfg.clients;
    let gamma = s.backbone.config().temperature;
    let mut losses = Vec::new();
    let mut members = Vec::new();
    for shadow in 0..s.config.eval.mia.n_shadows {
        let seed = derive_seed(s.streams.master, &format!("shadow{shadow}"));
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(&mut child_rng(seed, "split"));
        ids.truncate(n / 2);
        ids.sort_unstable();
        let mut mask = vec![false; n];
        ids.iter().for_each(|&i| mask[i] = true);
        let mut order = ids.clone();
        order.shuffle(&mut child_rng(seed, "shards"));
        let shards: Vec<Vec<usize>> = (0..k)
            .map(|c| {
                let mut sh: Vec<usize> = order.iter().skip(c).step_by(k).copied().collect();
                sh.sort_unstable();
                sh
            })
            .collect();
        let w_0 = init_params(s.backbone.config(), derive_seed(seed, "init"))?;
        let out = train_federation(&s.backbone, &w_0, &population, &shards, cfg, cfg.rounds, derive_seed(seed, "rounds"))?;
        let (bv, bt) = embed_pairs(&s.backbone, &out.w_n, &s.background.xv, &s.background.xt)?;
        let (zv, zt) = embed_pairs(&s.backbone, &out.w_n, &population.xv, &population.xt)?;
        losses.push(pair_losses(&zv, &zt, &bv, &bt, gamma)?);
        members.push(mask);
        log::debug!("shadow {shadow} trained");
    }
    Ok(ShadowPool { losses, members })
}

/// Everything produced for one seed.
pub struct CellOutcome {
    pub trained: Trained,
    pub request: UnlearnRequest,
    pub evaluator: Evaluator,
    pub results: Vec<MethodResult>,
    pub reports: Vec<RunReport>,
}

/// Train, run every configured method and evaluate; gaps are filled
/// against the full retrain, which is always run.
pub fn run_cell(config: &ExperimentConfig, seed: u64) -> Result<CellOutcome> {
    let trained = Trained::new(Setup::new(config, seed)?)?;
    let request = trained.setup.request()?;
    let mut methods = config.methods.clone();
    if !methods.contains(&Method::Retrain) {
        methods.push(Method::Retrain);
    }
    let results: Vec<MethodResult> = methods
        .iter()
        .map(|&m| trained.run_method(m, &request).map_err(|e| e.context(format!("method {m}"))))
        .collect::<Result<_>>()?;
    let evaluator = Evaluator::new(&trained, &request)?;
    let reports = evaluate_all(&trained, &evaluator, &results)?;
    let keep: Vec<usize> = (0..results.len()).filter(|&i| config.methods.contains(&results[i].method)).collect();
    Ok(CellOutcome {
        reports: keep.iter().map(|&i| reports[i].clone()).collect(),
        results: keep.iter().map(|&i| results[i].clone()).collect(),
        trained,
        request,
        evaluator,
    })
}

/// Reports for `results`, with gaps to the `retrain` entry when present.
pub fn evaluate_all(trained: &Trained, evaluator: &Evaluator, results: &[MethodResult]) -> Result<Vec<RunReport>> {
    let retrain = results.iter().find(|r| r.method == Method::Retrain);
    let reports: Vec<RunReport> = results
        .iter()
        .map(|r| evaluator.evaluate(trained, r, retrain.map(|x| &x.w)))
        .collect::<Result<_>>()?;
    let reference = reports.iter().find(|r| r.method == Method::Retrain.name()).cloned();
    Ok(match reference {
        Some(rf) => reports.into_iter().map(|r| r.with_gaps(&rf)).collect(),
        None => reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            let j = serde_json::to_string(&m).unwrap();
            assert_eq!(j, format!("\"{}\"", m.name()));
        }
        assert!("nope".parse::<Method>().is_err());
    }

    #[test]
    fn hash_ignores_seeds_and_is_stable() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { seeds: vec![9], output_dir: "x".into(), ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig { n_classes: 5, ..a.clone() };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn streams_are_independent() {
        let s = SeedStreams::new(4);
        assert_ne!(s.data, s.federation);
        assert_ne!(s.federation, s.unlearning);
        assert_eq!(s, SeedStreams::new(4));
    }

    #[test]
    fn validation_catches_bad_targets() {
        let mut c = ExperimentConfig::default();
        c.scenario.target = 10;
        assert!(c.validate().is_err());
        let c = ExperimentConfig { seeds: vec![], ..ExperimentConfig::default() };
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn strided_subset() {
        assert_eq!(strided(&[1, 2, 3], 5), vec![1, 2, 3]);
        assert_eq!(strided(&(0..10).collect::<Vec<_>>(), 5), vec![0, 2, 4, 6, 8]);
    }
}
