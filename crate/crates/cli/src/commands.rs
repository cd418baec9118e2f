//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use clap::ValueEnum;
use fedexcise::experiment::{evaluate_all, run_cell, Evaluator, ExperimentConfig, Method, MethodResult, Setup, Trained};
use fedexcise::federation::{CommLedger, GradientHistory};
use fedexcise::metrics::{summary_csv, RunReport, GAP_COLUMNS, SUMMARY_COLUMNS};
use fedexcise::model::ParamVector;
use fedexcise::unlearn::PhaseTrace;
use rayon::prelude::*;
use serde::Serialize;

use crate::layout::{read_bytes, read_json, refuse_overwrite, require, write_bytes, write_json, write_text, Layout};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Delta,
    TauE,
    Alpha,
    Clients,
    Beta,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::Delta => "delta",
            Axis::TauE => "tau_e",
            Axis::Alpha => "alpha",
            Axis::Clients => "clients",
            Axis::Beta => "beta",
        }
    }

    fn default_grid(self) -> Vec<f64> {
        match self {
            Axis::Delta => (0..=10).map(|i| i as f64 / 10.0).collect(),
            Axis::TauE => vec![0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99],
            Axis::Alpha => vec![0.0, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0],
            Axis::Clients => vec![5.0, 10.0, 20.0],
            Axis::Beta => vec![0.1, 0.5, 1.0, 5.0],
        }
    }

    /// Whether the axis changes training, so each value needs a new federation.
    fn retrains(self) -> bool {
        matches!(self, Axis::Clients | Axis::Beta)
    }

    fn apply(self, cfg: &mut ExperimentConfig, v: f64) -> Result<()> {
        match self {
            Axis::Delta => cfg.plan.delta = v,
            Axis::TauE => cfg.plan.tau_e = v,
            Axis::Alpha => cfg.plan.alpha = v,
            Axis::Beta => cfg.federation.beta = v,
            Axis::Clients => {
                if v.fract() != 0.0 || v < 2.0 {
                    return Err(CliError::Usage(format!("client count must be an integer ≥ 2, got {v}")).into());
                }
                cfg.federation.clients = v as usize;
            }
        }
        cfg.validate().with_context(|| format!("{} = {v}", self.name()))?;
        Ok(())
    }
}

#[derive(Serialize)]
struct DatasetManifest {
    config_hash: String,
    seed: u64,
    streams: fedexcise::experiment::SeedStreams,
    n_pairs: usize,
    n_concepts: usize,
    shard_sizes: Vec<usize>,
    class_counts: Vec<usize>,
    request: fedexcise::gsd::UnlearnRequest,
}

pub struct Ctx {
    cfg: ExperimentConfig,
    layout: Layout,
    force: bool,
}

impl Ctx {
    pub fn new(cfg: ExperimentConfig, force: bool) -> Result<Self> {
        let layout = Layout::new(&cfg);
        layout.claim(&cfg)?;
        Ok(Ctx { cfg, layout, force })
    }

    fn for_each_seed(&self, f: impl Fn(u64) -> Result<()> + Sync) -> Result<()> {
        self.cfg
            .seeds
            .par_iter()
            .map(|&s| f(s).with_context(|| format!("seed {s}")))
            .collect::<Vec<_>>()
            .into_iter()
            .collect()
    }

    pub fn train(&self) -> Result<()> {
        self.for_each_seed(|seed| self.train_seed(seed))
    }

    fn train_seed(&self, seed: u64) -> Result<()> {
        let l = &self.layout;
        refuse_overwrite(&l.w_n(seed), self.force)?;
        let trained = Trained::new(Setup::new(&self.cfg, seed)?)?;
        let s = &trained.setup;
        let mut class_counts = vec![0; self.cfg.n_classes];
        s.labels.iter().for_each(|&c| class_counts[c] += 1);
        let manifest = DatasetManifest {
            config_hash: l.hash.clone(),
            seed,
            streams: s.streams,
            n_pairs: s.data.len(),
            n_concepts: s.data.n_concepts,
            shard_sizes: s.shards.iter().map(Vec::len).collect(),
            class_counts,
            request: s.request()?,
        };
        write_bytes(&l.w_n(seed), &trained.w_n.to_bytes(&l.hash))?;
        write_bytes(&l.history(seed), &trained.history.to_bytes(&l.hash))?;
        write_json(&l.ledger(seed), &trained.ledger)?;
        write_json(&l.manifest(seed), &manifest)?;
        log::info!("seed {seed}: trained, {:.3} MB", trained.ledger.total_mb());
        Ok(())
    }

    fn load_trained(&self, seed: u64) -> Result<Trained> {
        let l = &self.layout;
        require(&l.w_n(seed), "train")?;
        require(&l.history(seed), "train")?;
        require(&l.ledger(seed), "train")?;
        let w_n = ParamVector::from_bytes(&read_bytes(&l.w_n(seed))?, &l.hash)?;
        let history = GradientHistory::from_bytes(&read_bytes(&l.history(seed))?, &l.hash)?;
        let ledger: CommLedger = read_json(&l.ledger(seed))?;
        Ok(Trained::from_parts(Setup::new(&self.cfg, seed)?, w_n, history, ledger)?)
    }

    pub fn unlearn(&self, methods: &[Method]) -> Result<()> {
        let methods = if methods.is_empty() { self.cfg.methods.clone() } else { methods.to_vec() };
        self.for_each_seed(|seed| {
            for &m in &methods {
                refuse_overwrite(&self.layout.method_dir(seed, m).join("w_star"), self.force)?;
            }
            let trained = self.load_trained(seed)?;
            let request = trained.setup.request()?;
            for &m in &methods {
                let result = trained.run_method(m, &request).with_context(|| format!("method {m}"))?;
                self.store_result(seed, &result)?;
                log::info!("seed {seed}: {m} done, {:.3} MB", result.ledger.total_mb());
            }
            Ok(())
        })
    }

    fn store_result(&self, seed: u64, r: &MethodResult) -> Result<()> {
        let dir = self.layout.method_dir(seed, r.method);
        write_bytes(&dir.join("w_star"), &r.w.to_bytes(&self.layout.hash))?;
        write_json(&dir.join("ledger.json"), &r.ledger)?;
        if let Some(trace) = &r.trace {
            write_text(&dir.join("trace.csv"), &trace.to_csv())?;
            write_json(&dir.join("trace.json"), trace)?;
        }
        if let Some(d) = &r.decomposition {
            write_text(&dir.join("spectrum.csv"), &d.spectrum_csv())?;
        }
        Ok(())
    }

    fn load_result(&self, seed: u64, method: Method) -> Result<MethodResult> {
        let dir = self.layout.method_dir(seed, method);
        require(&dir.join("w_star"), &format!("unlearn --method {method}"))?;
        let w = ParamVector::from_bytes(&read_bytes(&dir.join("w_star"))?, &self.layout.hash)?;
        let ledger: CommLedger = read_json(&dir.join("ledger.json"))?;
        let trace_path = dir.join("trace.json");
        let trace: Option<PhaseTrace> = if trace_path.exists() { Some(read_json(&trace_path)?) } else { None };
        Ok(MethodResult { method, w, ledger, trace, decomposition: None })
    }

    pub fn eval(&self) -> Result<()> {
        self.for_each_seed(|seed| self.eval_seed(seed))
    }

    fn eval_seed(&self, seed: u64) -> Result<()> {
        let l = &self.layout;
        refuse_overwrite(&l.report(seed), self.force)?;
        let trained = self.load_trained(seed)?;
        let request = trained.setup.request()?;
        let mut results: Vec<MethodResult> =
            self.cfg.methods.iter().map(|&m| self.load_result(seed, m)).collect::<Result<_>>()?;
        if !self.cfg.methods.contains(&Method::Retrain) {
            if l.method_dir(seed, Method::Retrain).join("w_star").exists() {
                results.push(self.load_result(seed, Method::Retrain)?);
            } else {
                log::warn!("seed {seed}: no retrain result, gap and residual columns stay empty");
            }
        }
        let evaluator = Evaluator::new(&trained, &request)?;
        let reports: Vec<RunReport> = evaluate_all(&trained, &evaluator, &results)?
            .into_iter()
            .filter(|r| self.cfg.methods.iter().any(|m| m.name() == r.method))
            .collect();
        write_json(&l.report(seed), &reports)?;
        write_text(&l.seed_summary(seed), &summary_csv(&reports))?;
        Ok(())
    }

    pub fn report(&self) -> Result<()> {
        let l = &self.layout;
        let mut all = Vec::new();
        for &seed in &self.cfg.seeds {
            require(&l.report(seed), "eval")?;
            let reports: Vec<RunReport> = read_json(&l.report(seed))?;
            all.extend(reports);
        }
        write_text(&l.summary(), &summary_csv(&all))?;
        let keyed: Vec<(String, &RunReport)> = all.iter().map(|r| (r.method.clone(), r)).collect();
        write_text(&l.aggregate(), &aggregate_csv("method", &keyed))?;
        println!("{}", l.summary().display());
        Ok(())
    }

    pub fn run(&self) -> Result<()> {
        self.for_each_seed(|seed| {
            refuse_overwrite(&self.layout.w_n(seed), self.force)?;
            refuse_overwrite(&self.layout.report(seed), self.force)?;
            let out = run_cell(&self.cfg, seed)?;
            let l = &self.layout;
            write_bytes(&l.w_n(seed), &out.trained.w_n.to_bytes(&l.hash))?;
            write_bytes(&l.history(seed), &out.trained.history.to_bytes(&l.hash))?;
            write_json(&l.ledger(seed), &out.trained.ledger)?;
            for r in &out.results {
                self.store_result(seed, r)?;
            }
            write_json(&l.report(seed), &out.reports)?;
            write_text(&l.seed_summary(seed), &summary_csv(&out.reports))?;
            Ok(())
        })?;
        self.report()
    }

    pub fn sweep(&self, axis: Axis, values: &[f64]) -> Result<()> {
        let values = if values.is_empty() { axis.default_grid() } else { values.to_vec() };
        let dir = self.layout.sweep_dir(axis.name());
        refuse_overwrite(&dir.join("summary.csv"), self.force)?;
        let configs: Vec<ExperimentConfig> = values
            .iter()
            .map(|&v| {
                let mut c = ExperimentConfig { methods: vec![Method::Ease], ..self.cfg.clone() };
                axis.apply(&mut c, v)?;
                Ok(c)
            })
            .collect::<Result<_>>()?;
        let per_seed: Vec<Vec<(f64, RunReport)>> = self
            .cfg
            .seeds
            .par_iter()
            .map(|&seed| sweep_seed(axis, &values, &configs, seed).with_context(|| format!("seed {seed}")))
            .collect::<Result<_>>()?;
        let rows: Vec<(f64, RunReport)> = per_seed.into_iter().flatten().collect();

        let mut csv = format!("axis,value,{}\n", RunReport::csv_header());
        for (v, r) in &rows {
            csv.push_str(&format!("{},{v},{}\n", axis.name(), r.csv_row()));
        }
        write_text(&dir.join("summary.csv"), &csv)?;
        let keyed: Vec<(String, &RunReport)> = rows.iter().map(|(v, r)| (v.to_string(), r)).collect();
        write_text(&dir.join("aggregate.csv"), &aggregate_csv(axis.name(), &keyed))?;
        println!("{}", dir.display());
        Ok(())
    }
}

fn sweep_seed(axis: Axis, values: &[f64], configs: &[ExperimentConfig], seed: u64) -> Result<Vec<(f64, RunReport)>> {
    let mut rows = Vec::with_capacity(values.len());
    if axis.retrains() {
        for (&v, c) in values.iter().zip(configs) {
            let out = run_cell(c, seed)?;
            rows.extend(out.reports.into_iter().map(|r| (v, r)));
        }
        return Ok(rows);
    }
    let trained = Trained::new(Setup::new(&configs[0], seed)?)?;
    let request = trained.setup.request()?;
    let evaluator = Evaluator::new(&trained, &request)?;
    let retrain = trained.run_method(Method::Retrain, &request)?;
    let reference = evaluator.evaluate(&trained, &retrain, Some(&retrain.w))?;
    for (&v, c) in values.iter().zip(configs) {
        let ease = trained.run_method_with(Method::Ease, &request, &c.plan)?;
        let report = evaluator.evaluate(&trained, &ease, Some(&retrain.w))?.with_gaps(&reference);
        rows.push((v, report));
    }
    Ok(rows)
}

/// Mean and sample standard deviation of every numeric column per key, in
/// order of first appearance.
fn aggregate_csv(key_name: &str, rows: &[(String, &RunReport)]) -> String {
    let columns: Vec<String> = SUMMARY_COLUMNS[3..]
        .iter()
        .map(|c| c.to_string())
        .chain(GAP_COLUMNS.iter().map(|c| format!("{c}_gap")))
        .collect();
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&RunReport>> = BTreeMap::new();
    for (k, r) in rows {
        if !groups.contains_key(k.as_str()) {
            order.push(k);
        }
        groups.entry(k).or_default().push(r);
    }
    let mut out = format!("{key_name},n");
    for c in &columns {
        out.push_str(&format!(",{c}_mean,{c}_std"));
    }
    out.push('\n');
    for k in order {
        let g = &groups[k];
        out.push_str(&format!("{k},{}", g.len()));
        for c in &columns {
            let vals: Vec<f64> = g.iter().filter_map(|r| value_of(r, c)).collect();
            if vals.is_empty() {
                out.push_str(",,");
                continue;
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = if vals.len() > 1 {
                (vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            out.push_str(&format!(",{mean:.6},{std:.6}"));
        }
        out.push('\n');
    }
    out
}

fn value_of(r: &RunReport, column: &str) -> Option<f64> {
    match column.strip_suffix("_gap") {
        Some(base) => r.gaps.get(base).copied(),
        None => r.metric(column),
    }
}

pub fn verify(out_dir: &Path, seed: u64) -> Result<()> {
    let reports = fedexcise::oracles::verify_suite(seed)?;
    for r in &reports {
        println!("{}", r.line());
    }
    let path = out_dir.join("verify.json");
    write_json(&path, &reports)?;
    let failed = reports.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(CliError::VerifyFailed(failed).into());
    }
    Ok(())
}
