//! Retrieval recall, alignment residual, membership inference, tradeoff
//! curves and per-cell reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gsd::{Decomposition, GradientMatrices};
use crate::model::{encode, FrozenBackbone, Modality, ParamVector};
use crate::numerics::{dot, mat_t_vec, matmul_tn, DenseMatrix};

/// Stability constant in the alignment residual.
pub const RHO_EPS: f64 = 1e-8;
/// Floor for shadow loss variances.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Unit embeddings of `(xv, xt)` under `w`, one column per pair.
pub fn embed_pairs(
    bb: &FrozenBackbone,
    w: &ParamVector,
    xv: &DenseMatrix,
    xt: &DenseMatrix,
) -> Result<(DenseMatrix, DenseMatrix)> {
    Ok((encode(bb, w, Modality::Visual, xv)?, encode(bb, w, Modality::Text, xt)?))
}

fn hit(scores: &[f64], partner: usize, k: usize) -> bool {
    let s = scores[partner];
    let rank = scores
        .iter()
        .enumerate()
        .filter(|&(j, &x)| x > s || (x == s && j < partner))
        .count();
    rank < k
}

/// Bidirectional Recall@k in percent for the query pairs `queries`,
/// ranked against every pair of the pool (`zv`, `zt`).
pub fn recall_at_k_queries(zv: &DenseMatrix, zt: &DenseMatrix, queries: &[usize], k: usize) -> Result<f64> {
    if zv.shape() != zt.shape() {
        return Err(Error::usage(format!("embedding shapes differ: {:?} vs {:?}", zv.shape(), zt.shape())));
    }
    if queries.is_empty() || k == 0 {
        return Err(Error::usage("recall needs at least one query and k >= 1"));
    }
    let n = zv.cols();
    if let Some(&q) = queries.iter().find(|&&q| q >= n) {
        return Err(Error::usage(format!("query {q} outside a pool of {n}")));
    }
    let s = matmul_tn(zv, zt)?;
    let mut hits = 0usize;
    for &q in queries {
        let row: Vec<f64> = (0..n).map(|j| s.get(q, j)).collect();
        hits += hit(&row, q, k) as usize;
        hits += hit(s.col(q), q, k) as usize;
    }
    Ok(100.0 * hits as f64 / (2 * queries.len()) as f64)
}

/// Bidirectional Recall@k in percent with every pair as a query.
pub fn recall_at_k(zv: &DenseMatrix, zt: &DenseMatrix, k: usize) -> Result<f64> {
    let all: Vec<usize> = (0..zv.cols()).collect();
    recall_at_k_queries(zv, zt, &all, k)
}

/// `z_vᵀ z_t` per pair.
pub fn pair_similarities(zv: &DenseMatrix, zt: &DenseMatrix) -> Vec<f64> {
    (0..zv.cols()).map(|j| dot(zv.col(j), zt.col(j))).collect()
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Per-pair `|s* − s̃| / (|s_n − s̃| + ε)`.
pub fn residuals(s_star: &[f64], s_retrain: &[f64], s_trained: &[f64], eps: f64) -> Result<Vec<f64>> {
    if s_star.len() != s_retrain.len() || s_star.len() != s_trained.len() {
        return Err(Error::usage("similarity vectors have different lengths"));
    }
    Ok(s_star
        .iter()
        .zip(s_retrain)
        .zip(s_trained)
        .map(|((a, r), n)| (a - r).abs() / ((n - r).abs() + eps))
        .collect())
}

/// Median alignment residual over the forget pairs.
pub fn alignment_residual(s_star: &[f64], s_retrain: &[f64], s_trained: &[f64]) -> Result<f64> {
    let r = residuals(s_star, s_retrain, s_trained, RHO_EPS)?;
    median(&r).ok_or_else(|| Error::usage("alignment residual over an empty forget set"))
}

/// Per-pair contrastive loss of each column pair against a fixed set of
/// negatives, averaged over both directions.
pub fn pair_losses(
    zv: &DenseMatrix,
    zt: &DenseMatrix,
    neg_v: &DenseMatrix,
    neg_t: &DenseMatrix,
    gamma: f64,
) -> Result<Vec<f64>> {
    let side = |q: &DenseMatrix, partner: &DenseMatrix, negs: &DenseMatrix| -> Result<Vec<f64>> {
        let s = matmul_tn(negs, q)?;
        Ok((0..q.cols())
            .map(|j| {
                let pos = dot(q.col(j), partner.col(j)) / gamma;
                let logits: Vec<f64> = std::iter::once(pos).chain(s.col(j).iter().map(|x| x / gamma)).collect();
                let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                m + logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln() - pos
            })
            .collect())
    };
    let lv = side(zv, zt, neg_t)?;
    let lt = side(zt, zv, neg_v)?;
    Ok(lv.iter().zip(&lt).map(|(a, b)| 0.5 * (a + b)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiaConfig {
    pub n_shadows: usize,
    pub fpr_target: f64,
    /// Size of the held-out nonmember pool.
    pub nonmember_pool: usize,
    /// Fixed negatives for the per-pair loss feature.
    pub background: usize,
}

impl Default for MiaConfig {
    fn default() -> Self {
        MiaConfig { n_shadows: 8, fpr_target: 0.01, nonmember_pool: 300, background: 64 }
    }
}

impl MiaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_shadows < 2 {
            return Err(Error::usage("the likelihood-ratio attack needs at least 2 shadows"));
        }
        if !(self.fpr_target > 0.0 && self.fpr_target < 1.0) {
            return Err(Error::usage("fpr_target must be in (0, 1)"));
        }
        if self.nonmember_pool < 50 {
            return Err(Error::usage("the nonmember pool needs at least 50 samples"));
        }
        Ok(())
    }
}

/// Losses of a population under every shadow model, with membership.
#[derive(Clone, Debug)]
pub struct ShadowPool {
    /// `losses[s][i]`: loss of population item `i` under shadow `s`.
    pub losses: Vec<Vec<f64>>,
    /// `members[s][i]`: whether item `i` trained shadow `s`.
    pub members: Vec<Vec<bool>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Gaussian {
    mean: f64,
    var: f64,
}

impl Gaussian {
    fn fit(xs: &[f64]) -> Option<Gaussian> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Gaussian { mean, var })
    }

    fn log_pdf(&self, x: f64) -> f64 {
        -0.5 * ((x - self.mean).powi(2) / self.var + self.var.ln())
    }
}

impl ShadowPool {
    pub fn validate(&self) -> Result<usize> {
        let s = self.losses.len();
        if s == 0 || self.members.len() != s {
            return Err(Error::usage("shadow pool is empty or inconsistent"));
        }
        let n = self.losses[0].len();
        if self.losses.iter().any(|l| l.len() != n) || self.members.iter().any(|m| m.len() != n) {
            return Err(Error::usage("shadow pool rows differ in length"));
        }
        Ok(n)
    }

    fn split(&self, i: usize) -> (Vec<f64>, Vec<f64>) {
        let (mut inn, mut out) = (Vec::new(), Vec::new());
        for (l, m) in self.losses.iter().zip(&self.members) {
            if m[i] {
                inn.push(l[i]);
            } else {
                out.push(l[i]);
            }
        }
        (inn, out)
    }

    /// All member and nonmember shadow losses, pooled.
    pub fn pooled(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.losses.first().map_or(0, Vec::len);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for i in 0..n {
            let (x, y) = self.split(i);
            a.extend(x);
            b.extend(y);
        }
        (a, b)
    }
}

/// Threshold on the loss that best separates shadow members (below) from
/// nonmembers (above).
pub fn fit_loss_threshold(member: &[f64], nonmember: &[f64]) -> Result<f64> {
    if member.is_empty() || nonmember.is_empty() {
        return Err(Error::usage("threshold fitting needs members and nonmembers"));
    }
    let mut all: Vec<(f64, bool)> = member.iter().map(|&x| (x, true)).chain(nonmember.iter().map(|&x| (x, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total_non = nonmember.len() as f64;
    let mut best = (f64::NEG_INFINITY, all[0].0 - 1.0);
    let (mut tp, mut fp) = (0.0, 0.0);
    let n = all.len() as f64;
    let acc = |tp: f64, fp: f64| (tp + (total_non - fp)) / n;
    best.0 = acc(0.0, 0.0);
    for i in 0..all.len() {
        if all[i].1 {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        if i + 1 < all.len() && all[i + 1].0 == all[i].0 {
            continue;
        }
        let a = acc(tp, fp);
        if a > best.0 {
            let next = all.get(i + 1).map_or(all[i].0 + 1.0, |x| x.0);
            best = (a, 0.5 * (all[i].0 + next));
        }
    }
    Ok(best.1)
}

/// Percentage of `losses` at or below `threshold` (labelled members).
pub fn loss_threshold_tpr(losses: &[f64], threshold: f64) -> f64 {
    if losses.is_empty() {
        return 0.0;
    }
    100.0 * losses.iter().filter(|&&l| l <= threshold).count() as f64 / losses.len() as f64
}

/// Per-item likelihood-ratio scores; higher means more member-like.
pub fn lira_scores(pool: &ShadowPool, target_losses: &[f64], items: &[usize]) -> Result<Vec<f64>> {
    let n = pool.validate()?;
    if target_losses.len() != items.len() {
        return Err(Error::usage("one target loss per item is required"));
    }
    let (pin, pout) = pool.pooled();
    let global_in = Gaussian::fit(&pin).ok_or_else(|| Error::usage("no shadow has any member"))?;
    let global_out = Gaussian::fit(&pout).ok_or_else(|| Error::usage("no shadow has any nonmember"))?;
    let mut floored = 0usize;
    let mut fit = |xs: &[f64], global: Gaussian| {
        let mut g = match xs.len() {
            0 => global,
            1 => Gaussian { mean: xs[0], var: global.var },
            _ => Gaussian::fit(xs).expect("non-empty"),
        };
        if g.var < VARIANCE_FLOOR {
            g.var = VARIANCE_FLOOR;
            floored += 1;
        }
        g
    };
    let mut out = Vec::with_capacity(items.len());
    for (&i, &l) in items.iter().zip(target_losses) {
        if i >= n {
            return Err(Error::usage(format!("item {i} outside a shadow population of {n}")));
        }
        let (a, b) = pool.split(i);
        let gin = fit(&a, global_in);
        let gout = fit(&b, global_out);
        out.push(gin.log_pdf(l) - gout.log_pdf(l));
    }
    if floored > 0 {
        log::info!("floored {floored} degenerate shadow variances at {VARIANCE_FLOOR:e}");
    }
    Ok(out)
}

/// Score threshold whose false-positive rate on `calibration` is at most `fpr`.
pub fn calibrate_threshold(calibration: &[f64], fpr: f64) -> Result<f64> {
    if calibration.is_empty() {
        return Err(Error::usage("calibration set is empty"));
    }
    let mut s = calibration.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let allowed = (fpr * s.len() as f64).floor() as usize;
    Ok(s[allowed.min(s.len() - 1)])
}

/// Percentage of scores strictly above `threshold`.
pub fn rate_above(scores: &[f64], threshold: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    100.0 * scores.iter().filter(|&&s| s > threshold).count() as f64 / scores.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiaResult {
    /// Loss-threshold attack: percent of forget pairs labelled members.
    pub tpr: f64,
    /// Likelihood-ratio TPR at the calibrated FPR.
    pub lira_tpr: f64,
    /// FPR measured on the calibration nonmembers.
    pub lira_fpr: f64,
}

/// Both attacks against one target. `forget_items` and `calibration_items`
/// index the shadow population; the losses are the target model's.
pub fn mia_attack(
    pool: &ShadowPool,
    forget_items: &[usize],
    forget_losses: &[f64],
    calibration_items: &[usize],
    calibration_losses: &[f64],
    fpr_target: f64,
) -> Result<MiaResult> {
    let (pin, pout) = pool.pooled();
    let thr = fit_loss_threshold(&pin, &pout)?;
    let cal = lira_scores(pool, calibration_losses, calibration_items)?;
    let lthr = calibrate_threshold(&cal, fpr_target)?;
    let fs = lira_scores(pool, forget_losses, forget_items)?;
    Ok(MiaResult {
        tpr: loss_threshold_tpr(forget_losses, thr),
        lira_tpr: rate_above(&fs, lthr),
        lira_fpr: rate_above(&cal, lthr),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub delta: f64,
    pub eta_f: f64,
    pub eta_r: f64,
}

/// Forget energy removed and worst retain collateral at each `δ`, pooled
/// over the blocks of `decomposition`.
pub fn tradeoff_curves(decomposition: &Decomposition, g_f: &GradientMatrices, grid: &[f64]) -> Result<Vec<TradeoffPoint>> {
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::usage("delta grid must be sorted ascending"));
    }
    let mut out = Vec::with_capacity(grid.len());
    for &delta in grid {
        let bases = decomposition.repartition(delta);
        let (mut removed, mut total, mut eta_r) = (0.0, 0.0, 0.0f64);
        for (key, b) in &bases.blocks {
            let g = g_f.get(key).ok_or_else(|| Error::usage(format!("no forget matrix for {key}")))?;
            total += g.frobenius_sq();
            if b.b_u.cols() > 0 {
                removed += matmul_tn(&b.b_u, g)?.frobenius_sq();
            }
            eta_r = b.kappa_u.iter().fold(eta_r, |m, k| m.max(k * k));
        }
        out.push(TradeoffPoint { delta, eta_f: if total > 0.0 { removed / total } else { 0.0 }, eta_r });
    }
    Ok(out)
}

/// Squared norm of the projection of `x` onto the span of the orthonormal `b`.
pub fn projected_energy(b: &DenseMatrix, x: &[f64]) -> Result<f64> {
    if b.cols() == 0 {
        return Ok(0.0);
    }
    let c = mat_t_vec(b, x)?;
    Ok(dot(&c, &c))
}

/// Recall triple at k = 1, 5, 10.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallTriple {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
}

impl RecallTriple {
    pub fn measure(zv: &DenseMatrix, zt: &DenseMatrix, queries: &[usize]) -> Result<Self> {
        Ok(RecallTriple {
            r1: recall_at_k_queries(zv, zt, queries, 1)?,
            r5: recall_at_k_queries(zv, zt, queries, 5)?,
            r10: recall_at_k_queries(zv, zt, queries, 10)?,
        })
    }
}

/// One (scenario, method, seed) cell. Missing metrics stay `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub method: String,
    pub seed: u64,
    pub f_r1: Option<f64>,
    pub f_r5: Option<f64>,
    pub f_r10: Option<f64>,
    pub r_r1: Option<f64>,
    pub r_r5: Option<f64>,
    pub r_r10: Option<f64>,
    pub rho: Option<f64>,
    pub mia: Option<f64>,
    pub lira_tpr: Option<f64>,
    pub comm_mb: Option<f64>,
    pub drift_final: Option<f64>,
    /// Absolute gaps to the retrain reference, by column name.
    pub gaps: BTreeMap<String, f64>,
}

/// Columns of `summary.csv`.
pub const SUMMARY_COLUMNS: [&str; 14] = [
    "scenario", "method", "seed", "f_r1", "f_r5", "f_r10", "r_r1", "r_r5", "r_r10", "rho", "mia", "lira_tpr", "comm_mb",
    "drift_final",
];

/// Metrics that get a `_gap` column.
pub const GAP_COLUMNS: [&str; 8] = ["f_r1", "f_r5", "f_r10", "r_r1", "r_r5", "r_r10", "mia", "lira_tpr"];

impl RunReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "f_r1" => self.f_r1,
            "f_r5" => self.f_r5,
            "f_r10" => self.f_r10,
            "r_r1" => self.r_r1,
            "r_r5" => self.r_r5,
            "r_r10" => self.r_r10,
            "rho" => self.rho,
            "mia" => self.mia,
            "lira_tpr" => self.lira_tpr,
            "comm_mb" => self.comm_mb,
            "drift_final" => self.drift_final,
            _ => None,
        }
    }

    /// Fill the gap columns against `retrain`; metrics absent on either side stay absent.
    pub fn with_gaps(mut self, retrain: &RunReport) -> Self {
        self.gaps.clear();
        for name in GAP_COLUMNS {
            if let (Some(a), Some(b)) = (self.metric(name), retrain.metric(name)) {
                self.gaps.insert(name.to_string(), (a - b).abs());
            }
        }
        self
    }

    pub fn csv_header() -> String {
        let mut cols: Vec<String> = SUMMARY_COLUMNS.iter().map(|s| s.to_string()).collect();
        cols.extend(GAP_COLUMNS.iter().map(|c| format!("{c}_gap")));
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        let mut cells = vec![self.scenario.clone(), self.method.clone(), self.seed.to_string()];
        cells.extend(SUMMARY_COLUMNS[3..].iter().map(|c| fmt(self.metric(c))));
        cells.extend(GAP_COLUMNS.iter().map(|c| fmt(self.gaps.get(*c).copied())));
        cells.join(",")
    }
}

/// `summary.csv` body for a list of reports.
pub fn summary_csv(reports: &[RunReport]) -> String {
    let mut out = RunReport::csv_header();
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}
