//! Gradient subspace decomposition: build forget/retain update matrices,
//! truncate them by energy, measure their principal angles and split the
//! forget subspace into unique and entangled parts, block by block.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{CommLedger, FederationConfig, GradientHistory, SyntheticDataset};
use crate::model::{infonce_grad, local_sgd, BlockKey, FrozenBackbone, Modality, Objective, ParamVector, SgdSettings};
use crate::numerics::{complete_orthonormal_basis, mat_t_vec, mat_vec, matmul, matmul_tn, thin_svd_named, DenseMatrix};
use crate::rng::derive_seed;

/// Relative cut-off below which singular values count as numerically zero.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Client,
    Class,
    Sample,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Client => "client",
            Scenario::Class => "class",
            Scenario::Sample => "sample",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnlearnRequest {
    Client(usize),
    Class(usize),
    Samples(Vec<usize>),
}

/// One client's share of a request.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientSplit {
    pub client: usize,
    pub forget: Vec<usize>,
    pub retain: Vec<usize>,
}

impl UnlearnRequest {
    pub fn scenario(&self) -> Scenario {
        match self {
            UnlearnRequest::Client(_) => Scenario::Client,
            UnlearnRequest::Class(_) => Scenario::Class,
            UnlearnRequest::Samples(_) => Scenario::Sample,
        }
    }

    /// Per-client forget/retain split. Every shard appears once, in order.
    pub fn splits(&self, shards: &[Vec<usize>], labels: &[usize]) -> Result<Vec<ClientSplit>> {
        let forget_ids: BTreeSet<usize> = match self {
            UnlearnRequest::Client(c) => {
                let shard = shards
                    .get(*c)
                    .ok_or_else(|| Error::usage(format!("no client {c} (K = {})", shards.len())))?;
                shard.iter().copied().collect()
            }
            UnlearnRequest::Class(k) => labels
                .iter()
                .enumerate()
                .filter(|(_, l)| *l == k)
                .map(|(i, _)| i)
                .collect(),
            UnlearnRequest::Samples(ids) => ids.iter().copied().collect(),
        };
        if forget_ids.is_empty() {
            return Err(Error::usage("unlearning request targets no data"));
        }
        let splits: Vec<ClientSplit> = shards
            .iter()
            .enumerate()
            .map(|(client, shard)| {
                let (forget, retain) = shard.iter().partition(|i| forget_ids.contains(i));
                ClientSplit { client, forget, retain }
            })
            .collect();
        let held: usize = splits.iter().map(|s| s.forget.len()).sum();
        if held == 0 {
            return Err(Error::usage("no client holds the requested data"));
        }
        if held != forget_ids.len() {
            return Err(Error::usage("request names samples outside every shard"));
        }
        Ok(splits)
    }

    /// All forgotten sample ids in ascending order.
    pub fn forget_ids(&self, shards: &[Vec<usize>], labels: &[usize]) -> Result<Vec<usize>> {
        let mut ids: Vec<usize> = self
            .splits(shards, labels)?
            .into_iter()
            .flat_map(|s| s.forget)
            .collect();
        ids.sort_unstable();
        Ok(ids)
    }
}

/// Everything the server-side routines need to know about the federation.
#[derive(Clone, Copy, Debug)]
pub struct FederationView<'a> {
    pub backbone: &'a FrozenBackbone,
    pub data: &'a SyntheticDataset,
    pub shards: &'a [Vec<usize>],
    pub labels: &'a [usize],
    pub config: &'a FederationConfig,
}

/// How request-specific columns are produced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnSource {
    /// One local epoch of SGD from the reference; the column is the delta.
    #[default]
    LocalEpoch,
    /// One full-batch alignment gradient at the reference.
    FullBatchGradient,
}

/// Where the retain columns come from in the client scenario.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetainSource {
    /// One fresh local epoch per retained client.
    #[default]
    LocalEpoch,
    /// The retained clients' stored training deltas.
    History,
}

/// Column-stacked updates per block.
pub type GradientMatrices = BTreeMap<BlockKey, DenseMatrix>;

/// Stack parameter-space columns into one matrix per block.
pub fn stack_columns(columns: &[ParamVector]) -> Result<GradientMatrices> {
    let first = columns
        .first()
        .ok_or_else(|| Error::usage("no columns to stack"))?;
    let mut out = BTreeMap::new();
    for key in first.keys() {
        let cols: Vec<Vec<f64>> = columns
            .iter()
            .map(|c| c.expect_block(key).map(<[f64]>::to_vec))
            .collect::<Result<_>>()?;
        out.insert(*key, DenseMatrix::from_columns(cols[0].len(), &cols)?);
    }
    Ok(out)
}

fn request_column(
    view: &FederationView<'_>,
    reference: &ParamVector,
    samples: &[usize],
    source: ColumnSource,
    seed: u64,
) -> Result<ParamVector> {
    match source {
        ColumnSource::LocalEpoch => {
            let steps = samples.len().div_ceil(view.config.batch_size.max(1));
            let settings = SgdSettings {
                lr: view.config.lr,
                steps,
                batch_size: view.config.batch_size,
                seed,
            };
            Ok(local_sgd(
                view.backbone,
                reference,
                &view.data.xv,
                &view.data.xt,
                samples,
                Objective::Alignment,
                settings,
            )?
            .delta)
        }
        ColumnSource::FullBatchGradient => {
            let g = infonce_grad(
                view.backbone,
                reference,
                &view.data.xv.select_columns(samples),
                &view.data.xt.select_columns(samples),
            )?;
            let mut step = g.grad;
            step.scale(-view.config.lr);
            Ok(step)
        }
    }
}

/// Forget-side columns: the target client's history (client scenario) or
/// one request-specific upload per holding client.
pub fn build_forget_matrix(
    view: &FederationView<'_>,
    history: &GradientHistory,
    request: &UnlearnRequest,
    reference: &ParamVector,
    source: ColumnSource,
    seed: u64,
    ledger: &mut CommLedger,
) -> Result<GradientMatrices> {
    let splits = request.splits(view.shards, view.labels)?;
    let columns: Vec<ParamVector> = match request {
        UnlearnRequest::Client(c) => {
            let h = history.client(*c);
            if h.is_empty() {
                return Err(Error::usage(format!("client {c} has no training history")));
            }
            h.iter().map(|(_, d)| d.clone()).collect()
        }
        _ => {
            let holders: Vec<&ClientSplit> = splits.iter().filter(|s| !s.forget.is_empty()).collect();
            let cols = holders
                .par_iter()
                .map(|s| {
                    request_column(
                        view,
                        reference,
                        &s.forget,
                        source,
                        derive_seed(seed, &format!("gsd.forget.client{}", s.client)),
                    )
                    .map_err(|e| e.context(format!("client {}", s.client)))
                })
                .collect::<Result<Vec<_>>>()?;
            let p = reference.dim();
            ledger.record("gsd_forget", 0, holders.len() * p, holders.len() * p);
            cols
        }
    };
    stack_columns(&columns)
}

/// Retain-side columns: one per client with retained data.
pub fn build_retain_matrix(
    view: &FederationView<'_>,
    history: &GradientHistory,
    request: &UnlearnRequest,
    reference: &ParamVector,
    source: ColumnSource,
    retain_source: RetainSource,
    seed: u64,
    ledger: &mut CommLedger,
) -> Result<GradientMatrices> {
    let splits = request.splits(view.shards, view.labels)?;
    let keep: Vec<&ClientSplit> = splits
        .iter()
        .filter(|s| !s.retain.is_empty() && !matches!(request, UnlearnRequest::Client(c) if *c == s.client))
        .collect();
    if keep.is_empty() {
        return Err(Error::usage("no client retains any data"));
    }
    let columns: Vec<ParamVector> = if retain_source == RetainSource::History
        && matches!(request, UnlearnRequest::Client(_))
    {
        keep.iter()
            .flat_map(|s| history.client(s.client).iter().map(|(_, d)| d.clone()))
            .collect()
    } else {
        let cols = keep
            .par_iter()
            .map(|s| {
                request_column(
                    view,
                    reference,
                    &s.retain,
                    source,
                    derive_seed(seed, &format!("gsd.retain.client{}", s.client)),
                )
                .map_err(|e| e.context(format!("client {}", s.client)))
            })
            .collect::<Result<Vec<_>>>()?;
        let p = reference.dim();
        ledger.record("gsd_retain", 0, keep.len() * p, keep.len() * p);
        cols
    };
    if columns.is_empty() {
        return Err(Error::usage("retained clients have no history"));
    }
    stack_columns(&columns)
}

/// Orthonormal basis of the leading singular directions of a matrix.
#[derive(Clone, Debug)]
pub struct SubspaceBasis {
    pub phi: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub total_energy: f64,
}

impl SubspaceBasis {
    pub fn dim(&self) -> usize {
        self.phi.cols()
    }

    pub fn retained_energy(&self) -> f64 {
        self.singular_values.iter().map(|s| s * s).sum()
    }
}

/// Smallest `p` whose leading singular values hold a `tau` share of the
/// squared Frobenius norm; falls back to the numerical rank.
pub fn energy_truncate(g: &DenseMatrix, tau: f64) -> Result<SubspaceBasis> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::usage(format!("energy threshold must be in (0, 1], got {tau}")));
    }
    let total = g.frobenius_sq();
    if total.sqrt() <= 1e-12 {
        return Err(Error::usage("no signal to decompose"));
    }
    let svd = thin_svd_named(g, "update matrix")?;
    let s1 = svd.singular_values[0];
    let rank = svd
        .singular_values
        .iter()
        .take_while(|&&s| s > RANK_TOL * s1)
        .count()
        .max(1);
    let mut cum = 0.0;
    let mut p = rank;
    for (j, s) in svd.singular_values[..rank].iter().enumerate() {
        cum += s * s;
        if cum / total >= tau {
            p = j + 1;
            break;
        }
    }
    let idx: Vec<usize> = (0..p).collect();
    Ok(SubspaceBasis {
        phi: svd.u.select_columns(&idx),
        singular_values: svd.singular_values[..p].to_vec(),
        total_energy: total,
    })
}

/// Principal-angle decomposition of a forget basis against a retain basis.
#[derive(Clone, Debug)]
pub struct EntanglementSpectrum {
    /// `d × p`, orthonormal, ordered by decreasing entanglement.
    pub canonical_dirs: DenseMatrix,
    /// Cosines of the principal angles, zero-padded to length `p`.
    pub kappa: Vec<f64>,
}

pub fn entanglement_spectrum(phi_f: &SubspaceBasis, phi_r: &SubspaceBasis) -> Result<EntanglementSpectrum> {
    let (f, r) = (&phi_f.phi, &phi_r.phi);
    if f.rows() != r.rows() {
        return Err(Error::usage(format!(
            "bases live in different spaces ({} vs {} rows)",
            f.rows(),
            r.rows()
        )));
    }
    let p = f.cols();
    let m = matmul_tn(f, r)?;
    let svd = thin_svd_named(&m, "principal-angle matrix")?;
    let u_full = complete_orthonormal_basis(&svd.u, p);
    let mut kappa = vec![0.0; p];
    for (k, s) in kappa.iter_mut().zip(&svd.singular_values) {
        *k = s.clamp(0.0, 1.0);
    }
    Ok(EntanglementSpectrum {
        canonical_dirs: matmul(f, &u_full)?,
        kappa,
    })
}

/// Unique (`κ ≤ δ`) and entangled (`κ > δ`) bases of one block.
#[derive(Clone, Debug)]
pub struct BlockBases {
    pub b_u: DenseMatrix,
    pub b_e: DenseMatrix,
    pub kappa_u: Vec<f64>,
    pub kappa_e: Vec<f64>,
}

impl BlockBases {
    pub fn empty(d: usize) -> Self {
        BlockBases {
            b_u: DenseMatrix::zeros(d, 0),
            b_e: DenseMatrix::zeros(d, 0),
            kappa_u: Vec::new(),
            kappa_e: Vec::new(),
        }
    }

    /// `B_u (B_uᵀ x)`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.b_u.rows() {
            return Err(Error::usage(format!(
                "vector of length {} against a basis in R^{}",
                x.len(),
                self.b_u.rows()
            )));
        }
        if self.b_u.cols() == 0 {
            return Ok(vec![0.0; x.len()]);
        }
        mat_vec(&self.b_u, &mat_t_vec(&self.b_u, x)?)
    }
}

pub fn partition_spectrum(spec: &EntanglementSpectrum, delta: f64) -> BlockBases {
    let (mut u, mut e) = (Vec::new(), Vec::new());
    for (i, &k) in spec.kappa.iter().enumerate() {
        if k <= delta {
            u.push(i);
        } else {
            e.push(i);
        }
    }
    BlockBases {
        b_u: spec.canonical_dirs.select_columns(&u),
        b_e: spec.canonical_dirs.select_columns(&e),
        kappa_u: u.iter().map(|&i| spec.kappa[i]).collect(),
        kappa_e: e.iter().map(|&i| spec.kappa[i]).collect(),
    }
}

/// Per-block unique/entangled bases. Blocks without an entry are left alone.
#[derive(Clone, Debug, Default)]
pub struct ExcisionBases {
    pub blocks: BTreeMap<BlockKey, BlockBases>,
}

impl ExcisionBases {
    /// `Π_u x` blockwise.
    pub fn apply_projector(&self, x: &ParamVector) -> Result<ParamVector> {
        let mut out = x.zeros_like();
        for (key, bases) in &self.blocks {
            let y = bases.project(x.expect_block(key)?).map_err(|e| e.context(key))?;
            out.block_mut(key).expect("checked above").copy_from_slice(&y);
        }
        Ok(out)
    }

    /// `B_u` per block, for the lock.
    pub fn unique_bases(&self) -> BTreeMap<BlockKey, DenseMatrix> {
        self.blocks
            .iter()
            .filter(|(_, b)| b.b_u.cols() > 0)
            .map(|(k, b)| (*k, b.b_u.clone()))
            .collect()
    }

    pub fn unique_dim(&self) -> usize {
        self.blocks.values().map(|b| b.b_u.cols()).sum()
    }

    /// Parameters needed to ship every `B_u`.
    pub fn payload_params(&self) -> usize {
        self.blocks.values().map(|b| b.b_u.rows() * b.b_u.cols()).sum()
    }

    /// Keep only the blocks of one modality.
    pub fn restricted_to(&self, m: Modality) -> ExcisionBases {
        ExcisionBases {
            blocks: self
                .blocks
                .iter()
                .filter(|(k, _)| k.modality == m)
                .map(|(k, b)| (*k, b.clone()))
                .collect(),
        }
    }
}

/// Everything computed for one block before thresholding.
#[derive(Clone, Debug)]
pub struct BlockSpectrum {
    pub forget: SubspaceBasis,
    pub retain: SubspaceBasis,
    pub spectrum: EntanglementSpectrum,
}

#[derive(Clone, Debug)]
pub struct Decomposition {
    pub delta: f64,
    pub tau: f64,
    pub blocks: BTreeMap<BlockKey, BlockSpectrum>,
    pub bases: ExcisionBases,
}

impl Decomposition {
    /// Re-threshold the same spectra at another `δ`.
    pub fn repartition(&self, delta: f64) -> ExcisionBases {
        ExcisionBases {
            blocks: self
                .blocks
                .iter()
                .map(|(k, s)| (*k, partition_spectrum(&s.spectrum, delta)))
                .collect(),
        }
    }

    /// Replace each block's unique basis with the whole forget basis.
    pub fn whole_forget_bases(&self) -> ExcisionBases {
        ExcisionBases {
            blocks: self
                .blocks
                .iter()
                .map(|(k, s)| {
                    let d = s.forget.phi.rows();
                    (
                        *k,
                        BlockBases {
                            b_u: s.forget.phi.clone(),
                            kappa_u: s.spectrum.kappa.clone(),
                            ..BlockBases::empty(d)
                        },
                    )
                })
                .collect(),
        }
    }

    /// `block, modality, p, q, kappa_1..kappa_p` rows.
    pub fn spectrum_csv(&self) -> String {
        let width = self.blocks.values().map(|s| s.spectrum.kappa.len()).max().unwrap_or(0);
        let mut out = String::from("block,modality,p,q");
        for i in 1..=width {
            out.push_str(&format!(",kappa_{i}"));
        }
        out.push('\n');
        for (k, s) in &self.blocks {
            out.push_str(&format!(
                "{k},{},{},{}",
                k.modality.tag(),
                s.forget.dim(),
                s.retain.dim()
            ));
            for i in 0..width {
                match s.spectrum.kappa.get(i) {
                    Some(v) => out.push_str(&format!(",{v:.12e}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Truncate, measure and split every block present in both inputs.
pub fn decompose_matrices(
    g_f: &GradientMatrices,
    g_r: &GradientMatrices,
    delta: f64,
    tau: f64,
) -> Result<Decomposition> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::usage(format!("delta must be in [0, 1], got {delta}")));
    }
    let keys: Vec<BlockKey> = g_f.keys().filter(|k| g_r.contains_key(k)).copied().collect();
    if keys.is_empty() {
        return Err(Error::usage("forget and retain matrices share no block"));
    }
    let computed: Vec<(BlockKey, BlockSpectrum)> = keys
        .par_iter()
        .map(|k| {
            let run = || -> Result<BlockSpectrum> {
                let forget = energy_truncate(&g_f[k], tau)?;
                let retain = energy_truncate(&g_r[k], tau)?;
                let spectrum = entanglement_spectrum(&forget, &retain)?;
                Ok(BlockSpectrum { forget, retain, spectrum })
            };
            run().map(|s| (*k, s)).map_err(|e| e.context(format!("block {k}")))
        })
        .collect::<Result<_>>()?;
    let blocks: BTreeMap<BlockKey, BlockSpectrum> = computed.into_iter().collect();
    let mut d = Decomposition {
        delta,
        tau,
        blocks,
        bases: ExcisionBases::default(),
    };
    d.bases = d.repartition(delta);
    Ok(d)
}

/// Settings for building the request-specific matrices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GsdSettings {
    pub delta: f64,
    pub tau: f64,
    pub column_source: ColumnSource,
    pub retain_source: RetainSource,
}

impl Default for GsdSettings {
    fn default() -> Self {
        GsdSettings {
            delta: 0.5,
            tau: 0.9,
            column_source: ColumnSource::LocalEpoch,
            retain_source: RetainSource::LocalEpoch,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DecomposeOutput {
    pub decomposition: Decomposition,
    pub g_f: GradientMatrices,
    pub g_r: GradientMatrices,
    pub ledger: CommLedger,
}

/// Build both matrices around `reference` and decompose every block.
pub fn decompose(
    view: &FederationView<'_>,
    history: &GradientHistory,
    request: &UnlearnRequest,
    reference: &ParamVector,
    settings: &GsdSettings,
    seed: u64,
) -> Result<DecomposeOutput> {
    let mut ledger = CommLedger::default();
    let g_f = build_forget_matrix(view, history, request, reference, settings.column_source, seed, &mut ledger)?;
    let g_r = build_retain_matrix(
        view,
        history,
        request,
        reference,
        settings.column_source,
        settings.retain_source,
        seed,
        &mut ledger,
    )?;
    let decomposition = decompose_matrices(&g_f, &g_r, settings.delta, settings.tau)?;
    Ok(DecomposeOutput {
        decomposition,
        g_f,
        g_r,
        ledger,
    })
}
