use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "v")]
    Visual,
    #[serde(rename = "t")]
    Text,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Visual, Modality::Text];

    pub fn tag(self) -> &'static str {
        match self {
            Modality::Visual => "v",
            Modality::Text => "t",
        }
    }

    pub fn other(self) -> Modality {
        match self {
            Modality::Visual => Modality::Text,
            Modality::Text => Modality::Visual,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BlockKind {
    Adapter(usize),
    Projector,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockKey {
    pub modality: Modality,
    pub kind: BlockKind,
}

impl BlockKey {
    pub fn adapter(modality: Modality, index: usize) -> Self {
        BlockKey {
            modality,
            kind: BlockKind::Adapter(index),
        }
    }

    pub fn projector(modality: Modality) -> Self {
        BlockKey {
            modality,
            kind: BlockKind::Projector,
        }
    }
}

impl fmt::Display for BlockKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            BlockKind::Adapter(i) => write!(f, "{}.adapter{i}", self.modality.tag()),
            BlockKind::Projector => write!(f, "{}.projector", self.modality.tag()),
        }
    }
}

/// Trainable state as named flat blocks in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    blocks: BTreeMap<BlockKey, Vec<f64>>,
}

const MAGIC: &[u8; 4] = b"FXPV";
const VERSION: u32 = 1;

impl ParamVector {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        ParamVector {
            blocks: cfg
                .layout()
                .into_iter()
                .map(|(k, n)| (k, vec![0.0; n]))
                .collect(),
        }
    }

    pub fn from_blocks(blocks: BTreeMap<BlockKey, Vec<f64>>) -> Self {
        ParamVector { blocks }
    }

    pub fn zeros_like(&self) -> Self {
        ParamVector {
            blocks: self
                .blocks
                .iter()
                .map(|(k, v)| (*k, vec![0.0; v.len()]))
                .collect(),
        }
    }

    pub fn block(&self, key: &BlockKey) -> Option<&[f64]> {
        self.blocks.get(key).map(Vec::as_slice)
    }

    pub fn block_mut(&mut self, key: &BlockKey) -> Option<&mut [f64]> {
        self.blocks.get_mut(key).map(Vec::as_mut_slice)
    }

    pub(crate) fn expect_block(&self, key: &BlockKey) -> Result<&[f64]> {
        self.block(key)
            .ok_or_else(|| Error::usage(format!("parameter vector has no block {key}")))
    }

    pub fn keys(&self) -> impl Iterator<Item = &BlockKey> {
        self.blocks.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&BlockKey, &Vec<f64>)> {
        self.blocks.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&BlockKey, &mut Vec<f64>)> {
        self.blocks.iter_mut()
    }

    pub fn dim(&self) -> usize {
        self.blocks.values().map(Vec::len).sum()
    }

    /// Concatenate blocks in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for v in self.blocks.values() {
            out.extend_from_slice(v);
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten) for the layout of `cfg`.
    pub fn from_flat(cfg: &ModelConfig, flat: &[f64]) -> Result<Self> {
        let mut pv = Self::zeros(cfg);
        if flat.len() != pv.dim() {
            return Err(Error::usage(format!(
                "flat vector has length {}, layout needs {}",
                flat.len(),
                pv.dim()
            )));
        }
        let mut o = 0;
        for v in pv.blocks.values_mut() {
            let n = v.len();
            v.copy_from_slice(&flat[o..o + n]);
            o += n;
        }
        Ok(pv)
    }

    pub fn layout_matches(&self, other: &ParamVector) -> bool {
        self.blocks.len() == other.blocks.len()
            && self
                .blocks
                .iter()
                .zip(&other.blocks)
                .all(|((ka, va), (kb, vb))| ka == kb && va.len() == vb.len())
    }

    pub fn check_layout(&self, other: &ParamVector) -> Result<()> {
        if self.layout_matches(other) {
            Ok(())
        } else {
            Err(Error::usage("parameter vectors have incompatible layouts"))
        }
    }

    fn zip_with(&self, other: &ParamVector, f: impl Fn(f64, f64) -> f64) -> Result<ParamVector> {
        self.check_layout(other)?;
        Ok(ParamVector {
            blocks: self
                .blocks
                .iter()
                .zip(other.blocks.values())
                .map(|((k, a), b)| (*k, a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()))
                .collect(),
        })
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_with(other, |a, b| a + b)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.blocks.values_mut().zip(other.blocks.values()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += alpha * y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.blocks.values_mut() {
            v.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_layout(other)?;
        Ok(self
            .blocks
            .values()
            .zip(other.blocks.values())
            .map(|(a, b)| crate::numerics::dot(a, b))
            .sum())
    }

    pub fn norm(&self) -> f64 {
        self.blocks
            .values()
            .map(|v| crate::numerics::dot(v, v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> Result<f64> {
        Ok(self
            .sub(other)?
            .blocks
            .values()
            .flat_map(|v| v.iter())
            .fold(0.0, |m, x| m.max(x.abs())))
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.values().flatten().all(|x| x.is_finite())
    }

    /// Zero every block that does not belong to `m`.
    pub fn restricted_to(&self, m: Modality) -> ParamVector {
        let mut out = self.clone();
        for (k, v) in out.blocks.iter_mut() {
            if k.modality != m {
                v.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        out
    }

    /// Uniform mean of layout-compatible vectors, summed in slice order.
    pub fn mean(items: &[ParamVector]) -> Result<ParamVector> {
        let weights = vec![1.0; items.len()];
        Self::weighted_mean(items, &weights)
    }

    pub fn weighted_mean(items: &[ParamVector], weights: &[f64]) -> Result<ParamVector> {
        let first = items
            .first()
            .ok_or_else(|| Error::usage("mean of zero parameter vectors"))?;
        if weights.len() != items.len() {
            return Err(Error::usage("weights and items differ in length"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::usage("weights must sum to a positive value"));
        }
        let mut acc = first.zeros_like();
        for (p, &w) in items.iter().zip(weights) {
            acc.axpy(w, p)?;
        }
        acc.scale(1.0 / total);
        Ok(acc)
    }

    /// Versioned little-endian blob tagged with the model config hash.
    pub fn to_bytes(&self, config_hash: &str) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + config_hash.len() + self.dim() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        write_str(&mut out, config_hash);
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for (k, v) in &self.blocks {
            out.push(match k.modality {
                Modality::Visual => 0,
                Modality::Text => 1,
            });
            let (kind, idx) = match k.kind {
                BlockKind::Adapter(i) => (0u8, i as u32),
                BlockKind::Projector => (1u8, 0),
            };
            out.push(kind);
            out.extend_from_slice(&idx.to_le_bytes());
            out.extend_from_slice(&(v.len() as u64).to_le_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    /// Decode a blob, refusing one written for a different config.
    pub fn from_bytes(bytes: &[u8], expected_hash: &str) -> Result<ParamVector> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a parameter blob".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported blob version {version}")));
        }
        let hash = r.string()?;
        if hash != expected_hash {
            return Err(Error::usage(format!(
                "parameter blob belongs to config {hash}, expected {expected_hash}"
            )));
        }
        let n = r.u32()? as usize;
        let mut blocks = BTreeMap::new();
        for _ in 0..n {
            let modality = match r.take(1)?[0] {
                0 => Modality::Visual,
                1 => Modality::Text,
                b => return Err(Error::Format(format!("bad modality tag {b}"))),
            };
            let kind_tag = r.take(1)?[0];
            let idx = r.u32()? as usize;
            let kind = match kind_tag {
                0 => BlockKind::Adapter(idx),
                1 => BlockKind::Projector,
                b => return Err(Error::Format(format!("bad block tag {b}"))),
            };
            let len = r.u64()? as usize;
            let mut v = Vec::with_capacity(len);
            for _ in 0..len {
                v.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
            }
            blocks.insert(BlockKey { modality, kind }, v);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes in parameter blob".into()));
        }
        Ok(ParamVector { blocks })
    }
}

pub(crate) fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("truncated blob".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use proptest::prelude::*;

    #[test]
    fn blob_round_trip_and_hash_guard() {
        let cfg = ModelConfig::default();
        let p = init_params(&cfg, 1).unwrap();
        let blob = p.to_bytes("abc");
        assert_eq!(ParamVector::from_bytes(&blob, "abc").unwrap(), p);
        assert!(matches!(
            ParamVector::from_bytes(&blob, "def"),
            Err(Error::Usage(_))
        ));
        assert!(ParamVector::from_bytes(&blob[..blob.len() - 1], "abc").is_err());
    }

    #[test]
    fn incompatible_layouts_refuse_to_combine() {
        let a = ParamVector::zeros(&ModelConfig::default());
        let cfg = ModelConfig {
            n_adapter_blocks: 2,
            ..ModelConfig::default()
        };
        let b = ParamVector::zeros(&cfg);
        assert!(a.sub(&b).is_err());
    }

    #[test]
    fn block_keys_order_and_display() {
        let cfg = ModelConfig {
            n_adapter_blocks: 2,
            ..ModelConfig::default()
        };
        let names: Vec<String> = ParamVector::zeros(&cfg).keys().map(|k| k.to_string()).collect();
        assert_eq!(
            names,
            ["v.adapter0", "v.adapter1", "v.projector", "t.adapter0", "t.adapter1", "t.projector"]
        );
    }

    proptest! {
        #[test]
        fn flatten_is_a_bijection(seed_a in any::<u64>(), seed_b in any::<u64>()) {
            let cfg = ModelConfig::default();
            let a = init_params(&cfg, seed_a).unwrap();
            let b = init_params(&cfg, seed_b).unwrap();
            prop_assert_eq!(ParamVector::from_flat(&cfg, &a.flatten()).unwrap(), a.clone());
            let diff_flat: Vec<f64> = a.flatten().iter().zip(b.flatten()).map(|(x, y)| x - y).collect();
            prop_assert_eq!(a.sub(&b).unwrap().flatten(), diff_flat);
        }
    }
}
