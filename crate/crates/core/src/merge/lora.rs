// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use super::{MergeError, NamedTensorMap, Tensor};

pub const LORA_A_SUFFIX: &str = ".lora_A";
pub const LORA_B_SUFFIX: &str = ".lora_B";

/// Low-rank factors for one weight: `a` is `[r, in]`, `b` is `[out, r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraPair {
    pub a: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    entries: BTreeMap<String, LoraPair>,
    rank: usize,
    alpha: u32,
}

fn shape_err(name: &str, detail: impl Into<String>) -> MergeError {
    MergeError::ShapeMismatch { name: name.to_string(), detail: detail.into() }
}

impl LoraAdapter {
    pub fn new(entries: BTreeMap<String, LoraPair>, alpha: u32) -> Result<Self, MergeError> {
        let mut rank = None;
        for (name, p) in &entries {
            let (&[r_a, _], &[_, r_b]) = (p.a.shape(), p.b.shape()) else {
                return Err(shape_err(name, format!("A {:?} and B {:?} must both be 2-D", p.a.shape(), p.b.shape())));
            };
            if r_a != r_b {
                return Err(shape_err(name, format!("A rank {r_a} differs from B rank {r_b}")));
            }
            match rank {
                None => rank = Some(r_a),
                Some(r) if r != r_a => return Err(shape_err(name, format!("rank {r_a} differs from adapter rank {r}"))),
                _ => {}
            }
        }
        let rank = rank.ok_or_else(|| MergeError::InvalidConfig("adapter has no entries".into()))?;
        if alpha == 0 {
            return Err(MergeError::InvalidConfig("alpha must be positive".into()));
        }
        Ok(Self { entries, rank, alpha })
    }

    /// Reads `<name>.lora_A` / `<name>.lora_B` pairs from a tensor map.
    pub fn from_tensor_map(map: &NamedTensorMap, alpha: u32) -> Result<Self, MergeError> {
        let mut a_parts = BTreeMap::new();
        let mut b_parts = BTreeMap::new();
        for (name, t) in map.iter() {
            if let Some(base) = name.strip_suffix(LORA_A_SUFFIX) {
                a_parts.insert(base.to_string(), t.clone());
            } else if let Some(base) = name.strip_suffix(LORA_B_SUFFIX) {
                b_parts.insert(base.to_string(), t.clone());
            } else {
                return Err(MergeError::InvalidConfig(format!("{name} is neither {LORA_A_SUFFIX} nor {LORA_B_SUFFIX}")));
            }
        }
        if a_parts.len() != b_parts.len() || a_parts.keys().zip(b_parts.keys()).any(|(x, y)| x != y) {
            return Err(MergeError::NameSetMismatch);
        }
        let entries = a_parts.into_iter().zip(b_parts).map(|((n, a), (_, b))| (n, LoraPair { a, b })).collect();
        Self::new(entries, alpha)
    }

    pub fn to_tensor_map(&self) -> NamedTensorMap {
        self.entries
            .iter()
            .flat_map(|(n, p)| [(format!("{n}{LORA_A_SUFFIX}"), p.a.clone()), (format!("{n}{LORA_B_SUFFIX}"), p.b.clone())])
            .collect()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn alpha(&self) -> u32 {
        self.alpha
    }

    pub fn scale(&self) -> f64 {
        self.alpha as f64 / self.rank as f64
    }

    pub fn entries(&self) -> &BTreeMap<String, LoraPair> {
        &self.entries
    }
}

/// `scale * B·A` accumulated in f64, row-major `[out, in]`.
fn scaled_product(p: &LoraPair, scale: f64) -> Vec<f64> {
    let (r, cols) = (p.a.shape()[0], p.a.shape()[1]);
    let rows = p.b.shape()[0];
    let (a, b) = (p.a.data(), p.b.data());
    let mut out = vec![0.0f64; rows * cols];
    for (i, row) in out.chunks_exact_mut(cols).enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let dot: f64 = (0..r).map(|k| b[i * r + k] as f64 * a[k * cols + j] as f64).sum();
            *cell = scale * dot;
        }
    }
    out
}

/// `W' = W + (alpha / r) · B·A` for each adapted weight; other tensors are
/// copied unchanged.
pub fn lora_merge(base: &NamedTensorMap, adapter: &LoraAdapter) -> Result<NamedTensorMap, MergeError> {
    let mut out = base.clone();
    for (name, pair) in adapter.entries() {
        let w = base.get(name).ok_or_else(|| MergeError::MissingBaseTensor(name.clone()))?;
        let expected = [pair.b.shape()[0], pair.a.shape()[1]];
        if w.shape() != expected {
            return Err(shape_err(name, format!("base {:?} vs adapter product {expected:?}", w.shape())));
        }
        let delta = scaled_product(pair, adapter.scale());
        let data = w.data().iter().zip(delta).map(|(&x, d)| (x as f64 + d) as f32).collect();
        out.insert(name.clone(), w.with_data(data));
    }
    Ok(out)
}

/// The composed update `(alpha / r) · B·A` for every adapted weight.
pub fn lora_delta(adapter: &LoraAdapter) -> NamedTensorMap {
    adapter
        .entries()
        .iter()
        .map(|(name, p)| {
            let shape = vec![p.b.shape()[0], p.a.shape()[1]];
            let data = scaled_product(p, adapter.scale()).into_iter().map(|v| v as f32).collect();
            (name.clone(), Tensor::new(shape, data).expect("product shape"))
        })
        .collect()
}
