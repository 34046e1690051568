// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::{MergeError, NamedTensorMap, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiesConfig {
    /// Fraction of entries kept per input when trimming, in (0, 1].
    pub density: f64,
    /// Per-input weights; `None` means equal weights.
    pub weights: Option<Vec<f64>>,
    /// Scale applied to the merged result.
    pub lambda: f64,
}

impl Default for TiesConfig {
    fn default() -> Self {
        Self { density: 0.5, weights: None, lambda: 1.0 }
    }
}

impl TiesConfig {
    fn resolved_weights(&self, inputs: usize) -> Result<Vec<f64>, MergeError> {
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(MergeError::InvalidConfig(format!("density {} not in (0,1]", self.density)));
        }
        if !self.lambda.is_finite() {
            return Err(MergeError::InvalidConfig("lambda must be finite".into()));
        }
        match &self.weights {
            None => Ok(vec![1.0; inputs]),
            Some(w) if w.len() != inputs => {
                Err(MergeError::InvalidConfig(format!("{} weights for {inputs} inputs", w.len())))
            }
            Some(w) if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) => {
                Err(MergeError::InvalidConfig("weights must be positive".into()))
            }
            Some(w) => Ok(w.clone()),
        }
    }
}

/// Number of entries kept out of `numel` at `density`.
pub(crate) fn keep_count(numel: usize, density: f64) -> usize {
    ((density * numel as f64) - 1e-9).ceil().clamp(0.0, numel as f64) as usize
}

/// Zeroes all but the `keep` largest-magnitude entries; ties at the
/// boundary keep the lower flat index.
fn trim(values: &[f32], keep: usize) -> Vec<f32> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
    let mut out = vec![0.0f32; values.len()];
    for &i in &order[..keep] {
        out[i] = values[i];
    }
    out
}

fn merge_tensor(tensors: &[&Tensor], weights: &[f64], cfg: &TiesConfig) -> Tensor {
    let numel = tensors[0].numel();
    let keep = keep_count(numel, cfg.density);
    let trimmed: Vec<Vec<f32>> = tensors.iter().map(|t| trim(t.data(), keep)).collect();
    let data = (0..numel)
        .map(|j| {
            let total: f64 = trimmed.iter().zip(weights).map(|(t, &w)| w * t[j] as f64).sum();
            let positive = total >= 0.0;
            let (mut num, mut den) = (0.0f64, 0.0f64);
            for (t, &w) in trimmed.iter().zip(weights) {
                let v = t[j];
                if v != 0.0 && (v > 0.0) == positive {
                    num += w * v as f64;
                    den += w;
                }
            }
            if den == 0.0 {
                0.0
            } else {
                (num / den * cfg.lambda) as f32
            }
        })
        .collect();
    tensors[0].with_data(data)
}

/// TIES merging: per tensor, trim each input to its top-`density`
/// magnitudes, elect a per-coordinate sign from the weighted sum (zero sum
/// elects positive), then take the weighted mean of the surviving entries
/// that agree with the elected sign. The result is scaled by `lambda`.
pub fn ties_merge(inputs: &[NamedTensorMap], cfg: &TiesConfig) -> Result<NamedTensorMap, MergeError> {
    let first = inputs.first().ok_or_else(|| MergeError::InvalidConfig("no inputs".into()))?;
    let weights = cfg.resolved_weights(inputs.len())?;
    for other in &inputs[1..] {
        if other.len() != first.len() || other.names().zip(first.names()).any(|(a, b)| a != b) {
            return Err(MergeError::NameSetMismatch);
        }
    }
    let mut out = NamedTensorMap::new();
    for (name, t0) in first.iter() {
        let tensors: Vec<&Tensor> = inputs.iter().map(|m| m.get(name).expect("names checked")).collect();
        if let Some(bad) = tensors.iter().find(|t| t.shape() != t0.shape()) {
            return Err(MergeError::ShapeMismatch { name: name.clone(), detail: format!("{:?} vs {:?}", t0.shape(), bad.shape()) });
        }
        out.insert(name.clone(), merge_tensor(&tensors, &weights, cfg));
    }
    Ok(out)
}
