// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use super::MergeError;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, String> {
        if shape.contains(&0) {
            return Err(format!("shape {shape:?} has a zero dimension"));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(format!("shape {shape:?} needs {numel} values, got {}", data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, String> {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub(crate) fn with_data(&self, data: Vec<f32>) -> Tensor {
        debug_assert_eq!(data.len(), self.data.len());
        Tensor { shape: self.shape.clone(), data }
    }
}

/// Name-ordered map of tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NamedTensorMap(BTreeMap<String, Tensor>);

impl NamedTensorMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Option<Tensor> {
        self.0.insert(name.into(), tensor)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<(String, Tensor)> for NamedTensorMap {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl IntoIterator for NamedTensorMap {
    type Item = (String, Tensor);
    type IntoIter = std::collections::btree_map::IntoIter<String, Tensor>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.into_iter()
    }
}

fn zip_maps<'a>(
    a: &'a NamedTensorMap,
    b: &'a NamedTensorMap,
) -> Result<Vec<(&'a String, &'a Tensor, &'a Tensor)>, MergeError> {
    if a.len() != b.len() || a.names().zip(b.names()).any(|(x, y)| x != y) {
        return Err(MergeError::NameSetMismatch);
    }
    a.iter()
        .zip(b.iter())
        .map(|((name, x), (_, y))| {
            if x.shape() != y.shape() {
                return Err(MergeError::ShapeMismatch {
                    name: name.clone(),
                    detail: format!("{:?} vs {:?}", x.shape(), y.shape()),
                });
            }
            Ok((name, x, y))
        })
        .collect()
}

/// Elementwise `finetuned - base`.
pub fn task_vector(base: &NamedTensorMap, finetuned: &NamedTensorMap) -> Result<NamedTensorMap, MergeError> {
    Ok(zip_maps(base, finetuned)?
        .into_iter()
        .map(|(name, b, f)| {
            let data = b.data().iter().zip(f.data()).map(|(&x, &y)| (y as f64 - x as f64) as f32).collect();
            (name.clone(), b.with_data(data))
        })
        .collect())
}

/// Elementwise `base + delta`.
pub fn apply_delta(base: &NamedTensorMap, delta: &NamedTensorMap) -> Result<NamedTensorMap, MergeError> {
    Ok(zip_maps(base, delta)?
        .into_iter()
        .map(|(name, b, d)| {
            let data = b.data().iter().zip(d.data()).map(|(&x, &y)| (x as f64 + y as f64) as f32).collect();
            (name.clone(), b.with_data(data))
        })
        .collect())
}
