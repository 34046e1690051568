// SPDX-License-Identifier: Apache-2.0

//! Named f32 tensors, LoRA merge-into-base, TIES merging and the `NTM1`
//! tensor file format.

mod format;
mod lora;
mod tensor;
mod ties;

pub use format::{load_tensor_map, read_tensor_map, save_tensor_map, write_tensor_map, MAGIC};
pub use lora::{lora_delta, lora_merge, LoraAdapter, LoraPair, LORA_A_SUFFIX, LORA_B_SUFFIX};
pub use tensor::{task_vector, apply_delta, NamedTensorMap, Tensor};
pub use ties::{ties_merge, TiesConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("shape mismatch for {name}: {detail}")]
    ShapeMismatch { name: String, detail: String },
    #[error("base has no tensor named {0}")]
    MissingBaseTensor(String),
    #[error("inputs do not share the same tensor names")]
    NameSetMismatch,
    #[error("invalid merge configuration: {0}")]
    InvalidConfig(String),
    #[error("corrupt tensor file: {0}")]
    CorruptFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
