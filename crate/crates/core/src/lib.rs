// SPDX-License-Identifier: Apache-2.0

//! Discharge-summary generation toolkit: note segmentation, context
//! construction, token budgets, decoding, adapter merging and evaluation.

pub mod budget;
pub mod cli;
pub mod context;
pub mod corpus;
pub mod decode;
pub mod merge;
pub mod metrics;
pub mod note;
pub mod pipeline;
pub mod tokenizer;
