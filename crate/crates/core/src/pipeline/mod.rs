// SPDX-License-Identifier: Apache-2.0

//! Run configuration and persistence shared by the CLI subcommands.

mod config;
mod manifest;

pub use config::{Config, ConfigError};
pub use manifest::{atomic_write, file_digest, manifest_path, write_run_manifest, InputDigest, RunManifest};
