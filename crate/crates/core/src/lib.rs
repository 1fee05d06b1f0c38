//! Sequential model editing for lifelong learning.
//!
//! A model is carried through a sequence of data sources. At each stage the
//! current model is fine-tuned on the new source only, the task vector
//! (fine-tuned minus current) is optionally trimmed to its largest-magnitude
//! entries, and a scaled copy of it is added back:
//!
//! ```text
//! tau_t   = finetuned_t - theta_{t-1}
//! tau_t   = trim(tau_t, k)              (TIES variant only)
//! theta_t = theta_{t-1} + lambda * tau_t
//! ```
//!
//! The crate is split into:
//! - [`checkpoint`]: tensors, checkpoints and the `SMECKPT1` container format.
//! - [`edit`]: task-vector arithmetic (diff, trim, apply, edit step).
//! - [`toybench`]: a seeded rotated-Gaussian continual-learning benchmark with
//!   a small from-scratch MLP and the comparison baselines.
//! - [`pipeline`]: the stage-by-stage driver, lambda sweeps and
//!   intermediate-vs-edited comparisons.
//! - [`metrics`]: AWER / WERR arithmetic and CSV / JSON / markdown tables.
//! - [`config`]: the JSON run configuration.
//!
//! Data-parallel inner loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled (the default) and plain iterators otherwise.
//! Every parallel path is bit-identical to its sequential counterpart.

pub mod checkpoint;
pub mod config;
pub mod edit;
mod error;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod seed;
pub mod toybench;

pub use checkpoint::{validate_compatible, Checkpoint, Digest, Kind, Tensor};
pub use config::BenchConfig;
pub use edit::{
    apply, diff, edit_step, sparsity_stats, trim, MergeConfig, MergeMethod, SparsityStats,
    TrimScope, TrimSpec,
};
pub use error::{Error, Result};
pub use metrics::{awer, werr, MetricsTable};
pub use pipeline::{run_sequence, run_stage, SequenceConfig, StageRecord};
