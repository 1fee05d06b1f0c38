//! Seeded continual-learning benchmark.
//!
//! Domains are rotated copies of one Gaussian-mixture classification task;
//! the model is a small MLP trained with Adam. Classification error stands in
//! for word error rate.

pub mod baselines;
pub mod data;
pub mod model;
pub mod train;

pub use baselines::{run_baseline, run_suite, Method, MethodRun, SuiteResult};
pub use data::{gen_domain, DomainDataset, DomainSpec, Split};
pub use model::{evaluate, Mlp, ToyModelSpec};
pub use train::{train, TrainConfig, WeightDecay};
