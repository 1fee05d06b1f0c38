//! The editing methods and the comparison baselines run over one shared
//! `theta_0`.
//!
//! - `finetune`: adopt every fine-tuned model.
//! - `task-arith` / `ties`: sequential model editing.
//! - `uoe`: only the hidden weight matrices train.
//! - `clrl`: one hidden layer, drawn per stage, trains.
//! - `multitask`: oracle trained from scratch on the pooled data seen so far.
//! - `separate`: oracle with one model per domain.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::edit::{MergeConfig, MergeMethod, TrimSpec};
use crate::error::{Error, Result};
use crate::pipeline::{
    run_chain, train_initial, EvalSuite, SequenceConfig, StagePolicy, StageRecord,
};
use crate::seed;
use crate::toybench::data::{DomainDataset, Split};
use crate::toybench::model::{bias_name, weight_name, Mlp};
use crate::toybench::train::train;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Finetune,
    TaskArith,
    Ties,
    Uoe,
    Clrl,
    Multitask,
    Separate,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Finetune,
        Method::TaskArith,
        Method::Ties,
        Method::Uoe,
        Method::Clrl,
        Method::Multitask,
        Method::Separate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Finetune => "finetune",
            Method::TaskArith => "task-arith",
            Method::Ties => "ties",
            Method::Uoe => "uoe",
            Method::Clrl => "clrl",
            Method::Multitask => "multitask",
            Method::Separate => "separate",
        }
    }

    /// Merge settings for the editing methods. The configured merge is used
    /// when its method matches; otherwise lambda 0.4 (task arithmetic) or
    /// lambda 0.6 with k 0.5 (ties).
    pub fn merge_config(self, cfg: &SequenceConfig) -> Option<MergeConfig> {
        let wanted = match self {
            Method::TaskArith => MergeMethod::TaskArithmetic,
            Method::Ties => MergeMethod::Ties,
            _ => return None,
        };
        if cfg.merge.method == wanted {
            return Some(cfg.merge);
        }
        Some(match wanted {
            MergeMethod::TaskArithmetic => MergeConfig::task_arithmetic(0.4),
            MergeMethod::Ties => MergeConfig::ties(0.6, TrimSpec::global(0.5)),
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method {s:?}; expected one of {}",
                    Method::ALL.map(Method::name).join(", ")
                ))
            })
    }
}

#[derive(Clone, Debug)]
pub struct MethodRun {
    pub method: Method,
    pub records: Vec<StageRecord>,
    pub final_model: Checkpoint,
}

#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub theta0: Checkpoint,
    pub theta0_metrics: Vec<f64>,
    pub runs: Vec<MethodRun>,
}

impl SuiteResult {
    pub fn run(&self, method: Method) -> Option<&MethodRun> {
        self.runs.iter().find(|r| r.method == method)
    }
}

/// Trainable tensors of a UOE stage: the hidden weight matrices.
pub fn uoe_mask(n_layers: usize) -> Vec<String> {
    (0..n_layers.saturating_sub(1)).map(weight_name).collect()
}

/// Hidden layer drawn for a CLRL stage.
pub fn clrl_layer(master_seed: u64, stage: usize, n_layers: usize) -> usize {
    let hidden = n_layers.saturating_sub(1).max(1);
    seed::stream(master_seed, "clrl-layer", stage as u64).gen_range(0..hidden)
}

fn pooled_model(cfg: &SequenceConfig, datasets: &[DomainDataset], upto: usize) -> Result<Checkpoint> {
    let pooled = Split::concat(datasets[..=upto].iter().map(DomainDataset::train));
    let init = cfg.model.init(cfg.seed, 0)?;
    train(&init, &pooled, &cfg.train_config(0))
}

fn separate_model(cfg: &SequenceConfig, datasets: &[DomainDataset], domain: usize) -> Result<Checkpoint> {
    let init = cfg.model.init(cfg.seed, domain as u64)?;
    let mut tc = cfg.train_config(0);
    tc.seed = seed::derive(cfg.seed, "separate-shuffle", domain as u64);
    train(&init, datasets[domain].train(), &tc)
}

fn oracle_record(
    method: Method,
    stage: usize,
    datasets: &[DomainDataset],
    base: &Checkpoint,
    model: &Checkpoint,
    errors: Vec<f64>,
    opened: Vec<usize>,
    started: Instant,
) -> Result<StageRecord> {
    let digest = model.digest()?;
    Ok(StageRecord {
        method: method.name().to_string(),
        stage,
        dataset_id: datasets[stage].spec().id(),
        base_digest: base.digest()?,
        intermediate_digest: digest,
        edited_digest: digest,
        merge: None,
        metrics_intermediate: errors.clone(),
        metrics_edited: errors,
        tau_stats: None,
        train_splits_opened: opened,
        warnings: Vec::new(),
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// Runs one method over stages `1..=T` starting from `theta0`.
pub fn run_method(
    method: Method,
    cfg: &SequenceConfig,
    datasets: &[DomainDataset],
    eval: &EvalSuite,
    theta0: &Checkpoint,
) -> Result<MethodRun> {
    let n_layers = cfg.model.n_layers();
    let chain = |policy: StagePolicy<'_>| -> Result<MethodRun> {
        let out = run_chain(cfg, datasets, eval, theta0, method.name(), &policy)?;
        Ok(MethodRun {
            method,
            records: out.records,
            final_model: out.final_model,
        })
    };
    match method {
        Method::Finetune => chain(StagePolicy::FineTune { mask: &|_| None }),
        Method::Uoe => chain(StagePolicy::FineTune {
            mask: &|_| Some(uoe_mask(n_layers)),
        }),
        Method::Clrl => chain(StagePolicy::FineTune {
            mask: &|t| {
                let l = clrl_layer(cfg.seed, t, n_layers);
                Some(vec![weight_name(l), bias_name(l)])
            },
        }),
        Method::TaskArith | Method::Ties => {
            let merge = method.merge_config(cfg).expect("editing method");
            let mut edit_cfg = cfg.clone();
            if cfg.merge.method != merge.method {
                edit_cfg = edit_cfg.with_merge(merge);
            }
            let out = run_chain(&edit_cfg, datasets, eval, theta0, method.name(), &StagePolicy::Edit)?;
            Ok(MethodRun {
                method,
                records: out.records,
                final_model: out.final_model,
            })
        }
        Method::Multitask => {
            let mut records = Vec::new();
            let mut current = theta0.clone();
            for t in 1..datasets.len() {
                let started = Instant::now();
                let before: Vec<usize> = datasets.iter().map(DomainDataset::train_reads).collect();
                let mut model = pooled_model(cfg, datasets, t)?;
                model.set_stage(t as u32);
                let opened = opened_since(datasets, &before);
                let errors = eval.evaluate(&model, t)?;
                records.push(oracle_record(method, t, datasets, &current, &model, errors, opened, started)?);
                current = model;
            }
            Ok(MethodRun {
                method,
                records,
                final_model: current,
            })
        }
        Method::Separate => {
            let mut models = vec![theta0.clone()];
            let mut records = Vec::new();
            for t in 1..datasets.len() {
                let started = Instant::now();
                let before: Vec<usize> = datasets.iter().map(DomainDataset::train_reads).collect();
                let mut model = separate_model(cfg, datasets, t)?;
                model.set_stage(t as u32);
                let opened = opened_since(datasets, &before);
                models.push(model);
                let errors = models
                    .iter()
                    .enumerate()
                    .map(|(i, m)| crate::toybench::model::error_rate(&Mlp::from_checkpoint(m)?, eval.split(i)))
                    .collect::<Result<Vec<f64>>>()?;
                records.push(oracle_record(method, t, datasets, &models[t - 1], &models[t], errors, opened, started)?);
            }
            Ok(MethodRun {
                method,
                records,
                final_model: models.pop().expect("theta0"),
            })
        }
    }
}

fn opened_since(datasets: &[DomainDataset], before: &[usize]) -> Vec<usize> {
    datasets
        .iter()
        .zip(before)
        .enumerate()
        .flat_map(|(i, (d, &b))| std::iter::repeat_n(i, d.train_reads() - b))
        .collect()
}

/// Trains `theta_0` once and runs each requested method from it.
pub fn run_suite(cfg: &SequenceConfig, methods: &[Method]) -> Result<SuiteResult> {
    cfg.validate()?;
    let datasets = cfg.datasets()?;
    let eval = EvalSuite::new(&datasets, cfg.eval_split);
    let theta0 = train_initial(cfg, &datasets[0])?;
    let theta0_metrics = eval.evaluate(&theta0, 0)?;
    let runs = methods
        .iter()
        .map(|&m| run_method(m, cfg, &datasets, &eval, &theta0))
        .collect::<Result<Vec<_>>>()?;
    Ok(SuiteResult {
        theta0,
        theta0_metrics,
        runs,
    })
}

/// Records of a single method, by name.
pub fn run_baseline(name: &str, cfg: &SequenceConfig) -> Result<Vec<StageRecord>> {
    let method: Method = name.parse()?;
    let mut suite = run_suite(cfg, &[method])?;
    Ok(suite.runs.pop().expect("one run").records)
}
