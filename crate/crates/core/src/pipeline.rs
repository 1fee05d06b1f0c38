//! Stage-by-stage lifelong training with model editing.
//!
//! `theta_0` is trained on domain 0. For every later domain `t` the current
//! model is fine-tuned on domain `t`'s training split alone, the task vector
//! against the current model is (optionally) trimmed, and a scaled copy is
//! added back. Evaluation uses held-out splits of every seen domain.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Digest};
use crate::edit::{apply, diff, edit_step, sparsity_stats, trim, MergeConfig, MergeMethod, SparsityStats};
use crate::error::{Error, Result};
use crate::metrics;
use crate::par;
use crate::seed;
use crate::toybench::data::{gen_domain, DomainDataset, DomainSpec, Split};
use crate::toybench::model::{error_rate, Mlp, ToyModelSpec};
use crate::toybench::train::{train, TrainConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Dev,
    #[default]
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceConfig {
    /// Domain 0 first, then the domains added at stages 1..=T in order.
    pub domains: Vec<DomainSpec>,
    pub model: ToyModelSpec,
    /// Recipe for `theta_0`; its `seed` is replaced per stage.
    pub stage0: TrainConfig,
    /// Recipe for every later stage.
    pub later: TrainConfig,
    pub merge: MergeConfig,
    /// Per-stage replacements for `merge`.
    #[serde(default)]
    pub merge_overrides: BTreeMap<usize, MergeConfig>,
    pub eval_split: EvalSplit,
    pub seed: u64,
}

impl SequenceConfig {
    /// Default benchmark: five domains (T = 4), 25 degree steps, TIES with
    /// lambda 0.6 and k 0.5.
    pub fn standard(seed: u64) -> Self {
        SequenceConfig {
            domains: (0..5).map(|t| DomainSpec::standard(t, seed)).collect(),
            model: ToyModelSpec::default(),
            stage0: TrainConfig::initial(0),
            later: TrainConfig::later(0),
            merge: MergeConfig::ties(0.6, crate::edit::TrimSpec::global(0.5)),
            merge_overrides: BTreeMap::new(),
            eval_split: EvalSplit::Test,
            seed,
        }
    }

    pub fn with_merge(mut self, merge: MergeConfig) -> Self {
        self.merge = merge;
        self.merge_overrides.clear();
        self
    }

    /// Number of editing stages T.
    pub fn n_stages(&self) -> usize {
        self.domains.len().saturating_sub(1)
    }

    pub fn train_config(&self, stage: usize) -> TrainConfig {
        let mut c = if stage == 0 {
            self.stage0.clone()
        } else {
            self.later.clone()
        };
        c.seed = seed::derive(self.seed, "shuffle", stage as u64);
        c
    }

    pub fn merge_for(&self, stage: usize) -> &MergeConfig {
        self.merge_overrides.get(&stage).unwrap_or(&self.merge)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.domains.is_empty() {
            problems.push("at least one domain is required".to_string());
        }
        if let Err(e) = self.model.validate() {
            problems.push(e.to_string());
        }
        for (t, d) in self.domains.iter().enumerate() {
            if d.domain_index != t {
                problems.push(format!("domain at position {t} has index {}", d.domain_index));
            }
            if d.input_dim != self.model.dims.first().copied().unwrap_or(0) {
                problems.push(format!("domain {t}: input_dim {} does not match the model", d.input_dim));
            }
            if d.n_classes != self.model.dims.last().copied().unwrap_or(0) {
                problems.push(format!("domain {t}: n_classes {} does not match the model", d.n_classes));
            }
            if let Err(Error::ConfigList(p)) = d.validate() {
                problems.extend(p);
            }
        }
        for (label, tc) in [("stage0", &self.stage0), ("later", &self.later)] {
            if let Err(Error::ConfigList(p)) = tc.validate() {
                problems.extend(p.into_iter().map(|s| format!("train.{label}: {s}")));
            }
        }
        if let Err(e) = self.merge.validate() {
            problems.push(format!("merge: {e}"));
        }
        for (stage, m) in &self.merge_overrides {
            if *stage == 0 || *stage > self.n_stages() {
                problems.push(format!("merge override for stage {stage} outside 1..={}", self.n_stages()));
            }
            if let Err(e) = m.validate() {
                problems.push(format!("merge override {stage}: {e}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigList(problems))
        }
    }

    pub fn datasets(&self) -> Result<Vec<DomainDataset>> {
        self.domains.iter().map(gen_domain).collect()
    }
}

/// Held-out splits of the seen domains. Holds no training data.
pub struct EvalSuite {
    splits: Vec<Split>,
}

impl EvalSuite {
    pub fn new(datasets: &[DomainDataset], which: EvalSplit) -> Self {
        EvalSuite {
            splits: datasets
                .iter()
                .map(|d| match which {
                    EvalSplit::Dev => d.dev().clone(),
                    EvalSplit::Test => d.test().clone(),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.splits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splits.is_empty()
    }

    pub fn split(&self, domain: usize) -> &Split {
        &self.splits[domain]
    }

    /// Error percent on domains `0..=upto`, evaluated concurrently.
    pub fn evaluate(&self, model: &Checkpoint, upto: usize) -> Result<Vec<f64>> {
        let mlp = Mlp::from_checkpoint(model)?;
        par::map(&self.splits[..=upto], |s| error_rate(&mlp, s))
            .into_iter()
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub method: String,
    pub stage: usize,
    pub dataset_id: String,
    pub base_digest: Digest,
    /// Fine-tuned checkpoint before editing.
    pub intermediate_digest: Digest,
    pub edited_digest: Digest,
    /// `None` for methods that do not edit.
    pub merge: Option<MergeConfig>,
    /// Error percent per seen domain `0..=stage`.
    pub metrics_intermediate: Vec<f64>,
    pub metrics_edited: Vec<f64>,
    pub tau_stats: Option<SparsityStats>,
    /// Domain indices whose training split was read during this stage.
    pub train_splits_opened: Vec<usize>,
    pub warnings: Vec<String>,
    pub wall_time_s: f64,
}

impl StageRecord {
    pub fn awer_intermediate(&self) -> f64 {
        metrics::awer(&self.metrics_intermediate).expect("non-empty")
    }

    pub fn awer_edited(&self) -> f64 {
        metrics::awer(&self.metrics_edited).expect("non-empty")
    }
}

/// Trains `theta_0` on domain 0.
pub fn train_initial(cfg: &SequenceConfig, domain0: &DomainDataset) -> Result<Checkpoint> {
    let init = cfg.model.init(cfg.seed, 0)?;
    train(&init, domain0.train(), &cfg.train_config(0))
}

fn tag(mut c: Checkpoint, stage: usize) -> Checkpoint {
    c.set_stage(stage as u32);
    c
}

/// One editing stage on `dataset` (domain `t`): fine-tune, edit, evaluate.
pub fn run_stage(
    theta_prev: &Checkpoint,
    dataset: &DomainDataset,
    train_cfg: &TrainConfig,
    merge_cfg: &MergeConfig,
    eval: &EvalSuite,
) -> Result<(Checkpoint, StageRecord)> {
    merge_cfg.validate()?;
    let started = Instant::now();
    let t = dataset.spec().domain_index;
    let intermediate = tag(train(theta_prev, dataset.train(), train_cfg)?, t);
    let (edited, tau) = edit_step(theta_prev, &intermediate, merge_cfg)?;
    let record = StageRecord {
        method: merge_cfg.method.to_string(),
        stage: t,
        dataset_id: dataset.spec().id(),
        base_digest: theta_prev.digest()?,
        intermediate_digest: intermediate.digest()?,
        edited_digest: edited.digest()?,
        merge: Some(*merge_cfg),
        metrics_intermediate: eval.evaluate(&intermediate, t)?,
        metrics_edited: eval.evaluate(&edited, t)?,
        tau_stats: Some(sparsity_stats(&tau)),
        train_splits_opened: vec![t],
        warnings: merge_cfg.warnings(),
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    Ok((edited, record))
}

/// Plain fine-tuning stage: the trained model is adopted as-is.
pub fn run_finetune_stage(
    theta_prev: &Checkpoint,
    dataset: &DomainDataset,
    train_cfg: &TrainConfig,
    eval: &EvalSuite,
    method: &str,
) -> Result<(Checkpoint, StageRecord)> {
    let started = Instant::now();
    let t = dataset.spec().domain_index;
    let model = tag(train(theta_prev, dataset.train(), train_cfg)?, t);
    let digest = model.digest()?;
    let metrics = eval.evaluate(&model, t)?;
    let record = StageRecord {
        method: method.to_string(),
        stage: t,
        dataset_id: dataset.spec().id(),
        base_digest: theta_prev.digest()?,
        intermediate_digest: digest,
        edited_digest: digest,
        merge: None,
        metrics_intermediate: metrics.clone(),
        metrics_edited: metrics,
        tau_stats: None,
        train_splits_opened: vec![t],
        warnings: Vec::new(),
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    Ok((model, record))
}

/// What happens at each stage of a chain.
pub enum StagePolicy<'a> {
    /// Fine-tune then edit with the config's merge settings.
    Edit,
    /// Fine-tune and adopt. The closure may restrict trainable tensors per
    /// stage.
    FineTune {
        mask: &'a dyn Fn(usize) -> Option<Vec<String>>,
    },
}

#[derive(Clone, Debug)]
pub struct SequenceOutcome {
    pub theta0: Checkpoint,
    /// Errors of `theta_0` on domain 0.
    pub theta0_metrics: Vec<f64>,
    pub final_model: Checkpoint,
    pub records: Vec<StageRecord>,
    /// Every model in the chain, `theta_0` first.
    pub models: Vec<Checkpoint>,
}

/// Runs stages `1..=T` from a given `theta_0`. Training-split reads are
/// audited per stage through the datasets' access counters.
pub fn run_chain(
    cfg: &SequenceConfig,
    datasets: &[DomainDataset],
    eval: &EvalSuite,
    theta0: &Checkpoint,
    method: &str,
    policy: &StagePolicy<'_>,
) -> Result<SequenceOutcome> {
    let mut current = theta0.clone();
    let mut records = Vec::new();
    let mut models = vec![theta0.clone()];
    for t in 1..datasets.len() {
        let before: Vec<usize> = datasets.iter().map(DomainDataset::train_reads).collect();
        let mut train_cfg = cfg.train_config(t);
        let step = match policy {
            StagePolicy::Edit => run_stage(&current, &datasets[t], &train_cfg, cfg.merge_for(t), eval),
            StagePolicy::FineTune { mask } => {
                if let Some(names) = mask(t) {
                    train_cfg = train_cfg.with_mask(names);
                }
                run_finetune_stage(&current, &datasets[t], &train_cfg, eval, method)
            }
        };
        let (next, mut record) = step.map_err(|e| Error::StageFailed {
            stage: t,
            completed: records.clone(),
            source: Box::new(e),
        })?;
        record.method = method.to_string();
        record.train_splits_opened = datasets
            .iter()
            .zip(&before)
            .enumerate()
            .flat_map(|(i, (d, &b))| std::iter::repeat_n(i, d.train_reads() - b))
            .collect();
        records.push(record);
        models.push(next.clone());
        current = next;
    }
    Ok(SequenceOutcome {
        theta0: theta0.clone(),
        theta0_metrics: eval.evaluate(theta0, 0)?,
        final_model: current,
        records,
        models,
    })
}

/// Full sequential model-editing run from the config.
pub fn run_sequence(cfg: &SequenceConfig) -> Result<SequenceOutcome> {
    cfg.validate()?;
    let datasets = cfg.datasets()?;
    let eval = EvalSuite::new(&datasets, cfg.eval_split);
    let theta0 = train_initial(cfg, &datasets[0])?;
    run_chain(cfg, &datasets, &eval, &theta0, &cfg.merge.method.to_string(), &StagePolicy::Edit)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    /// Mean error over domains `0..stage`.
    pub previous: f64,
    /// Error on domain `stage`.
    pub new: f64,
    /// Mean over `0..=stage`.
    pub all: f64,
}

/// Reruns the sequence up to `stage - 1` with the configured merge, fine-tunes
/// once at `stage`, then applies the task vector at every `lambda` in `grid`.
/// Scores come from the dev splits.
pub fn lambda_sweep(cfg: &SequenceConfig, stage: usize, grid: &[f64]) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if grid.is_empty() {
        return Err(Error::Empty("lambda grid".into()));
    }
    if let Some(bad) = grid.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(Error::Config(format!("grid value {bad} is not a finite non-negative number")));
    }
    if stage == 0 || stage > cfg.n_stages() {
        return Err(Error::Config(format!(
            "sweep stage {stage} outside 1..={}",
            cfg.n_stages()
        )));
    }
    let datasets = cfg.datasets()?;
    let eval = EvalSuite::new(&datasets, EvalSplit::Dev);
    let theta0 = train_initial(cfg, &datasets[0])?;
    let prefix = run_chain(cfg, &datasets[..stage], &eval, &theta0, "sweep-prefix", &StagePolicy::Edit)?;
    let base = prefix.final_model;
    let finetuned = tag(train(&base, datasets[stage].train(), &cfg.train_config(stage))?, stage);
    let merge = cfg.merge_for(stage);
    let mut tau = diff(&finetuned, &base)?;
    if merge.method == MergeMethod::Ties {
        tau = trim(&tau, merge.trim.as_ref().expect("validated"))?;
    }
    par::map(grid, |&lambda| -> Result<SweepRow> {
        let edited = apply(&base, &tau, lambda)?;
        let errs = eval.evaluate(&edited, stage)?;
        Ok(SweepRow {
            lambda,
            previous: metrics::awer(&errs[..stage])?,
            new: errs[stage],
            all: metrics::awer(&errs)?,
        })
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub stage: usize,
    pub awer_intermediate: f64,
    pub awer_edited: f64,
    /// Relative reduction of the edited AWER versus the intermediate one;
    /// undefined when the intermediate AWER is zero.
    pub werr: Option<f64>,
}

/// Intermediate (fine-tuned) versus edited AWER per stage.
pub fn compare_intermediate(records: &[StageRecord]) -> Result<Vec<CompareRow>> {
    records
        .iter()
        .map(|r| {
            let a = r.awer_intermediate();
            let b = r.awer_edited();
            Ok(CompareRow {
                stage: r.stage,
                awer_intermediate: a,
                awer_edited: b,
                werr: metrics::werr(a, b).ok(),
            })
        })
        .collect()
}
