//! JSON run configuration.
//!
//! Top-level keys: `domains`, `model`, `train`, `merge`, `eval_split`,
//! `seed`. Every key is optional; omitted keys take the defaults printed by
//! `BenchConfig::default()`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::edit::{MergeConfig, MergeMethod, TiePolicy, TrimScope, TrimSpec};
use crate::error::{Error, Result};
use crate::pipeline::{EvalSplit, SequenceConfig};
use crate::toybench::data::DomainSpec;
use crate::toybench::model::ToyModelSpec;
use crate::toybench::train::{TrainConfig, WeightDecay};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub domains: DomainsSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub merge: MergeSection,
    pub eval_split: EvalSplit,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainsSection {
    /// Domain 0 plus the T added domains.
    pub count: usize,
    pub angle_step: f64,
    pub sizes: SizesSection,
    pub noise_sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SizesSection {
    pub first: SplitSizes,
    pub later: SplitSizes,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub dims: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub stage0: StageTrain,
    pub later: StageTrain,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub decay_mode: WeightDecay,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTrain {
    pub epochs: u32,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeSection {
    pub method: MergeMethod,
    pub lambda: f64,
    pub k: f64,
    pub scope: TrimScope,
    pub overrides: Vec<MergeOverride>,
}

/// Per-stage replacement of lambda and/or k.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeOverride {
    pub stage: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            domains: DomainsSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            merge: MergeSection::default(),
            eval_split: EvalSplit::Test,
            seed: 42,
        }
    }
}

impl Default for DomainsSection {
    fn default() -> Self {
        DomainsSection {
            count: 5,
            angle_step: 25.0,
            sizes: SizesSection::default(),
            noise_sigma: 0.5,
        }
    }
}

impl Default for SizesSection {
    fn default() -> Self {
        SizesSection {
            first: SplitSizes {
                train: 2000,
                dev: 200,
                test: 500,
            },
            later: SplitSizes {
                train: 500,
                dev: 200,
                test: 500,
            },
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            dims: ToyModelSpec::default().dims,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            stage0: StageTrain { epochs: 60, lr: 5e-3 },
            later: StageTrain { epochs: 10, lr: 5e-4 },
            batch_size: 64,
            weight_decay: 0.1,
            decay_mode: WeightDecay::Decoupled,
        }
    }
}

impl Default for MergeSection {
    fn default() -> Self {
        MergeSection {
            method: MergeMethod::Ties,
            lambda: 0.6,
            k: 0.5,
            scope: TrimScope::Global,
            overrides: Vec::new(),
        }
    }
}

/// Collects dotted paths of keys in `doc` that the default document lacks.
/// Arrays are not descended into; their element types reject unknown keys
/// themselves.
fn unknown_keys(doc: &Value, schema: &Value, path: &str, out: &mut Vec<String>) {
    let (Value::Object(doc), Value::Object(schema)) = (doc, schema) else {
        return;
    };
    for (key, value) in doc {
        let here = if path.is_empty() {
            key.clone()
        } else {
            format!("{path}.{key}")
        };
        match schema.get(key) {
            None => out.push(format!("unknown key `{here}`")),
            Some(sub) => unknown_keys(value, sub, &here, out),
        }
    }
}

/// Objects merge key by key; anything else replaces the default.
fn overlay(base: &mut Value, doc: Value) {
    match (base, doc) {
        (Value::Object(b), Value::Object(d)) => {
            for (key, value) in d {
                match b.get_mut(&key) {
                    Some(slot) => overlay(slot, value),
                    None => {
                        b.insert(key, value);
                    }
                }
            }
        }
        (slot, doc) => *slot = doc,
    }
}

impl BenchConfig {
    /// Parses and validates, reporting every problem found rather than the
    /// first.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(text)
            .map_err(|e| Error::ConfigList(vec![format!("invalid JSON: {e}")]))?;
        let schema = serde_json::to_value(BenchConfig::default())?;
        let mut problems = Vec::new();
        unknown_keys(&doc, &schema, "", &mut problems);
        let mut merged = schema;
        overlay(&mut merged, doc);
        let cfg: BenchConfig = match serde_json::from_value(merged) {
            Ok(c) => c,
            Err(e) => {
                problems.push(e.to_string());
                return Err(Error::ConfigList(problems));
            }
        };
        problems.extend(cfg.problems());
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::ConfigList(problems))
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn trim_spec(&self, k: f64) -> TrimSpec {
        TrimSpec {
            k,
            scope: self.merge.scope,
            tie_policy: TiePolicy::KeepCount,
        }
    }

    fn merge_with(&self, lambda: f64, k: f64) -> MergeConfig {
        match self.merge.method {
            MergeMethod::TaskArithmetic => MergeConfig::task_arithmetic(lambda),
            MergeMethod::Ties => MergeConfig::ties(lambda, self.trim_spec(k)),
        }
    }

    /// Semantic problems, all of them.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let d = &self.domains;
        if d.count == 0 {
            p.push("domains.count must be at least 1".into());
        }
        if !d.angle_step.is_finite() {
            p.push("domains.angle_step must be finite".into());
        }
        if !(d.noise_sigma.is_finite() && d.noise_sigma >= 0.0) {
            p.push("domains.noise_sigma must be finite and >= 0".into());
        }
        for (label, s) in [("first", d.sizes.first), ("later", d.sizes.later)] {
            for (split, n) in [("train", s.train), ("dev", s.dev), ("test", s.test)] {
                if n == 0 {
                    p.push(format!("domains.sizes.{label}.{split} must be positive"));
                }
            }
        }
        let dims = &self.model.dims;
        if dims.len() < 2 || dims.contains(&0) {
            p.push("model.dims needs at least two positive entries".into());
        } else {
            if !dims[0].is_multiple_of(2) {
                p.push("model.dims[0] (input size) must be even".into());
            }
            if dims[dims.len() - 1] < 2 || dims[dims.len() - 1] > 255 {
                p.push("model output size (classes) must lie in 2..=255".into());
            }
        }
        let t = &self.train;
        for (label, s) in [("stage0", t.stage0), ("later", t.later)] {
            if s.epochs == 0 {
                p.push(format!("train.{label}.epochs must be at least 1"));
            }
            if !(s.lr.is_finite() && s.lr > 0.0) {
                p.push(format!("train.{label}.lr must be positive"));
            }
        }
        if t.batch_size == 0 {
            p.push("train.batch_size must be positive".into());
        }
        if !(t.weight_decay.is_finite() && t.weight_decay >= 0.0) {
            p.push("train.weight_decay must be finite and >= 0".into());
        }
        let m = &self.merge;
        if !(m.lambda.is_finite() && m.lambda >= 0.0) {
            p.push("merge.lambda must be finite and >= 0".into());
        }
        if !(m.k > 0.0 && m.k <= 1.0) {
            p.push("merge.k must lie in (0, 1]".into());
        }
        let n_stages = d.count.saturating_sub(1);
        let mut seen = BTreeMap::new();
        for o in &m.overrides {
            if o.stage == 0 || o.stage > n_stages {
                p.push(format!("merge.overrides: stage {} outside 1..={n_stages}", o.stage));
            }
            if seen.insert(o.stage, ()).is_some() {
                p.push(format!("merge.overrides: stage {} listed twice", o.stage));
            }
            if let Some(l) = o.lambda {
                if !(l.is_finite() && l >= 0.0) {
                    p.push(format!("merge.overrides: stage {} lambda must be finite and >= 0", o.stage));
                }
            }
            if let Some(k) = o.k {
                if !(k > 0.0 && k <= 1.0) {
                    p.push(format!("merge.overrides: stage {} k must lie in (0, 1]", o.stage));
                }
            }
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigList(p))
        }
    }

    /// Expands into the pipeline's sequence config.
    pub fn resolve(&self) -> Result<SequenceConfig> {
        self.validate()?;
        let dims = &self.model.dims;
        let domains = (0..self.domains.count)
            .map(|t| {
                let sizes = if t == 0 {
                    self.domains.sizes.first
                } else {
                    self.domains.sizes.later
                };
                DomainSpec {
                    domain_index: t,
                    rotation_deg: (self.domains.angle_step * t as f64).rem_euclid(360.0),
                    n_train: sizes.train,
                    n_dev: sizes.dev,
                    n_test: sizes.test,
                    noise_sigma: self.domains.noise_sigma,
                    n_classes: dims[dims.len() - 1],
                    input_dim: dims[0],
                    seed: self.seed,
                }
            })
            .collect();
        let recipe = |s: StageTrain| {
            let mut c = TrainConfig::new(s.epochs, s.lr, 0);
            c.batch_size = self.train.batch_size;
            c.weight_decay = self.train.weight_decay;
            c.decay_mode = self.train.decay_mode;
            c
        };
        let merge_overrides = self
            .merge
            .overrides
            .iter()
            .map(|o| {
                let m = self.merge_with(o.lambda.unwrap_or(self.merge.lambda), o.k.unwrap_or(self.merge.k));
                (o.stage, m)
            })
            .collect();
        let cfg = SequenceConfig {
            domains,
            model: ToyModelSpec { dims: dims.clone() },
            stage0: recipe(self.train.stage0),
            later: recipe(self.train.later),
            merge: self.merge_with(self.merge.lambda, self.merge.k),
            merge_overrides,
            eval_split: self.eval_split,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
