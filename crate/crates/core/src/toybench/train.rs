//! Mini-batch Adam with weight decay.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Kind};
use crate::error::{Error, Result};
use crate::seed;
use crate::toybench::data::Split;
use crate::toybench::model::Mlp;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightDecay {
    /// AdamW: `p -= lr * wd * p` separately from the adaptive step.
    #[default]
    Decoupled,
    /// Classic L2: `wd * p` is added to the gradient before the moments.
    Coupled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u32,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay_mode: WeightDecay,
    /// When present, only tensors mapped to `true` are updated; everything
    /// else (including names absent from the map) stays bit-identical.
    pub trainable_mask: Option<BTreeMap<String, bool>>,
    /// Seed of the shuffle stream.
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(epochs: u32, learning_rate: f64, seed: u64) -> Self {
        TrainConfig {
            epochs,
            learning_rate,
            batch_size: 64,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.1,
            decay_mode: WeightDecay::Decoupled,
            trainable_mask: None,
            seed,
        }
    }

    /// 60 epochs at 5e-3.
    pub fn initial(seed: u64) -> Self {
        TrainConfig::new(60, 5e-3, seed)
    }

    /// 10 epochs at 5e-4.
    pub fn later(seed: u64) -> Self {
        TrainConfig::new(10, 5e-4, seed)
    }

    pub fn with_mask<I, S>(mut self, trainable: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.trainable_mask = Some(trainable.into_iter().map(|s| (s.into(), true)).collect());
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.epochs == 0 {
            problems.push("epochs must be at least 1".to_string());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            problems.push(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            problems.push("batch size must be positive".to_string());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            problems.push("Adam betas must lie in [0, 1)".to_string());
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            problems.push("Adam eps must be positive".to_string());
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            problems.push(format!("weight decay must be >= 0, got {}", self.weight_decay));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigList(problems))
        }
    }
}

/// Trains `init` on `data` and returns the updated checkpoint. Meta (kind,
/// stage) is carried over from `init`.
pub fn train(init: &Checkpoint, data: &Split, cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    if init.kind()? != Kind::Model {
        return Err(Error::WrongKind {
            expected: "model",
            actual: init.kind()?.to_string(),
        });
    }
    if data.is_empty() {
        return Err(Error::Empty("training split".into()));
    }
    let mut model = Mlp::from_checkpoint(init)?;
    if data.dim != model.dims[0] {
        return Err(Error::Config(format!(
            "data has {} features, model expects {}",
            data.dim, model.dims[0]
        )));
    }
    let names = model.param_names();
    let trainable: Vec<bool> = match &cfg.trainable_mask {
        None => vec![true; names.len()],
        Some(mask) => {
            if let Some(unknown) = mask.keys().find(|k| !names.contains(k)) {
                return Err(Error::Config(format!("mask names unknown tensor {unknown:?}")));
            }
            names.iter().map(|n| mask.get(n).copied().unwrap_or(false)).collect()
        }
    };

    let mut m = model.zero_grads();
    let mut v = model.zero_grads();
    let mut grads = model.zero_grads();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = seed::stream(cfg.seed, "shuffle", 0);
    let mut step = 0i32;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (batch, rows) in order.chunks(cfg.batch_size).enumerate() {
            grads.iter_mut().for_each(|g| g.iter_mut().for_each(|x| *x = 0.0));
            let loss = model.loss_and_grad(data, rows, &mut grads);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch, loss });
            }
            step += 1;
            let bc1 = 1.0 - cfg.beta1.powi(step);
            let bc2 = 1.0 - cfg.beta2.powi(step);
            for (idx, p) in model.params.iter_mut().enumerate() {
                if !trainable[idx] {
                    continue;
                }
                let g = &grads[idx];
                let (mi, vi) = (&mut m[idx], &mut v[idx]);
                for j in 0..p.len() {
                    let mut gj = g[j];
                    if cfg.decay_mode == WeightDecay::Coupled {
                        gj += cfg.weight_decay * p[j];
                    } else {
                        p[j] -= cfg.learning_rate * cfg.weight_decay * p[j];
                    }
                    mi[j] = cfg.beta1 * mi[j] + (1.0 - cfg.beta1) * gj;
                    vi[j] = cfg.beta2 * vi[j] + (1.0 - cfg.beta2) * gj * gj;
                    let mhat = mi[j] / bc1;
                    let vhat = vi[j] / bc2;
                    p[j] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.eps);
                }
            }
        }
    }

    // parameters that overflow f32 on the way out count as divergence too
    let out = model.to_checkpoint(init);
    out.check_finite().map_err(|_| Error::Divergence {
        epoch: cfg.epochs - 1,
        batch: data.len().div_ceil(cfg.batch_size) - 1,
        loss: f64::NAN,
    })?;
    Ok(out)
}
