//! Task-vector arithmetic on checkpoints.
//!
//! All operations are pure. Elementwise work may be split across threads;
//! selection thresholds and reductions are computed in canonical order so the
//! output bytes never depend on the worker count.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{
    validate_compatible, Checkpoint, Kind, META_KIND, META_PARENT, META_SOURCE_BASE,
    META_SOURCE_FINETUNED, META_STAGE,
};
use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeMethod {
    TaskArithmetic,
    Ties,
}

impl fmt::Display for MergeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MergeMethod::TaskArithmetic => "task-arithmetic",
            MergeMethod::Ties => "ties",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrimScope {
    /// `k` applies to the pooled parameter set.
    #[default]
    Global,
    /// `k` applies to each tensor separately.
    PerTensor,
}

impl fmt::Display for TrimScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrimScope::Global => "global",
            TrimScope::PerTensor => "per-tensor",
        })
    }
}

/// How entries tied at the magnitude threshold are resolved.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TiePolicy {
    /// Keep exactly `ceil(k * N)` entries; among equal magnitudes prefer the
    /// earlier canonical position (tensor name, then flat index).
    #[default]
    KeepCount,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrimSpec {
    pub k: f64,
    #[serde(default)]
    pub scope: TrimScope,
    #[serde(default)]
    pub tie_policy: TiePolicy,
}

impl TrimSpec {
    pub fn global(k: f64) -> Self {
        TrimSpec {
            k,
            scope: TrimScope::Global,
            tie_policy: TiePolicy::KeepCount,
        }
    }

    pub fn per_tensor(k: f64) -> Self {
        TrimSpec {
            scope: TrimScope::PerTensor,
            ..TrimSpec::global(k)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k <= 1.0) {
            return Err(Error::Config(format!("trim k must lie in (0, 1], got {}", self.k)));
        }
        Ok(())
    }
}

/// Number of entries kept out of `n` for fraction `k`: `min(n, ceil(k * n))`.
///
/// Products that land within rounding noise of an integer are treated as that
/// integer, so `k = 0.1, n = 1000` keeps 100 rather than 101.
pub fn retain_count(k: f64, n: usize) -> usize {
    let x = k * n as f64;
    let nearest = x.round();
    let count = if (x - nearest).abs() <= 1e-9 * x.abs().max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (count.max(0.0) as usize).min(n)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeConfig {
    pub method: MergeMethod,
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trim: Option<TrimSpec>,
}

impl MergeConfig {
    pub fn task_arithmetic(lambda: f64) -> Self {
        MergeConfig {
            method: MergeMethod::TaskArithmetic,
            lambda,
            trim: None,
        }
    }

    pub fn ties(lambda: f64, trim: TrimSpec) -> Self {
        MergeConfig {
            method: MergeMethod::Ties,
            lambda,
            trim: Some(trim),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Config(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        match (self.method, &self.trim) {
            (MergeMethod::Ties, None) => {
                Err(Error::Config("method ties requires a trim spec".into()))
            }
            (_, Some(t)) => t.validate(),
            _ => Ok(()),
        }
    }

    /// Non-fatal remarks for reports.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.lambda > 1.0 {
            out.push(format!("lambda {} lies outside [0, 1]", self.lambda));
        }
        out
    }
}

fn require_kind(c: &Checkpoint, expected: Kind) -> Result<()> {
    let actual = c.kind()?;
    if actual != expected {
        return Err(Error::WrongKind {
            expected: expected.as_str(),
            actual: actual.to_string(),
        });
    }
    Ok(())
}

fn non_finite_at(name: &str, values: &[f32]) -> Result<()> {
    match par::position_f32(values, |x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            name: name.to_string(),
            index,
        }),
        None => Ok(()),
    }
}

/// Task vector `finetuned - base`.
pub fn diff(finetuned: &Checkpoint, base: &Checkpoint) -> Result<Checkpoint> {
    validate_compatible(finetuned, base)?;
    require_kind(finetuned, Kind::Model)?;
    require_kind(base, Kind::Model)?;
    let ft_digest = finetuned.digest()?;
    let base_digest = base.digest()?;
    let mut tau = finetuned.map_tensors(|name, t| {
        let values = par::zip_map_f32(t.values(), base.tensors()[name].values(), |a, b| a - b);
        non_finite_at(name, &values)?;
        Ok(values)
    })?;
    tau.clear_meta();
    tau.set_meta(META_KIND, Kind::Delta.as_str());
    tau.set_stage(finetuned.stage()?);
    tau.set_meta(META_SOURCE_FINETUNED, ft_digest.to_string());
    tau.set_meta(META_SOURCE_BASE, base_digest.to_string());
    tau.set_meta(META_PARENT, base_digest.to_string());
    Ok(tau)
}

/// Selection key: smaller sorts first. Descending magnitude, then ascending
/// canonical position. Magnitude order of finite f32 equals the order of the
/// sign-cleared bit patterns.
#[inline]
fn key(value: f32, position: u64) -> (u32, u64) {
    (u32::MAX - (value.to_bits() & 0x7fff_ffff), position)
}

/// Largest key that is still kept when retaining `m` of the given values.
/// `m` must be in `1..values.len()`.
fn threshold<'a, I>(values: I, total: usize, m: usize) -> (u32, u64)
where
    I: Iterator<Item = &'a [f32]>,
{
    let mut keys: Vec<(u32, u64)> = Vec::with_capacity(total);
    let mut pos = 0u64;
    for chunk in values {
        keys.extend(chunk.iter().map(|&v| {
            let k = key(v, pos);
            pos += 1;
            k
        }));
    }
    let (_, kth, _) = keys.select_nth_unstable(m - 1);
    *kth
}

fn trim_slice(values: &[f32], start: u64, cutoff: (u32, u64)) -> Vec<f32> {
    par::map_f32(values, |i, v| {
        if key(v, start + i as u64) <= cutoff {
            v
        } else {
            0.0
        }
    })
}

/// Keeps the `ceil(k * N)` largest-magnitude entries and writes `+0.0`
/// everywhere else.
pub fn trim(tau: &Checkpoint, spec: &TrimSpec) -> Result<Checkpoint> {
    spec.validate()?;
    require_kind(tau, Kind::Delta)?;
    let mut out = match spec.scope {
        TrimScope::Global => {
            let n = tau.num_params();
            let m = retain_count(spec.k, n);
            if m >= n {
                tau.clone()
            } else {
                let cutoff = threshold(tau.tensors().values().map(|t| t.values()), n, m);
                let mut start = 0u64;
                tau.map_tensors(|_, t| {
                    let v = trim_slice(t.values(), start, cutoff);
                    start += t.len() as u64;
                    Ok(v)
                })?
            }
        }
        TrimScope::PerTensor => tau.map_tensors(|_, t| {
            let n = t.len();
            let m = retain_count(spec.k, n);
            if m >= n {
                return Ok(t.values().to_vec());
            }
            let cutoff = threshold(std::iter::once(t.values()), n, m);
            Ok(trim_slice(t.values(), 0, cutoff))
        })?,
    };
    out.set_meta("trim_k", spec.k.to_string());
    out.set_meta("trim_scope", spec.scope.to_string());
    Ok(out)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("lambda must be finite, got {lambda}")))
    }
}

fn tag_applied(mut out: Checkpoint, base: &Checkpoint, tau: &Checkpoint, lambda: f64) -> Result<Checkpoint> {
    let base_digest = base.digest()?;
    out.clear_meta();
    out.set_meta(META_KIND, Kind::Model.as_str());
    out.set_meta(META_STAGE, tau.stage()?.to_string());
    out.set_meta("base_digest", base_digest.to_string());
    out.set_meta("tau_digest", tau.digest()?.to_string());
    out.set_meta("lambda", lambda.to_string());
    out.set_meta(META_PARENT, base_digest.to_string());
    Ok(out)
}

/// `base + lambda * tau`.
///
/// Entries where `lambda * tau` is zero keep the base value bit-for-bit, so
/// `lambda = 0` reproduces the base digest exactly.
pub fn apply(base: &Checkpoint, tau: &Checkpoint, lambda: f64) -> Result<Checkpoint> {
    validate_compatible(base, tau)?;
    require_kind(base, Kind::Model)?;
    require_kind(tau, Kind::Delta)?;
    check_lambda(lambda)?;
    let out = base.map_tensors(|name, t| {
        let values = par::zip_map_f32(t.values(), tau.tensors()[name].values(), |b, d| {
            let step = lambda * f64::from(d);
            if step == 0.0 {
                b
            } else {
                (f64::from(b) + step) as f32
            }
        });
        non_finite_at(name, &values)?;
        Ok(values)
    })?;
    tag_applied(out, base, tau, lambda)
}

/// One editing step: returns the edited model and the (possibly trimmed)
/// task vector that was applied.
///
/// The update for each retained entry is `lambda * (finetuned - base)` with
/// the difference taken in f64, not the f32-rounded value stored in `tau`.
/// With `lambda = 1` and no trim this reproduces `finetuned` exactly.
/// `apply(base, tau, lambda)` agrees with the result to within one f32
/// rounding of the delta.
pub fn edit_step(
    base: &Checkpoint,
    finetuned: &Checkpoint,
    cfg: &MergeConfig,
) -> Result<(Checkpoint, Checkpoint)> {
    cfg.validate()?;
    let mut tau = diff(finetuned, base)?;
    if cfg.method == MergeMethod::Ties {
        let spec = cfg.trim.as_ref().expect("validated");
        tau = trim(&tau, spec)?;
    }
    let lambda = cfg.lambda;
    let out = base.map_tensors(|name, t| {
        let ft = finetuned.tensors()[name].values();
        let kept = tau.tensors()[name].values();
        let values = par::map_f32(t.values(), |i, b| {
            if lambda == 0.0 || kept[i] == 0.0 {
                b
            } else {
                (f64::from(b) + lambda * (f64::from(ft[i]) - f64::from(b))) as f32
            }
        });
        non_finite_at(name, &values)?;
        Ok(values)
    })?;
    let edited = tag_applied(out, base, &tau, lambda)?;
    Ok((edited, tau))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityStats {
    pub n_total: usize,
    pub n_nonzero: usize,
    pub l2_norm: f64,
    pub max_abs: f64,
}

/// Counts and norms of a task vector. The L2 norm is a pairwise sum over the
/// canonical ordering, so it is identical from run to run.
pub fn sparsity_stats(tau: &Checkpoint) -> SparsityStats {
    let mut squares = Vec::with_capacity(tau.num_params());
    let mut n_nonzero = 0;
    let mut max_abs = 0.0f64;
    for t in tau.tensors().values() {
        for &v in t.values() {
            let v = f64::from(v);
            if v != 0.0 {
                n_nonzero += 1;
            }
            max_abs = max_abs.max(v.abs());
            squares.push(v * v);
        }
    }
    SparsityStats {
        n_total: squares.len(),
        n_nonzero,
        l2_norm: par::pairwise_sum(&squares).sqrt(),
        max_abs,
    }
}
