use std::path::Path;

use serde::Serialize;

use seqedit::edit::{self, TrimScope, TrimSpec};
use seqedit::{Checkpoint, SparsityStats};

use crate::output::write_atomic;
use crate::Scope;

fn save(ckpt: &Checkpoint, out: &Path) -> anyhow::Result<()> {
    write_atomic(out, &ckpt.to_bytes()?)
}

pub fn diff(minuend: &Path, subtrahend: &Path, out: &Path) -> anyhow::Result<()> {
    let tau = edit::diff(&Checkpoint::load(minuend)?, &Checkpoint::load(subtrahend)?)?;
    save(&tau, out)
}

pub fn trim(input: &Path, k: f64, scope: Scope, out: &Path) -> anyhow::Result<()> {
    let spec = match scope {
        Scope::Global => TrimSpec::global(k),
        Scope::PerTensor => TrimSpec::per_tensor(k),
    };
    debug_assert!(matches!(spec.scope, TrimScope::Global | TrimScope::PerTensor));
    save(&edit::trim(&Checkpoint::load(input)?, &spec)?, out)
}

pub fn apply(base: &Path, tau: &Path, lambda: f64, out: &Path) -> anyhow::Result<()> {
    if !(0.0..=1.0).contains(&lambda) && lambda.is_finite() {
        eprintln!("warning: lambda {lambda} is outside [0, 1]");
    }
    let edited = edit::apply(&Checkpoint::load(base)?, &Checkpoint::load(tau)?, lambda)?;
    save(&edited, out)
}

#[derive(Serialize)]
struct Stats {
    digest: String,
    kind: String,
    stage: u32,
    n_tensors: usize,
    #[serde(flatten)]
    sparsity: SparsityStats,
}

pub fn stats(input: &Path, json: bool) -> anyhow::Result<()> {
    let c = Checkpoint::load(input)?;
    let s = Stats {
        digest: c.digest()?.to_string(),
        kind: c.kind()?.to_string(),
        stage: c.stage()?,
        n_tensors: c.tensors().len(),
        sparsity: edit::sparsity_stats(&c),
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&s)?);
    } else {
        println!("digest     {}", s.digest);
        println!("kind       {}", s.kind);
        println!("stage      {}", s.stage);
        println!("tensors    {}", s.n_tensors);
        println!("params     {}", s.sparsity.n_total);
        println!("nonzero    {}", s.sparsity.n_nonzero);
        println!("l2_norm    {}", s.sparsity.l2_norm);
        println!("max_abs    {}", s.sparsity.max_abs);
    }
    Ok(())
}
