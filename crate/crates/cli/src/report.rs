use std::io::Write;
use std::path::Path;

use anyhow::Context;

use seqedit::metrics::{self, Format};
use seqedit::StageRecord;

use crate::bench::{curve_rows, stage_tables, StageFile};
use crate::output::Usage;
use crate::ReportFormat;

fn format(f: ReportFormat) -> Format {
    match f {
        ReportFormat::Csv => Format::Csv,
        ReportFormat::Md => Format::Md,
    }
}

/// Every record under `dir/stages`, ordered by stage file name order.
pub fn load_records(dir: &Path) -> anyhow::Result<Vec<StageRecord>> {
    let stages = dir.join("stages");
    if !dir.is_dir() {
        return Err(std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"))
            .with_context(|| format!("reading {}", dir.display()));
    }
    let mut files: Vec<(usize, std::path::PathBuf)> = Vec::new();
    if stages.is_dir() {
        for entry in std::fs::read_dir(&stages).with_context(|| format!("listing {}", stages.display()))? {
            let path = entry?.path();
            let stage = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_prefix("stage_")?.strip_suffix(".json")?.parse().ok());
            if let Some(stage) = stage {
                files.push((stage, path));
            }
        }
    }
    if files.is_empty() {
        anyhow::bail!(Usage(format!("no stage records under {}", stages.display())));
    }
    files.sort();
    let mut records = Vec::new();
    for (stage, path) in files {
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let file: StageFile = serde_json::from_str(&text)
            .map_err(seqedit::Error::from)
            .with_context(|| format!("parsing {}", path.display()))?;
        if file.stage != stage || file.records.iter().any(|r| r.stage != stage) {
            anyhow::bail!(Usage(format!("{} holds records for another stage", path.display())));
        }
        records.extend(file.records);
    }
    // method order follows first appearance, stage order within a method
    let order: Vec<String> = records.iter().fold(Vec::new(), |mut acc, r| {
        if !acc.contains(&r.method) {
            acc.push(r.method.clone());
        }
        acc
    });
    records.sort_by_key(|r| (order.iter().position(|m| *m == r.method), r.stage));
    Ok(records)
}

fn print(bytes: &[u8]) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(bytes)?;
    out.flush()?;
    Ok(())
}

pub fn render_table(records: &[StageRecord], f: ReportFormat) -> anyhow::Result<Vec<u8>> {
    let tables = stage_tables(records)?;
    let last = tables.iter().map(|t| t.stage).max();
    let finals: Vec<_> = tables.into_iter().filter(|t| Some(t.stage) == last).collect();
    let mut buf = Vec::new();
    metrics::emit(&finals, format(f), &mut buf)?;
    Ok(buf)
}

pub fn render_curve(records: &[StageRecord], f: ReportFormat) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    metrics::emit_curve(&curve_rows(records)?, format(f), &mut buf)?;
    Ok(buf)
}

pub fn table(dir: &Path, f: ReportFormat) -> anyhow::Result<()> {
    print(&render_table(&load_records(dir)?, f)?)
}

pub fn curve(dir: &Path, f: ReportFormat) -> anyhow::Result<()> {
    print(&render_curve(&load_records(dir)?, f)?)
}
