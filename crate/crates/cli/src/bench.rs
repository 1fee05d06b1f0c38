use std::collections::BTreeMap;
use std::path::Path;
use std::time::SystemTime;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use seqedit::metrics::{self, Format, MetricsTable};
use seqedit::pipeline::{compare_intermediate, lambda_sweep, train_initial, EvalSuite};
use seqedit::toybench::baselines::run_method;
use seqedit::toybench::Method;
use seqedit::{BenchConfig, StageRecord};

use crate::output::{timestamp, write_atomic, OutDir, RunManifest, Usage};

/// Contents of `stages/stage_{t}.json`.
#[derive(Serialize, Deserialize)]
pub struct StageFile {
    pub stage: usize,
    pub records: Vec<StageRecord>,
}

pub fn load_config(path: Option<&Path>) -> anyhow::Result<BenchConfig> {
    let Some(path) = path else {
        return Ok(BenchConfig::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    BenchConfig::from_json(&text).with_context(|| format!("in {}", path.display()))
}

fn parse_methods(names: &[String]) -> anyhow::Result<Vec<Method>> {
    let mut out = Vec::new();
    let mut bad = Vec::new();
    for name in names.iter().map(|n| n.trim()).filter(|n| !n.is_empty()) {
        match name.parse::<Method>() {
            Ok(m) if !out.contains(&m) => out.push(m),
            Ok(_) => {}
            Err(_) => bad.push(name.to_string()),
        }
    }
    if !bad.is_empty() {
        anyhow::bail!(Usage(format!(
            "unknown method(s) {}; expected a subset of {}",
            bad.join(", "),
            Method::ALL.map(Method::name).join(",")
        )));
    }
    if out.is_empty() {
        anyhow::bail!(Usage("--methods is empty".into()));
    }
    Ok(out)
}

/// Per-stage tables for every method, with WERR against finetune where it
/// was run.
pub fn stage_tables(records: &[StageRecord]) -> anyhow::Result<Vec<MetricsTable>> {
    let mut by_stage: BTreeMap<usize, Vec<&StageRecord>> = BTreeMap::new();
    for r in records {
        by_stage.entry(r.stage).or_default().push(r);
    }
    let mut out = Vec::new();
    for (stage, recs) in by_stage {
        let mut tables = recs
            .iter()
            .map(|r| MetricsTable::new(stage, r.method.clone(), &r.metrics_edited))
            .collect::<seqedit::Result<Vec<_>>>()?;
        if let Some(base) = tables.iter().find(|t| t.method == Method::Finetune.name()).cloned() {
            for t in &mut tables {
                // a zero baseline leaves WERR undefined; the column stays blank
                let _ = t.set_werr_against(&base);
            }
        }
        out.extend(tables);
    }
    Ok(out)
}

fn render(tables: &[MetricsTable], format: Format) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    metrics::emit(tables, format, &mut buf)?;
    Ok(buf)
}

pub fn curve_rows(records: &[StageRecord]) -> anyhow::Result<Vec<metrics::CurveRow>> {
    let mut series: Vec<(String, Vec<(usize, f64)>)> = Vec::new();
    for r in records {
        let point = (r.stage, r.awer_edited());
        match series.iter_mut().find(|(m, _)| *m == r.method) {
            Some((_, pts)) => pts.push(point),
            None => series.push((r.method.clone(), vec![point])),
        }
    }
    Ok(metrics::stage_curve(&series)?)
}

fn write_stage_files(out: &mut OutDir, records: &[StageRecord]) -> anyhow::Result<()> {
    let mut by_stage: BTreeMap<usize, Vec<StageRecord>> = BTreeMap::new();
    for r in records {
        by_stage.entry(r.stage).or_default().push(r.clone());
    }
    for (stage, records) in by_stage {
        let mut bytes = serde_json::to_vec_pretty(&StageFile { stage, records })?;
        bytes.push(b'\n');
        out.write(&format!("stages/stage_{stage}.json"), &bytes)?;
    }
    Ok(())
}

pub fn run(config: &BenchConfig, out_dir: &Path, methods: &[String]) -> anyhow::Result<()> {
    let methods = parse_methods(methods)?;
    let cfg = config.resolve()?;
    let started = SystemTime::now();
    let mut out = OutDir::create(out_dir)?;

    let datasets = cfg.datasets()?;
    let eval = EvalSuite::new(&datasets, cfg.eval_split);
    let theta0 = train_initial(&cfg, &datasets[0])?;
    out.write("checkpoints/theta0.ckpt", &theta0.to_bytes()?)?;
    let initial = MetricsTable::new(0, "initial", &eval.evaluate(&theta0, 0)?)?;
    out.write("tables/initial.csv", &render(&[initial], Format::Csv)?)?;

    let mut records: Vec<StageRecord> = Vec::new();
    for &method in &methods {
        eprintln!("running {method}");
        match run_method(method, &cfg, &datasets, &eval, &theta0) {
            Ok(run) => {
                for r in &run.records {
                    for w in &r.warnings {
                        eprintln!("warning: {method} stage {}: {w}", r.stage);
                    }
                }
                records.extend(run.records);
                out.write(&format!("checkpoints/{method}.ckpt"), &run.final_model.to_bytes()?)?;
            }
            Err(seqedit::Error::StageFailed { stage, completed, source }) => {
                records.extend(completed);
                write_stage_files(&mut out, &records)?;
                return Err(anyhow::Error::new(*source)
                    .context(format!("{method} failed at stage {stage}; completed stages were saved")));
            }
            Err(e) => return Err(e.into()),
        }
    }

    write_stage_files(&mut out, &records)?;
    let tables = stage_tables(&records)?;
    out.write("tables/stages.csv", &render(&tables, Format::Csv)?)?;
    let last = tables.iter().map(|t| t.stage).max();
    let finals: Vec<MetricsTable> = tables.iter().filter(|t| Some(t.stage) == last).cloned().collect();
    if !finals.is_empty() {
        out.write("tables/final.csv", &render(&finals, Format::Csv)?)?;
        let mut curve = Vec::new();
        metrics::emit_curve(&curve_rows(&records)?, Format::Csv, &mut curve)?;
        out.write("tables/curve.csv", &curve)?;
    }

    let mut compare = Vec::new();
    for &method in methods.iter().filter(|m| matches!(m, Method::TaskArith | Method::Ties)) {
        let recs: Vec<StageRecord> = records.iter().filter(|r| r.method == method.name()).cloned().collect();
        for row in compare_intermediate(&recs)? {
            compare.push(vec![
                method.name().to_string(),
                row.stage.to_string(),
                metrics::fmt_num(row.awer_intermediate),
                metrics::fmt_num(row.awer_edited),
                row.werr.map(metrics::fmt_num).unwrap_or_default(),
            ]);
        }
    }
    if !compare.is_empty() {
        let mut buf = Vec::new();
        metrics::write_csv(&mut buf, &["method", "stage", "awer_intermediate", "awer_edited", "werr"], &compare)?;
        out.write("tables/compare.csv", &buf)?;
    }

    out.finish(RunManifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        seed: config.seed,
        methods: methods.iter().map(|m| m.name().to_string()).collect(),
        config: config.clone(),
        started: timestamp(started),
        finished: String::new(),
        files: Vec::new(),
    })
}

pub fn sweep(config: &BenchConfig, stage: usize, grid: &[f64], out: Option<&Path>) -> anyhow::Result<()> {
    let cfg = config.resolve()?;
    if let Some(bad) = grid.iter().find(|l| l.is_finite() && !(0.0..=1.0).contains(*l)) {
        eprintln!("warning: lambda {bad} is outside [0, 1]");
    }
    let rows = lambda_sweep(&cfg, stage, grid)?;
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                metrics::fmt_num(r.lambda),
                metrics::fmt_num(r.previous),
                metrics::fmt_num(r.new),
                metrics::fmt_num(r.all),
            ]
        })
        .collect();
    let mut buf = Vec::new();
    metrics::write_csv(&mut buf, &["lambda", "previous", "new", "all"], &body)?;
    match out {
        Some(path) => write_atomic(path, &buf),
        None => {
            print!("{}", String::from_utf8(buf).expect("ascii csv"));
            Ok(())
        }
    }
}
