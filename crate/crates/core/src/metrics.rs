//! Evaluation quantities and table output.
//!
//! `awer` is the unweighted mean error over the seen domains; `werr` is the
//! relative reduction of a method's AWER against a baseline, in percent.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unweighted mean over seen domains.
pub fn awer(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::Empty("AWER over zero domains".into()));
    }
    if let Some(bad) = errors.iter().find(|e| !e.is_finite()) {
        return Err(Error::Config(format!("non-finite error value {bad}")));
    }
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

/// `100 * (baseline - method) / baseline`.
pub fn werr(baseline_awer: f64, method_awer: f64) -> Result<f64> {
    if !(baseline_awer.is_finite() && baseline_awer > 0.0) {
        return Err(Error::Config(format!(
            "WERR needs a positive baseline AWER, got {baseline_awer}"
        )));
    }
    Ok(100.0 * (baseline_awer - method_awer) / baseline_awer)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub stage: usize,
    pub method: String,
    pub per_domain: BTreeMap<usize, f64>,
    pub awer: f64,
    pub werr: Option<f64>,
}

impl MetricsTable {
    /// Table over domains `0..errors.len()`.
    pub fn new(stage: usize, method: impl Into<String>, errors: &[f64]) -> Result<Self> {
        Ok(MetricsTable {
            stage,
            method: method.into(),
            per_domain: errors.iter().copied().enumerate().collect(),
            awer: awer(errors)?,
            werr: None,
        })
    }

    /// Fills `werr` relative to a baseline table at the same stage.
    pub fn set_werr_against(&mut self, baseline: &MetricsTable) -> Result<()> {
        if baseline.stage != self.stage {
            return Err(Error::Config(format!(
                "baseline is at stage {}, table at stage {}",
                baseline.stage, self.stage
            )));
        }
        self.werr = Some(werr(baseline.awer, self.awer)?);
        Ok(())
    }

    fn check(&self) -> Result<()> {
        if self.per_domain.is_empty() {
            return Err(Error::Empty(format!(
                "per-domain errors for {:?} at stage {}",
                self.method, self.stage
            )));
        }
        Ok(())
    }
}

/// One point of a stage curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub stage: usize,
    pub method: String,
    pub awer: f64,
}

/// Long-format AWER curve, one row per (method, stage). Every method must
/// cover stages `1..=T`, where T is the largest stage seen in any series.
pub fn stage_curve(series: &[(String, Vec<(usize, f64)>)]) -> Result<Vec<CurveRow>> {
    let last = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|p| p.0))
        .max()
        .ok_or_else(|| Error::Empty("stage curve".into()))?;
    let mut rows = Vec::new();
    for (method, points) in series {
        let by_stage: BTreeMap<usize, f64> = points.iter().copied().collect();
        let missing: Vec<usize> = (1..=last).filter(|s| !by_stage.contains_key(s)).collect();
        if !missing.is_empty() {
            return Err(Error::MissingStages {
                method: method.clone(),
                stages: missing,
            });
        }
        rows.extend(by_stage.into_iter().filter(|(s, _)| *s >= 1).map(|(stage, awer)| CurveRow {
            stage,
            method: method.clone(),
            awer,
        }));
    }
    Ok(rows)
}

/// `%g`-style rendering with six significant digits.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if (-4..6).contains(&exp) {
        trim_zeros(format!("{:.*}", (5 - exp) as usize, x))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa.to_string()), exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Md,
}

/// Writes plain CSV rows. Fields are numbers and identifiers, so no quoting.
pub fn write_csv<W: Write>(mut w: W, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

fn write_md<W: Write>(mut w: W, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    writeln!(w, "| {} |", header.join(" | "))?;
    let rule: Vec<&str> = header.iter().map(|_| "---").collect();
    writeln!(w, "|{}|", rule.join("|"))?;
    for row in rows {
        writeln!(w, "| {} |", row.join(" | "))?;
    }
    Ok(())
}

/// Emits metrics tables. CSV columns: `stage, method, domain_0..domain_T,
/// awer, werr`, with blanks for unseen domains and missing WERR.
pub fn emit<W: Write>(tables: &[MetricsTable], format: Format, w: W) -> Result<()> {
    if tables.is_empty() {
        return Err(Error::Empty("metrics table list".into()));
    }
    for t in tables {
        t.check()?;
    }
    if format == Format::Json {
        let mut w = w;
        serde_json::to_writer_pretty(&mut w, tables)?;
        writeln!(w)?;
        return Ok(());
    }
    let n_domains = tables
        .iter()
        .filter_map(|t| t.per_domain.keys().next_back())
        .max()
        .map_or(0, |m| m + 1);
    let rows: Vec<Vec<String>> = tables
        .iter()
        .map(|t| {
            let mut row = vec![t.stage.to_string(), t.method.clone()];
            row.extend((0..n_domains).map(|d| opt(t.per_domain.get(&d).copied())));
            row.push(fmt_num(t.awer));
            row.push(opt(t.werr));
            row
        })
        .collect();
    let mut header: Vec<String> = vec!["stage".into(), "method".into()];
    header.extend((0..n_domains).map(|d| format!("domain_{d}")));
    header.push("awer".into());
    header.push("werr".into());
    match format {
        Format::Csv => {
            let h: Vec<&str> = header.iter().map(String::as_str).collect();
            write_csv(w, &h, &rows)
        }
        Format::Md => {
            // drop the stage column; markdown is for a single final stage
            let header: Vec<String> = header[1..].to_vec();
            let rows: Vec<Vec<String>> = rows.into_iter().map(|r| r[1..].to_vec()).collect();
            let header: Vec<String> = header
                .into_iter()
                .map(|h| match h.as_str() {
                    "awer" => "AWER".to_string(),
                    "werr" => "WERR (%)".to_string(),
                    _ => h,
                })
                .collect();
            write_md(w, &header, &rows)
        }
        Format::Json => unreachable!(),
    }
}

/// Emits a stage curve in long format: `stage, method, awer`.
pub fn emit_curve<W: Write>(rows: &[CurveRow], format: Format, mut w: W) -> Result<()> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.stage.to_string(), r.method.clone(), fmt_num(r.awer)])
        .collect();
    match format {
        Format::Csv => write_csv(w, &["stage", "method", "awer"], &body),
        Format::Md => write_md(w, &["stage".into(), "method".into(), "AWER".into()], &body),
        Format::Json => {
            serde_json::to_writer_pretty(&mut w, rows)?;
            writeln!(w)?;
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn awer_examples() {
        let ft = awer(&[13.2, 11.5, 8.9, 16.9, 9.0, 7.8]).unwrap();
        assert!((ft - 11.2167).abs() < 1e-4);
        let ties = awer(&[11.3, 8.8, 8.2, 14.2, 8.8, 5.9]).unwrap();
        assert!((ties - 9.5333).abs() < 1e-4);
        assert_eq!(awer(&[7.25]).unwrap(), 7.25);
        assert!(matches!(awer(&[]), Err(Error::Empty(_))));
        assert!(awer(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn werr_examples() {
        assert!((werr(11.2167, 9.5333).unwrap() - 15.0).abs() < 0.05);
        assert_eq!(werr(4.0, 4.0).unwrap(), 0.0);
        assert!(werr(0.0, 1.0).is_err());
        assert!(werr(-1.0, 1.0).is_err());
        assert!(werr(10.0, 11.0).unwrap() < 0.0);
    }

    #[test]
    fn uoe_row_is_rounding_sensitive() {
        let w = werr(11.2167, 10.45).unwrap();
        assert!((w - 6.835).abs() < 0.005);
        assert!((w - 6.3).abs() > 0.5);
        let rounded = werr(11.2, 10.5).unwrap();
        assert!((rounded - 6.25).abs() < 1e-9);
    }

    #[test]
    fn werr_against_other_stage_is_rejected() {
        let base = MetricsTable::new(1, "finetune", &[10.0, 12.0]).unwrap();
        let mut other = MetricsTable::new(2, "ties", &[9.0, 10.0, 11.0]).unwrap();
        assert!(other.set_werr_against(&base).is_err());
        let mut same = MetricsTable::new(1, "ties", &[9.0, 10.0]).unwrap();
        same.set_werr_against(&base).unwrap();
        assert!((same.werr.unwrap() - 100.0 * 1.5 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn fmt_num_matches_printf_g() {
        assert_eq!(fmt_num(11.216666666), "11.2167");
        assert_eq!(fmt_num(15.0), "15");
        assert_eq!(fmt_num(-3.5), "-3.5");
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(0.000123456789), "0.000123457");
        assert_eq!(fmt_num(1234567.0), "1.23457e+06");
        assert_eq!(fmt_num(999999.7), "1e+06");
        assert_eq!(fmt_num(1e-5), "1e-05");
        assert_eq!(fmt_num(100.0), "100");
    }

    #[test]
    fn curve_from_figure_fixture() {
        let ft = vec![(1, 11.7), (2, 14.7), (3, 14.3), (4, 14.6), (5, 11.2)];
        let rows = stage_curve(&[("finetune".to_string(), ft)]).unwrap();
        let mut buf = Vec::new();
        emit_curve(&rows, Format::Csv, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "stage,method,awer\n1,finetune,11.7\n2,finetune,14.7\n3,finetune,14.3\n4,finetune,14.6\n5,finetune,11.2\n"
        );
    }

    #[test]
    fn curve_single_point_and_gaps() {
        let rows = stage_curve(&[("ties".to_string(), vec![(1, 3.0)])]).unwrap();
        assert_eq!(rows.len(), 1);
        let err = stage_curve(&[
            ("a".to_string(), vec![(1, 1.0), (2, 1.0), (3, 1.0)]),
            ("b".to_string(), vec![(1, 1.0)]),
        ])
        .unwrap_err();
        match err {
            Error::MissingStages { method, stages } => {
                assert_eq!(method, "b");
                assert_eq!(stages, vec![2, 3]);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn emit_rejects_empty_tables() {
        let t = MetricsTable {
            stage: 0,
            method: "x".into(),
            per_domain: BTreeMap::new(),
            awer: 0.0,
            werr: None,
        };
        assert!(emit(&[t], Format::Csv, Vec::new()).is_err());
        assert!(emit(&[], Format::Csv, Vec::new()).is_err());
    }

    #[test]
    fn emit_is_deterministic_and_blank_pads() {
        let a = MetricsTable::new(1, "finetune", &[10.0, 20.0]).unwrap();
        let mut b = MetricsTable::new(2, "ties", &[5.0, 6.0, 7.0]).unwrap();
        b.werr = Some(12.5);
        let mut x = Vec::new();
        let mut y = Vec::new();
        emit(&[a.clone(), b.clone()], Format::Csv, &mut x).unwrap();
        emit(&[a, b], Format::Csv, &mut y).unwrap();
        assert_eq!(x, y);
        assert_eq!(
            String::from_utf8(x).unwrap(),
            "stage,method,domain_0,domain_1,domain_2,awer,werr\n1,finetune,10,20,,15,\n2,ties,5,6,7,6,12.5\n"
        );
    }

    #[test]
    fn json_mirrors_field_names() {
        let t = MetricsTable::new(1, "ties", &[1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        emit(&[t], Format::Json, &mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        let obj = v[0].as_object().unwrap();
        let keys: Vec<&String> = obj.keys().collect();
        assert_eq!(keys, ["awer", "method", "per_domain", "stage", "werr"]);
    }
}
