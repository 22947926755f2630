use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::evaluate::{EntryKind, EntryResult, Evaluation};
use super::metrics::{MeanMetrics, Metrics};
use crate::error::{Error, Result};

/// Marker written wherever a ratio has a zero denominator.
pub const UNDEFINED: &str = "undefined";

/// A fraction as a percentage with two decimals, trailing zeros dropped:
/// `0.969` renders as `96.9`, `0.96` as `96`.
pub fn format_percent(v: Option<f64>) -> String {
    match v {
        None => UNDEFINED.to_string(),
        Some(v) => {
            let s = format!("{:.2}", v * 100.0);
            let s = s.trim_end_matches('0').trim_end_matches('.');
            if s == "-0" {
                "0".to_string()
            } else {
                s.to_string()
            }
        }
    }
}

fn row(name: &str, m: &MeanMetrics) -> String {
    format!(
        "{name:<10} {} {} {} {}",
        format_percent(m.acc),
        format_percent(m.sen),
        format_percent(m.prec),
        format_percent(m.spec)
    )
}

/// Plain-text table of fold-averaged metrics, one section per entry kind.
/// Sections without entries are left out.
pub fn render_table(eval: &Evaluation) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Average metrics (%) over {} folds, {} test components",
        eval.n_folds, eval.n_test_records
    );
    for (kind, title) in [
        (EntryKind::Single, "Single-domain models"),
        (EntryKind::Combined, "Combined models"),
        (EntryKind::Schema, "Voting schemes"),
    ] {
        let rows: Vec<&EntryResult> = eval.entries.iter().filter(|e| e.kind == kind).collect();
        if rows.is_empty() {
            continue;
        }
        let _ = writeln!(out, "\n{title}\n{:<10} ACC SEN PREC SPEC", "Model");
        for e in rows {
            let _ = writeln!(out, "{}", row(&e.name, &e.mean));
        }
    }
    out
}

fn csv_value(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |v| v.to_string())
}

fn per_fold_csv(folds: &[Metrics]) -> String {
    let mut out = String::from("fold,tp,fp,tn,fn,acc,sen,prec,spec\n");
    for (k, m) in folds.iter().enumerate() {
        let _ = writeln!(
            out,
            "{k},{},{},{},{},{},{},{},{}",
            m.tp,
            m.fp,
            m.tn,
            m.fn_,
            csv_value(m.acc),
            csv_value(m.sen),
            csv_value(m.prec),
            csv_value(m.spec)
        );
    }
    out
}

fn file_name(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes `report.txt`, `summary.csv`, `metrics.json` and one
/// `per_fold/<entry>.csv` per model or schema into `dir`.
pub fn emit_report(eval: &Evaluation, dir: &Path) -> Result<Vec<PathBuf>> {
    if eval.entries.is_empty() {
        return Err(Error::Evaluation("nothing to report".into()));
    }
    let write = |path: PathBuf, bytes: &[u8]| -> Result<PathBuf> {
        std::fs::write(&path, bytes)
            .map_err(|e| Error::from(e).context(path.display().to_string()))?;
        Ok(path)
    };
    std::fs::create_dir_all(dir.join("per_fold"))?;
    let mut written = vec![
        write(dir.join("report.txt"), render_table(eval).as_bytes())?,
        write(dir.join("metrics.json"), &serde_json::to_vec_pretty(eval)?)?,
    ];
    let mut summary = String::from("kind,name,acc,sen,prec,spec\n");
    for e in &eval.entries {
        let kind = serde_json::to_value(e.kind)?;
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{}",
            kind.as_str().unwrap_or_default(),
            e.name,
            format_percent(e.mean.acc),
            format_percent(e.mean.sen),
            format_percent(e.mean.prec),
            format_percent(e.mean.spec)
        );
        written.push(write(
            dir.join("per_fold")
                .join(format!("{}.csv", file_name(&e.name))),
            per_fold_csv(&e.per_fold).as_bytes(),
        )?);
    }
    written.push(write(dir.join("summary.csv"), summary.as_bytes())?);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percent_format() {
        assert_eq!(format_percent(Some(0.9627)), "96.27");
        assert_eq!(format_percent(Some(0.969)), "96.9");
        assert_eq!(format_percent(Some(0.96)), "96");
        assert_eq!(format_percent(Some(1.0)), "100");
        assert_eq!(format_percent(Some(0.0)), "0");
        assert_eq!(format_percent(Some(0.123456)), "12.35");
        assert_eq!(format_percent(None), "undefined");
    }
}
