//! Rendering of weakness and comparison reports as aligned text tables,
//! CSV or JSON.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::evaluation::{read_versioned, ComparisonReport, EvalReport, COMPARISON_KIND, WEAKNESS_KIND};
use crate::util;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::invalid("format", format!("`{other}` is not table, csv or json"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Report {
    Weakness(EvalReport),
    Comparison(ComparisonReport),
}

impl Report {
    /// Reads either report kind, dispatching on its `kind` field.
    pub fn load(path: &Path) -> Result<Self> {
        let value: serde_json::Value = util::read_json(path)?;
        match value.get("kind").and_then(|k| k.as_str()) {
            Some(WEAKNESS_KIND) => Ok(Report::Weakness(EvalReport::read_json(path)?)),
            Some(COMPARISON_KIND) => Ok(Report::Comparison(read_versioned(path)?)),
            other => Err(Error::invalid(
                "report",
                format!("{}: unknown kind {other:?}", path.display()),
            )),
        }
    }

    pub fn render(&self, format: ReportFormat) -> Result<String> {
        match (self, format) {
            (Report::Weakness(r), ReportFormat::Table) => Ok(weakness_table(r)),
            (Report::Comparison(r), ReportFormat::Table) => Ok(comparison_table(r)),
            (Report::Weakness(r), ReportFormat::Csv) => r.to_csv(),
            (Report::Comparison(r), ReportFormat::Csv) => r.to_csv(),
            (Report::Weakness(r), ReportFormat::Json) => Ok(serde_json::to_string_pretty(r)? + "\n"),
            (Report::Comparison(r), ReportFormat::Json) => Ok(serde_json::to_string_pretty(r)? + "\n"),
        }
    }
}

pub fn render_report(path: &Path, format: ReportFormat) -> Result<String> {
    Report::load(path)?.render(format)
}

/// Left-aligns the first `text_cols` columns and right-aligns the rest.
fn table(header: &[&str], rows: &[Vec<String>], text_cols: usize) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &mut dyn Iterator<Item = &str>| {
        let mut out = String::new();
        for (i, (cell, w)) in cells.zip(&widths).enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            if i < text_cols {
                let _ = write!(out, "{cell:<w$}");
            } else {
                let _ = write!(out, "{cell:>w$}");
            }
        }
        out.trim_end().to_string() + "\n"
    };
    let mut out = line(&mut header.iter().copied());
    let rule: usize = widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1);
    out.push_str(&"-".repeat(rule));
    out.push('\n');
    for row in rows {
        out.push_str(&line(&mut row.iter().map(String::as_str)));
    }
    out
}

fn signed(v: f64) -> String {
    // Avoid printing "-0.00".
    let v = if v.abs() < 0.005 { 0.0 } else { v };
    format!("{v:+.2}")
}

pub fn weakness_table(r: &EvalReport) -> String {
    let rows: Vec<Vec<String>> = r
        .per_class
        .iter()
        .map(|c| vec![c.class.clone(), format!("{:.2}", c.acc5_t), format!("{:.2}", c.acc5_t_prime), signed(c.delta)])
        .collect();
    let mut out = format!("model: {}  (Acc@{}, %)\n", r.model_name, r.k);
    out.push_str(&table(&["class", "T", "T'", "delta"], &rows, 1));
    if !r.per_class.is_empty() {
        let o = &r.overall;
        out.push_str(&table(
            &["overall", "T", "T'", "delta"],
            &[vec![o.class.clone(), format!("{:.2}", o.acc5_t), format!("{:.2}", o.acc5_t_prime), signed(o.delta)]],
            1,
        ));
    }
    if !r.per_factor.is_empty() {
        let rows: Vec<Vec<String>> = r
            .per_factor
            .iter()
            .map(|f| {
                vec![
                    f.factor.to_string(),
                    f.items.to_string(),
                    format!("{:.2}", f.acc5_t),
                    format!("{:.2}", f.acc5_t_prime),
                    signed(f.delta),
                ]
            })
            .collect();
        out.push_str(&table(&["factor", "items", "T", "T'", "delta"], &rows, 1));
    }
    for n in &r.notes {
        let _ = writeln!(out, "note: {n}");
    }
    out
}

pub fn comparison_table(r: &ComparisonReport) -> String {
    let rows: Vec<Vec<String>> = r
        .rows
        .iter()
        .map(|c| {
            vec![
                c.set.clone(),
                c.class.clone(),
                format!("{:.2}", c.baseline),
                c.standard.map(|s| format!("{s:.2}")).unwrap_or_else(|| "-".into()),
                format!("{:.2}", c.counterfactual),
                signed(c.improvement()),
            ]
        })
        .collect();
    let mut out = format!("model: {}  alpha = {}  (Acc@{}, %)\n", r.model_name, r.alpha, r.k);
    out.push_str(&table(
        &["set", "class", "baseline", "standard", "counterfactual", "improvement"],
        &rows,
        2,
    ));
    for f in &r.failures {
        let _ = writeln!(out, "failed: {}: {}", f.set, f.error);
    }
    for n in &r.notes {
        let _ = writeln!(out, "note: {n}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::ComparisonRow;

    fn squash(s: &str) -> Vec<String> {
        s.lines().map(|l| l.split_whitespace().collect::<Vec<_>>().join(" ")).collect()
    }

    #[test]
    fn weakness_rows_are_aligned() {
        let r = EvalReport::from_accuracies("m", &[("Dog sled", 95.43, 80.77), ("Ski", 82.67, 40.39)]);
        let text = weakness_table(&r);
        let lines = squash(&text);
        assert!(lines.contains(&"Ski 82.67 40.39 -42.28".to_string()), "{text}");
        assert!(lines.contains(&"Dog sled 95.43 80.77 -14.66".to_string()), "{text}");
        let widths: Vec<usize> = text.lines().skip(1).take(4).map(|l| l.len()).collect();
        assert!(widths.windows(2).all(|w| w[0] == w[1]) || widths.len() < 2);
    }

    #[test]
    fn empty_report_is_header_only() {
        let r = EvalReport::from_accuracies("m", &[]);
        let text = weakness_table(&r);
        assert_eq!(text.lines().count(), 3, "{text}");
    }

    #[test]
    fn comparison_renders_improvement() {
        let mut r = ComparisonReport::new("ResNet50", 0.3);
        r.rows.push(ComparisonRow {
            set: "hard".into(),
            class: "Ski".into(),
            baseline: 78.22,
            standard: None,
            counterfactual: 83.25,
        });
        let lines = squash(&comparison_table(&r));
        assert_eq!(lines[3], "hard Ski 78.22 - 83.25 +5.03");
    }

    #[test]
    fn formats_parse() {
        assert_eq!("csv".parse::<ReportFormat>().unwrap(), ReportFormat::Csv);
        assert!("xml".parse::<ReportFormat>().is_err());
    }
}
