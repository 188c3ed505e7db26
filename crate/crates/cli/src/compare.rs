//! The `compare` command: final errors of several traces side by side.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::trace::{self, TraceRow};
use crate::CliError;

const ERROR_COLUMNS: [&str; 3] = ["rel_err_u", "rel_err_x", "rel_err_xi"];

/// One compared trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub label: String,
    pub iterations: usize,
    /// Final values of [`ERROR_COLUMNS`].
    pub errors: [Option<f64>; 3],
    /// Per column, whether this entry holds the smallest final value.
    pub is_min: [bool; 3],
    /// Shorter than the longest trace and padded in the per-iteration table.
    pub padded: bool,
    pub rows: Vec<TraceRow>,
}

/// `run/af/trace.csv` is labelled `af`; other files by their path.
fn label(path: &Path) -> String {
    if path.file_name().is_some_and(|f| f == "trace.csv") {
        if let Some(dir) = path.parent().and_then(|p| p.file_name()) {
            return dir.to_string_lossy().into_owned();
        }
    }
    path.display().to_string()
}

pub fn entries(paths: &[PathBuf]) -> Result<Vec<Entry>, CliError> {
    if paths.is_empty() {
        return Err(CliError::Config("compare needs at least one trace".into()));
    }
    let mut out = Vec::new();
    for p in paths {
        let rows = trace::read(p)?;
        let last = rows.last();
        let errors = ERROR_COLUMNS.map(|c| last.and_then(|r| r.get(c)));
        out.push(Entry {
            label: label(p),
            iterations: rows.last().map_or(0, |r| r.k),
            errors,
            is_min: [false; 3],
            padded: false,
            rows,
        });
    }
    let labels: Vec<&String> = out.iter().map(|e| &e.label).collect();
    let clash = labels.iter().enumerate().any(|(i, l)| labels[..i].contains(l));
    if clash {
        for (e, p) in out.iter_mut().zip(paths) {
            e.label = p.display().to_string();
        }
    }
    for c in 0..ERROR_COLUMNS.len() {
        let best = out.iter().filter_map(|e| e.errors[c]).fold(f64::INFINITY, f64::min);
        for e in &mut out {
            e.is_min[c] = e.errors[c] == Some(best);
        }
    }
    let longest = out.iter().map(|e| e.rows.len()).max().unwrap_or(0);
    for e in &mut out {
        e.padded = e.rows.len() < longest;
    }
    Ok(out)
}

fn cell(v: Option<f64>, min: bool) -> String {
    match v {
        Some(x) if min => format!("{x}*"),
        Some(x) => x.to_string(),
        None => "-".into(),
    }
}

fn table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut s = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, v)| format!("{v:<w$}", w = widths[c]))
            .collect();
        s.push_str(line.join("  ").trim_end());
        s.push('\n');
    }
    s
}

/// Human-readable comparison. `*` marks the smallest final error per column.
pub fn render_text(entries: &[Entry]) -> String {
    let mut rows = vec![vec![
        "trace".to_string(),
        "iterations".into(),
        ERROR_COLUMNS[0].into(),
        ERROR_COLUMNS[1].into(),
        ERROR_COLUMNS[2].into(),
        "note".into(),
    ]];
    for e in entries {
        let mut r = vec![e.label.clone(), e.iterations.to_string()];
        r.extend((0..3).map(|c| cell(e.errors[c], e.is_min[c])));
        r.push(if e.padded { "padded".into() } else { String::new() });
        rows.push(r);
    }
    let mut s = table(&rows);
    if entries.len() > 1 {
        let longest = entries.iter().map(|e| e.rows.len()).max().unwrap_or(0);
        let mut per_k = vec![std::iter::once("k".to_string())
            .chain(entries.iter().map(|e| e.label.clone()))
            .collect::<Vec<_>>()];
        for i in 0..longest {
            let mut r = vec![(i + 1).to_string()];
            r.extend(entries.iter().map(|e| match e.rows.get(i) {
                Some(row) => cell(row.get("rel_err_u"), false),
                None => "-".into(),
            }));
            per_k.push(r);
        }
        s.push_str("\nrel_err_u per iteration (- past the end of a shorter trace)\n");
        s.push_str(&table(&per_k));
    }
    s
}

/// Machine-readable mirror of the summary table.
pub fn render_csv(entries: &[Entry]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = [
        "trace",
        "iterations",
        "rel_err_u",
        "rel_err_x",
        "rel_err_xi",
        "min_rel_err_u",
        "min_rel_err_x",
        "min_rel_err_xi",
        "padded",
    ];
    w.write_record(header).expect("in-memory write");
    for e in entries {
        let mut r = vec![e.label.clone(), e.iterations.to_string()];
        r.extend(e.errors.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
        r.extend(e.is_min.iter().map(|b| b.to_string()));
        r.push(e.padded.to_string());
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("csv is utf-8")
}

pub fn compare(paths: &[PathBuf], csv: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let e = entries(paths)?;
    let text = if csv { render_csv(&e) } else { render_text(&e) };
    out.write_all(text.as_bytes()).map_err(|source| CliError::Io {
        context: "standard output".into(),
        source,
    })
}
