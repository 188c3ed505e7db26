//! The per-iteration `trace.csv` file.
//!
//! The first line is `# augkrylov trace schema N`; the header follows.
//! Floats are written in shortest round-trip form, missing values as empty
//! fields.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use augkrylov_core::solver::IterTrace;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

pub const COLUMNS: [&str; 12] = [
    "k",
    "lambda_x",
    "lambda_xi",
    "rel_err_u",
    "rel_err_x",
    "rel_err_xi",
    "phi",
    "proj_residual",
    "gcv",
    "A_applies",
    "At_applies",
    "Q_applies",
];

fn schema_line() -> String {
    format!("# augkrylov trace schema {SCHEMA_VERSION}")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Renders a trace in the file format.
pub fn to_csv(trace: &[IterTrace]) -> String {
    let mut out = schema_line();
    out.push('\n');
    out.push_str(&COLUMNS.join(","));
    out.push('\n');
    for t in trace {
        let fields = [
            t.k.to_string(),
            t.lambda_x.to_string(),
            t.lambda_xi.to_string(),
            opt(t.rel_error_u),
            opt(t.rel_error_x),
            opt(t.rel_error_xi),
            t.phi_value.to_string(),
            t.projected_residual.to_string(),
            t.gcv_value.to_string(),
            t.counts.a.to_string(),
            t.counts.at.to_string(),
            t.counts.q.to_string(),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn write(path: &Path, trace: &[IterTrace]) -> io::Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(to_csv(trace).as_bytes())
}

/// One parsed line of a trace file; `values` follow [`COLUMNS`] after `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub values: Vec<Option<f64>>,
}

impl TraceRow {
    pub fn get(&self, column: &str) -> Option<f64> {
        let i = COLUMNS.iter().position(|c| *c == column)?;
        self.values.get(i.checked_sub(1)?).copied().flatten()
    }
}

/// Reads a trace file, checking the schema line and the column set.
pub fn read(path: &Path) -> Result<Vec<TraceRow>, CliError> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{name}: {e}")))?;
    let schema_err = |msg: String| CliError::Config(format!("{name}: schema mismatch: {msg}"));
    let mut lines = text.lines();
    match lines.next() {
        Some(l) if l == schema_line() => {}
        Some(l) if l.starts_with("# augkrylov trace schema") => {
            return Err(schema_err(format!("unsupported version line `{l}`")));
        }
        _ => return Err(schema_err("missing schema line".into())),
    }
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.split_once('\n').map_or("", |(_, rest)| rest).as_bytes());
    let header = r.headers().map_err(|e| schema_err(e.to_string()))?.clone();
    for (i, want) in COLUMNS.iter().enumerate() {
        match header.get(i) {
            Some(got) if got == *want => {}
            Some(got) => {
                return Err(schema_err(format!("column {} is `{got}`, expected `{want}`", i + 1)));
            }
            None => return Err(schema_err(format!("missing column `{want}`"))),
        }
    }
    if let Some(extra) = header.get(COLUMNS.len()) {
        return Err(schema_err(format!("unexpected column `{extra}`")));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Config(format!("{name}: {e}")))?;
        let bad = |col: &str| CliError::Config(format!("{name}:{}: bad value in column `{col}`", line + 3));
        let k = rec[0].trim().parse::<usize>().map_err(|_| bad(COLUMNS[0]))?;
        let values = (1..COLUMNS.len())
            .map(|i| {
                let f = rec[i].trim();
                if f.is_empty() {
                    Ok(None)
                } else {
                    f.parse::<f64>().map(Some).map_err(|_| bad(COLUMNS[i]))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(TraceRow { k, values });
    }
    Ok(rows)
}
