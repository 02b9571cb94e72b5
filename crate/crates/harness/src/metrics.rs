//! Metrics CSV: one `train` row per update, `eval` rows interleaved after
//! the update they follow. Empty cells mean "not applicable".
//!
//! Columns: `kind, update, env_steps, policy_loss, infonce_loss,
//! value_loss, clip_fraction, first_clip_fraction, approx_kl, entropy,
//! episodes, train_success, win_rate, win_ci_low, win_ci_high`.
//! Wall-clock time is kept out of this file (see `timing.csv`) so that
//! identical runs produce identical metrics.

use std::fs::File;
use std::path::Path;

use crate::error::{HarnessError, Result};

pub const METRICS_HEADER: [&str; 15] = [
    "kind",
    "update",
    "env_steps",
    "policy_loss",
    "infonce_loss",
    "value_loss",
    "clip_fraction",
    "first_clip_fraction",
    "approx_kl",
    "entropy",
    "episodes",
    "train_success",
    "win_rate",
    "win_ci_low",
    "win_ci_high",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub kind: RowKind,
    /// 1-based update count completed when the row was written.
    pub update: usize,
    pub env_steps: u64,
    /// Numeric columns after `env_steps`, in header order.
    pub values: [Option<f64>; 12],
}

impl MetricsRow {
    pub fn get(&self, column: &str) -> Option<f64> {
        let i = METRICS_HEADER.iter().position(|c| *c == column)?;
        if i < 3 {
            return match i {
                1 => Some(self.update as f64),
                2 => Some(self.env_steps as f64),
                _ => None,
            };
        }
        self.values[i - 3]
    }

    fn record(&self) -> Vec<String> {
        let mut r = vec![
            match self.kind {
                RowKind::Train => "train".to_string(),
                RowKind::Eval => "eval".to_string(),
            },
            self.update.to_string(),
            self.env_steps.to_string(),
        ];
        r.extend(self.values.iter().map(|v| v.map_or(String::new(), |x| x.to_string())));
        r
    }
}

pub struct MetricsWriter {
    w: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(METRICS_HEADER)?;
        w.flush()?;
        Ok(Self { w })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.w.write_record(row.record())?;
        self.w.flush()?;
        Ok(())
    }
}

/// Parses a metrics file, reporting the first malformed line.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let name = path.display().to_string();
    let bad = |line: usize, msg: String| HarnessError::Malformed {
        path: name.clone(),
        line,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| bad(line, e.to_string()))?;
        if i == 0 {
            if rec.iter().ne(METRICS_HEADER.iter().copied()) {
                return Err(bad(line, "header does not match the metrics format".into()));
            }
            continue;
        }
        if rec.len() != METRICS_HEADER.len() {
            return Err(bad(
                line,
                format!("expected {} fields, found {}", METRICS_HEADER.len(), rec.len()),
            ));
        }
        let kind = match &rec[0] {
            "train" => RowKind::Train,
            "eval" => RowKind::Eval,
            k => return Err(bad(line, format!("unknown row kind `{k}`"))),
        };
        let update = rec[1].parse().map_err(|_| bad(line, format!("bad update `{}`", &rec[1])))?;
        let env_steps = rec[2]
            .parse()
            .map_err(|_| bad(line, format!("bad env_steps `{}`", &rec[2])))?;
        let mut values = [None; 12];
        for (k, v) in values.iter_mut().enumerate() {
            let cell = &rec[k + 3];
            if !cell.is_empty() {
                *v = Some(
                    cell.parse()
                        .map_err(|_| bad(line, format!("bad number `{cell}` in `{}`", METRICS_HEADER[k + 3])))?,
                );
            }
        }
        rows.push(MetricsRow {
            kind,
            update,
            env_steps,
            values,
        });
    }
    if rows.is_empty() {
        return Err(bad(1, "no metric rows".into()));
    }
    Ok(rows)
}
