//! Results table rows and their CSV form.
//!
//! Real numbers are printed with six decimal places. A failed run keeps its
//! configuration columns and leaves the metric columns empty.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use seqfuse_core::metrics::MetricsReport;

use crate::error::{Error, Result};

pub const HEADER: [&str; 17] = [
    "model",
    "rnn",
    "lr",
    "optimizer",
    "hidden_units",
    "dropout",
    "split",
    "accuracy",
    "precision_weighted",
    "recall_weighted",
    "f1_weighted",
    "precision_macro",
    "recall_macro",
    "f1_macro",
    "wall_seconds",
    "seed",
    "status",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowMetrics {
    pub accuracy: f64,
    pub precision_weighted: f64,
    pub recall_weighted: f64,
    pub f1_weighted: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
}

impl From<&MetricsReport> for RowMetrics {
    fn from(r: &MetricsReport) -> Self {
        RowMetrics {
            accuracy: r.accuracy,
            precision_weighted: r.weighted.precision,
            recall_weighted: r.weighted.recall,
            f1_weighted: r.weighted.f1,
            precision_macro: r.macro_avg.precision,
            recall_macro: r.macro_avg.recall,
            f1_macro: r.macro_avg.f1,
        }
    }
}

impl RowMetrics {
    fn values(&self) -> [f64; 7] {
        [
            self.accuracy,
            self.precision_weighted,
            self.recall_weighted,
            self.f1_weighted,
            self.precision_macro,
            self.recall_macro,
            self.f1_macro,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultsRow {
    pub model: String,
    pub rnn: String,
    pub lr: f64,
    pub optimizer: String,
    pub hidden_units: usize,
    pub dropout: f64,
    pub split: String,
    /// `None` marks a failed run.
    pub metrics: Option<RowMetrics>,
    pub wall_seconds: f64,
    pub seed: u64,
}

/// Configuration columns shared by every row of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTag {
    pub model: String,
    pub rnn: String,
    pub lr: f64,
    pub optimizer: String,
    pub hidden_units: usize,
    pub dropout: f64,
    pub seed: u64,
    pub wall_seconds: f64,
}

impl RunTag {
    pub fn row(&self, split: &str, metrics: Option<RowMetrics>) -> ResultsRow {
        ResultsRow {
            model: self.model.clone(),
            rnn: self.rnn.clone(),
            lr: self.lr,
            optimizer: self.optimizer.clone(),
            hidden_units: self.hidden_units,
            dropout: self.dropout,
            split: split.to_string(),
            metrics,
            wall_seconds: self.wall_seconds,
            seed: self.seed,
        }
    }
}

fn fixed(x: f64) -> String {
    format!("{x:.6}")
}

impl ResultsRow {
    pub fn failed(&self) -> bool {
        self.metrics.is_none()
    }

    pub fn to_record(&self) -> Vec<String> {
        let mut out = vec![
            self.model.clone(),
            self.rnn.clone(),
            fixed(self.lr),
            self.optimizer.clone(),
            self.hidden_units.to_string(),
            fixed(self.dropout),
            self.split.clone(),
        ];
        match &self.metrics {
            Some(m) => out.extend(m.values().iter().map(|&v| fixed(v))),
            None => out.extend(std::iter::repeat_n(String::new(), 7)),
        }
        out.push(fixed(self.wall_seconds));
        out.push(self.seed.to_string());
        out.push(if self.failed() { "failed" } else { "ok" }.to_string());
        out
    }

    pub fn from_record(fields: &csv::StringRecord) -> std::result::Result<Self, String> {
        if fields.len() != HEADER.len() {
            return Err(format!(
                "expected {} fields, found {}",
                HEADER.len(),
                fields.len()
            ));
        }
        let f = |i: usize| &fields[i];
        let num = |i: usize| {
            f(i).parse::<f64>()
                .map_err(|_| format!("{}: bad number {:?}", HEADER[i], f(i)))
        };
        let metrics = match f(16) {
            "ok" => {
                let v = (7..14)
                    .map(num)
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                Some(RowMetrics {
                    accuracy: v[0],
                    precision_weighted: v[1],
                    recall_weighted: v[2],
                    f1_weighted: v[3],
                    precision_macro: v[4],
                    recall_macro: v[5],
                    f1_macro: v[6],
                })
            }
            "failed" => None,
            other => return Err(format!("unknown status {other:?}")),
        };
        Ok(ResultsRow {
            model: f(0).to_string(),
            rnn: f(1).to_string(),
            lr: num(2)?,
            optimizer: f(3).to_string(),
            hidden_units: f(4)
                .parse()
                .map_err(|_| format!("bad hidden_units {:?}", f(4)))?,
            dropout: num(5)?,
            split: f(6).to_string(),
            metrics,
            wall_seconds: num(14)?,
            seed: f(15).parse().map_err(|_| format!("bad seed {:?}", f(15)))?,
        })
    }

    /// Grid ordering: variant, optimizer, learning rate, hidden units, then
    /// the remaining configuration columns.
    pub fn grid_order(&self, other: &Self) -> Ordering {
        self.rnn
            .cmp(&other.rnn)
            .then_with(|| self.optimizer.cmp(&other.optimizer))
            .then_with(|| self.lr.total_cmp(&other.lr))
            .then_with(|| self.hidden_units.cmp(&other.hidden_units))
            .then_with(|| self.dropout.total_cmp(&other.dropout))
            .then_with(|| self.model.cmp(&other.model))
            .then_with(|| self.seed.cmp(&other.seed))
            .then_with(|| self.split.cmp(&other.split))
    }
}

pub fn to_csv(rows: &[ResultsRow], with_header: bool) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if with_header {
        w.write_record(HEADER)?;
    }
    for r in rows {
        w.write_record(r.to_record())?;
    }
    w.into_inner().map_err(|e| Error::Config(e.to_string()))
}

pub fn parse_csv(bytes: &[u8], origin: &Path) -> Result<Vec<ResultsRow>> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes);
    let header = rd.headers()?.clone();
    if header.iter().ne(HEADER) {
        return Err(Error::format(origin, "unexpected results header"));
    }
    rd.records()
        .enumerate()
        .map(|(i, rec)| {
            ResultsRow::from_record(&rec?)
                .map_err(|m| Error::format(origin, format!("row {}: {m}", i + 1)))
        })
        .collect()
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultsRow>> {
    parse_csv(&crate::error::read_file(path)?, path)
}

/// Appends rows, writing the header first when the file is new or empty.
pub fn append_csv(path: &Path, rows: &[ResultsRow]) -> Result<()> {
    use std::io::Write;
    let fresh = std::fs::metadata(path)
        .map(|m| m.len() == 0)
        .unwrap_or(true);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    file.write_all(&to_csv(rows, fresh)?)
        .map_err(|e| Error::io(path, e))
}

/// Per `(model, rnn)` group, the first row of `split` maximizing `key`.
pub fn best_rows(
    rows: &[ResultsRow],
    split: &str,
    key: impl Fn(&RowMetrics) -> f64,
) -> Vec<ResultsRow> {
    let mut best: Vec<(&ResultsRow, f64)> = Vec::new();
    for r in rows.iter().filter(|r| r.split == split) {
        let Some(m) = &r.metrics else { continue };
        let score = key(m);
        match best
            .iter_mut()
            .find(|(b, _)| b.model == r.model && b.rnn == r.rnn)
        {
            Some(slot) if score > slot.1 => *slot = (r, score),
            Some(_) => {}
            None => best.push((r, score)),
        }
    }
    best.into_iter().map(|(r, _)| r.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(rnn: &str, lr: f64, acc: Option<f64>) -> ResultsRow {
        ResultsRow {
            model: "toy".into(),
            rnn: rnn.into(),
            lr,
            optimizer: "adamw".into(),
            hidden_units: 32,
            dropout: 0.1,
            split: "test".into(),
            metrics: acc.map(|a| RowMetrics {
                accuracy: a,
                precision_weighted: 0.5,
                recall_weighted: 0.25,
                f1_weighted: 1.0 / 3.0,
                precision_macro: 0.0,
                recall_macro: 1.0,
                f1_macro: 0.123456789,
            }),
            wall_seconds: 0.0,
            seed: 7,
        }
    }

    #[test]
    fn csv_uses_six_decimals_and_round_trips() {
        let rows = vec![row("gru", 0.001, Some(0.75)), row("lstm", 0.01, None)];
        let bytes = to_csv(&rows, true).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], HEADER.join(","));
        assert_eq!(
            lines[1],
            "toy,gru,0.001000,adamw,32,0.100000,test,0.750000,0.500000,0.250000,0.333333,0.000000,1.000000,0.123457,0.000000,7,ok"
        );
        assert_eq!(
            lines[2],
            "toy,lstm,0.010000,adamw,32,0.100000,test,,,,,,,,0.000000,7,failed"
        );
        let back = parse_csv(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back[1], rows[1]);
        assert_eq!(back[0].metrics.unwrap().accuracy, 0.75);
    }

    #[test]
    fn best_rows_pick_first_maximum_per_group() {
        let rows = vec![
            row("gru", 0.1, Some(0.5)),
            row("gru", 0.2, Some(0.9)),
            row("gru", 0.3, Some(0.9)),
            row("lstm", 0.1, None),
            row("lstm", 0.2, Some(0.1)),
        ];
        let best = best_rows(&rows, "test", |m| m.accuracy);
        assert_eq!(best.len(), 2);
        assert_eq!(best[0].lr, 0.2);
        assert_eq!(best[1].lr, 0.2);
        assert!(best_rows(&rows, "val", |m| m.accuracy).is_empty());
    }
}
