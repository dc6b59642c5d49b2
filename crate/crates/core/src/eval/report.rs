//! Evaluation reports: JSON document, TSV curves and a fixed-width summary.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::sweep::SweepRow;
use crate::vocab::TokenId;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub token_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line_em: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line_es: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalOrdering {
    /// Samples evaluated independently (ephemeral predictors).
    #[default]
    Parallel,
    /// Corpus order, required when datastore updates persist.
    Sequential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SampleRecord {
    Token { index: usize, target: TokenId, predicted: TokenId, correct: bool },
    Line { index: usize, prediction: String, reference: String, exact: bool, similarity: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub name: String,
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<Point>,
}

impl Curve {
    pub fn new(name: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        Self { name: name.into(), x_label: x_label.into(), y_label: y_label.into(), points: Vec::new() }
    }

    pub fn push(&mut self, x: f64, y: f64) {
        self.points.push(Point { x, y });
    }

    pub fn ys(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.y).collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("{}\t{}\n", self.x_label, self.y_label);
        for p in &self.points {
            let _ = writeln!(out, "{}\t{:.6}", p.x, p.y);
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub config: serde_json::Value,
    pub metrics: Metrics,
    #[serde(default)]
    pub ordering: EvalOrdering,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<SampleRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rows: Vec<SweepRow>,
    #[serde(default)]
    pub curves: Vec<Curve>,
}

impl EvalReport {
    pub fn curve(&self, name: &str) -> Option<&Curve> {
        self.curves.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Writes each curve as `<stem>.curve<index>.tsv` next to `base`, returning the paths.
    pub fn save_curves(&self, base: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
        let base = base.as_ref();
        let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
        let dir = base.parent().unwrap_or_else(|| Path::new("."));
        let mut paths = Vec::new();
        for (i, c) in self.curves.iter().enumerate() {
            let p = dir.join(format!("{stem}.curve{i}.tsv"));
            fs::write(&p, format!("# {}\n{}", c.name, c.to_tsv()))?;
            paths.push(p);
        }
        Ok(paths)
    }

    /// Fixed-width summary: one line per metric, then one per sweep row.
    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        let fmt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        let _ = writeln!(out, "{:<44} {:>9} {:>9} {:>9}", "method", "token%", "EM%", "ES%");
        let _ = writeln!(
            out,
            "{:<44} {:>9} {:>9} {:>9}",
            truncate(&self.method, 44),
            fmt(self.metrics.token_accuracy),
            fmt(self.metrics.line_em),
            fmt(self.metrics.line_es)
        );
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{:<44} {:>9} {:>9} {:>9}",
                truncate(&row.point.label(), 44),
                fmt(Some(row.token_accuracy)),
                fmt(row.line_em),
                fmt(row.line_es)
            );
        }
        out
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}
