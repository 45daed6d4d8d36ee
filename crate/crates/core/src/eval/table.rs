use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Line-delimited [`ScoreRow`]s written next to every evaluation.
pub const SCORES_FILE: &str = "scores.jsonl";

/// Mean, population std and max of per-seed values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreCell {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
    pub seeds: usize,
}

impl ScoreCell {
    /// `None` for an empty slice.
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(ScoreCell {
            mean,
            // Guard the `max >= mean` invariant against summation rounding.
            std: var.max(0.0).sqrt(),
            max: max.max(mean),
            seeds: values.len(),
        })
    }
}

/// `222.7 ± 32.1 (290)`
impl fmt::Display for ScoreCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1} ± {:.1} ({:.0})", self.mean, self.std, self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub layout: String,
    pub n: usize,
    pub method: String,
    pub cell: ScoreCell,
    /// Per-seed means, in seed order.
    pub per_seed: Vec<f64>,
    /// `mean / best mean` among rows with the same layout and team size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized: Option<f64>,
    /// Defaults that a reader should know about, e.g. the handoff bonus.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn push(&mut self, row: ScoreRow) {
        self.rows.push(row);
    }

    /// Rows sorted by (layout, n, method), with normalized scores filled in.
    pub fn finalize(mut self) -> Self {
        self.rows
            .sort_by(|a, b| (&a.layout, a.n, &a.method).cmp(&(&b.layout, b.n, &b.method)));
        let mut best: BTreeMap<(String, usize), f64> = BTreeMap::new();
        for r in &self.rows {
            let e = best.entry((r.layout.clone(), r.n)).or_insert(f64::NEG_INFINITY);
            *e = e.max(r.cell.mean);
        }
        for r in &mut self.rows {
            let b = best[&(r.layout.clone(), r.n)];
            r.normalized = Some(if b > 0.0 { r.cell.mean / b } else { 0.0 });
        }
        self
    }

    pub fn to_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("rows serialize") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str, path: &Path) -> Result<Self, EvalError> {
        let rows = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| EvalError::Format {
                    path: path.to_path_buf(),
                    reason: format!("line {}: {e}", i + 1),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(ScoreTable { rows })
    }

    /// Raw and per-layout max-normalized scores, one row per (layout, method).
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| layout | n | method | score (mean ± std (max)) | normalized |\n|---|---|---|---|---|\n");
        for r in &self.rows {
            let norm = r.normalized.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
            out.push_str(&format!("| {} | {} | {} | {} | {} |\n", r.layout, r.n, r.method, r.cell, norm));
        }
        out
    }

    /// Every `scores.jsonl` under `dir`, merged and finalized.
    pub fn collect(dir: &Path) -> Result<Self, EvalError> {
        let mut files = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in std::fs::read_dir(&d).map_err(|e| EvalError::io(&d, e))? {
                let path = entry.map_err(|e| EvalError::io(&d, e))?.path();
                if path.is_dir() {
                    stack.push(path);
                } else if path.file_name().is_some_and(|f| f == SCORES_FILE) {
                    files.push(path);
                }
            }
        }
        files.sort();
        let mut table = ScoreTable::default();
        for f in files {
            let text = std::fs::read_to_string(&f).map_err(|e| EvalError::io(&f, e))?;
            table.rows.extend(ScoreTable::from_jsonl(&text, &f)?.rows);
        }
        Ok(table.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(layout: &str, method: &str, values: &[f64]) -> ScoreRow {
        ScoreRow {
            layout: layout.into(),
            n: 3,
            method: method.into(),
            cell: ScoreCell::from_values(values).unwrap(),
            per_seed: values.to_vec(),
            normalized: None,
            meta: BTreeMap::new(),
        }
    }

    #[test]
    fn cell_format() {
        let c = ScoreCell::from_values(&[200.0, 240.0, 290.0]).unwrap();
        assert_eq!(c.seeds, 3);
        assert_eq!(c.to_string(), "243.3 ± 36.8 (290)");
        assert!(ScoreCell::from_values(&[]).is_none());
    }

    #[test]
    fn normalization_is_per_layout() {
        let mut t = ScoreTable::default();
        t.push(row("pl-3", "a", &[100.0]));
        t.push(row("pl-3", "b", &[50.0]));
        t.push(row("fc-3", "a", &[0.0]));
        let t = t.finalize();
        let norm: Vec<_> = t.rows.iter().map(|r| (r.layout.as_str(), r.method.as_str(), r.normalized.unwrap())).collect();
        assert_eq!(norm, vec![("fc-3", "a", 0.0), ("pl-3", "a", 1.0), ("pl-3", "b", 0.5)]);
        let md = t.to_markdown();
        assert!(md.contains("| pl-3 | 3 | b | 50.0 ± 0.0 (50) | 0.500 |"), "{md}");
    }

    #[test]
    fn jsonl_round_trip() {
        let mut t = ScoreTable::default();
        t.push(row("pl-3", "a", &[1.0, 2.0]));
        let t = t.finalize();
        assert_eq!(ScoreTable::from_jsonl(&t.to_jsonl(), Path::new("x")).unwrap(), t);
    }

    proptest! {
        #[test]
        fn cell_invariants(values in prop::collection::vec(0.0f64..1000.0, 1..20)) {
            let c = ScoreCell::from_values(&values).unwrap();
            prop_assert!(c.std >= 0.0);
            prop_assert!(c.max >= c.mean);
            prop_assert_eq!(c.seeds, values.len());
        }
    }
}
