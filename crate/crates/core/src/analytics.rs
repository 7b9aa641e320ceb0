//! Correlations between task accuracies, run comparison and report tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{TaskDimension, TaskGroup};
use crate::evalkit::{round1, AggregateReport, EvalRun, TABLE_COLUMNS};

#[derive(Debug, thiserror::Error)]
pub enum AnalyticsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least 2 paired values, got {0}")]
    TooShort(usize),
    #[error("constant vector has no correlation")]
    ConstantVector,
    #[error("need at least 3 models, got {0}")]
    TooFewModels(usize),
    #[error("runs were evaluated on different manifests: {0}")]
    ManifestMismatch(String),
    #[error("cell {model}/{dim} = {value} outside [0, 100]")]
    OutOfRange { model: String, dim: TaskDimension, value: f64 },
    #[error("accuracy table: {0}")]
    Parse(String),
}

/// Sample Pearson correlation, two-pass centred form.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, AnalyticsError> {
    if x.len() != y.len() {
        return Err(AnalyticsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(AnalyticsError::TooShort(x.len()));
    }
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(x) || constant(y) {
        return Err(AnalyticsError::ConstantVector);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Model-by-task accuracies in percent. Columns follow [`TaskDimension::ALL`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub models: Vec<String>,
    pub cells: Vec<[Option<f64>; 8]>,
}

impl AccuracyMatrix {
    pub fn push(&mut self, model: impl Into<String>, row: [Option<f64>; 8]) -> Result<(), AnalyticsError> {
        let model = model.into();
        for (dim, v) in TaskDimension::ALL.iter().zip(row) {
            if let Some(v) = v.filter(|v| !(0.0..=100.0).contains(v)) {
                return Err(AnalyticsError::OutOfRange { model, dim: *dim, value: v });
            }
        }
        self.models.push(model);
        self.cells.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn extend(&mut self, other: AccuracyMatrix) {
        self.models.extend(other.models);
        self.cells.extend(other.cells);
    }

    pub fn column(&self, dim: TaskDimension) -> Vec<Option<f64>> {
        let k = TaskDimension::ALL.iter().position(|&d| d == dim).expect("known dimension");
        self.cells.iter().map(|r| r[k]).collect()
    }

    pub fn from_reports<'a>(rows: impl IntoIterator<Item = (&'a str, &'a AggregateReport)>) -> Result<Self, AnalyticsError> {
        let mut m = AccuracyMatrix::default();
        for (name, r) in rows {
            m.push(name, TaskDimension::ALL.map(|d| r.per_task.get(&d).copied()))?;
        }
        Ok(m)
    }

    /// CSV with a `model` column and one column per task code, in any order.
    /// Empty cells and `-` are missing.
    pub fn from_csv(text: &str) -> Result<Self, AnalyticsError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| AnalyticsError::Parse(e.to_string()))?.clone();
        let mut model_col = None;
        let mut slots = Vec::new();
        for (i, h) in headers.iter().enumerate() {
            if h.eq_ignore_ascii_case("model") {
                model_col = Some(i);
            } else if let Some(d) = TaskDimension::from_code(h) {
                slots.push((i, TaskDimension::ALL.iter().position(|&x| x == d).expect("known")));
            } else {
                return Err(AnalyticsError::Parse(format!("unknown column {h:?}")));
            }
        }
        let model_col = model_col.ok_or_else(|| AnalyticsError::Parse("missing model column".into()))?;
        let mut m = AccuracyMatrix::default();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| AnalyticsError::Parse(e.to_string()))?;
            let mut row = [None; 8];
            for &(i, k) in &slots {
                let cell = rec.get(i).unwrap_or("");
                if cell.is_empty() || cell == "-" {
                    continue;
                }
                row[k] = Some(cell.parse().map_err(|_| AnalyticsError::Parse(format!("row {}: bad number {cell:?}", line + 2)))?);
            }
            m.push(rec.get(model_col).unwrap_or(""), row)?;
        }
        Ok(m)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model");
        for d in TaskDimension::ALL {
            out.push(',');
            out.push_str(d.code());
        }
        out.push('\n');
        for (name, row) in self.models.iter().zip(&self.cells) {
            out.push_str(&csv_field(name));
            for c in row {
                out.push(',');
                out.push_str(&c.map_or("-".into(), |v| v.to_string()));
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Deletion {
    /// Each pair of columns uses the models present in both.
    #[default]
    Pairwise,
    /// Only models with every column present are used.
    Listwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub dims: Vec<TaskDimension>,
    pub r: Vec<Vec<f64>>,
    /// Models behind each cell.
    pub n: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub within_mean: f64,
    pub cross_mean: f64,
    pub wc_mean: f64,
    pub hc_mean: f64,
    pub within_pairs: usize,
    pub cross_pairs: usize,
}

impl ClusterSummary {
    /// Tasks correlate more inside their group than across groups.
    pub fn clustered(&self) -> bool {
        self.within_mean > self.cross_mean
    }
}

pub fn correlation_matrix(m: &AccuracyMatrix, deletion: Deletion) -> Result<CorrelationMatrix, AnalyticsError> {
    let rows: Vec<&[Option<f64>; 8]> = match deletion {
        Deletion::Pairwise => m.cells.iter().collect(),
        Deletion::Listwise => m.cells.iter().filter(|r| r.iter().all(Option::is_some)).collect(),
    };
    if rows.len() < 3 {
        return Err(AnalyticsError::TooFewModels(rows.len()));
    }
    let k = TaskDimension::ALL.len();
    let mut r = vec![vec![1.0; k]; k];
    let mut n = vec![vec![0; k]; k];
    for i in 0..k {
        n[i][i] = rows.iter().filter(|row| row[i].is_some()).count();
        for j in (i + 1)..k {
            let (x, y): (Vec<f64>, Vec<f64>) = rows.iter().filter_map(|row| Some((row[i]?, row[j]?))).unzip();
            if x.len() < 3 {
                return Err(AnalyticsError::TooFewModels(x.len()));
            }
            let v = pearson(&x, &y)?;
            r[i][j] = v;
            r[j][i] = v;
            n[i][j] = x.len();
            n[j][i] = x.len();
        }
    }
    Ok(CorrelationMatrix {
        dims: TaskDimension::ALL.to_vec(),
        r,
        n,
    })
}

impl CorrelationMatrix {
    pub fn get(&self, a: TaskDimension, b: TaskDimension) -> f64 {
        let pos = |d| self.dims.iter().position(|&x| x == d).expect("known dimension");
        self.r[pos(a)][pos(b)]
    }

    pub fn cluster_summary(&self) -> ClusterSummary {
        let mut within = Vec::new();
        let mut cross = Vec::new();
        let mut by_group: BTreeMap<TaskGroup, Vec<f64>> = BTreeMap::new();
        for i in 0..self.dims.len() {
            for j in (i + 1)..self.dims.len() {
                let (gi, gj) = (self.dims[i].group(), self.dims[j].group());
                if gi == gj {
                    within.push(self.r[i][j]);
                    by_group.entry(gi).or_default().push(self.r[i][j]);
                } else {
                    cross.push(self.r[i][j]);
                }
            }
        }
        let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
        let group = |g| by_group.get(&g).map_or(f64::NAN, |v| mean(v));
        ClusterSummary {
            within_mean: mean(&within),
            cross_mean: mean(&cross),
            wc_mean: group(TaskGroup::WorldCentric),
            hc_mean: group(TaskGroup::HumanCentric),
            within_pairs: within.len(),
            cross_pairs: cross.len(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("task");
        for d in &self.dims {
            let _ = write!(out, ",{d}");
        }
        out.push('\n');
        for (d, row) in self.dims.iter().zip(&self.r) {
            out.push_str(d.code());
            for v in row {
                let _ = write!(out, ",{v:.6}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| |");
        for d in &self.dims {
            let _ = write!(out, " {d} |");
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(self.dims.len()));
        out.push('\n');
        for (d, row) in self.dims.iter().zip(&self.r) {
            let _ = write!(out, "| {d} |");
            for v in row {
                let _ = write!(out, " {v:.2} |");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format {other:?} (markdown|csv|json)")),
        }
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{:.1}", round1(v)))
}

/// Table of named aggregate rows. Identical input gives identical bytes.
pub fn render_report(rows: &[(String, AggregateReport)], format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => {
            let mut out = format!("| Model | {} |\n|---|{}\n", TABLE_COLUMNS.join(" | "), "---|".repeat(TABLE_COLUMNS.len()));
            for (name, r) in rows {
                let cells: Vec<String> = r.table_row().into_iter().map(cell).collect();
                let _ = writeln!(out, "| {} | {} |", name.replace('|', "\\|"), cells.join(" | "));
            }
            out
        }
        ReportFormat::Csv => {
            let mut out = format!("model,{}\n", TABLE_COLUMNS.join(","));
            for (name, r) in rows {
                let cells: Vec<String> = r.table_row().into_iter().map(cell).collect();
                let _ = writeln!(out, "{},{}", csv_field(name), cells.join(","));
            }
            out
        }
        ReportFormat::Json => {
            let list: Vec<_> = rows.iter().map(|(name, r)| serde_json::json!({"model": name, "report": r})).collect();
            let mut s = serde_json::to_string_pretty(&list).expect("report serializes");
            s.push('\n');
            s
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipCounts {
    pub both_correct: usize,
    pub only_a: usize,
    pub only_b: usize,
    pub neither: usize,
}

impl FlipCounts {
    /// Continuity-corrected McNemar statistic, absent when nothing flipped.
    pub fn mcnemar_chi2(&self) -> Option<f64> {
        let (b, c) = (self.only_a as f64, self.only_b as f64);
        (b + c > 0.0).then(|| ((b - c).abs() - 1.0).max(0.0).powi(2) / (b + c))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunComparison {
    /// `b - a` in percentage points, for tasks present in both.
    pub per_task: BTreeMap<TaskDimension, f64>,
    pub overall: Option<f64>,
    pub wc: Option<f64>,
    pub hc: Option<f64>,
    pub flips: FlipCounts,
    pub per_task_flips: BTreeMap<TaskDimension, FlipCounts>,
}

pub fn compare_runs(a: &EvalRun, b: &EvalRun, dims: &BTreeMap<String, TaskDimension>) -> Result<RunComparison, AnalyticsError> {
    if a.manifest_fingerprint != b.manifest_fingerprint {
        return Err(AnalyticsError::ManifestMismatch("fingerprints differ".into()));
    }
    let ids = |r: &EvalRun| r.results.iter().map(|x| x.item_id.clone()).collect::<BTreeSet<_>>();
    if ids(a) != ids(b) {
        return Err(AnalyticsError::ManifestMismatch("item sets differ".into()));
    }
    let b_correct: BTreeMap<&str, bool> = b.results.iter().map(|r| (r.item_id.as_str(), r.correct)).collect();
    let mut flips = FlipCounts::default();
    let mut per_task_flips: BTreeMap<TaskDimension, FlipCounts> = BTreeMap::new();
    for r in &a.results {
        let dim = *dims
            .get(&r.item_id)
            .ok_or_else(|| AnalyticsError::ManifestMismatch(format!("no task for item {}", r.item_id)))?;
        for f in [&mut flips, per_task_flips.entry(dim).or_default()] {
            match (r.correct, b_correct[r.item_id.as_str()]) {
                (true, true) => f.both_correct += 1,
                (true, false) => f.only_a += 1,
                (false, true) => f.only_b += 1,
                (false, false) => f.neither += 1,
            }
        }
    }
    let (ra, rb) = (&a.aggregates, &b.aggregates);
    let delta = |x: Option<f64>, y: Option<f64>| Some(y? - x?);
    Ok(RunComparison {
        per_task: ra
            .per_task
            .iter()
            .filter_map(|(d, va)| rb.per_task.get(d).map(|vb| (*d, vb - va)))
            .collect(),
        overall: delta(ra.overall, rb.overall),
        wc: delta(ra.wc, rb.wc),
        hc: delta(ra.hc, rb.hc),
        flips,
        per_task_flips,
    })
}
