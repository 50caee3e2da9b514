//! Regression metrics over (truth, prediction) pairs and report rendering.
//!
//! All variances are population variances (divide by n). This only changes
//! explained variance, which is `1 - Var(truth - pred) / Var(truth)`.
//! Undefined metrics are carried as errors and rendered as `n/a`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::RoleId;

pub const REPORT_DECIMALS: usize = 4;
pub const UNDEFINED_CELL: &str = "n/a";

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum MetricError {
    #[error("truth has {truth} values but prediction has {pred}")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("truth has zero variance")]
    ZeroVariance,
    #[error("series contains a non-finite value")]
    NonFinite,
}

fn check(truth: &[f64], pred: &[f64]) -> Result<(), MetricError> {
    if truth.len() != pred.len() {
        return Err(MetricError::LengthMismatch { truth: truth.len(), pred: pred.len() });
    }
    if truth.len() < 2 {
        return Err(MetricError::TooFewPoints(truth.len()));
    }
    if truth.iter().chain(pred).any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    Ok(())
}

fn mean(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count() as f64;
    xs.sum::<f64>() / n
}

fn population_variance(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = mean(xs.clone());
    mean(xs.map(|x| (x - m) * (x - m)))
}

fn truth_variance(truth: &[f64]) -> Result<f64, MetricError> {
    let v = population_variance(truth.iter().copied());
    if v == 0.0 {
        Err(MetricError::ZeroVariance)
    } else {
        Ok(v)
    }
}

/// Coefficient of determination, `1 - SS_res / SS_tot`.
pub fn r2(truth: &[f64], pred: &[f64]) -> Result<f64, MetricError> {
    check(truth, pred)?;
    let var = truth_variance(truth)?;
    let mse = mean(truth.iter().zip(pred).map(|(t, p)| (t - p) * (t - p)));
    Ok(1.0 - mse / var)
}

pub fn rmse(truth: &[f64], pred: &[f64]) -> Result<f64, MetricError> {
    check(truth, pred)?;
    Ok(mean(truth.iter().zip(pred).map(|(t, p)| (t - p) * (t - p))).sqrt())
}

pub fn mae(truth: &[f64], pred: &[f64]) -> Result<f64, MetricError> {
    check(truth, pred)?;
    Ok(mean(truth.iter().zip(pred).map(|(t, p)| (t - p).abs())))
}

/// Explained variance, `1 - Var(truth - pred) / Var(truth)`.
pub fn ev(truth: &[f64], pred: &[f64]) -> Result<f64, MetricError> {
    check(truth, pred)?;
    let var = truth_variance(truth)?;
    let resid = population_variance(truth.iter().zip(pred).map(|(t, p)| t - p));
    Ok(1.0 - resid / var)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupLabel {
    Role(RoleId),
    All,
}

impl GroupLabel {
    fn rank(self) -> usize {
        match self {
            GroupLabel::Role(r) => r as usize,
            GroupLabel::All => RoleId::ALL.len(),
        }
    }
}

impl Ord for GroupLabel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank().cmp(&other.rank())
    }
}

impl PartialOrd for GroupLabel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for GroupLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupLabel::Role(r) => write!(f, "{r}"),
            GroupLabel::All => f.write_str("ALL"),
        }
    }
}

impl FromStr for GroupLabel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(GroupLabel::All);
        }
        s.parse::<RoleId>().map(GroupLabel::Role).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedSeries {
    pub group: GroupLabel,
    pub truth: Vec<f64>,
    pub pred: Vec<f64>,
}

impl PairedSeries {
    pub fn new(group: GroupLabel, truth: Vec<f64>, pred: Vec<f64>) -> Result<Self, MetricError> {
        if truth.len() != pred.len() {
            return Err(MetricError::LengthMismatch { truth: truth.len(), pred: pred.len() });
        }
        Ok(PairedSeries { group, truth, pred })
    }

    pub fn metrics(&self) -> MetricRow {
        MetricRow::compute(&self.truth, &self.pred)
    }
}

pub type MetricCell = Result<f64, MetricError>;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub r2: MetricCell,
    pub rmse: MetricCell,
    pub mae: MetricCell,
    pub ev: MetricCell,
}

impl MetricRow {
    pub fn compute(truth: &[f64], pred: &[f64]) -> Self {
        MetricRow {
            r2: r2(truth, pred),
            rmse: rmse(truth, pred),
            mae: mae(truth, pred),
            ev: ev(truth, pred),
        }
    }

    pub fn from_values(r2: f64, rmse: f64, mae: f64, ev: f64) -> Self {
        MetricRow { r2: Ok(r2), rmse: Ok(rmse), mae: Ok(mae), ev: Ok(ev) }
    }

    pub fn cells(&self) -> [&MetricCell; 4] {
        [&self.r2, &self.rmse, &self.mae, &self.ev]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub group: GroupLabel,
    pub n: usize,
    pub metrics: MetricRow,
}

/// Metric rows keyed by (model, group). Models keep insertion order, groups
/// are listed RO1, RO2, RO3, CO, SO, ALL.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn new() -> Self {
        Self::default()
    }

    fn model_rank(&self, model: &str) -> usize {
        let models = self.models();
        models.iter().position(|m| *m == model).unwrap_or(models.len())
    }

    /// Inserts or replaces the row for (model, group).
    pub fn insert(&mut self, model: &str, group: GroupLabel, n: usize, metrics: MetricRow) {
        let row = ReportRow { model: model.to_string(), group, n, metrics };
        if let Some(existing) = self.rows.iter_mut().find(|r| r.model == model && r.group == group) {
            *existing = row;
            return;
        }
        let rank = self.model_rank(model);
        let pos = self
            .rows
            .iter()
            .position(|r| {
                let rr = self.model_rank(&r.model);
                rr > rank || (rr == rank && r.group > group)
            })
            .unwrap_or(self.rows.len());
        self.rows.insert(pos, row);
    }

    pub fn merge(&mut self, other: EvalReport) {
        for r in other.rows {
            self.insert(&r.model, r.group, r.n, r.metrics);
        }
    }

    pub fn rows(&self) -> &[ReportRow] {
        &self.rows
    }

    pub fn get(&self, model: &str, group: GroupLabel) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.model == model && r.group == group)
    }

    pub fn models(&self) -> Vec<&str> {
        let mut seen: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !seen.contains(&r.model.as_str()) {
                seen.push(&r.model);
            }
        }
        seen
    }
}

/// Builds one row per role present plus an ALL row over the concatenated
/// points. Groups with fewer than two points get undefined cells.
pub fn evaluate_groups<I>(points: I, model: &str) -> Result<EvalReport, MetricError>
where
    I: IntoIterator<Item = (RoleId, f64, f64)>,
{
    let mut by_role: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); RoleId::ALL.len()];
    let (mut all_t, mut all_p) = (Vec::new(), Vec::new());
    for (role, t, p) in points {
        by_role[role as usize].0.push(t);
        by_role[role as usize].1.push(p);
        all_t.push(t);
        all_p.push(p);
    }
    if !by_role.iter().any(|(t, _)| t.len() >= 2) {
        return Err(MetricError::TooFewPoints(all_t.len()));
    }
    let mut report = EvalReport::new();
    for (role, (t, p)) in RoleId::ALL.iter().zip(&by_role) {
        if !t.is_empty() {
            report.insert(model, GroupLabel::Role(*role), t.len(), MetricRow::compute(t, p));
        }
    }
    report.insert(model, GroupLabel::All, all_t.len(), MetricRow::compute(&all_t, &all_p));
    Ok(report)
}

pub fn format_cell(cell: &MetricCell) -> String {
    match cell {
        Ok(v) => {
            let s = format!("{:.*}", REPORT_DECIMALS, v);
            if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
                s[1..].to_string()
            } else {
                s
            }
        }
        Err(_) => UNDEFINED_CELL.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown report format `{other}` (expected csv or markdown)")),
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn export_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut out = String::from("model,group,r2,rmse,mae,ev\n");
            for row in report.rows() {
                let cells: Vec<String> = row.metrics.cells().iter().map(|c| format_cell(c)).collect();
                out.push_str(&format!("{},{},{}\n", csv_field(&row.model), row.group, cells.join(",")));
            }
            out
        }
        ReportFormat::Markdown => {
            let mut groups: Vec<GroupLabel> = report.rows().iter().map(|r| r.group).collect();
            groups.sort();
            groups.dedup();
            let mut out = String::new();
            for (i, group) in groups.iter().enumerate() {
                if i > 0 {
                    out.push('\n');
                }
                out.push_str(&format!("### {group}\n\n"));
                out.push_str("| Model | R² | RMSE | MAE | EV |\n");
                out.push_str("|---|---:|---:|---:|---:|\n");
                for row in report.rows().iter().filter(|r| r.group == *group) {
                    let cells: Vec<String> = row.metrics.cells().iter().map(|c| format_cell(c)).collect();
                    out.push_str(&format!("| {} | {} |\n", row.model, cells.join(" | ")));
                }
            }
            out
        }
    }
}
