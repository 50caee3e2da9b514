//! Glue between the modules for the CLI: batch runs, the eval join and SFT
//! dataset assembly.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::GenerationBackend;
use crate::crew::{estimate_crew, load_session_records, CrewOptions, RoleOutcome};
use crate::metrics::{evaluate_groups, EvalReport, MetricError};
use crate::scenario::{parse_scenario, RoleId, ScenarioError, ScenarioSpec};
use crate::sft::{build_record, GroundTruthAnswers, SftError, SftRecord, SpecialTokenPolicy};
use crate::survey::GroundTruthRow;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Scenario { path: PathBuf, source: ScenarioError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(
        "scenario ids do not match between sessions and ground truth; \
         only in sessions: [{}]; only in ground truth: [{}]",
        .in_sessions_only.join(", "), .in_truth_only.join(", ")
    )]
    OrphanScenarios { in_sessions_only: Vec<String>, in_truth_only: Vec<String> },
    #[error("no usable (truth, prediction) pairs: {0}")]
    Metrics(#[from] MetricError),
    #[error("ground truth refers to scenario `{0}` but no scenario file defines it")]
    UnknownScenario(String),
    #[error(transparent)]
    Sft(#[from] SftError),
    #[error("scenario `{scenario_id}`: {source}")]
    InvalidScenario { scenario_id: String, source: ScenarioError },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

pub fn load_scenario(path: &Path) -> Result<ScenarioSpec, PipelineError> {
    let doc = fs::read_to_string(path).map_err(io_err(path))?;
    parse_scenario(&doc).map_err(|source| PipelineError::Scenario { path: path.to_path_buf(), source })
}

fn files_with_extension(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, PipelineError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let p = entry.map_err(io_err(dir))?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == ext) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Loads every `*.json` scenario in a directory, sorted by file name.
pub fn load_scenarios_dir(dir: &Path) -> Result<Vec<ScenarioSpec>, PipelineError> {
    files_with_extension(dir, "json")?.iter().map(|p| load_scenario(p)).collect()
}

/// Loads every `*.jsonl` session file in a run directory.
pub fn load_run_records(run_dir: &Path) -> Result<Vec<RoleOutcome>, PipelineError> {
    let mut out = Vec::new();
    for p in files_with_extension(run_dir, "jsonl")? {
        out.extend(load_session_records(&p).map_err(io_err(&p))?);
    }
    Ok(out)
}

#[derive(Debug)]
pub struct BatchItem {
    pub scenario_id: String,
    pub result: Result<PathBuf, PipelineError>,
}

/// Runs a crew session per scenario, `parallelism` scenarios at a time, and
/// writes `<run_dir>/<scenario_id>.jsonl` for each. Output is ordered like
/// the input.
pub fn run_batch<B: GenerationBackend + ?Sized>(
    scenarios: &[ScenarioSpec],
    backend: &B,
    options: &CrewOptions,
    run_dir: &Path,
    parallelism: usize,
) -> Vec<BatchItem> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<BatchItem>>> =
        Mutex::new((0..scenarios.len()).map(|_| None).collect());
    let workers = parallelism.max(1).min(scenarios.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(scenario) = scenarios.get(i) else { break };
                let result = estimate_crew(scenario, backend, options)
                    .map_err(|source| PipelineError::InvalidScenario { scenario_id: scenario.id.clone(), source })
                    .and_then(|session| session.save(run_dir).map_err(io_err(run_dir)));
                results.lock().expect("batch results lock")[i] =
                    Some(BatchItem { scenario_id: scenario.id.clone(), result });
            });
        }
    });
    results
        .into_inner()
        .expect("batch results lock")
        .into_iter()
        .map(|r| r.expect("every scenario processed"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalTarget {
    /// Unweighted NASA-TLX workload.
    Workload,
    /// SART situational awareness.
    Sa,
}

impl std::str::FromStr for EvalTarget {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "workload" | "tlx" => Ok(EvalTarget::Workload),
            "sa" | "sart" => Ok(EvalTarget::Sa),
            other => Err(format!("unknown eval target `{other}` (expected workload or sa)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JoinedPairs {
    pub points: Vec<(RoleId, f64, f64)>,
    /// Ground-truth rows whose estimate failed or lacked the target.
    pub skipped: Vec<(String, RoleId)>,
}

/// Matches ground truth with predictions by (scenario_id, role).
///
/// Any scenario id present on only one side is an error.
pub fn join_predictions(
    truth: &[GroundTruthRow],
    records: &[RoleOutcome],
    target: EvalTarget,
) -> Result<JoinedPairs, PipelineError> {
    let truth_ids: BTreeSet<&str> = truth.iter().map(|r| r.scenario_id.as_str()).collect();
    let session_ids: BTreeSet<&str> = records.iter().map(|r| r.scenario_id()).collect();
    let in_sessions_only: Vec<String> =
        session_ids.difference(&truth_ids).map(|s| s.to_string()).collect();
    let in_truth_only: Vec<String> = truth_ids.difference(&session_ids).map(|s| s.to_string()).collect();
    if !in_sessions_only.is_empty() || !in_truth_only.is_empty() {
        return Err(PipelineError::OrphanScenarios { in_sessions_only, in_truth_only });
    }

    let preds: BTreeMap<(&str, RoleId), f64> = records
        .iter()
        .filter_map(RoleOutcome::estimate)
        .filter_map(|e| {
            let v = match target {
                EvalTarget::Workload => e.workload,
                EvalTarget::Sa => e.sa,
            }?;
            Some(((e.scenario_id.as_str(), e.role), v))
        })
        .collect();

    let mut joined = JoinedPairs { points: Vec::new(), skipped: Vec::new() };
    for row in truth {
        match preds.get(&(row.scenario_id.as_str(), row.role)) {
            Some(&p) => {
                let t = match target {
                    EvalTarget::Workload => row.workload(),
                    EvalTarget::Sa => row.sart.sa(),
                };
                joined.points.push((row.role, t, p));
            }
            None => joined.skipped.push((row.scenario_id.clone(), row.role)),
        }
    }
    Ok(joined)
}

pub fn evaluate_run(
    truth: &[GroundTruthRow],
    records: &[RoleOutcome],
    target: EvalTarget,
    model_name: &str,
) -> Result<(EvalReport, JoinedPairs), PipelineError> {
    let joined = join_predictions(truth, records, target)?;
    let report = evaluate_groups(joined.points.iter().copied(), model_name)?;
    Ok((report, joined))
}

/// Records built, plus the (scenario, role) rows that had no estimate.
pub type SftBuild = (Vec<SftRecord>, Vec<(String, RoleId)>);

/// Builds one SFT record per ground-truth row, taking the trajectory from
/// the matching session estimate. Rows without a successful estimate are
/// returned as skipped.
pub fn build_sft_records(
    scenarios: &[ScenarioSpec],
    truth: &[GroundTruthRow],
    records: &[RoleOutcome],
    policy: &SpecialTokenPolicy,
) -> Result<SftBuild, PipelineError> {
    let by_id: BTreeMap<&str, &ScenarioSpec> = scenarios.iter().map(|s| (s.id.as_str(), s)).collect();
    let trajectories: BTreeMap<(&str, RoleId), _> = records
        .iter()
        .filter_map(RoleOutcome::estimate)
        .map(|e| ((e.scenario_id.as_str(), e.role), &e.trajectory))
        .collect();
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for row in truth {
        let scenario = by_id
            .get(row.scenario_id.as_str())
            .ok_or_else(|| PipelineError::UnknownScenario(row.scenario_id.clone()))?;
        match trajectories.get(&(row.scenario_id.as_str(), row.role)) {
            Some(traj) => out.push(build_record(
                scenario,
                row.role,
                traj,
                &GroundTruthAnswers::new(row.tlx, row.sart),
                policy,
            )?),
            None => skipped.push((row.scenario_id.clone(), row.role)),
        }
    }
    Ok((out, skipped))
}
