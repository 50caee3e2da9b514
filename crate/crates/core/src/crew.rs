//! Five-role estimation sessions.
//!
//! Each role is queried independently. A role that cannot be estimated is
//! kept in the session as a [`FailureRecord`], so a session always has all
//! five roles.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{BackendError, GenerationBackend};
use crate::scenario::{RoleId, ScenarioError, ScenarioSpec};
use crate::survey::{SartRating, TlxRating};
use crate::trajectory::{
    parse_response, CognitiveTrajectory, Instrument, ParseError, PromptBundle, PromptTemplate,
};

/// Re-generations allowed after the first attempt fails to parse.
pub const MAX_REGENERATIONS: u32 = 2;
pub const MAX_ATTEMPTS: u32 = MAX_REGENERATIONS + 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CrewError {
    #[error("estimation failed after {attempts} attempt(s): {last_error}")]
    EstimationFailed { attempts: u32, last_error: ParseError, last_raw: String },
    #[error("backend unavailable on attempt {attempts}: {source}")]
    BackendUnavailable { attempts: u32, source: BackendError },
    #[error(transparent)]
    InvalidScenario(#[from] ScenarioError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadEstimate {
    pub scenario_id: String,
    pub role: RoleId,
    /// Absent when TLX was not requested.
    pub workload: Option<f64>,
    /// Absent when SART was not requested.
    pub sa: Option<f64>,
    pub tlx: Option<TlxRating>,
    pub sart: Option<SartRating>,
    pub trajectory: CognitiveTrajectory,
    pub raw_response: String,
    pub backend_id: String,
    pub attempt_count: u32,
    pub prompt: PromptBundle,
    pub created_at: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    EstimationFailed,
    BackendUnavailable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub scenario_id: String,
    pub role: RoleId,
    pub kind: FailureKind,
    pub error: String,
    pub parse_error: Option<ParseError>,
    /// Last offending response, kept for audit.
    pub raw_response: Option<String>,
    pub backend_id: String,
    pub attempt_count: u32,
    pub prompt: PromptBundle,
    pub created_at: String,
}

/// One JSONL line of a session file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum RoleOutcome {
    Estimate(WorkloadEstimate),
    Failure(FailureRecord),
}

impl RoleOutcome {
    pub fn role(&self) -> RoleId {
        match self {
            RoleOutcome::Estimate(e) => e.role,
            RoleOutcome::Failure(f) => f.role,
        }
    }

    pub fn scenario_id(&self) -> &str {
        match self {
            RoleOutcome::Estimate(e) => &e.scenario_id,
            RoleOutcome::Failure(f) => &f.scenario_id,
        }
    }

    pub fn estimate(&self) -> Option<&WorkloadEstimate> {
        match self {
            RoleOutcome::Estimate(e) => Some(e),
            RoleOutcome::Failure(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrewSession {
    pub scenario_id: String,
    /// Keyed in canonical role order.
    pub outcomes: BTreeMap<RoleId, RoleOutcome>,
}

impl CrewSession {
    pub fn estimates(&self) -> impl Iterator<Item = &WorkloadEstimate> {
        self.outcomes.values().filter_map(RoleOutcome::estimate)
    }

    pub fn failures(&self) -> impl Iterator<Item = &FailureRecord> {
        self.outcomes.values().filter_map(|o| match o {
            RoleOutcome::Failure(f) => Some(f),
            RoleOutcome::Estimate(_) => None,
        })
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for outcome in self.outcomes.values() {
            serde_json::to_writer(&mut w, outcome)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    /// Writes `<run_dir>/<scenario_id>.jsonl`.
    pub fn save(&self, run_dir: &Path) -> io::Result<PathBuf> {
        fs::create_dir_all(run_dir)?;
        let path = run_dir.join(format!("{}.jsonl", self.scenario_id));
        let mut f = io::BufWriter::new(fs::File::create(&path)?);
        self.write_jsonl(&mut f)?;
        f.flush()?;
        Ok(path)
    }
}

pub fn read_session_records<R: BufRead>(reader: R) -> io::Result<Vec<RoleOutcome>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {}", i + 1, e))
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_session_records(path: &Path) -> io::Result<Vec<RoleOutcome>> {
    read_session_records(io::BufReader::new(fs::File::open(path)?))
}

/// Derives a per-role seed so roles differ but runs reproduce.
pub fn role_seed(session_seed: u64, role: RoleId) -> u64 {
    let mut h = Sha256::new();
    h.update(b"wella-role-seed\0");
    h.update(session_seed.to_le_bytes());
    h.update(role.as_str().as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone)]
pub struct CrewOptions {
    pub instrument: Instrument,
    pub template: PromptTemplate,
    /// When set, each role's bundle carries `role_seed(session_seed, role)`.
    pub session_seed: Option<u64>,
    /// Query roles one after another instead of concurrently.
    pub sequential: bool,
}

impl Default for CrewOptions {
    fn default() -> Self {
        CrewOptions {
            instrument: Instrument::Both,
            template: PromptTemplate::default(),
            session_seed: None,
            sequential: false,
        }
    }
}

impl CrewOptions {
    pub fn with_instrument(instrument: Instrument) -> Self {
        CrewOptions { instrument, ..Default::default() }
    }

    pub fn seeded(mut self, seed: u64) -> Self {
        self.session_seed = Some(seed);
        self
    }

    fn bundle(&self, scenario: &ScenarioSpec, role: RoleId) -> PromptBundle {
        let mut b = self.template.build(scenario, role, self.instrument);
        if let Some(s) = self.session_seed {
            b.generation_params.seed = Some(role_seed(s, role));
        }
        b
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Estimates one role's workload, re-generating on unparseable replies.
pub fn estimate_role<B: GenerationBackend + ?Sized>(
    scenario: &ScenarioSpec,
    role: RoleId,
    backend: &B,
    options: &CrewOptions,
) -> Result<WorkloadEstimate, CrewError> {
    scenario.validate()?;
    estimate_validated(scenario, role, backend, options).map_err(|b| b.0)
}

fn estimate_validated<B: GenerationBackend + ?Sized>(
    scenario: &ScenarioSpec,
    role: RoleId,
    backend: &B,
    options: &CrewOptions,
) -> Result<WorkloadEstimate, Box<(CrewError, PromptBundle)>> {
    let original = options.bundle(scenario, role);
    let mut bundle = original.clone();
    let mut attempt = 0;
    loop {
        attempt += 1;
        let raw = match backend.generate(&bundle) {
            Ok(raw) if raw.trim().is_empty() => {
                return Err(Box::new((
                    CrewError::BackendUnavailable { attempts: attempt, source: BackendError::EmptyCompletion },
                    original,
                )))
            }
            Ok(raw) => raw,
            Err(source) => {
                return Err(Box::new((CrewError::BackendUnavailable { attempts: attempt, source }, original)))
            }
        };
        match parse_response(&raw, options.instrument) {
            Ok(parsed) => {
                let workload = parsed.tlx.as_ref().map(|t| t.workload().expect("parser enforces TLX ranges"));
                return Ok(WorkloadEstimate {
                    scenario_id: scenario.id.clone(),
                    role,
                    workload,
                    sa: parsed.sart.map(|s| s.sa()),
                    tlx: parsed.tlx,
                    sart: parsed.sart,
                    trajectory: parsed.trajectory,
                    raw_response: raw,
                    backend_id: backend.id(),
                    attempt_count: attempt,
                    prompt: original,
                    created_at: now(),
                });
            }
            Err(err) if attempt < MAX_ATTEMPTS => {
                log::debug!("{} {}: attempt {} unparseable: {}", scenario.id, role, attempt, err);
                bundle = original.with_correction(&err);
            }
            Err(err) => {
                return Err(Box::new((
                    CrewError::EstimationFailed { attempts: attempt, last_error: err, last_raw: raw },
                    original,
                )))
            }
        }
    }
}

fn outcome<B: GenerationBackend + ?Sized>(
    scenario: &ScenarioSpec,
    role: RoleId,
    backend: &B,
    options: &CrewOptions,
) -> RoleOutcome {
    match estimate_validated(scenario, role, backend, options) {
        Ok(e) => RoleOutcome::Estimate(e),
        Err(failed) => {
            let (err, prompt) = *failed;
            let (kind, attempt_count, parse_error, raw_response) = match &err {
                CrewError::EstimationFailed { attempts, last_error, last_raw } => (
                    FailureKind::EstimationFailed,
                    *attempts,
                    Some(last_error.clone()),
                    Some(last_raw.clone()),
                ),
                CrewError::BackendUnavailable { attempts, .. } => {
                    (FailureKind::BackendUnavailable, *attempts, None, None)
                }
                CrewError::InvalidScenario(_) => unreachable!("scenario validated up front"),
            };
            log::warn!("{} {}: {}", scenario.id, role, err);
            RoleOutcome::Failure(FailureRecord {
                scenario_id: scenario.id.clone(),
                role,
                kind,
                error: err.to_string(),
                parse_error,
                raw_response,
                backend_id: backend.id(),
                attempt_count,
                prompt,
                created_at: now(),
            })
        }
    }
}

/// Runs all five roles for a scenario.
///
/// Role failures become [`FailureRecord`]s. Only an invalid scenario is an
/// error, and it is reported before any backend call.
pub fn estimate_crew<B: GenerationBackend + ?Sized>(
    scenario: &ScenarioSpec,
    backend: &B,
    options: &CrewOptions,
) -> Result<CrewSession, ScenarioError> {
    scenario.validate()?;
    let outcomes: BTreeMap<RoleId, RoleOutcome> =
        if options.sequential || backend.requires_serialization() {
            RoleId::ALL.iter().map(|&r| (r, outcome(scenario, r, backend, options))).collect()
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = RoleId::ALL
                    .iter()
                    .map(|&r| (r, s.spawn(move || outcome(scenario, r, backend, options))))
                    .collect();
                handles
                    .into_iter()
                    .map(|(r, h)| (r, h.join().expect("role task panicked")))
                    .collect()
            })
        };
    Ok(CrewSession { scenario_id: scenario.id.clone(), outcomes })
}
