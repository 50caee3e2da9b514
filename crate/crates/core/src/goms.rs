//! HUNTER-style dynamic HRA baseline.
//!
//! A procedure is an ordered list of steps. Each step samples an execution
//! time and checks logic conditions against a static plant parameter map. A
//! step fails when the sampled time exceeds its available time or any
//! condition is false; control then moves to the step's RNO branch
//! (`on_fail`), or the run ends if there is none. A successful step hands
//! over to the next step in list order.
//!
//! Run `i` draws from its own ChaCha stream (`seed`, stream `i`), so sharded
//! and single-threaded runs produce identical results.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound on resampling a negative Normal draw.
const MAX_RESAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GomsError {
    #[error("plant parameter `{0}` is not defined")]
    MissingParameter(String),
    #[error("step `{step}` branches to unknown step `{target}`")]
    BrokenGraph { step: String, target: String },
    #[error("on_fail branches form a cycle through `{0}`")]
    CyclicFailGraph(String),
    #[error("step id `{0}` is used more than once")]
    DuplicateStep(String),
    #[error("step `{step}`: {message}")]
    InvalidStep { step: String, message: String },
    #[error("procedure has no steps")]
    EmptyProcedure,
    #[error("n_runs must be at least 1")]
    NoRuns,
    #[error("procedure document: {0}")]
    Document(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TimeModel {
    /// Seconds. Negative draws are resampled.
    Normal { mu: f64, sigma: f64 },
    /// Parameters of the underlying normal, in log-seconds.
    #[serde(alias = "log_normal")]
    LogNormal { mu_log: f64, sigma_log: f64 },
    Fixed { seconds: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=", alias = "≤")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=", alias = "≥")]
    Ge,
    #[serde(rename = "=", alias = "==")]
    Eq,
}

impl Comparator {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Lt => value < threshold,
            Comparator::Le => value <= threshold,
            Comparator::Gt => value > threshold,
            Comparator::Ge => value >= threshold,
            Comparator::Eq => value == threshold,
        }
    }
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
            Comparator::Eq => "=",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub parameter: String,
    pub comparator: Comparator,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GomsStep {
    pub step_id: String,
    pub time_model: TimeModel,
    /// Seconds.
    pub available_time: f64,
    #[serde(default)]
    pub logic: Vec<Condition>,
    /// RNO branch; `None` ends the run on failure.
    #[serde(default)]
    pub on_fail: Option<String>,
}

impl GomsStep {
    pub fn new(step_id: &str, time_model: TimeModel, available_time: f64) -> Self {
        GomsStep {
            step_id: step_id.to_string(),
            time_model,
            available_time,
            logic: Vec::new(),
            on_fail: None,
        }
    }

    fn validate(&self) -> Result<(), GomsError> {
        let bad = |message: &str| GomsError::InvalidStep { step: self.step_id.clone(), message: message.into() };
        if !(self.available_time.is_finite() && self.available_time > 0.0) {
            return Err(bad("available_time must be positive"));
        }
        match self.time_model {
            TimeModel::Normal { mu, sigma } => {
                if !(sigma.is_finite() && sigma >= 0.0) {
                    return Err(bad("sigma must be non-negative"));
                }
                if !(mu.is_finite() && mu >= 0.0) {
                    return Err(bad("mu must be non-negative"));
                }
            }
            TimeModel::LogNormal { mu_log, sigma_log } => {
                if !(sigma_log.is_finite() && sigma_log >= 0.0) || !mu_log.is_finite() {
                    return Err(bad("sigma_log must be non-negative and mu_log finite"));
                }
            }
            TimeModel::Fixed { seconds } => {
                if !(seconds.is_finite() && seconds >= 0.0) {
                    return Err(bad("fixed time must be non-negative"));
                }
            }
        }
        if self.logic.iter().any(|c| !c.threshold.is_finite()) {
            return Err(bad("condition thresholds must be finite"));
        }
        Ok(())
    }
}

pub type PlantParams = BTreeMap<String, f64>;

/// True when every logic condition of the step holds.
pub fn check_logic(step: &GomsStep, plant_params: &PlantParams) -> Result<bool, GomsError> {
    let mut ok = true;
    for c in &step.logic {
        let v = plant_params
            .get(&c.parameter)
            .ok_or_else(|| GomsError::MissingParameter(c.parameter.clone()))?;
        ok &= c.comparator.holds(*v, c.threshold);
    }
    Ok(ok)
}

/// Draws a non-negative execution time in seconds.
pub fn sample_step_time<R: Rng + ?Sized>(model: &TimeModel, rng: &mut R) -> f64 {
    match *model {
        TimeModel::Fixed { seconds } => seconds,
        TimeModel::Normal { mu, sigma } => {
            if sigma == 0.0 {
                return mu;
            }
            let d = Normal::new(mu, sigma).expect("validated parameters");
            for _ in 0..MAX_RESAMPLES {
                let x = d.sample(rng);
                if x >= 0.0 {
                    return x;
                }
            }
            // unreachable in practice with mu >= 0
            0.0
        }
        TimeModel::LogNormal { mu_log, sigma_log } => {
            LogNormal::new(mu_log, sigma_log).expect("validated parameters").sample(rng)
        }
    }
}

/// A validated step graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Procedure {
    steps: Vec<GomsStep>,
    on_fail_index: Vec<Option<usize>>,
}

impl Procedure {
    pub fn new(steps: Vec<GomsStep>) -> Result<Self, GomsError> {
        if steps.is_empty() {
            return Err(GomsError::EmptyProcedure);
        }
        let mut index = HashMap::new();
        for (i, s) in steps.iter().enumerate() {
            s.validate()?;
            if index.insert(s.step_id.clone(), i).is_some() {
                return Err(GomsError::DuplicateStep(s.step_id.clone()));
            }
        }
        let on_fail_index = steps
            .iter()
            .map(|s| match &s.on_fail {
                None => Ok(None),
                Some(t) => index.get(t).copied().map(Some).ok_or_else(|| GomsError::BrokenGraph {
                    step: s.step_id.clone(),
                    target: t.clone(),
                }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        // A chain of failures must not loop back on itself.
        for start in 0..steps.len() {
            let mut cur = start;
            for _ in 0..steps.len() {
                match on_fail_index[cur] {
                    Some(next) if next == start => {
                        return Err(GomsError::CyclicFailGraph(steps[start].step_id.clone()))
                    }
                    Some(next) => cur = next,
                    None => break,
                }
            }
        }
        Ok(Procedure { steps, on_fail_index })
    }

    pub fn from_json(doc: &str) -> Result<Self, GomsError> {
        let steps: Vec<GomsStep> =
            serde_json::from_str(doc).map_err(|e| GomsError::Document(e.to_string()))?;
        Procedure::new(steps)
    }

    pub fn load(path: &Path) -> Result<Self, GomsError> {
        let doc = std::fs::read_to_string(path)
            .map_err(|e| GomsError::Document(format!("{}: {}", path.display(), e)))?;
        Procedure::from_json(&doc)
    }

    pub fn steps(&self) -> &[GomsStep] {
        &self.steps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEstimate {
    pub step_id: String,
    /// Runs in which the step was executed at least once.
    pub visited_runs: u64,
    /// Runs in which the step failed at least once.
    pub failed_runs: u64,
    /// `failed_runs / runs`.
    pub failure_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub step_id: String,
    pub time: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub runs: u64,
    pub seed: u64,
    pub steps: Vec<StepEstimate>,
    /// Runs that ended on a failure with no RNO branch.
    pub terminal_failures: u64,
    /// Runs stopped by the visit cap (backward RNO branches can loop).
    pub truncated_runs: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traces: Option<Vec<Vec<TraceEvent>>>,
}

impl McResult {
    pub fn step(&self, step_id: &str) -> Option<&StepEstimate> {
        self.steps.iter().find(|s| s.step_id == step_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McOptions {
    pub n_runs: u64,
    pub seed: u64,
    /// Number of worker threads; 1 runs inline.
    pub shards: usize,
    pub record_traces: bool,
}

impl McOptions {
    pub fn new(n_runs: u64, seed: u64) -> Self {
        McOptions { n_runs, seed, shards: 1, record_traces: false }
    }
}

#[derive(Default)]
struct Tally {
    visited: Vec<u64>,
    failed: Vec<u64>,
    terminal_failures: u64,
    truncated: u64,
    traces: Vec<Vec<TraceEvent>>,
}

impl Tally {
    fn new(n_steps: usize) -> Self {
        Tally { visited: vec![0; n_steps], failed: vec![0; n_steps], ..Default::default() }
    }

    fn absorb(&mut self, other: Tally) {
        for (a, b) in self.visited.iter_mut().zip(other.visited) {
            *a += b;
        }
        for (a, b) in self.failed.iter_mut().zip(other.failed) {
            *a += b;
        }
        self.terminal_failures += other.terminal_failures;
        self.truncated += other.truncated;
        self.traces.extend(other.traces);
    }
}

fn run_range(
    proc_: &Procedure,
    logic_ok: &[bool],
    runs: std::ops::Range<u64>,
    opts: &McOptions,
) -> Tally {
    let n = proc_.steps.len();
    let max_visits = n * 64;
    let mut tally = Tally::new(n);
    let mut visited = vec![false; n];
    let mut failed = vec![false; n];
    let base = ChaCha8Rng::seed_from_u64(opts.seed);
    for run in runs {
        let mut rng = base.clone();
        rng.set_stream(run);
        visited.iter_mut().for_each(|v| *v = false);
        failed.iter_mut().for_each(|v| *v = false);
        let mut trace = Vec::new();
        let mut cur = Some(0usize);
        let mut visits = 0;
        while let Some(i) = cur {
            if visits == max_visits {
                tally.truncated += 1;
                break;
            }
            visits += 1;
            let step = &proc_.steps[i];
            let t = sample_step_time(&step.time_model, &mut rng);
            let fail = t > step.available_time || !logic_ok[i];
            visited[i] = true;
            failed[i] |= fail;
            if opts.record_traces {
                trace.push(TraceEvent { step_id: step.step_id.clone(), time: t, failed: fail });
            }
            cur = if fail {
                if proc_.on_fail_index[i].is_none() {
                    tally.terminal_failures += 1;
                }
                proc_.on_fail_index[i]
            } else if i + 1 < n {
                Some(i + 1)
            } else {
                None
            };
        }
        for i in 0..n {
            tally.visited[i] += visited[i] as u64;
            tally.failed[i] += failed[i] as u64;
        }
        if opts.record_traces {
            tally.traces.push(trace);
        }
    }
    tally
}

/// Estimates per-step failure probabilities by Monte Carlo.
pub fn run_monte_carlo(
    procedure: &Procedure,
    plant_params: &PlantParams,
    n_runs: u64,
    seed: u64,
) -> Result<McResult, GomsError> {
    run_monte_carlo_with(procedure, plant_params, &McOptions::new(n_runs, seed))
}

pub fn run_monte_carlo_with(
    procedure: &Procedure,
    plant_params: &PlantParams,
    opts: &McOptions,
) -> Result<McResult, GomsError> {
    if opts.n_runs == 0 {
        return Err(GomsError::NoRuns);
    }
    // parameters are static per run, so logic outcomes are fixed
    let logic_ok: Vec<bool> = procedure
        .steps
        .iter()
        .map(|s| check_logic(s, plant_params))
        .collect::<Result<_, _>>()?;

    let shards = opts.shards.max(1).min(opts.n_runs as usize);
    let tally = if shards == 1 {
        run_range(procedure, &logic_ok, 0..opts.n_runs, opts)
    } else {
        let chunk = opts.n_runs.div_ceil(shards as u64);
        let parts: Vec<Tally> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..shards as u64)
                .map(|k| {
                    let range = (k * chunk).min(opts.n_runs)..((k + 1) * chunk).min(opts.n_runs);
                    let logic_ok = &logic_ok;
                    s.spawn(move || run_range(procedure, logic_ok, range, opts))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("shard panicked")).collect()
        });
        let mut total = Tally::new(procedure.steps.len());
        for p in parts {
            total.absorb(p);
        }
        total
    };

    let runs = opts.n_runs;
    Ok(McResult {
        runs,
        seed: opts.seed,
        steps: procedure
            .steps
            .iter()
            .enumerate()
            .map(|(i, s)| StepEstimate {
                step_id: s.step_id.clone(),
                visited_runs: tally.visited[i],
                failed_runs: tally.failed[i],
                failure_probability: tally.failed[i] as f64 / runs as f64,
            })
            .collect(),
        terminal_failures: tally.terminal_failures,
        truncated_runs: tally.truncated,
        traces: opts.record_traces.then_some(tally.traces),
    })
}
