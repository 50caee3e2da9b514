//! Instruction-tuning records built from (scenario, trajectory, survey) triples.
//!
//! Each record is a generic `system` / `instruction` / `output` triple. The
//! instruction is the same role-scoped prompt the agents receive; the output
//! is the trajectory plus the operator's real answers, rendered in the
//! response grammar with the special token in front.

use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{RoleId, ScenarioCategory, ScenarioSpec};
use crate::survey::{SartRating, SurveyError, TlxRating};
use crate::trajectory::{
    build_prompt, parse_response, render_response, CognitiveTrajectory, Instrument, ParseError,
    ParsedResponse,
};

pub const DEFAULT_SPECIAL_TOKEN: &str = "<cog>";

#[derive(Debug, Error)]
pub enum SftError {
    #[error("invalid ground truth: {0}")]
    InvalidGroundTruth(#[from] SurveyError),
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("line {line}: {message}")]
    Decode { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Where the special token goes. The current policy prepends one marker to
/// the output; placement is provisional and kept configurable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokenPolicy {
    pub marker: String,
}

impl Default for SpecialTokenPolicy {
    fn default() -> Self {
        SpecialTokenPolicy { marker: DEFAULT_SPECIAL_TOKEN.to_string() }
    }
}

impl SpecialTokenPolicy {
    /// Prepends the marker unless it is already there.
    pub fn apply(&self, output: &str) -> String {
        if self.marker.is_empty() || output.starts_with(&self.marker) {
            output.to_string()
        } else {
            format!("{}{}", self.marker, output)
        }
    }

    pub fn strip<'a>(&self, output: &'a str) -> &'a str {
        if self.marker.is_empty() {
            output
        } else {
            output.strip_prefix(self.marker.as_str()).unwrap_or(output)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftMeta {
    pub scenario_id: String,
    pub role: RoleId,
    pub category: ScenarioCategory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub system: String,
    pub instruction: String,
    pub output: String,
    pub meta: SftMeta,
}

impl SftRecord {
    /// Re-parses the output under the response grammar.
    pub fn parse_output(&self, policy: &SpecialTokenPolicy) -> Result<ParsedResponse, ParseError> {
        parse_response(policy.strip(&self.output), Instrument::Both)
    }
}

/// Survey answers as collected, before range validation.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthAnswers {
    pub tlx: TlxRating,
    pub sart_items: Vec<f64>,
}

impl GroundTruthAnswers {
    pub fn new(tlx: TlxRating, sart: SartRating) -> Self {
        GroundTruthAnswers { tlx, sart_items: sart.items().iter().map(|&v| v as f64).collect() }
    }
}

pub fn build_record(
    scenario: &ScenarioSpec,
    role: RoleId,
    trajectory: &CognitiveTrajectory,
    ground_truth: &GroundTruthAnswers,
    policy: &SpecialTokenPolicy,
) -> Result<SftRecord, SftError> {
    ground_truth.tlx.validate()?;
    let sart = SartRating::from_numbers(&ground_truth.sart_items)?;
    let prompt = build_prompt(scenario, role, Instrument::Both);
    let output = render_response(trajectory, Some(&ground_truth.tlx), Some(&sart));
    Ok(SftRecord {
        system: prompt.system_text,
        instruction: prompt.user_text,
        output: policy.apply(&output),
        meta: SftMeta { scenario_id: scenario.id.clone(), role, category: scenario.category },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self, SftError> {
        let r = SplitRatios { train, validation, test };
        for (name, v) in [("train", train), ("validation", validation), ("test", test)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SftError::InvalidRatios(format!("{name} ratio {v} must be positive")));
            }
        }
        let sum = train + validation + test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SftError::InvalidRatios(format!("ratios sum to {sum}, expected 1")));
        }
        Ok(r)
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.8, validation: 0.1, test: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<SftRecord>,
    pub validation: Vec<SftRecord>,
    pub test: Vec<SftRecord>,
    pub split_seed: u64,
    pub ratios: SplitRatios,
    /// Categories with no records at all.
    pub empty_categories: Vec<ScenarioCategory>,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Splits records per scenario category so each category follows the ratios
/// to within one record. Same seed, same membership.
pub fn stratified_split(
    records: Vec<SftRecord>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<DatasetSplit, SftError> {
    let ratios = SplitRatios::new(ratios.train, ratios.validation, ratios.test)?;
    let mut split = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        split_seed: seed,
        ratios,
        empty_categories: Vec::new(),
    };
    let mut by_category: Vec<Vec<SftRecord>> = vec![Vec::new(); ScenarioCategory::ALL.len()];
    for r in records {
        by_category[r.meta.category as usize].push(r);
    }
    for (ci, mut group) in by_category.into_iter().enumerate() {
        let category = ScenarioCategory::ALL[ci];
        if group.is_empty() {
            log::warn!("no records for category {category}");
            split.empty_categories.push(category);
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ci as u64);
        group.shuffle(&mut rng);

        let n = group.len();
        let n_train = ((n as f64 * ratios.train).round() as usize).min(n);
        let n_val = ((n as f64 * ratios.validation).round() as usize).min(n - n_train);
        let test = group.split_off(n_train + n_val);
        let val = group.split_off(n_train);
        split.train.extend(group);
        split.validation.extend(val);
        split.test.extend(test);
    }
    Ok(split)
}

pub fn write_jsonl<W: Write>(records: &[SftRecord], mut w: W) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<SftRecord>, SftError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| SftError::Decode { line: i + 1, message: e.to_string() })?,
        );
    }
    Ok(out)
}

pub fn export_jsonl(records: &[SftRecord], path: &Path) -> Result<(), SftError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    write_jsonl(records, BufWriter::new(fs::File::create(path)?))?;
    Ok(())
}

pub fn import_jsonl(path: &Path) -> Result<Vec<SftRecord>, SftError> {
    read_jsonl(io::BufReader::new(fs::File::open(path)?))
}

#[derive(Debug, Serialize)]
struct SplitManifest {
    split_seed: u64,
    ratios: SplitRatios,
    train: usize,
    validation: usize,
    test: usize,
    empty_categories: Vec<ScenarioCategory>,
}

/// Writes `train.jsonl`, `validation.jsonl`, `test.jsonl` and `split.json`
/// into `dir`.
pub fn export_split(split: &DatasetSplit, dir: &Path) -> Result<Vec<PathBuf>, SftError> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (name, records) in [
        ("train", &split.train),
        ("validation", &split.validation),
        ("test", &split.test),
    ] {
        let p = dir.join(format!("{name}.jsonl"));
        export_jsonl(records, &p)?;
        paths.push(p);
    }
    let manifest = SplitManifest {
        split_seed: split.split_seed,
        ratios: split.ratios,
        train: split.train.len(),
        validation: split.validation.len(),
        test: split.test.len(),
        empty_categories: split.empty_categories.clone(),
    };
    let p = dir.join("split.json");
    fs::write(&p, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
    paths.push(p);
    Ok(paths)
}

/// Hyperparameters handed to the downstream fine-tuning job. Not used here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub batch_size: u32,
    pub learning_rate: f64,
    pub epochs: u32,
    pub special_token: String,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 2,
            learning_rate: 1.0e-5,
            epochs: 8,
            special_token: DEFAULT_SPECIAL_TOKEN.to_string(),
        }
    }
}

impl TrainingConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("training config serializes")
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.to_toml())
    }
}
