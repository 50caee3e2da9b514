//! Prompt assembly and response parsing for role agents.
//!
//! A backend must answer with a single JSON object, optionally inside one
//! markdown code fence:
//!
//! ```text
//! {"phases": [{"phase": "detection", "narrative": "...", "cues": ["..."]}, ... 5 entries],
//!  "answers": {"tlx": {"mental_demand": 55, ...}, "sart": [3, 4, 4, 5, 5, 6, 4, 5, 6, 5]}}
//! ```
//!
//! Phases appear exactly once each, in macro-cognitive order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::scenario::{role_view, responsible_modules, RoleId, ScenarioSpec};
use crate::survey::{Questionnaire, SartRating, TlxRating, SART_ITEM_COUNT};

pub const TEMPLATE_ID: &str = "wella-role-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Detection,
    Understanding,
    DecisionMaking,
    ActionExecution,
    InterTeamCoordination,
}

impl Phase {
    pub const ORDER: [Phase; 5] = [
        Phase::Detection,
        Phase::Understanding,
        Phase::DecisionMaking,
        Phase::ActionExecution,
        Phase::InterTeamCoordination,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Detection => "detection",
            Phase::Understanding => "understanding",
            Phase::DecisionMaking => "decision_making",
            Phase::ActionExecution => "action_execution",
            Phase::InterTeamCoordination => "inter_team_coordination",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Phase::ORDER.into_iter().find(|p| p.as_str() == s).ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseEntry {
    pub phase: Phase,
    pub narrative: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cues: Vec<String>,
}

/// Five-phase macro-cognitive narrative for one role in one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<PhaseEntry>", into = "Vec<PhaseEntry>")]
pub struct CognitiveTrajectory {
    phases: Vec<PhaseEntry>,
}

impl CognitiveTrajectory {
    pub fn new(phases: Vec<PhaseEntry>) -> Result<Self, ParseError> {
        for (i, expected) in Phase::ORDER.iter().enumerate() {
            match phases.get(i) {
                None => return Err(ParseError::MissingPhase(*expected)),
                Some(e) if e.phase != *expected => {
                    if phases.iter().any(|p| p.phase == *expected) {
                        return Err(ParseError::Malformed(format!(
                            "phase `{}` out of order at position {}",
                            e.phase,
                            i + 1
                        )));
                    }
                    return Err(ParseError::MissingPhase(*expected));
                }
                Some(e) if e.narrative.trim().is_empty() => {
                    return Err(ParseError::Malformed(format!(
                        "phase `{}` has an empty narrative",
                        e.phase
                    )));
                }
                Some(_) => {}
            }
        }
        if phases.len() > Phase::ORDER.len() {
            return Err(ParseError::Malformed(format!(
                "expected 5 phases, got {}",
                phases.len()
            )));
        }
        Ok(CognitiveTrajectory { phases })
    }

    pub fn phases(&self) -> &[PhaseEntry] {
        &self.phases
    }

    pub fn phase(&self, phase: Phase) -> &PhaseEntry {
        &self.phases[phase as usize]
    }
}

impl TryFrom<Vec<PhaseEntry>> for CognitiveTrajectory {
    type Error = ParseError;
    fn try_from(v: Vec<PhaseEntry>) -> Result<Self, Self::Error> {
        CognitiveTrajectory::new(v)
    }
}

impl From<CognitiveTrajectory> for Vec<PhaseEntry> {
    fn from(t: CognitiveTrajectory) -> Self {
        t.phases
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Instrument {
    Tlx,
    Sart,
    Both,
}

impl Instrument {
    pub fn wants_tlx(self) -> bool {
        matches!(self, Instrument::Tlx | Instrument::Both)
    }
    pub fn wants_sart(self) -> bool {
        matches!(self, Instrument::Sart | Instrument::Both)
    }
}

impl FromStr for Instrument {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tlx" => Ok(Instrument::Tlx),
            "sart" => Ok(Instrument::Sart),
            "both" => Ok(Instrument::Both),
            other => Err(format!("unknown instrument `{other}` (expected tlx, sart or both)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams { temperature: 0.0, max_tokens: 2048, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub template_id: String,
    pub role: RoleId,
    pub instrument: Instrument,
    pub system_text: String,
    pub user_text: String,
    pub generation_params: GenerationParams,
}

impl PromptBundle {
    /// Stable byte encoding, used for hashing.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("bundles serialize")
    }

    /// Copy of the bundle with a parse complaint appended to the user text.
    pub fn with_correction(&self, error: &ParseError) -> PromptBundle {
        let mut b = self.clone();
        b.user_text.push_str(&format!(
            "\n\nYour previous reply could not be used: {error}. \
             Reply again with only the JSON object in the required format."
        ));
        b
    }
}

/// Wording and defaults for prompt construction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PromptTemplate {
    pub questionnaire: Questionnaire,
    pub params: GenerationParams,
}

impl PromptTemplate {
    pub fn system_text(&self, role: RoleId) -> String {
        format!(
            "You are {role}, the {duty} in the main control room of a multi-module \
             high-temperature gas-cooled reactor plant. One operator controls two or more \
             reactors. Reason and answer as this operator would, in the first person, \
             reporting your own perceived workload and situational awareness honestly.",
            duty = role.duty()
        )
    }

    pub fn user_text(&self, scenario: &ScenarioSpec, role: RoleId, instrument: Instrument) -> String {
        let mut out = format!("[template {TEMPLATE_ID}]\n");
        out.push_str(&role_view(scenario, role).render());

        if role == RoleId::SO {
            out.push_str("\nCrew assignments:\n");
            for other in RoleId::ALL.into_iter().filter(|r| *r != RoleId::SO) {
                let modules: Vec<String> =
                    responsible_modules(other).iter().map(|m| m.to_string()).collect();
                out.push_str(&format!("- {}: {}", other, other.duty()));
                if !modules.is_empty() {
                    out.push_str(&format!(" (modules {})", modules.join(", ")));
                }
                out.push('\n');
            }
        }

        out.push_str(
            "\nTask: describe how you work through this situation in five macro-cognitive \
             phases, in this exact order: detection, understanding, decision_making, \
             action_execution, inter_team_coordination. For each phase give a short \
             first-person narrative and optionally the scenario cues you relied on.\n",
        );

        let q = &self.questionnaire;
        if instrument.wants_tlx() {
            out.push_str("\nNASA-TLX questionnaire (answer each with an integer from 0 to 100):\n");
            for (key, text) in &q.tlx_items {
                out.push_str(&format!("- {key}: {text}\n"));
            }
        }
        if instrument.wants_sart() {
            out.push_str("\nSART questionnaire (answer each item with an integer from 1 to 7):\n");
            for (i, text) in q.sart_items.iter().enumerate() {
                out.push_str(&format!("{}. {}\n", i + 1, text));
            }
        }

        out.push_str("\nOutput format: reply with a single JSON object and nothing else:\n");
        out.push_str(
            "{\"phases\": [{\"phase\": \"detection\", \"narrative\": \"...\", \"cues\": [\"...\"]}, \
             {\"phase\": \"understanding\", ...}, {\"phase\": \"decision_making\", ...}, \
             {\"phase\": \"action_execution\", ...}, {\"phase\": \"inter_team_coordination\", ...}], \
             \"answers\": {",
        );
        let mut answers = Vec::new();
        if instrument.wants_tlx() {
            answers.push(
                "\"tlx\": {\"mental_demand\": 0, \"physical_demand\": 0, \"temporal_demand\": 0, \
                 \"effort\": 0, \"performance\": 0, \"frustration\": 0}",
            );
        }
        if instrument.wants_sart() {
            answers.push("\"sart\": [10 integers in questionnaire order]");
        }
        out.push_str(&answers.join(", "));
        out.push_str("}}\n");
        out
    }

    pub fn build(&self, scenario: &ScenarioSpec, role: RoleId, instrument: Instrument) -> PromptBundle {
        PromptBundle {
            template_id: TEMPLATE_ID.to_string(),
            role,
            instrument,
            system_text: self.system_text(role),
            user_text: self.user_text(scenario, role, instrument),
            generation_params: self.params.clone(),
        }
    }
}

/// Builds the role-scoped prompt with the default template.
pub fn build_prompt(scenario: &ScenarioSpec, role: RoleId, instrument: Instrument) -> PromptBundle {
    PromptTemplate::default().build(scenario, role, instrument)
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum ParseError {
    #[error("missing phase `{0}`")]
    MissingPhase(Phase),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("answer `{field}` = {value} is out of range")]
    OutOfRangeAnswer { field: String, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParsedResponse {
    pub trajectory: CognitiveTrajectory,
    pub tlx: Option<TlxRating>,
    pub sart: Option<SartRating>,
}

fn strip_fence(raw: &str) -> Result<&str, ParseError> {
    let t = raw.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let body_start = rest.find('\n').ok_or_else(|| {
            ParseError::Malformed("unterminated code fence".into())
        })?;
        let body = &rest[body_start + 1..];
        let body = body
            .trim_end()
            .strip_suffix("```")
            .ok_or_else(|| ParseError::Malformed("unterminated code fence".into()))?;
        Ok(body.trim())
    } else {
        Ok(t)
    }
}

fn malformed(msg: impl Into<String>) -> ParseError {
    ParseError::Malformed(msg.into())
}

fn parse_phases(value: &Value) -> Result<CognitiveTrajectory, ParseError> {
    let arr = value.as_array().ok_or_else(|| malformed("`phases` must be an array"))?;
    let mut entries = Vec::with_capacity(arr.len());
    for (i, item) in arr.iter().enumerate() {
        let obj = item.as_object().ok_or_else(|| malformed(format!("phases[{i}] must be an object")))?;
        let tag = obj
            .get("phase")
            .and_then(Value::as_str)
            .ok_or_else(|| malformed(format!("phases[{i}].phase must be a string")))?;
        let phase = tag
            .parse::<Phase>()
            .map_err(|_| malformed(format!("phases[{i}].phase `{tag}` is not a known phase")))?;
        let narrative = obj
            .get("narrative")
            .and_then(Value::as_str)
            .ok_or_else(|| malformed(format!("phases[{i}].narrative must be a string")))?;
        let cues = match obj.get("cues") {
            None | Some(Value::Null) => Vec::new(),
            Some(Value::Array(c)) => c
                .iter()
                .map(|v| v.as_str().map(str::to_string))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| malformed(format!("phases[{i}].cues must be strings")))?,
            Some(_) => return Err(malformed(format!("phases[{i}].cues must be an array"))),
        };
        entries.push(PhaseEntry { phase, narrative: narrative.to_string(), cues });
    }
    if entries.len() > Phase::ORDER.len() {
        return Err(malformed(format!("expected 5 phases, got {}", entries.len())));
    }
    for (i, e) in entries.iter().enumerate() {
        if entries[..i].iter().any(|p| p.phase == e.phase) {
            return Err(malformed(format!("phase `{}` appears twice", e.phase)));
        }
    }
    CognitiveTrajectory::new(entries)
}

fn parse_tlx(value: &Value) -> Result<TlxRating, ParseError> {
    let obj = value.as_object().ok_or_else(|| malformed("`answers.tlx` must be an object"))?;
    let mut vals = [0.0; 6];
    for (slot, field) in vals.iter_mut().zip(TlxRating::FIELDS) {
        let v = obj
            .get(field)
            .ok_or_else(|| malformed(format!("`answers.tlx.{field}` is missing")))?
            .as_f64()
            .ok_or_else(|| malformed(format!("`answers.tlx.{field}` must be a number")))?;
        if !(0.0..=100.0).contains(&v) {
            return Err(ParseError::OutOfRangeAnswer { field: field.to_string(), value: v });
        }
        *slot = v;
    }
    Ok(TlxRating::new(vals[0], vals[1], vals[2], vals[3], vals[4], vals[5])
        .expect("range checked above"))
}

fn parse_sart(value: &Value) -> Result<SartRating, ParseError> {
    let arr = value.as_array().ok_or_else(|| malformed("`answers.sart` must be an array"))?;
    if arr.len() != SART_ITEM_COUNT {
        return Err(malformed(format!("`answers.sart` needs 10 items, got {}", arr.len())));
    }
    let mut items = Vec::with_capacity(SART_ITEM_COUNT);
    for (i, v) in arr.iter().enumerate() {
        let n = v
            .as_f64()
            .ok_or_else(|| malformed(format!("`answers.sart[{}]` must be a number", i + 1)))?;
        if n.fract() != 0.0 || !(1.0..=7.0).contains(&n) {
            return Err(ParseError::OutOfRangeAnswer { field: format!("sart_{}", i + 1), value: n });
        }
        items.push(n);
    }
    Ok(SartRating::from_numbers(&items).expect("range checked above"))
}

/// Parses a backend reply under the response grammar.
///
/// Only the answers for `instrument` are required and returned.
pub fn parse_response(raw: &str, instrument: Instrument) -> Result<ParsedResponse, ParseError> {
    if raw.trim().is_empty() {
        return Err(malformed("empty response"));
    }
    let body = strip_fence(raw)?;
    let value: Value =
        serde_json::from_str(body).map_err(|e| malformed(format!("not a JSON object: {e}")))?;
    let obj = value.as_object().ok_or_else(|| malformed("top level must be a JSON object"))?;

    let trajectory = parse_phases(obj.get("phases").ok_or_else(|| malformed("`phases` is missing"))?)?;
    let answers = obj
        .get("answers")
        .and_then(Value::as_object)
        .ok_or_else(|| malformed("`answers` must be an object"))?;

    let tlx = if instrument.wants_tlx() {
        Some(parse_tlx(answers.get("tlx").ok_or_else(|| malformed("`answers.tlx` is missing"))?)?)
    } else {
        None
    };
    let sart = if instrument.wants_sart() {
        Some(parse_sart(answers.get("sart").ok_or_else(|| malformed("`answers.sart` is missing"))?)?)
    } else {
        None
    };
    Ok(ParsedResponse { trajectory, tlx, sart })
}

fn number(v: f64) -> Value {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        Value::from(v as i64)
    } else {
        Value::from(v)
    }
}

/// Renders a trajectory and answers in the response grammar.
pub fn render_response(
    trajectory: &CognitiveTrajectory,
    tlx: Option<&TlxRating>,
    sart: Option<&SartRating>,
) -> String {
    let phases: Vec<Value> = trajectory
        .phases()
        .iter()
        .map(|p| serde_json::to_value(p).expect("phase entries serialize"))
        .collect();
    let mut answers = Map::new();
    if let Some(t) = tlx {
        let obj: Map<String, Value> = TlxRating::FIELDS
            .iter()
            .zip(t.values())
            .map(|(k, v)| (k.to_string(), number(v)))
            .collect();
        answers.insert("tlx".into(), Value::Object(obj));
    }
    if let Some(s) = sart {
        answers.insert("sart".into(), Value::from(s.items().to_vec()));
    }
    let mut top = Map::new();
    top.insert("phases".into(), Value::Array(phases));
    top.insert("answers".into(), Value::Object(answers));
    Value::Object(top).to_string()
}
