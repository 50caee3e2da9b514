//! Scenario data model for the six-module HTGR main control room.
//!
//! A scenario is declarative input: the plant state is given, never simulated.
//! Documents are UTF-8 JSON with the keys `id`, `category`, `narrative`,
//! `nsss_modules`, and optionally `conventional_island` and `crew_notes`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Number of NSSS modules in the plant.
pub const NSSS_MODULE_COUNT: u8 = 6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("malformed scenario document: {0}")]
    MalformedDocument(String),
    #[error("unknown scenario category `{0}` (expected Startup, Shutdown or Accident)")]
    UnknownCategory(String),
    #[error("unknown status `{value}` for nsss_modules[module_no={module_no}].status")]
    UnknownStatus { module_no: u8, value: String },
    #[error("nsss_modules lists module {0} more than once")]
    DuplicateModule(u8),
    #[error("nsss_modules is missing module {0}")]
    MissingModule(u8),
    #[error("nsss_modules entry has module_no {0}, expected 1..=6")]
    ModuleOutOfRange(i64),
    #[error("nsss_modules[module_no={module_no}].water_flow_rate must be a non-negative number, got {value}")]
    InvalidFlowRate { module_no: u8, value: f64 },
    #[error("nsss_modules[module_no={module_no}].extra_params.{name} must be a number")]
    NonNumericParameter { module_no: u8, name: String },
    #[error("unknown role `{0}` in crew_notes (expected RO1, RO2, RO3, CO or SO)")]
    UnknownRole(String),
    #[error("scenario field `{0}` must not be empty")]
    EmptyField(&'static str),
}

/// Control-room role. Ordering is the canonical crew order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RoleId {
    RO1,
    RO2,
    RO3,
    CO,
    SO,
}

impl RoleId {
    pub const ALL: [RoleId; 5] = [RoleId::RO1, RoleId::RO2, RoleId::RO3, RoleId::CO, RoleId::SO];

    pub fn as_str(self) -> &'static str {
        match self {
            RoleId::RO1 => "RO1",
            RoleId::RO2 => "RO2",
            RoleId::RO3 => "RO3",
            RoleId::CO => "CO",
            RoleId::SO => "SO",
        }
    }

    pub fn is_reactor_operator(self) -> bool {
        matches!(self, RoleId::RO1 | RoleId::RO2 | RoleId::RO3)
    }

    /// Short description of the role's standing responsibility.
    pub fn duty(self) -> &'static str {
        match self {
            RoleId::RO1 => "reactor operator responsible for NSSS modules 1 and 2",
            RoleId::RO2 => "reactor operator responsible for NSSS modules 3 and 4",
            RoleId::RO3 => "reactor operator responsible for NSSS modules 5 and 6",
            RoleId::CO => "secondary loop operator in charge of the conventional island",
            RoleId::SO => "shift supervisor coordinating the overall activities of the control room",
        }
    }
}

impl fmt::Display for RoleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoleId {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "RO1" => Ok(RoleId::RO1),
            "RO2" => Ok(RoleId::RO2),
            "RO3" => Ok(RoleId::RO3),
            "CO" => Ok(RoleId::CO),
            "SO" => Ok(RoleId::SO),
            _ => Err(ScenarioError::UnknownRole(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScenarioCategory {
    Startup,
    Shutdown,
    Accident,
}

impl ScenarioCategory {
    pub const ALL: [ScenarioCategory; 3] = [
        ScenarioCategory::Startup,
        ScenarioCategory::Shutdown,
        ScenarioCategory::Accident,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioCategory::Startup => "Startup",
            ScenarioCategory::Shutdown => "Shutdown",
            ScenarioCategory::Accident => "Accident",
        }
    }
}

impl fmt::Display for ScenarioCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioCategory {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "startup" => Ok(ScenarioCategory::Startup),
            "shutdown" => Ok(ScenarioCategory::Shutdown),
            "accident" => Ok(ScenarioCategory::Accident),
            _ => Err(ScenarioError::UnknownCategory(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModuleStatus {
    Running,
    ShuttingDown,
    Shutdown,
    StartingUp,
}

impl ModuleStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ModuleStatus::Running => "Running",
            ModuleStatus::ShuttingDown => "ShuttingDown",
            ModuleStatus::Shutdown => "Shutdown",
            ModuleStatus::StartingUp => "StartingUp",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        // accepts "ShuttingDown", "shutting_down", "shutting down"
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, '_' | ' ' | '-'))
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "running" => Some(ModuleStatus::Running),
            "shuttingdown" => Some(ModuleStatus::ShuttingDown),
            "shutdown" => Some(ModuleStatus::Shutdown),
            "startingup" => Some(ModuleStatus::StartingUp),
            _ => None,
        }
    }
}

impl fmt::Display for ModuleStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NsssModuleState {
    pub module_no: u8,
    /// kg/s
    pub water_flow_rate: f64,
    pub status: ModuleStatus,
    pub extra_params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub id: String,
    pub category: ScenarioCategory,
    pub narrative: String,
    /// Sorted by module number after parsing.
    pub plant_state: Vec<NsssModuleState>,
    pub conventional_island_state: Option<String>,
    pub crew_notes: BTreeMap<RoleId, String>,
}

impl ScenarioSpec {
    /// Checks every structural invariant of a scenario value.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.id.trim().is_empty() {
            return Err(ScenarioError::EmptyField("id"));
        }
        if self.narrative.trim().is_empty() {
            return Err(ScenarioError::EmptyField("narrative"));
        }
        let mut seen = BTreeSet::new();
        for m in &self.plant_state {
            if !(1..=NSSS_MODULE_COUNT).contains(&m.module_no) {
                return Err(ScenarioError::ModuleOutOfRange(m.module_no as i64));
            }
            if !seen.insert(m.module_no) {
                return Err(ScenarioError::DuplicateModule(m.module_no));
            }
            if !(m.water_flow_rate.is_finite() && m.water_flow_rate >= 0.0) {
                return Err(ScenarioError::InvalidFlowRate {
                    module_no: m.module_no,
                    value: m.water_flow_rate,
                });
            }
            if let Some((name, _)) = m.extra_params.iter().find(|(_, v)| !v.is_finite()) {
                return Err(ScenarioError::NonNumericParameter {
                    module_no: m.module_no,
                    name: name.clone(),
                });
            }
        }
        if let Some(missing) = (1..=NSSS_MODULE_COUNT).find(|n| !seen.contains(n)) {
            return Err(ScenarioError::MissingModule(missing));
        }
        Ok(())
    }

    pub fn module(&self, module_no: u8) -> Option<&NsssModuleState> {
        self.plant_state.iter().find(|m| m.module_no == module_no)
    }

    /// Serializes to the scenario document schema.
    pub fn to_json_value(&self) -> Value {
        let modules: Vec<Value> = self
            .plant_state
            .iter()
            .map(|m| {
                let mut obj = serde_json::Map::new();
                obj.insert("module_no".into(), Value::from(m.module_no));
                obj.insert("water_flow_rate".into(), Value::from(m.water_flow_rate));
                obj.insert("status".into(), Value::from(m.status.as_str()));
                if !m.extra_params.is_empty() {
                    let params: serde_json::Map<String, Value> = m
                        .extra_params
                        .iter()
                        .map(|(k, v)| (k.clone(), Value::from(*v)))
                        .collect();
                    obj.insert("extra_params".into(), Value::Object(params));
                }
                Value::Object(obj)
            })
            .collect();
        let mut doc = serde_json::Map::new();
        doc.insert("id".into(), Value::from(self.id.clone()));
        doc.insert("category".into(), Value::from(self.category.as_str()));
        doc.insert("narrative".into(), Value::from(self.narrative.clone()));
        doc.insert("nsss_modules".into(), Value::Array(modules));
        if let Some(ci) = &self.conventional_island_state {
            doc.insert("conventional_island".into(), Value::from(ci.clone()));
        }
        if !self.crew_notes.is_empty() {
            let notes: serde_json::Map<String, Value> = self
                .crew_notes
                .iter()
                .map(|(r, s)| (r.as_str().to_string(), Value::from(s.clone())))
                .collect();
            doc.insert("crew_notes".into(), Value::Object(notes));
        }
        Value::Object(doc)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("scenario values serialize")
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    id: String,
    category: String,
    narrative: String,
    nsss_modules: Vec<RawModule>,
    #[serde(default)]
    conventional_island: Option<String>,
    #[serde(default)]
    crew_notes: BTreeMap<String, String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModule {
    module_no: i64,
    water_flow_rate: f64,
    status: String,
    #[serde(default)]
    extra_params: BTreeMap<String, Value>,
}

/// Parses and validates a scenario document.
pub fn parse_scenario(document: &str) -> Result<ScenarioSpec, ScenarioError> {
    let raw: RawScenario = serde_json::from_str(document)
        .map_err(|e| ScenarioError::MalformedDocument(e.to_string()))?;

    let category = raw.category.parse::<ScenarioCategory>()?;

    let mut plant_state = Vec::with_capacity(raw.nsss_modules.len());
    for m in raw.nsss_modules {
        if !(1..=NSSS_MODULE_COUNT as i64).contains(&m.module_no) {
            return Err(ScenarioError::ModuleOutOfRange(m.module_no));
        }
        let module_no = m.module_no as u8;
        let status = ModuleStatus::parse(&m.status).ok_or_else(|| ScenarioError::UnknownStatus {
            module_no,
            value: m.status.clone(),
        })?;
        let mut extra_params = BTreeMap::new();
        for (name, value) in m.extra_params {
            let v = value
                .as_f64()
                .ok_or_else(|| ScenarioError::NonNumericParameter { module_no, name: name.clone() })?;
            extra_params.insert(name, v);
        }
        plant_state.push(NsssModuleState {
            module_no,
            water_flow_rate: m.water_flow_rate,
            status,
            extra_params,
        });
    }

    let mut crew_notes = BTreeMap::new();
    for (role, note) in raw.crew_notes {
        crew_notes.insert(role.parse::<RoleId>()?, note);
    }

    let mut spec = ScenarioSpec {
        id: raw.id,
        category,
        narrative: raw.narrative,
        plant_state,
        conventional_island_state: raw.conventional_island,
        crew_notes,
    };
    spec.validate()?;
    spec.plant_state.sort_by_key(|m| m.module_no);
    Ok(spec)
}

/// NSSS modules a role operates directly. Empty for CO and SO.
pub fn responsible_modules(role: RoleId) -> BTreeSet<u8> {
    match role {
        RoleId::RO1 => [1, 2].into(),
        RoleId::RO2 => [3, 4].into(),
        RoleId::RO3 => [5, 6].into(),
        RoleId::CO | RoleId::SO => BTreeSet::new(),
    }
}

/// The part of a scenario a given role is shown.
#[derive(Debug, Clone, PartialEq)]
pub struct RoleView {
    pub role: RoleId,
    pub scenario_id: String,
    pub category: ScenarioCategory,
    pub narrative: String,
    pub modules: Vec<NsssModuleState>,
    pub conventional_island: Option<String>,
    pub job_description: Option<String>,
}

impl RoleView {
    pub fn module_numbers(&self) -> BTreeSet<u8> {
        self.modules.iter().map(|m| m.module_no).collect()
    }

    /// Plain-text rendering used inside prompts.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("Scenario: {} ({})\n", self.scenario_id, self.category));
        out.push_str(&format!("Your role: {} - {}\n", self.role, self.role.duty()));
        if let Some(job) = &self.job_description {
            out.push_str(&format!("Job description: {}\n", job));
        }
        out.push_str(&format!("Situation: {}\n", self.narrative.trim()));
        if !self.modules.is_empty() {
            out.push_str("Plant state:\n");
            for m in &self.modules {
                out.push_str(&format!(
                    "- NSSS module {}: status {}, water flow rate {} kg/s",
                    m.module_no, m.status, m.water_flow_rate
                ));
                for (k, v) in &m.extra_params {
                    out.push_str(&format!(", {} {}", k, v));
                }
                out.push('\n');
            }
        }
        if let Some(ci) = &self.conventional_island {
            out.push_str(&format!("Conventional island: {}\n", ci.trim()));
        }
        out
    }
}

/// Scopes a scenario to what `role` is responsible for.
///
/// Reactor operators see their two modules, CO sees the conventional island
/// and no NSSS modules, SO sees the whole plant.
pub fn role_view(scenario: &ScenarioSpec, role: RoleId) -> RoleView {
    let modules: Vec<NsssModuleState> = match role {
        RoleId::SO => scenario.plant_state.clone(),
        RoleId::CO => Vec::new(),
        ro => {
            let owned = responsible_modules(ro);
            scenario
                .plant_state
                .iter()
                .filter(|m| owned.contains(&m.module_no))
                .cloned()
                .collect()
        }
    };
    let conventional_island = match role {
        RoleId::CO | RoleId::SO => scenario.conventional_island_state.clone(),
        _ => None,
    };
    RoleView {
        role,
        scenario_id: scenario.id.clone(),
        category: scenario.category,
        narrative: scenario.narrative.clone(),
        modules,
        conventional_island,
        job_description: scenario.crew_notes.get(&role).cloned(),
    }
}
