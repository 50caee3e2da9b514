//! Scenario-driven synthetic workload data for a five-role reactor control room.
//!
//! Role agents backed by a pluggable text generator walk through a scenario,
//! answer NASA-TLX and SART questionnaires, and the answers are scored,
//! exported as fine-tuning data, and evaluated against operator surveys. A
//! GOMS-style Monte Carlo baseline is included for comparison.

pub mod backend;
pub mod crew;
pub mod goms;
pub mod harness;
pub mod metrics;
pub mod scenario;
pub mod sft;
pub mod survey;
pub mod trajectory;

pub use backend::{mock_generate, BackendError, GenerationBackend, MockBackend};
pub use crew::{estimate_crew, estimate_role, CrewOptions, CrewSession, RoleOutcome, WorkloadEstimate};
pub use scenario::{parse_scenario, responsible_modules, role_view, RoleId, ScenarioCategory, ScenarioSpec};
pub use survey::{sart_dimensions, sart_sa, tlx_workload, SartRating, TlxRating};
pub use trajectory::{build_prompt, parse_response, CognitiveTrajectory, Instrument, PromptBundle};
