//! Text-generation backends.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::survey::{SartRating, TlxRating, SART_ITEM_COUNT};
use crate::trajectory::{render_response, CognitiveTrajectory, Phase, PhaseEntry, PromptBundle};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("quota exceeded (HTTP 429) after {attempts} attempt(s)")]
    Quota { attempts: u32 },
    #[error("request rejected (HTTP {status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("backend returned an empty completion")]
    EmptyCompletion,
}

/// Anything that turns a prompt into raw response text.
///
/// Implementations must be deterministic for a given seed when they support
/// seeding, and must never return an empty string on success.
pub trait GenerationBackend: Send + Sync {
    fn id(&self) -> String;

    fn generate(&self, bundle: &PromptBundle) -> Result<String, BackendError>;

    /// Backends that cannot be called from several threads at once return true;
    /// the orchestrator then queries roles one at a time.
    fn requires_serialization(&self) -> bool {
        false
    }
}

impl<B: GenerationBackend + ?Sized> GenerationBackend for &B {
    fn id(&self) -> String {
        (**self).id()
    }
    fn generate(&self, bundle: &PromptBundle) -> Result<String, BackendError> {
        (**self).generate(bundle)
    }
    fn requires_serialization(&self) -> bool {
        (**self).requires_serialization()
    }
}

impl<B: GenerationBackend + ?Sized> GenerationBackend for Box<B> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn generate(&self, bundle: &PromptBundle) -> Result<String, BackendError> {
        (**self).generate(bundle)
    }
    fn requires_serialization(&self) -> bool {
        (**self).requires_serialization()
    }
}

fn mock_rng(bundle: &PromptBundle, seed: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"wella-mock\0");
    h.update(bundle.canonical_bytes());
    h.update(seed.to_le_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

const MOCK_PHRASES: [&str; 5] = [
    "I scan the alarm panel and trend displays for the units I am responsible for",
    "I compare the indications against the expected plant state to work out what is happening",
    "I weigh the procedure options and pick the response that keeps the units stable",
    "I carry out the selected control actions and verify the plant responds",
    "I report status to the crew and confirm the next steps with the shift supervisor",
];

/// Deterministic stand-in for a language model.
///
/// The output is a pure function of the bundle bytes and `seed`, always
/// satisfies the response grammar, and answers only the instruments the
/// bundle asks for.
pub fn mock_generate(bundle: &PromptBundle, seed: u64) -> String {
    let mut rng = mock_rng(bundle, seed);
    let phases = Phase::ORDER
        .iter()
        .zip(MOCK_PHRASES)
        .map(|(phase, phrase)| PhaseEntry {
            phase: *phase,
            narrative: format!("As {}, {} (observation {}).", bundle.role, phrase, rng.random_range(1..1000)),
            cues: Vec::new(),
        })
        .collect();
    let trajectory = CognitiveTrajectory::new(phases).expect("mock phases are complete");

    let tlx = bundle.instrument.wants_tlx().then(|| {
        let mut v = [0.0; 6];
        for x in v.iter_mut() {
            *x = rng.random_range(0..=100u32) as f64;
        }
        TlxRating::new(v[0], v[1], v[2], v[3], v[4], v[5]).expect("in range")
    });
    let sart = bundle.instrument.wants_sart().then(|| {
        let items: Vec<u8> = (0..SART_ITEM_COUNT).map(|_| rng.random_range(1..=7u8)).collect();
        SartRating::new(&items).expect("in range")
    });
    render_response(&trajectory, tlx.as_ref(), sart.as_ref())
}

/// Backend wrapper around [`mock_generate`]. The bundle's own seed wins over
/// the backend default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MockBackend {
    pub default_seed: u64,
}

impl MockBackend {
    pub fn new(default_seed: u64) -> Self {
        MockBackend { default_seed }
    }
}

impl GenerationBackend for MockBackend {
    fn id(&self) -> String {
        "mock".to_string()
    }

    fn generate(&self, bundle: &PromptBundle) -> Result<String, BackendError> {
        Ok(mock_generate(bundle, bundle.generation_params.seed.unwrap_or(self.default_seed)))
    }
}
