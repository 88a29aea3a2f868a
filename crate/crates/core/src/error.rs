use thiserror::Error;

/// Reasons an online run stops early.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum StopReason {
    ParticleCollision,
    OrderingViolation,
    SmallGradient,
    NonMonotoneMap,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::ParticleCollision => "particle_collision",
            StopReason::OrderingViolation => "ordering_violation",
            StopReason::SmallGradient => "small_gradient",
            StopReason::NonMonotoneMap => "non_monotone_map",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "particle_collision" => Some(StopReason::ParticleCollision),
            "ordering_violation" => Some(StopReason::OrderingViolation),
            "small_gradient" => Some(StopReason::SmallGradient),
            "non_monotone_map" => Some(StopReason::NonMonotoneMap),
            _ => None,
        }
    }
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum MatsError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid polyline: {0}")]
    InvalidPolyline(String),
    #[error("map is not strictly increasing")]
    NotMonotone,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("CFL condition violated: lambda * max speed = {courant} > 1 (max speed {max_speed})")]
    CflViolation { max_speed: f64, courant: f64 },
    #[error("function needs at least two nodes")]
    EmptyFunction,
    #[error("monotone pieces do not match: {0}")]
    PieceMismatch(String),
    #[error("signatures differ: reference {reference:?}, target {target:?}")]
    SignatureMismatch { reference: Vec<i8>, target: Vec<i8> },
    #[error("rearrangement produced a map that is not strictly increasing")]
    NonMonotoneResult,
    #[error("requested {requested} modes but numerical rank is {rank}")]
    RankDeficient { requested: usize, rank: usize },
    #[error("degenerate basis: {0}")]
    DegenerateBasis(String),
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("gradient {value:e} below floor {floor:e} at q-point {index}")]
    SmallGradient { index: usize, value: f64, floor: f64 },
    #[error("signature condition fails for {} snapshot(s), first offender #{}", .indices.len(), .indices.first().copied().unwrap_or(0))]
    SignatureViolation { indices: Vec<usize> },
    #[error("bundle schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MatsError>;
