use crate::model::Reflection;

/// Errors raised by the phase-problem toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unsupported dimension {0} (only 2 and 3 are supported)")]
    UnsupportedDimension(usize),

    #[error("invalid structure: {0}")]
    InvalidStructure(String),

    #[error("invalid Patterson map: {0}")]
    InvalidPatterson(String),

    #[error("corrupted Patterson map: imaginary part {residual:.3e} at reflection {reflection}")]
    ImaginaryResidual { reflection: Reflection, residual: f64 },

    #[error("missing intensity for reflection {0} (observed window too small)")]
    MissingReflection(Reflection),

    #[error("window exhausted: the scan needs {needed}, which lies outside the usable set ({found} independent reflections found so far)")]
    WindowExhausted { needed: Reflection, found: usize },

    #[error("window too small: {0}")]
    WindowTooSmall(String),

    #[error("combinatorial guard: {count} subsets exceed the limit of {limit}")]
    CombinatorialGuard { count: u128, limit: u128 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("exact S1 search refused: {0} observed reflections in a non-box shape (limit 4096)")]
    SearchTooLarge(usize),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("root {root} has modulus {modulus:.6}, not on the unit circle")]
    NonUnimodularRoot { root: String, modulus: f64 },

    #[error("inconsistent data: {0}")]
    Inconsistent(String),

    #[error("closed form not applicable: {0}")]
    ClosedFormNotApplicable(String),

    #[error("random generation failed after {0} retries")]
    RetryCapExceeded(usize),

    #[error("deconvolution guard: {0}")]
    GuardExceeded(String),

    #[error("pattern extension stalled with {} unreachable reflections", .gaps.len())]
    Stalled { gaps: Vec<Reflection> },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors meaning the observed window cannot support a solution, as
    /// opposed to malformed input or a numerical failure.
    pub fn is_window_too_small(&self) -> bool {
        matches!(
            self,
            Error::WindowExhausted { .. } | Error::WindowTooSmall(_) | Error::MissingReflection(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
