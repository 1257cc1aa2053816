use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("potential overflow: |Q/D| = {0:.3e} exceeds 700")]
    PotentialOverflow(f64),

    #[error("degenerate fast flow: c vanishes near y = {0}")]
    DegenerateFastFlow(f64),

    #[error("stationary solve failed: {0}")]
    StationarySolveFailed(String),

    #[error("centering violated: integral of the fast drift against the invariant measure is {0:.3e}")]
    CenteringViolated(f64),

    #[error("cross-term centering violated: integral of <b_theta0, c_theta> against the invariant measure is {0:.3e}")]
    CrossCenteringViolated(f64),

    #[error("poisson solve failed: {0}")]
    PoissonSolveFailed(String),

    #[error("step {step:e} exceeds the step bound {bound:e} (pass allow_coarse_step to override)")]
    StepTooCoarse { step: f64, bound: f64 },

    #[error("blow-up at step {0}")]
    BlowUp(usize),

    #[error("non-finite accumulation in {0}")]
    NonFinite(&'static str),

    #[error("fast drift is nonzero: the limiting likelihood needs b = 0, use the pseudo-likelihood path")]
    FastDriftPresent,

    #[error("Fisher information degenerate: {info:.3e} < floor {floor:.3e}")]
    DegenerateFisher { info: f64, floor: f64 },

    #[error("parameter {theta} leaves the domain [{lo}, {hi}]")]
    OutOfDomain { theta: f64, lo: f64, hi: f64 },

    #[error("integral of |V'|^2 along the path vanishes")]
    VanishingDenominator,

    #[error("model `{0}` has no gradient structure (b = -Q', c = -theta V')")]
    MissingGradient(String),

    #[error("bias cross-check failed: generic route {generic} vs closed form {closed}")]
    BiasCrossCheck { generic: f64, closed: f64 },

    #[error("too many failed replications: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },

    #[error("csv parse error at line {line}: {message}")]
    Csv { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 1 for configuration or input problems, 2 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::UnknownModel(_)
            | Error::InvalidModel(_)
            | Error::InvalidArgument(_)
            | Error::Config { .. }
            | Error::StepTooCoarse { .. }
            | Error::MissingGradient(_)
            | Error::Csv { .. }
            | Error::Io(_)
            | Error::Json(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
