use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("τ = {tau} lies outside the scale-factor domain ({start}, 0)")]
    OutOfDomain { tau: f64, start: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("scale factor is not monotone: -f'({tau}) = {value} <= 0")]
    NotMonotone { tau: f64, value: f64 },

    #[error("graph is not spacelike at grid index {index}: v² = {v2}")]
    NotSpacelike { index: usize, v2: f64 },

    #[error("graph reached the singularity at grid index {index}: u = {u}")]
    NonNegativeGraph { index: usize, u: f64 },

    #[error("mean-curvature-barrier violated at grid index {index}: F = {value}")]
    BarrierViolated { index: usize, value: f64 },

    #[error("step failure at t = {t} after {rejections} rejections (last dt = {dt}): {reason}")]
    StepFailure {
        t: f64,
        dt: f64,
        rejections: usize,
        reason: String,
    },

    #[error("recollapse before singularity: {0}")]
    Recollapse(String),

    #[error("interpolation outside the available range: {0}")]
    OutOfRange(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Failures of a trial state inside an integrator step that a smaller step may avoid.
    pub fn is_recoverable_in_step(&self) -> bool {
        matches!(
            self,
            Error::NotSpacelike { .. }
                | Error::BarrierViolated { .. }
                | Error::NonNegativeGraph { .. }
                | Error::OutOfDomain { .. }
                | Error::NonFinite(_)
        )
    }
}
