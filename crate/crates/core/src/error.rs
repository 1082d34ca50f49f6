use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate objective: coefficient vector is zero")]
    DegenerateObjective,

    #[error("curvature {second_derivative} is not negative; the point is not a local maximum")]
    NotAMaximum { second_derivative: f64 },

    #[error("bessel ratio {0} is outside [0, 1)")]
    RatioOutOfRange(f64),

    #[error("{context}: matrix is ill-conditioned (condition number {condition:.3e})")]
    IllConditioned { context: String, condition: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("reference channel has zero energy")]
    ZeroTruth,

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("truncated file: needed at least {needed} bytes")]
    Truncated { needed: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
