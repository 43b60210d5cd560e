use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("parameter layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("missing labels: {0}")]
    MissingLabels(&'static str),

    #[error("missing group labels")]
    MissingGroups,

    #[error("bad magic bytes in artifact")]
    BadMagic,

    #[error("unsupported artifact version {0}")]
    UnsupportedVersion(u32),

    #[error("artifact checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("artifact truncated: {0}")]
    Truncated(String),

    #[error("malformed artifact: {0}")]
    Malformed(String),

    #[error("unknown subcommand: {0}")]
    UnknownSubcommand(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable tag, used by the CLI error report.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidSpec(_) => "invalid_spec",
            Error::InvalidConfig(_) => "invalid_config",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::LayoutMismatch(_) => "layout_mismatch",
            Error::Empty(_) => "empty_input",
            Error::OutOfRange(_) => "out_of_range",
            Error::MissingLabels(_) => "missing_labels",
            Error::MissingGroups => "missing_groups",
            Error::BadMagic => "bad_magic",
            Error::UnsupportedVersion(_) => "version_mismatch",
            Error::ChecksumMismatch { .. } => "checksum_mismatch",
            Error::Truncated(_) => "truncated",
            Error::Malformed(_) => "malformed",
            Error::UnknownSubcommand(_) => "unknown_subcommand",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
