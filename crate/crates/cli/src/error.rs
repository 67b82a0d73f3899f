use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] gmclab::Error),
    #[error("no scan result for grid point p={p}, q={q}")]
    MissingGridPoint { p: f64, q: f64 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Core(_) => "core",
            CliError::MissingGridPoint { .. } => "missing-grid-point",
            CliError::Io(_) => "io",
            CliError::Json(_) => "json",
        }
    }

    /// `2` for anything the user can fix in the configuration, `1` otherwise.
    pub fn exit_code(&self) -> i32 {
        use gmclab::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                E::InvalidArgument(_)
                | E::InvalidRegion(_)
                | E::InvalidGamma(_)
                | E::InvalidPoint(_)
                | E::InvalidSpec(_)
                | E::NonSquareCells { .. }
                | E::SiteOnInsertion { .. }
                | E::OutOfDomain { .. }
                | E::TooManySites { .. }
                | E::NotExactScaling => 2,
                _ => 1,
            },
            _ => 1,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string(), "exit_code": self.exit_code() })
            .to_string()
    }
}
