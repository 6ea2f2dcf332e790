use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config or input data. Exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Anything that went wrong while doing valid work. Exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Runtime(_) => "runtime",
        }
    }

    /// Single-line JSON for stderr.
    pub fn to_line(&self) -> String {
        serde_json::json!({ "error": self.to_string(), "kind": self.kind(), "code": self.exit_code() }).to_string()
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

pub fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

impl From<banditlab_core::estim::EstimError> for CliError {
    fn from(e: banditlab_core::estim::EstimError) -> Self {
        use banditlab_core::estim::EstimError as E;
        match e {
            E::EmptyDataset => usage("empty dataset"),
            E::EmptySubject(_)
            | E::WrongVariant { .. }
            | E::Config(_)
            | E::TooFewDraws { .. }
            | E::Choice(_) => usage(e),
            E::InitFailed { .. } | E::Runaway { .. } => runtime(e),
        }
    }
}

impl From<banditlab_core::store::StoreError> for CliError {
    fn from(e: banditlab_core::store::StoreError) -> Self {
        use banditlab_core::store::StoreError as S;
        match e {
            S::Io { .. } => runtime(e),
            _ => usage(e),
        }
    }
}

impl From<banditlab_core::runner::RunError> for CliError {
    fn from(e: banditlab_core::runner::RunError) -> Self {
        usage(e)
    }
}
