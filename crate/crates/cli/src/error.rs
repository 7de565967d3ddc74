use thiserror::Error;

/// Stage failure. Each variant maps to a process exit code.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing upstream artifact {artifact}")]
    MissingArtifact { artifact: String },
    #[error("{0}")]
    Config(String),
    #[error("{message}")]
    Failed { kind: &'static str, message: String },
}

impl PipelineError {
    pub fn failed(kind: &'static str, message: impl std::fmt::Display) -> Self {
        PipelineError::Failed {
            kind,
            message: message.to_string(),
        }
    }

    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Self::failed("io", format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::MissingArtifact { .. } => 2,
            PipelineError::Config(_) => 3,
            PipelineError::Failed { .. } => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::MissingArtifact { .. } => "missing_artifact",
            PipelineError::Config(_) => "config",
            PipelineError::Failed { kind, .. } => kind,
        }
    }

    /// `error stage=.. code=.. kind=.. message=".."` on one line.
    pub fn report_line(&self, stage: &str) -> String {
        let message = serde_json::to_string(&self.to_string()).unwrap_or_else(|_| "\"\"".into());
        format!(
            "error stage={stage} code={} kind={} message={message}",
            self.exit_code(),
            self.kind()
        )
    }
}
