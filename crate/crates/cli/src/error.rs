use std::fmt;
use std::path::{Path, PathBuf};

/// Pipeline stage an error came from; printed in the error message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Load,
    Train,
    Attack,
    Evaluate,
    Sweep,
    Report,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Train => "train",
            Stage::Attack => "attack",
            Stage::Evaluate => "evaluate",
            Stage::Sweep => "sweep",
            Stage::Report => "report",
            Stage::Write => "write",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("[{stage}] {message}")]
pub struct CliError {
    pub stage: Stage,
    /// Bad configuration or input rather than a failure while running.
    pub user_error: bool,
    pub message: String,
}

impl CliError {
    pub fn input(stage: Stage, message: impl Into<String>) -> Self {
        Self {
            stage,
            user_error: true,
            message: message.into(),
        }
    }

    pub fn internal(stage: Stage, message: impl Into<String>) -> Self {
        Self {
            stage,
            user_error: false,
            message: message.into(),
        }
    }

    pub fn io(stage: Stage, path: &Path, err: std::io::Error) -> Self {
        let user_error = matches!(
            err.kind(),
            std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied
        );
        Self {
            stage,
            user_error,
            message: format!("{}: {err}", path.display()),
        }
    }

    /// 2 for configuration and input problems, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        if self.user_error {
            2
        } else {
            1
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Attaches a stage to library errors.
pub trait StageExt<T> {
    fn stage(self, stage: Stage) -> CliResult<T>;
}

impl<T> StageExt<T> for gflsim_core::Result<T> {
    fn stage(self, stage: Stage) -> CliResult<T> {
        use gflsim_core::Error;
        self.map_err(|e| {
            let user_error = match &e {
                Error::Parse { .. }
                | Error::InvalidGraph(_)
                | Error::InvalidArgument(_)
                | Error::InvalidNode { .. } => true,
                Error::Io { source, .. } => matches!(
                    source.kind(),
                    std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied
                ),
                _ => false,
            };
            CliError {
                stage,
                user_error,
                message: e.to_string(),
            }
        })
    }
}

pub(crate) fn missing(stage: Stage, path: PathBuf, what: &str) -> CliError {
    CliError::input(stage, format!("{}: {what}", path.display()))
}
