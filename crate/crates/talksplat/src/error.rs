use std::path::{Path, PathBuf};

/// Errors of the pipeline. [`Error::exit_code`] maps them to the CLI's
/// process exit status.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] talksplat_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("{}: unsupported {what} version {found} (this build reads {supported})", path.display())]
    Version { path: PathBuf, what: &'static str, found: u32, supported: u32 },
    #[error("{}: {source}", path.display())]
    Image { path: PathBuf, source: image::ImageError },
    #[error("invalid dataset {}:\n  {}", root.display(), problems.join("\n  "))]
    Dataset { root: PathBuf, problems: Vec<String> },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },
    #[error("gradient check failed for: {}", classes.join(", "))]
    GradCheck { classes: Vec<String> },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, message: impl Into<String>) -> Self {
        Error::Format { path: path.to_path_buf(), message: message.into() }
    }

    /// 2 for numerical failures, 1 for everything the user can fix by
    /// changing inputs.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Diverged { .. } | Error::GradCheck { .. } => 2,
            Error::Core(talksplat_core::Error::NonFinite(_) | talksplat_core::Error::SingularCovariance) => 2,
            _ => 1,
        }
    }
}
