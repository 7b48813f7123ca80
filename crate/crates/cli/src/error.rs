use std::path::{Path, PathBuf};

/// Failure classes with their process exit codes.
#[derive(Debug)]
pub enum CliError {
    MissingFile(PathBuf),
    Schema(String),
    Config(String),
    /// The output directory already holds a run.
    Exists(PathBuf),
    Other(anyhow::Error),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingFile(path.to_path_buf())
        } else {
            CliError::Other(anyhow::Error::new(e).context(path.display().to_string()))
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Other(_) => 1,
            CliError::MissingFile(_) => 3,
            CliError::Schema(_) => 4,
            CliError::Config(_) => 5,
            CliError::Exists(_) => 6,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::MissingFile(p) => write!(f, "missing file: {}", p.display()),
            CliError::Schema(m) => write!(f, "schema error: {m}"),
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Exists(p) => write!(f, "{} already holds a run; pass --force to overwrite", p.display()),
            CliError::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<coins_core::Error> for CliError {
    fn from(e: coins_core::Error) -> Self {
        use coins_core::Error as E;
        match e {
            E::Io { path, source } => CliError::io(&path, source),
            E::Schema(m) => CliError::Schema(m),
            E::Json(_) | E::Csv(_) => CliError::Schema(e.to_string()),
            E::Config(m) => CliError::Config(m),
            other => CliError::Other(other.into()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Schema(e.to_string())
    }
}
