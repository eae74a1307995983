use std::path::{Path, PathBuf};

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const DIVERGENCE: i32 = 4;
    pub const DIAGNOSTIC_FAIL: i32 = 5;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] cal_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("{}:{line}: column {column}: {message}", path.display())]
    Data {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("config {}: {message}", path.display())]
    ConfigFile { path: PathBuf, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{} already exists; pass --force to overwrite", path.display())]
    OutputExists { path: PathBuf },

    #[error("{message}{}", checkpoint.as_ref().map(|p| format!("; last good model written to {}", p.display())).unwrap_or_default())]
    Diverged { message: String, checkpoint: Option<PathBuf> },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, message: impl Into<String>) -> Self {
        CliError::Format {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        use cal_core::Error as E;
        match self {
            CliError::Core(E::Config(_)) => exit::CONFIG,
            CliError::Core(E::Divergence { .. }) | CliError::Diverged { .. } => exit::DIVERGENCE,
            CliError::Core(_) => exit::DATA,
            CliError::Config(_) | CliError::ConfigFile { .. } | CliError::OutputExists { .. } => exit::CONFIG,
            CliError::Io { .. } | CliError::Parse { .. } | CliError::Data { .. } | CliError::Format { .. } => {
                exit::DATA
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_kind() {
        let p = Path::new("x");
        assert_eq!(CliError::Config("bad".into()).exit_code(), exit::CONFIG);
        assert_eq!(CliError::OutputExists { path: p.into() }.exit_code(), exit::CONFIG);
        assert_eq!(CliError::format(p, "bad").exit_code(), exit::DATA);
        assert_eq!(CliError::from(cal_core::Error::Config("k".into())).exit_code(), exit::CONFIG);
        assert_eq!(CliError::from(cal_core::Error::EmptyData("e".into())).exit_code(), exit::DATA);
        let diverged = cal_core::Error::Divergence {
            epoch: 3,
            loss: f64::NAN,
            last_good: None,
        };
        assert_eq!(CliError::from(diverged).exit_code(), exit::DIVERGENCE);
        let e = CliError::Diverged {
            message: "training diverged".into(),
            checkpoint: Some("run/model.last_good.ckpt".into()),
        };
        assert_eq!(e.exit_code(), exit::DIVERGENCE);
        assert!(e.to_string().contains("run/model.last_good.ckpt"));
    }
}
