use std::path::{Path, PathBuf};

/// Process exit codes, one per error class.
pub mod exit {
    pub const IO: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const CONFIG: u8 = 3;
    pub const DATA: u8 = 4;
    pub const ANALYSIS: u8 = 5;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] afc_dlcz::Error),

    #[error("{}: {source}", path.display())]
    InFile {
        path: PathBuf,
        source: afc_dlcz::Error,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type CliResult<T> = Result<T, CliError>;

fn core_code(e: &afc_dlcz::Error) -> u8 {
    use afc_dlcz::Error as E;
    match e {
        E::Io(_) => exit::IO,
        E::Config { .. } => exit::CONFIG,
        E::Data { .. } => exit::DATA,
        E::Analysis(_) | E::Domain(_) => exit::ANALYSIS,
    }
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError::Usage(message.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Core(e) | CliError::InFile { source: e, .. } => core_code(e),
            CliError::Io { .. } => exit::IO,
        }
    }
}

/// Attaches a file path to errors from an operation on that file.
pub trait WithPath<T> {
    fn at(self, path: &Path) -> CliResult<T>;
}

impl<T> WithPath<T> for Result<T, std::io::Error> {
    fn at(self, path: &Path) -> CliResult<T> {
        self.map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

impl<T> WithPath<T> for afc_dlcz::Result<T> {
    fn at(self, path: &Path) -> CliResult<T> {
        self.map_err(|source| CliError::InFile {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classes_map_to_distinct_codes() {
        let codes = [
            CliError::usage("x").exit_code(),
            CliError::from(afc_dlcz::Error::config("p_s", "bad")).exit_code(),
            CliError::from(afc_dlcz::Error::data("bad")).exit_code(),
            CliError::from(afc_dlcz::Error::analysis("bad")).exit_code(),
            CliError::from(afc_dlcz::Error::Io(std::io::Error::other("x"))).exit_code(),
        ];
        assert_eq!(codes, [2, 3, 4, 5, 1]);
        let wrapped: CliResult<()> = Err(afc_dlcz::Error::data("bad")).at(Path::new("f"));
        assert_eq!(wrapped.unwrap_err().exit_code(), exit::DATA);
    }
}
