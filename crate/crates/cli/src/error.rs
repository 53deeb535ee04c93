use std::fmt;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

/// An error together with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        CliError {
            code,
            error: error.into(),
        }
    }

    pub fn usage(msg: impl fmt::Display) -> Self {
        CliError::new(EXIT_USAGE, anyhow::anyhow!("{msg}"))
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        CliError::new(EXIT_DATA, anyhow::anyhow!("{msg}"))
    }

    pub fn numeric(msg: impl fmt::Display) -> Self {
        CliError::new(EXIT_NUMERIC, anyhow::anyhow!("{msg}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

/// Exit code for a library error.
pub fn classify(e: &maffsrn::Error) -> u8 {
    use maffsrn::Error::*;
    match e {
        Config(_) | Json(_) => EXIT_USAGE,
        NonFinite { .. } | Diverged { .. } | Graph(_) => EXIT_NUMERIC,
        Shape { .. }
        | Format(_)
        | UnsupportedImage(_)
        | Image(_)
        | Dataset(_)
        | Io(_)
        | PngDecode(_)
        | PngEncode(_) => EXIT_DATA,
    }
}

impl From<maffsrn::Error> for CliError {
    fn from(e: maffsrn::Error) -> Self {
        CliError::new(classify(&e), e)
    }
}

pub trait Context<T> {
    /// Keeps the default classification and prefixes a description.
    fn at(self, what: impl fmt::Display) -> CliResult<T>;
    /// Forces an exit code.
    fn code(self, code: u8, what: impl fmt::Display) -> CliResult<T>;
}

impl<T> Context<T> for Result<T, maffsrn::Error> {
    fn at(self, what: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| {
            let code = classify(&e);
            CliError::new(code, anyhow::Error::new(e).context(what.to_string()))
        })
    }

    fn code(self, code: u8, what: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| CliError::new(code, anyhow::Error::new(e).context(what.to_string())))
    }
}

impl<T> Context<T> for Result<T, std::io::Error> {
    fn at(self, what: impl fmt::Display) -> CliResult<T> {
        self.code(EXIT_DATA, what)
    }

    fn code(self, code: u8, what: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| CliError::new(code, anyhow::Error::new(e).context(what.to_string())))
    }
}
