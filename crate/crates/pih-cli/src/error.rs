//! CLI error kinds, one per exit code.

#[derive(Debug)]
pub enum CliError {
    Config(String),
    MissingArtifacts(Vec<String>),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::MissingArtifacts(files) => {
                write!(f, "missing artifacts: {}", files.join(", "))
            }
            CliError::Runtime(msg) => write!(f, "runtime error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifacts(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}
