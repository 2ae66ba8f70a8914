//! Crate-wide error types.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PhyError {
    #[error("invalid radio parameters: {0}")]
    Params(String),
    #[error("invalid threshold table: {0}")]
    Table(String),
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Phy(#[from] PhyError),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Phy(#[from] PhyError),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed result row: {0}")]
    Row(String),
    #[error("self-test failed: {0}")]
    SelfTest(String),
}
