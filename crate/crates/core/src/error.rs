use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("config line {line}: {message}")]
    ConfigSyntax { line: usize, message: String },
    #[error("config key `{key}`: {message}")]
    ConfigValue { key: String, message: String },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("search space of {size} points exceeds the budget of {budget}")]
    BudgetExceeded { size: f64, budget: f64 },
    #[error("replay buffer holds {len} transitions, {requested} requested")]
    Underfull { len: usize, requested: usize },
    #[error("non-finite training signal: {0}")]
    NonFinite(String),
    #[error("malformed scenario file: {0}")]
    ScenarioFormat(String),
    #[error(transparent)]
    Nn(#[from] mcnoma_nn::NnError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
