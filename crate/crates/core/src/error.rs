use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TermError {
    #[error("sort mismatch: `{symbol}` cannot hold `{image}`")]
    SortMismatch { symbol: String, image: String },
}

/// Errors raised while reading a protocol or context file.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{column}: syntax error: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{line}:{column}: undeclared symbol `{name}`")]
    UndeclaredSymbol {
        line: usize,
        column: usize,
        name: String,
    },
    #[error("{line}:{column}: duplicate declaration of `{name}`")]
    DuplicateDeclaration {
        line: usize,
        column: usize,
        name: String,
    },
    #[error("{line}:{column}: invalid step: {message}")]
    InvalidStep {
        line: usize,
        column: usize,
        message: String,
    },
}

impl ParseError {
    pub fn line(&self) -> usize {
        match self {
            ParseError::Syntax { line, .. }
            | ParseError::UndeclaredSymbol { line, .. }
            | ParseError::DuplicateDeclaration { line, .. }
            | ParseError::InvalidStep { line, .. } => *line,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("no declared security level for `{0}`")]
    MissingLevel(String),
    #[error("`{0}` occurs neither in the static part nor in any variable image")]
    NotPresent(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("resource bound exceeded: {what} reached {limit}")]
    ResourceBound { what: &'static str, limit: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
}
