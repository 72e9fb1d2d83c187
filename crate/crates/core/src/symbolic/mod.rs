//! Symbolic modality: expression trees, prefix serialization, float
//! tokenization, corruption and the expression-error metric.

mod corrupt;
mod expr;
mod metric;
mod polish;
mod vocab;

pub use corrupt::{corrupt, sample_pool_term, CorruptionConfig};
pub use expr::{BinaryOp, Expr, SystemExpr, UnaryOp, MAX_DIM};
pub use metric::expression_error;
pub use polish::{decode_float, encode_float, from_polish, quantize, to_polish, FloatTriplet};
pub use vocab::{
    Operator, TokenSeq, Vocabulary, Word, EOS_ID, MAX_EXPONENT, MIN_EXPONENT, PAD_ID, PLACEHOLDER_ID, SOS_ID,
};

use thiserror::Error;

/// Why a token sequence is not a valid expression.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("token id {0} is not in the vocabulary")]
    UnknownId(u32),
    #[error("malformed float triplet at position {0}")]
    MalformedFloat(usize),
    #[error("unexpected framing token at position {0}")]
    UnexpectedSpecial(usize),
    #[error("{0} components exceed the maximum dimension")]
    TooManyComponents(usize),
    #[error("empty component")]
    EmptyComponent,
    #[error("operator is missing operands")]
    Truncated,
    #[error("tokens left over after a complete tree")]
    Leftover,
    #[error("{0}")]
    InvalidSystem(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SymbolicError {
    #[error("invalid expression: {0}")]
    InvalidExpression(ParseError),
    #[error("{0} cannot be encoded with exponents in [-100, 100]")]
    ExponentOutOfRange(f64),
    #[error("malformed float triplet")]
    MalformedTriplet,
    #[error("domain error: {0}")]
    Domain(&'static str),
    #[error("expression contains a placeholder")]
    PlaceholderPresent,
    #[error("component {component} is not a sum of simple terms")]
    NotInAdditiveForm { component: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("unknown word {0:?}")]
    UnknownWord(String),
}
