//! SQL subset of the worked example plus `CREATE VIEW ... OF (...) AS GET`.

pub mod ast;
pub mod lexer;
pub mod parser;
pub mod pretty;

use std::fmt;

pub use ast::*;
pub use lexer::{tokenize, Tok, Token};
pub use parser::{parse, parse_expr, parse_query};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DslError {
    Lex { position: usize, message: String },
    Parse { position: usize, expected: Vec<String>, found: String },
}

impl DslError {
    pub(crate) fn lex(position: usize, message: &str) -> DslError {
        DslError::Lex {
            position,
            message: message.to_string(),
        }
    }

    pub fn position(&self) -> usize {
        match self {
            DslError::Lex { position, .. } | DslError::Parse { position, .. } => *position,
        }
    }
}

impl fmt::Display for DslError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DslError::Lex { position, message } => write!(f, "lex error at {position}: {message}"),
            DslError::Parse {
                position,
                expected,
                found,
            } => write!(f, "parse error at {position}: expected {}, found {found}", expected.join(" or ")),
        }
    }
}

impl std::error::Error for DslError {}
