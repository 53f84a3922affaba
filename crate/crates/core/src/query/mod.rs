//! Relational algebra over the versioned store: planning, evaluation and
//! decomposition over REST views.

pub mod eval;
pub mod expr;
pub mod plan;
pub mod planner;
pub mod rewrite;

use thiserror::Error;

use crate::value::{ColumnType, Value};

pub use eval::{evaluate, evaluate_assembly, fingerprint, Evaluated, Fragment};
pub use expr::{bind, eval_expr, Field, Schema};
pub use plan::{JoinKind, QueryPlan, RestViewDef, ScanTarget};
pub use planner::{build, optimize, plan, plan_with, Catalog, PlanOptions, Planned, Relation};
pub use rewrite::{rewrite_over_views, rewrite_without_pushdown, Rewritten, Subquery};

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("unknown relation {0}")]
    UnknownRelation(String),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("ambiguous column {0}")]
    AmbiguousColumn(String),
    #[error("type error: {0}")]
    TypeError(String),
    #[error("duplicate alias {0}")]
    DuplicateAlias(String),
    #[error("{0} is neither grouped nor aggregated")]
    NotGrouped(String),
    #[error("key not literal: {0}")]
    UnboundKey(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("view {0} is too deeply nested or recursive")]
    RecursiveView(String),
    #[error("malformed url {0}")]
    MalformedUrl(String),
    #[error("no fetched rows for {0}")]
    MissingFragment(String),
    #[error("integer overflow")]
    Overflow,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultSet {
    pub columns: Vec<(String, ColumnType)>,
    pub rows: Vec<Vec<Value>>,
    pub per_row_validators: Option<Vec<String>>,
}

impl ResultSet {
    pub fn without_validators(mut self) -> ResultSet {
        self.per_row_validators = None;
        self
    }
}
