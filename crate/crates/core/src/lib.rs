//! Live federated queries over independent contractor databases, kept
//! honest by readCheck validators.

pub mod cluster;
pub mod coordinator;
pub mod dsl;
pub mod engine;
pub mod node;
pub mod query;
pub mod readcheck;
pub mod scripts;
pub mod store;
pub mod txn;
pub mod value;
pub mod wire;

pub use readcheck::{ReadCheckEntry, ReadCheckVector};
pub use store::{Database, Rvv};
pub use value::{ColumnType, Value};
