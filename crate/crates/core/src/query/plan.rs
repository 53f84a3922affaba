use std::fmt;

use url::Url;

use crate::dsl::{pretty::ident, AggFunc, Expr, UriType};
use crate::store::{Key, TableId};
use crate::value::ColumnType;

use super::expr::{Field, Schema};
use super::QueryError;

/// A base table as seen by a scan.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanTarget {
    pub table_id: TableId,
    pub name: String,
    /// Name the scan's columns are qualified with (alias or table name).
    pub qualifier: String,
    pub columns: Vec<(String, ColumnType)>,
    pub key: Vec<usize>,
}

impl ScanTarget {
    pub fn schema(&self) -> Schema {
        Schema::new(
            self.columns
                .iter()
                .map(|(n, t)| Field {
                    qualifier: Some(self.qualifier.clone()),
                    name: n.clone(),
                    ty: *t,
                })
                .collect(),
        )
    }
}

/// A view whose rows are fetched from a contractor with `GET url`.
#[derive(Clone, Debug, PartialEq)]
pub struct RestViewDef {
    pub name: String,
    /// Declared columns; empty means "whatever the source returns".
    pub columns: Vec<(String, ColumnType)>,
    pub url: String,
    pub uri_type: Option<UriType>,
}

impl RestViewDef {
    pub fn parsed_url(&self) -> Result<Url, QueryError> {
        let u = Url::parse(&self.url).map_err(|e| QueryError::MalformedUrl(format!("{}: {e}", self.url)))?;
        if !matches!(u.scheme(), "http" | "https") || u.host_str().is_none() {
            return Err(QueryError::MalformedUrl(self.url.clone()));
        }
        Ok(u)
    }

    /// Database named by the first path segment (`/Hospital/Hospital/E`).
    pub fn source_db(&self) -> String {
        self.parsed_url()
            .ok()
            .and_then(|u| u.path_segments().and_then(|mut s| s.next().map(str::to_string)))
            .unwrap_or_default()
    }

    pub fn schema(&self, qualifier: &str) -> Schema {
        Schema::new(
            self.columns
                .iter()
                .map(|(n, t)| Field {
                    qualifier: Some(qualifier.to_string()),
                    name: n.clone(),
                    ty: *t,
                })
                .collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectItem {
    pub expr: Expr,
    pub name: String,
    pub ty: ColumnType,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateCall {
    pub func: AggFunc,
    pub arg: Option<Expr>,
    pub name: String,
    pub ty: ColumnType,
}

#[derive(Clone, Debug, PartialEq)]
pub enum JoinKind {
    Natural,
    /// Inner join on a condition; a cross join is `On(true)`.
    On(Expr),
}

#[derive(Clone, Debug, PartialEq)]
pub enum QueryPlan {
    /// Rows selected by literal primary keys, in key order.
    KeyScan { table: ScanTarget, keys: Vec<Key> },
    PredScan { table: ScanTarget, predicate: Option<Expr> },
    Filter { predicate: Expr, input: Box<QueryPlan> },
    Join { kind: JoinKind, left: Box<QueryPlan>, right: Box<QueryPlan> },
    Union { all: bool, left: Box<QueryPlan>, right: Box<QueryPlan> },
    Project { items: Vec<ProjectItem>, qualifier: Option<String>, input: Box<QueryPlan> },
    Aggregate { group_keys: Vec<ProjectItem>, aggregates: Vec<AggregateCall>, input: Box<QueryPlan> },
    RestGet { view: RestViewDef, qualifier: String, pushed: Option<Expr> },
}

/// Column pairing of a natural join: shared columns (left index, right
/// index) in left order, then the unshared columns of each side.
pub struct NaturalLayout {
    pub shared: Vec<(usize, usize)>,
    pub left_rest: Vec<usize>,
    pub right_rest: Vec<usize>,
}

pub fn natural_layout(left: &Schema, right: &Schema) -> NaturalLayout {
    let mut shared = Vec::new();
    let mut left_rest = Vec::new();
    let mut used = vec![false; right.len()];
    for (i, lf) in left.fields.iter().enumerate() {
        let hit = right
            .fields
            .iter()
            .enumerate()
            .find(|(j, rf)| !used[*j] && rf.name.eq_ignore_ascii_case(&lf.name));
        match hit {
            Some((j, _)) => {
                used[j] = true;
                shared.push((i, j));
            }
            None => left_rest.push(i),
        }
    }
    let right_rest = (0..right.len()).filter(|j| !used[*j]).collect();
    NaturalLayout {
        shared,
        left_rest,
        right_rest,
    }
}

impl QueryPlan {
    pub fn schema(&self) -> Schema {
        match self {
            QueryPlan::KeyScan { table, .. } | QueryPlan::PredScan { table, .. } => table.schema(),
            QueryPlan::Filter { input, .. } => input.schema(),
            QueryPlan::Join { kind, left, right } => {
                let (ls, rs) = (left.schema(), right.schema());
                match kind {
                    JoinKind::On(_) => ls.concat(&rs),
                    JoinKind::Natural => {
                        let layout = natural_layout(&ls, &rs);
                        let mut fields: Vec<Field> = layout.shared.iter().map(|(i, _)| ls.fields[*i].clone()).collect();
                        fields.extend(layout.left_rest.iter().map(|i| ls.fields[*i].clone()));
                        fields.extend(layout.right_rest.iter().map(|j| rs.fields[*j].clone()));
                        Schema::new(fields)
                    }
                }
            }
            QueryPlan::Union { left, .. } => left.schema().requalify(None),
            QueryPlan::Project { items, qualifier, .. } => Schema::new(
                items
                    .iter()
                    .map(|it| Field {
                        qualifier: qualifier.clone(),
                        name: it.name.clone(),
                        ty: it.ty,
                    })
                    .collect(),
            ),
            QueryPlan::Aggregate {
                group_keys, aggregates, ..
            } => Schema::new(
                group_keys
                    .iter()
                    .map(|k| (k.name.clone(), k.ty))
                    .chain(aggregates.iter().map(|a| (a.name.clone(), a.ty)))
                    .map(|(name, ty)| Field {
                        qualifier: None,
                        name,
                        ty,
                    })
                    .collect(),
            ),
            QueryPlan::RestGet { view, qualifier, .. } => view.schema(qualifier),
        }
    }

    pub fn children(&self) -> Vec<&QueryPlan> {
        match self {
            QueryPlan::KeyScan { .. } | QueryPlan::PredScan { .. } | QueryPlan::RestGet { .. } => vec![],
            QueryPlan::Filter { input, .. } | QueryPlan::Project { input, .. } | QueryPlan::Aggregate { input, .. } => {
                vec![input]
            }
            QueryPlan::Join { left, right, .. } | QueryPlan::Union { left, right, .. } => vec![left, right],
        }
    }

    /// True when the plan reads only local tables.
    pub fn is_local(&self) -> bool {
        !matches!(self, QueryPlan::RestGet { .. }) && self.children().iter().all(|c| c.is_local())
    }

    /// RestGet leaves in left-to-right order.
    pub fn rest_leaves(&self) -> Vec<&QueryPlan> {
        if matches!(self, QueryPlan::RestGet { .. }) {
            return vec![self];
        }
        self.children().into_iter().flat_map(|c| c.rest_leaves()).collect()
    }
}

fn key_text(key: &Key) -> String {
    key.iter().map(crate::dsl::pretty::literal).collect::<Vec<_>>().join(",")
}

impl fmt::Display for QueryPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QueryPlan::KeyScan { table, keys } => {
                let ks: Vec<String> = keys.iter().map(|k| format!("({})", key_text(k))).collect();
                write!(f, "KeyScan({} as {}, [{}])", ident(&table.name), ident(&table.qualifier), ks.join(", "))
            }
            QueryPlan::PredScan { table, predicate } => {
                write!(f, "PredScan({} as {}", ident(&table.name), ident(&table.qualifier))?;
                if let Some(p) = predicate {
                    write!(f, ", {p}")?;
                }
                f.write_str(")")
            }
            QueryPlan::Filter { predicate, input } => write!(f, "Filter({predicate}, {input})"),
            QueryPlan::Join { kind, left, right } => match kind {
                JoinKind::Natural => write!(f, "NaturalJoin({left}, {right})"),
                JoinKind::On(e) => write!(f, "Join({left}, {right}, {e})"),
            },
            QueryPlan::Union { all, left, right } => {
                write!(f, "Union{}({left}, {right})", if *all { "All" } else { "" })
            }
            QueryPlan::Project { items, qualifier, input } => {
                let its: Vec<String> = items.iter().map(|i| format!("{} as {}", i.expr, ident(&i.name))).collect();
                write!(f, "Project([{}]", its.join(", "))?;
                if let Some(q) = qualifier {
                    write!(f, " as {}", ident(q))?;
                }
                write!(f, ", {input})")
            }
            QueryPlan::Aggregate {
                group_keys,
                aggregates,
                input,
            } => {
                let ks: Vec<String> = group_keys.iter().map(|i| format!("{} as {}", i.expr, ident(&i.name))).collect();
                let ag: Vec<String> = aggregates
                    .iter()
                    .map(|a| match &a.arg {
                        Some(e) => format!("{}({e}) as {}", a.func.name(), ident(&a.name)),
                        None => format!("count(*) as {}", ident(&a.name)),
                    })
                    .collect();
                write!(f, "Aggregate([{}], [{}], {input})", ks.join(", "), ag.join(", "))
            }
            QueryPlan::RestGet {
                view,
                qualifier,
                pushed,
            } => {
                write!(f, "RestGet({} as {}, '{}'", ident(&view.name), ident(qualifier), view.url)?;
                if let Some(p) = pushed {
                    write!(f, ", {p}")?;
                }
                f.write_str(")")
            }
        }
    }
}
