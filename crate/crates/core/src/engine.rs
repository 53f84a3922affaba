//! Statement execution against one local database, including writes through
//! single-table views.

use std::sync::Arc;

use thiserror::Error;

use crate::dsl::{
    self, ColumnRef, DslError, Expr, FromItem, Query, Select, SelectItem, StatementKind,
};
use crate::query::{self, bind, Evaluated, PlanOptions, QueryError, QueryPlan, Schema};
use crate::readcheck::ReadCheckVector;
use crate::store::{Change, ColumnDef, CommitReceipt, Database, Key, Snapshot, StoreError, TableId};
use crate::value::Value;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Parse(#[from] DslError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0} is not updatable")]
    NotUpdatable(String),
    #[error("unsupported here: {0}")]
    Unsupported(String),
}

#[derive(Debug, Error)]
#[error("statement {index} (at byte {position}): {error}")]
pub struct ScriptError {
    pub index: usize,
    pub position: usize,
    pub error: EngineError,
}

#[derive(Debug)]
pub enum Outcome {
    Created(String),
    Rows(Evaluated),
    /// Rows affected and the commit that applied them (none for zero rows).
    Written(usize, Option<CommitReceipt>),
}

/// How a single-table view maps onto its base table.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdatableView {
    pub table_id: TableId,
    pub table: String,
    pub view_columns: Vec<String>,
    /// Base column index for each view column.
    pub base_index: Vec<usize>,
    /// View column index of each base key column, in key order.
    pub key_positions: Vec<usize>,
}

impl UpdatableView {
    pub fn view_column(&self, name: &str) -> Option<usize> {
        self.view_columns.iter().position(|c| c.eq_ignore_ascii_case(name))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ViewWrite {
    Insert { values: Vec<(String, Value)> },
    Update { key: Vec<Value>, values: Vec<(String, Value)> },
    Delete { key: Vec<Value> },
}

pub struct Engine {
    db: Arc<Database>,
}

fn select_all(name: &str, filter: Option<Expr>) -> Query {
    Query::Select(Box::new(Select {
        projection: vec![SelectItem::Wildcard],
        from: FromItem::Relation {
            name: name.to_string(),
            alias: None,
        },
        filter,
        group_by: Vec::new(),
    }))
}

impl Engine {
    pub fn new(db: Arc<Database>) -> Engine {
        Engine { db }
    }

    pub fn database(&self) -> &Arc<Database> {
        &self.db
    }

    /// Runs statements in order, each in its own transaction; stops at the
    /// first failure.
    pub fn execute_script(&self, text: &str) -> Result<Vec<Outcome>, ScriptError> {
        let stmts = dsl::parse(text).map_err(|e| ScriptError {
            index: 0,
            position: e.position(),
            error: e.into(),
        })?;
        let mut out = Vec::new();
        for (index, s) in stmts.iter().enumerate() {
            let o = self.execute(&s.kind).map_err(|error| ScriptError {
                index,
                position: s.span.start,
                error,
            })?;
            out.push(o);
        }
        Ok(out)
    }

    pub fn execute(&self, stmt: &StatementKind) -> Result<Outcome, EngineError> {
        match stmt {
            StatementKind::CreateTable(t) => {
                let columns = t
                    .columns
                    .iter()
                    .map(|c| ColumnDef {
                        name: c.name.clone(),
                        ty: c.ty,
                        not_null: c.not_null,
                    })
                    .collect();
                self.db.create_table(&t.name, columns, t.key_columns())?;
                Ok(Outcome::Created(t.name.clone()))
            }
            StatementKind::CreateViewSelect { name, query } => {
                // Plan once so a broken definition is refused up front.
                query::plan(query, self.db.snapshot().as_ref())?;
                self.db.create_view(name, &query.to_string())?;
                Ok(Outcome::Created(name.clone()))
            }
            StatementKind::CreateViewRest(v) => Err(EngineError::Unsupported(format!(
                "REST view {} belongs in a coordinator schema",
                v.name
            ))),
            StatementKind::Select(q) => Ok(Outcome::Rows(self.query(q)?)),
            StatementKind::Insert(ins) => {
                let target = self.updatable(&ins.table)?;
                let empty = Schema::default();
                let mut writes = Vec::new();
                for row in &ins.rows {
                    let names: Vec<String> = match &ins.columns {
                        Some(c) => c.clone(),
                        None => target.view_columns.clone(),
                    };
                    if names.len() != row.len() {
                        return Err(QueryError::TypeError(format!(
                            "{} values for {} columns",
                            row.len(),
                            names.len()
                        ))
                        .into());
                    }
                    let mut values = Vec::new();
                    for (n, e) in names.into_iter().zip(row) {
                        values.push((n, query::eval_expr(e, &empty, &[])?));
                    }
                    writes.push(ViewWrite::Insert { values });
                }
                let n = writes.len();
                let receipt = self.apply_writes(&ins.table, &writes, &ReadCheckVector::new())?;
                Ok(Outcome::Written(n, Some(receipt)))
            }
            StatementKind::Update(u) => {
                let (writes, reads) = self.plan_update(&u.target, &u.assignments, u.filter.as_ref())?;
                self.finish_writes(&u.target, writes, reads)
            }
            StatementKind::Delete(d) => {
                let (writes, reads) = self.plan_delete(&d.target, d.filter.as_ref())?;
                self.finish_writes(&d.target, writes, reads)
            }
        }
    }

    fn finish_writes(&self, target: &str, writes: Vec<ViewWrite>, reads: ReadCheckVector) -> Result<Outcome, EngineError> {
        if writes.is_empty() {
            return Ok(Outcome::Written(0, None));
        }
        let n = writes.len();
        let receipt = self.apply_writes(target, &writes, &reads)?;
        Ok(Outcome::Written(n, Some(receipt)))
    }

    pub fn query(&self, q: &Query) -> Result<Evaluated, EngineError> {
        let snap = self.db.snapshot();
        self.query_at(q, &snap)
    }

    pub fn query_at(&self, q: &Query, snap: &Snapshot) -> Result<Evaluated, EngineError> {
        let p = query::plan(q, snap)?;
        Ok(query::evaluate(&p, snap)?)
    }

    /// Plan for `select * from view` restricted by an optional `$n`-form
    /// predicate over the view's columns.
    pub fn view_plan(&self, snap: &Snapshot, view: &str, pushed: Option<&Expr>) -> Result<QueryPlan, EngineError> {
        let naive = query::build(&select_all(view, None), snap)?;
        let naive = match pushed {
            Some(p) => {
                let schema = naive.schema();
                let p = schema.name_ordinals(p)?;
                let (_, ty) = bind(&p, &schema)?;
                if !matches!(ty, None | Some(crate::value::ColumnType::Bool)) {
                    return Err(QueryError::TypeError(format!("predicate {p} is not boolean")).into());
                }
                QueryPlan::Filter {
                    predicate: p,
                    input: Box::new(naive),
                }
            }
            None => naive,
        };
        Ok(query::optimize(naive, PlanOptions::default())?.plan)
    }

    pub fn query_view(&self, snap: &Snapshot, view: &str, pushed: Option<&Expr>) -> Result<Evaluated, EngineError> {
        let p = self.view_plan(snap, view, pushed)?;
        Ok(query::evaluate(&p, snap)?)
    }

    /// The single base table behind `name` (a table or a view that only
    /// selects and renames columns of one table, keys included).
    pub fn updatable(&self, name: &str) -> Result<UpdatableView, EngineError> {
        let snap = self.db.snapshot();
        updatable_at(&snap, name)
    }

    /// Maps view-level writes onto base changes and commits them in one
    /// transaction whose read set also holds `reads`.
    pub fn apply_writes(&self, target: &str, writes: &[ViewWrite], reads: &ReadCheckVector) -> Result<CommitReceipt, EngineError> {
        let mut txn = self.db.begin();
        txn.record_reads(reads);
        let snap = txn.snapshot().clone();
        let changes = base_changes(&snap, target, writes)?;
        for c in changes {
            self.db.write(&mut txn, c)?;
        }
        Ok(self.db.commit(txn)?)
    }

    /// Target rows of `update target set ... where filter` as keyed writes,
    /// plus the validators of the read that selected them.
    pub fn plan_update(
        &self,
        target: &str,
        assignments: &[(String, Expr)],
        filter: Option<&Expr>,
    ) -> Result<(Vec<ViewWrite>, ReadCheckVector), EngineError> {
        let snap = self.db.snapshot();
        let view = updatable_at(&snap, target)?;
        let ev = self.query_at(&select_all(target, filter.cloned()), &snap)?;
        let schema = Schema::new(
            ev.result
                .columns
                .iter()
                .map(|(n, t)| query::Field {
                    qualifier: Some(target.to_string()),
                    name: n.clone(),
                    ty: *t,
                })
                .collect(),
        );
        let mut compiled = Vec::new();
        for (col, e) in assignments {
            if view.view_column(col).is_none() {
                return Err(QueryError::UnknownColumn(col.clone()).into());
            }
            compiled.push((col.clone(), bind(e, &schema)?.0));
        }
        let mut writes = Vec::new();
        for row in &ev.result.rows {
            let key = view.key_positions.iter().map(|&i| row[i].clone()).collect();
            let values = compiled
                .iter()
                .map(|(c, b)| Ok((c.clone(), b.eval(row)?)))
                .collect::<Result<Vec<_>, QueryError>>()?;
            writes.push(ViewWrite::Update { key, values });
        }
        Ok((writes, ev.vector))
    }

    pub fn plan_delete(&self, target: &str, filter: Option<&Expr>) -> Result<(Vec<ViewWrite>, ReadCheckVector), EngineError> {
        let snap = self.db.snapshot();
        let view = updatable_at(&snap, target)?;
        let ev = self.query_at(&select_all(target, filter.cloned()), &snap)?;
        let writes = ev
            .result
            .rows
            .iter()
            .map(|row| ViewWrite::Delete {
                key: view.key_positions.iter().map(|&i| row[i].clone()).collect(),
            })
            .collect();
        Ok((writes, ev.vector))
    }
}

pub fn updatable_at(snap: &Snapshot, name: &str) -> Result<UpdatableView, EngineError> {
    let naive = query::build(&select_all(name, None), snap)?;
    let view_columns = naive.schema().names();
    // Walk down through pure column projections to one unfiltered scan.
    let mut map: Vec<usize> = (0..view_columns.len()).collect();
    let mut node = &naive;
    loop {
        match node {
            QueryPlan::Project { items, input, .. } => {
                let schema = input.schema();
                let mut next = Vec::with_capacity(map.len());
                for &i in &map {
                    let idx = match &items[i].expr {
                        Expr::Column(c) => schema.resolve(c).ok(),
                        Expr::Ordinal(k) => Some(k - 1),
                        _ => None,
                    };
                    match idx {
                        Some(j) => next.push(j),
                        None => return Err(EngineError::NotUpdatable(name.to_string())),
                    }
                }
                map = next;
                node = input;
            }
            QueryPlan::PredScan { table, predicate: None } => {
                let key_positions = table
                    .key
                    .iter()
                    .map(|k| map.iter().position(|m| m == k))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| EngineError::NotUpdatable(name.to_string()))?;
                return Ok(UpdatableView {
                    table_id: table.table_id,
                    table: table.name.clone(),
                    view_columns,
                    base_index: map,
                    key_positions,
                });
            }
            _ => return Err(EngineError::NotUpdatable(name.to_string())),
        }
    }
}

/// Translates view writes into base-table changes against `snap`.
pub fn base_changes(snap: &Snapshot, target: &str, writes: &[ViewWrite]) -> Result<Vec<Change>, EngineError> {
    let view = updatable_at(snap, target)?;
    let data = snap
        .table(view.table_id)
        .ok_or_else(|| StoreError::UnknownTable(view.table.clone()))?;
    let width = data.def.columns.len();
    let assign = |row: &mut Vec<Value>, values: &[(String, Value)]| -> Result<(), EngineError> {
        for (col, v) in values {
            let i = view
                .view_column(col)
                .ok_or_else(|| QueryError::UnknownColumn(ColumnRef::bare(col).to_string()))?;
            row[view.base_index[i]] = v.clone();
        }
        Ok(())
    };
    let key_of = |key: &[Value]| -> Result<Key, EngineError> {
        if key.len() != data.def.key_indexes().len() {
            return Err(StoreError::TypeMismatch(format!("{} key has {} parts", data.def.name, data.def.key_indexes().len())).into());
        }
        data.def
            .key_indexes()
            .iter()
            .zip(key)
            .map(|(&i, v)| {
                v.coerce(data.def.columns[i].ty)
                    .ok_or_else(|| StoreError::TypeMismatch(format!("key {v} is not {}", data.def.columns[i].ty)).into())
            })
            .collect()
    };
    let mut out = Vec::new();
    for w in writes {
        match w {
            ViewWrite::Insert { values } => {
                let mut row = vec![Value::Null; width];
                assign(&mut row, values)?;
                out.push(Change::Insert {
                    table: view.table_id,
                    values: row,
                });
            }
            ViewWrite::Update { key, values } => {
                let key = key_of(key)?;
                let current = data.rows.get(&key).ok_or_else(|| StoreError::NotFound {
                    table: data.def.name.clone(),
                    key: crate::store::render_key(&key),
                })?;
                let mut row = current.values.clone();
                assign(&mut row, values)?;
                out.push(Change::Update {
                    table: view.table_id,
                    key,
                    values: row,
                });
            }
            ViewWrite::Delete { key } => out.push(Change::Delete {
                table: view.table_id,
                key: key_of(key)?,
            }),
        }
    }
    Ok(out)
}
