//! Plan evaluation over a snapshot and/or fetched REST fragments. Every
//! output row carries its lineage: the stamps of the base rows it was built
//! from, or an absent marker when aggregation hides them.

use std::collections::{BTreeMap, HashMap};

use crate::dsl::{AggFunc, Expr};
use crate::readcheck::{self, ReadCheckEntry, ReadCheckVector};
use crate::store::{Row, Snapshot};
use crate::value::Value;

use super::expr::{bind, Bound, Schema};
use super::plan::{natural_layout, AggregateCall, JoinKind, QueryPlan, RestViewDef};
use super::{QueryError, ResultSet};

/// Rows of one REST fetch, already retyped to the declared columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Fragment {
    pub rows: Vec<Vec<Value>>,
    pub lineage: Vec<ReadCheckVector>,
}

/// Cache and request key of a REST fetch.
pub fn fingerprint(view: &RestViewDef, pushed: Option<&Expr>) -> String {
    match pushed {
        Some(p) => format!("{}?where={p}", view.url),
        None => view.url.clone(),
    }
}

#[derive(Clone, Debug)]
pub struct Evaluated {
    /// Result with per-row validators filled in.
    pub result: ResultSet,
    pub lineage: Vec<ReadCheckVector>,
    /// readCheck vector of the local part of the plan.
    pub vector: ReadCheckVector,
}

/// Evaluates a local plan against `snap`.
pub fn evaluate(plan: &QueryPlan, snap: &Snapshot) -> Result<Evaluated, QueryError> {
    Evaluator {
        snapshot: Some(snap),
        fragments: None,
    }
    .finish(plan)
}

/// Evaluates an assembly plan whose REST leaves are answered from `fragments`
/// (keyed by [`fingerprint`]).
pub fn evaluate_assembly(plan: &QueryPlan, fragments: &HashMap<String, Fragment>) -> Result<Evaluated, QueryError> {
    Evaluator {
        snapshot: None,
        fragments: Some(fragments),
    }
    .finish(plan)
}

struct Rel {
    schema: Schema,
    rows: Vec<Vec<Value>>,
    lineage: Vec<ReadCheckVector>,
}

struct Evaluator<'a> {
    snapshot: Option<&'a Snapshot>,
    fragments: Option<&'a HashMap<String, Fragment>>,
}

fn row_lineage(row: &Row) -> ReadCheckVector {
    ReadCheckVector::from_entries([ReadCheckEntry::Row(row.rvv.clone())])
}

fn compile(e: &Expr, schema: &Schema) -> Result<Bound, QueryError> {
    Ok(bind(e, schema)?.0)
}

impl Evaluator<'_> {
    fn finish(&self, plan: &QueryPlan) -> Result<Evaluated, QueryError> {
        let rel = self.run(plan)?;
        let vector = match self.snapshot {
            Some(s) => readcheck::compute(plan, s),
            None => ReadCheckVector::new(),
        };
        let result = ResultSet {
            columns: rel.schema.fields.iter().map(|f| (f.name.clone(), f.ty)).collect(),
            rows: rel.rows,
            per_row_validators: Some(rel.lineage.iter().map(|l| l.render_row()).collect()),
        };
        Ok(Evaluated {
            result,
            lineage: rel.lineage,
            vector,
        })
    }

    fn snapshot(&self) -> Result<&Snapshot, QueryError> {
        self.snapshot
            .ok_or_else(|| QueryError::Unsupported("base table scan without a local database".into()))
    }

    fn run(&self, plan: &QueryPlan) -> Result<Rel, QueryError> {
        let schema = plan.schema();
        match plan {
            QueryPlan::KeyScan { table, keys } => {
                let snap = self.snapshot()?;
                let data = snap
                    .table(table.table_id)
                    .ok_or_else(|| QueryError::UnknownRelation(table.name.clone()))?;
                let mut rel = Rel::empty(schema);
                for k in keys {
                    if let Some(row) = data.rows.get(k) {
                        rel.push(row.values.clone(), row_lineage(row));
                    }
                }
                Ok(rel)
            }
            QueryPlan::PredScan { table, predicate } => {
                let snap = self.snapshot()?;
                let data = snap
                    .table(table.table_id)
                    .ok_or_else(|| QueryError::UnknownRelation(table.name.clone()))?;
                let pred = predicate.as_ref().map(|p| compile(p, &schema)).transpose()?;
                let mut rel = Rel::empty(schema);
                for row in data.rows.values() {
                    if let Some(p) = &pred {
                        if !p.test(&row.values)? {
                            continue;
                        }
                    }
                    rel.push(row.values.clone(), row_lineage(row));
                }
                Ok(rel)
            }
            QueryPlan::Filter { predicate, input } => {
                let inner = self.run(input)?;
                let p = compile(predicate, &inner.schema)?;
                let mut rel = Rel::empty(schema);
                for (row, lin) in inner.rows.into_iter().zip(inner.lineage) {
                    if p.test(&row)? {
                        rel.push(row, lin);
                    }
                }
                Ok(rel)
            }
            QueryPlan::Join { kind, left, right } => {
                let l = self.run(left)?;
                let r = self.run(right)?;
                match kind {
                    JoinKind::Natural => Ok(natural_join(l, r, schema)),
                    JoinKind::On(cond) => {
                        let joined = l.schema.concat(&r.schema);
                        let p = compile(cond, &joined)?;
                        let mut rel = Rel::empty(schema);
                        for (lrow, llin) in l.rows.iter().zip(&l.lineage) {
                            for (rrow, rlin) in r.rows.iter().zip(&r.lineage) {
                                let mut row = lrow.clone();
                                row.extend(rrow.iter().cloned());
                                if p.test(&row)? {
                                    rel.push(row, readcheck::combine(llin, rlin));
                                }
                            }
                        }
                        Ok(rel)
                    }
                }
            }
            QueryPlan::Union { all, left, right } => {
                let l = self.run(left)?;
                let r = self.run(right)?;
                let mut rel = Rel::empty(schema);
                if *all {
                    for (row, lin) in l.rows.into_iter().zip(l.lineage).chain(r.rows.into_iter().zip(r.lineage)) {
                        rel.push(row, lin);
                    }
                    return Ok(rel);
                }
                let mut index: BTreeMap<Vec<Value>, usize> = BTreeMap::new();
                for (row, lin) in l.rows.into_iter().zip(l.lineage).chain(r.rows.into_iter().zip(r.lineage)) {
                    match index.get(&row) {
                        Some(&i) => rel.lineage[i].extend(&lin),
                        None => {
                            index.insert(row.clone(), rel.rows.len());
                            rel.push(row, lin);
                        }
                    }
                }
                Ok(rel)
            }
            QueryPlan::Project { items, input, .. } => {
                let inner = self.run(input)?;
                let exprs = items
                    .iter()
                    .map(|it| compile(&it.expr, &inner.schema))
                    .collect::<Result<Vec<_>, _>>()?;
                let mut rel = Rel::empty(schema);
                for (row, lin) in inner.rows.into_iter().zip(inner.lineage) {
                    let out = exprs.iter().map(|e| e.eval(&row)).collect::<Result<Vec<_>, _>>()?;
                    rel.push(out, lin);
                }
                Ok(rel)
            }
            QueryPlan::Aggregate {
                group_keys,
                aggregates,
                input,
            } => {
                let inner = self.run(input)?;
                aggregate(inner, group_keys, aggregates, schema)
            }
            QueryPlan::RestGet { view, pushed, .. } => {
                let key = fingerprint(view, pushed.as_ref());
                let frag = self
                    .fragments
                    .and_then(|f| f.get(&key))
                    .ok_or_else(|| QueryError::MissingFragment(key.clone()))?;
                Ok(Rel {
                    schema,
                    rows: frag.rows.clone(),
                    lineage: frag.lineage.clone(),
                })
            }
        }
    }
}

impl Rel {
    fn empty(schema: Schema) -> Rel {
        Rel {
            schema,
            rows: Vec::new(),
            lineage: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<Value>, lineage: ReadCheckVector) {
        self.rows.push(row);
        self.lineage.push(lineage);
    }
}

fn natural_join(l: Rel, r: Rel, schema: Schema) -> Rel {
    let layout = natural_layout(&l.schema, &r.schema);
    let key_of = |row: &[Value], side: bool| -> Option<Vec<Value>> {
        let k: Vec<Value> = layout
            .shared
            .iter()
            .map(|(i, j)| row[if side { *j } else { *i }].clone())
            .collect();
        // Equality never holds for nulls.
        (!k.iter().any(Value::is_null)).then_some(k)
    };
    let mut index: BTreeMap<Vec<Value>, Vec<usize>> = BTreeMap::new();
    for (j, row) in r.rows.iter().enumerate() {
        if let Some(k) = key_of(row, true) {
            index.entry(k).or_default().push(j);
        }
    }
    let mut rel = Rel::empty(schema);
    for (lrow, llin) in l.rows.iter().zip(&l.lineage) {
        let Some(k) = key_of(lrow, false) else { continue };
        let Some(matches) = index.get(&k) else { continue };
        for &j in matches {
            let rrow = &r.rows[j];
            let mut row: Vec<Value> = layout.shared.iter().map(|(i, _)| lrow[*i].clone()).collect();
            row.extend(layout.left_rest.iter().map(|i| lrow[*i].clone()));
            row.extend(layout.right_rest.iter().map(|j| rrow[*j].clone()));
            rel.push(row, readcheck::combine(llin, &r.lineage[j]));
        }
    }
    rel
}

enum Acc {
    Count(i64),
    Sum(Option<Value>),
    Extreme(Option<Value>),
}

fn aggregate(
    inner: Rel,
    keys: &[super::plan::ProjectItem],
    aggs: &[AggregateCall],
    schema: Schema,
) -> Result<Rel, QueryError> {
    let key_exprs = keys
        .iter()
        .map(|k| compile(&k.expr, &inner.schema))
        .collect::<Result<Vec<_>, _>>()?;
    let arg_exprs = aggs
        .iter()
        .map(|a| a.arg.as_ref().map(|e| compile(e, &inner.schema)).transpose())
        .collect::<Result<Vec<_>, _>>()?;
    let fresh = || -> Vec<Acc> {
        aggs.iter()
            .map(|a| match a.func {
                AggFunc::CountStar | AggFunc::Count => Acc::Count(0),
                AggFunc::Sum => Acc::Sum(None),
                AggFunc::Min | AggFunc::Max => Acc::Extreme(None),
            })
            .collect()
    };
    let mut groups: BTreeMap<Vec<Value>, (Vec<Acc>, Vec<String>)> = BTreeMap::new();
    if keys.is_empty() {
        groups.insert(Vec::new(), (fresh(), Vec::new()));
    }
    for (row, lin) in inner.rows.iter().zip(&inner.lineage) {
        let k = key_exprs.iter().map(|e| e.eval(row)).collect::<Result<Vec<_>, _>>()?;
        let (accs, dbs) = groups.entry(k).or_insert_with(|| (fresh(), Vec::new()));
        for db in lin.databases() {
            if !dbs.contains(&db) {
                dbs.push(db);
            }
        }
        for ((acc, call), arg) in accs.iter_mut().zip(aggs).zip(&arg_exprs) {
            let v = match arg {
                Some(e) => e.eval(row)?,
                None => Value::Null,
            };
            match acc {
                Acc::Count(n) => {
                    if call.func == AggFunc::CountStar || !v.is_null() {
                        *n += 1;
                    }
                }
                Acc::Sum(s) => {
                    if v.is_null() {
                        continue;
                    }
                    *s = Some(match (s.take(), v) {
                        (None, v) => v,
                        (Some(Value::Int(a)), Value::Int(b)) => Value::Int(a.checked_add(b).ok_or(QueryError::Overflow)?),
                        (Some(a), b) => Value::Real(a.as_f64().unwrap_or(0.0) + b.as_f64().unwrap_or(0.0)),
                    });
                }
                Acc::Extreme(m) => {
                    if v.is_null() {
                        continue;
                    }
                    let replace = match m {
                        None => true,
                        Some(cur) => {
                            if call.func == AggFunc::Min {
                                v < *cur
                            } else {
                                v > *cur
                            }
                        }
                    };
                    if replace {
                        *m = Some(v);
                    }
                }
            }
        }
    }
    let mut rel = Rel::empty(schema);
    for (k, (accs, dbs)) in groups {
        let mut row = k;
        for (acc, call) in accs.into_iter().zip(aggs) {
            row.push(match acc {
                Acc::Count(n) => Value::Int(n),
                Acc::Sum(s) => s.and_then(|v| v.coerce(call.ty)).unwrap_or(Value::Null),
                Acc::Extreme(m) => m.unwrap_or(Value::Null),
            });
        }
        rel.push(row, ReadCheckVector::from_entries(dbs.into_iter().map(ReadCheckEntry::Absent)));
    }
    Ok(rel)
}
