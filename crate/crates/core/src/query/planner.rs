//! AST to plan: view inlining, filter pushdown and key-scan classification.

use crate::dsl::{parse_query, AggFunc, BinaryOp, ColumnRef, Expr, FromItem, JoinSpec, Query, Select, SelectItem};
use crate::store::{Key, Snapshot};
use crate::value::{ColumnType, Value};

use super::expr::{bind, Field, Schema};
use super::plan::{AggregateCall, JoinKind, ProjectItem, QueryPlan, RestViewDef, ScanTarget};
use super::QueryError;

const MAX_VIEW_DEPTH: usize = 16;

pub enum Relation {
    Table(ScanTarget),
    View(Query),
    Rest(RestViewDef),
}

pub trait Catalog {
    fn relation(&self, name: &str) -> Option<Relation>;
}

impl Catalog for Snapshot {
    fn relation(&self, name: &str) -> Option<Relation> {
        if let Some(t) = self.table_by_name(name) {
            return Some(Relation::Table(ScanTarget {
                table_id: t.def.table_id,
                name: t.def.name.clone(),
                qualifier: t.def.name.clone(),
                columns: t.def.columns.iter().map(|c| (c.name.clone(), c.ty)).collect(),
                key: t.def.key_indexes().to_vec(),
            }));
        }
        let v = self.view(name)?;
        parse_query(&v.definition).ok().map(Relation::View)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct PlanOptions {
    /// Refuse to degrade a computed key comparison to a predicate scan.
    pub strict_keys: bool,
    /// Push single-view predicates into REST fetches.
    pub push_into_rest: bool,
}

#[derive(Clone, Debug)]
pub struct Planned {
    pub plan: QueryPlan,
    /// Key comparisons that could not become key scans.
    pub degradations: Vec<String>,
}

/// Plans and optimizes `q` with default options.
pub fn plan(q: &Query, catalog: &dyn Catalog) -> Result<QueryPlan, QueryError> {
    Ok(plan_with(q, catalog, PlanOptions::default())?.plan)
}

pub fn plan_with(q: &Query, catalog: &dyn Catalog, opts: PlanOptions) -> Result<Planned, QueryError> {
    let naive = build(q, catalog)?;
    optimize(naive, opts)
}

pub fn optimize(plan: QueryPlan, opts: PlanOptions) -> Result<Planned, QueryError> {
    let pushed = push_down(plan, opts.push_into_rest);
    let mut degradations = Vec::new();
    let plan = classify(pushed, &mut degradations);
    if opts.strict_keys && !degradations.is_empty() {
        return Err(QueryError::UnboundKey(degradations.join("; ")));
    }
    Ok(Planned { plan, degradations })
}

/// Direct translation of the AST, views inlined, no pushdown.
pub fn build(q: &Query, catalog: &dyn Catalog) -> Result<QueryPlan, QueryError> {
    Builder { catalog, depth: 0 }.query(q)
}

struct Builder<'a> {
    catalog: &'a dyn Catalog,
    depth: usize,
}

fn ty_or_char(t: Option<ColumnType>) -> ColumnType {
    t.unwrap_or(ColumnType::Char)
}

/// A reference to field `i` of `schema` that resolves back to exactly `i`.
fn field_ref(schema: &Schema, i: usize) -> Expr {
    let f = &schema.fields[i];
    let r = ColumnRef {
        qualifier: f.qualifier.clone(),
        name: f.name.clone(),
    };
    if schema.resolve(&r).ok() == Some(i) {
        Expr::Column(r)
    } else {
        Expr::Ordinal(i + 1)
    }
}

fn item_name(expr: &Expr, alias: &Option<String>) -> String {
    match (alias, expr) {
        (Some(a), _) => a.clone(),
        (None, Expr::Column(c)) => c.name.clone(),
        (None, e) => e.to_string(),
    }
}

impl Builder<'_> {
    fn query(&mut self, q: &Query) -> Result<QueryPlan, QueryError> {
        match q {
            Query::Select(s) => self.select(s),
            Query::Union { all, left, right } => {
                let l = self.query(left)?;
                let r = self.query(right)?;
                let (ls, rs) = (l.schema(), r.schema());
                if ls.len() != rs.len() {
                    return Err(QueryError::TypeError(format!(
                        "union operands have {} and {} columns",
                        ls.len(),
                        rs.len()
                    )));
                }
                for (a, b) in ls.fields.iter().zip(&rs.fields) {
                    let ok = a.ty == b.ty
                        || (a.ty.is_numeric() && b.ty.is_numeric())
                        || (a.ty.is_temporal() && b.ty.is_temporal());
                    if !ok {
                        return Err(QueryError::TypeError(format!("union column {} is {} vs {}", a.name, a.ty, b.ty)));
                    }
                }
                Ok(QueryPlan::Union {
                    all: *all,
                    left: Box::new(l),
                    right: Box::new(r),
                })
            }
        }
    }

    fn from(&mut self, item: &FromItem) -> Result<QueryPlan, QueryError> {
        match item {
            FromItem::Relation { name, alias } => {
                let qualifier = alias.clone().unwrap_or_else(|| name.clone());
                match self.catalog.relation(name) {
                    None => Err(QueryError::UnknownRelation(name.clone())),
                    Some(Relation::Table(mut t)) => {
                        t.qualifier = qualifier;
                        Ok(QueryPlan::PredScan {
                            table: t,
                            predicate: None,
                        })
                    }
                    Some(Relation::Rest(view)) => Ok(QueryPlan::RestGet {
                        view,
                        qualifier,
                        pushed: None,
                    }),
                    Some(Relation::View(q)) => {
                        if self.depth >= MAX_VIEW_DEPTH {
                            return Err(QueryError::RecursiveView(name.clone()));
                        }
                        self.depth += 1;
                        let inner = self.query(&q);
                        self.depth -= 1;
                        let inner = inner?;
                        let schema = inner.schema();
                        let items = (0..schema.len())
                            .map(|i| ProjectItem {
                                expr: field_ref(&schema, i),
                                name: schema.fields[i].name.clone(),
                                ty: schema.fields[i].ty,
                            })
                            .collect();
                        Ok(QueryPlan::Project {
                            items,
                            qualifier: Some(qualifier),
                            input: Box::new(inner),
                        })
                    }
                }
            }
            FromItem::Join { kind, left, right } => {
                let l = self.from(left)?;
                let r = self.from(right)?;
                let kind = match kind {
                    JoinSpec::Natural => JoinKind::Natural,
                    JoinSpec::Cross => JoinKind::On(Expr::Literal(Value::Bool(true))),
                    JoinSpec::On(e) => {
                        let joined = l.schema().concat(&r.schema());
                        let e = joined.name_ordinals(e)?;
                        predicate_type(&e, &joined)?;
                        JoinKind::On(e)
                    }
                };
                Ok(QueryPlan::Join {
                    kind,
                    left: Box::new(l),
                    right: Box::new(r),
                })
            }
        }
    }

    fn select(&mut self, s: &Select) -> Result<QueryPlan, QueryError> {
        let mut input = self.from(&s.from)?;
        if let Some(w) = &s.filter {
            let schema = input.schema();
            let w = schema.name_ordinals(w)?;
            if w.contains_aggregate() {
                return Err(QueryError::Unsupported("aggregate in WHERE".into()));
            }
            predicate_type(&w, &schema)?;
            input = QueryPlan::Filter {
                predicate: w,
                input: Box::new(input),
            };
        }
        let mut seen: Vec<String> = Vec::new();
        for item in &s.projection {
            if let SelectItem::Expr { alias: Some(a), .. } = item {
                if seen.iter().any(|x| x.eq_ignore_ascii_case(a)) {
                    return Err(QueryError::DuplicateAlias(a.clone()));
                }
                seen.push(a.clone());
            }
        }
        let grouped = !s.group_by.is_empty()
            || s
                .projection
                .iter()
                .any(|i| matches!(i, SelectItem::Expr { expr, .. } if expr.contains_aggregate()));
        if grouped {
            return self.grouped(s, input);
        }
        if matches!(s.projection.as_slice(), [SelectItem::Wildcard]) {
            return Ok(input);
        }
        let schema = input.schema();
        let mut items = Vec::new();
        for item in &s.projection {
            match item {
                SelectItem::Wildcard => {
                    for i in 0..schema.len() {
                        items.push(ProjectItem {
                            expr: field_ref(&schema, i),
                            name: schema.fields[i].name.clone(),
                            ty: schema.fields[i].ty,
                        });
                    }
                }
                SelectItem::Expr { expr, alias } => {
                    let expr = schema.name_ordinals(expr)?;
                    let (_, ty) = bind(&expr, &schema)?;
                    items.push(ProjectItem {
                        name: item_name(&expr, alias),
                        expr,
                        ty: ty_or_char(ty),
                    });
                }
            }
        }
        Ok(QueryPlan::Project {
            items,
            qualifier: None,
            input: Box::new(input),
        })
    }

    fn grouped(&mut self, s: &Select, input: QueryPlan) -> Result<QueryPlan, QueryError> {
        let schema = input.schema();
        // Group keys; a bare name that is not an input column may name a
        // select alias.
        let mut keys: Vec<ProjectItem> = Vec::new();
        for (n, g) in s.group_by.iter().enumerate() {
            let mut expr = schema.name_ordinals(g)?;
            if let Expr::Column(c) = &expr {
                if c.qualifier.is_none() && schema.resolve(c).is_err() {
                    let aliased = s.projection.iter().find_map(|i| match i {
                        SelectItem::Expr { expr, alias: Some(a) } if a.eq_ignore_ascii_case(&c.name) => Some(expr.clone()),
                        _ => None,
                    });
                    if let Some(a) = aliased {
                        expr = schema.name_ordinals(&a)?;
                    }
                }
            }
            if expr.contains_aggregate() {
                return Err(QueryError::Unsupported("aggregate in GROUP BY".into()));
            }
            let (_, ty) = bind(&expr, &schema)?;
            keys.push(ProjectItem {
                expr,
                name: format!("__g{n}"),
                ty: ty_or_char(ty),
            });
        }
        let mut aggs: Vec<AggregateCall> = Vec::new();
        let mut agg_exprs: Vec<Expr> = Vec::new();
        let mut items = Vec::new();
        for item in &s.projection {
            let SelectItem::Expr { expr, alias } = item else {
                return Err(QueryError::NotGrouped("*".into()));
            };
            let expr = schema.name_ordinals(expr)?;
            let mut failure = None;
            let rewritten = expr.transform(&mut |node| {
                if let Expr::Aggregate { func, arg } = &node {
                    if let Some(k) = agg_exprs.iter().position(|a| *a == node) {
                        return Expr::column(&aggs[k].name);
                    }
                    let ty = match aggregate_type(*func, arg.as_deref(), &schema) {
                        Ok(t) => t,
                        Err(e) => {
                            failure = Some(e);
                            return node;
                        }
                    };
                    let name = format!("__agg{}", aggs.len());
                    aggs.push(AggregateCall {
                        func: *func,
                        arg: arg.as_deref().cloned(),
                        name: name.clone(),
                        ty,
                    });
                    agg_exprs.push(node.clone());
                    return Expr::column(&name);
                }
                node
            });
            if let Some(e) = failure {
                return Err(e);
            }
            let rewritten = replace_group_refs(&rewritten, &keys, &schema);
            let agg_schema = Schema::new(
                keys.iter()
                    .map(|k| (k.name.clone(), k.ty))
                    .chain(aggs.iter().map(|a| (a.name.clone(), a.ty)))
                    .map(|(name, ty)| Field {
                        qualifier: None,
                        name,
                        ty,
                    })
                    .collect(),
            );
            let ty = match bind(&rewritten, &agg_schema) {
                Ok((_, ty)) => ty,
                Err(QueryError::UnknownColumn(_)) | Err(QueryError::AmbiguousColumn(_)) => {
                    return Err(QueryError::NotGrouped(expr.to_string()))
                }
                Err(e) => return Err(e),
            };
            items.push(ProjectItem {
                name: item_name(&expr, alias),
                expr: rewritten,
                ty: ty_or_char(ty),
            });
        }
        Ok(QueryPlan::Project {
            items,
            qualifier: None,
            input: Box::new(QueryPlan::Aggregate {
                group_keys: keys,
                aggregates: aggs,
                input: Box::new(input),
            }),
        })
    }
}

fn predicate_type(e: &Expr, schema: &Schema) -> Result<(), QueryError> {
    match bind(e, schema)?.1 {
        None | Some(ColumnType::Bool) => Ok(()),
        Some(t) => Err(QueryError::TypeError(format!("predicate {e} has type {t}"))),
    }
}

fn aggregate_type(func: AggFunc, arg: Option<&Expr>, schema: &Schema) -> Result<ColumnType, QueryError> {
    let arg_ty = match arg {
        Some(a) => {
            if a.contains_aggregate() {
                return Err(QueryError::Unsupported("nested aggregate".into()));
            }
            bind(a, schema)?.1
        }
        None => None,
    };
    Ok(match func {
        AggFunc::CountStar | AggFunc::Count => ColumnType::Int,
        AggFunc::Sum => match arg_ty {
            None | Some(ColumnType::Int) => ColumnType::Int,
            Some(ColumnType::Real) => ColumnType::Real,
            Some(t) => return Err(QueryError::TypeError(format!("sum over {t}"))),
        },
        AggFunc::Min | AggFunc::Max => ty_or_char(arg_ty),
    })
}

/// Replaces subexpressions equal to a group key (or column references
/// resolving to the same input column as a key) with the key's name.
fn replace_group_refs(e: &Expr, keys: &[ProjectItem], input: &Schema) -> Expr {
    for k in keys {
        if *e == k.expr {
            return Expr::column(&k.name);
        }
        if let (Expr::Column(a), Expr::Column(b)) = (e, &k.expr) {
            if let (Ok(x), Ok(y)) = (input.resolve(a), input.resolve(b)) {
                if x == y {
                    return Expr::column(&k.name);
                }
            }
        }
    }
    match e {
        Expr::Literal(_) | Expr::Ordinal(_) | Expr::Aggregate { .. } => e.clone(),
        Expr::Column(c) if c.name.starts_with("__agg") => e.clone(),
        Expr::Column(_) => e.clone(),
        Expr::Unary { op, expr } => Expr::Unary {
            op: *op,
            expr: Box::new(replace_group_refs(expr, keys, input)),
        },
        Expr::Binary { op, left, right } => Expr::Binary {
            op: *op,
            left: Box::new(replace_group_refs(left, keys, input)),
            right: Box::new(replace_group_refs(right, keys, input)),
        },
        Expr::IsNull { expr, negated } => Expr::IsNull {
            expr: Box::new(replace_group_refs(expr, keys, input)),
            negated: *negated,
        },
        Expr::InList { expr, list, negated } => Expr::InList {
            expr: Box::new(replace_group_refs(expr, keys, input)),
            list: list.iter().map(|x| replace_group_refs(x, keys, input)).collect(),
            negated: *negated,
        },
        Expr::Extract { field, expr } => Expr::Extract {
            field: *field,
            expr: Box::new(replace_group_refs(expr, keys, input)),
        },
    }
}

// ---- filter pushdown -------------------------------------------------------

/// Moves filter conjuncts as close to the scans as their column references
/// allow; with `into_rest`, conjuncts over a single REST view are shipped in
/// its fetch as `$n`-form predicates.
pub fn push_down(plan: QueryPlan, into_rest: bool) -> QueryPlan {
    match plan {
        QueryPlan::Filter { predicate, input } => {
            let mut node = push_down(*input, into_rest);
            let mut kept = Vec::new();
            for c in predicate.conjuncts() {
                match try_push(node, c, into_rest) {
                    Ok(n) => node = n,
                    Err((n, c)) => {
                        node = n;
                        kept.push(c);
                    }
                }
            }
            match Expr::conjoin(kept) {
                Some(p) => QueryPlan::Filter {
                    predicate: p,
                    input: Box::new(node),
                },
                None => node,
            }
        }
        QueryPlan::Join { kind, left, right } => QueryPlan::Join {
            kind,
            left: Box::new(push_down(*left, into_rest)),
            right: Box::new(push_down(*right, into_rest)),
        },
        QueryPlan::Union { all, left, right } => QueryPlan::Union {
            all,
            left: Box::new(push_down(*left, into_rest)),
            right: Box::new(push_down(*right, into_rest)),
        },
        QueryPlan::Project { items, qualifier, input } => QueryPlan::Project {
            items,
            qualifier,
            input: Box::new(push_down(*input, into_rest)),
        },
        QueryPlan::Aggregate {
            group_keys,
            aggregates,
            input,
        } => QueryPlan::Aggregate {
            group_keys,
            aggregates,
            input: Box::new(push_down(*input, into_rest)),
        },
        leaf => leaf,
    }
}

fn filter_over(c: Expr, input: QueryPlan) -> QueryPlan {
    QueryPlan::Filter {
        predicate: c,
        input: Box::new(input),
    }
}

/// Substitutes each column reference of `c` (resolved in `schema`) with
/// `with(index)`.
fn substitute(c: &Expr, schema: &Schema, with: &dyn Fn(usize) -> Option<Expr>) -> Option<Expr> {
    let mut ok = true;
    let out = c.transform(&mut |n| match &n {
        Expr::Column(r) => match schema.resolve(r).ok().and_then(with) {
            Some(e) => e,
            None => {
                ok = false;
                n
            }
        },
        Expr::Ordinal(_) => {
            ok = false;
            n
        }
        _ => n,
    });
    ok.then_some(out)
}

fn try_push(node: QueryPlan, c: Expr, into_rest: bool) -> Result<QueryPlan, (QueryPlan, Expr)> {
    let schema = node.schema();
    if !schema.covers(&c) {
        return Err((node, c));
    }
    // Positional references only make sense against this exact schema.
    let positional = has_ordinal(&c);
    if positional && !matches!(node, QueryPlan::PredScan { .. } | QueryPlan::Filter { .. } | QueryPlan::RestGet { .. }) {
        return Err((node, c));
    }
    match node {
        QueryPlan::PredScan { table, predicate } => Ok(QueryPlan::PredScan {
            table,
            predicate: Expr::conjoin(predicate.into_iter().chain([c])),
        }),
        QueryPlan::Filter { predicate, input } => match try_push(*input, c, into_rest) {
            Ok(i) => Ok(QueryPlan::Filter {
                predicate,
                input: Box::new(i),
            }),
            Err((i, c)) => Ok(QueryPlan::Filter {
                predicate: Expr::binary(BinaryOp::And, predicate, c),
                input: Box::new(i),
            }),
        },
        QueryPlan::Join { kind, left, right } => {
            let (ls, rs) = (left.schema(), right.schema());
            if ls.covers(&c) {
                let left = push_or_wrap(*left, c, into_rest);
                Ok(QueryPlan::Join {
                    kind,
                    left: Box::new(left),
                    right,
                })
            } else if rs.covers(&c) {
                let right = push_or_wrap(*right, c, into_rest);
                Ok(QueryPlan::Join {
                    kind,
                    left,
                    right: Box::new(right),
                })
            } else {
                Err((QueryPlan::Join { kind, left, right }, c))
            }
        }
        QueryPlan::Union { all, left, right } => {
            let ord = match schema.to_ordinals(&c) {
                Ok(o) => o,
                Err(_) => return Err((QueryPlan::Union { all, left, right }, c)),
            };
            let (ls, rs) = (left.schema(), right.schema());
            match (ls.name_ordinals(&ord), rs.name_ordinals(&ord)) {
                (Ok(lc), Ok(rc)) if ls.covers(&lc) && rs.covers(&rc) => Ok(QueryPlan::Union {
                    all,
                    left: Box::new(push_or_wrap(*left, lc, into_rest)),
                    right: Box::new(push_or_wrap(*right, rc, into_rest)),
                }),
                _ => Err((QueryPlan::Union { all, left, right }, c)),
            }
        }
        QueryPlan::Project { items, qualifier, input } => {
            match substitute(&c, &schema, &|i| Some(items[i].expr.clone())) {
                Some(inner) if !inner.contains_aggregate() => Ok(QueryPlan::Project {
                    items,
                    qualifier,
                    input: Box::new(push_or_wrap(*input, inner, into_rest)),
                }),
                _ => Err((QueryPlan::Project { items, qualifier, input }, c)),
            }
        }
        QueryPlan::Aggregate {
            group_keys,
            aggregates,
            input,
        } => {
            let n = group_keys.len();
            match substitute(&c, &schema, &|i| (i < n).then(|| group_keys[i].expr.clone())) {
                Some(inner) => Ok(QueryPlan::Aggregate {
                    group_keys,
                    aggregates,
                    input: Box::new(push_or_wrap(*input, inner, into_rest)),
                }),
                None => Err((
                    QueryPlan::Aggregate {
                        group_keys,
                        aggregates,
                        input,
                    },
                    c,
                )),
            }
        }
        QueryPlan::RestGet {
            view,
            qualifier,
            pushed,
        } if into_rest => match schema.to_ordinals(&c) {
            Ok(ord) => Ok(QueryPlan::RestGet {
                view,
                qualifier,
                pushed: Expr::conjoin(pushed.into_iter().chain([ord])),
            }),
            Err(_) => Err((
                QueryPlan::RestGet {
                    view,
                    qualifier,
                    pushed,
                },
                c,
            )),
        },
        other => Err((other, c)),
    }
}

fn has_ordinal(e: &Expr) -> bool {
    let mut found = false;
    e.walk(&mut |n| found |= matches!(n, Expr::Ordinal(_)));
    found
}

fn push_or_wrap(node: QueryPlan, c: Expr, into_rest: bool) -> QueryPlan {
    match try_push(node, c, into_rest) {
        Ok(n) => n,
        Err((n, c)) => filter_over(c, n),
    }
}

// ---- key classification ----------------------------------------------------

fn classify(plan: QueryPlan, degradations: &mut Vec<String>) -> QueryPlan {
    match plan {
        QueryPlan::PredScan {
            table,
            predicate: Some(p),
        } => classify_scan(table, p, degradations),
        QueryPlan::Filter { predicate, input } => QueryPlan::Filter {
            predicate,
            input: Box::new(classify(*input, degradations)),
        },
        QueryPlan::Join { kind, left, right } => QueryPlan::Join {
            kind,
            left: Box::new(classify(*left, degradations)),
            right: Box::new(classify(*right, degradations)),
        },
        QueryPlan::Union { all, left, right } => QueryPlan::Union {
            all,
            left: Box::new(classify(*left, degradations)),
            right: Box::new(classify(*right, degradations)),
        },
        QueryPlan::Project { items, qualifier, input } => QueryPlan::Project {
            items,
            qualifier,
            input: Box::new(classify(*input, degradations)),
        },
        QueryPlan::Aggregate {
            group_keys,
            aggregates,
            input,
        } => QueryPlan::Aggregate {
            group_keys,
            aggregates,
            input: Box::new(classify(*input, degradations)),
        },
        other => other,
    }
}

/// `lit` converted to the key column's type, if that conversion preserves
/// SQL equality.
fn key_literal(lit: &Value, ty: ColumnType) -> Option<Value> {
    if lit.is_null() {
        return None;
    }
    let v = lit.coerce(ty)?;
    (v.sql_cmp(lit) == Some(std::cmp::Ordering::Equal)).then_some(v)
}

fn column_of(e: &Expr, schema: &Schema) -> Option<usize> {
    match e {
        Expr::Column(c) => schema.resolve(c).ok(),
        _ => None,
    }
}

/// `col = literal` in either orientation.
fn key_equality(c: &Expr, schema: &Schema) -> Option<(usize, Value)> {
    let Expr::Binary {
        op: BinaryOp::Eq,
        left,
        right,
    } = c
    else {
        return None;
    };
    match (left.as_ref(), right.as_ref()) {
        (l, Expr::Literal(v)) => column_of(l, schema).map(|i| (i, v.clone())),
        (Expr::Literal(v), r) => column_of(r, schema).map(|i| (i, v.clone())),
        _ => None,
    }
}

/// Literal alternatives for one column: `col in (...)` or an OR chain of
/// equalities.
fn key_alternatives(c: &Expr, schema: &Schema) -> Option<(usize, Vec<Value>)> {
    match c {
        Expr::InList {
            expr,
            list,
            negated: false,
        } => {
            let col = column_of(expr, schema)?;
            let vals = list
                .iter()
                .map(|e| match e {
                    Expr::Literal(v) => Some(v.clone()),
                    _ => None,
                })
                .collect::<Option<Vec<_>>>()?;
            Some((col, vals))
        }
        Expr::Binary { op: BinaryOp::Or, left, right } => {
            let (a, mut av) = key_alternatives(left, schema)?;
            let (b, bv) = key_alternatives(right, schema)?;
            (a == b).then(|| {
                av.extend(bv);
                (a, av)
            })
        }
        other => key_equality(other, schema).map(|(i, v)| (i, vec![v])),
    }
}

fn is_constant(e: &Expr) -> bool {
    let mut constant = true;
    e.walk(&mut |n| {
        if matches!(n, Expr::Column(_) | Expr::Ordinal(_) | Expr::Aggregate { .. }) {
            constant = false;
        }
    });
    constant
}

fn classify_scan(table: ScanTarget, predicate: Expr, degradations: &mut Vec<String>) -> QueryPlan {
    let schema = table.schema();
    let conjuncts = predicate.conjuncts();
    let mut used = vec![false; conjuncts.len()];
    let mut key: Key = Vec::new();
    for &k in &table.key {
        let ty = table.columns[k].1;
        let hit = conjuncts.iter().enumerate().find_map(|(j, c)| {
            if used[j] {
                return None;
            }
            let (col, v) = key_equality(c, &schema)?;
            (col == k).then_some(())?;
            key_literal(&v, ty).map(|v| (j, v))
        });
        match hit {
            Some((j, v)) => {
                used[j] = true;
                key.push(v);
            }
            None => break,
        }
    }
    let mut keys: Option<Vec<Key>> = None;
    if key.len() == table.key.len() && !table.key.is_empty() {
        keys = Some(vec![key]);
    } else {
        used.iter_mut().for_each(|u| *u = false);
        if table.key.len() == 1 {
            let k = table.key[0];
            let ty = table.columns[k].1;
            for (j, c) in conjuncts.iter().enumerate() {
                if let Some((col, vals)) = key_alternatives(c, &schema) {
                    if col != k {
                        continue;
                    }
                    if let Some(mut ks) = vals
                        .iter()
                        .map(|v| key_literal(v, ty).map(|v| vec![v]))
                        .collect::<Option<Vec<Key>>>()
                    {
                        ks.sort();
                        ks.dedup();
                        used[j] = true;
                        keys = Some(ks);
                        break;
                    }
                }
            }
        }
    }
    let Some(keys) = keys else {
        for c in &conjuncts {
            if let Expr::Binary {
                op: BinaryOp::Eq,
                left,
                right,
            } = c
            {
                let pair = [(left.as_ref(), right.as_ref()), (right.as_ref(), left.as_ref())];
                for (col, other) in pair {
                    if let Some(i) = column_of(col, &schema) {
                        if table.key.contains(&i) && is_constant(other) && !matches!(other, Expr::Literal(_)) {
                            degradations.push(format!("key of {} computed by {other}, not literal", table.name));
                        }
                    }
                }
            }
        }
        return QueryPlan::PredScan {
            table,
            predicate: Some(predicate),
        };
    };
    let residual: Vec<Expr> = conjuncts
        .into_iter()
        .zip(used)
        .filter(|(_, u)| !u)
        .map(|(c, _)| c)
        .collect();
    let scan = QueryPlan::KeyScan { table, keys };
    match Expr::conjoin(residual) {
        Some(p) => filter_over(p, scan),
        None => scan,
    }
}
