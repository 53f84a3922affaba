//! Schemas, expression binding (name resolution + type checking) and scalar
//! evaluation.

use std::cmp::Ordering;

use chrono::Datelike;

use crate::dsl::{BinaryOp, ColumnRef, DateField, Expr, UnaryOp};
use crate::value::{ColumnType, Interval, Value};

use super::QueryError;

#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub qualifier: Option<String>,
    pub name: String,
    pub ty: ColumnType,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Schema {
    pub fields: Vec<Field>,
}

impl Schema {
    pub fn new(fields: Vec<Field>) -> Schema {
        Schema { fields }
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.fields.iter().map(|f| f.name.clone()).collect()
    }

    pub fn requalify(&self, qualifier: Option<&str>) -> Schema {
        Schema {
            fields: self
                .fields
                .iter()
                .map(|f| Field {
                    qualifier: qualifier.map(str::to_string),
                    ..f.clone()
                })
                .collect(),
        }
    }

    pub fn concat(&self, other: &Schema) -> Schema {
        let mut fields = self.fields.clone();
        fields.extend(other.fields.iter().cloned());
        Schema { fields }
    }

    /// Position of the column named by `c`; names and qualifiers match
    /// case-insensitively.
    pub fn resolve(&self, c: &ColumnRef) -> Result<usize, QueryError> {
        let mut hits = self.fields.iter().enumerate().filter(|(_, f)| {
            f.name.eq_ignore_ascii_case(&c.name)
                && match (&c.qualifier, &f.qualifier) {
                    (None, _) => true,
                    (Some(q), Some(fq)) => q.eq_ignore_ascii_case(fq),
                    (Some(_), None) => false,
                }
        });
        match (hits.next(), hits.next()) {
            (Some((i, _)), None) => Ok(i),
            (Some(_), Some(_)) => Err(QueryError::AmbiguousColumn(c.to_string())),
            (None, _) => Err(QueryError::UnknownColumn(c.to_string())),
        }
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.resolve(&ColumnRef::bare(name)).ok()
    }

    /// True when every column reference of `e` resolves here.
    pub fn covers(&self, e: &Expr) -> bool {
        let mut ok = true;
        e.walk(&mut |n| match n {
            Expr::Column(c) => ok &= self.resolve(c).is_ok(),
            Expr::Ordinal(k) => ok &= *k >= 1 && *k <= self.len(),
            _ => {}
        });
        ok
    }

    /// Rewrites `$n` references into qualified column references.
    pub fn name_ordinals(&self, e: &Expr) -> Result<Expr, QueryError> {
        let mut err = None;
        let out = e.transform(&mut |n| match n {
            Expr::Ordinal(k) => match self.fields.get(k.wrapping_sub(1)) {
                Some(f) => Expr::Column(ColumnRef {
                    qualifier: f.qualifier.clone(),
                    name: f.name.clone(),
                }),
                None => {
                    err = Some(QueryError::UnknownColumn(format!("${k}")));
                    n
                }
            },
            other => other,
        });
        match err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }

    /// Rewrites column references into `$n` positions of this schema.
    pub fn to_ordinals(&self, e: &Expr) -> Result<Expr, QueryError> {
        let mut err = None;
        let out = e.transform(&mut |n| match &n {
            Expr::Column(c) => match self.resolve(c) {
                Ok(i) => Expr::Ordinal(i + 1),
                Err(x) => {
                    err = Some(x);
                    n
                }
            },
            _ => n,
        });
        match err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }
}

/// An expression with column references resolved to positions.
#[derive(Clone, Debug)]
pub enum Bound {
    Lit(Value),
    Col(usize),
    Unary(UnaryOp, Box<Bound>),
    Binary(BinaryOp, Box<Bound>, Box<Bound>),
    IsNull(Box<Bound>, bool),
    InList(Box<Bound>, Vec<Bound>, bool),
    Extract(DateField, Box<Bound>),
}

/// Type of an expression; `None` for a bare null.
pub type Ty = Option<ColumnType>;

pub fn bind(e: &Expr, schema: &Schema) -> Result<(Bound, Ty), QueryError> {
    Ok(match e {
        Expr::Literal(v) => (Bound::Lit(v.clone()), v.column_type()),
        Expr::Column(c) => {
            let i = schema.resolve(c)?;
            (Bound::Col(i), Some(schema.fields[i].ty))
        }
        Expr::Ordinal(k) => {
            let i = k.wrapping_sub(1);
            let f = schema
                .fields
                .get(i)
                .ok_or_else(|| QueryError::UnknownColumn(format!("${k}")))?;
            (Bound::Col(i), Some(f.ty))
        }
        Expr::Unary { op, expr } => {
            let (b, t) = bind(expr, schema)?;
            let ty = match (op, t) {
                (_, None) => None,
                (UnaryOp::Neg, Some(t)) if t.is_numeric() || t == ColumnType::Interval => Some(t),
                (UnaryOp::Not, Some(ColumnType::Bool)) => Some(ColumnType::Bool),
                (_, Some(t)) => return Err(type_error(&format!("cannot apply {op:?} to {t}"), e)),
            };
            (Bound::Unary(*op, Box::new(b)), ty)
        }
        Expr::Binary { op, left, right } => {
            let (l, lt) = bind(left, schema)?;
            let (r, rt) = bind(right, schema)?;
            let ty = binary_type(*op, lt, rt).ok_or_else(|| {
                type_error(
                    &format!("cannot apply '{}' to {} and {}", op.symbol(), ty_name(lt), ty_name(rt)),
                    e,
                )
            })?;
            (Bound::Binary(*op, Box::new(l), Box::new(r)), ty)
        }
        Expr::IsNull { expr, negated } => {
            let (b, _) = bind(expr, schema)?;
            (Bound::IsNull(Box::new(b), *negated), Some(ColumnType::Bool))
        }
        Expr::InList { expr, list, negated } => {
            let (b, t) = bind(expr, schema)?;
            let mut items = Vec::new();
            for item in list {
                let (ib, it) = bind(item, schema)?;
                if !comparable(t, it) {
                    return Err(type_error("IN list item of incompatible type", e));
                }
                items.push(ib);
            }
            (Bound::InList(Box::new(b), items, *negated), Some(ColumnType::Bool))
        }
        Expr::Extract { field, expr } => {
            let (b, t) = bind(expr, schema)?;
            match t {
                None | Some(ColumnType::Interval | ColumnType::Date | ColumnType::DateTime) => {}
                Some(t) => return Err(type_error(&format!("cannot extract from {t}"), e)),
            }
            (Bound::Extract(*field, Box::new(b)), Some(ColumnType::Int))
        }
        Expr::Aggregate { .. } => return Err(QueryError::Unsupported(format!("aggregate {e} outside grouping"))),
    })
}

fn ty_name(t: Ty) -> String {
    t.map(|t| t.to_string()).unwrap_or_else(|| "null".into())
}

fn type_error(msg: &str, e: &Expr) -> QueryError {
    QueryError::TypeError(format!("{msg} in {e}"))
}

fn comparable(a: Ty, b: Ty) -> bool {
    match (a, b) {
        (None, _) | (_, None) => true,
        (Some(a), Some(b)) => a == b || (a.is_numeric() && b.is_numeric()) || (a.is_temporal() && b.is_temporal()),
    }
}

fn binary_type(op: BinaryOp, l: Ty, r: Ty) -> Option<Ty> {
    use ColumnType::*;
    if op.is_comparison() {
        return comparable(l, r).then_some(Some(Bool));
    }
    match op {
        BinaryOp::And | BinaryOp::Or => match (l, r) {
            (None | Some(Bool), None | Some(Bool)) => Some(Some(Bool)),
            _ => None,
        },
        BinaryOp::Div => match (l, r) {
            (None, None) => Some(None),
            (None, Some(t)) | (Some(t), None) if t.is_numeric() => Some(Some(Real)),
            (Some(a), Some(b)) if a.is_numeric() && b.is_numeric() => Some(Some(Real)),
            _ => None,
        },
        BinaryOp::Add | BinaryOp::Sub | BinaryOp::Mul => match (l, r) {
            (None, None) => Some(None),
            (None, Some(t)) | (Some(t), None) if t.is_numeric() || t == Interval => Some(Some(t)),
            (None, Some(t)) | (Some(t), None) if t.is_temporal() && op == BinaryOp::Sub => Some(None),
            (Some(Int), Some(Int)) => Some(Some(Int)),
            (Some(a), Some(b)) if a.is_numeric() && b.is_numeric() => Some(Some(Real)),
            (Some(a), Some(b)) if a.is_temporal() && b.is_temporal() && op == BinaryOp::Sub => Some(Some(Interval)),
            _ => None,
        },
        _ => None,
    }
}

impl Bound {
    pub fn eval(&self, row: &[Value]) -> Result<Value, QueryError> {
        Ok(match self {
            Bound::Lit(v) => v.clone(),
            Bound::Col(i) => row[*i].clone(),
            Bound::Unary(op, b) => {
                let v = b.eval(row)?;
                match (op, v) {
                    (_, Value::Null) => Value::Null,
                    (UnaryOp::Neg, Value::Int(i)) => Value::Int(i.checked_neg().ok_or(QueryError::Overflow)?),
                    (UnaryOp::Neg, Value::Real(r)) => Value::Real(-r),
                    (UnaryOp::Neg, Value::Interval(iv)) => Value::Interval(iv.negate()),
                    (UnaryOp::Not, Value::Bool(b)) => Value::Bool(!b),
                    (op, v) => return Err(QueryError::TypeError(format!("cannot apply {op:?} to {v}"))),
                }
            }
            Bound::Binary(BinaryOp::And, l, r) => match (l.eval(row)?, r.eval(row)?) {
                (Value::Bool(false), _) | (_, Value::Bool(false)) => Value::Bool(false),
                (Value::Bool(true), Value::Bool(true)) => Value::Bool(true),
                _ => Value::Null,
            },
            Bound::Binary(BinaryOp::Or, l, r) => match (l.eval(row)?, r.eval(row)?) {
                (Value::Bool(true), _) | (_, Value::Bool(true)) => Value::Bool(true),
                (Value::Bool(false), Value::Bool(false)) => Value::Bool(false),
                _ => Value::Null,
            },
            Bound::Binary(op, l, r) => {
                let (a, b) = (l.eval(row)?, r.eval(row)?);
                if op.is_comparison() {
                    compare(*op, &a, &b)
                } else {
                    arithmetic(*op, &a, &b)?
                }
            }
            Bound::IsNull(b, negated) => Value::Bool(b.eval(row)?.is_null() != *negated),
            Bound::InList(b, items, negated) => {
                let v = b.eval(row)?;
                if v.is_null() {
                    return Ok(Value::Null);
                }
                let mut hit = false;
                let mut unknown = false;
                for item in items {
                    let x = item.eval(row)?;
                    if x.is_null() {
                        unknown = true;
                    } else if v.sql_cmp(&x) == Some(Ordering::Equal) {
                        hit = true;
                        break;
                    }
                }
                if !hit && unknown {
                    Value::Null
                } else {
                    Value::Bool(hit != *negated)
                }
            }
            Bound::Extract(field, b) => match b.eval(row)? {
                Value::Null => Value::Null,
                Value::Interval(iv) => Value::Int(match field {
                    DateField::Year => iv.whole_years(),
                    DateField::Month => iv.months as i64,
                    DateField::Day => iv.days as i64,
                }),
                v => match v.as_datetime() {
                    Some(dt) => Value::Int(match field {
                        DateField::Year => dt.year() as i64,
                        DateField::Month => dt.month() as i64,
                        DateField::Day => dt.day() as i64,
                    }),
                    None => return Err(QueryError::TypeError(format!("cannot extract from {v}"))),
                },
            },
        })
    }

    /// Evaluates as a predicate: only `true` passes.
    pub fn test(&self, row: &[Value]) -> Result<bool, QueryError> {
        Ok(truthy(&self.eval(row)?))
    }
}

fn truthy(v: &Value) -> bool {
    matches!(v, Value::Bool(true))
}

/// NULL on either side makes the comparison unknown.
fn compare(op: BinaryOp, a: &Value, b: &Value) -> Value {
    if a.is_null() || b.is_null() {
        return Value::Null;
    }
    let Some(ord) = a.sql_cmp(b) else {
        return Value::Bool(false);
    };
    Value::Bool(match op {
        BinaryOp::Eq => ord == Ordering::Equal,
        BinaryOp::NotEq => ord != Ordering::Equal,
        BinaryOp::Lt => ord == Ordering::Less,
        BinaryOp::LtEq => ord != Ordering::Greater,
        BinaryOp::Gt => ord == Ordering::Greater,
        BinaryOp::GtEq => ord != Ordering::Less,
        _ => false,
    })
}

fn arithmetic(op: BinaryOp, a: &Value, b: &Value) -> Result<Value, QueryError> {
    if a.is_null() || b.is_null() {
        return Ok(Value::Null);
    }
    if op == BinaryOp::Div {
        let (Some(x), Some(y)) = (a.as_f64(), b.as_f64()) else {
            return Err(QueryError::TypeError(format!("cannot divide {a} by {b}")));
        };
        return Ok(if y == 0.0 { Value::Null } else { Value::Real(x / y) });
    }
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => {
            let r = match op {
                BinaryOp::Add => x.checked_add(*y),
                BinaryOp::Sub => x.checked_sub(*y),
                _ => x.checked_mul(*y),
            };
            r.map(Value::Int).ok_or(QueryError::Overflow)
        }
        (Value::Interval(x), Value::Interval(y)) if op != BinaryOp::Mul => {
            let y = if op == BinaryOp::Sub { y.negate() } else { *y };
            Ok(Value::Interval(Interval {
                years: x.years + y.years,
                months: x.months + y.months,
                days: x.days + y.days,
                seconds: x.seconds + y.seconds,
            }))
        }
        _ => {
            if let (Some(x), Some(y)) = (a.as_f64(), b.as_f64()) {
                return Ok(Value::Real(match op {
                    BinaryOp::Add => x + y,
                    BinaryOp::Sub => x - y,
                    _ => x * y,
                }));
            }
            if op == BinaryOp::Sub {
                if let (Some(x), Some(y)) = (a.as_datetime(), b.as_datetime()) {
                    return Ok(Value::Interval(Interval::between(y, x)));
                }
            }
            Err(QueryError::TypeError(format!("cannot apply '{}' to {a} and {b}", op.symbol())))
        }
    }
}

/// Binds and evaluates `e` against one row of `schema`.
pub fn eval_expr(e: &Expr, schema: &Schema, row: &[Value]) -> Result<Value, QueryError> {
    let (b, _) = bind(e, schema)?;
    b.eval(row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_expr;
    use crate::value::parse_date;

    fn schema() -> Schema {
        Schema::new(vec![
            Field {
                qualifier: Some("D".into()),
                name: "birthdate".into(),
                ty: ColumnType::DateTime,
            },
            Field {
                qualifier: Some("D".into()),
                name: "admission".into(),
                ty: ColumnType::DateTime,
            },
        ])
    }

    fn row(b: &str, a: &str) -> Vec<Value> {
        vec![
            Value::Date(parse_date(b).unwrap()).coerce(ColumnType::DateTime).unwrap(),
            Value::Date(parse_date(a).unwrap()).coerce(ColumnType::DateTime).unwrap(),
        ]
    }

    fn age(b: &str, a: &str) -> Value {
        let e = parse_expr("extract(year from (admission - birthdate))").unwrap();
        eval_expr(&e, &schema(), &row(b, a)).unwrap()
    }

    #[test]
    fn age_in_completed_years() {
        assert_eq!(age("2007-10-10", "2014-10-06"), Value::Int(6));
        assert_eq!(age("2003-04-12", "2014-09-20"), Value::Int(11));
        assert_eq!(age("2014-10-06", "2014-10-06"), Value::Int(0));
    }

    #[test]
    fn integer_division_is_exact_and_zero_divides_to_null() {
        let s = Schema::default();
        assert_eq!(eval_expr(&parse_expr("(2 / 150000) * 100").unwrap(), &s, &[]).unwrap(), Value::Real(2.0 / 150000.0 * 100.0));
        assert_eq!(eval_expr(&parse_expr("1 / 0").unwrap(), &s, &[]).unwrap(), Value::Null);
    }

    #[test]
    fn null_comparisons_are_unknown() {
        let s = Schema::default();
        let ev = |t: &str| eval_expr(&parse_expr(t).unwrap(), &s, &[]).unwrap();
        assert_eq!(ev("null = null"), Value::Null);
        assert_eq!(ev("not (null < 1)"), Value::Null);
        assert_eq!(ev("null < 1 and 1 = 2"), Value::Bool(false));
        assert_eq!(ev("null < 1 or 1 = 1"), Value::Bool(true));
        assert_eq!(ev("2 in (1, null)"), Value::Null);
        assert_eq!(ev("1 in (1, null)"), Value::Bool(true));
    }

    #[test]
    fn type_errors_are_caught_at_bind_time() {
        assert!(matches!(bind(&parse_expr("'a' + 1").unwrap(), &Schema::default()), Err(QueryError::TypeError(_))));
        assert!(matches!(bind(&parse_expr("nope = 1").unwrap(), &schema()), Err(QueryError::UnknownColumn(_))));
        assert!(bind(&parse_expr("d.ADMISSION > birthdate").unwrap(), &schema()).is_ok());
    }
}
