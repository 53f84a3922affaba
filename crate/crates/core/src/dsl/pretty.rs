//! Canonical text form. Binary operators are fully parenthesized so the
//! output reparses to the same tree.

use std::fmt::{self, Display, Formatter};

use crate::value::Value;

use super::ast::*;

pub fn ident(name: &str) -> String {
    let bare = !name.is_empty()
        && name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
        && !name.bytes().all(|b| b.is_ascii_digit())
        && !is_special(name);
    if bare {
        name.to_string()
    } else {
        format!("\"{name}\"")
    }
}

fn is_special(name: &str) -> bool {
    const WORDS: &[&str] = &[
        "select", "from", "where", "group", "by", "union", "all", "on", "join", "natural", "inner", "cross", "as",
        "and", "or", "not", "is", "in", "null", "set", "values", "of", "get", "order", "true", "false",
    ];
    WORDS.iter().any(|w| w.eq_ignore_ascii_case(name))
}

pub fn literal(v: &Value) -> String {
    match v {
        Value::Null => "null".into(),
        Value::Int(i) => i.to_string(),
        Value::Real(r) => {
            let s = r.to_string();
            if s.contains('.') || !r.is_finite() {
                s
            } else {
                format!("{s}.0")
            }
        }
        Value::Str(s) => format!("'{}'", s.replace('\'', "''")),
        Value::Date(d) => format!("date'{}'", d.format("%Y-%m-%d")),
        Value::DateTime(dt) => format!("timestamp'{}'", dt.format("%Y-%m-%d %H:%M:%S")),
        Value::Interval(iv) => format!("'{}'", iv.to_iso()),
        Value::Bool(b) => b.to_string(),
    }
}

impl Display for ColumnRef {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match &self.qualifier {
            Some(q) => write!(f, "{}.{}", ident(q), ident(&self.name)),
            None => f.write_str(&ident(&self.name)),
        }
    }
}

impl Display for Expr {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Literal(v) => f.write_str(&literal(v)),
            Expr::Column(c) => write!(f, "{c}"),
            Expr::Ordinal(n) => write!(f, "${n}"),
            Expr::Unary { op: UnaryOp::Neg, expr } => write!(f, "-({expr})"),
            Expr::Unary { op: UnaryOp::Not, expr } => write!(f, "not ({expr})"),
            Expr::Binary { op, left, right } => write!(f, "({left} {} {right})", op.symbol()),
            Expr::IsNull { expr, negated } => {
                write!(f, "({expr} is {}null)", if *negated { "not " } else { "" })
            }
            Expr::InList { expr, list, negated } => {
                write!(f, "({expr} {}in (", if *negated { "not " } else { "" })?;
                comma(f, list)?;
                f.write_str("))")
            }
            Expr::Extract { field, expr } => write!(f, "extract({} from {expr})", field.name()),
            Expr::Aggregate { func: AggFunc::CountStar, .. } => f.write_str("count(*)"),
            Expr::Aggregate { func, arg } => match arg {
                Some(a) => write!(f, "{}({a})", func.name()),
                None => write!(f, "{}(*)", func.name()),
            },
        }
    }
}

fn comma<T: Display>(f: &mut Formatter<'_>, items: &[T]) -> fmt::Result {
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{item}")?;
    }
    Ok(())
}

impl Display for SelectItem {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            SelectItem::Wildcard => f.write_str("*"),
            SelectItem::Expr { expr, alias: Some(a) } => write!(f, "{expr} as {}", ident(a)),
            SelectItem::Expr { expr, alias: None } => write!(f, "{expr}"),
        }
    }
}

impl Display for FromItem {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            FromItem::Relation { name, alias: Some(a) } => write!(f, "{} as {}", ident(name), ident(a)),
            FromItem::Relation { name, alias: None } => f.write_str(&ident(name)),
            FromItem::Join { kind, left, right } => match kind {
                JoinSpec::Natural => write!(f, "{left} natural join {right}"),
                JoinSpec::Cross => write!(f, "{left} cross join {right}"),
                JoinSpec::On(e) => write!(f, "{left} join {right} on {e}"),
            },
        }
    }
}

impl Display for Select {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        f.write_str("select ")?;
        comma(f, &self.projection)?;
        write!(f, " from {}", self.from)?;
        if let Some(w) = &self.filter {
            write!(f, " where {w}")?;
        }
        if !self.group_by.is_empty() {
            f.write_str(" group by ")?;
            comma(f, &self.group_by)?;
        }
        Ok(())
    }
}

impl Display for Query {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Query::Select(s) => write!(f, "{s}"),
            Query::Union { all, left, right } => {
                write!(f, "{left} union {}{right}", if *all { "all " } else { "" })
            }
        }
    }
}

impl Display for ColumnSpec {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", ident(&self.name), self.type_name)?;
        if let Some(w) = self.width {
            write!(f, "({w})")?;
        }
        if self.not_null {
            f.write_str(" not null")?;
        }
        if self.primary_key {
            f.write_str(" primary key")?;
        }
        Ok(())
    }
}

impl Display for UriType {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        if let Some(a) = &self.abbrev {
            f.write_str(&ident(a))?;
        }
        f.write_str("^^")?;
        match &self.target {
            UriTarget::Uri(u) => f.write_str(&literal(&Value::Str(u.clone()))),
            UriTarget::Named { namespace, id } => {
                if let Some(ns) = namespace {
                    f.write_str(&ident(ns))?;
                }
                write!(f, ":{}", ident(id))
            }
        }
    }
}

impl Display for StatementKind {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            StatementKind::CreateTable(t) => {
                write!(f, "create table {} (", ident(&t.name))?;
                comma(f, &t.columns)?;
                if !t.primary_key.is_empty() {
                    let names: Vec<String> = t.primary_key.iter().map(|k| ident(k)).collect();
                    write!(f, ", primary key ({})", names.join(", "))?;
                }
                f.write_str(")")
            }
            StatementKind::Insert(i) => {
                write!(f, "insert into {}", ident(&i.table))?;
                if let Some(cols) = &i.columns {
                    let names: Vec<String> = cols.iter().map(|k| ident(k)).collect();
                    write!(f, " ({})", names.join(", "))?;
                }
                f.write_str(" values ")?;
                for (n, row) in i.rows.iter().enumerate() {
                    if n > 0 {
                        f.write_str(", ")?;
                    }
                    f.write_str("(")?;
                    comma(f, row)?;
                    f.write_str(")")?;
                }
                Ok(())
            }
            StatementKind::CreateViewSelect { name, query } => write!(f, "create view {} as {query}", ident(name)),
            StatementKind::CreateViewRest(v) => {
                write!(f, "create view {}", ident(&v.name))?;
                if !v.columns.is_empty() {
                    f.write_str(" of (")?;
                    comma(f, &v.columns)?;
                    f.write_str(")")?;
                }
                if let Some(u) = &v.uri_type {
                    write!(f, " {u}")?;
                }
                write!(f, " as get {}", literal(&Value::Str(v.url.clone())))
            }
            StatementKind::Select(q) => write!(f, "{q}"),
            StatementKind::Update(u) => {
                write!(f, "update {} set ", ident(&u.target))?;
                for (n, (c, e)) in u.assignments.iter().enumerate() {
                    if n > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{} = {e}", ident(c))?;
                }
                if let Some(w) = &u.filter {
                    write!(f, " where {w}")?;
                }
                Ok(())
            }
            StatementKind::Delete(d) => {
                write!(f, "delete from {}", ident(&d.target))?;
                if let Some(w) = &d.filter {
                    write!(f, " where {w}")?;
                }
                Ok(())
            }
        }
    }
}

impl Display for Statement {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind)
    }
}

/// Statements joined by `;\n`.
pub fn script(stmts: &[Statement]) -> String {
    stmts.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(";\n")
}

#[cfg(test)]
mod tests {
    use super::super::parser::{parse, parse_expr};

    #[test]
    fn expression_round_trip() {
        for src in [
            "extract(year from (admission - birthdate)) < 10",
            "(patients / under10) * 100",
            "a is not null and b not in (1, 2, -3)",
            "H.rCode = -(x) or not (y = 'it''s')",
            "$2 < 10.5 and d = date'2014-10-06'",
        ] {
            let e = parse_expr(src).unwrap();
            assert_eq!(parse_expr(&e.to_string()).unwrap(), e, "{src}");
        }
    }

    #[test]
    fn reserved_column_names_are_quoted() {
        let stmts = parse("create table t (\"select\" int, \"null\" int)").unwrap();
        let text = stmts[0].to_string();
        assert_eq!(parse(&text).unwrap()[0].kind, stmts[0].kind);
    }
}
