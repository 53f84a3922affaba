use crate::value::{parse_date, parse_datetime, ColumnType, Value};

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::DslError;

/// Words that end an expression or clause and so cannot be bare aliases.
const RESERVED: &[&str] = &[
    "select", "from", "where", "group", "by", "union", "all", "on", "join", "natural", "inner", "cross", "as", "and",
    "or", "not", "is", "in", "null", "set", "values", "of", "get", "order",
];

pub fn parse(text: &str) -> Result<Vec<Statement>, DslError> {
    let mut p = Parser::new(text)?;
    let mut out = Vec::new();
    loop {
        while p.eat_sym(";") {}
        if p.at_end() {
            break;
        }
        let start = p.peek_span().start;
        let kind = p.statement()?;
        let end = p.prev_end();
        out.push(Statement { kind, span: start..end });
        if !p.at_end() && !p.eat_sym(";") {
            return Err(p.error(&["';'"]));
        }
    }
    Ok(out)
}

/// Parses one standalone expression (the pushed-predicate wire form).
pub fn parse_expr(text: &str) -> Result<Expr, DslError> {
    let mut p = Parser::new(text)?;
    let e = p.expr()?;
    if !p.at_end() {
        return Err(p.error(&["end of input"]));
    }
    Ok(e)
}

pub fn parse_query(text: &str) -> Result<Query, DslError> {
    let mut p = Parser::new(text)?;
    let q = p.query()?;
    p.eat_sym(";");
    if !p.at_end() {
        return Err(p.error(&["end of input"]));
    }
    Ok(q)
}

struct Parser<'a> {
    text: &'a str,
    toks: Vec<Token>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Result<Self, DslError> {
        Ok(Parser {
            text,
            toks: tokenize(text)?,
            pos: 0,
        })
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.pos + k).map(|t| &t.tok)
    }

    fn peek_span(&self) -> std::ops::Range<usize> {
        self.toks
            .get(self.pos)
            .map(|t| t.span.clone())
            .unwrap_or(self.text.len()..self.text.len())
    }

    fn prev_end(&self) -> usize {
        if self.pos == 0 {
            0
        } else {
            self.toks[self.pos - 1].span.end
        }
    }

    fn error(&self, expected: &[&str]) -> DslError {
        let found = match self.toks.get(self.pos) {
            Some(t) => format!("{:?}", &self.text[t.span.clone()]),
            None => "end of input".to_string(),
        };
        DslError::Parse {
            position: self.peek_span().start,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found,
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident { text, quoted: false }) if text.eq_ignore_ascii_case(kw))
    }

    fn is_kw_at(&self, k: usize, kw: &str) -> bool {
        matches!(self.peek_at(k), Some(Tok::Ident { text, quoted: false }) if text.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), DslError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.error(&[&kw.to_ascii_uppercase()]))
        }
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Some(Tok::Sym(x)) if *x == s)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), DslError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(self.error(&[&format!("'{s}'")]))
        }
    }

    fn ident(&mut self) -> Result<String, DslError> {
        match self.peek() {
            Some(Tok::Ident { text, quoted }) if *quoted || !is_reserved(text) => {
                let t = text.clone();
                self.pos += 1;
                Ok(t)
            }
            _ => Err(self.error(&["identifier"])),
        }
    }

    fn statement(&mut self) -> Result<StatementKind, DslError> {
        if self.is_kw("create") {
            self.pos += 1;
            if self.eat_kw("table") {
                return self.create_table();
            }
            if self.eat_kw("view") {
                return self.create_view();
            }
            return Err(self.error(&["TABLE", "VIEW"]));
        }
        if self.eat_kw("insert") {
            return self.insert();
        }
        if self.eat_kw("update") {
            return self.update();
        }
        if self.eat_kw("delete") {
            self.expect_kw("from")?;
            let target = self.ident()?;
            let filter = if self.eat_kw("where") { Some(self.expr()?) } else { None };
            return Ok(StatementKind::Delete(Delete { target, filter }));
        }
        if self.is_kw("select") {
            return Ok(StatementKind::Select(self.query()?));
        }
        Err(self.error(&["CREATE", "INSERT", "SELECT", "UPDATE", "DELETE"]))
    }

    fn create_table(&mut self) -> Result<StatementKind, DslError> {
        let name = self.ident()?;
        self.expect_sym("(")?;
        let mut columns = Vec::new();
        let mut primary_key = Vec::new();
        loop {
            if self.is_kw("primary") {
                self.pos += 1;
                self.expect_kw("key")?;
                primary_key = self.ident_list()?;
            } else {
                columns.push(self.column_spec(true)?);
            }
            if !self.eat_sym(",") {
                break;
            }
        }
        self.expect_sym(")")?;
        Ok(StatementKind::CreateTable(CreateTable {
            name,
            columns,
            primary_key,
        }))
    }

    fn ident_list(&mut self) -> Result<Vec<String>, DslError> {
        self.expect_sym("(")?;
        let mut out = vec![self.ident()?];
        while self.eat_sym(",") {
            out.push(self.ident()?);
        }
        self.expect_sym(")")?;
        Ok(out)
    }

    fn column_spec(&mut self, constraints: bool) -> Result<ColumnSpec, DslError> {
        let name = self.ident()?;
        let type_pos = self.pos;
        let type_name = match self.peek() {
            Some(Tok::Ident { text, quoted: false }) => text.clone(),
            _ => return Err(self.error(&["type name"])),
        };
        let Some(ty) = ColumnType::from_sql_name(&type_name) else {
            return Err(self.error(&["type name"]));
        };
        self.pos = type_pos + 1;
        let mut width = None;
        if self.eat_sym("(") {
            match self.peek() {
                Some(Tok::Int(n)) if *n >= 0 && *n <= u32::MAX as i64 => {
                    width = Some(*n as u32);
                    self.pos += 1;
                }
                _ => return Err(self.error(&["integer width"])),
            }
            self.expect_sym(")")?;
        }
        let mut spec = ColumnSpec {
            name,
            ty,
            type_name: type_name.to_ascii_lowercase(),
            width,
            not_null: false,
            primary_key: false,
        };
        if constraints {
            loop {
                if self.is_kw("not") && self.is_kw_at(1, "null") {
                    self.pos += 2;
                    spec.not_null = true;
                } else if self.eat_kw("null") {
                    spec.not_null = false;
                } else if self.is_kw("primary") && self.is_kw_at(1, "key") {
                    self.pos += 2;
                    spec.primary_key = true;
                } else {
                    break;
                }
            }
        }
        Ok(spec)
    }

    fn create_view(&mut self) -> Result<StatementKind, DslError> {
        let name = self.ident()?;
        if self.eat_kw("of") {
            self.expect_sym("(")?;
            let mut columns = vec![self.column_spec(false)?];
            while self.eat_sym(",") {
                columns.push(self.column_spec(false)?);
            }
            self.expect_sym(")")?;
            let uri_type = self.uri_type()?;
            self.expect_kw("as")?;
            self.expect_kw("get")?;
            let url = self.metadata()?;
            return Ok(StatementKind::CreateViewRest(CreateViewRest {
                name,
                columns,
                uri_type,
                url,
            }));
        }
        self.expect_kw("as")?;
        if self.eat_kw("get") {
            let url = self.metadata()?;
            return Ok(StatementKind::CreateViewRest(CreateViewRest {
                name,
                columns: Vec::new(),
                uri_type: None,
                url,
            }));
        }
        let query = self.query()?;
        Ok(StatementKind::CreateViewSelect { name, query })
    }

    fn metadata(&mut self) -> Result<String, DslError> {
        match self.peek() {
            Some(Tok::Str(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.error(&["metadata string"])),
        }
    }

    // [Abbrev_id] '^^' ( [Namespace_id] ':' id | uri )
    fn uri_type(&mut self) -> Result<Option<UriType>, DslError> {
        let abbrev = if matches!(self.peek(), Some(Tok::Ident { .. })) && matches!(self.peek_at(1), Some(Tok::Sym("^^")))
        {
            Some(self.ident()?)
        } else {
            None
        };
        if !self.eat_sym("^^") {
            if abbrev.is_some() {
                return Err(self.error(&["'^^'"]));
            }
            return Ok(None);
        }
        let target = match self.peek() {
            Some(Tok::Str(s)) => {
                let s = s.clone();
                self.pos += 1;
                UriTarget::Uri(s)
            }
            Some(Tok::Sym(":")) => {
                self.pos += 1;
                UriTarget::Named {
                    namespace: None,
                    id: self.ident()?,
                }
            }
            Some(Tok::Ident { .. }) => {
                let ns = self.ident()?;
                self.expect_sym(":")?;
                UriTarget::Named {
                    namespace: Some(ns),
                    id: self.ident()?,
                }
            }
            _ => return Err(self.error(&["uri", "':'", "namespace"])),
        };
        Ok(Some(UriType { abbrev, target }))
    }

    fn insert(&mut self) -> Result<StatementKind, DslError> {
        self.expect_kw("into")?;
        let table = self.ident()?;
        let columns = if self.is_sym("(") { Some(self.ident_list()?) } else { None };
        self.expect_kw("values")?;
        let mut rows = Vec::new();
        loop {
            self.expect_sym("(")?;
            let mut row = vec![self.expr()?];
            while self.eat_sym(",") {
                row.push(self.expr()?);
            }
            self.expect_sym(")")?;
            rows.push(row);
            if !self.eat_sym(",") {
                break;
            }
        }
        Ok(StatementKind::Insert(Insert { table, columns, rows }))
    }

    fn update(&mut self) -> Result<StatementKind, DslError> {
        let target = self.ident()?;
        self.expect_kw("set")?;
        let mut assignments = Vec::new();
        loop {
            let col = self.ident()?;
            self.expect_sym("=")?;
            assignments.push((col, self.expr()?));
            if !self.eat_sym(",") {
                break;
            }
        }
        let filter = if self.eat_kw("where") { Some(self.expr()?) } else { None };
        Ok(StatementKind::Update(Update {
            target,
            assignments,
            filter,
        }))
    }

    fn query(&mut self) -> Result<Query, DslError> {
        let mut left = Query::Select(Box::new(self.select()?));
        while self.eat_kw("union") {
            let all = self.eat_kw("all");
            let right = Query::Select(Box::new(self.select()?));
            left = Query::Union {
                all,
                left: Box::new(left),
                right: Box::new(right),
            };
        }
        Ok(left)
    }

    fn select(&mut self) -> Result<Select, DslError> {
        self.expect_kw("select")?;
        let mut projection = vec![self.select_item()?];
        while self.eat_sym(",") {
            projection.push(self.select_item()?);
        }
        self.expect_kw("from")?;
        let from = self.from_item()?;
        let filter = if self.eat_kw("where") { Some(self.expr()?) } else { None };
        let mut group_by = Vec::new();
        if self.eat_kw("group") {
            self.expect_kw("by")?;
            group_by.push(self.expr()?);
            while self.eat_sym(",") {
                group_by.push(self.expr()?);
            }
        }
        Ok(Select {
            projection,
            from,
            filter,
            group_by,
        })
    }

    fn select_item(&mut self) -> Result<SelectItem, DslError> {
        if self.eat_sym("*") {
            return Ok(SelectItem::Wildcard);
        }
        let expr = self.expr()?;
        let alias = if self.eat_kw("as") {
            Some(self.ident()?)
        } else {
            self.optional_alias()
        };
        Ok(SelectItem::Expr { expr, alias })
    }

    fn optional_alias(&mut self) -> Option<String> {
        match self.peek() {
            Some(Tok::Ident { text, quoted }) if *quoted || !is_reserved(text) => {
                let t = text.clone();
                self.pos += 1;
                Some(t)
            }
            _ => None,
        }
    }

    fn from_item(&mut self) -> Result<FromItem, DslError> {
        let mut left = self.relation()?;
        loop {
            let kind = if self.is_kw("natural") {
                self.pos += 1;
                self.expect_kw("join")?;
                JoinSpec::Natural
            } else if self.is_kw("cross") {
                self.pos += 1;
                self.expect_kw("join")?;
                JoinSpec::Cross
            } else if self.eat_sym(",") {
                JoinSpec::Cross
            } else if self.is_kw("join") || self.is_kw("inner") {
                if self.eat_kw("inner") {
                    self.expect_kw("join")?;
                } else {
                    self.pos += 1;
                }
                let right = self.relation()?;
                self.expect_kw("on")?;
                let cond = self.expr()?;
                left = FromItem::Join {
                    kind: JoinSpec::On(cond),
                    left: Box::new(left),
                    right: Box::new(right),
                };
                continue;
            } else {
                break;
            };
            let right = self.relation()?;
            left = FromItem::Join {
                kind,
                left: Box::new(left),
                right: Box::new(right),
            };
        }
        Ok(left)
    }

    fn relation(&mut self) -> Result<FromItem, DslError> {
        let name = self.ident()?;
        let alias = if self.eat_kw("as") {
            Some(self.ident()?)
        } else {
            self.optional_alias()
        };
        Ok(FromItem::Relation { name, alias })
    }

    pub(crate) fn expr(&mut self) -> Result<Expr, DslError> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<Expr, DslError> {
        let mut left = self.and_expr()?;
        while self.eat_kw("or") {
            let right = self.and_expr()?;
            left = Expr::binary(BinaryOp::Or, left, right);
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> Result<Expr, DslError> {
        let mut left = self.not_expr()?;
        while self.eat_kw("and") {
            let right = self.not_expr()?;
            left = Expr::binary(BinaryOp::And, left, right);
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> Result<Expr, DslError> {
        if self.eat_kw("not") {
            let inner = self.not_expr()?;
            return Ok(Expr::Unary {
                op: UnaryOp::Not,
                expr: Box::new(inner),
            });
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Expr, DslError> {
        let left = self.additive()?;
        let op = match self.peek() {
            Some(Tok::Sym("=")) => Some(BinaryOp::Eq),
            Some(Tok::Sym("<>")) | Some(Tok::Sym("!=")) => Some(BinaryOp::NotEq),
            Some(Tok::Sym("<")) => Some(BinaryOp::Lt),
            Some(Tok::Sym("<=")) => Some(BinaryOp::LtEq),
            Some(Tok::Sym(">")) => Some(BinaryOp::Gt),
            Some(Tok::Sym(">=")) => Some(BinaryOp::GtEq),
            _ => None,
        };
        if let Some(op) = op {
            self.pos += 1;
            let right = self.additive()?;
            return Ok(Expr::binary(op, left, right));
        }
        if self.eat_kw("is") {
            let negated = self.eat_kw("not");
            self.expect_kw("null")?;
            return Ok(Expr::IsNull {
                expr: Box::new(left),
                negated,
            });
        }
        let negated = if self.is_kw("not") && self.is_kw_at(1, "in") {
            self.pos += 1;
            true
        } else {
            false
        };
        if self.eat_kw("in") {
            self.expect_sym("(")?;
            let mut list = vec![self.expr()?];
            while self.eat_sym(",") {
                list.push(self.expr()?);
            }
            self.expect_sym(")")?;
            return Ok(Expr::InList {
                expr: Box::new(left),
                list,
                negated,
            });
        }
        Ok(left)
    }

    fn additive(&mut self) -> Result<Expr, DslError> {
        let mut left = self.multiplicative()?;
        loop {
            let op = if self.eat_sym("+") {
                BinaryOp::Add
            } else if self.eat_sym("-") {
                BinaryOp::Sub
            } else {
                break;
            };
            let right = self.multiplicative()?;
            left = Expr::binary(op, left, right);
        }
        Ok(left)
    }

    fn multiplicative(&mut self) -> Result<Expr, DslError> {
        let mut left = self.unary()?;
        loop {
            let op = if self.eat_sym("*") {
                BinaryOp::Mul
            } else if self.eat_sym("/") {
                BinaryOp::Div
            } else {
                break;
            };
            let right = self.unary()?;
            left = Expr::binary(op, left, right);
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<Expr, DslError> {
        if self.eat_sym("-") {
            // Fold the sign into numeric literals so `-1` prints and reparses
            // as the same literal.
            match self.peek() {
                Some(Tok::Int(n)) => {
                    let n = *n;
                    self.pos += 1;
                    return Ok(Expr::Literal(Value::Int(-n)));
                }
                Some(Tok::Real(r)) => {
                    let r = *r;
                    self.pos += 1;
                    return Ok(Expr::Literal(Value::Real(-r)));
                }
                _ => {}
            }
            let inner = self.unary()?;
            return Ok(Expr::Unary {
                op: UnaryOp::Neg,
                expr: Box::new(inner),
            });
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, DslError> {
        let span = self.peek_span();
        let Some(tok) = self.peek().cloned() else {
            return Err(self.error(&["expression"]));
        };
        match tok {
            Tok::Int(n) => {
                self.pos += 1;
                Ok(Expr::Literal(Value::Int(n)))
            }
            Tok::Real(r) => {
                self.pos += 1;
                Ok(Expr::Literal(Value::Real(r)))
            }
            Tok::Str(s) => {
                self.pos += 1;
                Ok(Expr::Literal(Value::Str(s)))
            }
            Tok::Param(n) => {
                self.pos += 1;
                Ok(Expr::Ordinal(n))
            }
            Tok::Typed { type_name, text } => {
                let v = typed_literal(&type_name, &text).ok_or_else(|| DslError::Parse {
                    position: span.start,
                    expected: vec![format!("valid {type_name} literal")],
                    found: format!("{text:?}"),
                })?;
                self.pos += 1;
                Ok(Expr::Literal(v))
            }
            Tok::Sym("(") => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Ident { text, quoted: false } => self.word(&text, span),
            Tok::Ident { text, quoted: true } => {
                self.pos += 1;
                self.column_tail(text)
            }
            _ => Err(self.error(&["expression"])),
        }
    }

    fn word(&mut self, text: &str, span: std::ops::Range<usize>) -> Result<Expr, DslError> {
        let lower = text.to_ascii_lowercase();
        match lower.as_str() {
            "null" => {
                self.pos += 1;
                return Ok(Expr::Literal(Value::Null));
            }
            "true" | "false" => {
                self.pos += 1;
                return Ok(Expr::Literal(Value::Bool(lower == "true")));
            }
            "date" | "datetime" | "timestamp" if matches!(self.peek_at(1), Some(Tok::Str(_))) => {
                let Some(Tok::Str(s)) = self.peek_at(1).cloned() else { unreachable!() };
                let v = typed_literal(&lower, &s).ok_or_else(|| DslError::Parse {
                    position: span.start,
                    expected: vec![format!("valid {lower} literal")],
                    found: format!("{s:?}"),
                })?;
                self.pos += 2;
                return Ok(Expr::Literal(v));
            }
            "extract" if matches!(self.peek_at(1), Some(Tok::Sym("("))) => {
                self.pos += 2;
                let field = match self.peek() {
                    Some(Tok::Ident { text, .. }) => match text.to_ascii_lowercase().as_str() {
                        "year" => DateField::Year,
                        "month" => DateField::Month,
                        "day" => DateField::Day,
                        _ => return Err(self.error(&["YEAR", "MONTH", "DAY"])),
                    },
                    _ => return Err(self.error(&["YEAR", "MONTH", "DAY"])),
                };
                self.pos += 1;
                self.expect_kw("from")?;
                let inner = self.expr()?;
                self.expect_sym(")")?;
                return Ok(Expr::Extract {
                    field,
                    expr: Box::new(inner),
                });
            }
            "count" | "sum" | "min" | "max" if matches!(self.peek_at(1), Some(Tok::Sym("("))) => {
                self.pos += 2;
                if lower == "count" && self.eat_sym("*") {
                    self.expect_sym(")")?;
                    return Ok(Expr::Aggregate {
                        func: AggFunc::CountStar,
                        arg: None,
                    });
                }
                let arg = self.expr()?;
                self.expect_sym(")")?;
                let func = match lower.as_str() {
                    "count" => AggFunc::Count,
                    "sum" => AggFunc::Sum,
                    "min" => AggFunc::Min,
                    _ => AggFunc::Max,
                };
                return Ok(Expr::Aggregate {
                    func,
                    arg: Some(Box::new(arg)),
                });
            }
            _ => {}
        }
        if is_reserved(text) {
            return Err(self.error(&["expression"]));
        }
        self.pos += 1;
        self.column_tail(text.to_string())
    }

    fn column_tail(&mut self, first: String) -> Result<Expr, DslError> {
        if self.eat_sym(".") {
            let name = self.ident()?;
            return Ok(Expr::Column(ColumnRef {
                qualifier: Some(first),
                name,
            }));
        }
        Ok(Expr::Column(ColumnRef {
            qualifier: None,
            name: first,
        }))
    }
}

fn is_reserved(word: &str) -> bool {
    RESERVED.iter().any(|r| r.eq_ignore_ascii_case(word))
}

fn typed_literal(type_name: &str, text: &str) -> Option<Value> {
    match type_name {
        "date" => parse_date(text).map(Value::Date),
        _ => parse_datetime(text).map(Value::DateTime),
    }
}
