//! JSON bodies exchanged between coordinator and contractor nodes.

use serde_json::{json, Map, Value as J};

use crate::engine::ViewWrite;
use crate::query::ResultSet;
use crate::value::{ColumnType, Value};

use super::WireError;

fn bad(msg: impl Into<String>) -> WireError {
    WireError::BadBody(msg.into())
}

/// `{"columns":[{"name","type"}],"rows":[[...]],"rowValidators":[...]}`;
/// `keyColumns` is present when the view accepts writes.
pub fn result_to_json(rs: &ResultSet, key_columns: Option<&[String]>) -> J {
    let mut obj = Map::new();
    obj.insert(
        "columns".into(),
        rs.columns
            .iter()
            .map(|(n, t)| json!({"name": n, "type": t.sql_name()}))
            .collect(),
    );
    obj.insert(
        "rows".into(),
        rs.rows
            .iter()
            .map(|r| J::Array(r.iter().map(Value::to_json).collect()))
            .collect(),
    );
    if let Some(v) = &rs.per_row_validators {
        obj.insert("rowValidators".into(), v.iter().cloned().map(J::String).collect());
    }
    if let Some(k) = key_columns {
        obj.insert("keyColumns".into(), k.iter().cloned().map(J::String).collect());
    }
    J::Object(obj)
}

/// A decoded result plus the optional key column names.
pub struct WireResult {
    pub result: ResultSet,
    pub key_columns: Option<Vec<String>>,
}

fn str_list(j: Option<&J>, what: &str) -> Result<Option<Vec<String>>, WireError> {
    match j {
        None | Some(J::Null) => Ok(None),
        Some(J::Array(a)) => a
            .iter()
            .map(|s| s.as_str().map(str::to_string).ok_or_else(|| bad(format!("{what} entry is not a string"))))
            .collect::<Result<Vec<_>, _>>()
            .map(Some),
        _ => Err(bad(format!("{what} is not a list"))),
    }
}

/// Decodes a result body, retyping values against `declared` when given
/// (names are taken from `declared`; arity must match).
pub fn result_from_json(body: &J, declared: Option<&[(String, ColumnType)]>) -> Result<WireResult, WireError> {
    let cols = body
        .get("columns")
        .and_then(J::as_array)
        .ok_or_else(|| bad("missing columns"))?;
    let mut remote = Vec::new();
    for c in cols {
        let name = c.get("name").and_then(J::as_str).ok_or_else(|| bad("column without name"))?;
        let ty = c
            .get("type")
            .and_then(J::as_str)
            .and_then(ColumnType::from_sql_name)
            .ok_or_else(|| bad(format!("column {name} has no known type")))?;
        remote.push((name.to_string(), ty));
    }
    let columns = match declared {
        Some(d) if !d.is_empty() => {
            if d.len() != remote.len() {
                return Err(bad(format!("{} columns returned, {} declared", remote.len(), d.len())));
            }
            d.to_vec()
        }
        _ => remote,
    };
    let rows_j = body.get("rows").and_then(J::as_array).ok_or_else(|| bad("missing rows"))?;
    let mut rows = Vec::with_capacity(rows_j.len());
    for r in rows_j {
        let cells = r.as_array().ok_or_else(|| bad("row is not a list"))?;
        if cells.len() != columns.len() {
            return Err(bad("row arity differs from columns"));
        }
        let row = cells
            .iter()
            .zip(&columns)
            .map(|(c, (n, t))| Value::from_json(c, *t).ok_or_else(|| bad(format!("{c} is not a valid {t} for {n}"))))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    let per_row_validators = str_list(body.get("rowValidators"), "rowValidators")?;
    if let Some(v) = &per_row_validators {
        if v.len() != rows.len() {
            return Err(bad("rowValidators length differs from rows"));
        }
    }
    Ok(WireResult {
        result: ResultSet {
            columns,
            rows,
            per_row_validators,
        },
        key_columns: str_list(body.get("keyColumns"), "keyColumns")?,
    })
}

fn values_to_json(values: &[(String, Value)]) -> J {
    J::Object(values.iter().map(|(k, v)| (k.clone(), v.to_json())).collect())
}

/// Column/value pairs of a body object, typed by `type_of`.
pub fn values_from_json(
    body: &J,
    type_of: impl Fn(&str) -> Option<ColumnType>,
) -> Result<Vec<(String, Value)>, WireError> {
    let obj = body.as_object().ok_or_else(|| bad("values must be an object"))?;
    obj.iter()
        .map(|(k, v)| {
            let ty = type_of(k).ok_or_else(|| bad(format!("unknown column {k}")))?;
            let val = Value::from_json(v, ty).ok_or_else(|| bad(format!("{v} is not a valid {ty} for {k}")))?;
            Ok((k.clone(), val))
        })
        .collect()
}

pub fn key_to_json(key: &[Value]) -> J {
    J::Array(key.iter().map(Value::to_json).collect())
}

/// Key values typed by the view's key column types.
pub fn key_from_json(j: &J, types: &[ColumnType]) -> Result<Vec<Value>, WireError> {
    let a = j.as_array().ok_or_else(|| bad("key must be a list"))?;
    if a.len() != types.len() {
        return Err(bad(format!("key has {} parts, expected {}", a.len(), types.len())));
    }
    a.iter()
        .zip(types)
        .map(|(v, t)| Value::from_json(v, *t).ok_or_else(|| bad(format!("{v} is not a valid {t} key"))))
        .collect()
}

/// Renders a key for a URL path segment: parts joined by ",".
pub fn key_to_path(key: &[Value]) -> String {
    let text = key
        .iter()
        .map(|v| match v {
            Value::Str(s) => s.clone(),
            other => other.to_json().to_string().trim_matches('"').to_string(),
        })
        .collect::<Vec<_>>()
        .join(",");
    url::form_urlencoded::byte_serialize(text.as_bytes()).collect()
}

pub fn key_from_path(segment: &str, types: &[ColumnType]) -> Result<Vec<Value>, WireError> {
    let text: String = url::form_urlencoded::parse(format!("k={segment}").as_bytes())
        .next()
        .map(|(_, v)| v.into_owned())
        .unwrap_or_default();
    let parts: Vec<&str> = if types.len() == 1 { vec![text.as_str()] } else { text.split(',').collect() };
    if parts.len() != types.len() {
        return Err(bad(format!("key {text} has {} parts, expected {}", parts.len(), types.len())));
    }
    parts
        .iter()
        .zip(types)
        .map(|(p, t)| Value::from_json(&J::String(p.to_string()), *t).ok_or_else(|| bad(format!("{p} is not a valid {t} key"))))
        .collect()
}

/// `{"view":..,"op":"insert"|"update"|"delete","key":[..],"values":{..}}`
pub fn write_to_json(view: &str, w: &ViewWrite) -> J {
    match w {
        ViewWrite::Insert { values } => json!({"view": view, "op": "insert", "values": values_to_json(values)}),
        ViewWrite::Update { key, values } => {
            json!({"view": view, "op": "update", "key": key_to_json(key), "values": values_to_json(values)})
        }
        ViewWrite::Delete { key } => json!({"view": view, "op": "delete", "key": key_to_json(key)}),
    }
}

pub fn write_values_json(values: &[(String, Value)]) -> J {
    values_to_json(values)
}
