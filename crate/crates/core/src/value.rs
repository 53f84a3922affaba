//! Scalar values, column types and calendar intervals.

use std::cmp::Ordering;
use std::fmt;

use chrono::{Datelike, NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ColumnType {
    Int,
    /// Result of non-integral arithmetic (integer division yields this).
    Real,
    /// Variable-length string.
    Char,
    Date,
    DateTime,
    Interval,
    Bool,
}

impl ColumnType {
    pub fn sql_name(self) -> &'static str {
        match self {
            ColumnType::Int => "int",
            ColumnType::Real => "real",
            ColumnType::Char => "char",
            ColumnType::Date => "date",
            ColumnType::DateTime => "datetime",
            ColumnType::Interval => "interval",
            ColumnType::Bool => "boolean",
        }
    }

    /// Maps a SQL type name (case-insensitive) onto a column type.
    pub fn from_sql_name(name: &str) -> Option<ColumnType> {
        let lower = name.to_ascii_lowercase();
        Some(match lower.as_str() {
            "int" | "integer" | "bigint" | "smallint" => ColumnType::Int,
            "real" | "double" | "float" | "numeric" | "decimal" => ColumnType::Real,
            "char" | "varchar" | "text" | "string" => ColumnType::Char,
            "date" => ColumnType::Date,
            "datetime" | "timestamp" => ColumnType::DateTime,
            "interval" => ColumnType::Interval,
            "boolean" | "bool" => ColumnType::Bool,
            _ => return None,
        })
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, ColumnType::Int | ColumnType::Real)
    }

    pub fn is_temporal(self) -> bool {
        matches!(self, ColumnType::Date | ColumnType::DateTime)
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.sql_name())
    }
}

/// Signed calendar interval. All non-zero components share one sign;
/// `months` stays within -11..=11 and `seconds` within one day.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Interval {
    pub years: i32,
    pub months: i32,
    pub days: i32,
    pub seconds: i64,
}

impl Interval {
    pub const ZERO: Interval = Interval {
        years: 0,
        months: 0,
        days: 0,
        seconds: 0,
    };

    /// Calendar distance `to - from`, borrowing days from the month that
    /// precedes `to`'s month.
    pub fn between(from: NaiveDateTime, to: NaiveDateTime) -> Interval {
        if to < from {
            return Interval::between(to, from).negate();
        }
        let mut years = to.year() - from.year();
        let mut months = to.month() as i32 - from.month() as i32;
        let mut days = to.day() as i32 - from.day() as i32;
        let mut seconds =
            i64::from(to.num_seconds_from_midnight()) - i64::from(from.num_seconds_from_midnight());
        if seconds < 0 {
            seconds += 86_400;
            days -= 1;
        }
        if days < 0 {
            let (y, m) = if to.month() == 1 {
                (to.year() - 1, 12)
            } else {
                (to.year(), to.month() - 1)
            };
            days += days_in_month(y, m) as i32;
            months -= 1;
        }
        if months < 0 {
            months += 12;
            years -= 1;
        }
        Interval {
            years,
            months,
            days,
            seconds,
        }
    }

    pub fn negate(self) -> Interval {
        Interval {
            years: -self.years,
            months: -self.months,
            days: -self.days,
            seconds: -self.seconds,
        }
    }

    pub fn is_negative(&self) -> bool {
        self.years < 0 || self.months < 0 || self.days < 0 || self.seconds < 0
    }

    /// Completed years, rounded towards negative infinity.
    pub fn whole_years(&self) -> i64 {
        let years = i64::from(self.years);
        if self.is_negative() && (self.months != 0 || self.days != 0 || self.seconds != 0) {
            years - 1
        } else {
            years
        }
    }

    /// ISO-8601 style rendering, e.g. `P6Y11M26DT0S` or `-P1Y0M0DT0S`.
    pub fn to_iso(&self) -> String {
        let abs = if self.is_negative() { self.negate() } else { *self };
        format!(
            "{}P{}Y{}M{}DT{}S",
            if self.is_negative() { "-" } else { "" },
            abs.years,
            abs.months,
            abs.days,
            abs.seconds
        )
    }

    pub fn parse_iso(text: &str) -> Option<Interval> {
        let (negative, rest) = match text.strip_prefix('-') {
            Some(r) => (true, r),
            None => (false, text),
        };
        let rest = rest.strip_prefix('P')?;
        let (ymd, secs) = rest.split_once('T')?;
        let seconds: i64 = secs.strip_suffix('S')?.parse().ok()?;
        let (years, rest) = ymd.split_once('Y')?;
        let (months, rest) = rest.split_once('M')?;
        let days = rest.strip_suffix('D')?;
        let iv = Interval {
            years: years.parse().ok()?,
            months: months.parse().ok()?,
            days: days.parse().ok()?,
            seconds,
        };
        Some(if negative { iv.negate() } else { iv })
    }
}

fn days_in_month(year: i32, month: u32) -> u32 {
    let (ny, nm) = if month == 12 {
        (year + 1, 1)
    } else {
        (year, month + 1)
    };
    let first_next = NaiveDate::from_ymd_opt(ny, nm, 1).expect("valid month start");
    first_next.pred_opt().expect("previous day exists").day()
}

#[derive(Clone, Debug)]
pub enum Value {
    Null,
    Int(i64),
    Real(f64),
    Str(String),
    Date(NaiveDate),
    DateTime(NaiveDateTime),
    Interval(Interval),
    Bool(bool),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn column_type(&self) -> Option<ColumnType> {
        Some(match self {
            Value::Null => return None,
            Value::Int(_) => ColumnType::Int,
            Value::Real(_) => ColumnType::Real,
            Value::Str(_) => ColumnType::Char,
            Value::Date(_) => ColumnType::Date,
            Value::DateTime(_) => ColumnType::DateTime,
            Value::Interval(_) => ColumnType::Interval,
            Value::Bool(_) => ColumnType::Bool,
        })
    }

    /// Datetime view of a temporal value (dates map to midnight).
    pub fn as_datetime(&self) -> Option<NaiveDateTime> {
        match self {
            Value::Date(d) => Some(d.and_time(NaiveTime::MIN)),
            Value::DateTime(dt) => Some(*dt),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    /// Converts the value to `ty` where the conversion is lossless or a
    /// conventional widening/narrowing (datetime to date keeps the day).
    pub fn coerce(&self, ty: ColumnType) -> Option<Value> {
        Some(match (self, ty) {
            (Value::Null, _) => Value::Null,
            (Value::Int(i), ColumnType::Int) => Value::Int(*i),
            (Value::Int(i), ColumnType::Real) => Value::Real(*i as f64),
            (Value::Real(r), ColumnType::Real) => Value::Real(*r),
            (Value::Real(r), ColumnType::Int) if r.fract() == 0.0 => Value::Int(*r as i64),
            (Value::Str(s), ColumnType::Char) => Value::Str(s.clone()),
            (Value::Str(s), ColumnType::Date) => Value::Date(parse_date(s)?),
            (Value::Str(s), ColumnType::DateTime) => Value::DateTime(parse_datetime(s)?),
            (Value::Str(s), ColumnType::Interval) => Value::Interval(Interval::parse_iso(s)?),
            (Value::Date(d), ColumnType::Date) => Value::Date(*d),
            (Value::Date(d), ColumnType::DateTime) => Value::DateTime(d.and_time(NaiveTime::MIN)),
            (Value::DateTime(dt), ColumnType::DateTime) => Value::DateTime(*dt),
            (Value::DateTime(dt), ColumnType::Date) => Value::Date(dt.date()),
            (Value::Interval(iv), ColumnType::Interval) => Value::Interval(*iv),
            (Value::Bool(b), ColumnType::Bool) => Value::Bool(*b),
            (v, ColumnType::Char) => Value::Str(v.to_string()),
            _ => return None,
        })
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Bool(_) => 1,
            Value::Int(_) | Value::Real(_) => 2,
            Value::Str(_) => 3,
            Value::Date(_) | Value::DateTime(_) => 4,
            Value::Interval(_) => 5,
        }
    }

    /// SQL comparison: `None` when either side is null or the types are
    /// incomparable.
    pub fn sql_cmp(&self, other: &Value) -> Option<Ordering> {
        if self.is_null() || other.is_null() || self.rank() != other.rank() {
            return None;
        }
        Some(self.cmp(other))
    }

    /// JSON encoding used on the wire: dates travel as ISO-8601 strings.
    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::Value as J;
        match self {
            Value::Null => J::Null,
            Value::Int(i) => J::from(*i),
            Value::Real(r) => serde_json::Number::from_f64(*r).map(J::Number).unwrap_or(J::Null),
            Value::Str(s) => J::String(s.clone()),
            Value::Date(d) => J::String(d.format("%Y-%m-%d").to_string()),
            Value::DateTime(dt) => J::String(dt.format("%Y-%m-%dT%H:%M:%S").to_string()),
            Value::Interval(iv) => J::String(iv.to_iso()),
            Value::Bool(b) => J::Bool(*b),
        }
    }

    /// Decodes a wire scalar against the declared column type.
    pub fn from_json(json: &serde_json::Value, ty: ColumnType) -> Option<Value> {
        use serde_json::Value as J;
        match json {
            J::Null => Some(Value::Null),
            J::Bool(b) => Value::Bool(*b).coerce(ty),
            J::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Value::Int(i).coerce(ty)
                } else {
                    Value::Real(n.as_f64()?).coerce(ty)
                }
            }
            J::String(s) => match ty {
                ColumnType::Int => s.trim().parse().ok().map(Value::Int),
                ColumnType::Real => s.trim().parse().ok().map(Value::Real),
                _ => Value::Str(s.clone()).coerce(ty),
            },
            _ => None,
        }
    }
}

pub fn parse_date(text: &str) -> Option<NaiveDate> {
    let text = text.trim();
    NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .ok()
        .or_else(|| parse_datetime(text).map(|dt| dt.date()))
}

pub fn parse_datetime(text: &str) -> Option<NaiveDateTime> {
    let text = text.trim();
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(text, fmt) {
            return Some(dt);
        }
    }
    NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .ok()
        .map(|d| d.and_time(NaiveTime::MIN))
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Total order used for keys and grouping: nulls first, then by type family.
impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Null, Value::Null) => Ordering::Equal,
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Real(a), Value::Real(b)) => a.total_cmp(b),
            (Value::Int(a), Value::Real(b)) => (*a as f64).total_cmp(b),
            (Value::Real(a), Value::Int(b)) => a.total_cmp(&(*b as f64)),
            (Value::Str(a), Value::Str(b)) => a.cmp(b),
            (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
            (Value::Interval(a), Value::Interval(b)) => a.cmp(b),
            (a, b) if a.rank() == 4 && b.rank() == 4 => a.as_datetime().cmp(&b.as_datetime()),
            (a, b) => a.rank().cmp(&b.rank()),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("null"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Real(r) => write!(f, "{r}"),
            Value::Str(s) => f.write_str(s),
            Value::Date(d) => write!(f, "{}", d.format("%Y-%m-%d")),
            Value::DateTime(dt) => write!(f, "{}", dt.format("%Y-%m-%d %H:%M:%S")),
            Value::Interval(iv) => f.write_str(&iv.to_iso()),
            Value::Bool(b) => write!(f, "{b}"),
        }
    }
}
