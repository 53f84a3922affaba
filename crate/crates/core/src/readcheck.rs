//! readCheck validators: computation over query plans, the string forms, and
//! validation against committed state.
//!
//! A vector holds three kinds of entries. A row stamp is the [`Rvv`] of one
//! base row that was selected by an explicit key. A table stamp watches a
//! whole table and is fresh while the table's last change sits at or before
//! `as_of`. An absent entry marks a contribution hidden by aggregation and
//! never fails on its own.
//!
//! Wire grammar:
//!
//! ```text
//! rvv      := name ":" digits ":" digits
//! etag     := name "|" digits "|" "[" pair {"," pair} "]"   pair := digits "-" digits
//! combined := item {";" item}                                item := rvv | etag
//! ```

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::query::plan::QueryPlan;
use crate::store::{parse_digits, valid_name, Rvv, Snapshot, TableId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReadCheckError {
    #[error("malformed validator {0:?}: {1}")]
    MalformedValidator(String, String),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ReadCheckEntry {
    Row(Rvv),
    Table { db: String, table_id: TableId, as_of: u64 },
    Absent(String),
}

impl ReadCheckEntry {
    pub fn db(&self) -> &str {
        match self {
            ReadCheckEntry::Row(r) => &r.db,
            ReadCheckEntry::Table { db, .. } | ReadCheckEntry::Absent(db) => db,
        }
    }

    fn same_target(&self, other: &ReadCheckEntry) -> bool {
        match (self, other) {
            (ReadCheckEntry::Row(a), ReadCheckEntry::Row(b)) => a == b,
            (
                ReadCheckEntry::Table { db: a, table_id: x, .. },
                ReadCheckEntry::Table { db: b, table_id: y, .. },
            ) => a == b && x == y,
            (ReadCheckEntry::Absent(a), ReadCheckEntry::Absent(b)) => a == b,
            _ => false,
        }
    }

    /// Checks this entry alone against the committed state of its database.
    pub fn is_fresh(&self, snap: &Snapshot) -> bool {
        if self.db() != snap.db_name {
            return false;
        }
        match self {
            ReadCheckEntry::Row(rvv) => snap
                .locate(rvv.log_position)
                .map(|(_, row)| row.rvv == *rvv)
                .unwrap_or(false),
            ReadCheckEntry::Table { table_id, as_of, .. } => snap
                .table(*table_id)
                .map(|t| t.stamp.log_position <= *as_of)
                .unwrap_or(false),
            ReadCheckEntry::Absent(_) => true,
        }
    }
}

impl fmt::Display for ReadCheckEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReadCheckEntry::Row(rvv) => write!(f, "{rvv}"),
            ReadCheckEntry::Table { db, table_id, as_of } => write!(f, "{db}|{as_of}|[{table_id}-0]"),
            ReadCheckEntry::Absent(_) => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Freshness {
    Fresh,
    Stale(Vec<ReadCheckEntry>),
}

impl Freshness {
    pub fn is_fresh(&self) -> bool {
        matches!(self, Freshness::Fresh)
    }
}

/// Ordered, duplicate-free list of validator entries.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct ReadCheckVector {
    entries: Vec<ReadCheckEntry>,
}

impl ReadCheckVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = ReadCheckEntry>) -> Self {
        let mut v = Self::new();
        for e in entries {
            v.push(e);
        }
        v
    }

    pub fn entries(&self) -> &[ReadCheckEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends an entry, collapsing it into an existing entry for the same
    /// row or table. Duplicate table watches keep the older `as_of`.
    pub fn push(&mut self, entry: ReadCheckEntry) {
        if let Some(existing) = self.entries.iter_mut().find(|e| e.same_target(&entry)) {
            if let (ReadCheckEntry::Table { as_of: kept, .. }, ReadCheckEntry::Table { as_of, .. }) =
                (existing, &entry)
            {
                *kept = (*kept).min(*as_of);
            }
            return;
        }
        self.entries.push(entry);
    }

    pub fn extend(&mut self, other: &ReadCheckVector) {
        for e in &other.entries {
            self.push(e.clone());
        }
    }

    /// Entries of one database only.
    pub fn for_db(&self, db: &str) -> ReadCheckVector {
        ReadCheckVector {
            entries: self.entries.iter().filter(|e| e.db() == db).cloned().collect(),
        }
    }

    /// Distinct database names in first-appearance order.
    pub fn databases(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.entries {
            if !out.iter().any(|d| d == e.db()) {
                out.push(e.db().to_string());
            }
        }
        out
    }

    /// Fresh iff every entry holds. A vector made only of absent entries has
    /// nothing to anchor it and is reported stale.
    pub fn validate(&self, snap: &Snapshot) -> Freshness {
        if !self.entries.is_empty() && self.entries.iter().all(|e| matches!(e, ReadCheckEntry::Absent(_))) {
            return Freshness::Stale(self.entries.clone());
        }
        let stale: Vec<ReadCheckEntry> = self.entries.iter().filter(|e| !e.is_fresh(snap)).cloned().collect();
        if stale.is_empty() {
            Freshness::Fresh
        } else {
            Freshness::Stale(stale)
        }
    }

    /// Validator items in order: row stamps as `db:pos:txn`, runs of table
    /// watches of one database at one position as a single ETag. Absent
    /// entries carry nothing and are not rendered.
    pub fn render_items(&self) -> Vec<String> {
        let mut items = Vec::new();
        let mut i = 0;
        while i < self.entries.len() {
            match &self.entries[i] {
                ReadCheckEntry::Row(rvv) => {
                    items.push(rvv.to_string());
                    i += 1;
                }
                ReadCheckEntry::Absent(_) => i += 1,
                ReadCheckEntry::Table { db, as_of, .. } => {
                    let mut tables = Vec::new();
                    while let Some(ReadCheckEntry::Table { db: d, table_id, as_of: a }) = self.entries.get(i) {
                        if d != db || a != as_of {
                            break;
                        }
                        tables.push((*table_id, 0));
                        i += 1;
                    }
                    items.push(
                        ETag {
                            db: db.clone(),
                            log_position: *as_of,
                            tables,
                        }
                        .to_string(),
                    );
                }
            }
        }
        items
    }

    /// Combined string form: items joined by `;`.
    pub fn render(&self) -> String {
        self.render_items().join(";")
    }

    pub fn parse(text: &str) -> Result<ReadCheckVector, ReadCheckError> {
        if text.is_empty() {
            return Ok(ReadCheckVector::new());
        }
        let combined: CombinedValidator = text.parse()?;
        Ok(combined.to_vector())
    }

    pub fn parse_items(items: &[String]) -> Result<ReadCheckVector, ReadCheckError> {
        let mut v = ReadCheckVector::new();
        for item in items {
            v.extend(&ReadCheckVector::parse(item)?);
        }
        Ok(v)
    }

    /// Per-row form: contributing row stamps joined by `,`; aggregated
    /// (absent) contributions are blank and omitted.
    pub fn render_row(&self) -> String {
        self.entries
            .iter()
            .filter_map(|e| match e {
                ReadCheckEntry::Row(r) => Some(r.to_string()),
                _ => None,
            })
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn parse_row(text: &str) -> Result<ReadCheckVector, ReadCheckError> {
        let mut v = ReadCheckVector::new();
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let rvv = part
                .parse::<Rvv>()
                .map_err(|e| ReadCheckError::MalformedValidator(part.to_string(), e))?;
            v.push(ReadCheckEntry::Row(rvv));
        }
        Ok(v)
    }
}

/// Concatenation with duplicate collapse.
pub fn combine(a: &ReadCheckVector, b: &ReadCheckVector) -> ReadCheckVector {
    let mut out = a.clone();
    out.extend(b);
    out
}

/// Computes the readCheck vector of a local plan against `snap`:
/// key scans contribute one row stamp per literal key, any other scan a
/// table watch; joins and unions concatenate; filters, projections and
/// aggregations pass their input's vector through. A key that matches no row
/// falls back to the table watch so a later insert is still detected.
pub fn compute(plan: &QueryPlan, snap: &Snapshot) -> ReadCheckVector {
    let mut out = ReadCheckVector::new();
    collect(plan, snap, &mut out);
    out
}

fn collect(plan: &QueryPlan, snap: &Snapshot, out: &mut ReadCheckVector) {
    match plan {
        QueryPlan::KeyScan { table, keys } => {
            let Some(data) = snap.table(table.table_id) else {
                return;
            };
            for key in keys {
                match data.rows.get(key) {
                    Some(row) => out.push(ReadCheckEntry::Row(row.rvv.clone())),
                    None => out.push(table_watch(snap, table.table_id)),
                }
            }
        }
        QueryPlan::PredScan { table, .. } => {
            if snap.table(table.table_id).is_some() {
                out.push(table_watch(snap, table.table_id));
            }
        }
        QueryPlan::Filter { input, .. }
        | QueryPlan::Project { input, .. }
        | QueryPlan::Aggregate { input, .. } => collect(input, snap, out),
        QueryPlan::Join { left, right, .. } | QueryPlan::Union { left, right, .. } => {
            collect(left, snap, out);
            collect(right, snap, out);
        }
        QueryPlan::RestGet { .. } => {}
    }
}

fn table_watch(snap: &Snapshot, table_id: TableId) -> ReadCheckEntry {
    let stamp = &snap.table(table_id).expect("table exists").stamp;
    ReadCheckEntry::Table {
        db: snap.db_name.clone(),
        table_id,
        as_of: stamp.log_position,
    }
}

/// `db|pos|[table-qualifier,...]`; qualifier 0 watches the whole table.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ETag {
    pub db: String,
    pub log_position: u64,
    pub tables: Vec<(TableId, u64)>,
}

impl fmt::Display for ETag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}|[", self.db, self.log_position)?;
        for (i, (t, q)) in self.tables.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{t}-{q}")?;
        }
        f.write_str("]")
    }
}

impl FromStr for ETag {
    type Err = ReadCheckError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |why: &str| ReadCheckError::MalformedValidator(s.to_string(), why.to_string());
        let mut parts = s.splitn(3, '|');
        let db = parts.next().ok_or_else(|| bad("missing database"))?;
        let pos = parts.next().ok_or_else(|| bad("missing position"))?;
        let list = parts.next().ok_or_else(|| bad("missing table list"))?;
        if !valid_name(db) {
            return Err(bad("bad database name"));
        }
        let log_position = parse_digits(pos).map_err(|e| bad(&e))?;
        let inner = list
            .strip_prefix('[')
            .and_then(|l| l.strip_suffix(']'))
            .ok_or_else(|| bad("table list must be bracketed"))?;
        let mut tables = Vec::new();
        for pair in inner.split(',') {
            let (t, q) = pair.split_once('-').ok_or_else(|| bad("pair must be table-qualifier"))?;
            tables.push((parse_digits(t).map_err(|e| bad(&e))?, parse_digits(q).map_err(|e| bad(&e))?));
        }
        Ok(ETag {
            db: db.to_string(),
            log_position,
            tables,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ValidatorItem {
    Rvv(Rvv),
    ETag(ETag),
}

impl ValidatorItem {
    pub fn db(&self) -> &str {
        match self {
            ValidatorItem::Rvv(r) => &r.db,
            ValidatorItem::ETag(e) => &e.db,
        }
    }

    pub fn to_vector(&self) -> ReadCheckVector {
        match self {
            ValidatorItem::Rvv(r) => ReadCheckVector::from_entries([ReadCheckEntry::Row(r.clone())]),
            ValidatorItem::ETag(e) => ReadCheckVector::from_entries(e.tables.iter().map(|(t, _)| {
                ReadCheckEntry::Table {
                    db: e.db.clone(),
                    table_id: *t,
                    as_of: e.log_position,
                }
            })),
        }
    }
}

impl fmt::Display for ValidatorItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidatorItem::Rvv(r) => write!(f, "{r}"),
            ValidatorItem::ETag(e) => write!(f, "{e}"),
        }
    }
}

impl FromStr for ValidatorItem {
    type Err = ReadCheckError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.contains('|') {
            s.parse().map(ValidatorItem::ETag)
        } else {
            s.parse::<Rvv>()
                .map(ValidatorItem::Rvv)
                .map_err(|e| ReadCheckError::MalformedValidator(s.to_string(), e))
        }
    }
}

/// Per-source validators of a multi-source result, joined by `;`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CombinedValidator {
    pub items: Vec<ValidatorItem>,
}

impl CombinedValidator {
    pub fn push(&mut self, item: ValidatorItem) {
        if !self.items.contains(&item) {
            self.items.push(item);
        }
    }

    /// Items contributed by database `db`.
    pub fn items_for(&self, db: &str) -> Vec<&ValidatorItem> {
        self.items.iter().filter(|i| i.db() == db).collect()
    }

    pub fn databases(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for i in &self.items {
            if !out.iter().any(|d| d == i.db()) {
                out.push(i.db().to_string());
            }
        }
        out
    }

    pub fn to_vector(&self) -> ReadCheckVector {
        let mut v = ReadCheckVector::new();
        for item in &self.items {
            v.extend(&item.to_vector());
        }
        v
    }
}

impl fmt::Display for CombinedValidator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, item) in self.items.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{item}")?;
        }
        Ok(())
    }
}

impl FromStr for CombinedValidator {
    type Err = ReadCheckError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = CombinedValidator::default();
        if s.is_empty() {
            return Ok(out);
        }
        for part in s.split(';') {
            if part.is_empty() {
                return Err(ReadCheckError::MalformedValidator(s.to_string(), "empty item".into()));
            }
            out.push(part.parse()?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rvv(db: &str, pos: u64, txn: u64) -> Rvv {
        Rvv {
            db: db.into(),
            log_position: pos,
            txn_id: txn,
        }
    }

    #[test]
    fn renders_the_documented_forms() {
        let v = ReadCheckVector::from_entries([ReadCheckEntry::Table {
            db: "Statistics".into(),
            table_id: 78,
            as_of: 831,
        }]);
        assert_eq!(v.render(), "Statistics|831|[78-0]");
        let r = ReadCheckVector::from_entries([ReadCheckEntry::Row(rvv("Statistics", 490, 474))]);
        assert_eq!(r.render(), "Statistics:490:474");
    }

    #[test]
    fn combine_concatenates_and_has_identity() {
        let a = ReadCheckVector::from_entries([ReadCheckEntry::Row(rvv("C1", 10, 2))]);
        let b = ReadCheckVector::from_entries([ReadCheckEntry::Table {
            db: "C1".into(),
            table_id: 40,
            as_of: 99,
        }]);
        let ab = combine(&a, &b);
        assert_eq!(ab.entries(), &[a.entries()[0].clone(), b.entries()[0].clone()]);
        assert_eq!(combine(&ab, &ReadCheckVector::new()), ab);
        assert_eq!(combine(&ab, &a), ab);
    }

    #[test]
    fn duplicate_table_watch_keeps_older_position() {
        let mut v = ReadCheckVector::new();
        v.push(ReadCheckEntry::Table { db: "d".into(), table_id: 1, as_of: 50 });
        v.push(ReadCheckEntry::Table { db: "d".into(), table_id: 1, as_of: 20 });
        assert_eq!(v.len(), 1);
        assert_eq!(v.render(), "d|20|[1-0]");
    }

    #[test]
    fn parse_rejects_malformed_validators() {
        for bad in [
            "Statistics:49x:474",
            "Statistics|831|78-0",
            "Statistics|831|[78]",
            ":1:2",
            "a:1:2;;b:1:2",
            "Stat istics:1:2",
            "Statistics|-1|[78-0]",
        ] {
            assert!(ReadCheckVector::parse(bad).is_err(), "{bad} should be rejected");
        }
    }

    #[test]
    fn multi_table_etag_expands() {
        let v = ReadCheckVector::parse("Hospital|1109|[76-0,77-0]").unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.render(), "Hospital|1109|[76-0,77-0]");
    }

    #[test]
    fn combined_validator_splits_per_source() {
        let c: CombinedValidator = "Hospital|1109|[76-0];Statistics|831|[78-0];Statistics:490:474".parse().unwrap();
        assert_eq!(c.databases(), vec!["Hospital".to_string(), "Statistics".to_string()]);
        assert_eq!(c.items_for("Statistics").len(), 2);
        assert_eq!(c.to_string(), "Hospital|1109|[76-0];Statistics|831|[78-0];Statistics:490:474");
    }

    #[test]
    fn row_form_omits_absent_contributions() {
        let v = ReadCheckVector::from_entries([
            ReadCheckEntry::Absent("Hospital".into()),
            ReadCheckEntry::Row(rvv("Statistics", 578, 474)),
        ]);
        assert_eq!(v.render_row(), "Statistics:578:474");
        assert_eq!(ReadCheckVector::parse_row("").unwrap(), ReadCheckVector::new());
    }

    fn entry() -> impl Strategy<Value = ReadCheckEntry> {
        let db = prop_oneof![Just("Hospital".to_string()), Just("Statistics".to_string()), "[A-Za-z][A-Za-z0-9_]{0,8}"];
        prop_oneof![
            (db.clone(), 0u64..5000, 0u64..500).prop_map(|(d, p, t)| ReadCheckEntry::Row(rvv(&d, p, t))),
            (db, 1u64..300, 0u64..5000).prop_map(|(d, t, a)| ReadCheckEntry::Table { db: d, table_id: t, as_of: a }),
        ]
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(entries in proptest::collection::vec(entry(), 0..12)) {
            let v = ReadCheckVector::from_entries(entries);
            let text = v.render();
            prop_assert_eq!(ReadCheckVector::parse(&text).unwrap(), v.clone());
            prop_assert_eq!(ReadCheckVector::parse(&text).unwrap().render(), text);
        }

        #[test]
        fn combine_is_associative(
            a in proptest::collection::vec(entry(), 0..6),
            b in proptest::collection::vec(entry(), 0..6),
            c in proptest::collection::vec(entry(), 0..6),
        ) {
            let (a, b, c) = (
                ReadCheckVector::from_entries(a),
                ReadCheckVector::from_entries(b),
                ReadCheckVector::from_entries(c),
            );
            prop_assert_eq!(combine(&combine(&a, &b), &c), combine(&a, &combine(&b, &c)));
        }
    }
}
