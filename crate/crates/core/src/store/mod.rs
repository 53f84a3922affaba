//! Embedded, log-structured row store with per-row and per-table version
//! stamps.
//!
//! Committed state is an immutable [`Snapshot`] behind an `Arc`; readers
//! clone the pointer, the single writer builds the next snapshot and swaps
//! it in. Every commit is one log frame, so a torn tail never exposes half a
//! transaction.

pub mod log;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use self::log::{LogRecord, Scan};
use crate::readcheck::{Freshness, ReadCheckEntry, ReadCheckVector};
use crate::value::{ColumnType, Value};

pub type TableId = u64;
pub type Key = Vec<Value>;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("table {0} already exists")]
    DuplicateTable(String),
    #[error("view {0} already exists")]
    DuplicateView(String),
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("invalid table definition: {0}")]
    InvalidDefinition(String),
    #[error("row not found in {table}: key {key}")]
    NotFound { table: String, key: String },
    #[error("duplicate key in {table}: {key}")]
    DuplicateKey { table: String, key: String },
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("serialization conflict: stale {}", .stale.join(", "))]
    SerializationConflict { stale: Vec<String> },
    #[error("rows are pinned by prepared transaction {tid}")]
    Pinned { tid: String },
    #[error("unknown transaction {0}")]
    UnknownTxn(String),
    #[error("transaction {0} already finished")]
    TxnFinished(String),
    #[error("corrupt log at {position}: {reason}")]
    CorruptLog { position: u64, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Version stamp of one committed row change.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rvv {
    pub db: String,
    pub log_position: u64,
    pub txn_id: u64,
}

impl fmt::Display for Rvv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.db, self.log_position, self.txn_id)
    }
}

impl FromStr for Rvv {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.rsplitn(3, ':');
        let txn = parts.next().ok_or("missing txn")?;
        let pos = parts.next().ok_or("missing position")?;
        let db = parts.next().ok_or("missing database")?;
        if db.is_empty() || !valid_name(db) {
            return Err(format!("bad database name in {s:?}"));
        }
        Ok(Rvv {
            db: db.to_string(),
            log_position: parse_digits(pos)?,
            txn_id: parse_digits(txn)?,
        })
    }
}

pub(crate) fn valid_name(name: &str) -> bool {
    !name.is_empty() && !name.contains([':', '|', ';', ',', '[', ']', '"']) && !name.contains(char::is_whitespace)
}

pub(crate) fn parse_digits(s: &str) -> Result<u64, String> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("expected digits, got {s:?}"));
    }
    s.parse().map_err(|_| format!("number out of range: {s}"))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub ty: ColumnType,
    pub not_null: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TableDef {
    /// Log position of the defining record; never reused.
    pub table_id: TableId,
    pub name: String,
    pub columns: Vec<ColumnDef>,
    pub primary_key: Vec<String>,
    pk_indexes: Vec<usize>,
}

impl TableDef {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| c.name.eq_ignore_ascii_case(name))
    }

    pub fn key_indexes(&self) -> &[usize] {
        &self.pk_indexes
    }

    pub fn key_of(&self, values: &[Value]) -> Key {
        self.pk_indexes.iter().map(|&i| values[i].clone()).collect()
    }

    fn check_row(&self, values: &[Value]) -> Result<Vec<Value>, StoreError> {
        if values.len() != self.columns.len() {
            return Err(StoreError::TypeMismatch(format!(
                "{} expects {} values, got {}",
                self.name,
                self.columns.len(),
                values.len()
            )));
        }
        let mut out = Vec::with_capacity(values.len());
        for (col, v) in self.columns.iter().zip(values) {
            let coerced = v.coerce(col.ty).ok_or_else(|| {
                StoreError::TypeMismatch(format!("{} = {v} is not {}", col.name, col.ty))
            })?;
            if coerced.is_null() && (col.not_null || self.primary_key.iter().any(|k| k.eq_ignore_ascii_case(&col.name))) {
                return Err(StoreError::TypeMismatch(format!("{} may not be null", col.name)));
            }
            out.push(coerced);
        }
        Ok(out)
    }

    fn check_key(&self, key: &[Value]) -> Result<Key, StoreError> {
        if key.len() != self.pk_indexes.len() {
            return Err(StoreError::TypeMismatch(format!(
                "{} key has {} parts, got {}",
                self.name,
                self.pk_indexes.len(),
                key.len()
            )));
        }
        self.pk_indexes
            .iter()
            .zip(key)
            .map(|(&i, v)| {
                v.coerce(self.columns[i].ty).ok_or_else(|| {
                    StoreError::TypeMismatch(format!("key {v} is not {}", self.columns[i].ty))
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub key: Key,
    pub values: Vec<Value>,
    pub rvv: Rvv,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Change {
    Insert { table: TableId, values: Vec<Value> },
    /// Replaces the whole row; the key may not change.
    Update { table: TableId, key: Key, values: Vec<Value> },
    Delete { table: TableId, key: Key },
}

impl Change {
    pub fn table(&self) -> TableId {
        match self {
            Change::Insert { table, .. } | Change::Update { table, .. } | Change::Delete { table, .. } => *table,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableData {
    pub def: TableDef,
    pub rows: BTreeMap<Key, Row>,
    /// Current log position of each live row, for resolving row stamps.
    by_position: BTreeMap<u64, Key>,
    /// Most recent committed change to this table (or its creation).
    pub stamp: Rvv,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ViewDef {
    pub name: String,
    pub definition: String,
}

/// Immutable committed state of one database.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub db_name: String,
    tables: BTreeMap<TableId, Arc<TableData>>,
    names: BTreeMap<String, TableId>,
    views: BTreeMap<String, ViewDef>,
    pub latest_txn: u64,
    /// Length of the log once this state was reached.
    pub end_position: u64,
}

impl Snapshot {
    fn empty(db_name: &str, end_position: u64) -> Self {
        Snapshot {
            db_name: db_name.to_string(),
            tables: BTreeMap::new(),
            names: BTreeMap::new(),
            views: BTreeMap::new(),
            latest_txn: 0,
            end_position,
        }
    }

    pub fn table(&self, id: TableId) -> Option<&TableData> {
        self.tables.get(&id).map(|t| t.as_ref())
    }

    pub fn table_by_name(&self, name: &str) -> Option<&TableData> {
        self.names
            .get(&name.to_ascii_lowercase())
            .and_then(|id| self.table(*id))
    }

    pub fn tables(&self) -> impl Iterator<Item = &TableData> {
        self.tables.values().map(|t| t.as_ref())
    }

    pub fn view(&self, name: &str) -> Option<&ViewDef> {
        self.views.get(&name.to_ascii_lowercase())
    }

    pub fn views(&self) -> impl Iterator<Item = &ViewDef> {
        self.views.values()
    }

    /// Finds the live row whose current stamp sits at `position`.
    pub fn locate(&self, position: u64) -> Option<(&TableData, &Row)> {
        self.tables.values().find_map(|t| {
            let key = t.by_position.get(&position)?;
            Some((t.as_ref(), t.rows.get(key)?))
        })
    }

    pub fn row_rvv(&self, table: &str, key: &[Value]) -> Result<Rvv, StoreError> {
        let t = self
            .table_by_name(table)
            .ok_or_else(|| StoreError::UnknownTable(table.to_string()))?;
        let key = t.def.check_key(key)?;
        t.rows
            .get(&key)
            .map(|r| r.rvv.clone())
            .ok_or_else(|| StoreError::NotFound {
                table: table.to_string(),
                key: render_key(&key),
            })
    }

    pub fn table_rvv(&self, table: &str) -> Result<Rvv, StoreError> {
        self.table_by_name(table)
            .map(|t| t.stamp.clone())
            .ok_or_else(|| StoreError::UnknownTable(table.to_string()))
    }

    fn apply_create_table(
        &mut self,
        table_id: TableId,
        name: &str,
        columns: Vec<ColumnDef>,
        primary_key: Vec<String>,
    ) -> Result<(), StoreError> {
        if self.names.contains_key(&name.to_ascii_lowercase()) || self.views.contains_key(&name.to_ascii_lowercase()) {
            return Err(StoreError::DuplicateTable(name.to_string()));
        }
        let mut seen = BTreeSet::new();
        for c in &columns {
            if !seen.insert(c.name.to_ascii_lowercase()) {
                return Err(StoreError::InvalidDefinition(format!("duplicate column {}", c.name)));
            }
        }
        if primary_key.is_empty() {
            return Err(StoreError::InvalidDefinition(format!("{name} has no primary key")));
        }
        let mut pk_indexes = Vec::new();
        for k in &primary_key {
            let idx = columns
                .iter()
                .position(|c| c.name.eq_ignore_ascii_case(k))
                .ok_or_else(|| StoreError::InvalidDefinition(format!("primary key column {k} not defined")))?;
            pk_indexes.push(idx);
        }
        let def = TableDef {
            table_id,
            name: name.to_string(),
            columns,
            primary_key,
            pk_indexes,
        };
        let stamp = Rvv {
            db: self.db_name.clone(),
            log_position: table_id,
            txn_id: self.latest_txn,
        };
        self.names.insert(name.to_ascii_lowercase(), table_id);
        self.tables.insert(
            table_id,
            Arc::new(TableData {
                def,
                rows: BTreeMap::new(),
                by_position: BTreeMap::new(),
                stamp,
            }),
        );
        Ok(())
    }

    fn apply_create_view(&mut self, name: &str, definition: &str) -> Result<(), StoreError> {
        let lower = name.to_ascii_lowercase();
        if self.views.contains_key(&lower) || self.names.contains_key(&lower) {
            return Err(StoreError::DuplicateView(name.to_string()));
        }
        self.views.insert(
            lower,
            ViewDef {
                name: name.to_string(),
                definition: definition.to_string(),
            },
        );
        Ok(())
    }

    /// Applies the changes of one commit. Positions are the changes' log
    /// offsets. On error `self` may be partially modified; callers apply to a
    /// scratch copy.
    fn apply_commit(
        &mut self,
        txn_id: u64,
        changes: &[Change],
        positions: &[u64],
    ) -> Result<CommitReceipt, StoreError> {
        let mut written = Vec::with_capacity(changes.len());
        let mut touched = BTreeSet::new();
        for (change, &pos) in changes.iter().zip(positions) {
            let table_id = change.table();
            let db = self.db_name.clone();
            let table = self
                .tables
                .get_mut(&table_id)
                .ok_or_else(|| StoreError::UnknownTable(format!("#{table_id}")))?;
            let table = Arc::make_mut(table);
            let rvv = Rvv {
                db,
                log_position: pos,
                txn_id,
            };
            match change {
                Change::Insert { values, .. } => {
                    let values = table.def.check_row(values)?;
                    let key = table.def.key_of(&values);
                    if table.rows.contains_key(&key) {
                        return Err(StoreError::DuplicateKey {
                            table: table.def.name.clone(),
                            key: render_key(&key),
                        });
                    }
                    table.by_position.insert(pos, key.clone());
                    table.rows.insert(
                        key.clone(),
                        Row {
                            key: key.clone(),
                            values,
                            rvv: rvv.clone(),
                        },
                    );
                    written.push(WrittenRow {
                        table: table_id,
                        key,
                        rvv: Some(rvv.clone()),
                    });
                }
                Change::Update { key, values, .. } => {
                    let key = table.def.check_key(key)?;
                    let values = table.def.check_row(values)?;
                    if table.def.key_of(&values) != key {
                        return Err(StoreError::TypeMismatch("primary key columns may not be updated".into()));
                    }
                    let row = table.rows.get_mut(&key).ok_or_else(|| StoreError::NotFound {
                        table: table.def.name.clone(),
                        key: render_key(&key),
                    })?;
                    let old_pos = row.rvv.log_position;
                    row.values = values;
                    row.rvv = rvv.clone();
                    table.by_position.remove(&old_pos);
                    table.by_position.insert(pos, key.clone());
                    written.push(WrittenRow {
                        table: table_id,
                        key,
                        rvv: Some(rvv.clone()),
                    });
                }
                Change::Delete { key, .. } => {
                    let key = table.def.check_key(key)?;
                    let row = table.rows.remove(&key).ok_or_else(|| StoreError::NotFound {
                        table: table.def.name.clone(),
                        key: render_key(&key),
                    })?;
                    table.by_position.remove(&row.rvv.log_position);
                    written.push(WrittenRow {
                        table: table_id,
                        key,
                        rvv: None,
                    });
                }
            }
            table.stamp = rvv;
            touched.insert(table_id);
        }
        if !changes.is_empty() {
            self.latest_txn = txn_id;
        }
        let table_stamps = touched
            .into_iter()
            .map(|t| (t, self.tables[&t].stamp.clone()))
            .collect();
        Ok(CommitReceipt {
            txn_id,
            written,
            table_stamps,
        })
    }
}

pub fn render_key(key: &[Value]) -> String {
    key.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

#[derive(Clone, Debug, PartialEq)]
pub struct WrittenRow {
    pub table: TableId,
    pub key: Key,
    /// `None` for deletions.
    pub rvv: Option<Rvv>,
}

/// What a successful commit changed, with the resulting validators.
#[derive(Clone, Debug, PartialEq)]
pub struct CommitReceipt {
    pub txn_id: u64,
    pub written: Vec<WrittenRow>,
    pub table_stamps: Vec<(TableId, Rvv)>,
}

impl CommitReceipt {
    /// Validators for the state after the commit: written rows' stamps, then
    /// each touched table's stamp.
    pub fn validators(&self, snapshot: &Snapshot) -> ReadCheckVector {
        let mut v = ReadCheckVector::new();
        for w in &self.written {
            if let Some(rvv) = &w.rvv {
                v.push(ReadCheckEntry::Row(rvv.clone()));
            }
        }
        for (table, stamp) in &self.table_stamps {
            v.push(ReadCheckEntry::Table {
                db: snapshot.db_name.clone(),
                table_id: *table,
                as_of: stamp.log_position,
            });
        }
        v
    }
}

/// A transaction under construction: reads see `snapshot`, writes are staged
/// until commit.
pub struct Txn {
    snapshot: Arc<Snapshot>,
    reads: ReadCheckVector,
    staged: Vec<Change>,
}

impl Txn {
    pub fn snapshot(&self) -> &Arc<Snapshot> {
        &self.snapshot
    }

    /// Records validators that must still hold when the transaction commits.
    pub fn record_reads(&mut self, reads: &ReadCheckVector) {
        self.reads.extend(reads);
    }

    pub fn reads(&self) -> &ReadCheckVector {
        &self.reads
    }

    pub fn staged(&self) -> &[Change] {
        &self.staged
    }

    /// Row existence as seen by this transaction: snapshot plus staged writes.
    fn row_exists(&self, table: TableId, key: &Key) -> bool {
        let mut exists = self
            .snapshot
            .table(table)
            .map(|t| t.rows.contains_key(key))
            .unwrap_or(false);
        for c in &self.staged {
            match c {
                Change::Insert { table: t, .. } if *t == table => {
                    let def = &self.snapshot.table(table).unwrap().def;
                    if let Change::Insert { values, .. } = c {
                        if let Ok(v) = def.check_row(values) {
                            if &def.key_of(&v) == key {
                                exists = true;
                            }
                        }
                    }
                }
                Change::Delete { table: t, key: k } if *t == table && k == key => exists = false,
                _ => {}
            }
        }
        exists
    }
}

/// Footprint of a prepared transaction that other writers must not disturb.
#[derive(Clone, Debug, Default)]
struct Pin {
    write_rows: BTreeSet<(TableId, Key)>,
    write_tables: BTreeSet<TableId>,
    read_rows: BTreeSet<(TableId, Key)>,
    read_tables: BTreeSet<TableId>,
}

impl Pin {
    fn of(state: &Snapshot, reads: &ReadCheckVector, changes: &[Change]) -> Pin {
        let mut pin = Pin::default();
        for e in reads.entries() {
            match e {
                ReadCheckEntry::Row(rvv) => {
                    if let Some((t, row)) = state.locate(rvv.log_position) {
                        pin.read_rows.insert((t.def.table_id, row.key.clone()));
                    }
                }
                ReadCheckEntry::Table { table_id, .. } => {
                    pin.read_tables.insert(*table_id);
                }
                ReadCheckEntry::Absent(_) => {}
            }
        }
        for c in changes {
            let table = c.table();
            pin.write_tables.insert(table);
            let key = match c {
                Change::Insert { values, .. } => state
                    .table(table)
                    .and_then(|t| t.def.check_row(values).ok().map(|v| t.def.key_of(&v))),
                Change::Update { key, .. } | Change::Delete { key, .. } => Some(key.clone()),
            };
            if let Some(k) = key {
                pin.write_rows.insert((table, k));
            }
        }
        pin
    }

    fn conflicts(&self, other: &Pin) -> bool {
        let meets = |a: &BTreeSet<(TableId, Key)>, b: &BTreeSet<(TableId, Key)>| a.iter().any(|x| b.contains(x));
        let meets_t = |a: &BTreeSet<TableId>, b: &BTreeSet<TableId>| a.iter().any(|x| b.contains(x));
        meets(&self.write_rows, &other.write_rows)
            || meets(&self.write_rows, &other.read_rows)
            || meets(&self.read_rows, &other.write_rows)
            || meets_t(&self.write_tables, &other.read_tables)
            || meets_t(&self.read_tables, &other.write_tables)
    }
}

#[derive(Clone, Debug)]
pub struct PreparedIntent {
    pub tid: String,
    pub timestamp_ms: i64,
    pub read_checks: ReadCheckVector,
    pub changes: Vec<Change>,
    pin: Pin,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Vote {
    Yes,
    No(Refusal),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Refusal {
    /// Read validators that no longer hold.
    pub stale: Vec<String>,
    /// Rows targeted by a write that do not exist (or already exist, for inserts).
    pub missing: Vec<String>,
    pub pinned_by: Option<String>,
}

#[derive(Clone, Debug)]
enum TidOutcome {
    Committed(CommitReceipt),
    Aborted,
}

struct LogWriter {
    file: Option<File>,
    image: Vec<u8>,
}

impl LogWriter {
    fn len(&self) -> u64 {
        self.image.len() as u64
    }

    fn append(&mut self, bytes: &[u8]) -> Result<(), StoreError> {
        if let Some(f) = self.file.as_mut() {
            f.write_all(bytes)?;
            f.sync_data()?;
        }
        self.image.extend_from_slice(bytes);
        Ok(())
    }
}

struct Writer {
    log: LogWriter,
    intents: BTreeMap<String, PreparedIntent>,
    outcomes: HashMap<String, TidOutcome>,
}

/// One named database: committed state plus its log.
pub struct Database {
    name: String,
    path: Option<PathBuf>,
    state: RwLock<Arc<Snapshot>>,
    writer: Mutex<Writer>,
}

impl fmt::Debug for Database {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Database").field("name", &self.name).field("path", &self.path).finish()
    }
}

fn now_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}

impl Database {
    /// Creates an empty database whose log lives only in memory.
    pub fn in_memory(name: &str) -> Database {
        let image = log::encode_header(name);
        let end = image.len() as u64;
        Database {
            name: name.to_string(),
            path: None,
            state: RwLock::new(Arc::new(Snapshot::empty(name, end))),
            writer: Mutex::new(Writer {
                log: LogWriter { file: None, image },
                intents: BTreeMap::new(),
                outcomes: HashMap::new(),
            }),
        }
    }

    /// Rebuilds a database from a log image, discarding a torn tail.
    pub fn recover(bytes: &[u8]) -> Result<Database, StoreError> {
        let scan = log::scan(bytes)?;
        let (snapshot, intents, outcomes) = replay(&scan)?;
        Ok(Database {
            name: scan.db_name.clone(),
            path: None,
            state: RwLock::new(Arc::new(snapshot)),
            writer: Mutex::new(Writer {
                log: LogWriter {
                    file: None,
                    image: bytes[..scan.valid_len as usize].to_vec(),
                },
                intents,
                outcomes,
            }),
        })
    }

    /// Opens (or creates, named `name`) a file-backed database. A torn tail is
    /// truncated away before new records are appended.
    pub fn open(path: impl AsRef<Path>, name: &str) -> Result<Database, StoreError> {
        let path = path.as_ref();
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let mut db = if bytes.is_empty() {
            let db = Database::in_memory(name);
            let header = db.writer.lock().log.image.clone();
            file.write_all(&header)?;
            file.sync_data()?;
            db
        } else {
            let db = Database::recover(&bytes)?;
            let valid = db.writer.lock().log.len();
            if valid < bytes.len() as u64 {
                file.set_len(valid)?;
            }
            db
        };
        db.path = Some(path.to_path_buf());
        db.writer.get_mut().log.file = Some(file);
        Ok(db)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.state.read().clone()
    }

    /// Copy of the log as written so far.
    pub fn log_image(&self) -> Vec<u8> {
        self.writer.lock().log.image.clone()
    }

    pub fn create_table(
        &self,
        name: &str,
        columns: Vec<ColumnDef>,
        primary_key: Vec<String>,
    ) -> Result<TableId, StoreError> {
        if !valid_name(name) {
            return Err(StoreError::InvalidDefinition(format!("invalid table name {name:?}")));
        }
        let mut w = self.writer.lock();
        let offset = w.log.len();
        let mut next = (**self.state.read()).clone();
        next.apply_create_table(offset, name, columns.clone(), primary_key.clone())?;
        let (bytes, _) = log::encode_frame(
            offset,
            &LogRecord::CreateTable {
                name: name.to_string(),
                columns,
                primary_key,
            },
        );
        w.log.append(&bytes)?;
        next.end_position = w.log.len();
        *self.state.write() = Arc::new(next);
        Ok(offset)
    }

    pub fn create_view(&self, name: &str, definition: &str) -> Result<(), StoreError> {
        let mut w = self.writer.lock();
        let offset = w.log.len();
        let mut next = (**self.state.read()).clone();
        next.apply_create_view(name, definition)?;
        let (bytes, _) = log::encode_frame(
            offset,
            &LogRecord::CreateView {
                name: name.to_string(),
                definition: definition.to_string(),
            },
        );
        w.log.append(&bytes)?;
        next.end_position = w.log.len();
        *self.state.write() = Arc::new(next);
        Ok(())
    }

    pub fn begin(&self) -> Txn {
        Txn {
            snapshot: self.snapshot(),
            reads: ReadCheckVector::new(),
            staged: Vec::new(),
        }
    }

    /// Stages a change. Updates and deletes implicitly record the stamp of
    /// the row they replace, so a concurrent change to it fails the commit.
    pub fn write(&self, txn: &mut Txn, change: Change) -> Result<usize, StoreError> {
        let table = txn
            .snapshot
            .table(change.table())
            .ok_or_else(|| StoreError::UnknownTable(format!("#{}", change.table())))?;
        let def = &table.def;
        let change = match change {
            Change::Insert { table: t, values } => {
                let values = def.check_row(&values)?;
                let key = def.key_of(&values);
                if txn.row_exists(t, &key) {
                    return Err(StoreError::DuplicateKey {
                        table: def.name.clone(),
                        key: render_key(&key),
                    });
                }
                Change::Insert { table: t, values }
            }
            Change::Update { table: t, key, values } => {
                let key = def.check_key(&key)?;
                let values = def.check_row(&values)?;
                if def.key_of(&values) != key {
                    return Err(StoreError::TypeMismatch("primary key columns may not be updated".into()));
                }
                if !txn.row_exists(t, &key) {
                    return Err(StoreError::NotFound {
                        table: def.name.clone(),
                        key: render_key(&key),
                    });
                }
                if let Some(row) = table.rows.get(&key) {
                    txn.reads.push(ReadCheckEntry::Row(row.rvv.clone()));
                }
                Change::Update { table: t, key, values }
            }
            Change::Delete { table: t, key } => {
                let key = def.check_key(&key)?;
                if !txn.row_exists(t, &key) {
                    return Err(StoreError::NotFound {
                        table: def.name.clone(),
                        key: render_key(&key),
                    });
                }
                if let Some(row) = table.rows.get(&key) {
                    txn.reads.push(ReadCheckEntry::Row(row.rvv.clone()));
                }
                Change::Delete { table: t, key }
            }
        };
        txn.staged.push(change);
        Ok(txn.staged.len() - 1)
    }

    /// Validates the transaction's read set and applies its writes as one
    /// log frame. The writer lock is held only for validation and append.
    pub fn commit(&self, txn: Txn) -> Result<CommitReceipt, StoreError> {
        let mut w = self.writer.lock();
        let current = self.snapshot();
        if let Freshness::Stale(stale) = txn.reads.validate(&current) {
            return Err(StoreError::SerializationConflict {
                stale: stale.iter().map(|e| e.to_string()).collect(),
            });
        }
        if txn.staged.is_empty() {
            return Ok(CommitReceipt {
                txn_id: current.latest_txn,
                written: Vec::new(),
                table_stamps: Vec::new(),
            });
        }
        let pin = Pin::of(&current, &txn.reads, &txn.staged);
        if let Some(holder) = w.intents.values().find(|i| i.pin.conflicts(&pin)) {
            return Err(StoreError::Pinned { tid: holder.tid.clone() });
        }
        let receipt = append_commit(&mut w.log, &self.state, &current, None, &txn.staged)?;
        Ok(receipt)
    }

    pub fn row_rvv(&self, table: &str, key: &[Value]) -> Result<Rvv, StoreError> {
        self.snapshot().row_rvv(table, key)
    }

    pub fn table_rvv(&self, table: &str) -> Result<Rvv, StoreError> {
        self.snapshot().table_rvv(table)
    }

    /// Phase one of two-phase commit: validate, pin and durably record the
    /// intent. Re-preparing a pending tid is a no-op that votes yes again.
    pub fn prepare(&self, tid: &str, reads: &ReadCheckVector, changes: Vec<Change>) -> Result<Vote, StoreError> {
        let mut w = self.writer.lock();
        if w.intents.contains_key(tid) {
            return Ok(Vote::Yes);
        }
        if w.outcomes.contains_key(tid) {
            return Err(StoreError::TxnFinished(tid.to_string()));
        }
        let current = self.snapshot();
        let mut refusal = Refusal::default();
        if let Freshness::Stale(stale) = reads.validate(&current) {
            refusal.stale = stale.iter().map(|e| e.to_string()).collect();
        }
        let mut reads = reads.clone();
        let mut scratch = (*current).clone();
        for change in &changes {
            let table = match current.table(change.table()) {
                Some(t) => t,
                None => {
                    refusal.missing.push(format!("#{}", change.table()));
                    continue;
                }
            };
            if let Change::Update { key, .. } | Change::Delete { key, .. } = change {
                if let Some(row) = table.def.check_key(key).ok().and_then(|k| table.rows.get(&k)) {
                    reads.push(ReadCheckEntry::Row(row.rvv.clone()));
                }
            }
            let end = scratch.end_position;
            if let Err(e) = scratch.apply_commit(current.latest_txn + 1, std::slice::from_ref(change), &[end]) {
                match e {
                    StoreError::NotFound { .. } | StoreError::DuplicateKey { .. } => refusal.missing.push(e.to_string()),
                    other => return Err(other),
                }
            }
            scratch.end_position += 1;
        }
        let pin = Pin::of(&current, &reads, &changes);
        if let Some(holder) = w.intents.values().find(|i| i.pin.conflicts(&pin)) {
            refusal.pinned_by = Some(holder.tid.clone());
        }
        if !refusal.stale.is_empty() || !refusal.missing.is_empty() || refusal.pinned_by.is_some() {
            return Ok(Vote::No(refusal));
        }
        let timestamp_ms = now_ms();
        let record = LogRecord::Intent {
            tid: tid.to_string(),
            timestamp_ms,
            read_checks: reads.render_items(),
            changes: changes.clone(),
        };
        let offset = w.log.len();
        let (bytes, _) = log::encode_frame(offset, &record);
        w.log.append(&bytes)?;
        let mut next = (*current).clone();
        next.end_position = w.log.len();
        *self.state.write() = Arc::new(next);
        w.intents.insert(
            tid.to_string(),
            PreparedIntent {
                tid: tid.to_string(),
                timestamp_ms,
                read_checks: reads,
                changes,
                pin,
            },
        );
        Ok(Vote::Yes)
    }

    /// Applies a prepared intent. Idempotent: a tid that already committed
    /// returns its original receipt.
    pub fn commit_prepared(&self, tid: &str) -> Result<CommitReceipt, StoreError> {
        let mut w = self.writer.lock();
        match w.outcomes.get(tid) {
            Some(TidOutcome::Committed(r)) => return Ok(r.clone()),
            Some(TidOutcome::Aborted) => return Err(StoreError::TxnFinished(tid.to_string())),
            None => {}
        }
        let intent = w
            .intents
            .get(tid)
            .cloned()
            .ok_or_else(|| StoreError::UnknownTxn(tid.to_string()))?;
        let current = self.snapshot();
        let receipt = append_commit(&mut w.log, &self.state, &current, Some(tid), &intent.changes)?;
        w.intents.remove(tid);
        w.outcomes.insert(tid.to_string(), TidOutcome::Committed(receipt.clone()));
        Ok(receipt)
    }

    /// Discards a prepared intent. Aborting an aborted tid is a no-op.
    pub fn abort_prepared(&self, tid: &str) -> Result<(), StoreError> {
        let mut w = self.writer.lock();
        match w.outcomes.get(tid) {
            Some(TidOutcome::Aborted) => return Ok(()),
            Some(TidOutcome::Committed(_)) => return Err(StoreError::TxnFinished(tid.to_string())),
            None => {}
        }
        if !w.intents.contains_key(tid) {
            return Err(StoreError::UnknownTxn(tid.to_string()));
        }
        let offset = w.log.len();
        let (bytes, _) = log::encode_frame(offset, &LogRecord::Abort { tid: tid.to_string() });
        w.log.append(&bytes)?;
        let mut next = (*self.snapshot()).clone();
        next.end_position = w.log.len();
        *self.state.write() = Arc::new(next);
        w.intents.remove(tid);
        w.outcomes.insert(tid.to_string(), TidOutcome::Aborted);
        Ok(())
    }

    /// Intents that voted yes and await a decision.
    pub fn pending_intents(&self) -> Vec<PreparedIntent> {
        self.writer.lock().intents.values().cloned().collect()
    }

    /// `Some(true)` committed, `Some(false)` aborted, `None` pending or unknown.
    pub fn tid_outcome(&self, tid: &str) -> Option<bool> {
        match self.writer.lock().outcomes.get(tid) {
            Some(TidOutcome::Committed(_)) => Some(true),
            Some(TidOutcome::Aborted) => Some(false),
            None => None,
        }
    }
}

fn append_commit(
    log: &mut LogWriter,
    state: &RwLock<Arc<Snapshot>>,
    current: &Arc<Snapshot>,
    tid: Option<&str>,
    changes: &[Change],
) -> Result<CommitReceipt, StoreError> {
    let txn_id = current.latest_txn + 1;
    let record = LogRecord::Commit {
        txn_id,
        timestamp_ms: now_ms(),
        tid: tid.map(str::to_string),
        changes: changes.to_vec(),
    };
    let offset = log.len();
    let (bytes, positions) = log::encode_frame(offset, &record);
    let mut next = (**current).clone();
    let receipt = next.apply_commit(txn_id, changes, &positions)?;
    log.append(&bytes)?;
    next.end_position = log.len();
    *state.write() = Arc::new(next);
    Ok(receipt)
}

type Replayed = (Snapshot, BTreeMap<String, PreparedIntent>, HashMap<String, TidOutcome>);

fn replay(scan: &Scan) -> Result<Replayed, StoreError> {
    let mut state = Snapshot::empty(&scan.db_name, scan.header_len);
    let mut intents = BTreeMap::new();
    let mut outcomes = HashMap::new();
    let corrupt = |offset: u64, e: StoreError| StoreError::CorruptLog {
        position: offset,
        reason: e.to_string(),
    };
    for frame in &scan.frames {
        match &frame.record {
            LogRecord::CreateTable {
                name,
                columns,
                primary_key,
            } => state
                .apply_create_table(frame.offset, name, columns.clone(), primary_key.clone())
                .map_err(|e| corrupt(frame.offset, e))?,
            LogRecord::CreateView { name, definition } => state
                .apply_create_view(name, definition)
                .map_err(|e| corrupt(frame.offset, e))?,
            LogRecord::Commit { txn_id, tid, changes, .. } => {
                if *txn_id != state.latest_txn + 1 {
                    return Err(StoreError::CorruptLog {
                        position: frame.offset,
                        reason: format!("txn {txn_id} follows {}", state.latest_txn),
                    });
                }
                let receipt = state
                    .apply_commit(*txn_id, changes, &frame.change_positions)
                    .map_err(|e| corrupt(frame.offset, e))?;
                if let Some(tid) = tid {
                    intents.remove(tid);
                    outcomes.insert(tid.clone(), TidOutcome::Committed(receipt));
                }
            }
            LogRecord::Intent {
                tid,
                timestamp_ms,
                read_checks,
                changes,
            } => {
                let reads = ReadCheckVector::parse_items(read_checks).map_err(|e| StoreError::CorruptLog {
                    position: frame.offset,
                    reason: e.to_string(),
                })?;
                let pin = Pin::of(&state, &reads, changes);
                intents.insert(
                    tid.clone(),
                    PreparedIntent {
                        tid: tid.clone(),
                        timestamp_ms: *timestamp_ms,
                        read_checks: reads,
                        changes: changes.clone(),
                        pin,
                    },
                );
            }
            LogRecord::Abort { tid } => {
                intents.remove(tid);
                outcomes.insert(tid.clone(), TidOutcome::Aborted);
            }
        }
        state.end_position = frame.offset + frame.len;
    }
    Ok((state, intents, outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::parse_datetime;

    fn col(name: &str, ty: ColumnType) -> ColumnDef {
        ColumnDef {
            name: name.into(),
            ty,
            not_null: false,
        }
    }

    fn hospital() -> (Database, TableId) {
        let db = Database::in_memory("Hospital");
        let d = db
            .create_table(
                "D",
                vec![col("ID", ColumnType::Int), col("name", ColumnType::Char), col("admission", ColumnType::DateTime)],
                vec!["ID".into()],
            )
            .unwrap();
        (db, d)
    }

    fn row(id: i64, name: &str) -> Vec<Value> {
        vec![
            Value::Int(id),
            Value::Str(name.into()),
            Value::DateTime(parse_datetime("2014-10-06").unwrap()),
        ]
    }

    #[test]
    fn table_ids_are_monotone_and_per_database() {
        let (db, d) = hospital();
        let h = db
            .create_table("H", vec![col("rCode", ColumnType::Int)], vec!["rCode".into()])
            .unwrap();
        assert!(h > d && d > 0);
        assert!(matches!(
            db.create_table("D", vec![col("x", ColumnType::Int)], vec!["x".into()]),
            Err(StoreError::DuplicateTable(_))
        ));
        let (other, d2) = hospital();
        assert_eq!(d, d2);
        drop(other);
    }

    #[test]
    fn one_commit_stamps_every_row_with_one_txn() {
        let (db, d) = hospital();
        let mut txn = db.begin();
        for i in 1..=5 {
            db.write(&mut txn, Change::Insert { table: d, values: row(i, "p") }).unwrap();
        }
        let receipt = db.commit(txn).unwrap();
        assert_eq!(receipt.txn_id, 1);
        let snap = db.snapshot();
        let rvvs: Vec<Rvv> = (1..=5).map(|i| snap.row_rvv("D", &[Value::Int(i)]).unwrap()).collect();
        assert!(rvvs.iter().all(|r| r.txn_id == 1));
        assert!(rvvs.windows(2).all(|w| w[0].log_position < w[1].log_position));
        assert_eq!(snap.table_rvv("D").unwrap(), rvvs[4]);
    }

    #[test]
    fn update_advances_row_and_table_stamp() {
        let (db, d) = hospital();
        let mut txn = db.begin();
        for i in 1..=5 {
            db.write(&mut txn, Change::Insert { table: d, values: row(i, "p") }).unwrap();
        }
        db.commit(txn).unwrap();
        let before = db.snapshot();
        let mut txn = db.begin();
        db.write(&mut txn, Change::Update { table: d, key: vec![Value::Int(3)], values: row(3, "q") })
            .unwrap();
        let receipt = db.commit(txn).unwrap();
        let after = db.snapshot();
        let r3 = after.row_rvv("D", &[Value::Int(3)]).unwrap();
        assert_eq!(Some(&r3), receipt.written[0].rvv.as_ref());
        assert!(before.tables().flat_map(|t| t.rows.values()).all(|r| r.rvv.log_position < r3.log_position));
        assert_eq!(after.table_rvv("D").unwrap(), r3);
        assert_eq!(after.row_rvv("D", &[Value::Int(2)]).unwrap(), before.row_rvv("D", &[Value::Int(2)]).unwrap());
    }

    #[test]
    fn write_errors() {
        let (db, d) = hospital();
        let mut txn = db.begin();
        assert!(matches!(
            db.write(&mut txn, Change::Delete { table: d, key: vec![Value::Int(99)] }),
            Err(StoreError::NotFound { .. })
        ));
        assert!(matches!(
            db.write(&mut txn, Change::Insert { table: d, values: vec![Value::Str("x".into())] }),
            Err(StoreError::TypeMismatch(_))
        ));
        assert!(matches!(db.row_rvv("D", &[Value::Int(9)]), Err(StoreError::NotFound { .. })));
    }

    #[test]
    fn empty_read_set_insert_increments_txn() {
        let (db, d) = hospital();
        let before = db.snapshot().latest_txn;
        let mut txn = db.begin();
        db.write(&mut txn, Change::Insert { table: d, values: row(1, "a") }).unwrap();
        db.commit(txn).unwrap();
        assert_eq!(db.snapshot().latest_txn, before + 1);
    }

    #[test]
    fn second_updater_of_a_row_conflicts() {
        let (db, d) = hospital();
        let mut t0 = db.begin();
        db.write(&mut t0, Change::Insert { table: d, values: row(1, "a") }).unwrap();
        db.commit(t0).unwrap();
        let mut t1 = db.begin();
        let mut t2 = db.begin();
        db.write(&mut t1, Change::Update { table: d, key: vec![Value::Int(1)], values: row(1, "t1") })
            .unwrap();
        db.write(&mut t2, Change::Update { table: d, key: vec![Value::Int(1)], values: row(1, "t2") })
            .unwrap();
        db.commit(t1).unwrap();
        assert!(matches!(db.commit(t2), Err(StoreError::SerializationConflict { .. })));
        let snap = db.snapshot();
        let t = snap.table_by_name("D").unwrap();
        assert_eq!(t.rows[&vec![Value::Int(1)]].values[1], Value::Str("t1".into()));
    }

    #[test]
    fn unrelated_table_commit_does_not_conflict() {
        let (db, d) = hospital();
        let h = db.create_table("H", vec![col("rCode", ColumnType::Int)], vec!["rCode".into()]).unwrap();
        let mut t0 = db.begin();
        db.write(&mut t0, Change::Insert { table: d, values: row(1, "a") }).unwrap();
        db.commit(t0).unwrap();
        let mut t1 = db.begin();
        t1.record_reads(&ReadCheckVector::from_entries(vec![ReadCheckEntry::Table {
            db: "Hospital".into(),
            table_id: d,
            as_of: db.table_rvv("D").unwrap().log_position,
        }]));
        db.write(&mut t1, Change::Update { table: d, key: vec![Value::Int(1)], values: row(1, "b") }).unwrap();
        let mut t2 = db.begin();
        db.write(&mut t2, Change::Insert { table: h, values: vec![Value::Int(7)] }).unwrap();
        db.commit(t2).unwrap();
        db.commit(t1).unwrap();
    }

    #[test]
    fn recovery_replays_and_drops_torn_tail() {
        let (db, d) = hospital();
        let mut t = db.begin();
        db.write(&mut t, Change::Insert { table: d, values: row(1, "a") }).unwrap();
        db.commit(t).unwrap();
        let mid = db.log_image();
        let mid_state = db.snapshot();
        let mut t = db.begin();
        db.write(&mut t, Change::Insert { table: d, values: row(2, "b") }).unwrap();
        db.commit(t).unwrap();
        let full = db.log_image();
        assert_eq!(*Database::recover(&full).unwrap().snapshot(), *db.snapshot());
        let torn = &full[..mid.len() + (full.len() - mid.len()) / 2];
        assert_eq!(*Database::recover(torn).unwrap().snapshot(), *mid_state);
        let mut flipped = full.clone();
        let at = mid.len() + 12;
        flipped[at] ^= 1;
        assert!(matches!(Database::recover(&flipped), Err(StoreError::CorruptLog { .. })));
    }

    #[test]
    fn file_backed_database_reopens() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hospital.log");
        {
            let db = Database::open(&path, "Hospital").unwrap();
            let d = db.create_table("D", vec![col("ID", ColumnType::Int)], vec!["ID".into()]).unwrap();
            let mut t = db.begin();
            db.write(&mut t, Change::Insert { table: d, values: vec![Value::Int(1)] }).unwrap();
            db.commit(t).unwrap();
        }
        let db = Database::open(&path, "ignored").unwrap();
        assert_eq!(db.name(), "Hospital");
        assert!(db.row_rvv("D", &[Value::Int(1)]).is_ok());
    }

    #[test]
    fn prepared_rows_are_pinned_until_decision() {
        let (db, d) = hospital();
        let mut t = db.begin();
        db.write(&mut t, Change::Insert { table: d, values: row(1, "a") }).unwrap();
        db.write(&mut t, Change::Insert { table: d, values: row(2, "b") }).unwrap();
        db.commit(t).unwrap();
        let vote = db
            .prepare("T1", &ReadCheckVector::new(), vec![Change::Update { table: d, key: vec![Value::Int(1)], values: row(1, "x") }])
            .unwrap();
        assert_eq!(vote, Vote::Yes);
        let mut other = db.begin();
        db.write(&mut other, Change::Update { table: d, key: vec![Value::Int(1)], values: row(1, "y") }).unwrap();
        assert!(matches!(db.commit(other), Err(StoreError::Pinned { .. })));
        let mut unrelated = db.begin();
        db.write(&mut unrelated, Change::Update { table: d, key: vec![Value::Int(2)], values: row(2, "y") }).unwrap();
        db.commit(unrelated).unwrap();

        let image = db.log_image();
        let restarted = Database::recover(&image).unwrap();
        assert_eq!(restarted.pending_intents().len(), 1);
        let r1 = restarted.commit_prepared("T1").unwrap();
        let r2 = restarted.commit_prepared("T1").unwrap();
        assert_eq!(r1, r2);
        assert!(matches!(restarted.abort_prepared("T1"), Err(StoreError::TxnFinished(_))));
        assert!(matches!(restarted.commit_prepared("nope"), Err(StoreError::UnknownTxn(_))));
    }

    #[test]
    fn stale_prepare_votes_no_without_intent() {
        let (db, d) = hospital();
        let mut t = db.begin();
        db.write(&mut t, Change::Insert { table: d, values: row(1, "a") }).unwrap();
        db.commit(t).unwrap();
        let old = db.row_rvv("D", &[Value::Int(1)]).unwrap();
        let mut t = db.begin();
        db.write(&mut t, Change::Update { table: d, key: vec![Value::Int(1)], values: row(1, "b") }).unwrap();
        db.commit(t).unwrap();
        let before = db.log_image().len();
        let vote = db
            .prepare(
                "T9",
                &ReadCheckVector::from_entries(vec![ReadCheckEntry::Row(old)]),
                vec![Change::Delete { table: d, key: vec![Value::Int(1)] }],
            )
            .unwrap();
        assert!(matches!(vote, Vote::No(ref r) if r.stale.len() == 1));
        assert_eq!(db.log_image().len(), before);
        assert!(db.pending_intents().is_empty());
    }
}
