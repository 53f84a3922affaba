//! Coordinator-side transactions: RVV reads recorded in a context, staged
//! view writes, and optimistic two-phase commit over contractor nodes with a
//! durable decision log.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as J};
use thiserror::Error;

use crate::coordinator::{CoordError, Coordinator, RemoteTarget, SourceStatus};
use crate::engine::ViewWrite;
use crate::query::ResultSet;
use crate::readcheck::ValidatorItem;
use crate::wire::json::write_to_json;
use crate::wire::{Request, Transport};

#[derive(Debug, Error)]
pub enum TxnError {
    #[error(transparent)]
    Coord(#[from] CoordError),
    #[error("transaction {0} already finished")]
    AlreadyFinished(String),
    #[error("transaction {0} has nothing to commit")]
    Empty(String),
    #[error("decision log: {0}")]
    Log(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TxnState {
    Active,
    Validating,
    Prepared,
    Committed,
    Aborted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FailureKind {
    /// The read was already stale when first prechecked.
    StaleAtStart,
    ConcurrentUpdate,
    RowDeleted,
}

/// `(server, database set, timestamp, taNo)`. The timestamp is recorded but
/// plays no part in validation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TxnId {
    pub coordinator: String,
    pub sources: BTreeSet<String>,
    pub timestamp_ms: i64,
    pub ta_no: u64,
}

impl TxnId {
    /// Path-safe text used as the participants' tid.
    pub fn tid(&self) -> String {
        format!("{}.{}.{}", self.coordinator, self.timestamp_ms, self.ta_no)
    }
}

#[derive(Clone, Debug)]
pub struct StagedWrite {
    /// Global REST view the write was staged against.
    pub view: String,
    pub target: RemoteTarget,
    pub remote_view: String,
    /// Column names as the contractor knows them.
    pub write: ViewWrite,
}

#[derive(Debug)]
pub struct TxnContext {
    pub id: TxnId,
    /// (database, validator item), deduplicated, in read order.
    pub read_set: Vec<(String, String)>,
    pub staged: Vec<StagedWrite>,
    pub state: TxnState,
    /// Items found stale by the first precheck, if one ran.
    first_precheck: Option<Vec<String>>,
}

impl TxnContext {
    pub fn tid(&self) -> String {
        self.id.tid()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Precheck {
    Fresh,
    Stale(Vec<String>),
    /// Sources that could not be asked, with the reason.
    Unknown(Vec<(String, String)>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum CommitOutcome {
    Committed {
        /// Post-commit validators per write participant.
        validators: Vec<String>,
        /// Participants whose commit acknowledgement did not arrive; they
        /// finish on recovery.
        unacknowledged: Vec<String>,
    },
    Aborted(AbortReport),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AbortReport {
    /// `None` when the abort came from unreachable participants only.
    pub kind: Option<FailureKind>,
    pub stale: Vec<String>,
    pub missing: Vec<String>,
    pub pinned_by: Vec<String>,
    pub unreachable: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub authority: String,
    pub db: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum DecisionRecord {
    Decision { tid: String, commit: bool, participants: Vec<Participant> },
    Done { tid: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decision {
    pub tid: String,
    pub commit: bool,
    pub participants: Vec<Participant>,
    pub done: bool,
}

#[derive(Default)]
struct LogState {
    file: Option<File>,
    image: Vec<u8>,
    decisions: BTreeMap<String, Decision>,
}

/// Append-only decision log. Frames are `len:u32le crc32:u32le json`; a torn
/// or corrupt tail is dropped on recovery.
pub struct DecisionLog {
    path: Option<PathBuf>,
    state: Mutex<LogState>,
}

fn frame(rec: &DecisionRecord) -> Vec<u8> {
    let payload = serde_json::to_vec(rec).expect("records serialize");
    let mut out = Vec::with_capacity(payload.len() + 8);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

/// Records in `bytes` and the length of the intact prefix.
fn scan(bytes: &[u8]) -> (Vec<DecisionRecord>, usize) {
    let mut recs = Vec::new();
    let mut at = 0;
    while bytes.len() - at >= 8 {
        let len = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let crc = u32::from_le_bytes(bytes[at + 4..at + 8].try_into().unwrap());
        let Some(payload) = bytes.get(at + 8..at + 8 + len) else { break };
        if crc32fast::hash(payload) != crc {
            break;
        }
        let Ok(rec) = serde_json::from_slice(payload) else { break };
        recs.push(rec);
        at += 8 + len;
    }
    (recs, at)
}

fn apply(map: &mut BTreeMap<String, Decision>, rec: DecisionRecord) {
    match rec {
        DecisionRecord::Decision { tid, commit, participants } => {
            map.entry(tid.clone()).or_insert(Decision {
                tid,
                commit,
                participants,
                done: false,
            });
        }
        DecisionRecord::Done { tid } => {
            if let Some(d) = map.get_mut(&tid) {
                d.done = true;
            }
        }
    }
}

impl DecisionLog {
    pub fn in_memory() -> DecisionLog {
        DecisionLog {
            path: None,
            state: Mutex::new(LogState::default()),
        }
    }

    pub fn recover(bytes: &[u8]) -> DecisionLog {
        let (recs, good) = scan(bytes);
        let mut decisions = BTreeMap::new();
        for r in recs {
            apply(&mut decisions, r);
        }
        DecisionLog {
            path: None,
            state: Mutex::new(LogState {
                file: None,
                image: bytes[..good].to_vec(),
                decisions,
            }),
        }
    }

    /// Opens or creates the log at `path`, truncating a torn tail.
    pub fn open(path: impl AsRef<Path>) -> Result<DecisionLog, TxnError> {
        let path = path.as_ref().to_path_buf();
        let io = |e: std::io::Error| TxnError::Log(format!("{}: {e}", path.display()));
        let bytes = std::fs::read(&path).or_else(|e| if e.kind() == std::io::ErrorKind::NotFound { Ok(Vec::new()) } else { Err(e) }).map_err(io)?;
        let mut log = DecisionLog::recover(&bytes);
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        file.set_len(log.state.get_mut().image.len() as u64).map_err(io)?;
        log.state.get_mut().file = Some(file);
        log.path = Some(path);
        Ok(log)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn image(&self) -> Vec<u8> {
        self.state.lock().image.clone()
    }

    fn append(&self, rec: DecisionRecord) -> Result<(), TxnError> {
        let bytes = frame(&rec);
        let mut s = self.state.lock();
        if let Some(f) = s.file.as_mut() {
            f.write_all(&bytes).and_then(|_| f.sync_data()).map_err(|e| TxnError::Log(e.to_string()))?;
        }
        s.image.extend_from_slice(&bytes);
        apply(&mut s.decisions, rec);
        Ok(())
    }

    pub fn record(&self, tid: &str, commit: bool, participants: &[Participant]) -> Result<(), TxnError> {
        self.append(DecisionRecord::Decision {
            tid: tid.to_string(),
            commit,
            participants: participants.to_vec(),
        })
    }

    pub fn mark_done(&self, tid: &str) -> Result<(), TxnError> {
        self.append(DecisionRecord::Done { tid: tid.to_string() })
    }

    /// Durable outcome of `tid`; `None` when no decision was recorded.
    pub fn outcome(&self, tid: &str) -> Option<bool> {
        self.state.lock().decisions.get(tid).map(|d| d.commit)
    }

    /// Decisions whose phase 2 has not been confirmed everywhere.
    pub fn unfinished(&self) -> Vec<Decision> {
        self.state.lock().decisions.values().filter(|d| !d.done).cloned().collect()
    }
}

/// Asks the coordinator at `authority` for its recorded outcome of `tid`.
pub fn ask_coordinator(transport: &dyn Transport, authority: &str, coordinator: &str, tid: &str) -> Option<bool> {
    let resp = transport.send(authority, Request::get(format!("/{coordinator}/txn/{tid}"))).ok()?;
    if resp.status != 200 {
        return None;
    }
    resp.body_json().ok()?.get("outcome")?.as_bool()
}

pub struct TxnManager {
    coordinator: Arc<Coordinator>,
    decisions: Arc<DecisionLog>,
    next: AtomicU64,
}

fn now_ms() -> i64 {
    chrono::Utc::now().timestamp_millis()
}

enum Vote {
    Yes,
    No { stale: Vec<String>, missing: Vec<String>, pinned_by: Option<String> },
    Unknown,
}

fn strings(j: Option<&J>) -> Vec<String> {
    j.and_then(J::as_array)
        .map(|a| a.iter().filter_map(|s| s.as_str().map(str::to_string)).collect())
        .unwrap_or_default()
}

impl TxnManager {
    /// The manager attaches `decisions` to the coordinator so participants
    /// can query outcomes.
    pub fn new(coordinator: Arc<Coordinator>, decisions: Arc<DecisionLog>) -> TxnManager {
        coordinator.attach_decisions(decisions.clone());
        // Transaction numbers continue after any recovered ones.
        let start = decisions
            .state
            .lock()
            .decisions
            .keys()
            .filter_map(|t| t.rsplit('.').next()?.parse::<u64>().ok())
            .max()
            .unwrap_or(0);
        TxnManager {
            coordinator,
            decisions,
            next: AtomicU64::new(start + 1),
        }
    }

    pub fn coordinator(&self) -> &Arc<Coordinator> {
        &self.coordinator
    }

    pub fn decisions(&self) -> &Arc<DecisionLog> {
        &self.decisions
    }

    pub fn begin(&self) -> TxnContext {
        TxnContext {
            id: TxnId {
                coordinator: self.coordinator.name().to_string(),
                sources: BTreeSet::new(),
                timestamp_ms: now_ms(),
                ta_no: self.next.fetch_add(1, Ordering::SeqCst),
            },
            read_set: Vec::new(),
            staged: Vec::new(),
            state: TxnState::Active,
            first_precheck: None,
        }
    }

    fn active(ctx: &TxnContext) -> Result<(), TxnError> {
        match ctx.state {
            TxnState::Active => Ok(()),
            _ => Err(TxnError::AlreadyFinished(ctx.tid())),
        }
    }

    /// Runs a global query and records its validators. A cached fragment may
    /// already be stale; that is settled at validation.
    pub fn read(&self, ctx: &mut TxnContext, query: &str) -> Result<ResultSet, TxnError> {
        Self::active(ctx)?;
        let g = self.coordinator.execute_global(query)?;
        for item in &g.validator.items {
            let entry = (item.db().to_string(), item.to_string());
            if !ctx.read_set.contains(&entry) {
                ctx.id.sources.insert(entry.0.clone());
                ctx.read_set.push(entry);
            }
        }
        Ok(g.result)
    }

    /// Revalidates every recorded read at its source, bypassing caches.
    pub fn precheck(&self, ctx: &mut TxnContext) -> Precheck {
        let mut stale = Vec::new();
        let mut unknown = Vec::new();
        for (db, items) in group_reads(&ctx.read_set) {
            match self.coordinator.check_still_current(&items.join(";")) {
                Ok(report) => {
                    for (d, s) in report {
                        match s {
                            SourceStatus::Fresh => {}
                            SourceStatus::Stale(v) => stale.extend(v),
                            SourceStatus::Unknown(why) => unknown.push((d, why)),
                        }
                    }
                }
                Err(e) => unknown.push((db, e.to_string())),
            }
        }
        if ctx.first_precheck.is_none() && unknown.is_empty() {
            ctx.first_precheck = Some(stale.clone());
        }
        if !stale.is_empty() {
            Precheck::Stale(stale)
        } else if !unknown.is_empty() {
            Precheck::Unknown(unknown)
        } else {
            Precheck::Fresh
        }
    }

    /// Stages a write against a global REST view (declared column names).
    pub fn stage_write(&self, ctx: &mut TxnContext, view: &str, write: ViewWrite) -> Result<(), TxnError> {
        Self::active(ctx)?;
        let (target, remote_view, write) = self.coordinator.remote_write(view, &write)?;
        ctx.id.sources.insert(target.db.clone());
        ctx.staged.push(StagedWrite {
            view: view.to_string(),
            target,
            remote_view,
            write,
        });
        Ok(())
    }

    fn authority_of(&self, db: &str) -> Option<String> {
        self.coordinator
            .rest_views()
            .iter()
            .filter_map(|v| crate::coordinator::remote_target(v).ok())
            .find(|t| t.db == db)
            .map(|t| t.authority)
    }

    fn prepare(&self, tid: &str, p: &Participant, reads: &[String], writes: &[&StagedWrite]) -> Vote {
        let body = json!({
            "readChecks": reads,
            "writes": writes.iter().map(|w| write_to_json(&w.remote_view, &w.write)).collect::<Vec<_>>(),
        });
        let req = Request::new("POST", format!("/{}/txn/{tid}/prepare", p.db)).with_json(&body);
        let resp = match self.coordinator.transport().send(&p.authority, req) {
            Ok(r) => r,
            Err(_) => return Vote::Unknown,
        };
        if resp.status != 200 {
            return Vote::Unknown;
        }
        let Ok(body) = resp.body_json() else {
            return Vote::Unknown;
        };
        match body.get("vote").and_then(J::as_str) {
            Some("yes") => Vote::Yes,
            Some("no") => Vote::No {
                stale: strings(body.get("stale")),
                missing: strings(body.get("missing")),
                pinned_by: body.get("pinnedBy").and_then(J::as_str).map(str::to_string),
            },
            _ => Vote::Unknown,
        }
    }

    /// Sends the phase-2 message; true when the participant acknowledged.
    fn finish(&self, tid: &str, p: &Participant, commit: bool) -> Result<Option<Vec<String>>, ()> {
        let step = if commit { "commit" } else { "abort" };
        let req = Request::new("POST", format!("/{}/txn/{tid}/{step}", p.db));
        let resp = self.coordinator.transport().send(&p.authority, req).map_err(|_| ())?;
        match resp.status {
            200 => Ok(Some(resp.body_json().map(|b| strings(b.get("validators"))).unwrap_or_default())),
            // Abort of a tid the participant never prepared.
            404 if !commit => Ok(None),
            _ => Err(()),
        }
    }

    pub fn commit(&self, ctx: &mut TxnContext) -> Result<CommitOutcome, TxnError> {
        Self::active(ctx)?;
        if ctx.staged.is_empty() && ctx.read_set.is_empty() {
            return Err(TxnError::Empty(ctx.tid()));
        }
        ctx.state = TxnState::Validating;
        let tid = ctx.tid();
        let reads = group_reads(&ctx.read_set);
        let mut writers: BTreeMap<String, (Participant, Vec<&StagedWrite>)> = BTreeMap::new();
        for w in &ctx.staged {
            writers
                .entry(w.target.db.clone())
                .or_insert_with(|| {
                    (
                        Participant {
                            authority: w.target.authority.clone(),
                            db: w.target.db.clone(),
                        },
                        Vec::new(),
                    )
                })
                .1
                .push(w);
        }
        let mut report = AbortReport::default();
        let mut prepared_at: Vec<Participant> = Vec::new();
        for (db, (p, ws)) in &writers {
            let r = reads.get(db).cloned().unwrap_or_default();
            // An unanswered prepare may still have created an intent.
            prepared_at.push(p.clone());
            match self.prepare(&tid, p, &r, ws) {
                Vote::Yes => {}
                Vote::No { stale, missing, pinned_by } => {
                    report.stale.extend(stale);
                    report.missing.extend(missing);
                    report.pinned_by.extend(pinned_by);
                }
                Vote::Unknown => report.unreachable.push(db.clone()),
            }
        }
        for (db, items) in &reads {
            if writers.contains_key(db) {
                continue;
            }
            let status = match self.authority_of(db) {
                None => SourceStatus::Unknown(format!("no source for {db}")),
                Some(_) => match self.coordinator.check_still_current(&items.join(";")) {
                    Ok(mut v) if !v.is_empty() => v.remove(0).1,
                    Ok(_) => SourceStatus::Fresh,
                    Err(e) => SourceStatus::Unknown(e.to_string()),
                },
            };
            match status {
                SourceStatus::Fresh => {}
                SourceStatus::Stale(v) => report.stale.extend(v),
                SourceStatus::Unknown(_) => report.unreachable.push(db.clone()),
            }
        }
        let commit = report.stale.is_empty() && report.missing.is_empty() && report.pinned_by.is_empty() && report.unreachable.is_empty();
        let participants: Vec<Participant> = if commit { writers.values().map(|(p, _)| p.clone()).collect() } else { prepared_at };
        self.decisions.record(&tid, commit, &participants)?;
        if commit {
            ctx.state = TxnState::Prepared;
        }
        let mut validators = Vec::new();
        let mut unacknowledged = Vec::new();
        for p in &participants {
            match self.finish(&tid, p, commit) {
                Ok(v) => validators.extend(v.unwrap_or_default()),
                Err(()) => unacknowledged.push(p.db.clone()),
            }
        }
        if unacknowledged.is_empty() {
            self.decisions.mark_done(&tid)?;
        }
        if commit {
            ctx.state = TxnState::Committed;
            return Ok(CommitOutcome::Committed { validators, unacknowledged });
        }
        ctx.state = TxnState::Aborted;
        if !(report.stale.is_empty() && report.missing.is_empty() && report.pinned_by.is_empty()) {
            report.kind = Some(self.classify_failure(ctx, &report));
        }
        Ok(CommitOutcome::Aborted(report))
    }

    /// Re-reads every keyed write target without a validator: a vanished row
    /// means it was deleted; otherwise the read was stale from the start when
    /// the first precheck already said so.
    pub fn classify_failure(&self, ctx: &TxnContext, report: &AbortReport) -> FailureKind {
        for w in &ctx.staged {
            let key = match &w.write {
                ViewWrite::Update { key, .. } | ViewWrite::Delete { key } => key,
                ViewWrite::Insert { .. } => continue,
            };
            let path = format!("{}/{}", w.target.path, crate::wire::json::key_to_path(key));
            if let Ok(r) = self.coordinator.transport().send(&w.target.authority, Request::get(path)) {
                if r.status == 404 {
                    return FailureKind::RowDeleted;
                }
            }
        }
        match &ctx.first_precheck {
            Some(first) if report.stale.iter().any(|s| first.contains(s)) => FailureKind::StaleAtStart,
            _ => FailureKind::ConcurrentUpdate,
        }
    }

    /// Resends recorded decisions whose phase 2 was not confirmed; returns
    /// the tids now finished everywhere.
    pub fn recover(&self) -> Result<Vec<String>, TxnError> {
        let mut done = Vec::new();
        for d in self.decisions.unfinished() {
            if d.participants.iter().all(|p| self.finish(&d.tid, p, d.commit).is_ok()) {
                self.decisions.mark_done(&d.tid)?;
                done.push(d.tid);
            }
        }
        Ok(done)
    }
}

/// Read-set items per database, in first-read order within each database.
fn group_reads(read_set: &[(String, String)]) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (db, item) in read_set {
        out.entry(db.clone()).or_default().push(item.clone());
    }
    out
}

/// Validator items of `read_set` as parsed values.
pub fn read_items(ctx: &TxnContext) -> Vec<ValidatorItem> {
    ctx.read_set.iter().filter_map(|(_, i)| i.parse().ok()).collect()
}

/// Outcome lookups for a node settling in-doubt intents, by coordinator name.
pub fn decision_lookup(transport: Arc<dyn Transport>, coordinators: HashMap<String, String>) -> impl Fn(&str) -> Option<bool> {
    move |tid: &str| {
        let name = tid.split('.').next()?;
        let authority = coordinators.get(name)?;
        ask_coordinator(&*transport, authority, name, tid)
    }
}
