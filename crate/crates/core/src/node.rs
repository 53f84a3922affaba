//! A contractor: serves one database's views over the wire with validators,
//! conditional requests, preconditioned writes, revalidation and 2PC
//! participation.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as J};

use crate::dsl::{self, BinaryOp, Expr};
use crate::engine::{updatable_at, Engine, EngineError, Outcome, UpdatableView, ViewWrite};
use crate::query::{Evaluated, QueryError};
use crate::readcheck::{CombinedValidator, Freshness, ReadCheckVector, ValidatorItem};
use crate::store::{Database, Snapshot, StoreError, Vote};
use crate::value::{ColumnType, Value};
use crate::wire::json::{key_from_path, result_to_json, values_from_json};
use crate::wire::{quote, unquote, Handler, Request, Response};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Access {
    #[serde(default)]
    pub read: bool,
    #[serde(default)]
    pub write: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub db_name: String,
    #[serde(default)]
    pub listen: Option<String>,
    #[serde(default)]
    pub log_path: Option<PathBuf>,
    /// Views served over the wire; `None` serves every view and table.
    #[serde(default)]
    pub views: Option<Vec<String>>,
    /// requester id → view name (or "*") → access. Empty means open access.
    #[serde(default)]
    pub permissions: HashMap<String, HashMap<String, Access>>,
}

impl NodeConfig {
    pub fn open(db_name: &str) -> NodeConfig {
        NodeConfig {
            db_name: db_name.to_string(),
            ..NodeConfig::default()
        }
    }

    fn exposes(&self, view: &str) -> bool {
        match &self.views {
            Some(v) => v.iter().any(|n| n.eq_ignore_ascii_case(view)),
            None => true,
        }
    }

    fn access(&self, requester: Option<&str>, view: &str) -> Access {
        if self.permissions.is_empty() {
            return Access { read: true, write: true };
        }
        let Some(grants) = requester.and_then(|r| self.permissions.get(r)) else {
            return Access::default();
        };
        grants
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(view))
            .or_else(|| grants.get_key_value("*"))
            .map(|(_, a)| *a)
            .unwrap_or_default()
    }
}

pub const REQUESTER_HEADER: &str = "X-Requester";

pub struct Node {
    config: NodeConfig,
    engine: RwLock<Arc<Engine>>,
}

struct Reply(Response);

impl From<EngineError> for Reply {
    fn from(e: EngineError) -> Reply {
        let status = match &e {
            EngineError::Parse(_) => 400,
            EngineError::Query(QueryError::UnknownRelation(_)) => 404,
            EngineError::Query(_) => 400,
            EngineError::Store(s) => return Reply::from(StoreErrorRef(s)),
            EngineError::NotUpdatable(_) => 405,
            EngineError::Unsupported(_) => 400,
        };
        Reply(Response::error(status, e.to_string()))
    }
}

struct StoreErrorRef<'a>(&'a StoreError);

impl From<StoreErrorRef<'_>> for Reply {
    fn from(StoreErrorRef(e): StoreErrorRef<'_>) -> Reply {
        let status = match e {
            StoreError::SerializationConflict { .. } => 412,
            StoreError::NotFound { .. } | StoreError::UnknownTable(_) | StoreError::UnknownTxn(_) => 404,
            StoreError::DuplicateKey { .. } | StoreError::Pinned { .. } | StoreError::TxnFinished(_) => 409,
            StoreError::DuplicateTable(_) | StoreError::DuplicateView(_) => 409,
            StoreError::TypeMismatch(_) | StoreError::InvalidDefinition(_) => 400,
            StoreError::CorruptLog { .. } | StoreError::Io(_) => 500,
        };
        let mut body = json!({ "error": e.to_string() });
        if let StoreError::SerializationConflict { stale } = e {
            body["stale"] = json!(stale);
        }
        Reply(Response::json(status, &body))
    }
}

impl From<StoreError> for Reply {
    fn from(e: StoreError) -> Reply {
        Reply::from(StoreErrorRef(&e))
    }
}

impl From<crate::wire::WireError> for Reply {
    fn from(e: crate::wire::WireError) -> Reply {
        Reply(Response::error(400, e.to_string()))
    }
}

type Handled = Result<Response, Reply>;

fn parse_body(req: &Request) -> Result<J, Reply> {
    serde_json::from_slice(&req.body).map_err(|e| Reply(Response::error(400, format!("malformed body: {e}"))))
}

/// JSON summary of one statement's outcome.
pub fn outcome_json(o: &Outcome, snap: &Snapshot) -> J {
    match o {
        Outcome::Created(name) => json!({"kind": "created", "name": name}),
        Outcome::Rows(ev) => {
            let mut j = result_to_json(&ev.result, None);
            j["kind"] = json!("rows");
            j["validator"] = json!(ev.vector.render());
            j
        }
        Outcome::Written(n, receipt) => json!({
            "kind": "written",
            "count": n,
            "validator": receipt.as_ref().map(|r| r.validators(snap).render()).unwrap_or_default(),
        }),
    }
}

impl Node {
    /// Serves `db`; an exposed view list naming unknown views is rejected.
    pub fn new(config: NodeConfig, db: Arc<Database>) -> Result<Node, String> {
        if let Some(views) = &config.views {
            let snap = db.snapshot();
            for v in views {
                if snap.view(v).is_none() && snap.table_by_name(v).is_none() {
                    return Err(format!("exposed view {v} does not exist"));
                }
            }
        }
        Ok(Node {
            config,
            engine: RwLock::new(Arc::new(Engine::new(db))),
        })
    }

    /// Opens (or creates) the database named by the config, on disk when a
    /// log path is configured.
    pub fn open(config: NodeConfig) -> Result<Node, StoreError> {
        let db = match &config.log_path {
            Some(p) => Database::open(p, &config.db_name)?,
            None => Database::in_memory(&config.db_name),
        };
        Node::new(config, Arc::new(db)).map_err(StoreError::InvalidDefinition)
    }

    pub fn config(&self) -> &NodeConfig {
        &self.config
    }

    pub fn engine(&self) -> Arc<Engine> {
        self.engine.read().clone()
    }

    pub fn database(&self) -> Arc<Database> {
        self.engine().database().clone()
    }

    /// Simulates a crash and restart: all in-memory state is dropped and the
    /// database is rebuilt from its log.
    pub fn restart(&self) -> Result<(), StoreError> {
        let mut guard = self.engine.write();
        let old = guard.database().clone();
        let db = match old.path() {
            Some(p) => {
                let p = p.to_path_buf();
                drop(old);
                Database::open(p, &self.config.db_name)?
            }
            None => Database::recover(&old.log_image())?,
        };
        *guard = Arc::new(Engine::new(Arc::new(db)));
        Ok(())
    }

    /// Settles intents older than `timeout_ms` by asking `decide` for the
    /// coordinator's recorded outcome; undecided intents stay pinned.
    pub fn resolve_in_doubt(&self, now_ms: i64, timeout_ms: i64, decide: impl Fn(&str) -> Option<bool>) -> Vec<(String, bool)> {
        let db = self.database();
        let mut settled = Vec::new();
        for intent in db.pending_intents() {
            if now_ms - intent.timestamp_ms < timeout_ms {
                continue;
            }
            match decide(&intent.tid) {
                Some(true) if db.commit_prepared(&intent.tid).is_ok() => settled.push((intent.tid, true)),
                Some(false) if db.abort_prepared(&intent.tid).is_ok() => settled.push((intent.tid, false)),
                _ => {}
            }
        }
        settled
    }

    fn route(&self, req: &Request) -> Handled {
        let segs: Vec<&str> = req.path().split('/').filter(|s| !s.is_empty()).collect();
        let not_found = || Reply(Response::error(404, format!("no route {} {}", req.method, req.path())));
        let Some((&db, rest)) = segs.split_first() else {
            return Err(not_found());
        };
        if db != self.config.db_name {
            return Err(Reply(Response::error(404, format!("unknown database {db}"))));
        }
        match (req.method.as_str(), rest) {
            ("POST", ["validate"]) => self.validate(req),
            ("POST", ["sql"]) => self.sql(req),
            ("POST", ["txn", tid, step]) => self.txn(req, tid, step),
            ("GET", ["txn", tid]) => Ok(Response::json(200, &json!({"tid": tid, "outcome": self.database().tid_outcome(tid)}))),
            ("GET", [_, view]) => self.get(req, view, None),
            ("GET", [_, view, key]) => self.get(req, view, Some(key)),
            ("PUT", [_, view, key]) => self.put(req, view, key),
            ("DELETE", [_, view, key]) => self.delete(req, view, key),
            ("POST", [_, view]) => self.post(req, view),
            _ => Err(not_found()),
        }
    }

    fn check(&self, req: &Request, view: &str, write: bool) -> Result<(), Reply> {
        if !self.config.exposes(view) {
            return Err(Reply(Response::error(404, format!("unknown view {view}"))));
        }
        let a = self.config.access(req.header(REQUESTER_HEADER), view);
        if (write && !a.write) || (!write && !a.read) {
            return Err(Reply(Response::error(403, format!("no {} access to {view}", if write { "write" } else { "read" }))));
        }
        Ok(())
    }

    fn updatable(&self, snap: &Snapshot, view: &str) -> Result<(UpdatableView, Vec<ColumnType>), Reply> {
        let u = updatable_at(snap, view)?;
        let types = self.view_types(snap, view)?;
        Ok((u, types))
    }

    fn view_types(&self, snap: &Snapshot, view: &str) -> Result<Vec<ColumnType>, Reply> {
        let plan = self.engine().view_plan(snap, view, None)?;
        Ok(plan.schema().fields.iter().map(|f| f.ty).collect())
    }

    fn key_predicate(u: &UpdatableView, key: &[Value]) -> Expr {
        Expr::conjoin(
            u.key_positions
                .iter()
                .zip(key)
                .map(|(&p, v)| Expr::binary(BinaryOp::Eq, Expr::Ordinal(p + 1), Expr::Literal(v.clone())))
                .collect::<Vec<_>>(),
        )
        .expect("keys are non-empty")
    }

    fn get(&self, req: &Request, view: &str, key: Option<&str>) -> Handled {
        self.check(req, view, false)?;
        let engine = self.engine();
        let snap = engine.database().snapshot();
        let mut pushed = match req.query_param("where") {
            Some(text) => Some(dsl::parse_expr(&text).map_err(EngineError::from)?),
            None => None,
        };
        let mut key_cols = None;
        if let Ok((u, _)) = self.updatable(&snap, view) {
            key_cols = Some(u.key_positions.iter().map(|&i| u.view_columns[i].clone()).collect::<Vec<_>>());
        }
        if let Some(seg) = key {
            let (u, types) = self.updatable(&snap, view)?;
            let kt: Vec<ColumnType> = u.key_positions.iter().map(|&i| types[i]).collect();
            let k = key_from_path(seg, &kt)?;
            let kp = Self::key_predicate(&u, &k);
            pushed = Some(match pushed {
                Some(p) => Expr::binary(BinaryOp::And, kp, p),
                None => kp,
            });
        }
        let ev: Evaluated = engine.query_view(&snap, view, pushed.as_ref())?;
        if key.is_some() && ev.result.rows.is_empty() {
            return Err(Reply(Response::error(404, "no such row")));
        }
        let tag = ev.vector.render();
        if let Some(inm) = req.header("If-None-Match") {
            if inm.split(',').any(|t| unquote(t) == tag) {
                return Ok(Response::empty(304).with_header("ETag", quote(&tag)));
            }
        }
        let mut rs = ev.result;
        if req.query_param("rc").as_deref() != Some("1") {
            rs.per_row_validators = None;
        }
        Ok(Response::json(200, &result_to_json(&rs, key_cols.as_deref())).with_header("ETag", quote(&tag)))
    }

    /// The If-Match validator restricted to this database; `*` is no
    /// precondition.
    fn if_match(&self, req: &Request, required: bool) -> Result<ReadCheckVector, Reply> {
        match req.header("If-Match") {
            None if required => Err(Reply(Response::error(428, "If-Match required"))),
            None => Ok(ReadCheckVector::new()),
            Some(t) if t.trim() == "*" => Ok(ReadCheckVector::new()),
            Some(t) => {
                let cv: CombinedValidator = unquote(t)
                    .parse()
                    .map_err(|e: crate::readcheck::ReadCheckError| Reply(Response::error(400, e.to_string())))?;
                Ok(cv.to_vector().for_db(&self.config.db_name))
            }
        }
    }

    fn commit_writes(&self, view: &str, writes: &[ViewWrite], reads: &ReadCheckVector, status: u16) -> Handled {
        let engine = self.engine();
        let receipt = engine.apply_writes(view, writes, reads)?;
        let snap = engine.database().snapshot();
        let tag = receipt.validators(&snap).render();
        Ok(Response::empty(status).with_header("ETag", quote(&tag)))
    }

    fn put(&self, req: &Request, view: &str, key: &str) -> Handled {
        self.check(req, view, true)?;
        let snap = self.database().snapshot();
        let (u, types) = self.updatable(&snap, view)?;
        let reads = self.if_match(req, true)?;
        let kt: Vec<ColumnType> = u.key_positions.iter().map(|&i| types[i]).collect();
        let key = key_from_path(key, &kt)?;
        let body = parse_body(req)?;
        let values = values_from_json(&body, |c| u.view_column(c).map(|i| types[i]))?;
        self.commit_writes(view, &[ViewWrite::Update { key, values }], &reads, 204)
    }

    fn delete(&self, req: &Request, view: &str, key: &str) -> Handled {
        self.check(req, view, true)?;
        let snap = self.database().snapshot();
        let (u, types) = self.updatable(&snap, view)?;
        let reads = self.if_match(req, true)?;
        let kt: Vec<ColumnType> = u.key_positions.iter().map(|&i| types[i]).collect();
        let key = key_from_path(key, &kt)?;
        self.commit_writes(view, &[ViewWrite::Delete { key }], &reads, 204)
    }

    fn post(&self, req: &Request, view: &str) -> Handled {
        self.check(req, view, true)?;
        let snap = self.database().snapshot();
        let (u, types) = self.updatable(&snap, view)?;
        let reads = self.if_match(req, false)?;
        let body = parse_body(req)?;
        let values = values_from_json(&body, |c| u.view_column(c).map(|i| types[i]))?;
        self.commit_writes(view, &[ViewWrite::Insert { values }], &reads, 201)
    }

    fn validate(&self, req: &Request) -> Handled {
        let body = parse_body(req)?;
        let list = body.get("validators").unwrap_or(&body);
        let items = list
            .as_array()
            .ok_or_else(|| Reply(Response::error(400, "expected a list of validators")))?;
        let snap = self.database().snapshot();
        let mut results = Vec::new();
        for it in items {
            let text = it.as_str().ok_or_else(|| Reply(Response::error(400, "validator is not a string")))?;
            let item: ValidatorItem = text
                .parse()
                .map_err(|e: crate::readcheck::ReadCheckError| Reply(Response::error(400, e.to_string())))?;
            let stale = match item.to_vector().for_db(&self.config.db_name).validate(&snap) {
                Freshness::Fresh => Vec::new(),
                Freshness::Stale(s) => s.iter().map(|e| e.to_string()).collect(),
            };
            results.push(json!({"validator": text, "fresh": stale.is_empty(), "stale": stale}));
        }
        Ok(Response::json(200, &json!({ "results": results })))
    }

    fn sql(&self, req: &Request) -> Handled {
        let text = String::from_utf8_lossy(&req.body).to_string();
        let engine = self.engine();
        match engine.execute_script(&text) {
            Ok(outs) => {
                let snap = engine.database().snapshot();
                let outcomes: Vec<J> = outs.iter().map(|o| outcome_json(o, &snap)).collect();
                Ok(Response::json(200, &json!({ "statements": outs.len(), "outcomes": outcomes })))
            }
            Err(e) => {
                let (status, code) = match e.error {
                    EngineError::Parse(_) => (400, "parse"),
                    _ => (422, "query"),
                };
                Ok(Response::json(
                    status,
                    &json!({"error": e.to_string(), "code": code, "index": e.index, "position": e.position}),
                ))
            }
        }
    }

    fn txn(&self, req: &Request, tid: &str, step: &str) -> Handled {
        let db = self.database();
        match step {
            "prepare" => {
                let body = parse_body(req)?;
                let rc: Vec<String> = body
                    .get("readChecks")
                    .and_then(J::as_array)
                    .map(|a| a.iter().filter_map(|s| s.as_str().map(str::to_string)).collect())
                    .unwrap_or_default();
                let reads = ReadCheckVector::parse_items(&rc)
                    .map_err(|e| Reply(Response::error(400, e.to_string())))?
                    .for_db(&self.config.db_name);
                let snap = db.snapshot();
                let mut changes = Vec::new();
                let mut missing = Vec::new();
                let empty = Vec::new();
                for w in body.get("writes").and_then(J::as_array).unwrap_or(&empty) {
                    let view = w.get("view").and_then(J::as_str).ok_or_else(|| Reply(Response::error(400, "write without view")))?;
                    self.check(req, view, true)?;
                    let write = self.decode_write(&snap, view, w)?;
                match crate::engine::base_changes(&snap, view, std::slice::from_ref(&write)) {
                    Ok(c) => changes.extend(c),
                    Err(EngineError::Store(StoreError::NotFound { table, key })) => missing.push(format!("{table}({key})")),
                    Err(e) => return Err(e.into()),
                }
                }
                if !missing.is_empty() {
                    return Ok(Response::json(200, &json!({"vote": "no", "stale": [], "missing": missing, "pinnedBy": null})));
                }
                match db.prepare(tid, &reads, changes)? {
                    Vote::Yes => Ok(Response::json(200, &json!({"vote": "yes"}))),
                    Vote::No(r) => Ok(Response::json(
                        200,
                        &json!({"vote": "no", "stale": r.stale, "missing": r.missing, "pinnedBy": r.pinned_by}),
                    )),
                }
            }
            "commit" => {
                let receipt = db.commit_prepared(tid)?;
                let snap = db.snapshot();
                Ok(Response::json(200, &json!({"validators": receipt.validators(&snap).render_items()})))
            }
            "abort" => {
                db.abort_prepared(tid)?;
                Ok(Response::json(200, &json!({"aborted": tid})))
            }
            _ => Err(Reply(Response::error(404, format!("unknown step {step}")))),
        }
    }

    fn decode_write(&self, snap: &Snapshot, view: &str, w: &J) -> Result<ViewWrite, Reply> {
        let (u, types) = self.updatable(snap, view)?;
        let kt: Vec<ColumnType> = u.key_positions.iter().map(|&i| types[i]).collect();
        let values = |w: &J| match w.get("values") {
            Some(v) => values_from_json(v, |c| u.view_column(c).map(|i| types[i])),
            None => Ok(Vec::new()),
        };
        let key = |w: &J| crate::wire::json::key_from_json(w.get("key").unwrap_or(&J::Null), &kt);
        Ok(match w.get("op").and_then(J::as_str) {
            Some("insert") => ViewWrite::Insert { values: values(w)? },
            Some("update") => ViewWrite::Update {
                key: key(w)?,
                values: values(w)?,
            },
            Some("delete") => ViewWrite::Delete { key: key(w)? },
            other => return Err(Reply(Response::error(400, format!("unknown write op {other:?}")))),
        })
    }
}

impl Handler for Node {
    fn handle(&self, req: Request) -> Response {
        match self.route(&req) {
            Ok(r) => r,
            Err(Reply(r)) => r,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scripts;

    fn statistics() -> Node {
        let db = Arc::new(Database::in_memory("Statistics"));
        Engine::new(db.clone()).execute_script(scripts::STATISTICS).unwrap();
        Node::new(NodeConfig::open("Statistics"), db).unwrap()
    }

    fn is_etag(t: &str) -> bool {
        let (db, rest) = t.split_once('|').unwrap();
        let (pos, tables) = rest.split_once('|').unwrap();
        db == "Statistics" && pos.parse::<u64>().is_ok() && tables.starts_with('[') && tables.ends_with("-0]")
    }

    #[test]
    fn get_then_conditional_get() {
        let n = statistics();
        let r = n.handle(Request::get("/Statistics/Statistics/K"));
        assert_eq!(r.status, 200);
        let tag = r.etag().unwrap();
        assert!(is_etag(&tag), "{tag}");
        let r2 = n.handle(Request::get("/Statistics/Statistics/K").with_header("If-None-Match", quote(&tag)));
        assert_eq!(r2.status, 304);
        assert!(r2.body.is_empty());
    }

    #[test]
    fn put_needs_fresh_if_match() {
        let n = statistics();
        let r = n.handle(Request::get("/Statistics/Statistics/K/3"));
        assert_eq!(r.status, 200);
        let tag = r.etag().unwrap();
        assert!(tag.starts_with("Statistics:"), "{tag}");
        let put = || Request::new("PUT", "/Statistics/Statistics/K/3").with_json(&json!({"inhabitants": 199000, "under10": 49000}));
        assert_eq!(n.handle(put()).status, 428);
        let ok = n.handle(put().with_header("If-Match", quote(&tag)));
        assert_eq!(ok.status, 204);
        assert!(ok.etag().is_some());
        assert_eq!(n.handle(put().with_header("If-Match", quote(&tag))).status, 412);
        let row = n.handle(Request::get("/Statistics/Statistics/K/3")).body_json().unwrap();
        assert_eq!(row["rows"][0][2], 199000);
    }

    #[test]
    fn aggregate_view_refuses_writes() {
        let db = Arc::new(Database::in_memory("Hospital"));
        Engine::new(db.clone()).execute_script(scripts::HOSPITAL).unwrap();
        let n = Node::new(NodeConfig::open("Hospital"), db).unwrap();
        let r = n.handle(Request::new("DELETE", "/Hospital/Hospital/E/2").with_header("If-Match", "*"));
        assert_eq!(r.status, 405);
    }

    #[test]
    fn validate_reports_deleted_row_stale() {
        let n = statistics();
        let tag = n.handle(Request::get("/Statistics/Statistics/K/2")).etag().unwrap();
        let v = |n: &Node| {
            n.handle(Request::new("POST", "/Statistics/validate").with_json(&json!([tag.clone()])))
                .body_json()
                .unwrap()["results"][0]["fresh"]
                .clone()
        };
        assert_eq!(v(&n), json!(true));
        let del = n.handle(Request::new("DELETE", "/Statistics/Statistics/K/2").with_header("If-Match", quote(&tag)));
        assert_eq!(del.status, 204);
        assert_eq!(v(&n), json!(false));
        let bad = n.handle(Request::new("POST", "/Statistics/validate").with_json(&json!(["nonsense"])));
        assert_eq!(bad.status, 400);
    }

    #[test]
    fn permissions_are_enforced() {
        let db = Arc::new(Database::in_memory("Statistics"));
        Engine::new(db.clone()).execute_script(scripts::STATISTICS).unwrap();
        let mut cfg = NodeConfig::open("Statistics");
        cfg.views = Some(vec!["K".into()]);
        cfg.permissions.insert("who".into(), HashMap::from([("K".into(), Access { read: true, write: false })]));
        let n = Node::new(cfg, db).unwrap();
        assert_eq!(n.handle(Request::get("/Statistics/Statistics/K")).status, 403);
        assert_eq!(n.handle(Request::get("/Statistics/Statistics/K").with_header(REQUESTER_HEADER, "who")).status, 200);
        assert_eq!(n.handle(Request::get("/Statistics/Statistics/H").with_header(REQUESTER_HEADER, "who")).status, 404);
        let put = Request::new("PUT", "/Statistics/Statistics/K/3")
            .with_header(REQUESTER_HEADER, "who")
            .with_header("If-Match", "*")
            .with_json(&json!({"under10": 1}));
        assert_eq!(n.handle(put).status, 403);
    }

    #[test]
    fn prepare_commit_survives_restart() {
        let n = statistics();
        let body = json!({"readChecks": [], "writes": [{"view": "K", "op": "update", "key": [1], "values": {"under10": 7}}]});
        let r = n.handle(Request::new("POST", "/Statistics/txn/t1/prepare").with_json(&body));
        assert_eq!(r.body_json().unwrap()["vote"], "yes");
        n.restart().unwrap();
        let c = n.handle(Request::new("POST", "/Statistics/txn/t1/commit"));
        assert_eq!(c.status, 200);
        let again = n.handle(Request::new("POST", "/Statistics/txn/t1/commit"));
        assert_eq!(again.status, 200);
        let row = n.handle(Request::get("/Statistics/Statistics/K/1")).body_json().unwrap();
        assert_eq!(row["rows"][0][3], 7);
        assert_eq!(n.handle(Request::new("POST", "/Statistics/txn/nope/commit")).status, 404);
    }
}
