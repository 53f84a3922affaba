//! The requester: a global schema of REST views and views over them, query
//! decomposition with a revalidated fragment cache, freshness checks and
//! write-through to the owning contractor.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::RwLock;
use serde_json::{json, Value as J};
use thiserror::Error;

use crate::dsl::{self, DslError, Expr, FromItem, Query, Select, SelectItem, StatementKind};
use crate::engine::ViewWrite;
use crate::query::plan::natural_layout;
use crate::query::{
    self, bind, evaluate_assembly, Catalog, Fragment, JoinKind, QueryError, QueryPlan, Relation, ResultSet, RestViewDef,
    Schema, Subquery,
};
use crate::readcheck::{CombinedValidator, ReadCheckEntry, ReadCheckError, ReadCheckVector, ValidatorItem};
use crate::txn::DecisionLog;
use crate::value::{ColumnType, Value};
use crate::wire::json::{key_to_path, result_from_json, result_to_json, write_values_json};
use crate::wire::{quote, unquote, Handler, Request, Response, Transport};

#[derive(Debug, Error)]
pub enum CoordError {
    #[error(transparent)]
    Parse(#[from] DslError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Validator(#[from] ReadCheckError),
    #[error("view {0} already exists")]
    DuplicateView(String),
    #[error("source unavailable: {0}")]
    SourceUnavailable(String),
    #[error("schema mismatch from {0}: {1}")]
    SchemaMismatch(String, String),
    #[error("fragments kept changing; gave up after {0} attempts")]
    StaleRead(usize),
    #[error("{0} is not updatable")]
    NotUpdatable(String),
    #[error("write to {0} still stale after retry")]
    StaleAfterRetry(String),
    #[error("{url} answered {status}: {message}")]
    Remote { url: String, status: u16, message: String },
    #[error("unsupported at the coordinator: {0}")]
    Unsupported(String),
}

impl CoordError {
    /// Coarse class used for exit codes and wire errors.
    pub fn class(&self) -> &'static str {
        match self {
            CoordError::Parse(_) => "parse",
            CoordError::SourceUnavailable(_) | CoordError::SchemaMismatch(..) | CoordError::Remote { .. } => "network",
            CoordError::StaleRead(_) | CoordError::StaleAfterRetry(_) => "stale",
            _ => "query",
        }
    }

    fn status(&self) -> u16 {
        match self {
            CoordError::Parse(_) | CoordError::Query(_) | CoordError::Validator(_) | CoordError::Unsupported(_) => 400,
            CoordError::DuplicateView(_) => 409,
            CoordError::SourceUnavailable(_) | CoordError::SchemaMismatch(..) | CoordError::Remote { .. } => 502,
            CoordError::StaleRead(_) => 503,
            CoordError::NotUpdatable(_) => 405,
            CoordError::StaleAfterRetry(_) => 412,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CoordinatorConfig {
    pub name: String,
    /// Cached fragments younger than this are served without revalidation.
    pub trust_window: Duration,
    /// Whole-query retries when a fragment goes stale during assembly.
    pub max_stale_retries: usize,
    pub pushdown: bool,
    pub requester_id: Option<String>,
}

impl CoordinatorConfig {
    pub fn new(name: &str) -> CoordinatorConfig {
        CoordinatorConfig {
            name: name.to_string(),
            trust_window: Duration::ZERO,
            max_stale_retries: 2,
            pushdown: true,
            requester_id: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CacheEntry {
    pub fingerprint: String,
    pub result: ResultSet,
    pub lineage: Vec<ReadCheckVector>,
    pub validator: String,
    pub remote_columns: Vec<String>,
    pub key_columns: Option<Vec<String>>,
    pub fetched_at: Instant,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FetchKind {
    /// Full body transferred.
    Fetched,
    /// 304: cached body confirmed.
    NotModified,
    /// Served inside the trust window without asking.
    Trusted,
}

#[derive(Clone, Debug)]
pub struct FetchReport {
    pub fingerprint: String,
    pub kind: FetchKind,
}

#[derive(Clone, Debug)]
pub struct GlobalResult {
    /// Rows with per-row validators.
    pub result: ResultSet,
    pub validator: CombinedValidator,
    pub fetches: Vec<FetchReport>,
    pub attempts: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SourceStatus {
    Fresh,
    Stale(Vec<String>),
    Unknown(String),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WriteReport {
    pub affected: usize,
    pub validators: Vec<String>,
    pub retries: usize,
}

/// Where a REST view's rows live.
#[derive(Clone, Debug)]
pub struct RemoteTarget {
    pub authority: String,
    pub db: String,
    /// Path of the view resource, e.g. `/Statistics/Statistics/K`.
    pub path: String,
}

#[derive(Default)]
struct GlobalCatalog {
    rest: BTreeMap<String, RestViewDef>,
    views: BTreeMap<String, (String, Query)>,
}

impl Catalog for GlobalCatalog {
    fn relation(&self, name: &str) -> Option<Relation> {
        let k = name.to_ascii_lowercase();
        if let Some(r) = self.rest.get(&k) {
            return Some(Relation::Rest(r.clone()));
        }
        self.views.get(&k).map(|(_, q)| Relation::View(q.clone()))
    }
}

pub struct Coordinator {
    config: CoordinatorConfig,
    transport: Arc<dyn Transport>,
    catalog: RwLock<GlobalCatalog>,
    cache: RwLock<HashMap<String, Arc<CacheEntry>>>,
    decisions: RwLock<Option<Arc<DecisionLog>>>,
}

pub fn remote_target(view: &RestViewDef) -> Result<RemoteTarget, QueryError> {
    let u = view.parsed_url()?;
    let host = u.host_str().unwrap_or_default();
    let authority = match u.port_or_known_default() {
        Some(p) => format!("{host}:{p}"),
        None => host.to_string(),
    };
    Ok(RemoteTarget {
        authority,
        db: view.source_db(),
        path: u.path().trim_end_matches('/').to_string(),
    })
}

fn select_all(name: &str, filter: Option<Expr>) -> Query {
    Query::Select(Box::new(Select {
        projection: vec![SelectItem::Wildcard],
        from: FromItem::Relation {
            name: name.to_string(),
            alias: None,
        },
        filter,
        group_by: Vec::new(),
    }))
}

/// For each output column, the REST view columns it is a plain copy of.
fn origins(plan: &QueryPlan) -> Vec<Vec<(String, usize)>> {
    match plan {
        QueryPlan::RestGet { view, .. } => (0..view.columns.len()).map(|i| vec![(view.name.to_ascii_lowercase(), i)]).collect(),
        QueryPlan::Filter { input, .. } => origins(input),
        QueryPlan::Project { items, input, .. } => {
            let inner = origins(input);
            let schema = input.schema();
            items
                .iter()
                .map(|it| match &it.expr {
                    Expr::Column(c) => schema.resolve(c).map(|j| inner[j].clone()).unwrap_or_default(),
                    Expr::Ordinal(k) => inner.get(k - 1).cloned().unwrap_or_default(),
                    _ => Vec::new(),
                })
                .collect()
        }
        QueryPlan::Join { kind, left, right } => {
            let (lo, ro) = (origins(left), origins(right));
            match kind {
                JoinKind::On(_) => lo.into_iter().chain(ro).collect(),
                JoinKind::Natural => {
                    let layout = natural_layout(&left.schema(), &right.schema());
                    let mut out: Vec<Vec<(String, usize)>> = layout
                        .shared
                        .iter()
                        .map(|(i, j)| lo[*i].iter().chain(&ro[*j]).cloned().collect())
                        .collect();
                    out.extend(layout.left_rest.iter().map(|i| lo[*i].clone()));
                    out.extend(layout.right_rest.iter().map(|j| ro[*j].clone()));
                    out
                }
            }
        }
        other => vec![Vec::new(); other.schema().len()],
    }
}

impl Coordinator {
    pub fn new(config: CoordinatorConfig, transport: Arc<dyn Transport>) -> Coordinator {
        Coordinator {
            config,
            transport,
            catalog: RwLock::new(GlobalCatalog::default()),
            cache: RwLock::new(HashMap::new()),
            decisions: RwLock::new(None),
        }
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn config(&self) -> &CoordinatorConfig {
        &self.config
    }

    pub fn transport(&self) -> &Arc<dyn Transport> {
        &self.transport
    }

    pub fn attach_decisions(&self, log: Arc<DecisionLog>) {
        *self.decisions.write() = Some(log);
    }

    pub fn clear_cache(&self) {
        self.cache.write().clear();
    }

    pub fn cached(&self, fingerprint: &str) -> Option<Arc<CacheEntry>> {
        self.cache.read().get(fingerprint).cloned()
    }

    pub fn rest_view(&self, name: &str) -> Option<RestViewDef> {
        self.catalog.read().rest.get(&name.to_ascii_lowercase()).cloned()
    }

    pub fn rest_views(&self) -> Vec<RestViewDef> {
        self.catalog.read().rest.values().cloned().collect()
    }

    fn request(&self, req: Request) -> Request {
        match &self.config.requester_id {
            Some(id) => req.with_header(crate::node::REQUESTER_HEADER, id.clone()),
            None => req,
        }
    }

    fn send(&self, target: &RemoteTarget, req: Request) -> Result<Response, CoordError> {
        self.transport
            .send(&target.authority, self.request(req))
            .map_err(|e| CoordError::SourceUnavailable(format!("{}{}: {e}", target.authority, target.path)))
    }

    fn taken(&self, name: &str) -> bool {
        let c = self.catalog.read();
        let k = name.to_ascii_lowercase();
        c.rest.contains_key(&k) || c.views.contains_key(&k)
    }

    /// Registers a REST view. Without declared columns the remote's columns
    /// are adopted from one probe fetch.
    pub fn register_view(&self, mut def: RestViewDef) -> Result<(), CoordError> {
        def.parsed_url()?;
        if self.taken(&def.name) {
            return Err(CoordError::DuplicateView(def.name));
        }
        if def.columns.is_empty() {
            let target = remote_target(&def)?;
            let resp = self.send(&target, Request::get(target.path.clone()))?;
            if resp.status != 200 {
                return Err(CoordError::Remote {
                    url: def.url.clone(),
                    status: resp.status,
                    message: resp.error_message(),
                });
            }
            let body = resp.body_json().map_err(|e| CoordError::SchemaMismatch(def.url.clone(), e.to_string()))?;
            let w = result_from_json(&body, None).map_err(|e| CoordError::SchemaMismatch(def.url.clone(), e.to_string()))?;
            def.columns = w.result.columns;
        }
        let mut c = self.catalog.write();
        if c.rest.contains_key(&def.name.to_ascii_lowercase()) {
            return Err(CoordError::DuplicateView(def.name));
        }
        c.rest.insert(def.name.to_ascii_lowercase(), def);
        Ok(())
    }

    pub fn define_view(&self, name: &str, query: Query) -> Result<(), CoordError> {
        if self.taken(name) {
            return Err(CoordError::DuplicateView(name.to_string()));
        }
        {
            let c = self.catalog.read();
            query::build(&query, &*c)?;
        }
        self.catalog
            .write()
            .views
            .insert(name.to_ascii_lowercase(), (name.to_string(), query));
        Ok(())
    }

    /// Runs a script of view definitions, queries and writes.
    pub fn execute_script(&self, text: &str) -> Result<Vec<ScriptOutcome>, CoordError> {
        let stmts = dsl::parse(text)?;
        stmts.iter().map(|s| self.execute_statement(&s.kind)).collect()
    }

    pub fn execute_statement(&self, stmt: &StatementKind) -> Result<ScriptOutcome, CoordError> {
        match stmt {
            StatementKind::CreateViewRest(v) => {
                self.register_view(RestViewDef {
                    name: v.name.clone(),
                    columns: v.columns.iter().map(|c| (c.name.clone(), c.ty)).collect(),
                    url: v.url.clone(),
                    uri_type: v.uri_type.clone(),
                })?;
                Ok(ScriptOutcome::Created(v.name.clone()))
            }
            StatementKind::CreateViewSelect { name, query } => {
                self.define_view(name, query.clone())?;
                Ok(ScriptOutcome::Created(name.clone()))
            }
            StatementKind::Select(q) => Ok(ScriptOutcome::Rows(self.execute_query(q)?)),
            StatementKind::Update(u) => Ok(ScriptOutcome::Written(self.update(&u.target, &u.assignments, u.filter.as_ref())?)),
            StatementKind::Delete(d) => Ok(ScriptOutcome::Written(self.delete(&d.target, d.filter.as_ref())?)),
            StatementKind::Insert(ins) => {
                let mut total = WriteReport::default();
                let empty = Schema::default();
                for row in &ins.rows {
                    let values = row
                        .iter()
                        .map(|e| query::eval_expr(e, &empty, &[]))
                        .collect::<Result<Vec<_>, _>>()?;
                    let r = self.insert(&ins.table, ins.columns.as_deref(), values)?;
                    total.affected += r.affected;
                    total.validators.extend(r.validators);
                }
                Ok(ScriptOutcome::Written(total))
            }
            StatementKind::CreateTable(t) => Err(CoordError::Unsupported(format!("table {} (the coordinator stores no data)", t.name))),
        }
    }

    pub fn execute_global(&self, text: &str) -> Result<GlobalResult, CoordError> {
        let q = dsl::parse_query(text)?;
        self.execute_query(&q)
    }

    fn decompose(&self, q: &Query) -> Result<query::Rewritten, CoordError> {
        let naive = {
            let c = self.catalog.read();
            query::build(q, &*c)?
        };
        Ok(if self.config.pushdown {
            query::rewrite_over_views(naive)
        } else {
            query::rewrite_without_pushdown(naive)
        })
    }

    pub fn execute_query(&self, q: &Query) -> Result<GlobalResult, CoordError> {
        let rw = self.decompose(q)?;
        if rw.subqueries.is_empty() {
            return Err(CoordError::Unsupported("query reads no REST view".into()));
        }
        let mut attempts = 0;
        loop {
            attempts += 1;
            let fetched = self.fetch_all(&rw.subqueries)?;
            let fragments: HashMap<String, Fragment> = fetched
                .iter()
                .map(|(e, _)| {
                    (
                        e.fingerprint.clone(),
                        Fragment {
                            rows: e.result.rows.clone(),
                            lineage: e.lineage.clone(),
                        },
                    )
                })
                .collect();
            let ev = evaluate_assembly(&rw.assembly, &fragments)?;
            // Fragments fetched at different moments only form a consistent
            // answer if they all still hold once assembled.
            if rw.subqueries.len() > 1 {
                let stale = self.any_stale(&rw.subqueries, &fetched)?;
                if stale {
                    if attempts > self.config.max_stale_retries {
                        return Err(CoordError::StaleRead(attempts));
                    }
                    continue;
                }
            }
            let mut validator = CombinedValidator::default();
            for (e, _) in &fetched {
                let cv: CombinedValidator = e.validator.parse()?;
                for item in cv.items {
                    validator.push(item);
                }
            }
            return Ok(GlobalResult {
                result: ev.result,
                validator,
                fetches: fetched
                    .iter()
                    .map(|(e, k)| FetchReport {
                        fingerprint: e.fingerprint.clone(),
                        kind: *k,
                    })
                    .collect(),
                attempts,
            });
        }
    }

    fn fetch_all(&self, subs: &[Subquery]) -> Result<Vec<(Arc<CacheEntry>, FetchKind)>, CoordError> {
        let results: Vec<Result<(Arc<CacheEntry>, FetchKind), CoordError>> = std::thread::scope(|s| {
            let handles: Vec<_> = subs.iter().map(|sub| s.spawn(move || self.fetch(sub))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(CoordError::Unsupported("fetch panicked".into()))))
                .collect()
        });
        results.into_iter().collect()
    }

    fn fetch(&self, sub: &Subquery) -> Result<(Arc<CacheEntry>, FetchKind), CoordError> {
        let target = remote_target(&sub.view)?;
        let mut params = url::form_urlencoded::Serializer::new(String::new());
        params.append_pair("rc", "1");
        if let Some(p) = &sub.pushed {
            params.append_pair("where", &p.to_string());
        }
        let cached = self.cached(&sub.fingerprint);
        if let Some(c) = &cached {
            if !self.config.trust_window.is_zero() && c.fetched_at.elapsed() < self.config.trust_window {
                return Ok((c.clone(), FetchKind::Trusted));
            }
        }
        let mut req = Request::get(format!("{}?{}", target.path, params.finish()));
        if let Some(c) = &cached {
            req = req.with_header("If-None-Match", quote(&c.validator));
        }
        let resp = self.send(&target, req)?;
        match (resp.status, cached) {
            (304, Some(c)) => {
                let e = Arc::new(CacheEntry {
                    fetched_at: Instant::now(),
                    ..(*c).clone()
                });
                self.cache.write().insert(sub.fingerprint.clone(), e.clone());
                Ok((e, FetchKind::NotModified))
            }
            (200, _) => {
                let e = Arc::new(self.decode(sub, &target, &resp)?);
                self.cache.write().insert(sub.fingerprint.clone(), e.clone());
                Ok((e, FetchKind::Fetched))
            }
            (status, _) => Err(CoordError::Remote {
                url: sub.url.clone(),
                status,
                message: resp.error_message(),
            }),
        }
    }

    fn decode(&self, sub: &Subquery, target: &RemoteTarget, resp: &Response) -> Result<CacheEntry, CoordError> {
        let mismatch = |m: String| CoordError::SchemaMismatch(sub.url.clone(), m);
        let validator = resp.etag().ok_or_else(|| mismatch("response carries no validator".into()))?;
        let body = resp.body_json().map_err(|e| mismatch(e.to_string()))?;
        let w = result_from_json(&body, None).map_err(|e| mismatch(e.to_string()))?;
        let (mut rs, remote_columns) = retype(w.result, &sub.view.columns).map_err(mismatch)?;
        let lineage = match rs.per_row_validators.take() {
            Some(v) => v
                .iter()
                .map(|s| {
                    let l = ReadCheckVector::parse_row(s)?;
                    Ok(if l.is_empty() {
                        ReadCheckVector::from_entries([ReadCheckEntry::Absent(target.db.clone())])
                    } else {
                        l
                    })
                })
                .collect::<Result<Vec<_>, ReadCheckError>>()?,
            None => vec![ReadCheckVector::from_entries([ReadCheckEntry::Absent(target.db.clone())]); rs.rows.len()],
        };
        Ok(CacheEntry {
            fingerprint: sub.fingerprint.clone(),
            result: rs,
            lineage,
            validator,
            remote_columns,
            key_columns: w.key_columns,
            fetched_at: Instant::now(),
        })
    }

    /// Posts each fragment's validator to its source, bypassing the cache.
    fn any_stale(&self, subs: &[Subquery], fetched: &[(Arc<CacheEntry>, FetchKind)]) -> Result<bool, CoordError> {
        for (sub, (e, _)) in subs.iter().zip(fetched) {
            let target = remote_target(&sub.view)?;
            let cv: CombinedValidator = e.validator.parse()?;
            if let SourceStatus::Stale(_) = self.validate_at(&target, &cv.items)? {
                return Ok(true);
            }
        }
        Ok(false)
    }

    fn validate_at(&self, target: &RemoteTarget, items: &[ValidatorItem]) -> Result<SourceStatus, CoordError> {
        let list: Vec<String> = items.iter().map(|i| i.to_string()).collect();
        let req = Request::new("POST", format!("/{}/validate", target.db)).with_json(&json!({ "validators": list }));
        let resp = self.send(target, req)?;
        if resp.status != 200 {
            return Err(CoordError::Remote {
                url: format!("{}/{}/validate", target.authority, target.db),
                status: resp.status,
                message: resp.error_message(),
            });
        }
        let body = resp.body_json().map_err(|e| CoordError::SchemaMismatch(target.authority.clone(), e.to_string()))?;
        let mut stale = Vec::new();
        for r in body.get("results").and_then(J::as_array).into_iter().flatten() {
            if r.get("fresh").and_then(J::as_bool) != Some(true) {
                stale.push(r.get("validator").and_then(J::as_str).unwrap_or_default().to_string());
            }
        }
        Ok(if stale.is_empty() { SourceStatus::Fresh } else { SourceStatus::Stale(stale) })
    }

    /// Source of database `db` among registered REST views.
    fn target_for_db(&self, db: &str) -> Option<RemoteTarget> {
        self.catalog
            .read()
            .rest
            .values()
            .filter_map(|v| remote_target(v).ok())
            .find(|t| t.db == db)
    }

    /// Asks every source named in `validator` whether its items still hold.
    pub fn check_still_current(&self, validator: &str) -> Result<Vec<(String, SourceStatus)>, CoordError> {
        let cv: CombinedValidator = validator.parse()?;
        let mut out = Vec::new();
        for db in cv.databases() {
            let items: Vec<ValidatorItem> = cv.items_for(&db).into_iter().cloned().collect();
            let status = match self.target_for_db(&db) {
                None => SourceStatus::Unknown(format!("no registered source for {db}")),
                Some(t) => match self.validate_at(&t, &items) {
                    Ok(s) => s,
                    Err(e) => SourceStatus::Unknown(e.to_string()),
                },
            };
            out.push((db, status));
        }
        Ok(out)
    }

    fn target_plan(&self, target: &str) -> Result<QueryPlan, CoordError> {
        let c = self.catalog.read();
        Ok(query::build(&select_all(target, None), &*c)?)
    }

    /// Key column names and remote column names of a REST view, learned from
    /// a fetch.
    fn view_meta(&self, view: &RestViewDef) -> Result<Arc<CacheEntry>, CoordError> {
        let fp = query::fingerprint(view, None);
        let entry = match self.cached(&fp) {
            Some(e) => e,
            None => {
                let rw = query::rewrite_without_pushdown(QueryPlan::RestGet {
                    view: view.clone(),
                    qualifier: view.name.clone(),
                    pushed: None,
                });
                self.fetch(&rw.subqueries[0])?.0
            }
        };
        if entry.key_columns.is_none() {
            return Err(CoordError::NotUpdatable(view.name.clone()));
        }
        Ok(entry)
    }

    /// The one REST view behind the given columns of `target`.
    fn owning_view(&self, target: &str, plan: &QueryPlan, columns: &[usize]) -> Result<RestViewDef, CoordError> {
        let org = origins(plan);
        let mut common: Option<Vec<String>> = None;
        for &c in columns {
            let views: Vec<String> = org[c].iter().map(|(v, _)| v.clone()).collect();
            common = Some(match common {
                None => views,
                Some(prev) => prev.into_iter().filter(|v| views.contains(v)).collect(),
            });
        }
        let name = common
            .and_then(|c| c.into_iter().next())
            .ok_or_else(|| CoordError::NotUpdatable(target.to_string()))?;
        self.rest_view(&name).ok_or_else(|| CoordError::NotUpdatable(target.to_string()))
    }

    /// Positions in `plan`'s output holding each key column of `view`.
    fn key_positions(&self, plan: &QueryPlan, view: &RestViewDef, meta: &CacheEntry, target: &str) -> Result<Vec<(usize, usize)>, CoordError> {
        let org = origins(plan);
        let vname = view.name.to_ascii_lowercase();
        let keys = meta.key_columns.as_ref().ok_or_else(|| CoordError::NotUpdatable(view.name.clone()))?;
        keys.iter()
            .map(|k| {
                let vi = meta
                    .remote_columns
                    .iter()
                    .position(|r| r.eq_ignore_ascii_case(k))
                    .ok_or_else(|| CoordError::NotUpdatable(view.name.clone()))?;
                let ti = org
                    .iter()
                    .position(|o| o.contains(&(vname.clone(), vi)))
                    .ok_or_else(|| CoordError::NotUpdatable(format!("{target} (key {k} not visible)")))?;
                Ok((ti, vi))
            })
            .collect()
    }

    /// Fresh single-row read: the row typed by the view's declared columns
    /// and its validator, or `None` when the row is gone.
    fn read_row(&self, view: &RestViewDef, key: &[Value]) -> Result<Option<(Vec<Value>, String)>, CoordError> {
        let target = remote_target(view)?;
        let resp = self.send(&target, Request::get(format!("{}/{}", target.path, key_to_path(key))))?;
        match resp.status {
            404 => Ok(None),
            200 => {
                let tag = resp.etag().unwrap_or_default();
                let body = resp.body_json().map_err(|e| CoordError::SchemaMismatch(view.url.clone(), e.to_string()))?;
                let w = result_from_json(&body, None).map_err(|e| CoordError::SchemaMismatch(view.url.clone(), e.to_string()))?;
                let (rs, _) = retype(w.result, &view.columns).map_err(|m| CoordError::SchemaMismatch(view.url.clone(), m))?;
                Ok(rs.rows.into_iter().next().map(|r| (r, tag)))
            }
            s => Err(CoordError::Remote {
                url: view.url.clone(),
                status: s,
                message: resp.error_message(),
            }),
        }
    }

    /// `update target set ... where ...`, written through to the single REST
    /// view owning the assigned columns.
    pub fn update(&self, target: &str, assignments: &[(String, Expr)], filter: Option<&Expr>) -> Result<WriteReport, CoordError> {
        let plan = self.target_plan(target)?;
        let schema = plan.schema();
        let assigned: Vec<usize> = assignments
            .iter()
            .map(|(c, _)| schema.position(c).ok_or_else(|| QueryError::UnknownColumn(c.clone())))
            .collect::<Result<_, _>>()?;
        let view = self.owning_view(target, &plan, &assigned)?;
        let meta = self.view_meta(&view)?;
        let keys = self.key_positions(&plan, &view, &meta, target)?;
        let vname = view.name.to_ascii_lowercase();
        let org = origins(&plan);
        let exprs = assignments
            .iter()
            .map(|(_, e)| Ok(bind(e, &schema)?.0))
            .collect::<Result<Vec<_>, QueryError>>()?;
        let pred = filter.map(|f| bind(f, &schema)).transpose()?.map(|b| b.0);
        let rows = self.execute_query(&select_all(target, filter.cloned()))?.result.rows;
        let mut report = WriteReport::default();
        for row in rows {
            let key: Vec<Value> = keys.iter().map(|(ti, _)| row[*ti].clone()).collect();
            let mut done = false;
            for attempt in 0..2 {
                let Some((fresh, tag)) = self.read_row(&view, &key)? else {
                    done = true;
                    break;
                };
                let mut current = row.clone();
                for (ti, o) in org.iter().enumerate() {
                    if let Some((_, vi)) = o.iter().find(|(v, _)| *v == vname) {
                        current[ti] = fresh[*vi].clone();
                    }
                }
                if let Some(p) = &pred {
                    if !p.test(&current)? {
                        done = true;
                        break;
                    }
                }
                let mut values = Vec::new();
                for ((&ti, b), (name, _)) in assigned.iter().zip(&exprs).zip(assignments) {
                    let vi = org[ti]
                        .iter()
                        .find(|(v, _)| *v == vname)
                        .map(|(_, i)| *i)
                        .ok_or_else(|| CoordError::NotUpdatable(format!("{target}.{name}")))?;
                    let ty = view.columns[vi].1;
                    let v = b.eval(&current)?;
                    let v = v
                        .coerce(ty)
                        .ok_or_else(|| QueryError::TypeError(format!("{v} is not a valid {ty} for {name}")))?;
                    values.push((meta.remote_columns[vi].clone(), v));
                }
                let rt = remote_target(&view)?;
                let req = Request::new("PUT", format!("{}/{}", rt.path, key_to_path(&key)))
                    .with_header("If-Match", quote(&tag))
                    .with_json(&write_values_json(&values));
                let resp = self.send(&rt, req)?;
                match resp.status {
                    204 | 200 => {
                        report.affected += 1;
                        report.validators.extend(resp.etag());
                        done = true;
                        break;
                    }
                    412 if attempt == 0 => report.retries += 1,
                    412 => return Err(CoordError::StaleAfterRetry(view.name.clone())),
                    404 => {
                        done = true;
                        break;
                    }
                    s => {
                        return Err(CoordError::Remote {
                            url: view.url.clone(),
                            status: s,
                            message: resp.error_message(),
                        })
                    }
                }
            }
            if !done {
                return Err(CoordError::StaleAfterRetry(view.name.clone()));
            }
        }
        Ok(report)
    }

    /// Every column of `target` must come from one REST view.
    fn whole_row_view(&self, target: &str, plan: &QueryPlan) -> Result<RestViewDef, CoordError> {
        let all: Vec<usize> = (0..plan.schema().len()).collect();
        let view = self.owning_view(target, plan, &all)?;
        Ok(view)
    }

    pub fn delete(&self, target: &str, filter: Option<&Expr>) -> Result<WriteReport, CoordError> {
        let plan = self.target_plan(target)?;
        let view = self.whole_row_view(target, &plan)?;
        let meta = self.view_meta(&view)?;
        let keys = self.key_positions(&plan, &view, &meta, target)?;
        let rows = self.execute_query(&select_all(target, filter.cloned()))?.result.rows;
        let mut report = WriteReport::default();
        for row in rows {
            let key: Vec<Value> = keys.iter().map(|(ti, _)| row[*ti].clone()).collect();
            let mut done = false;
            for attempt in 0..2 {
                let Some((_, tag)) = self.read_row(&view, &key)? else {
                    done = true;
                    break;
                };
                let rt = remote_target(&view)?;
                let req = Request::new("DELETE", format!("{}/{}", rt.path, key_to_path(&key))).with_header("If-Match", quote(&tag));
                let resp = self.send(&rt, req)?;
                match resp.status {
                    204 | 200 => {
                        report.affected += 1;
                        report.validators.extend(resp.etag());
                        done = true;
                        break;
                    }
                    412 if attempt == 0 => report.retries += 1,
                    404 => {
                        done = true;
                        break;
                    }
                    412 => return Err(CoordError::StaleAfterRetry(view.name.clone())),
                    s => {
                        return Err(CoordError::Remote {
                            url: view.url.clone(),
                            status: s,
                            message: resp.error_message(),
                        })
                    }
                }
            }
            if !done {
                return Err(CoordError::StaleAfterRetry(view.name.clone()));
            }
        }
        Ok(report)
    }

    pub fn insert(&self, target: &str, columns: Option<&[String]>, values: Vec<Value>) -> Result<WriteReport, CoordError> {
        let plan = self.target_plan(target)?;
        let schema = plan.schema();
        let view = self.whole_row_view(target, &plan)?;
        let meta = self.view_meta(&view)?;
        let org = origins(&plan);
        let names: Vec<String> = match columns {
            Some(c) => c.to_vec(),
            None => schema.names(),
        };
        if names.len() != values.len() {
            return Err(QueryError::TypeError(format!("{} values for {} columns", values.len(), names.len())).into());
        }
        let vname = view.name.to_ascii_lowercase();
        let mut body = Vec::new();
        for (n, v) in names.iter().zip(values) {
            let ti = schema.position(n).ok_or_else(|| QueryError::UnknownColumn(n.clone()))?;
            let vi = org[ti]
                .iter()
                .find(|(x, _)| *x == vname)
                .map(|(_, i)| *i)
                .ok_or_else(|| CoordError::NotUpdatable(target.to_string()))?;
            let ty = view.columns[vi].1;
            let v = v.coerce(ty).ok_or_else(|| QueryError::TypeError(format!("{v} is not a valid {ty} for {n}")))?;
            body.push((meta.remote_columns[vi].clone(), v));
        }
        let rt = remote_target(&view)?;
        let resp = self.send(&rt, Request::new("POST", rt.path.clone()).with_json(&write_values_json(&body)))?;
        match resp.status {
            200 | 201 | 204 => Ok(WriteReport {
                affected: 1,
                validators: resp.etag().into_iter().collect(),
                retries: 0,
            }),
            s => Err(CoordError::Remote {
                url: view.url.clone(),
                status: s,
                message: resp.error_message(),
            }),
        }
    }

    /// Remote form of a write against REST view `view` whose column names
    /// are the declared ones: returns the source, the remote view name and
    /// the write with remote column names.
    pub fn remote_write(&self, view: &str, write: &ViewWrite) -> Result<(RemoteTarget, String, ViewWrite), CoordError> {
        let def = self.rest_view(view).ok_or_else(|| QueryError::UnknownRelation(view.to_string()))?;
        let meta = self.view_meta(&def)?;
        let rename = |values: &[(String, Value)]| -> Result<Vec<(String, Value)>, CoordError> {
            values
                .iter()
                .map(|(n, v)| {
                    let i = def
                        .columns
                        .iter()
                        .position(|(c, _)| c.eq_ignore_ascii_case(n))
                        .ok_or_else(|| QueryError::UnknownColumn(n.clone()))?;
                    Ok((meta.remote_columns[i].clone(), v.clone()))
                })
                .collect()
        };
        let w = match write {
            ViewWrite::Insert { values } => ViewWrite::Insert { values: rename(values)? },
            ViewWrite::Update { key, values } => ViewWrite::Update {
                key: key.clone(),
                values: rename(values)?,
            },
            ViewWrite::Delete { key } => ViewWrite::Delete { key: key.clone() },
        };
        let target = remote_target(&def)?;
        let remote_view = target.path.rsplit('/').next().unwrap_or_default().to_string();
        Ok((target, remote_view, w))
    }

    fn route(&self, req: &Request) -> Result<Response, CoordError> {
        let segs: Vec<&str> = req.path().split('/').filter(|s| !s.is_empty()).collect();
        let name = self.config.name.as_str();
        match (req.method.as_str(), segs.as_slice()) {
            ("GET", [n, "txn", tid]) if *n == name => {
                let outcome = self.decisions.read().as_ref().and_then(|d| d.outcome(tid));
                Ok(Response::json(200, &json!({"tid": tid, "outcome": outcome})))
            }
            ("GET", [n, _, view]) if *n == name => {
                let filter = match req.query_param("where") {
                    Some(text) => Some(crate::dsl::parse_expr(&text)?),
                    None => None,
                };
                let g = self.execute_query(&select_all(view, filter))?;
                let tag = g.validator.to_string();
                if let Some(inm) = req.header("If-None-Match") {
                    if inm.split(',').any(|t| unquote(t) == tag) {
                        return Ok(Response::empty(304).with_header("ETag", quote(&tag)));
                    }
                }
                let mut rs = g.result;
                if req.query_param("rc").as_deref() != Some("1") {
                    rs.per_row_validators = None;
                }
                Ok(Response::json(200, &result_to_json(&rs, None)).with_header("ETag", quote(&tag)))
            }
            ("POST", [n, "sql"]) if *n == name => {
                let text = String::from_utf8_lossy(&req.body).to_string();
                let outs = self.execute_script(&text)?;
                Ok(Response::json(
                    200,
                    &json!({"statements": outs.len(), "outcomes": outs.iter().map(ScriptOutcome::to_json).collect::<Vec<_>>()}),
                ))
            }
            ("POST", [n, "validate"]) if *n == name => {
                let body: J = serde_json::from_slice(&req.body).unwrap_or(J::Null);
                let v = body.get("validator").and_then(J::as_str).unwrap_or_default();
                let report = self.check_still_current(v)?;
                let sources: Vec<J> = report.iter().map(|(db, s)| status_json(db, s)).collect();
                Ok(Response::json(200, &json!({ "sources": sources })))
            }
            _ => Err(CoordError::Remote {
                url: req.path().to_string(),
                status: 404,
                message: "no such route".into(),
            }),
        }
    }
}

pub fn status_json(db: &str, s: &SourceStatus) -> J {
    match s {
        SourceStatus::Fresh => json!({"db": db, "status": "fresh"}),
        SourceStatus::Stale(v) => json!({"db": db, "status": "stale", "stale": v}),
        SourceStatus::Unknown(why) => json!({"db": db, "status": "unknown", "reason": why}),
    }
}

/// Renames and retypes a remote result to the declared columns; returns it
/// with the remote column names.
fn retype(rs: ResultSet, declared: &[(String, ColumnType)]) -> Result<(ResultSet, Vec<String>), String> {
    let remote: Vec<String> = rs.columns.iter().map(|(n, _)| n.clone()).collect();
    if declared.is_empty() {
        return Ok((rs, remote));
    }
    if declared.len() != rs.columns.len() {
        return Err(format!("{} columns returned, {} declared", rs.columns.len(), declared.len()));
    }
    let mut rows = Vec::with_capacity(rs.rows.len());
    for r in rs.rows {
        let row = r
            .into_iter()
            .zip(declared)
            .map(|(v, (n, t))| v.coerce(*t).ok_or_else(|| format!("{v} is not a valid {t} for {n}")))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok((
        ResultSet {
            columns: declared.to_vec(),
            rows,
            per_row_validators: rs.per_row_validators,
        },
        remote,
    ))
}

#[derive(Debug)]
pub enum ScriptOutcome {
    Created(String),
    Rows(GlobalResult),
    Written(WriteReport),
}

impl ScriptOutcome {
    pub fn to_json(&self) -> J {
        match self {
            ScriptOutcome::Created(n) => json!({"kind": "created", "name": n}),
            ScriptOutcome::Rows(g) => {
                let mut j = result_to_json(&g.result, None);
                j["kind"] = json!("rows");
                j["validator"] = json!(g.validator.to_string());
                j
            }
            ScriptOutcome::Written(w) => json!({"kind": "written", "count": w.affected, "validators": w.validators, "retries": w.retries}),
        }
    }
}

impl Handler for Coordinator {
    fn handle(&self, req: Request) -> Response {
        match self.route(&req) {
            Ok(r) => r,
            Err(CoordError::Remote { status: 404, message, .. }) => Response::error(404, message),
            Err(e) => {
                let mut body = json!({"error": e.to_string(), "code": e.class()});
                if let CoordError::Parse(p) = &e {
                    body["position"] = json!(p.position());
                }
                Response::json(e.status(), &body)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{LocalCluster, HOSPITAL_AUTHORITY, STATISTICS_AUTHORITY};
    use crate::scripts::{PERCENTAGE_QUERY, TOTALS_QUERY, UPDATE_STATEMENT};

    #[test]
    fn percentage_query_over_two_sources() {
        let c = LocalCluster::start();
        let g = c.coordinator.execute_global(PERCENTAGE_QUERY).unwrap();
        eprintln!("{:?}\n{}", g.result, g.validator);
        assert_eq!(g.result.rows.len(), 2);
        assert_eq!(g.validator.items.len(), 2);
    }

    #[test]
    fn repeat_is_all_not_modified() {
        let c = LocalCluster::start();
        c.coordinator.execute_global(TOTALS_QUERY).unwrap();
        c.transport.reset_traffic();
        let g = c.coordinator.execute_global(TOTALS_QUERY).unwrap();
        assert!(g.fetches.iter().all(|f| f.kind == FetchKind::NotModified));
        for a in [HOSPITAL_AUTHORITY, STATISTICS_AUTHORITY] {
            let t = c.transport.traffic(a);
            assert_eq!(t.not_modified, 1, "{a}");
        }
    }

    #[test]
    fn update_through_global_view() {
        let c = LocalCluster::start();
        let before = c.coordinator.execute_global("select rCode, inhabitants from V2 where rCode = 3").unwrap();
        let outs = c.coordinator.execute_script(UPDATE_STATEMENT).unwrap();
        let ScriptOutcome::Written(w) = &outs[0] else { panic!() };
        assert_eq!(w.affected, 1);
        let after = c.coordinator.execute_global("select inhabitants, under10 from V2 where rCode = 3").unwrap();
        assert_eq!(after.result.rows, vec![vec![Value::Int(199000), Value::Int(49000)]]);
        let status = c.coordinator.check_still_current(&before.validator.to_string()).unwrap();
        assert!(matches!(status[0].1, SourceStatus::Stale(_)));
    }

    #[test]
    fn aggregate_view_is_not_updatable() {
        let c = LocalCluster::start();
        let e = c.coordinator.execute_script("update V1 set treatment = 'x' where rCode = 2").unwrap_err();
        assert!(matches!(e, CoordError::NotUpdatable(_)), "{e}");
    }

    #[test]
    fn duplicate_and_unreachable_views() {
        let c = LocalCluster::start();
        let e = c.coordinator.execute_script("create view V1 of (a int) as get 'http://servD1:8180/Hospital/Hospital/E'").unwrap_err();
        assert!(matches!(e, CoordError::DuplicateView(_)));
        c.transport.set_down(HOSPITAL_AUTHORITY, true);
        let e = c.coordinator.execute_global(TOTALS_QUERY).unwrap_err();
        assert_eq!(e.class(), "network");
    }
}
