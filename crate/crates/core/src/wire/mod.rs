//! Minimal HTTP-shaped request/response contract shared by the real network
//! stack and an in-process transport used for deterministic tests.

pub mod http;
pub mod json;

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Request {
    pub method: String,
    /// Path plus optional `?query`.
    pub target: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl Request {
    pub fn new(method: &str, target: impl Into<String>) -> Request {
        Request {
            method: method.to_ascii_uppercase(),
            target: target.into(),
            headers: Vec::new(),
            body: Vec::new(),
        }
    }

    pub fn get(target: impl Into<String>) -> Request {
        Request::new("GET", target)
    }

    pub fn with_header(mut self, name: &str, value: impl Into<String>) -> Request {
        self.headers.push((name.to_string(), value.into()));
        self
    }

    pub fn with_json(mut self, body: &serde_json::Value) -> Request {
        self.body = body.to_string().into_bytes();
        self.headers.push(("Content-Type".into(), "application/json".into()));
        self
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        header_in(&self.headers, name)
    }

    pub fn path(&self) -> &str {
        self.target.split('?').next().unwrap_or("")
    }

    /// Decoded query parameters in order.
    pub fn query(&self) -> Vec<(String, String)> {
        match self.target.split_once('?') {
            Some((_, q)) => url::form_urlencoded::parse(q.as_bytes()).into_owned().collect(),
            None => Vec::new(),
        }
    }

    pub fn query_param(&self, name: &str) -> Option<String> {
        self.query().into_iter().find(|(k, _)| k == name).map(|(_, v)| v)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl Response {
    pub fn empty(status: u16) -> Response {
        Response {
            status,
            headers: Vec::new(),
            body: Vec::new(),
        }
    }

    pub fn json(status: u16, body: &serde_json::Value) -> Response {
        Response {
            status,
            headers: vec![("Content-Type".into(), "application/json".into())],
            body: body.to_string().into_bytes(),
        }
    }

    pub fn error(status: u16, message: impl Into<String>) -> Response {
        Response::json(status, &serde_json::json!({ "error": message.into() }))
    }

    pub fn with_header(mut self, name: &str, value: impl Into<String>) -> Response {
        self.headers.push((name.to_string(), value.into()));
        self
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        header_in(&self.headers, name)
    }

    pub fn etag(&self) -> Option<String> {
        self.header("ETag").map(unquote)
    }

    pub fn body_json(&self) -> Result<serde_json::Value, WireError> {
        serde_json::from_slice(&self.body).map_err(|e| WireError::BadBody(e.to_string()))
    }

    /// Message of an error response, or the status line otherwise.
    pub fn error_message(&self) -> String {
        self.body_json()
            .ok()
            .and_then(|j| j.get("error").and_then(|e| e.as_str()).map(str::to_string))
            .unwrap_or_else(|| format!("status {}", self.status))
    }
}

fn header_in<'a>(headers: &'a [(String, String)], name: &str) -> Option<&'a str> {
    headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case(name))
        .map(|(_, v)| v.as_str())
}

/// Validator strings contain no quotes, so quoting is cosmetic; accept both.
pub fn quote(tag: &str) -> String {
    format!("\"{tag}\"")
}

pub fn unquote(tag: &str) -> String {
    let t = tag.trim();
    let t = t.strip_prefix("W/").unwrap_or(t);
    t.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(t).to_string()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WireError {
    #[error("{0} unavailable")]
    Unavailable(String),
    #[error("malformed body: {0}")]
    BadBody(String),
}

pub trait Handler: Send + Sync {
    fn handle(&self, req: Request) -> Response;
}

pub trait Transport: Send + Sync {
    /// Sends `req` to the server at `authority` ("host:port").
    fn send(&self, authority: &str, req: Request) -> Result<Response, WireError>;
}

/// Per-authority traffic seen by a [`LocalTransport`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Traffic {
    pub requests: u64,
    /// Response body bytes delivered to the caller.
    pub body_bytes: u64,
    /// Body bytes of GET responses only: transferred result data.
    pub result_bytes: u64,
    pub not_modified: u64,
}

/// What to do with one request before or after it reaches its handler.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// The request never arrives.
    DropRequest,
    /// The handler runs but its response is lost.
    DropResponse,
}

type FaultRule = Box<dyn Fn(&str, &Request) -> Option<Fault> + Send + Sync>;

/// In-process transport: routes by authority to registered handlers, counts
/// traffic and can inject faults.
#[derive(Default)]
pub struct LocalTransport {
    routes: RwLock<HashMap<String, Arc<dyn Handler>>>,
    down: RwLock<HashSet<String>>,
    traffic: Mutex<HashMap<String, Traffic>>,
    rule: RwLock<Option<FaultRule>>,
}

impl LocalTransport {
    pub fn new() -> LocalTransport {
        LocalTransport::default()
    }

    pub fn register(&self, authority: &str, handler: Arc<dyn Handler>) {
        self.routes.write().insert(authority.to_ascii_lowercase(), handler);
    }

    pub fn set_down(&self, authority: &str, down: bool) {
        let mut d = self.down.write();
        if down {
            d.insert(authority.to_ascii_lowercase());
        } else {
            d.remove(&authority.to_ascii_lowercase());
        }
    }

    pub fn set_fault_rule(&self, rule: impl Fn(&str, &Request) -> Option<Fault> + Send + Sync + 'static) {
        *self.rule.write() = Some(Box::new(rule));
    }

    pub fn clear_fault_rule(&self) {
        *self.rule.write() = None;
    }

    pub fn traffic(&self, authority: &str) -> Traffic {
        self.traffic.lock().get(&authority.to_ascii_lowercase()).cloned().unwrap_or_default()
    }

    pub fn reset_traffic(&self) {
        self.traffic.lock().clear();
    }
}

impl Transport for LocalTransport {
    fn send(&self, authority: &str, req: Request) -> Result<Response, WireError> {
        // URL hosts arrive lowercased.
        let authority = authority.to_ascii_lowercase();
        let authority = authority.as_str();
        if self.down.read().contains(authority) {
            return Err(WireError::Unavailable(authority.to_string()));
        }
        let fault = self.rule.read().as_ref().and_then(|r| r(authority, &req));
        if fault == Some(Fault::DropRequest) {
            return Err(WireError::Unavailable(authority.to_string()));
        }
        let handler = self
            .routes
            .read()
            .get(authority)
            .cloned()
            .ok_or_else(|| WireError::Unavailable(authority.to_string()))?;
        let is_get = req.method == "GET";
        let resp = handler.handle(req);
        if fault == Some(Fault::DropResponse) {
            return Err(WireError::Unavailable(authority.to_string()));
        }
        let mut t = self.traffic.lock();
        let e = t.entry(authority.to_string()).or_default();
        e.requests += 1;
        e.body_bytes += resp.body.len() as u64;
        if is_get {
            e.result_bytes += resp.body.len() as u64;
        }
        if resp.status == 304 {
            e.not_modified += 1;
        }
        Ok(resp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Echo;
    impl Handler for Echo {
        fn handle(&self, req: Request) -> Response {
            Response {
                status: 200,
                headers: Vec::new(),
                body: req.target.into_bytes(),
            }
        }
    }

    #[test]
    fn query_params_are_decoded() {
        let r = Request::get("/a/b?where=%24age%20%3C%2010&rc=1");
        assert_eq!(r.path(), "/a/b");
        assert_eq!(r.query_param("where").as_deref(), Some("$age < 10"));
        assert_eq!(r.query_param("rc").as_deref(), Some("1"));
    }

    #[test]
    fn local_transport_counts_and_faults() {
        let t = LocalTransport::new();
        t.register("a:1", Arc::new(Echo));
        let r = t.send("a:1", Request::get("/xyz")).unwrap();
        assert_eq!(r.body, b"/xyz");
        assert_eq!(t.traffic("a:1").body_bytes, 4);
        t.send("a:1", Request::new("POST", "/ab")).unwrap();
        assert_eq!(t.traffic("A:1").body_bytes, 7);
        assert_eq!(t.traffic("a:1").result_bytes, 4);
        t.set_down("a:1", true);
        assert!(t.send("a:1", Request::get("/")).is_err());
        t.set_down("a:1", false);
        t.set_fault_rule(|_, r| (r.method == "POST").then_some(Fault::DropResponse));
        assert!(t.send("a:1", Request::new("POST", "/")).is_err());
        assert!(t.send("b:2", Request::get("/")).is_err());
    }

    #[test]
    fn etag_quotes_are_optional() {
        assert_eq!(unquote("\"H|1|[2-0]\""), "H|1|[2-0]");
        assert_eq!(unquote("H|1|[2-0]"), "H|1|[2-0]");
    }
}
