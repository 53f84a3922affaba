//! Real HTTP/1.1 plumbing: a `tiny_http` server driving a [`Handler`] and a
//! `ureq` client implementing [`Transport`].

use std::collections::HashMap;
use std::io::Read;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use super::{Handler, Request, Response, Transport, WireError};

pub struct HttpServer {
    server: Option<Arc<tiny_http::Server>>,
    addr: SocketAddr,
    worker: Option<JoinHandle<()>>,
}

impl HttpServer {
    /// Binds `addr` (port 0 picks a free port) and serves on a background
    /// thread, one thread per request.
    pub fn start(addr: &str, handler: Arc<dyn Handler>) -> std::io::Result<HttpServer> {
        let server = tiny_http::Server::http(addr).map_err(|e| std::io::Error::new(std::io::ErrorKind::AddrInUse, e.to_string()))?;
        let server = Arc::new(server);
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("not an ip listener"))?;
        let s = server.clone();
        let worker = std::thread::spawn(move || {
            for mut raw in s.incoming_requests() {
                let handler = handler.clone();
                std::thread::spawn(move || {
                    let mut body = Vec::new();
                    let _ = raw.as_reader().read_to_end(&mut body);
                    let req = Request {
                        method: raw.method().as_str().to_ascii_uppercase(),
                        target: raw.url().to_string(),
                        headers: raw
                            .headers()
                            .iter()
                            .map(|h| (h.field.as_str().as_str().to_string(), h.value.as_str().to_string()))
                            .collect(),
                        body,
                    };
                    let resp = handler.handle(req);
                    let mut out = tiny_http::Response::from_data(resp.body).with_status_code(resp.status);
                    for (k, v) in resp.headers {
                        if let Ok(h) = tiny_http::Header::from_bytes(k.as_bytes(), v.as_bytes()) {
                            out.add_header(h);
                        }
                    }
                    let _ = raw.respond(out);
                });
            }
        });
        Ok(HttpServer {
            server: Some(server),
            addr,
            worker: Some(worker),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn port(&self) -> u16 {
        self.addr.port()
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        if let Some(s) = self.server.take() {
            s.unblock();
            if let Some(w) = self.worker.take() {
                let _ = w.join();
            }
            // Dropping the last handle closes the listening socket.
            drop(s);
        }
    }

    /// Blocks until the server is unblocked from elsewhere.
    pub fn wait(mut self) {
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// HTTP client. `hosts` maps a URL authority (e.g. `servD1:8180`) to the
/// address actually dialled; unmapped authorities are dialled as given.
pub struct HttpTransport {
    agent: ureq::Agent,
    hosts: HashMap<String, String>,
}

impl HttpTransport {
    pub fn new(hosts: HashMap<String, String>) -> HttpTransport {
        HttpTransport {
            agent: ureq::AgentBuilder::new()
                .timeout_connect(Duration::from_secs(5))
                .timeout(Duration::from_secs(60))
                // A pooled connection to a restarted server can hang until
                // the read timeout; dial fresh every time.
                .max_idle_connections(0)
                .build(),
            hosts: hosts.into_iter().map(|(k, v)| (k.to_ascii_lowercase(), v)).collect(),
        }
    }
}

impl Transport for HttpTransport {
    fn send(&self, authority: &str, req: Request) -> Result<Response, WireError> {
        let target = self.hosts.get(&authority.to_ascii_lowercase()).map(String::as_str).unwrap_or(authority);
        let url = format!("http://{target}{}", req.target);
        let mut call = self.agent.request(&req.method, &url);
        for (k, v) in &req.headers {
            call = call.set(k, v);
        }
        let result = if req.body.is_empty() && req.method == "GET" {
            call.call()
        } else {
            call.send_bytes(&req.body)
        };
        let resp = match result {
            Ok(r) => r,
            Err(ureq::Error::Status(_, r)) => r,
            Err(ureq::Error::Transport(t)) => return Err(WireError::Unavailable(format!("{authority}: {t}"))),
        };
        let status = resp.status();
        let headers = resp
            .headers_names()
            .into_iter()
            .filter_map(|n| resp.header(&n).map(|v| (n.clone(), v.to_string())))
            .collect();
        let mut body = Vec::new();
        resp.into_reader()
            .read_to_end(&mut body)
            .map_err(|e| WireError::Unavailable(format!("{authority}: {e}")))?;
        Ok(Response { status, headers, body })
    }
}
