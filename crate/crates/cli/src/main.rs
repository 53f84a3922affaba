//! `livefed`: run contractor nodes and requesters, load scripts, query.

mod table;

use std::collections::HashMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde_json::Value as J;

use livefed::coordinator::{Coordinator, CoordinatorConfig};
use livefed::engine::Engine;
use livefed::node::{Node, NodeConfig};
use livefed::txn::{DecisionLog, TxnManager};
use livefed::wire::http::{HttpServer, HttpTransport};
use livefed::wire::json::result_from_json;
use livefed::wire::{Handler, Request, Response, Transport};
use livefed::{scripts, Database};

#[derive(Parser)]
#[command(name = "livefed", version, about = "Live federated queries with readCheck validators")]
struct Cli {
    /// Print per-row validators and the result ETags.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    mode: Mode,
}

#[derive(Subcommand)]
enum Mode {
    /// Serve a contractor database, or a requester with --coordinator.
    Serve {
        /// Log file of the database (created when missing).
        #[arg(long)]
        db: Option<PathBuf>,
        /// Node config (JSON): db_name, views, permissions.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 8180)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        /// Database name; defaults to the config's or the log file stem.
        #[arg(long)]
        name: Option<String>,
        /// Serve a requester with this name instead of a database.
        #[arg(long)]
        coordinator: Option<String>,
        /// AUTHORITY=ADDR: dial ADDR for URLs naming AUTHORITY.
        #[arg(long = "host")]
        hosts: Vec<String>,
        /// Script run at startup (for a node, only into an empty database).
        #[arg(long)]
        script: Option<PathBuf>,
        /// Requester decision log.
        #[arg(long)]
        decisions: Option<PathBuf>,
    },
    /// Run a script against a database file or a server URL.
    Load {
        script: PathBuf,
        #[arg(long)]
        db: Option<PathBuf>,
        #[arg(long)]
        name: Option<String>,
        /// e.g. http://127.0.0.1:8180/Hospital
        #[arg(long)]
        url: Option<String>,
    },
    /// Run one statement at a server; reads stdin when none is given.
    Query {
        statement: Option<String>,
        #[arg(long)]
        url: String,
    },
    /// Two contractors and a requester on fixed local ports, running the
    /// hospital scenario end to end.
    Demo {
        #[arg(long, default_value_t = 18180)]
        port: u16,
    },
}

enum Fail {
    Usage(String),
    Network(String),
    Parse(String),
}

impl Fail {
    fn code(&self) -> u8 {
        match self {
            Fail::Usage(_) => 1,
            Fail::Network(_) => 2,
            Fail::Parse(_) => 3,
        }
    }
}

type Run = Result<(), Fail>;

fn env_override<T: std::str::FromStr>(var: &str) -> Option<T> {
    std::env::var(var).ok().and_then(|v| v.parse().ok())
}

fn read_file(p: &Path) -> Result<String, Fail> {
    std::fs::read_to_string(p).map_err(|e| Fail::Usage(format!("{}: {e}", p.display())))
}

fn parse_hosts(hosts: &[String]) -> Result<HashMap<String, String>, Fail> {
    hosts
        .iter()
        .map(|h| {
            h.split_once('=')
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .ok_or_else(|| Fail::Usage(format!("--host {h}: expected AUTHORITY=ADDR")))
        })
        .collect()
}

/// Splits `http://host:port/Name` into authority and name.
fn split_url(text: &str) -> Result<(String, String), Fail> {
    let u = url::Url::parse(text).map_err(|e| Fail::Usage(format!("{text}: {e}")))?;
    let host = u.host_str().ok_or_else(|| Fail::Usage(format!("{text}: no host")))?;
    let authority = match u.port_or_known_default() {
        Some(p) => format!("{host}:{p}"),
        None => host.to_string(),
    };
    let name = u.path().trim_matches('/').to_string();
    if name.is_empty() || name.contains('/') {
        return Err(Fail::Usage(format!("{text}: expected http://host:port/<name>")));
    }
    Ok((authority, name))
}

/// Maps a failed `/sql` answer to an exit class.
fn sql_failure(resp: &Response) -> Fail {
    let body = resp.body_json().unwrap_or(J::Null);
    let msg = resp.error_message();
    let at = body.get("position").and_then(J::as_u64);
    let msg = match at {
        Some(p) => format!("{msg} (at position {p})"),
        None => msg,
    };
    match body.get("code").and_then(J::as_str) {
        Some("parse") => Fail::Parse(msg),
        Some("network") | Some("stale") => Fail::Network(msg),
        _ => Fail::Usage(msg),
    }
}

fn post_sql(transport: &dyn Transport, authority: &str, name: &str, text: &str) -> Result<J, Fail> {
    let mut req = Request::new("POST", format!("/{name}/sql"));
    req.body = text.as_bytes().to_vec();
    let resp = transport.send(authority, req).map_err(|e| Fail::Network(e.to_string()))?;
    if resp.status != 200 {
        return Err(sql_failure(&resp));
    }
    resp.body_json().map_err(|e| Fail::Network(e.to_string()))
}

fn print_outcome(o: &J, verbose: bool) -> Result<String, Fail> {
    Ok(match o.get("kind").and_then(J::as_str) {
        Some("rows") => {
            let w = result_from_json(o, None).map_err(|e| Fail::Network(e.to_string()))?;
            let etag = o.get("validator").and_then(J::as_str).unwrap_or_default();
            table::render(&w.result, verbose, etag)
        }
        Some("created") => format!("created {}\n", o.get("name").and_then(J::as_str).unwrap_or_default()),
        Some("written") => {
            let n = o.get("count").and_then(J::as_u64).unwrap_or(0);
            let mut s = format!("{n} row{} written\n", if n == 1 { "" } else { "s" });
            if verbose {
                let v: Vec<String> = match o.get("validators") {
                    Some(J::Array(a)) => a.iter().filter_map(|x| x.as_str().map(str::to_string)).collect(),
                    _ => o.get("validator").and_then(J::as_str).map(|x| vec![x.to_string()]).unwrap_or_default(),
                };
                let tags: Vec<&str> = v.iter().flat_map(|x| x.split(';')).filter(|x| !x.is_empty()).collect();
                s.push_str(&format!("ETag: {}\n", tags.join(" ")).replace(": \n", ":\n"));
            }
            s
        }
        _ => format!("{o}\n"),
    })
}

fn serve(
    db: Option<PathBuf>,
    config: Option<PathBuf>,
    port: u16,
    bind: String,
    name: Option<String>,
    coordinator: Option<String>,
    hosts: Vec<String>,
    script: Option<PathBuf>,
    decisions: Option<PathBuf>,
) -> Run {
    let port = env_override("LIVEFED_PORT").unwrap_or(port);
    let db = env_override::<PathBuf>("LIVEFED_DB").or(db);
    let addr = format!("{bind}:{port}");
    let (handler, label, _keep): (Arc<dyn Handler>, String, Option<TxnManager>) = match coordinator {
        Some(cname) => {
            let transport = Arc::new(HttpTransport::new(parse_hosts(&hosts)?));
            let c = Arc::new(Coordinator::new(CoordinatorConfig::new(&cname), transport));
            if let Some(s) = &script {
                c.execute_script(&read_file(s)?).map_err(|e| match e.class() {
                    "parse" => Fail::Parse(e.to_string()),
                    "network" | "stale" => Fail::Network(e.to_string()),
                    _ => Fail::Usage(e.to_string()),
                })?;
            }
            let log = match &decisions {
                Some(p) => DecisionLog::open(p).map_err(|e| Fail::Usage(e.to_string()))?,
                None => DecisionLog::in_memory(),
            };
            let mgr = TxnManager::new(c.clone(), Arc::new(log));
            (c, format!("requester {cname}"), Some(mgr))
        }
        None => {
            let mut cfg = match &config {
                Some(p) => serde_json::from_str::<NodeConfig>(&read_file(p)?)
                    .map_err(|e| Fail::Usage(format!("{}: {e}", p.display())))?,
                None => {
                    let n = name
                        .clone()
                        .or_else(|| db.as_ref().and_then(|d| d.file_stem()).map(|s| s.to_string_lossy().to_string()))
                        .ok_or_else(|| Fail::Usage("serve needs --name, --db or --config".into()))?;
                    NodeConfig::open(&n)
                }
            };
            if let Some(n) = &name {
                cfg.db_name = n.clone();
            }
            if db.is_some() {
                cfg.log_path = db.clone();
            }
            let node = Node::open(cfg).map_err(|e| Fail::Usage(e.to_string()))?;
            if let Some(s) = &script {
                if node.database().snapshot().tables().next().is_none() {
                    node.engine()
                        .execute_script(&read_file(s)?)
                        .map_err(|e| Fail::Usage(format!("statement {} at position {}: {}", e.index + 1, e.position, e.error)))?;
                }
            }
            let label = format!("database {}", node.config().db_name);
            (Arc::new(node), label, None)
        }
    };
    let server = HttpServer::start(&addr, handler).map_err(|e| Fail::Network(format!("{addr}: {e}")))?;
    println!("serving {label} on {}", server.addr());
    server.wait();
    Ok(())
}

fn load(script: PathBuf, db: Option<PathBuf>, name: Option<String>, url: Option<String>) -> Run {
    let text = read_file(&script)?;
    let db = env_override::<PathBuf>("LIVEFED_DB").or(db);
    match (db, url) {
        (Some(path), None) => {
            let name = name
                .or_else(|| path.file_stem().map(|s| s.to_string_lossy().to_string()))
                .ok_or_else(|| Fail::Usage("cannot name the database".into()))?;
            let database = Database::open(&path, &name).map_err(|e| Fail::Usage(e.to_string()))?;
            let engine = Engine::new(Arc::new(database));
            match engine.execute_script(&text) {
                Ok(outs) => println!("{} statements", outs.len()),
                Err(e) => {
                    let msg = format!("statement {} at position {}: {}", e.index + 1, e.position, e.error);
                    return Err(match e.error {
                        livefed::engine::EngineError::Parse(_) => Fail::Parse(msg),
                        _ => Fail::Usage(msg),
                    });
                }
            }
        }
        (None, Some(u)) => {
            let (authority, name) = split_url(&u)?;
            let t = HttpTransport::new(HashMap::new());
            let body = post_sql(&t, &authority, &name, &text)?;
            println!("{} statements", body.get("statements").and_then(J::as_u64).unwrap_or(0));
        }
        _ => return Err(Fail::Usage("load needs exactly one of --db and --url".into())),
    }
    Ok(())
}

fn query(statement: Option<String>, url: String, verbose: bool) -> Run {
    let text = match statement {
        Some(s) => s,
        None => {
            let mut s = String::new();
            std::io::stdin()
                .read_to_string(&mut s)
                .map_err(|e| Fail::Usage(format!("stdin: {e}")))?;
            s
        }
    };
    if text.trim().is_empty() {
        return Err(Fail::Usage("no statement given".into()));
    }
    let (authority, name) = split_url(&url)?;
    let t = HttpTransport::new(HashMap::new());
    let body = post_sql(&t, &authority, &name, &text)?;
    for o in body.get("outcomes").and_then(J::as_array).into_iter().flatten() {
        print!("{}", print_outcome(o, verbose)?);
    }
    Ok(())
}

fn demo(port: u16) -> Run {
    let port = env_override("LIVEFED_PORT").unwrap_or(port);
    let start_node = |db: &str, p: u16| -> Result<HttpServer, Fail> {
        let node = Node::open(NodeConfig::open(db)).map_err(|e| Fail::Usage(e.to_string()))?;
        HttpServer::start(&format!("127.0.0.1:{p}"), Arc::new(node)).map_err(|e| Fail::Network(format!("port {p}: {e}")))
    };
    let hospital = start_node("Hospital", port)?;
    let statistics = start_node("Statistics", port + 1)?;
    let mut hosts = HashMap::new();
    hosts.insert("servD1:8180".to_string(), format!("127.0.0.1:{port}"));
    hosts.insert("servD2:8180".to_string(), format!("127.0.0.1:{}", port + 1));
    let transport = Arc::new(HttpTransport::new(hosts));
    let coordinator = Arc::new(Coordinator::new(CoordinatorConfig::new("Requester"), transport.clone()));
    let _txn = TxnManager::new(coordinator.clone(), Arc::new(DecisionLog::in_memory()));
    let requester = HttpServer::start(&format!("127.0.0.1:{}", port + 2), coordinator)
        .map_err(|e| Fail::Network(format!("port {}: {e}", port + 2)))?;
    let local = HttpTransport::new(HashMap::new());
    let at = |p: u16| format!("127.0.0.1:{p}");
    let steps: [(&str, u16, &str, &str); 3] = [
        ("Hospital", port, "Hospital", scripts::HOSPITAL),
        ("Statistics", port + 1, "Statistics", scripts::STATISTICS),
        ("Requester", port + 2, "Requester", scripts::REQUESTER),
    ];
    for (label, p, name, text) in steps {
        let body = post_sql(&local, &at(p), name, text)?;
        println!("loaded {label}: {} statements", body.get("statements").and_then(J::as_u64).unwrap_or(0));
    }
    let run = |text: &str| -> Run {
        println!();
        println!("> {text}");
        let body = post_sql(&local, &at(port + 2), "Requester", text)?;
        for o in body.get("outcomes").and_then(J::as_array).into_iter().flatten() {
            print!("{}", print_outcome(o, true)?);
        }
        Ok(())
    };
    for text in [
        scripts::PERCENTAGE_QUERY,
        scripts::TOTALS_QUERY,
        scripts::UPDATE_STATEMENT,
        scripts::DELETE_STATEMENT,
        scripts::PERCENTAGE_QUERY,
        scripts::TOTALS_QUERY,
    ] {
        run(text)?;
    }
    requester.stop();
    hospital.stop();
    statistics.stop();
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.mode {
        Mode::Serve {
            db,
            config,
            port,
            bind,
            name,
            coordinator,
            hosts,
            script,
            decisions,
        } => serve(db, config, port, bind, name, coordinator, hosts, script, decisions),
        Mode::Load { script, db, name, url } => load(script, db, name, url),
        Mode::Query { statement, url } => query(statement, url, cli.verbose),
        Mode::Demo { port } => demo(port),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Fail::Usage(m) | Fail::Network(m) | Fail::Parse(m)) = &f;
            eprintln!("livefed: {m}");
            ExitCode::from(f.code())
        }
    }
}
