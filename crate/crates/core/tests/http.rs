//! Contractors and the requester talking real HTTP on loopback.

use std::collections::HashMap;
use std::sync::Arc;

use livefed::coordinator::{Coordinator, CoordinatorConfig, FetchKind, SourceStatus};
use livefed::node::{Node, NodeConfig};
use livefed::scripts::{self, PERCENTAGE_QUERY, TOTALS_QUERY, UPDATE_STATEMENT};
use livefed::wire::http::{HttpServer, HttpTransport};
use livefed::Value;

struct Net {
    hospital: Arc<Node>,
    _servers: Vec<HttpServer>,
    coordinator: Arc<Coordinator>,
    hosts: HashMap<String, String>,
}

fn start() -> Net {
    let node = |db: &str, script: &str| {
        let n = Arc::new(Node::open(NodeConfig::open(db)).unwrap());
        n.engine().execute_script(script).unwrap();
        n
    };
    let hospital = node("Hospital", scripts::HOSPITAL);
    let statistics = node("Statistics", scripts::STATISTICS);
    let h = HttpServer::start("127.0.0.1:0", hospital.clone()).unwrap();
    let s = HttpServer::start("127.0.0.1:0", statistics).unwrap();
    let hosts = HashMap::from([
        ("servD1:8180".to_string(), h.addr().to_string()),
        ("servD2:8180".to_string(), s.addr().to_string()),
    ]);
    let coordinator = Arc::new(Coordinator::new(
        CoordinatorConfig::new("Requester"),
        Arc::new(HttpTransport::new(hosts.clone())),
    ));
    coordinator.execute_script(scripts::REQUESTER).unwrap();
    Net {
        hospital,
        _servers: vec![h, s],
        coordinator,
        hosts,
    }
}

#[test]
fn repeat_query_is_answered_by_304() {
    let n = start();
    let first = n.coordinator.execute_global(PERCENTAGE_QUERY).unwrap();
    assert!(first.fetches.iter().all(|f| f.kind == FetchKind::Fetched));
    let again = n.coordinator.execute_global(PERCENTAGE_QUERY).unwrap();
    assert!(again.fetches.iter().all(|f| f.kind == FetchKind::NotModified));
    assert_eq!(first.result, again.result);
    assert_eq!(first.validator, again.validator);
}

#[test]
fn hospital_change_makes_only_hospital_stale() {
    let n = start();
    let g = n.coordinator.execute_global(PERCENTAGE_QUERY).unwrap();
    let tag = g.validator.to_string();
    let fresh = n.coordinator.check_still_current(&tag).unwrap();
    assert!(fresh.iter().all(|(_, s)| *s == SourceStatus::Fresh), "{fresh:?}");

    n.hospital
        .engine()
        .execute_script("insert into D values (6, 'Ada Cole', 3, date'2010-01-02', date'2014-09-10', 'Ebola', 'electrolytes')")
        .unwrap();
    let now: HashMap<String, SourceStatus> = n.coordinator.check_still_current(&tag).unwrap().into_iter().collect();
    assert!(matches!(now["Hospital"], SourceStatus::Stale(_)), "{now:?}");
    assert_eq!(now["Statistics"], SourceStatus::Fresh);

    let g2 = n.coordinator.execute_global(PERCENTAGE_QUERY).unwrap();
    let west = g2.result.rows.iter().find(|r| r[0] == Value::Str("West End Freetown".into())).unwrap();
    assert!((west[2].as_f64().unwrap() - 100.0 * 2.0 / 50000.0).abs() < 1e-12);
}

#[test]
fn update_over_http_changes_totals() {
    let n = start();
    let before = n.coordinator.execute_global(TOTALS_QUERY).unwrap();
    n.coordinator.execute_script(UPDATE_STATEMENT).unwrap();
    let after = n.coordinator.execute_global(TOTALS_QUERY).unwrap();
    assert_ne!(before.validator, after.validator);
    let r = n.coordinator.execute_global("select inhabitants from V2 where rCode = 3").unwrap();
    assert_eq!(r.result.rows, vec![vec![Value::Int(199000)]]);
}

#[test]
fn requester_is_itself_served() {
    let n = start();
    let server = HttpServer::start("127.0.0.1:0", n.coordinator.clone()).unwrap();
    let mut hosts = n.hosts.clone();
    hosts.insert("servR:8180".into(), server.addr().to_string());
    let outer = Coordinator::new(CoordinatorConfig::new("Outer"), Arc::new(HttpTransport::new(hosts)));
    outer
        .execute_script("create view W as get 'http://servR:8180/Requester/Requester/V'")
        .unwrap();
    let g = outer.execute_global("select location, patients from W where age < 10").unwrap();
    assert_eq!(g.result.rows.len(), 2, "{:?} {:?}", g.result, outer.rest_view("W"));
}

#[test]
fn unreachable_source_is_a_network_error() {
    let n = start();
    let c = Coordinator::new(CoordinatorConfig::new("R2"), Arc::new(HttpTransport::new(HashMap::from([(
        "servD1:8180".to_string(),
        "127.0.0.1:1".to_string(),
    )]))));
    let err = c
        .execute_script("create view X of (ID int) as get 'http://servD1:8180/Hospital/Hospital/D'; select * from X")
        .unwrap_err();
    assert_eq!(err.class(), "network", "{err}");
    drop(n);
}
