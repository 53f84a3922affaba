use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, Command, Output, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_livefed");

fn script(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/scripts").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("LIVEFED_PORT")
        .env_remove("LIVEFED_DB")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).to_string()
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

/// Starts `livefed serve ...` and waits for its "serving" line.
fn serve(args: &[&str]) -> Server {
    let mut child = Command::new(BIN)
        .arg("serve")
        .args(args)
        .env_remove("LIVEFED_PORT")
        .env_remove("LIVEFED_DB")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    assert!(line.starts_with("serving"), "{line}");
    Server(child)
}

#[test]
fn demo_is_deterministic() {
    let a = run(&["demo", "--port", "28180"]);
    let b = run(&["demo", "--port", "28180"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let out = stdout(&a);
    assert!(out.contains("East End Freetown  Ebola      0.0013333333333333333  Statistics:"));
    assert!(out.contains("1 row written"));
}

#[test]
fn load_into_a_log_file() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("Hospital.log");
    let o = run(&["load", script("hospital.sql").to_str().unwrap(), "--db", db.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "3 statements\n");
    let empty = dir.path().join("empty.sql");
    std::fs::write(&empty, "").unwrap();
    let o = run(&["load", empty.to_str().unwrap(), "--db", db.to_str().unwrap()]);
    assert_eq!(stdout(&o), "0 statements\n");
    let bad = dir.path().join("bad.sql");
    std::fs::write(&bad, "select from where;").unwrap();
    let o = run(&["load", bad.to_str().unwrap(), "--db", db.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("position"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["query", "--url", "not a url", "select 1"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn unreachable_server_exits_two() {
    let o = run(&["query", "--url", "http://127.0.0.1:1/Requester", "select * from V"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn served_nodes_and_requester() {
    let dir = tempfile::tempdir().unwrap();
    let h = dir.path().join("Hospital.log");
    let s = dir.path().join("Statistics.log");
    let _h = serve(&["--db", h.to_str().unwrap(), "--port", "28280", "--script", script("hospital.sql").to_str().unwrap()]);
    let _s = serve(&["--db", s.to_str().unwrap(), "--port", "28281", "--script", script("statistics.sql").to_str().unwrap()]);
    let _r = serve(&[
        "--coordinator",
        "Requester",
        "--port",
        "28282",
        "--host",
        "servD1:8180=127.0.0.1:28280",
        "--host",
        "servD2:8180=127.0.0.1:28281",
        "--script",
        script("requester.sql").to_str().unwrap(),
    ]);
    // A second server on a taken port fails.
    let clash = run(&["serve", "--name", "X", "--port", "28280"]);
    assert_eq!(clash.status.code(), Some(2));

    let url = "http://127.0.0.1:28282/Requester";
    let pct = "select location, diagnosis, (patients/under10)*100 as percentage from V where age < 10";
    let o = run(&["query", "-v", "--url", url, pct]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert!(lines[0].ends_with("validator"));
    assert_eq!(lines.iter().filter(|l| l.contains("Statistics:")).count(), 2);
    let footer = lines.last().unwrap();
    assert!(footer.starts_with("ETag: Hospital|") && footer.contains(" Statistics|"), "{footer}");

    let plain = stdout(&run(&["query", "--url", url, pct]));
    assert!(!plain.contains("validator") && !plain.contains("ETag"));

    let mut child = Command::new(BIN)
        .args(["query", "--url", "http://127.0.0.1:28280/Hospital"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"select name from D where ID = 5").unwrap();
    let o = child.wait_with_output().unwrap();
    assert!(stdout(&o).contains("Benny Hall"));

    let o = run(&["query", "--url", url, "selec * from V"]);
    assert_eq!(o.status.code(), Some(3));
}
