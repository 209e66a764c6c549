use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::sync::Arc;
use std::thread::sleep;
use std::time::{Duration, Instant};

use nymkit::ctl::{dispatch, CtlService, Shared};
use nymkit::nymcore::{Engine, EngineConfig};
use nymkit::snapstore::MockCloud;
use serde_json::{json, Value};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_nym");

struct Server {
    child: Child,
    dir: TempDir,
}

impl Server {
    fn start() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("config.toml"), EngineConfig::fast().to_toml()).unwrap();
        let log = fs::File::create(dir.path().join("server.log")).unwrap();
        let child = Command::new(BIN)
            .args(["--config", "config.toml", "serve"])
            .current_dir(dir.path())
            .env("NYMKIT_SOCK", dir.path().join("ctl.sock"))
            .env("RUST_LOG", "trace")
            .stderr(log)
            .spawn()
            .unwrap();
        let sock = dir.path().join("ctl.sock");
        let t0 = Instant::now();
        while !sock.exists() {
            assert!(t0.elapsed() < Duration::from_secs(20), "server did not start");
            sleep(Duration::from_millis(20));
        }
        Server { child, dir }
    }

    fn sock(&self) -> PathBuf {
        self.dir.path().join("ctl.sock")
    }

    fn nym(&self, args: &[&str], password: Option<&str>) -> Output {
        let mut c = Command::new(BIN);
        c.args(args).env("NYMKIT_SOCK", self.sock()).env("RUST_LOG", "trace").stdin(Stdio::null());
        match password {
            Some(p) => c.env("NYMKIT_PASSWORD", p),
            None => c.env_remove("NYMKIT_PASSWORD"),
        };
        c.output().unwrap()
    }

    fn log(&self) -> String {
        fs::read_to_string(self.dir.path().join("server.log")).unwrap()
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).trim().to_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn in_process(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env("NYMKIT_SOCK", dir.join("absent.sock"))
        .stdin(Stdio::null())
        .output()
        .unwrap()
}

#[test]
fn create_prints_an_id_without_a_server() {
    let dir = tempfile::tempdir().unwrap();
    let o = in_process(dir.path(), &["create", "--transport", "incognito"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "nym-1");
    assert!(stderr(&o).contains("one-shot"));
}

#[test]
fn storing_an_ephemeral_nym_fails() {
    let s = Server::start();
    let id = stdout(&s.nym(&["create", "--mode", "ephemeral"], None));
    assert_eq!(id, "nym-1");
    let o = s.nym(&["store", &id, "obj"], Some("pw"));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("ModeForbidsStore"), "{}", stderr(&o));
}

#[test]
fn probe_reports_no_violations() {
    let s = Server::start();
    for _ in 0..8 {
        assert!(s.nym(&["create", "--transport", "incognito"], None).status.success());
    }
    let o = s.nym(&["probe"], None);
    assert!(o.status.success());
    assert!(stdout(&o).ends_with("violations 0"), "{}", stdout(&o));
    let v: Value = serde_json::from_slice(&s.nym(&["--json", "probe"], None).stdout).unwrap();
    assert_eq!(v["violations"], json!([]));
}

#[test]
fn persistent_round_trip_over_the_socket() {
    let s = Server::start();
    let id = stdout(&s.nym(&["create", "--mode", "persistent"], None));
    let o = s.nym(&["store", &id, "daily"], Some("pw"));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("daily v1 "));
    assert!(s.nym(&["terminate", &id], None).status.success());
    let bad = s.nym(&["load", "daily"], Some("wrong"));
    assert!(stderr(&bad).contains("AuthFailure"), "{}", stderr(&bad));
    let loaded = stdout(&s.nym(&["load", "daily"], Some("pw")));
    assert!(loaded.starts_with("nym-") && loaded != id);
    let list = stdout(&s.nym(&["list"], None));
    assert!(list.contains(&format!("{loaded}\tpersistent\tRunning")), "{list}");
}

#[test]
fn cli_and_api_agree() {
    let s = Server::start();
    let mut svc = CtlService::new(Engine::new(EngineConfig::fast()).unwrap());
    let mut cloud = MockCloud::new("cloud.example").with_account("u", "p");
    cloud.login("u", "p").unwrap();
    svc.add_backend("cloud", Box::new(cloud));
    let api = Arc::new(Shared::new(svc));

    let steps: Vec<(Vec<&str>, &str, Value)> = vec![
        (vec!["create", "--mode", "persistent", "--transport", "incognito"], "create", json!({"mode": "persistent", "transport": "incognito"})),
        (vec!["create", "--transport", "dcnet"], "create", json!({"mode": "ephemeral", "transport": "dcnet"})),
        (vec!["list"], "list", json!({})),
        (vec!["terminate", "nym-2"], "terminate", json!({"nym": "nym-2"})),
        (vec!["list"], "list", json!({})),
        (vec!["probe"], "probe", json!({})),
        (vec!["terminate", "nym-9"], "terminate", json!({"nym": "nym-9"})),
        (vec!["store", "nym-2", "x"], "store", json!({"nym": "nym-2", "object": "x", "password": "pw"})),
        (vec!["create", "--mode", "sometimes"], "create", json!({"mode": "sometimes"})),
    ];
    for (argv, verb, args) in steps {
        let mut full = vec!["--json"];
        full.extend(&argv);
        let o = s.nym(&full, Some("pw"));
        let direct = dispatch(&api, verb, args);
        match direct {
            Ok(v) => {
                assert!(o.status.success(), "{argv:?}: {}", stderr(&o));
                let cli: Value = serde_json::from_slice(&o.stdout).unwrap();
                assert_eq!(cli, v, "{argv:?}");
            }
            Err(e) => {
                assert!(!o.status.success(), "{argv:?} succeeded on the CLI only");
                assert!(stderr(&o).contains(&format!("error: {}:", e.kind())), "{argv:?}: {} vs {e:?}", stderr(&o));
            }
        }
    }
}

#[test]
fn password_never_reaches_args_or_logs() {
    let canary = "Xq7-canary-0b5c1e9d-pw";
    let s = Server::start();
    let id = stdout(&s.nym(&["create", "--mode", "persistent"], None));
    let outs = [
        s.nym(&["store", &id, "secret"], Some(canary)),
        s.nym(&["terminate", &id], None),
        s.nym(&["load", "secret"], Some(canary)),
        s.nym(&["--json", "report", "--kind", "samples"], None),
    ];
    for o in &outs {
        assert!(o.status.success(), "{}", stderr(o));
        assert!(!stdout(o).contains(canary) && !stderr(o).contains(canary));
    }
    let log = s.log();
    assert!(log.contains("ctl store"), "server log missing request lines: {log}");
    assert!(!log.contains(canary));

    let flag = s.nym(&["store", &id, "secret", "--password", canary], None);
    assert_eq!(flag.status.code(), Some(2), "a password flag must not exist");
}
