use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn vaxledger(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vaxledger"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn issue_hash_and_offline_verify() {
    let dir = tempfile::tempdir().unwrap();
    let cred = dir.path().join("cred.json");
    let o = vaxledger(&["issue", "--issuer-seed", "7", "--out", cred.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");

    let h1 = vaxledger(&["hash", cred.to_str().unwrap()]);
    let h2 = vaxledger(&["hash", cred.to_str().unwrap()]);
    assert!(h1.status.success());
    let hex = stdout(&h1).trim().to_owned();
    assert_eq!(hex.len(), 64);
    assert!(hex.chars().all(|c| c.is_ascii_hexdigit()));
    assert_eq!(stdout(&h1), stdout(&h2));

    let v = vaxledger(&["verify", "--credential", cred.to_str().unwrap()]);
    assert!(v.status.success(), "{v:?}");
    let out = stdout(&v);
    assert!(out.contains(&format!("credential {hex}: accepted")), "{out}");
    assert!(out.contains("recv:response"), "{out}");

    // A tampered batch id no longer matches the signature.
    let text = fs::read_to_string(&cred).unwrap().replace("EJ6795", "EJ6796");
    let bad = write_config(dir.path(), "bad.json", &text);
    let v = vaxledger(&["verify", "--credential", bad.to_str().unwrap()]);
    assert!(stdout(&v).contains("rejected (signature)"), "{}", stdout(&v));

    // Past the expiration date.
    let v = vaxledger(&["verify", "--credential", cred.to_str().unwrap(), "--now", "1700000000"]);
    assert!(stdout(&v).contains("rejected (expired)"), "{}", stdout(&v));
}

#[test]
fn first_dose_credential_is_issuable_but_not_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let cred = dir.path().join("first.json");
    let o = vaxledger(&["issue", "--dose", "1", "--out", cred.to_str().unwrap()]);
    assert!(o.status.success());
    let v = vaxledger(&["verify", "--credential", cred.to_str().unwrap()]);
    assert!(stdout(&v).contains("rejected (incomplete-doses)"), "{}", stdout(&v));
}

#[test]
fn register_prints_a_complete_timeline() {
    let o = vaxledger(&["register", "--seed", "3"]);
    assert!(o.status.success(), "{o:?}");
    let out = stdout(&o);
    for event in ["send:proposal", "send:envelope", "send:block", "commit", "recv:response"] {
        assert!(out.contains(event), "missing {event} in\n{out}");
    }
    assert!(!out.contains("gossip"));
    assert!(out.contains("errors 0"));
}

#[test]
fn loads_prints_rounded_figures() {
    let o = vaxledger(&["loads"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("(displayed 28)"), "{out}");
    assert!(out.contains("(displayed ≈100)"), "{out}");
}

#[test]
fn simulate_writes_csv_trace_and_ledgers_then_report_renders_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "small.toml",
        "step = \"register\"\ntps_levels = [2, 4]\nduration_seconds = 3\ndrain_seconds = 5\npreloaded_records = 20\n",
    );
    let csv = dir.path().join("out.csv");
    let trace = dir.path().join("trace.ndjson");
    let ledgers = dir.path().join("ledgers");
    let o = vaxledger(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "11",
        "--out",
        csv.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
        "--ledger-dir",
        ledgers.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{o:?}");

    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "step,tps,response_time_ms,peer_bandwidth_kb,ordering_bandwidth_kb,errors,saturated"
    );
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("register,2.0,"));
    assert!(lines[2].starts_with("register,4.0,"));

    let first = fs::read_to_string(&trace).unwrap();
    let rec: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(rec["tps"], 2.0);
    assert!(rec["time_us"].is_u64());
    assert!(ledgers.join("register-2.ndjson").exists());
    assert!(ledgers.join("register-4.ndjson").exists());

    // Same seed, same bytes.
    let csv2 = dir.path().join("out2.csv");
    let o = vaxledger(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "11", "--out", csv2.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(fs::read(&csv).unwrap(), fs::read(&csv2).unwrap());

    let r = vaxledger(&["report", csv.to_str().unwrap()]);
    assert!(r.status.success());
    let table = stdout(&r);
    assert_eq!(table.lines().count(), 4);
    assert!(table.lines().nth(1).unwrap().chars().all(|c| c == '-'));
}

#[test]
fn shipped_configs_parse() {
    for name in ["register.toml", "verify.toml", "failover.toml", "slow-link.toml"] {
        let path = configs_dir().join(name);
        let text = fs::read_to_string(&path).unwrap();
        vaxledger_core::scenario::ScenarioConfig::from_toml_str(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write_config(dir.path(), "u.toml", "step = \"register\"\nsurprise = 1\n");
    let o = vaxledger(&["simulate", "--config", unknown.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    let empty = write_config(dir.path(), "e.toml", "step = \"verify\"\ntps_levels = []\n");
    let o = vaxledger(&["simulate", "--config", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    let o = vaxledger(&["simulate"]);
    assert_eq!(o.status.code(), Some(1));

    let o = vaxledger(&["register", "--config", configs_dir().join("verify.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn io_errors_exit_3() {
    let o = vaxledger(&["report", "/nonexistent/report.csv"]);
    assert_eq!(o.status.code(), Some(3));
    let o = vaxledger(&["simulate", "--config", "/nonexistent/cfg.toml"]);
    assert_eq!(o.status.code(), Some(3));

    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "step = \"verify\"\ntps_levels = [1]\nduration_seconds = 1\npreloaded_records = 5\n");
    let o = vaxledger(&["simulate", "--config", cfg.to_str().unwrap(), "--out", "/nonexistent/dir/out.csv"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn calibration_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let partial = write_config(
        dir.path(),
        "t.csv",
        "step,tps,response_time_ms,peer_bandwidth_kb,ordering_bandwidth_kb\nregister,1,84,393,636\n",
    );
    let o = vaxledger(&["calibrate", "--targets", partial.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{o:?}");
}

#[test]
fn help_exits_0() {
    let o = vaxledger(&["--help"]);
    assert!(o.status.success());
    for cmd in ["issue", "hash", "register", "verify", "simulate", "calibrate", "report"] {
        assert!(stdout(&o).contains(cmd));
    }
}
