use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wtstream"))
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(out: Output) -> Value {
    serde_json::from_str(&ok(out)).unwrap()
}

fn synth(dir: &Path) {
    let v = json(bin().args(["synth", "--hours", "48", "--rows", "300", "--seed", "9", "--out-dir"]).arg(dir).output().unwrap());
    assert_eq!(v["files"].as_array().unwrap().len(), 4);
}

#[test]
fn synth_lagscan_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let scan = ok(bin().arg("lagscan").arg(dir.path().join("lag.csv")).output().unwrap());
    assert!(scan.lines().any(|l| l == "chosen lag: 17"), "{scan}");
    assert_eq!(scan.lines().filter(|l| l.contains('\t')).count(), 26, "header plus k = 0..=24");

    let tm = dir.path().join("tm.csv");
    let v = json(bin().arg("evaluate").arg(&tm).arg(&tm).output().unwrap());
    assert_eq!(v["nash"], 1.0);
    assert_eq!(v["rmse"], 0.0);

    let out = bin().arg("evaluate").arg(&tm).arg(dir.path().join("missing.csv")).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("wtstream: "));
}

#[test]
fn client_commands_report_unreachable_server() {
    let out = bin().args(["--port", "9", "model", "list"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot reach"));
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn serve(extra: &[&str]) -> (Server, u16) {
    let mut child = bin()
        .args(["--port", "0", "serve", "--ingest-port", "0", "--clock", "data"])
        .args(extra)
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let stderr = child.stderr.take().unwrap();
    let server = Server(child);
    let mut lines = BufReader::new(stderr).lines();
    let port = loop {
        let line = lines.next().expect("server exited before announcing").unwrap();
        if let Some(rest) = line.strip_prefix("wtstream: REST on http://") {
            let addr = rest.split(',').next().unwrap();
            break addr.rsplit(':').next().unwrap().parse().unwrap();
        }
    };
    // keep draining so the child never blocks on a full pipe
    std::thread::spawn(move || lines.for_each(drop));
    (server, port)
}

#[test]
fn train_register_and_replay_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let pma = dir.path().join("wt.pma");
    let trained = json(
        bin()
            .arg("train")
            .arg(dir.path().join("dataset.csv"))
            .args(["--hidden", "10", "--lr", "0.55", "--epochs", "50", "--train-len", "200", "--out"])
            .arg(&pma)
            .output()
            .unwrap(),
    );
    assert_eq!(trained["n_hidden"], 10);
    assert_eq!(trained["epochs_run"], 50);
    assert!(trained["grid_cells"].is_null());
    assert!(trained["test"]["rmse"].as_f64().unwrap().is_finite());

    let (_server, port) = serve(&[]);
    let port = port.to_string();
    let cmd = |args: &[&str]| {
        let mut c = bin();
        c.args(["--port", &port]).args(args);
        c
    };
    for s in ["tm", "rf"] {
        json(cmd(&["streams", "create", s]).output().unwrap());
    }
    let reg = json(cmd(&["model", "register"]).arg(&pma).output().unwrap());
    assert_eq!(reg["mid"], "wt");
    let mode = json(
        cmd(&["predict", "mode", "2", "--time", "2012-12-06T17:00:00Z", "--interval", "3600"])
            .output()
            .unwrap(),
    );
    assert_eq!(mode["schedule"]["mode"], "time_scheduled");
    assert_eq!(json(cmd(&["predict", "start"]).output().unwrap())["running"], true);

    let replay = json(
        cmd(&["replay"])
            .arg(format!("{}=tm", dir.path().join("tm.csv").display()))
            .arg(format!("{}=rf", dir.path().join("rf.csv").display()))
            .output()
            .unwrap(),
    );
    assert_eq!(replay["published"], 96, "{replay}");
    assert_eq!(replay["predictions"], 31);

    let status = json(cmd(&["predict", "status"]).output().unwrap());
    assert_eq!(status["counters"]["predictions"], 31, "{status}");
    let values = json(cmd(&["streams", "values", "wt.pred"]).output().unwrap());
    assert_eq!(values.as_array().unwrap().len(), 31);
    let csv = ok(cmd(&["streams", "download", "wt.pred"]).output().unwrap());
    assert_eq!(csv.lines().count(), 32);

    let dup = cmd(&["model", "register"]).arg(&pma).output().unwrap();
    assert_eq!(dup.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&dup.stderr).contains("409"));
}
