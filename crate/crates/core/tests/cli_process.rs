use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use streambin::harness::{audit, run_process, Mode, ProcessOptions, Scenario};

const BIN: &str = env!("CARGO_BIN_EXE_streambin");

fn small_process_scenario() -> Scenario {
    Scenario::from_json(
        r#"{
            "name": "small_process",
            "seed": 5,
            "workloads": [{ "image": "synthetic-load", "target_cpu": 0.2, "duration_s": 0.2 }],
            "schedule": [{ "at_s": 0.5, "batch_size": 20, "workload": 0 }],
            "cluster": { "max_workers": 2, "pe_startup_delay_s": 0.2, "initial_workers": 1 },
            "irm": {
                "packing_interval": 0.25,
                "report_interval": 0.25,
                "predictor_interval": 0.25,
                "container_idle_timeout": 1,
                "default_cpu_estimate": 0.25,
                "scale_small": 2,
                "scale_large": 4
            },
            "mode": "process",
            "run": { "quiescence_s": 1, "max_duration_s": 60 }
        }"#,
    )
    .unwrap()
}

#[test]
fn process_mode_conserves_messages_and_reaps_pes() {
    let scenario = small_process_scenario();
    let out = run_process(&scenario, &ProcessOptions::new(BIN)).unwrap();
    assert!(!out.summary.timed_out, "{:?}", out.summary);
    assert_eq!(audit::conservation(&out.events, &out.submitted), Ok(()));
    assert_eq!(out.frames.last().unwrap().queue_length, 0);
    let limit = 2 * scenario.irm.idle_timeout_ms();
    let delays = audit::idle_stop_delays(&out.events).unwrap();
    assert!(!delays.is_empty());
    for (pe, d) in delays {
        assert!(d <= limit, "{pe} stopped {d}ms after its last activity");
    }
}

#[test]
fn pe_runner_speaks_line_protocol() {
    let mut child = Command::new(BIN)
        .arg("pe")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdin = child.stdin.take().unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    assert_eq!(lines.next().unwrap().unwrap(), "ready");
    writeln!(stdin, r#"{{"id":"j1","target_cpu":0.3,"duration_s":0.2}}"#).unwrap();
    assert_eq!(lines.next().unwrap().unwrap(), "done j1");
    writeln!(stdin, "nonsense").unwrap();
    assert!(lines.next().unwrap().unwrap().starts_with("error"));
    drop(stdin);
    assert!(child.wait().unwrap().success());
}

#[test]
fn bench_run_and_plot_from_cli() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.json");
    let mut s = small_process_scenario();
    s.mode = Mode::Simulated;
    std::fs::write(&scenario, s.to_json()).unwrap();
    let out = dir.path().join("run");

    let status = Command::new(BIN)
        .args(["bench", "run", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(&out)
        .stdout(Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());
    for f in ["metrics.csv", "events.log", "summary.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let png = dir.path().join("error.png");
    let status = Command::new(BIN)
        .args(["bench", "plot", "--kind", "error", "--run"])
        .arg(&out)
        .arg("--out")
        .arg(&png)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(std::fs::metadata(&png).unwrap().len() > 0);

    let replay = dir.path().join("replay");
    let status = Command::new(BIN)
        .args(["bench", "replay", "--runs", "2", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(&replay)
        .stdout(Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(replay.join("replay.csv").is_file());
}

#[test]
fn invalid_scenario_is_rejected_with_field_names() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        r#"{"seed":1,"workloads":[{"image":"a","target_cpu":2,"duration_s":1}],"schedule":[{"at_s":0,"batch_size":0,"workload":0}]}"#,
    )
    .unwrap();
    let out = Command::new(BIN)
        .args(["bench", "run", "--out"])
        .arg(dir.path().join("run"))
        .arg("--scenario")
        .arg(&path)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("workloads[0].target_cpu"), "{stderr}");
    assert!(stderr.contains("schedule[0].batch_size"), "{stderr}");
}

#[test]
fn connector_send_against_master_process() {
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let addr = format!("127.0.0.1:{port}");
    let mut master = Command::new(BIN)
        .args(["master", "--listen", &addr])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let payload = dir.path().join("payload.bin");
    std::fs::write(&payload, b"hello").unwrap();

    let start = Instant::now();
    let out = loop {
        let out = Command::new(BIN)
            .args(["connector", "send", "--master", &addr, "--image", "img", "--tag", "v1", "--id", "x1", "--retries", "0", "--file"])
            .arg(&payload)
            .output()
            .unwrap();
        if out.status.success() || start.elapsed() > Duration::from_secs(10) {
            break out;
        }
        std::thread::sleep(Duration::from_millis(100));
    };
    let _ = master.kill();
    let _ = master.wait();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "x1 queued");
}
