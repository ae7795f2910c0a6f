use std::net::TcpListener;
use std::process::Command;

use semswarm_core::evolution::runlog::read_run_log;

fn semswarm() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_semswarm"));
    c.env_remove("SEMSWARM_EMBED_ENDPOINT");
    c
}

const SMALL: [&str; 8] = ["--agents", "48", "--steps", "20", "--image-size", "32", "--quiet", "--workers=1"];

#[test]
fn evolve_writes_a_readable_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.jsonl");
    let status = semswarm()
        .args(["evolve", "--prompt", "cluster", "--generations", "3", "--seed", "4", "--out"])
        .arg(&out)
        .args(SMALL)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let h = read_run_log(std::io::BufReader::new(std::fs::File::open(&out).unwrap())).unwrap();
    assert_eq!(h.records.len(), 3);
    assert_eq!(h.config.run_seed, 4);
    assert_eq!(h.config.n_agents, 48);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.jsonl");
    let cases: [&[&str]; 4] = [
        &["--embedder", "remote"],
        &["--agents", "1"],
        &["--image-size", "4"],
        &["--frames", "0"],
    ];
    for extra in cases {
        let status = semswarm()
            .args(["evolve", "--prompt", "cluster", "--generations", "1", "--out"])
            .arg(&out)
            .args(extra)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(2), "{extra:?}");
    }
    let status = semswarm().args(["evolve", "--prompt", " ", "--out"]).arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(2));
    let status = semswarm().args(["evolve", "--no-such-flag"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn unreachable_embedding_service_exits_with_three() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.jsonl");
    let output = semswarm()
        .args(["evolve", "--prompt", "cluster", "--generations", "1", "--embedder", "remote", "--out"])
        .arg(&out)
        .arg("--endpoint")
        .arg(format!("http://127.0.0.1:{port}"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3), "{}", String::from_utf8_lossy(&output.stderr));
}
