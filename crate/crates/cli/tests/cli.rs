use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn corpus(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/corpus").join(name)
}

fn scratch(test: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mpicheck-cli-{}-{test}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn mpicheck(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpicheck")).args(args).output().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
    })
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn example_program_explores_clean() {
    let out = mpicheck(&["explore", p(&corpus("sendrecv.program.json")), p(&corpus("sendrecv.spec.json")), "--n", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["verdict"]["verdict"], "ok");
    assert_eq!(v["terminal_outcomes"], 1);
}

#[test]
fn never_sent_message_exits_one() {
    let prog = corpus("deadlock.program.json");
    let spec = corpus("deadlock.spec.json");
    let out = mpicheck(&["explore", p(&prog), p(&spec), "--n", "2", "--monitor", "false"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["verdict"]["verdict"], "deadlock_found");
    let out = mpicheck(&["explore", p(&prog), p(&spec), "--n", "2"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["verdict"]["verdict"], "violation_found");
}

#[test]
fn bad_input_exits_two() {
    let dir = scratch("bad");
    let bad = dir.join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let spec = corpus("sendrecv.spec.json");
    for args in [
        vec!["explore", p(&bad), p(&spec), "--n", "2"],
        vec!["explore", p(&corpus("sendrecv.program.json")), p(&bad), "--n", "2"],
        vec!["explore", p(&corpus("sendrecv.program.json")), p(&spec), "--n", "1"],
        vec!["bench", "heat", "--n", "3"],
        vec!["bench", "convection", "--n", "2", "--ny", "4"],
        vec!["frobnicate"],
    ] {
        let out = mpicheck(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn state_bound_comes_from_the_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_mpicheck"))
        .args(["explore", p(&corpus("pingpong.program.json")), p(&corpus("pingpong.spec.json")), "--n", "2"])
        .env("MPICHECK_MAX_STATES", "3")
        .output()
        .unwrap();
    assert_eq!(json(&out)["verdict"], serde_json::json!({"verdict": "bound_exceeded", "states_visited": 3}));
}

#[test]
fn seeded_runs_are_byte_identical() {
    let (prog, spec) = (corpus("pingpong.program.json"), corpus("pingpong.spec.json"));
    let args = ["run", p(&prog), p(&spec), "--n", "2", "--seed", "11"];
    let a = mpicheck(&args);
    let b = mpicheck(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(json(&a)["final"], "terminated");
}

fn steps(list: &[(&str, Option<i64>, Option<i64>)]) -> Vec<Value> {
    list.iter()
        .map(|(r, rank, tag)| serde_json::json!({"rule": r, "rank": rank, "tag": tag}))
        .collect()
}

#[test]
fn top_row_trace_prints_six_boxes() {
    let dir = scratch("trace");
    let spec = corpus("sendrecv.spec.json");
    // Run both processes through `set` and the branch to reach the state
    // where rank 0 heads its isend and rank 1 its irecv.
    let run = mpicheck(&["run", p(&corpus("sendrecv.program.json")), p(&spec), "--n", "2"]);
    let prelude = serde_json::json!({
        "initial": json(&run)["trace"]["initial"],
        "steps": steps(&[
            ("Set", Some(0), None),
            ("SeqSkip", Some(0), None),
            ("IfTrue", Some(0), None),
            ("Set", Some(1), None),
            ("SeqSkip", Some(1), None),
            ("IfFalse", Some(1), None),
        ]),
    });
    let path = dir.join("trace.json");
    std::fs::write(&path, prelude.to_string()).unwrap();
    let out = mpicheck(&["trace", p(&path), p(&spec)]);
    assert_eq!(out.status.code(), Some(0));
    let start = json(&out)["states"].as_array().unwrap().last().unwrap().clone();

    let top = serde_json::json!({
        "initial": start,
        "steps": steps(&[
            ("Send", Some(0), Some(0)),
            ("TransferNoWait", None, Some(0)),
            ("SeqSkip", Some(0), None),
            ("WaitSend", Some(0), Some(0)),
            ("Recv", Some(1), Some(0)),
            ("SeqSkip", Some(1), None),
            ("WaitRecv", Some(1), Some(0)),
        ]),
    });
    std::fs::write(&path, top.to_string()).unwrap();
    let out = mpicheck(&["--format", "text", "trace", "--fold-local", p(&path), p(&spec)]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(out.status.code(), Some(0), "{text}");
    let boxes = text.lines().filter(|l| l.starts_with("State ")).count();
    assert_eq!(boxes, 6, "{text}");
    assert!(text.contains("SeqSkip@p0, WaitSend@p0(tag 0)"), "{text}");
    let last = text.rsplit("State 5").next().unwrap();
    assert!(last.contains("B_m = {0 -> 5}") && last.contains("B_r = {}") && last.contains("B_s = {}"), "{last}");

    let out = mpicheck(&["trace", p(&path), p(&spec)]);
    assert_eq!(json(&out)["states"].as_array().unwrap().len(), 8);
}

#[test]
fn replaying_a_broken_trace_names_the_step() {
    let dir = scratch("broken");
    let run = mpicheck(&["run", p(&corpus("sendrecv.program.json")), p(&corpus("sendrecv.spec.json")), "--n", "2", "--seed", "3"]);
    let mut v = json(&run);
    let steps = v["trace"]["steps"].as_array_mut().unwrap();
    steps.insert(0, serde_json::json!({"rule": "WaitRecv", "rank": 1, "tag": 0}));
    let path = dir.join("broken.json");
    std::fs::write(&path, v.to_string()).unwrap();
    let out = mpicheck(&["trace", p(&path), p(&corpus("sendrecv.spec.json"))]);
    assert_eq!(out.status.code(), Some(1));
    let report = json(&out);
    assert_eq!(report["valid"], false);
    assert_eq!(report["states"].as_array().unwrap().len(), 1);
}

#[test]
fn bench_check_passes_in_both_modes() {
    for mode in ["sim", "workers"] {
        let out = mpicheck(&["bench", "heat", "--n", "2", "--mode", mode, "--check"]);
        assert_eq!(out.status.code(), Some(0), "{mode}");
        let v = json(&out);
        assert_eq!(v["passed"], true);
        assert_eq!(v["report"]["grid"]["max_deviation"], 0.0);
    }
    let out = mpicheck(&["bench", "convection", "--n", "4", "--schedules", "20", "--check"]);
    assert_eq!(json(&out)["distinct_outcomes"], 1);
}

#[test]
fn bench_writes_solution_files() {
    let dir = scratch("files");
    let csv = dir.join("u.csv");
    let bin = dir.join("u.bin");
    let plot = dir.join("u.dat");
    for (path, extra) in [(&csv, "--gnuplot"), (&bin, "--gnuplot")] {
        let out = mpicheck(&["bench", "poisson", "--nx", "8", "--nt", "5", "--n", "2", "--output", p(path), extra, p(&plot)]);
        assert_eq!(out.status.code(), Some(0));
    }
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 8);
    let mut f = std::fs::File::open(&bin).unwrap();
    let arr = mpicheck::arrays::read_binary(&mut f).unwrap();
    assert_eq!((arr.rows(), arr.cols()), (8, 8));
    assert_eq!(std::fs::read_to_string(&plot).unwrap().lines().filter(|l| !l.is_empty()).count(), 64);
}

#[test]
fn models_and_validation_round_trip() {
    let dir = scratch("model");
    let out = mpicheck(&["model", "heat", "--steps", "1", "--out-dir", p(&dir)]);
    assert_eq!(out.status.code(), Some(0));
    let prog = dir.join("heat.program.json");
    let spec = dir.join("heat.spec.json");
    let out = mpicheck(&["validate", p(&spec)]);
    assert_eq!(json(&out)["valid"], true);
    let out = mpicheck(&["explore", p(&prog), p(&spec), "--n", "3", "--sequential"]);
    assert_eq!(out.status.code(), Some(0));

    let gap = dir.join("gap.json");
    std::fs::write(&gap, r#"{"sender":0,"receiver":1,"message":"tag","barrier_tag":"index * 40000","barrier_count":1}"#).unwrap();
    let out = mpicheck(&["validate", p(&gap)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("40000"));
}
