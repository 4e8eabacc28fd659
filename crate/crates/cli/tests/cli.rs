use std::path::PathBuf;
use std::process::{Command, Output};

fn gary(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gary")).args(args).env_remove("GARY_LOG_DIR").output().unwrap()
}

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name).to_string_lossy().into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn segment_prints_phrases() {
    let out = gary(&["segment", &fixture("text_b.txt"), "--max-words", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let seg: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let phrases = seg["phrases"].as_array().unwrap();
    assert!(!phrases.is_empty());
    for p in phrases {
        let span = p["word_span"].as_array().unwrap();
        let n = span[1].as_u64().unwrap() - span[0].as_u64().unwrap() + 1;
        assert!(n <= 3);
    }
}

#[test]
fn missing_input_is_a_usage_error() {
    assert_eq!(code(&gary(&["segment", "/nonexistent/text.txt"])), 2);
    assert_eq!(code(&gary(&["replay", "/nonexistent/session.jsonl"])), 2);
    assert_eq!(code(&gary(&["crossover", "/nonexistent/config.json"])), 2);
}

#[test]
fn unknown_profile_is_a_usage_error() {
    let out = gary(&["run-sim", &fixture("text_a.txt"), "--profile", "speedy"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("speedy"));
}

#[test]
fn bad_arguments_are_rejected() {
    assert_eq!(code(&gary(&["run-sim", &fixture("text_a.txt"), "--profile", "typical", "--mode", "fast"])), 2);
    assert_eq!(code(&gary(&["no-such-command"])), 2);
}

#[test]
fn empty_text_fails() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.txt");
    std::fs::write(&path, "  \n").unwrap();
    assert_eq!(code(&gary(&["segment", path.to_str().unwrap()])), 1);
}

#[test]
fn run_sim_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("s.jsonl");
    let trace = dir.path().join("t.csv");
    let out = gary(&[
        "run-sim", &fixture("text_b.txt"), "--profile", "typical", "--mode", "traditional", "--seed", "4",
        "--out", log.to_str().unwrap(), "--trace", trace.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((metrics["effective_speed_syll_s"].as_f64().unwrap() - 3.1).abs() < 0.05);
    assert!(std::fs::read_to_string(&trace).unwrap().starts_with("t_ms,x,y,valid"));

    let ok = gary(&["replay", log.to_str().unwrap()]);
    assert_eq!(code(&ok), 0);
    assert_eq!(String::from_utf8_lossy(&ok.stdout).trim(), "PASS");

    let mut bytes = std::fs::read(&log).unwrap();
    let i = bytes.len() / 2;
    bytes[i] = if bytes[i] == b'1' { b'2' } else { b'1' };
    std::fs::write(&log, &bytes).unwrap();
    let bad = gary(&["replay", log.to_str().unwrap()]);
    assert_ne!(code(&bad), 0);
}

#[test]
fn log_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_gary"))
        .args(["run-sim", &fixture("text_b.txt"), "--profile", "typical", "--mode", "traditional", "--seed", "2"])
        .env("GARY_LOG_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(dir.path().join("typical-traditional-2.jsonl").is_file());
}

#[test]
fn profile_from_json_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    std::fs::write(
        &path,
        r#"{"name":"custom","pace_syll_s":3.0,"fixation_ms_mean":220,"fixation_ms_sd":40,"regression_prob":0.0,
            "off_text_prob":0.0,"off_text_ms":500,"decoding_errors":2,"seed":9}"#,
    )
    .unwrap();
    let out = gary(&["run-sim", &fixture("text_b.txt"), "--profile", path.to_str().unwrap(), "--mode", "traditional"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn crossover_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = gary(&["crossover", &fixture("crossover.json"), "--seeds", "1", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sessions.csv")).unwrap();
    // three profiles, two sessions each, plus the header
    assert_eq!(csv.lines().count(), 7);
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert!(summary.is_object());
}

#[test]
fn crossover_config_errors_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, r#"{"profiles":[],"text_a":"a.txt","text_b":"b.txt"}"#).unwrap();
    assert_eq!(code(&gary(&["crossover", path.to_str().unwrap()])), 2);
    std::fs::write(&path, r#"{"profiles":["typical"],"text_a":"a.txt","text_b":"b.txt","colour":1}"#).unwrap();
    assert_eq!(code(&gary(&["crossover", path.to_str().unwrap()])), 2);
}
