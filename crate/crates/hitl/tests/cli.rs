use std::path::Path;
use std::process::{Command, Output};

fn hitl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hitl")).current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

const CONFIG: &str = r#"
corpus = "corpus.jsonl"
tasks = ["quality"]
output_dir = "out"

[[annotator]]
kind = "simulated"
id = "a"
hit_rate = 0.5
conf_correct_mean = 92.0
conf_wrong_mean = 78.0
conf_sd = 6.0
seed = 1

[[annotator]]
kind = "simulated"
id = "b"
hit_rate = 0.55
conf_correct_mean = 92.0
conf_wrong_mean = 78.0
conf_sd = 6.0
seed = 2
"#;

#[test]
fn synth_calibrate_apply_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&hitl(d, &["synth", "--units", "200", "--seed", "4", "-o", "corpus.jsonl"])), 0);
    std::fs::write(d.join("run.toml"), CONFIG).unwrap();

    let cal = hitl(d, &["calibrate", "-c", "run.toml"]);
    assert_eq!(code(&cal), 0, "{}", String::from_utf8_lossy(&cal.stderr));
    assert!(String::from_utf8_lossy(&cal.stdout).contains("quality"));
    assert!(d.join("out/calibration/quality.report").exists());

    let apply = hitl(d, &["apply", "-c", "run.toml"]);
    assert_eq!(code(&apply), 0, "{}", String::from_utf8_lossy(&apply.stderr));
    assert!(d.join("out/final/quality.labels").exists());

    let explicit = hitl(d, &["apply", "-c", "run.toml", "--thresholds", "95,2", "--output-dir", "out2"]);
    assert_eq!(code(&explicit), 0);
    assert!(d.join("out2/final/quality.labels").exists());

    assert_eq!(code(&hitl(d, &["report", "-c", "run.toml"])), 0);
}

#[test]
fn review_mode_exits_pending() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    hitl(d, &["synth", "--units", "100", "-o", "corpus.jsonl"]);
    std::fs::write(d.join("run.toml"), CONFIG).unwrap();
    let out = hitl(d, &["apply", "-c", "run.toml", "--mode", "review", "--thresholds", "100,0"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("await review"));
    assert!(d.join("out/review/events.jsonl").exists());
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&hitl(d, &["calibrate", "-c", "absent.toml"])), 2);

    std::fs::write(d.join("run.toml"), CONFIG).unwrap();
    // corpus file does not exist yet
    assert_eq!(code(&hitl(d, &["calibrate", "-c", "run.toml"])), 2);

    hitl(d, &["synth", "--units", "30", "-o", "corpus.jsonl"]);
    assert_eq!(code(&hitl(d, &["calibrate", "-c", "run.toml", "--fraction", "1.5"])), 2);
    assert_eq!(code(&hitl(d, &["calibrate", "-c", "run.toml", "--tasks", "sentiment"])), 2);
    std::fs::write(d.join("bad.toml"), format!("unknown_key = 1\n{CONFIG}")).unwrap();
    assert_eq!(code(&hitl(d, &["calibrate", "-c", "bad.toml"])), 2);
    // apply before calibrate, no thresholds given
    assert_eq!(code(&hitl(d, &["apply", "-c", "run.toml"])), 2);
}

#[test]
fn convert_tsv_and_validate_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let tsv = "query_id\tquery\tpane_id\tquestion\toption_1\toption_2\toption_3\tquality\tcoverage\n\
               q1\tjaguar\tp1\tWhich jaguar?\tanimal\tcar\tteam\t4\t3\n\
               q1\tjaguar\tp2\tWhat about jaguar?\tprice\tspeed\t\t2\t2\n\
               q1\tjaguar\tp3\tJaguar as in?\tcat\tbrand\tos\t5\t4\n";
    std::fs::write(d.join("dump.tsv"), tsv).unwrap();
    let out = hitl(d, &["convert", "dump.tsv", "-o", "corpus.jsonl"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["units"], 3);

    let again = hitl(d, &["convert", "corpus.jsonl"]);
    assert_eq!(code(&again), 0);
    assert_eq!(serde_json::from_slice::<serde_json::Value>(&again.stdout).unwrap(), summary);

    std::fs::write(d.join("broken.jsonl"), "{not json}\n").unwrap();
    assert_eq!(code(&hitl(d, &["convert", "broken.jsonl"])), 2);
}
