use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use vservo::metrics::SUMMARY_CSV_HEADER;
use vservo::runner::{
    EPISODES_CSV_HEADER, FRAME_CSV_HEADER, POSE_ERROR_CSV_HEADER, TRAJECTORY_CSV_HEADER, VELOCITY_CSV_HEADER,
};

fn scenario(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name).to_str().unwrap().to_owned()
}

fn vservo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vservo")).args(args).env("VSERVO_LOG", "error").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Parses a CSV file, checks its header and that every row has as many
/// fields as the header. Returns the data rows.
fn csv(path: &Path, header: &str) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(header), "{}", path.display());
    let width = header.split(',').count();
    lines
        .map(|l| {
            let fields: Vec<String> = l.split(',').map(str::to_owned).collect();
            assert_eq!(fields.len(), width, "{}: {l}", path.display());
            fields
        })
        .collect()
}

fn number(s: &str) -> f64 {
    s.parse().unwrap_or_else(|_| panic!("not a number: {s:?}"))
}

fn check_tree(out: &Path, trials: usize) -> Value {
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    for key in ["variant", "trials", "base_seed", "uncertainty_policy", "summary", "episodes"] {
        assert!(summary.get(key).is_some(), "summary.json lacks {key}");
    }
    let s = &summary["summary"];
    for key in [
        "variant",
        "trials",
        "successes",
        "success_rate",
        "te_mm",
        "re_deg",
        "lr",
        "correlation",
        "correlation_frames",
        "nees",
        "terminations",
    ] {
        assert!(s.get(key).is_some(), "summary lacks {key}");
    }
    assert_eq!(s["trials"].as_u64(), Some(trials as u64));
    assert_eq!(summary["episodes"].as_array().unwrap().len(), trials);

    let rows = csv(&out.join("summary.csv"), SUMMARY_CSV_HEADER);
    assert_eq!(rows.len(), 1);
    assert_eq!(number(&rows[0][1]) as usize, trials);

    let episodes = csv(&out.join("episodes.csv"), EPISODES_CSV_HEADER);
    assert_eq!(episodes.len(), trials);
    let mut total_frames = 0;
    for (i, row) in episodes.iter().enumerate() {
        assert_eq!(row[0], i.to_string());
        let frames = number(&row[3]) as usize;
        total_frames += frames;
        let per_frame = csv(&out.join(format!("episodes/episode_{i:04}.csv")), FRAME_CSV_HEADER);
        assert_eq!(per_frame.len(), frames);
        for f in &per_frame {
            // gt pose columns are always filled
            for v in &f[3..10] {
                assert!(number(v).is_finite());
            }
        }
    }
    assert_eq!(csv(&out.join("series/pose_error.csv"), POSE_ERROR_CSV_HEADER).len(), total_frames);
    assert_eq!(csv(&out.join("series/velocity.csv"), VELOCITY_CSV_HEADER).len(), total_frames);
    assert_eq!(csv(&out.join("series/trajectory.csv"), TRAJECTORY_CSV_HEADER).len(), total_frames);
    summary
}

#[test]
fn run_writes_a_parseable_tree() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = vservo(&["run", "--config", &scenario("nominal.json"), "--trials", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("coupled-ekf"), "{stdout}");
    let summary = check_tree(&out, 3);
    assert_eq!(summary["variant"], "coupled-ekf");
    assert_eq!(summary["uncertainty_policy"], true);
    assert_eq!(summary["base_seed"], 1);
}

#[test]
fn compare_writes_one_tree_per_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("cmp");
    let o = vservo(&[
        "compare",
        "--config",
        &scenario("occlusion.json"),
        "--trials",
        "2",
        "--seed",
        "40",
        "--no-uncertainty-policy",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for variant in ["coupled-ekf", "pbvs-perframe"] {
        let s = check_tree(&out.join(variant), 2);
        assert_eq!(s["variant"], variant);
        assert_eq!(s["base_seed"], 40);
        assert_eq!(s["uncertainty_policy"], false);
    }
    let rows = csv(&out.join("compare.csv"), SUMMARY_CSV_HEADER);
    assert_eq!(rows.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["coupled-ekf", "pbvs-perframe"]);
    let json: Value = serde_json::from_str(&fs::read_to_string(out.join("compare.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 2);
}

#[test]
fn zero_trials_give_an_empty_but_valid_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("empty");
    let o = vservo(&["run", "--config", &scenario("nominal.json"), "--trials", "0", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = check_tree(&out, 0);
    assert_eq!(summary["summary"]["success_rate"], 0.0);
    assert!(summary["summary"]["te_mm"].is_null());
    assert!(fs::read_dir(out.join("episodes")).unwrap().next().is_none());
}

#[test]
fn malformed_config_exits_2_with_location() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{\n  \"control\": {\n    \"lamda\": 0.5\n  }\n}\n").unwrap();
    let out = tmp.path().join("never");
    let o = vservo(&["run", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("line 3"), "{err}");
    assert!(err.contains("control"), "{err}");
    assert!(err.contains("lamda"), "{err}");
    assert!(!out.exists());
}

#[test]
fn invalid_value_exits_2_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{ "sensing": { "dropout_prob": 1.5 } }"#).unwrap();
    let o = vservo(&["run", "--config", bad.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dropout_prob"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = vservo(&[
        "run",
        "--config",
        tmp.path().join("absent.json").to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let cfg = scenario("nominal.json");
    for args in [
        vec!["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--variant", "ibvs"],
        vec!["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--parallelism", "0"],
        vec!["run", "--out", out.to_str().unwrap()],
        vec!["launch"],
    ] {
        let o = vservo(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn missing_model_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("s.json");
    fs::write(&cfg, r#"{ "object": { "model": "gone.xyz" } }"#).unwrap();
    let o = vservo(&["run", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("gone.xyz"));
}

#[test]
fn log_level_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_vservo"))
        .args(["run", "--config", &scenario("nominal.json"), "--trials", "1", "--out"])
        .arg(tmp.path().join("o"))
        .env("VSERVO_LOG", "info")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(stderr(&o).contains("running 1 trials"), "{}", stderr(&o));
}
