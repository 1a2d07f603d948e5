use std::path::Path;
use std::process::{Command, Output};

const SCENARIO: &str = r#"
[signal]
frame_len = 128

[scenario]
num_emitters = 2
overlap = "50%"
snr_db = 20.0
samples_per_combo = 6
seed = 2
"#;

fn smei(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smei"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .env("SMEI_THREADS", "1")
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn missing_scenario_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = smei(dir.path(), &["gen", "--scenario", "/nonexistent/s.toml"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/s.toml"));
}

#[test]
fn invalid_scenario_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, SCENARIO.replace("num_emitters = 2", "num_emitters = 40")).unwrap();
    let o = smei(dir.path(), &["gen", "--scenario", p.to_str().unwrap()]);
    assert_eq!(code(&o), 4);
    std::fs::write(&p, "[scenario]\nunknown_key = 1\n").unwrap();
    assert_eq!(code(&smei(dir.path(), &["gen", "--scenario", p.to_str().unwrap()])), 4);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&smei(dir.path(), &["train"])), 2);
    assert_eq!(code(&smei(dir.path(), &["nonsense"])), 2);
}

#[test]
fn corrupt_checkpoint_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("x.ckpt");
    std::fs::write(&ck, b"not a checkpoint").unwrap();
    let ds = dir.path().join("d.smd");
    std::fs::write(&ds, b"").unwrap();
    let o = smei(dir.path(), &["eval", "--checkpoint", ck.to_str().unwrap(), "--dataset", ds.to_str().unwrap()]);
    assert_eq!(code(&o), 5);
}

#[test]
fn gen_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.toml");
    std::fs::write(&p, SCENARIO).unwrap();
    let out = dir.path().join("out");
    let scen = p.to_str().unwrap();
    assert!(smei(&out, &["gen", "--scenario", scen]).status.success());
    for f in ["train.smd", "val.smd", "test.smd", "stats.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let o = smei(&out, &["train", "--scenario", scen, "--epochs", "2", "--batch-size", "4", "--base-channels", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let epochs = std::fs::read_to_string(out.join("smei_seed2_epochs.csv")).unwrap();
    assert_eq!(epochs.lines().count(), 3);

    let ck = out.join("smei_seed2.ckpt");
    let test = out.join("test.smd");
    let o = smei(&out, &["eval", "--checkpoint", ck.to_str().unwrap(), "--dataset", test.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let eval: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("eval.json")).unwrap()).unwrap();
    let trained: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("smei_seed2_test.json")).unwrap()).unwrap();
    assert_eq!(eval["report"]["subset_accuracy"], trained["report"]["subset_accuracy"]);
}

#[test]
fn eval_rejects_mismatched_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.toml");
    std::fs::write(&p, SCENARIO).unwrap();
    let out = dir.path().join("out");
    let scen = p.to_str().unwrap();
    assert!(smei(&out, &["train", "--scenario", scen, "--epochs", "1", "--batch-size", "4", "--base-channels", "4"])
        .status
        .success());
    std::fs::write(&p, SCENARIO.replace("frame_len = 128", "frame_len = 256")).unwrap();
    assert!(smei(&out, &["gen", "--scenario", scen]).status.success());
    let ck = out.join("smei_seed2.ckpt");
    let test = out.join("test.smd");
    let o = smei(&out, &["eval", "--checkpoint", ck.to_str().unwrap(), "--dataset", test.to_str().unwrap()]);
    assert_eq!(code(&o), 7);
}
