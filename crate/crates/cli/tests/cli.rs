use std::process::Command;

fn slscom() -> Command {
    Command::new(env!("CARGO_BIN_EXE_slscom"))
}

#[test]
fn evaluate_writes_one_row_per_test_snr() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let status = slscom()
        .args(["evaluate", "--preset", "desk", "--seed", "3", "--repeats-train", "1", "--repeats-test", "1"])
        .args(["--mode", "rscom", "--labels", "2000", "--train-snr", "0"])
        .args(["--dataset", "synthetic", "--synthetic-train", "2400", "--synthetic-test", "100"])
        .args(["--unlabeled", "100", "--tscom-standin-labels", "0", "--epochs-finetune", "1"])
        .args(["--test-limit", "40", "--test-snrs", "-4,0,2", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(out.join("aggregate.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# fingerprint="));
    assert_eq!(lines.next().unwrap(), "mode,labels,train_snr,test_snr,mean_top1,std_top1,runs");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.starts_with("rscom,2000,0,")));
}

#[test]
fn bad_key_fails_with_error_class() {
    let out = slscom().args(["evaluate", "--no-such-key", "1"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("UnknownKey"));
}
