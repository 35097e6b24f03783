use std::fs;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_streamgp"))
}

const TINY: &str = "field_size = 20, 20\ntransects = 4\nsamples_per_transect = 11\nbatch_size = 22\n\
                    models = gpr, ssgp\npseudo_points = 6\nmax_iterations = 30\n";

#[test]
fn run_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("tiny.conf");
    fs::write(&conf, TINY).unwrap();
    let out = dir.path().join("out");
    let status = bin()
        .args(["run", "--config"])
        .arg(&conf)
        .args(["--seed", "9", "--output"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    let meta = fs::read_to_string(out.join("results.csv.meta")).unwrap();
    assert!(meta.contains("field_seed: 9"));
}

#[test]
fn scaling_study_writes_one_file_per_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("tiny.conf");
    fs::write(&conf, TINY).unwrap();
    let out = dir.path().join("study");
    let status = bin()
        .args(["scaling-study", "--config"])
        .arg(&conf)
        .args(["--alphas", "0.5,1", "--output"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    for f in ["gpr_reference.csv", "ssgp_alpha_0.5.csv", "ssgp_alpha_1.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
}

#[test]
fn bad_config_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    fs::write(&conf, "colour = red\n").unwrap();
    let output = bin().args(["run", "--config"]).arg(&conf).output().unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("unknown key `colour`"));
}
