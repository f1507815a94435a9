use std::fs;
use std::path::Path;
use std::process::Command;

fn lvse() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lvse"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("study.conf");
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn run_succeeds_and_compare_reads_the_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "grid = bundled:chain3\nt1 = 3\n[variant 1]\n[variant 2]\nsubstation = digions\n");
    let out = dir.path().join("out");
    let status = lvse()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--workers", "2", "--dump", "truth"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("pf_truth.csv").exists());

    let cmp = lvse()
        .args(["compare", "--reports"])
        .arg(out.join("variant_2/report.json"))
        .arg(out.join("variant_1/report.json"))
        .output()
        .unwrap();
    assert_eq!(cmp.status.code(), Some(0));
    let text = String::from_utf8(cmp.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(1).unwrap().starts_with("1,"));
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "grid = bundled:chain3\nt1 = 0\n[variant 1]\n");
    assert_eq!(lvse().args(["run", "--config"]).arg(&cfg).status().unwrap().code(), Some(1));
    let cfg = write_config(dir.path(), "grid = nowhere\nt1 = 4\n[variant 1]\n");
    assert_eq!(lvse().args(["run", "--config"]).arg(&cfg).status().unwrap().code(), Some(1));
    assert_eq!(lvse().args(["run", "--config", "/no/such/file"]).status().unwrap().code(), Some(1));
    assert_eq!(lvse().args(["validate", "--grid", "/no/such/dir"]).status().unwrap().code(), Some(1));
}

#[test]
fn partial_failure_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "grid = bundled:chain3\nt1 = 2\nh0_profile = missing\nout = out\n[variant 1]\n[variant 2]\nimsys_pct = 100\n",
    );
    assert_eq!(lvse().args(["run", "--config"]).arg(&cfg).status().unwrap().code(), Some(2));
    assert!(dir.path().join("out/variant_2/report.json").exists());
}

#[test]
fn validate_accepts_the_shipped_grids() {
    for g in ["chain3", "synth-rural"] {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../grids").join(g);
        let out = lvse().args(["validate", "--grid"]).arg(&dir).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
