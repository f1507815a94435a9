use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use lvse_core::config::ScenarioConfig;
use lvse_core::error::Error;
use lvse_core::scenario::{compare_variants, run_scenario, Dump, QualityReport};

fn config(text: &str, out: &Path) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::parse(text, Path::new(env!("CARGO_MANIFEST_DIR"))).unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

const CHAIN3: &str = "
grid = bundled:chain3
t1 = 4
seed = 7
[variant 1]
substation = none
[variant 2]
substation = digions
";

fn report(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("variant_{id}")).join("report.json")
}

#[test]
fn chain3_counts_every_bus_and_line_per_timestep() {
    let out = tempfile::tempdir().unwrap();
    let run = run_scenario(config(CHAIN3, out.path()), &BTreeSet::new()).unwrap();
    assert_eq!(run.failed(), 0);
    let r = QualityReport::from_json_file(report(out.path(), "1")).unwrap();
    assert_eq!(r.voltage.count, 12);
    assert_eq!(r.loading.count, 8);
    assert_eq!(r.dropped_elements, 0);
    assert_eq!((r.seed, r.timesteps), (7, 4));
    assert!(r.nonconverged_timesteps.is_empty());
    for f in ["report.csv", "allocation.csv", "se_diagnostics.csv"] {
        assert!(out.path().join("variant_1").join(f).exists(), "{f}");
    }
    assert!(out.path().join("comparison.csv").exists());
    assert!(out.path().join("run.log").exists());
}

#[test]
fn repeated_runs_are_byte_identical_across_worker_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut cfg = config(CHAIN3, a.path());
    cfg.workers = 1;
    run_scenario(cfg, &BTreeSet::new()).unwrap();
    let mut cfg = config(CHAIN3, b.path());
    cfg.workers = 8;
    run_scenario(cfg, &BTreeSet::new()).unwrap();
    for id in ["1", "2"] {
        assert_eq!(fs::read(report(a.path(), id)).unwrap(), fs::read(report(b.path(), id)).unwrap());
    }
    assert_eq!(
        fs::read(a.path().join("comparison.json")).unwrap(),
        fs::read(b.path().join("comparison.json")).unwrap()
    );
}

#[test]
fn dumps_are_written_on_request() {
    let out = tempfile::tempdir().unwrap();
    let dumps: BTreeSet<Dump> = [Dump::Truth, Dump::Measurements, Dump::Estimates, Dump::Samples].into();
    run_scenario(config(CHAIN3, out.path()), &dumps).unwrap();
    let truth = fs::read_to_string(out.path().join("pf_truth.csv")).unwrap();
    assert!(truth.starts_with("t,element,quantity,value\n"));
    let v = out.path().join("variant_1");
    let ms = fs::read_to_string(v.join("measurements.csv")).unwrap();
    // V at the slack plus pseudo P and Q of the one household, per timestep
    assert_eq!(ms.lines().count(), 1 + 4 * 3);
    let est = fs::read_to_string(v.join("se_result.csv")).unwrap();
    assert_eq!(est.lines().count(), 1 + 4 * (3 * 2 + 2));
    let samples = fs::read_to_string(v.join("samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 1 + 12 + 8);
}

#[test]
fn a_failing_variant_does_not_stop_the_others() {
    // without the standard load profile only fully metered variants can run
    let text = "
grid = bundled:chain3
t1 = 4
h0_profile = missing
[variant 1]
substation = none
[variant 2]
imsys_pct = 100
";
    let out = tempfile::tempdir().unwrap();
    let run = run_scenario(config(text, out.path()), &BTreeSet::new()).unwrap();
    assert_eq!(run.failed(), 1);
    assert!(run.variants[0].error.as_deref().unwrap().contains("missing"));
    assert!(out.path().join("variant_1/errors.log").exists());
    assert!(report(out.path(), "2").exists());
    assert!(!report(out.path(), "1").exists());
}

#[test]
fn comparisons_need_matching_grids_and_ranges() {
    let a = tempfile::tempdir().unwrap();
    run_scenario(config(CHAIN3, a.path()), &BTreeSet::new()).unwrap();
    let r1 = QualityReport::from_json_file(report(a.path(), "1")).unwrap();
    let r2 = QualityReport::from_json_file(report(a.path(), "2")).unwrap();

    let table = compare_variants(&[r2.clone(), r1.clone()]).unwrap();
    assert_eq!(table.rows.len(), 2);
    assert_eq!(table.rows[0].variant, "1");
    let csv = table.to_csv();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().next().unwrap().contains("monitoring_active_mgmt"));

    let mut other_grid = r2.clone();
    other_grid.grid_digest = "something else".into();
    assert!(matches!(compare_variants(&[r1.clone(), other_grid]), Err(Error::Incomparable(_))));
    let mut other_range = r2;
    other_range.t1 = 5;
    assert!(matches!(compare_variants(&[r1.clone(), other_range]), Err(Error::Incomparable(_))));
    assert!(compare_variants(&[r1]).is_err());
}

#[test]
fn reference_variants_order_by_declared_id() {
    let text = "
grid = bundled:chain3
t1 = 2
[variant 10]
[variant 2]
substation = digions
[variant 1]
";
    let out = tempfile::tempdir().unwrap();
    let run = run_scenario(config(text, out.path()), &BTreeSet::new()).unwrap();
    let table = compare_variants(&run.reports).unwrap();
    let ids: Vec<&str> = table.rows.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(ids, ["1", "2", "10"]);
}

#[test]
fn fingerprint_tracks_results_not_plumbing() {
    let a = config(CHAIN3, Path::new("x"));
    let mut b = config(CHAIN3, Path::new("y"));
    b.workers = 5;
    let (sa, sb) = (
        lvse_core::Study::new(a.clone(), lvse_core::fixtures::chain3(0, 4).unwrap()).unwrap(),
        lvse_core::Study::new(b, lvse_core::fixtures::chain3(0, 4).unwrap()).unwrap(),
    );
    assert_eq!(sa.fingerprint, sb.fingerprint);
    let mut c = a;
    c.seed = 8;
    let sc = lvse_core::Study::new(c, lvse_core::fixtures::chain3(0, 4).unwrap()).unwrap();
    assert_ne!(sa.fingerprint, sc.fingerprint);
}
