use std::fs;
use std::path::Path;

use lvse_core::error::Error;
use lvse_core::fixtures;
use lvse_core::grid::{load_grid, write_grid};

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        fs::copy(e.path(), to.join(e.file_name())).unwrap();
    }
}

/// Writes synth-rural, applies `edit` to one table and loads it back.
fn load_edited(file: &str, edit: impl FnOnce(String) -> String) -> Result<lvse_core::GridTopology, Error> {
    let dir = tempfile::tempdir().unwrap();
    write_grid(&fixtures::synth_rural(0, 4).unwrap(), dir.path()).unwrap();
    let path = dir.path().join(file);
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, edit(text)).unwrap();
    load_grid(dir.path())
}

#[test]
fn bundled_grids_round_trip() {
    for name in fixtures::BUNDLED {
        let grid = fixtures::bundled(name, 100, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_grid(&grid, dir.path()).unwrap();
        let back = load_grid(dir.path()).unwrap();
        assert_eq!(back.buses, grid.buses);
        assert_eq!(back.lines, grid.lines);
        assert_eq!(back.cabinets, grid.cabinets);
        assert_eq!(back.prosumers, grid.prosumers);
        assert_eq!(back.transformer, grid.transformer);
        assert_eq!(back.profiles, grid.profiles);
    }
}

#[test]
fn shipped_grid_directories_match_the_generators() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../grids");
    let chain3 = load_grid(root.join("chain3")).unwrap();
    assert_eq!(chain3.profiles, fixtures::chain3(0, fixtures::STEPS_PER_DAY).unwrap().profiles);
    let rural = load_grid(root.join("synth-rural")).unwrap();
    let generated = fixtures::synth_rural(fixtures::SYNTH_RURAL_START, fixtures::SYNTH_RURAL_STEPS).unwrap();
    assert_eq!(rural.prosumers, generated.prosumers);
    assert_eq!(rural.profiles, generated.profiles);
}

#[test]
fn unknown_bus_is_named() {
    let err = load_edited("lines.csv", |t| t.replacen("B02,B03", "B02,B99", 1)).unwrap_err();
    assert_eq!(err.to_string(), "unknown bus B99");
}

#[test]
fn duplicate_ids_are_named() {
    let err = load_edited("lines.csv", |t| t.replacen("L02,", "L01,", 1)).unwrap_err();
    assert!(matches!(&err, Error::DuplicateId { kind: "line", id } if id == "L01"), "{err}");
    let err = load_edited("buses.csv", |t| t.replacen("B20,", "B19,", 1)).unwrap_err();
    assert!(err.to_string().contains("B19"), "{err}");
}

#[test]
fn disconnected_bus_is_named() {
    let err = load_edited("lines.csv", |t| t.lines().filter(|l| !l.starts_with("L18,")).map(|l| format!("{l}\n")).collect())
        .unwrap_err();
    assert!(matches!(&err, Error::Disconnected(b) if b == "B20"), "{err}");
}

#[test]
fn missing_profile_is_named() {
    let err = load_edited("prosumers.csv", |t| t.replacen("prof_H01", "prof_nowhere", 1)).unwrap_err();
    assert!(err.to_string().contains("prof_nowhere"), "{err}");
    assert!(err.to_string().contains("H01"), "{err}");
}

#[test]
fn schema_violations_are_reported() {
    let err = load_edited("lines.csv", |t| t.replacen("r_ohm", "resistance", 1)).unwrap_err();
    assert!(matches!(err, Error::Schema { .. }), "{err}");
    let err = load_edited("profiles.csv", |t| {
        let mut lines: Vec<&str> = t.lines().collect();
        lines.remove(2);
        lines.join("\n") + "\n"
    })
    .unwrap_err();
    assert!(matches!(err, Error::Schema { .. }), "{err}");
}

#[test]
fn missing_directory_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_grid(dir.path().join("nope")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    copy_dir(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../grids/chain3"), &dir.path().join("c"));
    assert!(load_grid(dir.path().join("c")).is_ok());
}
