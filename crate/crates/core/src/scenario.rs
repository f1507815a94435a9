//! Batch runner: shared ground truth, per-variant estimation and reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::allocation::{allocate, Allocation, EquipmentVariant, SubstationDevice};
use crate::config::{GridSource, ScenarioConfig};
use crate::error::{Error, Result};
use crate::estimation::{build_model, derive_estimated_flows, flat_start, wls_solve};
use crate::evaluation::{
    loading_quality, voltage_quality, QualitySamples, QuantileSummary, UseCaseThresholds, Verdict,
};
use crate::fixtures;
use crate::grid::{grid_tables, load_grid, GridTopology};
use crate::measurement::{write_measurement_rows, MeasurementSynthesizer, NoiseMode, PseudoConfig};
use crate::power_flow::{run_timeseries, write_truth_rows, Network, PowerFlowSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Dump {
    Truth,
    Measurements,
    Estimates,
    Samples,
}

impl std::str::FromStr for Dump {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "truth" => Ok(Dump::Truth),
            "measurements" => Ok(Dump::Measurements),
            "estimates" => Ok(Dump::Estimates),
            "samples" => Ok(Dump::Samples),
            _ => Err(Error::Config(format!("unknown dump kind {s}"))),
        }
    }
}

/// Loads the configured grid. Bundled grids are generated to cover `[0, t1)`.
pub fn load_configured_grid(config: &ScenarioConfig) -> Result<GridTopology> {
    match &config.grid {
        GridSource::Directory(dir) => load_grid(dir),
        GridSource::Bundled(name) => {
            let start = if name == "synth-rural" { fixtures::SYNTH_RURAL_START } else { 0 };
            fixtures::bundled(name, start, config.t1)
        }
    }
}

fn hex_digest(h: Sha256) -> String {
    hex::encode(h.finalize())
}

/// Digest of the grid content (all CSV tables).
pub fn grid_digest(grid: &GridTopology) -> Result<String> {
    let mut h = Sha256::new();
    for (name, bytes) in grid_tables(grid)? {
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex_digest(h))
}

/// Digest of the canonical config plus the grid content.
pub fn fingerprint(config: &ScenarioConfig, grid_digest: &str) -> String {
    let mut h = Sha256::new();
    h.update(config.canonical().as_bytes());
    h.update(grid_digest.as_bytes());
    hex_digest(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceCounts {
    pub substation: Option<SubstationDevice>,
    pub ikvs: usize,
    pub imsys: usize,
    pub real_measurements: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub noise: NoiseMode,
    pub warm_start: bool,
    pub pseudo: PseudoConfig,
    pub pf_tolerance: f64,
    pub pf_max_iterations: usize,
    pub se_tolerance: f64,
    pub se_max_iterations: usize,
}

impl ConfigEcho {
    fn of(config: &ScenarioConfig) -> Self {
        ConfigEcho {
            noise: config.noise,
            warm_start: config.warm_start,
            pseudo: config.pseudo.clone(),
            pf_tolerance: config.power_flow.tolerance,
            pf_max_iterations: config.power_flow.max_iterations,
            se_tolerance: config.wls.tolerance,
            se_max_iterations: config.wls.max_iterations,
        }
    }
}

/// Quantiles and verdicts of one (grid, variant) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub grid: String,
    pub grid_digest: String,
    pub fingerprint: String,
    pub variant: EquipmentVariant,
    pub seed: u64,
    pub t0: usize,
    pub t1: usize,
    pub timesteps: usize,
    pub voltage: QuantileSummary,
    pub loading: QuantileSummary,
    pub verdicts: Vec<Verdict>,
    pub dropped_elements: usize,
    /// Timesteps whose estimate hit the iteration cap.
    pub nonconverged_timesteps: Vec<usize>,
    pub devices: DeviceCounts,
    pub config: ConfigEcho,
}

impl QualityReport {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimestepDiagnostics {
    pub t: usize,
    pub measurements: usize,
    pub model_rows: usize,
    pub iterations: usize,
    pub initial_objective: f64,
    pub objective: f64,
    pub gradient_norm: f64,
    pub converged: bool,
}

/// Which optional per-timestep artifacts to keep.
#[derive(Debug, Clone, Copy, Default)]
pub struct Capture {
    pub measurements: bool,
    pub estimates: bool,
}

#[derive(Debug, Default)]
struct StepOutput {
    diag: Option<TimestepDiagnostics>,
    samples: QualitySamples,
    estimate: Vec<Complex64>,
    measurements_csv: Vec<u8>,
    estimates_csv: Vec<u8>,
}

#[derive(Debug, Clone, Default)]
pub struct StageTimings {
    pub allocation: Duration,
    pub estimation: Duration,
    pub evaluation: Duration,
}

#[derive(Debug, Clone)]
pub struct VariantOutcome {
    pub report: QualityReport,
    pub samples: QualitySamples,
    pub allocation: Allocation,
    pub diagnostics: Vec<TimestepDiagnostics>,
    pub measurements_csv: Option<Vec<u8>>,
    pub estimates_csv: Option<Vec<u8>>,
    pub timings: StageTimings,
}

/// A failed pair with the per-timestep errors that caused it.
#[derive(Debug)]
pub struct VariantFailure {
    pub errors: Vec<Error>,
}

impl std::fmt::Display for VariantFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.errors.first() {
            Some(e) if self.errors.len() == 1 => write!(f, "{e}"),
            Some(e) => write!(f, "{e} (and {} more)", self.errors.len() - 1),
            None => f.write_str("unknown failure"),
        }
    }
}

impl From<Error> for VariantFailure {
    fn from(e: Error) -> Self {
        VariantFailure { errors: vec![e] }
    }
}

/// Grid, network and power-flow truth shared by every variant of a run.
#[derive(Debug, Clone)]
pub struct Study {
    pub config: ScenarioConfig,
    pub grid: GridTopology,
    pub net: Network,
    pub truth: Vec<PowerFlowSolution>,
    pub grid_digest: String,
    pub fingerprint: String,
    pub thresholds: UseCaseThresholds,
    pub truth_time: Duration,
}

impl Study {
    pub fn load(config: ScenarioConfig) -> Result<Study> {
        config.validate()?;
        let grid = load_configured_grid(&config)?;
        Study::new(config, grid)
    }

    /// Validates the config against `grid` and solves the truth power flows
    /// on the current rayon pool.
    pub fn new(config: ScenarioConfig, grid: GridTopology) -> Result<Study> {
        config.validate()?;
        let net = Network::new(&grid)?;
        let started = Instant::now();
        let truth = run_timeseries(&grid, &net, &grid.profiles, config.steps(), &config.power_flow)?;
        let grid_digest = grid_digest(&grid)?;
        let fingerprint = fingerprint(&config, &grid_digest);
        Ok(Study {
            config,
            grid,
            net,
            truth,
            grid_digest,
            fingerprint,
            thresholds: UseCaseThresholds::default(),
            truth_time: started.elapsed(),
        })
    }

    pub fn write_truth_csv(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "t,element,quantity,value")?;
        for sol in &self.truth {
            write_truth_rows(out, &self.grid, &self.net, sol)?;
        }
        Ok(())
    }

    pub fn evaluate_variant(&self, variant: &EquipmentVariant, capture: Capture) -> Result<VariantOutcome, VariantFailure> {
        self.evaluate(variant, self.config.seed, capture)
    }

    /// Allocation, then per timestep synthesis, estimation and quality
    /// samples, then pooled quantiles. `seed` drives the measurement noise.
    pub fn evaluate(
        &self,
        variant: &EquipmentVariant,
        seed: u64,
        capture: Capture,
    ) -> Result<VariantOutcome, VariantFailure> {
        let mut timings = StageTimings::default();
        let started = Instant::now();
        variant.validate()?;
        let allocation = allocate(&self.grid, variant);
        let specs = allocation.specs(&self.grid)?;
        let synth = MeasurementSynthesizer::new(
            &self.grid,
            &self.net,
            &specs,
            self.config.pseudo.clone(),
            seed,
            self.config.noise,
            self.config.steps(),
        )?;
        timings.allocation = started.elapsed();

        let started = Instant::now();
        let run = |sol: &PowerFlowSolution, initial: Option<&[Complex64]>| {
            self.estimate_step(&synth, sol, initial, capture).map_err(|e| e.at(sol.t))
        };
        let results: Vec<Result<StepOutput>> = if self.config.warm_start {
            let mut prev: Option<Vec<Complex64>> = None;
            let mut out = Vec::with_capacity(self.truth.len());
            for sol in &self.truth {
                let r = run(sol, prev.as_deref());
                prev = r.as_ref().ok().map(|s| s.estimate.clone());
                out.push(r);
            }
            out
        } else {
            self.truth.par_iter().map(|sol| run(sol, None)).collect()
        };
        timings.estimation = started.elapsed();

        let started = Instant::now();
        let mut errors = Vec::new();
        let mut samples = QualitySamples::default();
        let mut diagnostics = Vec::with_capacity(results.len());
        let mut measurements_csv = Vec::new();
        let mut estimates_csv = Vec::new();
        for r in results {
            match r {
                Ok(step) => {
                    samples.merge(step.samples);
                    diagnostics.extend(step.diag);
                    measurements_csv.extend(step.measurements_csv);
                    estimates_csv.extend(step.estimates_csv);
                }
                Err(e) => errors.push(e),
            }
        }
        if !errors.is_empty() {
            return Err(VariantFailure { errors });
        }
        let assessment = samples.assess(&self.thresholds)?;
        let expected = self.truth.len() * (self.grid.buses.len() + self.grid.lines.len());
        let dropped_elements = expected.saturating_sub(samples.voltage.len() + samples.loading.len());
        timings.evaluation = started.elapsed();

        let report = QualityReport {
            grid: self.grid.name.clone(),
            grid_digest: self.grid_digest.clone(),
            fingerprint: self.fingerprint.clone(),
            variant: variant.clone(),
            seed,
            t0: self.config.t0,
            t1: self.config.t1,
            timesteps: self.truth.len(),
            voltage: assessment.voltage,
            loading: assessment.loading,
            verdicts: assessment.verdicts,
            dropped_elements,
            nonconverged_timesteps: diagnostics.iter().filter(|d| !d.converged).map(|d| d.t).collect(),
            devices: DeviceCounts {
                substation: allocation.substation,
                ikvs: allocation.ikvs.len(),
                imsys: allocation.imsys.len(),
                real_measurements: specs.len(),
            },
            config: ConfigEcho::of(&self.config),
        };
        Ok(VariantOutcome {
            report,
            samples,
            allocation,
            diagnostics,
            measurements_csv: capture.measurements.then_some(measurements_csv),
            estimates_csv: capture.estimates.then_some(estimates_csv),
            timings,
        })
    }

    fn estimate_step(
        &self,
        synth: &MeasurementSynthesizer,
        sol: &PowerFlowSolution,
        initial: Option<&[Complex64]>,
        capture: Capture,
    ) -> Result<StepOutput> {
        let t = sol.t;
        let measurements = synth.assemble(sol)?;
        let model = build_model(&self.grid, &self.net, &measurements)?;
        let start = initial.map_or_else(|| flat_start(self.grid.buses.len()), <[_]>::to_vec);
        let est = wls_solve(&model, &start, &self.config.wls)?;
        let flows = derive_estimated_flows(&self.net, &est.voltages);

        let mut out = StepOutput::default();
        for (i, bus) in self.grid.buses.iter().enumerate() {
            let q = voltage_quality(flows.voltages[i].norm(), sol.flows.voltages[i].norm());
            out.samples.push_voltage(&bus.id, q);
        }
        for (k, line) in self.grid.lines.iter().enumerate() {
            let i_est = flows.line_current_amps(&self.net, k);
            let i_pf = sol.flows.line_current_amps(&self.net, k);
            out.samples
                .push_loading(&line.id, loading_quality(i_est, i_pf, line.thermal_current_limit));
        }
        let io = |e| Error::io("dump", e);
        if capture.measurements {
            write_measurement_rows(&mut out.measurements_csv, t, &measurements).map_err(io)?;
        }
        if capture.estimates {
            let w = &mut out.estimates_csv;
            for (i, bus) in self.grid.buses.iter().enumerate() {
                let v = flows.voltages[i];
                writeln!(w, "{t},{},vm_pu,{}", bus.id, v.norm()).map_err(io)?;
                writeln!(w, "{t},{},va_rad,{}", bus.id, v.arg()).map_err(io)?;
            }
            for (k, line) in self.grid.lines.iter().enumerate() {
                writeln!(w, "{t},{},i_a,{}", line.id, flows.line_current_amps(&self.net, k)).map_err(io)?;
            }
        }
        out.diag = Some(TimestepDiagnostics {
            t,
            measurements: measurements.len(),
            model_rows: model.len(),
            iterations: est.iterations,
            initial_objective: est.initial_objective,
            objective: est.objective,
            gradient_norm: est.gradient_norm,
            converged: est.converged,
        });
        out.estimate = est.voltages;
        Ok(out)
    }
}

pub fn write_diagnostics_csv(diags: &[TimestepDiagnostics], out: &mut impl std::io::Write) -> std::io::Result<()> {
    writeln!(out, "t,measurements,model_rows,iterations,initial_objective,objective,gradient_norm,converged")?;
    for d in diags {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            d.t, d.measurements, d.model_rows, d.iterations, d.initial_objective, d.objective, d.gradient_norm, d.converged
        )?;
    }
    Ok(())
}

fn write_samples_csv(samples: &QualitySamples, out: &mut impl std::io::Write) -> std::io::Result<()> {
    writeln!(out, "element,kind,index,value")?;
    for (id, s) in &samples.voltage_by_bus {
        for (i, v) in s.iter().enumerate() {
            writeln!(out, "{id},voltage,{i},{v}")?;
        }
    }
    for (id, s) in &samples.loading_by_line {
        for (i, v) in s.iter().enumerate() {
            writeln!(out, "{id},line_loading,{i},{v}")?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct VariantStatus {
    pub id: String,
    pub dir: PathBuf,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub fingerprint: String,
    pub variants: Vec<VariantStatus>,
    pub reports: Vec<QualityReport>,
}

impl RunArtifacts {
    pub fn failed(&self) -> usize {
        self.variants.iter().filter(|v| v.error.is_some()).count()
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn buffer(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to a Vec cannot fail");
    buf
}

/// Runs every configured variant and writes artifacts under `config.out`.
/// Setup errors (config, grid, truth power flow) are returned as `Err`;
/// per-variant failures are recorded in the returned artifacts.
pub fn run_scenario(config: ScenarioConfig, dumps: &BTreeSet<Dump>) -> Result<RunArtifacts> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| run_in_pool(config, dumps))
}

fn run_in_pool(config: ScenarioConfig, dumps: &BTreeSet<Dump>) -> Result<RunArtifacts> {
    let out_dir = config.out.clone();
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let mut log = String::new();
    let study = Study::load(config)?;
    let _ = writeln!(log, "grid {} ({} buses, {} lines)", study.grid.name, study.grid.buses.len(), study.grid.lines.len());
    let _ = writeln!(log, "fingerprint {}", study.fingerprint);
    let _ = writeln!(log, "workers {}", study.config.workers);
    let _ = writeln!(log, "power_flow {} timesteps {:.3}s", study.truth.len(), study.truth_time.as_secs_f64());
    if dumps.contains(&Dump::Truth) {
        write_file(&out_dir.join("pf_truth.csv"), buffer(|b| study.write_truth_csv(b)))?;
    }

    let capture = Capture {
        measurements: dumps.contains(&Dump::Measurements),
        estimates: dumps.contains(&Dump::Estimates),
    };
    let mut statuses = Vec::new();
    let mut reports = Vec::new();
    for variant in &study.config.variants {
        let dir = out_dir.join(format!("variant_{}", variant.id));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let error_log = dir.join("errors.log");
        if error_log.exists() {
            std::fs::remove_file(&error_log).map_err(|e| Error::io(&error_log, e))?;
        }
        match study.evaluate_variant(variant, capture) {
            Ok(o) => {
                write_file(&dir.join("report.json"), o.report.to_json()?)?;
                write_file(&dir.join("report.csv"), buffer(|b| o.samples.write_element_csv(b).map_err(std::io::Error::other)))?;
                write_file(&dir.join("allocation.csv"), buffer(|b| o.allocation.write_csv(&study.grid, b)))?;
                write_file(&dir.join("se_diagnostics.csv"), buffer(|b| write_diagnostics_csv(&o.diagnostics, b)))?;
                if let Some(m) = &o.measurements_csv {
                    let mut bytes = b"t,quantity,location,value,sigma,origin\n".to_vec();
                    bytes.extend_from_slice(m);
                    write_file(&dir.join("measurements.csv"), bytes)?;
                }
                if let Some(e) = &o.estimates_csv {
                    let mut bytes = b"t,element,quantity,estimate\n".to_vec();
                    bytes.extend_from_slice(e);
                    write_file(&dir.join("se_result.csv"), bytes)?;
                }
                if dumps.contains(&Dump::Samples) {
                    write_file(&dir.join("samples.csv"), buffer(|b| write_samples_csv(&o.samples, b)))?;
                }
                let t = &o.timings;
                let _ = writeln!(
                    log,
                    "variant {} ok: allocation {:.3}s estimation {:.3}s evaluation {:.3}s, q99_voltage {:.6} q95_loading {:.6}, nonconverged {}",
                    variant.id,
                    t.allocation.as_secs_f64(),
                    t.estimation.as_secs_f64(),
                    t.evaluation.as_secs_f64(),
                    o.report.voltage.value,
                    o.report.loading.value,
                    o.report.nonconverged_timesteps.len()
                );
                reports.push(o.report);
                statuses.push(VariantStatus { id: variant.id.clone(), dir, error: None });
            }
            Err(failure) => {
                let text: String = failure.errors.iter().map(|e| format!("{e}\n")).collect();
                write_file(&error_log, text)?;
                let _ = writeln!(log, "variant {} FAILED: {failure}", variant.id);
                statuses.push(VariantStatus {
                    id: variant.id.clone(),
                    dir,
                    error: Some(failure.to_string()),
                });
            }
        }
    }

    if reports.len() >= 2 {
        let cmp = compare_variants(&reports)?;
        write_file(&out_dir.join("comparison.csv"), cmp.to_csv())?;
        write_file(&out_dir.join("comparison.json"), cmp.to_json()?)?;
    }
    write_file(&out_dir.join("run.log"), log)?;
    Ok(RunArtifacts {
        out_dir,
        fingerprint: study.fingerprint,
        variants: statuses,
        reports,
    })
}

/// Orders `"2" < "10"` and falls back to text order for non-numeric ids.
pub fn variant_id_order(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        _ => a.cmp(b),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub variant: String,
    pub name: String,
    pub q99_voltage: f64,
    pub q95_loading: f64,
    pub pass: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub grid: String,
    pub t0: usize,
    pub t1: usize,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let use_cases: Vec<&String> = self.rows.first().map(|r| r.pass.keys().collect()).unwrap_or_default();
        let mut s = String::from("variant,name,q99_voltage,q95_loading");
        for u in &use_cases {
            let _ = write!(s, ",{u}");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{},{},{},{}", r.variant, r.name, r.q99_voltage, r.q95_loading);
            for u in &use_cases {
                let _ = write!(s, ",{}", if r.pass[*u] { "pass" } else { "fail" });
            }
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Side-by-side table of reports over the same grid and timestep range,
/// ordered by variant id.
pub fn compare_variants(reports: &[QualityReport]) -> Result<Comparison> {
    let [first, ..] = reports else {
        return Err(Error::Incomparable("need at least two reports".into()));
    };
    if reports.len() < 2 {
        return Err(Error::Incomparable("need at least two reports".into()));
    }
    for r in reports {
        if r.grid_digest != first.grid_digest {
            return Err(Error::Incomparable(format!(
                "variant {} uses grid {} but variant {} uses grid {}",
                r.variant.id, r.grid, first.variant.id, first.grid
            )));
        }
        if (r.t0, r.t1) != (first.t0, first.t1) {
            return Err(Error::Incomparable(format!(
                "timestep ranges differ: [{}, {}) vs [{}, {})",
                r.t0, r.t1, first.t0, first.t1
            )));
        }
    }
    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|r| ComparisonRow {
            variant: r.variant.id.clone(),
            name: r.variant.name.clone(),
            q99_voltage: r.voltage.value,
            q95_loading: r.loading.value,
            pass: r.verdicts.iter().map(|v| (v.use_case.as_str().to_string(), v.pass)).collect(),
        })
        .collect();
    rows.sort_by(|a, b| variant_id_order(&a.variant, &b.variant));
    Ok(Comparison {
        grid: first.grid.clone(),
        t0: first.t0,
        t1: first.t1,
        rows,
    })
}
