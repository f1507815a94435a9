//! Weighted-least-squares state estimation.
//!
//! The state is the voltage angle of every non-slack bus and the voltage
//! magnitude of every bus. Each measurement is mapped to a function `h(x)`
//! with an analytic gradient; the estimate minimises
//! `J(x) = Σ (z_i - h_i(x))² / σ_i²` by Gauss–Newton on the normal equations
//! with step halving whenever a full step would increase `J`.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::allocation::{Location, Quantity};
use crate::error::{Error, Result};
use crate::grid::GridTopology;
use crate::measurement::Measurement;
use crate::power_flow::{DerivedFlows, Network};

/// σ of the virtual zero-injection measurements (pu).
pub const ZERO_INJECTION_SIGMA: f64 = 1e-5;
/// Current magnitudes below this (pu) are left out of the model.
pub const MIN_CURRENT_PU: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum MeasurementType {
    VMag,
    PInj,
    QInj,
    PFlow,
    QFlow,
    IMag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PowerPart {
    Active,
    Reactive,
    CurrentMagnitude,
}

/// `h(x)` for one row: either a voltage magnitude, or a function of the
/// current `I = Σ c_k V_k` and the complex power `S = V_at · conj(I)`.
#[derive(Debug, Clone, PartialEq)]
enum Function {
    VMag(usize),
    Flow {
        part: PowerPart,
        at: usize,
        coeffs: Vec<(usize, Complex64)>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRow {
    pub kind: MeasurementType,
    pub label: String,
    pub value: f64,
    pub sigma: f64,
    function: Function,
}

impl ModelRow {
    pub fn weight(&self) -> f64 {
        1.0 / (self.sigma * self.sigma)
    }
}

/// Measurement functions plus the state layout they are evaluated over.
#[derive(Debug, Clone)]
pub struct MeasurementModel {
    pub rows: Vec<ModelRow>,
    bus_count: usize,
    slack: usize,
    /// Column of each bus angle; `None` for the slack bus.
    angle_col: Vec<Option<usize>>,
}

impl MeasurementModel {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        2 * self.bus_count - 1
    }

    pub fn bus_count(&self) -> usize {
        self.bus_count
    }

    fn mag_col(&self, bus: usize) -> usize {
        self.bus_count - 1 + bus
    }

    pub fn count_by_type(&self) -> BTreeMap<MeasurementType, usize> {
        let mut out = BTreeMap::new();
        for r in &self.rows {
            *out.entry(r.kind).or_insert(0) += 1;
        }
        out
    }

    /// `h(x)` for every row.
    pub fn evaluate(&self, voltages: &[Complex64]) -> DVector<f64> {
        DVector::from_iterator(self.rows.len(), self.rows.iter().map(|r| eval_row(&r.function, voltages)))
    }

    /// Analytic Jacobian `∂h/∂x` (rows × state).
    pub fn jacobian(&self, voltages: &[Complex64]) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.rows.len(), self.state_dim());
        for (r, row) in self.rows.iter().enumerate() {
            match &row.function {
                Function::VMag(i) => h[(r, self.mag_col(*i))] = 1.0,
                Function::Flow { part, at, coeffs } => {
                    let current: Complex64 = coeffs.iter().map(|&(k, c)| c * voltages[k]).sum();
                    let v_at = voltages[*at];
                    let mut touch = |k: usize, dv: Complex64, col: usize| {
                        let c = coeffs
                            .iter()
                            .find(|e| e.0 == k)
                            .map_or(Complex64::default(), |e| e.1);
                        let di = c * dv;
                        let value = match part {
                            PowerPart::CurrentMagnitude => {
                                let mag = current.norm();
                                if mag > 0.0 {
                                    (current.conj() * di).re / mag
                                } else {
                                    0.0
                                }
                            }
                            _ => {
                                let mut ds = v_at * di.conj();
                                if k == *at {
                                    ds += dv * current.conj();
                                }
                                if *part == PowerPart::Active {
                                    ds.re
                                } else {
                                    ds.im
                                }
                            }
                        };
                        h[(r, col)] += value;
                    };
                    let mut buses: Vec<usize> = coeffs.iter().map(|e| e.0).collect();
                    if !buses.contains(at) {
                        buses.push(*at);
                    }
                    for k in buses {
                        let v = voltages[k];
                        if let Some(col) = self.angle_col[k] {
                            touch(k, Complex64::i() * v, col);
                        }
                        touch(k, v / v.norm(), self.mag_col(k));
                    }
                }
            }
        }
        h
    }

    pub fn state_to_voltages(&self, x: &DVector<f64>) -> Vec<Complex64> {
        (0..self.bus_count)
            .map(|i| {
                let ang = self.angle_col[i].map_or(0.0, |c| x[c]);
                Complex64::from_polar(x[self.mag_col(i)], ang)
            })
            .collect()
    }

    pub fn voltages_to_state(&self, voltages: &[Complex64]) -> DVector<f64> {
        let mut x = DVector::zeros(self.state_dim());
        for (i, v) in voltages.iter().enumerate() {
            if let Some(c) = self.angle_col[i] {
                x[c] = v.arg() - voltages[self.slack].arg();
            }
            x[self.mag_col(i)] = v.norm();
        }
        x
    }

    pub fn objective(&self, voltages: &[Complex64]) -> f64 {
        self.rows
            .iter()
            .map(|r| {
                let e = r.value - eval_row(&r.function, voltages);
                e * e * r.weight()
            })
            .sum()
    }
}

fn eval_row(f: &Function, v: &[Complex64]) -> f64 {
    match f {
        Function::VMag(i) => v[*i].norm(),
        Function::Flow { part, at, coeffs } => {
            let current: Complex64 = coeffs.iter().map(|&(k, c)| c * v[k]).sum();
            match part {
                PowerPart::CurrentMagnitude => current.norm(),
                PowerPart::Active => (v[*at] * current.conj()).re,
                PowerPart::Reactive => (v[*at] * current.conj()).im,
            }
        }
    }
}

/// Merge duplicate (quantity, location) measurements, keeping the smaller σ.
pub fn dedup_measurements(measurements: &[Measurement]) -> Vec<Measurement> {
    let mut pos: HashMap<(Quantity, &Location), usize> = HashMap::new();
    let mut out: Vec<Measurement> = Vec::with_capacity(measurements.len());
    for m in measurements {
        match pos.get(&(m.quantity, &m.location)) {
            Some(&i) => {
                if m.sigma < out[i].sigma {
                    out[i] = m.clone();
                }
            }
            None => {
                pos.insert((m.quantity, &m.location), out.len());
                out.push(m.clone());
            }
        }
    }
    out
}

struct Builder<'a> {
    net: &'a Network,
    rows: Vec<ModelRow>,
}

impl Builder<'_> {
    fn injection(&mut self, quantity: Quantity, bus: usize, value: f64, sigma: f64, label: String) {
        let coeffs = self.net.ybus.row(bus).to_vec();
        self.flow(quantity, bus, coeffs, value, sigma, label, true);
    }

    fn branch(&mut self, quantity: Quantity, branch: usize, at: usize, value: f64, sigma: f64, label: String) {
        let b = &self.net.branches[branch];
        let other = if at == b.from { b.to } else { b.from };
        let coeffs = vec![(at, b.y), (other, -b.y)];
        self.flow(quantity, at, coeffs, value, sigma, label, false);
    }

    #[allow(clippy::too_many_arguments)]
    fn flow(
        &mut self,
        quantity: Quantity,
        at: usize,
        coeffs: Vec<(usize, Complex64)>,
        value: f64,
        sigma: f64,
        label: String,
        injection: bool,
    ) {
        let (part, kind) = match (quantity, injection) {
            (Quantity::ActivePower, true) => (PowerPart::Active, MeasurementType::PInj),
            (Quantity::ReactivePower, true) => (PowerPart::Reactive, MeasurementType::QInj),
            (Quantity::ActivePower, false) => (PowerPart::Active, MeasurementType::PFlow),
            (Quantity::ReactivePower, false) => (PowerPart::Reactive, MeasurementType::QFlow),
            (Quantity::Current, _) => {
                if value.abs() < MIN_CURRENT_PU {
                    return;
                }
                (PowerPart::CurrentMagnitude, MeasurementType::IMag)
            }
            (Quantity::Voltage, _) => unreachable!("voltage is not a flow"),
        };
        self.rows.push(ModelRow {
            kind,
            label,
            value,
            sigma,
            function: Function::Flow { part, at, coeffs },
        });
    }
}

/// Maps measurements onto the network.
///
/// Prosumer P/Q readings (real or pseudo) are summed per bus into one
/// injection row with the variances added. A prosumer current reading is
/// used as the bus injection current only when that prosumer is alone at its
/// bus. Buses without prosumers and without an injection reading get
/// zero-injection rows.
pub fn build_model(grid: &GridTopology, net: &Network, measurements: &[Measurement]) -> Result<MeasurementModel> {
    let n = grid.buses.len();
    let slack = net.slack;
    let mut angle_col = vec![None; n];
    let mut c = 0;
    for (i, col) in angle_col.iter_mut().enumerate() {
        if i != slack {
            *col = Some(c);
            c += 1;
        }
    }
    let mut b = Builder { net, rows: Vec::new() };

    let mut prosumer_count = vec![0usize; n];
    for p in &grid.prosumers {
        prosumer_count[grid.bus_idx(&p.bus)?] += 1;
    }
    // per bus: (P sum, P variance, Q sum, Q variance)
    let mut aggregated: BTreeMap<usize, [Option<(f64, f64)>; 2]> = BTreeMap::new();
    let mut has_injection = vec![false; n];

    for m in dedup_measurements(measurements) {
        let label = format!("{}@{}", m.quantity.symbol(), m.location);
        match (&m.location, m.quantity) {
            (Location::Bus(id), Quantity::Voltage) => {
                let i = grid.bus_idx(id)?;
                b.rows.push(ModelRow {
                    kind: MeasurementType::VMag,
                    label,
                    value: m.value,
                    sigma: m.sigma,
                    function: Function::VMag(i),
                });
            }
            (Location::Bus(id), q) => {
                let i = grid.bus_idx(id)?;
                if q != Quantity::Current {
                    has_injection[i] = true;
                }
                b.injection(q, i, m.value, m.sigma, label);
            }
            (Location::Transformer, Quantity::Voltage) | (Location::LineEnd { .. }, Quantity::Voltage) => {
                return Err(Error::invalid("measurement", &label, "voltage must be measured at a bus"));
            }
            (Location::Transformer, q) => match net.transformer_branch {
                Some(br) => b.branch(q, br, slack, m.value, m.sigma, label),
                None => b.injection(q, slack, m.value, m.sigma, label),
            },
            (Location::LineEnd { line, bus }, q) => {
                let k = grid.line_idx(line)?;
                let at = grid.bus_idx(bus)?;
                let br = net.line_branch[k];
                if at != net.branches[br].from && at != net.branches[br].to {
                    return Err(Error::invalid("measurement", &label, "bus is not a line end"));
                }
                b.branch(q, br, at, m.value, m.sigma, label);
            }
            (Location::Prosumer(pid), Quantity::Voltage) => {
                return Err(Error::invalid("measurement", pid, "prosumer voltage must be given at its bus"));
            }
            (Location::Prosumer(pid), Quantity::Current) => {
                let i = grid.bus_idx(&grid.prosumer(pid)?.bus)?;
                if prosumer_count[i] == 1 {
                    b.injection(Quantity::Current, i, m.value, m.sigma, label);
                }
            }
            (Location::Prosumer(pid), q) => {
                let i = grid.bus_idx(&grid.prosumer(pid)?.bus)?;
                let slot = &mut aggregated.entry(i).or_default()[(q == Quantity::ReactivePower) as usize];
                let (sum, var) = slot.get_or_insert((0.0, 0.0));
                *sum += m.value;
                *var += m.sigma * m.sigma;
            }
        }
    }

    for (i, parts) in aggregated {
        for (q, part) in [Quantity::ActivePower, Quantity::ReactivePower].into_iter().zip(parts) {
            if let Some((sum, var)) = part {
                has_injection[i] = true;
                let label = format!("{}@{}", q.symbol(), grid.buses[i].id);
                b.injection(q, i, sum, var.sqrt(), label);
            }
        }
    }

    for i in 0..n {
        if i != slack && prosumer_count[i] == 0 && !has_injection[i] {
            for q in [Quantity::ActivePower, Quantity::ReactivePower] {
                let label = format!("{}0@{}", q.symbol(), grid.buses[i].id);
                b.injection(q, i, 0.0, ZERO_INJECTION_SIGMA, label);
            }
        }
    }

    let required = 2 * n - 1;
    if b.rows.len() < required {
        return Err(Error::Unobservable {
            measurements: b.rows.len(),
            required,
            buses: n,
        });
    }
    Ok(MeasurementModel {
        rows: b.rows,
        bus_count: n,
        slack,
        angle_col,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WlsOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
}

impl Default for WlsOptions {
    fn default() -> Self {
        WlsOptions {
            tolerance: 1e-6,
            max_iterations: 50,
            max_halvings: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WlsSolution {
    pub voltages: Vec<Complex64>,
    pub objective: f64,
    pub initial_objective: f64,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
}

/// Flat start: 1 pu magnitude, zero angle everywhere.
pub fn flat_start(bus_count: usize) -> Vec<Complex64> {
    vec![Complex64::new(1.0, 0.0); bus_count]
}

fn solve_normal_equations(g: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let dx = match g.clone().cholesky() {
        Some(ch) => ch.solve(rhs),
        None => g.lu().solve(rhs).ok_or(Error::NumericallyUnobservable)?,
    };
    if dx.iter().all(|v| v.is_finite()) {
        Ok(dx)
    } else {
        Err(Error::NumericallyUnobservable)
    }
}

pub fn wls_solve(model: &MeasurementModel, initial: &[Complex64], opts: &WlsOptions) -> Result<WlsSolution> {
    if model.len() < model.state_dim() {
        return Err(Error::Unobservable {
            measurements: model.len(),
            required: model.state_dim(),
            buses: model.bus_count,
        });
    }
    let z = DVector::from_iterator(model.len(), model.rows.iter().map(|r| r.value));
    let sqrt_w = DVector::from_iterator(model.len(), model.rows.iter().map(|r| 1.0 / r.sigma));
    let objective_at = |x: &DVector<f64>| -> f64 {
        if (0..model.bus_count).any(|i| !(x[model.mag_col(i)] > 0.0)) {
            return f64::INFINITY;
        }
        let r = (&z - model.evaluate(&model.state_to_voltages(x))).component_mul(&sqrt_w);
        r.norm_squared()
    };

    let mut x = model.voltages_to_state(initial);
    let initial_objective = objective_at(&x);
    let mut objective = initial_objective;
    let mut converged = false;
    let mut iterations = 0;
    let mut gradient_norm = f64::INFINITY;

    while iterations < opts.max_iterations {
        let v = model.state_to_voltages(&x);
        let weighted_r = (&z - model.evaluate(&v)).component_mul(&sqrt_w);
        let mut a = model.jacobian(&v);
        for (mut row, w) in a.row_iter_mut().zip(sqrt_w.iter()) {
            row *= *w;
        }
        let rhs = a.tr_mul(&weighted_r);
        gradient_norm = 2.0 * rhs.amax();
        if gradient_norm < opts.tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let dx = solve_normal_equations(a.tr_mul(&a), &rhs)?;
        let step = dx.amax();

        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let trial = &x + &dx * alpha;
            let j = objective_at(&trial);
            if j <= objective {
                x = trial;
                objective = j;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if step < opts.tolerance {
            converged = true;
            break;
        }
        if !accepted {
            // no descent direction left at working precision
            converged = step * alpha < opts.tolerance;
            break;
        }
    }

    let voltages = model.state_to_voltages(&x);
    let residuals = (&z - model.evaluate(&voltages)).iter().copied().collect();
    Ok(WlsSolution {
        voltages,
        objective,
        initial_objective,
        residuals,
        iterations,
        converged,
        gradient_norm,
    })
}

/// Bus voltages and line currents implied by an estimate, via the same path
/// the power flow uses.
pub fn derive_estimated_flows(net: &Network, voltages: &[Complex64]) -> DerivedFlows {
    DerivedFlows::from_voltages(net, voltages.to_vec())
}
