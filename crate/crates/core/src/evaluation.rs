//! Estimation-quality metrics, pooled quantiles and use-case verdicts.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quantile applied to voltage-magnitude samples.
pub const VOLTAGE_QUANTILE: f64 = 0.99;
/// Quantile applied to line-loading samples.
pub const LOADING_QUANTILE: f64 = 0.95;

/// Signed relative voltage-magnitude deviation of the estimate.
pub fn voltage_quality(v_est: f64, v_pf: f64) -> f64 {
    (v_est.abs() - v_pf.abs()) / v_pf.abs()
}

/// Current-magnitude deviation as a share of the line's thermal limit.
pub fn loading_quality(i_est: f64, i_pf: f64, i_th_max: f64) -> f64 {
    (i_est.abs() - i_pf.abs()) / i_th_max
}

/// 1-based nearest rank `ceil(q * n)`, computed so that exact products such
/// as `0.99 * 100` are not pushed up by representation error.
pub fn nearest_rank(q: f64, n: usize) -> usize {
    let x = q * n as f64;
    let r = x.round();
    let k = if (x - r).abs() <= 1e-9 * x.max(1.0) { r } else { x.ceil() };
    (k as usize).clamp(1, n)
}

/// Nearest-rank quantile of the absolute sample values.
pub fn pooled_quantile(samples: &[f64], q: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Config(format!("quantile {q} outside (0, 1)")));
    }
    let mut abs: Vec<f64> = samples.iter().map(|s| s.abs()).collect();
    abs.sort_by(f64::total_cmp);
    Ok(abs[nearest_rank(q, abs.len()) - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UseCase {
    GridPlanning,
    ConnectionRequest,
    MonitoringActiveMgmt,
}

impl UseCase {
    pub const ALL: [UseCase; 3] = [
        UseCase::GridPlanning,
        UseCase::ConnectionRequest,
        UseCase::MonitoringActiveMgmt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            UseCase::GridPlanning => "grid_planning",
            UseCase::ConnectionRequest => "connection_request",
            UseCase::MonitoringActiveMgmt => "monitoring_active_mgmt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub voltage: f64,
    pub loading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UseCaseThresholds(pub BTreeMap<UseCase, Limits>);

impl Default for UseCaseThresholds {
    fn default() -> Self {
        let mut m = BTreeMap::new();
        m.insert(UseCase::GridPlanning, Limits { voltage: 0.02, loading: 0.10 });
        m.insert(UseCase::ConnectionRequest, Limits { voltage: 0.015, loading: 0.05 });
        m.insert(UseCase::MonitoringActiveMgmt, Limits { voltage: 0.01, loading: 0.05 });
        UseCaseThresholds(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub use_case: UseCase,
    pub voltage_limit: f64,
    pub loading_limit: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileSummary {
    pub quantile: f64,
    pub value: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub voltage: QuantileSummary,
    pub loading: QuantileSummary,
    pub verdicts: Vec<Verdict>,
}

impl Assessment {
    pub fn passes(&self, use_case: UseCase) -> bool {
        self.verdicts.iter().any(|v| v.use_case == use_case && v.pass)
    }
}

/// Pass iff q99(|voltage|) and q95(|loading|) are both within the limits.
pub fn assess_quantiles(q_voltage: f64, q_loading: f64, thresholds: &UseCaseThresholds) -> Vec<Verdict> {
    thresholds
        .0
        .iter()
        .map(|(&use_case, lim)| Verdict {
            use_case,
            voltage_limit: lim.voltage,
            loading_limit: lim.loading,
            pass: q_voltage <= lim.voltage && q_loading <= lim.loading,
        })
        .collect()
}

/// Pooled quality samples of one (grid, variant) run, also kept per element
/// for drill-down.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QualitySamples {
    pub voltage: Vec<f64>,
    pub loading: Vec<f64>,
    pub voltage_by_bus: BTreeMap<String, Vec<f64>>,
    pub loading_by_line: BTreeMap<String, Vec<f64>>,
}

impl QualitySamples {
    pub fn push_voltage(&mut self, bus: &str, value: f64) {
        self.voltage.push(value);
        self.voltage_by_bus.entry(bus.to_string()).or_default().push(value);
    }

    pub fn push_loading(&mut self, line: &str, value: f64) {
        self.loading.push(value);
        self.loading_by_line.entry(line.to_string()).or_default().push(value);
    }

    pub fn merge(&mut self, other: QualitySamples) {
        self.voltage.extend(other.voltage);
        self.loading.extend(other.loading);
        for (k, v) in other.voltage_by_bus {
            self.voltage_by_bus.entry(k).or_default().extend(v);
        }
        for (k, v) in other.loading_by_line {
            self.loading_by_line.entry(k).or_default().extend(v);
        }
    }

    pub fn assess(&self, thresholds: &UseCaseThresholds) -> Result<Assessment> {
        let qv = pooled_quantile(&self.voltage, VOLTAGE_QUANTILE)?;
        let qi = pooled_quantile(&self.loading, LOADING_QUANTILE)?;
        Ok(Assessment {
            voltage: QuantileSummary {
                quantile: VOLTAGE_QUANTILE,
                value: qv,
                count: self.voltage.len(),
            },
            loading: QuantileSummary {
                quantile: LOADING_QUANTILE,
                value: qi,
                count: self.loading.len(),
            },
            verdicts: assess_quantiles(qv, qi, thresholds),
        })
    }

    /// `element,kind,quantile,value,count` rows.
    pub fn write_element_csv(&self, out: &mut impl Write) -> Result<()> {
        let io = |e| Error::io("report.csv", e);
        writeln!(out, "element,kind,quantile,value,count").map_err(io)?;
        for (id, s) in &self.voltage_by_bus {
            let v = pooled_quantile(s, VOLTAGE_QUANTILE)?;
            writeln!(out, "{id},voltage,{VOLTAGE_QUANTILE},{v},{}", s.len()).map_err(io)?;
        }
        for (id, s) in &self.loading_by_line {
            let v = pooled_quantile(s, LOADING_QUANTILE)?;
            writeln!(out, "{id},line_loading,{LOADING_QUANTILE},{v},{}", s.len()).map_err(io)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn voltage_examples() {
        assert!((voltage_quality(1.01, 1.00) - 0.01).abs() < 1e-12);
        assert_eq!(voltage_quality(0.97, 0.97), 0.0);
        assert!((voltage_quality(0.99, 1.02) + 0.029_411_764_705_882).abs() < 1e-12);
    }

    #[test]
    fn loading_examples() {
        assert!((loading_quality(105.0, 100.0, 250.0) - 0.02).abs() < 1e-12);
        assert_eq!(loading_quality(80.0, 80.0, 3.0), 0.0);
        assert!((loading_quality(90.0, 120.0, 400.0) + 0.075).abs() < 1e-12);
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(pooled_quantile(&[0.01], 0.5).unwrap(), 0.01);
        assert_eq!(pooled_quantile(&[0.01, -0.02, 0.03, 0.04], 0.95).unwrap(), 0.04);
        assert!(matches!(pooled_quantile(&[], 0.5), Err(Error::EmptySamples)));
        assert_eq!(nearest_rank(0.99, 35_040), 34_690);
        assert_eq!(nearest_rank(0.99, 100), 99);
        assert_eq!(nearest_rank(0.95, 20), 19);
    }

    #[test]
    fn use_case_verdicts() {
        let t = UseCaseThresholds::default();
        let all = |qv, qi| {
            assess_quantiles(qv, qi, &t)
                .into_iter()
                .map(|v| v.pass)
                .collect::<Vec<_>>()
        };
        assert_eq!(all(0.006, 0.03), vec![true, true, true]);
        assert_eq!(all(0.012, 0.04), vec![true, true, false]);
        assert_eq!(all(0.005, 0.105), vec![false, false, false]);
    }
}
