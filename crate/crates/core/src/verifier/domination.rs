//! Pointwise check that a certificate lies below an actual solution.

use crate::certificate::Certificate;
use crate::error::{Error, Result};
use crate::grid::GridDistribution;
use crate::verifier::bkw::BkwState;
use crate::verifier::solver::{LogInterpolant, Solution};
use serde::{Deserialize, Serialize};

/// Anything that can be evaluated at `(t, v)`.
pub trait Evaluable {
    fn value(&self, t: f64, v: &[f64]) -> Result<f64>;
}

impl Evaluable for BkwState {
    fn value(&self, t: f64, v: &[f64]) -> Result<f64> {
        crate::verifier::bkw::bkw_evaluate(self, t, v)
    }
}

impl Evaluable for Solution {
    fn value(&self, t: f64, v: &[f64]) -> Result<f64> {
        let g = self.at(t).ok_or_else(|| Error::InvalidRequest(format!("no snapshot at t = {t}")))?;
        Ok(LogInterpolant::new(g).eval(v))
    }
}

/// Evaluation nodes: the cell centres of an `M^N` grid on `[−V_max, V_max]^N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityGrid {
    pub dimension: usize,
    pub m: usize,
    pub v_max: f64,
}

impl VelocityGrid {
    fn template(&self) -> GridDistribution {
        GridDistribution { dimension: self.dimension, m: self.m, v_max: self.v_max, values: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.m.pow(self.dimension as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominationReport {
    pub format_version: u32,
    pub min_margin: f64,
    pub argmin_t: f64,
    pub argmin_v: Vec<f64>,
    pub pass: bool,
    pub tolerance: f64,
    /// `min ln(f / certificate)`; stays informative when the certificate underflows.
    pub min_log_ratio: f64,
    pub points: usize,
    pub times: Vec<f64>,
}

impl DominationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// `margin(t, v) = f(t, v) − certificate(v)` over `times × grid`.
pub fn check_domination<S: Evaluable + ?Sized>(cert: &Certificate, solution: &S, times: &[f64], grid: &VelocityGrid, tolerance: f64) -> Result<DominationReport> {
    cert.validate()?;
    if times.is_empty() || grid.is_empty() || grid.dimension != cert.dimension {
        return Err(Error::InvalidRequest("domination check needs times and a grid of the certificate's dimension".into()));
    }
    if let Some(&t) = times.iter().find(|&&t| t < cert.tau) {
        return Err(Error::InvalidRequest(format!("time {t} precedes the certificate's tau = {}", cert.tau)));
    }
    let tpl = grid.template();
    let mut v = vec![0.0; grid.dimension];
    let (mut best, mut arg_t, mut arg_v) = (f64::INFINITY, times[0], vec![0.0; grid.dimension]);
    let mut min_log = f64::INFINITY;
    for &t in times {
        for i in 0..grid.len() {
            tpl.node_into(i, &mut v);
            let f = solution.value(t, &v)?;
            let ln_c = cert.ln_value(&v);
            let margin = f - ln_c.exp();
            if margin < best {
                best = margin;
                arg_t = t;
                arg_v.copy_from_slice(&v);
            }
            min_log = min_log.min(f.ln() - ln_c);
        }
    }
    Ok(DominationReport {
        format_version: crate::certificate::FORMAT_VERSION,
        min_margin: best,
        argmin_t: arg_t,
        argmin_v: arg_v,
        pass: best >= -tolerance,
        tolerance,
        min_log_ratio: min_log,
        points: times.len() * grid.len(),
        times: times.to_vec(),
    })
}
