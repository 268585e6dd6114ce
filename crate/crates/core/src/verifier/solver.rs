//! Explicit-Euler solver for the space-homogeneous equation on a velocity grid.
//!
//! `Q⁺(f,f)(v)` is estimated per node by importance sampling: `v_*` is drawn
//! from the Maxwellian with the moments of `f`, `σ` uniformly. For `f` near
//! equilibrium `f(v′)f(v′_*) ≈ M(v)M(v_*)`, so the weights are nearly
//! constant and a few hundred samples per node suffice. Off-grid values come
//! from tri-quadratic interpolation of `ln f`, which is exact for Maxwellians.

use crate::error::{Error, Result};
use crate::grid::GridDistribution;
use crate::kernel::{angular_mass_nb, sphere_area, CollisionKernel, PhiForm};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const LN_FLOOR: f64 = -700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "d_samples")]
    pub samples_per_node: usize,
    #[serde(default)]
    pub seed: u64,
}

fn d_samples() -> usize {
    256
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    /// Relative mass change of this step, before clamping.
    pub drift: f64,
    pub clamped_mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub grid: GridDistribution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub snapshots: Vec<Snapshot>,
    pub steps: Vec<StepReport>,
}

impl Solution {
    pub fn total_clamped(&self) -> f64 {
        self.steps.iter().map(|s| s.clamped_mass).sum()
    }

    /// Relative mass change from the first to the last snapshot.
    pub fn total_drift(&self) -> f64 {
        let m0 = self.snapshots[0].grid.mass();
        let m1 = self.snapshots.last().map(|s| s.grid.mass()).unwrap_or(m0);
        (m1 - m0).abs() / m0
    }

    pub fn at(&self, t: f64) -> Option<&GridDistribution> {
        self.snapshots
            .iter()
            .find(|s| (s.t - t).abs() <= 1e-9 * t.abs().max(1.0))
            .map(|s| &s.grid)
    }
}

/// Mass, mean velocity and temperature of a grid distribution.
pub fn moments(f: &GridDistribution) -> (f64, Vec<f64>, f64) {
    let n = f.dimension;
    let dv = f.cell_volume();
    let mut v = vec![0.0; n];
    let (mut m, mut mom, mut e) = (0.0, vec![0.0; n], 0.0);
    for (i, &x) in f.values.iter().enumerate() {
        f.node_into(i, &mut v);
        m += x;
        for d in 0..n {
            mom[d] += x * v[d];
        }
        e += x * v.iter().map(|c| c * c).sum::<f64>();
    }
    let u: Vec<f64> = mom.iter().map(|p| p / m).collect();
    let u2: f64 = u.iter().map(|c| c * c).sum();
    let temp = (e / m - u2) / n as f64;
    (m * dv, u, temp)
}

/// `ln f` on the grid, with a floor so that empty cells interpolate to ~0.
pub struct LogInterpolant<'a> {
    grid: &'a GridDistribution,
    ln: Vec<f64>,
}

impl<'a> LogInterpolant<'a> {
    pub fn new(grid: &'a GridDistribution) -> Self {
        let ln = grid.values.iter().map(|&x| if x > 0.0 { x.ln().max(LN_FLOOR) } else { LN_FLOOR }).collect();
        LogInterpolant { grid, ln }
    }

    /// Tri-quadratic (per axis) Lagrange interpolation of `ln f`; 0 outside the box.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let g = self.grid;
        let (m, h) = (g.m, g.spacing());
        if m < 3 {
            return 0.0;
        }
        let n = g.dimension;
        let mut base = [0usize; 8];
        let mut w = [[0.0f64; 3]; 8];
        for d in 0..n {
            if x[d].abs() > g.v_max {
                return 0.0;
            }
            let pos = (x[d] + g.v_max) / h - 0.5;
            let i = (pos.round() as isize).clamp(1, m as isize - 2) as usize;
            let s = pos - i as f64;
            base[d] = i - 1;
            w[d] = [0.5 * s * (s - 1.0), 1.0 - s * s, 0.5 * s * (s + 1.0)];
        }
        let mut acc = 0.0;
        let total = 3usize.pow(n as u32);
        for c in 0..total {
            let (mut idx, mut wt, mut r) = (0usize, 1.0, c);
            for d in 0..n {
                let o = r % 3;
                r /= 3;
                wt *= w[d][o];
                idx += (base[d] + o) * g.stride(d);
            }
            acc += wt * self.ln[idx];
        }
        if acc <= LN_FLOOR {
            0.0
        } else {
            acc.exp()
        }
    }
}

fn node_seed(seed: u64, step: usize, node: usize) -> u64 {
    let mut z = seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (node as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-node estimates of `Q⁺(f,f)` and the loss rate `L[f]`.
pub fn collision_terms(k: &CollisionKernel, f: &GridDistribution, samples: usize, seed: u64, step: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = f.dimension;
    if n > 8 || samples == 0 {
        return Err(Error::InvalidRequest("solver needs N <= 8 and samples > 0".into()));
    }
    let (rho, u, temp) = moments(f);
    if !(rho > 0.0 && temp > 0.0) {
        return Err(Error::InvalidRequest("solver needs positive mass and temperature".into()));
    }
    let interp = LogInterpolant::new(f);
    let n_b = angular_mass_nb(k)?;
    let area = sphere_area(n - 1);
    let sd = temp.sqrt();
    let exact_loss = k.gamma == 0.0;
    let norm = (2.0 * std::f64::consts::PI * temp).powf(-(n as f64) / 2.0);
    let out: Vec<(f64, f64)> = (0..f.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(node_seed(seed, step, i));
            let v = f.node(i);
            let (mut vs, mut sig, mut vp, mut vq) = ([0.0f64; 8], [0.0f64; 8], [0.0f64; 8], [0.0f64; 8]);
            let (mut gain, mut loss) = (0.0, 0.0);
            for _ in 0..samples {
                let mut z2 = 0.0;
                for d in 0..n {
                    let z: f64 = rng.sample(StandardNormal);
                    z2 += z * z;
                    vs[d] = u[d] + sd * z;
                }
                let q = norm * (-0.5 * z2).exp();
                let mut s2 = 0.0f64;
                for c in sig.iter_mut().take(n) {
                    *c = rng.sample(StandardNormal);
                    s2 += *c * *c;
                }
                let inv = 1.0 / s2.sqrt();
                let rel = (0..n).map(|d| (v[d] - vs[d]).powi(2)).sum::<f64>().sqrt();
                if rel == 0.0 {
                    continue;
                }
                let mut dot = 0.0;
                for d in 0..n {
                    sig[d] *= inv;
                    let mid = 0.5 * (v[d] + vs[d]);
                    vp[d] = mid + 0.5 * rel * sig[d];
                    vq[d] = mid - 0.5 * rel * sig[d];
                    dot += (v[d] - vs[d]) * sig[d];
                }
                let theta = (dot / rel).clamp(-1.0, 1.0).acos();
                let phi = k.phi(rel, PhiForm::Lower);
                gain += phi * k.b(theta) * area * interp.eval(&vp[..n]) * interp.eval(&vq[..n]) / q;
                if !exact_loss {
                    loss += phi * n_b * interp.eval(&vs[..n]) / q;
                }
            }
            let m = samples as f64;
            let l = if exact_loss { k.c_phi * n_b * rho } else { loss / m };
            (gain / m, l)
        })
        .collect();
    Ok(out.into_iter().unzip())
}

/// Explicit Euler `f ← f + dt (Q⁺(f,f) − L[f] f)`, clamping negative values.
pub fn solve_homogeneous(k: &CollisionKernel, f0: &GridDistribution, cfg: &SolverConfig) -> Result<Solution> {
    if !k.is_cutoff() {
        return Err(Error::NonIntegrableAngular { nu: k.nu });
    }
    f0.validate()?;
    if !(cfg.dt > 0.0) || !(cfg.t_end >= 0.0) {
        return Err(Error::InvalidRequest("dt must be positive and t_end nonnegative".into()));
    }
    let steps = (cfg.t_end / cfg.dt).round() as usize;
    if (steps as f64 * cfg.dt - cfg.t_end).abs() > 1e-9 * cfg.t_end.max(1.0) {
        return Err(Error::InvalidRequest(format!("t_end = {} is not a multiple of dt = {}", cfg.t_end, cfg.dt)));
    }
    let mut f = f0.clone();
    let mut out = Solution { snapshots: vec![Snapshot { t: 0.0, grid: f.clone() }], steps: Vec::with_capacity(steps) };
    let dv = f.cell_volume();
    for step in 0..steps {
        let (gain, loss) = collision_terms(k, &f, cfg.samples_per_node, cfg.seed, step)?;
        let max_loss = loss.iter().cloned().fold(0.0, f64::max);
        if cfg.dt * max_loss > 0.5 {
            return Err(Error::InvalidRequest(format!("dt = {} exceeds 0.5 / max loss = {}", cfg.dt, 0.5 / max_loss)));
        }
        let m_before = f.mass();
        let mut clamped = 0.0;
        let mut next = f.clone();
        let mut raw_sum = 0.0;
        for i in 0..f.len() {
            let x = f.values[i] + cfg.dt * (gain[i] - loss[i] * f.values[i]);
            raw_sum += x;
            if x < 0.0 {
                clamped -= x * dv;
                next.values[i] = 0.0;
            } else {
                next.values[i] = x;
            }
        }
        let drift = (raw_sum * dv - m_before).abs() / m_before;
        if drift > 1e-3 {
            return Err(Error::UnstableStep { step, drift });
        }
        f = next;
        let (mass, _, temp) = moments(&f);
        let t = (step + 1) as f64 * cfg.dt;
        out.steps.push(StepReport { step, t, mass, energy: mass * f.dimension as f64 * temp, drift, clamped_mass: clamped });
        out.snapshots.push(Snapshot { t, grid: f.clone() });
    }
    Ok(out)
}
