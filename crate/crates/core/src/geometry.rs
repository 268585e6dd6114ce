//! Spreading lower bound for the gain operator: the closed-form estimate, the
//! Carleman reduced integral it comes from, and a Monte Carlo oracle for
//! `Q⁺(1_{B(0,R)}, 1_{B(0,r)})`.

use crate::error::{Error, Result};
use crate::kernel::{angular_infimum_ellb, ball_volume, sphere_area, CollisionKernel, PhiForm};
use crate::quadrature::integrate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_8;

/// Number of independent Monte Carlo streams.
pub const MC_STREAMS: usize = 16;
/// Smallest accepted sample count.
pub const MIN_SAMPLES: usize = 10_000;
/// Largest dimension the sampler supports.
pub const MAX_DIM: usize = 6;

/// Cone apertures of the Carleman argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarlemanGeometry {
    pub a: f64,
    pub b_geo: f64,
    pub lambda: f64,
}

impl Default for CarlemanGeometry {
    fn default() -> Self {
        let a = 1.0 / (3.0 * FRAC_PI_8).tan();
        let b_geo = 1.0 / FRAC_PI_8.tan();
        CarlemanGeometry {
            a,
            b_geo,
            lambda: (b_geo - a) / (b_geo + a),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpreadingResult {
    pub coefficient: f64,
    pub radius: f64,
    pub center: Vec<f64>,
    /// Set when γ < 0 and `R < 1`, so the kinetic factor was taken at `R = 1`.
    pub rescaled: bool,
}

/// Power of ξ carried by the spreading estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XiExponentMode {
    /// `ξ^{N/2+1}`, the rate at which `Q⁺` actually vanishes at the edge of
    /// the spread ball.
    #[default]
    Stated,
    /// `ξ^{N/2−1}`, the smaller exponent of the proof step.
    Proofstep,
}

impl XiExponentMode {
    pub fn exponent(self, n: usize) -> f64 {
        match self {
            XiExponentMode::Stated => n as f64 / 2.0 + 1.0,
            XiExponentMode::Proofstep => n as f64 / 2.0 - 1.0,
        }
    }
}

/// `r^{N−3} R^{3+γ}` with the soft-potential convention `R^3 max(R,1)^γ`.
pub fn spreading_kinetic(n: usize, gamma: f64, r: f64, big_r: f64) -> (f64, bool) {
    let base = r.powi(n as i32 - 3) * big_r.powi(3);
    if gamma < 0.0 {
        (base * big_r.max(1.0).powf(gamma), big_r < 1.0)
    } else {
        (base * big_r.powf(gamma), false)
    }
}

/// The spreading estimate with a precomputed `ℓ_b`.
pub fn spreading_with_ellb(
    k: &CollisionKernel,
    ell_b: f64,
    r: f64,
    big_r: f64,
    xi: f64,
    cst_spread: f64,
    center: &[f64],
    mode: XiExponentMode,
) -> Result<SpreadingResult> {
    if !(r > 0.0 && r <= big_r) {
        return Err(Error::InvalidGeometry(format!(
            "need 0 < r <= R, got r = {r}, R = {big_r}"
        )));
    }
    if !(xi > 0.0 && xi < 1.0) {
        return Err(Error::InvalidGeometry(format!("xi = {xi} outside (0, 1)")));
    }
    if !(cst_spread > 0.0) {
        return Err(Error::InvalidGeometry("cst_spread must be positive".into()));
    }
    let (kin, rescaled) = spreading_kinetic(k.dimension, k.gamma, r, big_r);
    let coefficient = cst_spread * ell_b * k.c_phi * kin * xi.powf(mode.exponent(k.dimension));
    Ok(SpreadingResult {
        coefficient,
        radius: (r * r + big_r * big_r).sqrt() * (1.0 - xi),
        center: center.to_vec(),
        rescaled,
    })
}

/// `Q⁺(1_{B(v̄,R)}, 1_{B(v̄,r)}) ≥ coefficient · 1_{B(v̄, radius)}`.
pub fn spreading_bound(
    k: &CollisionKernel,
    r: f64,
    big_r: f64,
    xi: f64,
    cst_spread: f64,
) -> Result<SpreadingResult> {
    let ell = angular_infimum_ellb(k)?;
    let origin = vec![0.0; k.dimension];
    spreading_with_ellb(
        k,
        ell,
        r,
        big_r,
        xi,
        cst_spread,
        &origin,
        XiExponentMode::Proofstep,
    )
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl McEstimate {
    pub fn rel_se(&self) -> f64 {
        if self.value > 0.0 {
            self.std_error / self.value
        } else if self.std_error == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Estimate of `Q⁺(1_{B(0,R)}, 1_{B(0,r)})(v)` for a cutoff kernel.
pub fn qplus_indicator_quadrature(
    k: &CollisionKernel,
    r: f64,
    big_r: f64,
    v: &[f64],
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if !k.is_cutoff() {
        return Err(Error::NonIntegrableAngular { nu: k.nu });
    }
    qplus_indicator_split(k, 0.0, r, big_r, v, samples, seed)
}

/// As [`qplus_indicator_quadrature`] for the cutoff part `b·1_{θ≥ε}`.
pub fn qplus_indicator_split(
    k: &CollisionKernel,
    eps: f64,
    r: f64,
    big_r: f64,
    v: &[f64],
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    let est = qplus_raw(k, eps, r, big_r, v, samples, seed)?;
    if est.rel_se() > 0.05 {
        return Err(Error::InsufficientSamples {
            rel_se: est.rel_se(),
        });
    }
    Ok(est)
}

/// Raw estimator without the standard-error check.
pub fn qplus_raw(
    k: &CollisionKernel,
    eps: f64,
    r: f64,
    big_r: f64,
    v: &[f64],
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    let n = k.dimension;
    if n > MAX_DIM || v.len() != n {
        return Err(Error::InvalidGeometry(format!(
            "velocity of length {} in dimension {n} (max {MAX_DIM})",
            v.len()
        )));
    }
    if !(r > 0.0 && big_r > 0.0) {
        return Err(Error::InvalidGeometry("radii must be positive".into()));
    }
    if samples < MIN_SAMPLES {
        return Err(Error::InvalidRequest(format!(
            "at least {MIN_SAMPLES} samples required, got {samples}"
        )));
    }
    let v2: f64 = v.iter().map(|x| x * x).sum();
    let rho2 = r * r + big_r * big_r - v2;
    if rho2 <= 0.0 {
        // Energy conservation: |v_*|² = |v′|² + |v′_*|² − |v|² < 0 is impossible.
        return Ok(McEstimate {
            value: 0.0,
            std_error: 0.0,
            samples,
        });
    }
    let rho_max = rho2.sqrt();
    let per = samples.div_ceil(2 * MC_STREAMS);
    let partial: Vec<(f64, f64)> = (0..MC_STREAMS)
        .into_par_iter()
        .map(|s| stream_sum(k, eps, r, big_r, v, rho_max, per, seed, s as u64))
        .collect();
    let (mut sum, mut sq) = (0.0, 0.0);
    for (a, b) in partial {
        sum += a;
        sq += b;
    }
    let count = (per * MC_STREAMS) as f64;
    let mean = sum / count;
    let var = (sq / count - mean * mean).max(0.0);
    let scale = ball_volume(n) * rho_max.powi(n as i32) * sphere_area(n - 1);
    Ok(McEstimate {
        value: scale * mean,
        std_error: scale * (var / count).sqrt(),
        samples: 2 * per * MC_STREAMS,
    })
}

#[allow(clippy::too_many_arguments)]
fn stream_sum(
    k: &CollisionKernel,
    eps: f64,
    r: f64,
    big_r: f64,
    v: &[f64],
    rho_max: f64,
    per: usize,
    seed: u64,
    stream: u64,
) -> (f64, f64) {
    let n = k.dimension;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let (r2, big_r2) = (r * r, big_r * big_r);
    let mut vs = [0.0; MAX_DIM];
    let mut sigma = [0.0; MAX_DIM];
    let (mut sum, mut sq) = (0.0, 0.0);
    for i in 0..per {
        let u = (i as f64 + rng.gen::<f64>()) / per as f64;
        let rad = rho_max * u.powf(1.0 / n as f64);
        unit_vector(&mut rng, &mut vs[..n]);
        vs[..n].iter_mut().for_each(|c| *c *= rad);
        unit_vector(&mut rng, &mut sigma[..n]);
        let mut pair = 0.0;
        for sign in [1.0, -1.0] {
            pair += integrand(k, eps, v, &vs[..n], &sigma[..n], sign, r2, big_r2);
        }
        let x = 0.5 * pair;
        sum += x;
        sq += x * x;
    }
    (sum, sq)
}

fn unit_vector(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    loop {
        let mut norm = 0.0;
        for c in out.iter_mut() {
            *c = rng.sample(StandardNormal);
            norm += *c * *c;
        }
        if norm > 1e-24 {
            let inv = 1.0 / norm.sqrt();
            out.iter_mut().for_each(|c| *c *= inv);
            return;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn integrand(
    k: &CollisionKernel,
    eps: f64,
    v: &[f64],
    vs: &[f64],
    sigma: &[f64],
    sign: f64,
    r2: f64,
    big_r2: f64,
) -> f64 {
    let mut rel2 = 0.0;
    for j in 0..v.len() {
        let d = v[j] - vs[j];
        rel2 += d * d;
    }
    let rel = rel2.sqrt();
    if rel == 0.0 {
        return 0.0;
    }
    let (mut p2, mut q2, mut dot) = (0.0, 0.0, 0.0);
    for j in 0..v.len() {
        let mid = 0.5 * (v[j] + vs[j]);
        let s = sign * sigma[j];
        let vp = mid + 0.5 * rel * s;
        let vq = mid - 0.5 * rel * s;
        p2 += vp * vp;
        q2 += vq * vq;
        dot += (v[j] - vs[j]) * s;
    }
    if p2 > r2 || q2 > big_r2 {
        return 0.0;
    }
    let theta = (dot / rel).clamp(-1.0, 1.0).acos();
    if theta < eps || theta <= 0.0 {
        return 0.0;
    }
    k.phi(rel, PhiForm::Lower) * k.b(theta)
}

/// `min_{θ∈[π/4,3π/4]} sin(θ/2)^{−γ}` (1 in the mollified soft case, which is
/// handled through the constant kinetic floor instead).
fn half_angle_floor(k: &CollisionKernel) -> f64 {
    let g = effective_gamma(k);
    if g > 0.0 {
        (3.0 * FRAC_PI_8).sin().powf(-g)
    } else {
        FRAC_PI_8.sin().powf(-g)
    }
}

fn effective_gamma(k: &CollisionKernel) -> f64 {
    if k.gamma < 0.0 && k.mollified {
        0.0
    } else {
        k.gamma
    }
}

/// Universal factor turning [`carleman_reduced_integral`] into a lower bound
/// for `Q⁺(1_{B(0,1)}, 1_{B(0,p)})(z e_N)`.
pub fn carleman_prefactor(n: usize, z: f64) -> f64 {
    2f64.powi(n as i32 - 1)
        * sphere_area(n - 2)
        * ball_volume(n - 1)
        * FRAC_PI_8.sin().powi(n as i32 - 2)
        / z
}

/// `ℓ_b c_Φ min sin(θ/2)^{−γ} ∫∫ ρ^γ (1 − y²/z²)^{(N−3)/2} (1 − y²)^{(N−1)/2} dρ dy`.
pub fn carleman_reduced_integral(k: &CollisionKernel, p: f64, z: f64) -> Result<f64> {
    carleman_reduced_with_ellb(k, angular_infimum_ellb(k)?, p, z)
}

pub fn carleman_reduced_with_ellb(k: &CollisionKernel, ell_b: f64, p: f64, z: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) || !(z > 0.0) {
        return Err(Error::InvalidGeometry(format!(
            "need 0 < p <= 1 and z > 0, got p = {p}, z = {z}"
        )));
    }
    if z * z >= 1.0 + p * p {
        return Err(Error::EmptyIntegrationDomain);
    }
    let geo = CarlemanGeometry::default();
    let l2 = geo.lambda * geo.lambda;
    let y_lo = (z * z - p * p)
        .max(0.0)
        .sqrt()
        .max(((1.0 - l2 * z * z) / (1.0 - l2)).max(0.0).sqrt());
    let y_hi = z.min(1.0);
    if y_lo >= y_hi {
        return Err(Error::EmptyIntegrationDomain);
    }
    let g = effective_gamma(k);
    let nn = k.dimension as i32;
    let inner = |y: f64| -> f64 {
        let s = (p * p - z * z + y * y).max(0.0).sqrt();
        let w1 = (z * z - y * y).max(0.0).sqrt();
        let w2 = (1.0 - y * y).max(0.0).sqrt();
        let lo = (y - s).max(geo.a * (w1 + w2)).max(0.0);
        let hi = (y + s).min(geo.b_geo * (w1 - w2));
        if hi <= lo {
            return 0.0;
        }
        if g == 0.0 {
            hi - lo
        } else if g == -1.0 {
            (hi / lo).ln()
        } else {
            (hi.powf(g + 1.0) - lo.powf(g + 1.0)) / (g + 1.0)
        }
    };
    // y = z sin u absorbs the (1 − y²/z²)^{(N−3)/2} endpoint factor for N = 2.
    let f = |u: f64| {
        let y = z * u.sin();
        let c = u.cos();
        z * c.powi(nn - 2) * (1.0 - y * y).max(0.0).powf(0.5 * (k.n() - 1.0)) * inner(y)
    };
    let u_lo = (y_lo / z).min(1.0).asin();
    let u_hi = (y_hi / z).min(1.0).asin();
    let val = integrate(f, u_lo, u_hi, 1e-9, 0.0)?.value;
    let mut kin = k.c_phi * half_angle_floor(k);
    if k.gamma < 0.0 && k.mollified {
        kin *= 2f64.powf(k.gamma);
    }
    Ok(ell_b * kin * val)
}

/// Full Carleman lower bound `prefactor · reduced`.
pub fn carleman_lower_bound(k: &CollisionKernel, p: f64, z: f64) -> Result<f64> {
    Ok(carleman_prefactor(k.dimension, z) * carleman_reduced_integral(k, p, z)?)
}

/// One point of a spreading calibration plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub r: f64,
    #[serde(rename = "R")]
    pub big_r: f64,
    pub xi: f64,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRatio {
    pub point: SamplePoint,
    pub qplus: McEstimate,
    pub formula: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadingCalibration {
    pub cst_spread: f64,
    pub xi_exponent_mode: XiExponentMode,
    pub safety_factor: f64,
    pub samples_per_point: usize,
    pub seed: u64,
    pub ratios: Vec<SampleRatio>,
}

pub const SAFETY_FACTOR: f64 = 1.5;

/// `min(ratios) / 1.5`.
pub fn calibrate_from_ratios(ratios: &[f64]) -> Result<f64> {
    if ratios.is_empty() {
        return Err(Error::DegenerateSample("empty sample plan".into()));
    }
    if ratios.iter().any(|r| !r.is_finite()) {
        return Err(Error::DegenerateSample("non-finite ratio".into()));
    }
    Ok(ratios.iter().cloned().fold(f64::INFINITY, f64::min) / SAFETY_FACTOR)
}

/// Smallest sampled ratio of the Monte Carlo gain term to the closed-form
/// spreading estimate, divided by the safety factor.
pub fn calibrate_spreading_cst(
    k: &CollisionKernel,
    plan: &[SamplePoint],
    samples: usize,
    seed: u64,
    mode: XiExponentMode,
) -> Result<SpreadingCalibration> {
    let ell = angular_infimum_ellb(k)?;
    let mut out = Vec::with_capacity(plan.len());
    for (i, pt) in plan.iter().enumerate() {
        let bound = (pt.r * pt.r + pt.big_r * pt.big_r).sqrt() * (1.0 - pt.xi);
        let vn = pt.v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vn > bound * (1.0 + 1e-12) {
            return Err(Error::InvalidGeometry(format!(
                "sample {i}: |v| = {vn} outside the spread ball of radius {bound}"
            )));
        }
        let formula =
            spreading_with_ellb(k, ell, pt.r, pt.big_r, pt.xi, 1.0, &pt.v, mode)?.coefficient;
        if !(formula > 0.0) {
            return Err(Error::DegenerateSample(format!(
                "sample {i}: formula denominator is {formula}"
            )));
        }
        let q = qplus_indicator_quadrature(
            k,
            pt.r,
            pt.big_r,
            &pt.v,
            samples,
            seed.wrapping_add(i as u64),
        )?;
        out.push(SampleRatio {
            point: pt.clone(),
            qplus: q,
            formula,
            ratio: q.value / formula,
        });
    }
    let ratios: Vec<f64> = out.iter().map(|s| s.ratio).collect();
    Ok(SpreadingCalibration {
        cst_spread: calibrate_from_ratios(&ratios)?,
        xi_exponent_mode: mode,
        safety_factor: SAFETY_FACTOR,
        samples_per_point: samples,
        seed,
        ratios: out,
    })
}

/// The 64-point plan: `R ∈ {1, 2}`, `r/R ∈ {1/2, 1}`, four values of ξ and
/// four positions along the outer radius of the spread ball.
pub fn default_plan(n: usize) -> Vec<SamplePoint> {
    let mut plan = Vec::with_capacity(64);
    for big_r in [1.0, 2.0] {
        for ratio in [0.5, 1.0] {
            let r: f64 = big_r * ratio;
            for xi in [0.15, 0.25, 0.4, 0.6] {
                let edge = (r * r + big_r * big_r).sqrt() * (1.0 - xi);
                for frac in [0.0, 0.4, 0.8, 1.0] {
                    let mut v = vec![0.0; n];
                    v[n - 1] = frac * edge;
                    plan.push(SamplePoint { r, big_r, xi, v });
                }
            }
        }
    }
    plan
}

/// Radial position `|v| = √(1+p²)(1 − ξ)` used in the ξ-scaling checks.
pub fn edge_speed(p: f64, xi: f64) -> f64 {
    (1.0 + p * p).sqrt() * (1.0 - xi)
}
