//! The cutoff spreading induction, its Maxwellian envelope, and the
//! space/time uniformization that turns it into a certificate.

use crate::certificate::{Certificate, KernelSummary, Provenance};
use crate::error::{Error, Result};
use crate::estimates::AprioriBounds;
use crate::geometry::XiExponentMode;
use crate::kernel::{angular_infimum_ellb, bracket, CollisionKernel};
use crate::upheaval::{upheaval_cutoff, Constants, DeltaRule, Regime, UpheavalSeed};
use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, PI};

/// Largest admissible doubling base; keeps θ finite.
pub const ALPHA_CEILING: f64 = 1.0 - 1e-6;
const DOMINATION_GRID: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeConfig {
    pub xi: f64,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default)]
    pub xi_exponent_mode: XiExponentMode,
}

fn default_n_max() -> usize {
    48
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            xi: 0.5,
            n_max: 48,
            xi_exponent_mode: XiExponentMode::Stated,
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(Error::InvalidRequest(format!(
                "xi = {} outside (0, 1)",
                self.xi
            )));
        }
        if self.n_max < 8 {
            return Err(Error::InvalidRequest(format!(
                "n_max = {} below 8",
                self.n_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CascadeStep {
    pub n: usize,
    pub ln_a: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeTrace {
    pub steps: Vec<CascadeStep>,
    pub c_delta: f64,
    /// Per-step constant `ln(cst ℓ_b c_Φ C_e τ/2)`.
    pub ln_k: f64,
    pub ln_ce: f64,
    /// `ln α_chain` with `a_n ≥ α_chain^{2^n}` by the closed-form chain bound.
    pub ln_alpha_chain: f64,
    pub branch_flags: Vec<String>,
}

impl CascadeTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,log_a_n,delta_n\n");
        for st in &self.steps {
            s += &format!("{},{:e},{:e}\n", st.n, st.ln_a, st.delta);
        }
        s
    }
}

/// `c_δ = δ₀ ∏_{k≥1}(1 − ξ^k)`, taken until the factors are 1 in double precision.
pub fn c_delta(delta0: f64, xi: f64) -> f64 {
    let mut p = delta0;
    let mut x = xi;
    while x >= 1e-17 {
        p *= 1.0 - x;
        x *= xi;
    }
    p
}

/// Exponent bookkeeping of the doubling chain: `A_n = 2^n − (n+1)`, by the
/// recursion `A_{n+1} = 2A_n + n`.
pub fn chain_exponent(n: u32) -> u64 {
    (0..n).fold(0u64, |a, k| 2 * a + k as u64)
}

/// `ln` of the kinetic factor `δ^N max(δ,1)^γ` (or `δ^{N+γ}` when γ ≥ 0).
pub fn ln_spread_kinetic(n: usize, gamma: f64, delta: f64) -> f64 {
    let ld = delta.ln();
    if gamma < 0.0 {
        n as f64 * ld + gamma * ld.max(0.0)
    } else {
        (n as f64 + gamma) * ld
    }
}

/// `C_e = exp(−C_L τ ⟨R₀ + √2 δ₀⟩^{γ⁺}/2)`: the loss damping over one
/// cascade interval, maximal at the first step.
pub fn ce_constant(seed: &UpheavalSeed, k: &CollisionKernel, c_l: f64) -> f64 {
    ln_ce(seed, k, c_l).exp()
}

pub fn ln_ce(seed: &UpheavalSeed, k: &CollisionKernel, c_l: f64) -> f64 {
    let reach = seed.r0 + 2f64.sqrt() * seed.delta0;
    -c_l * seed.tau * bracket(reach).powf(k.gamma_plus()) / 2.0
}

/// `λ = 2^{(N+γ)/2} ξ^{e}/2`, the per-step growth factor of the chain.
pub fn chain_lambda(n: usize, gamma: f64, xi: f64, exponent: f64) -> f64 {
    2f64.powf((n as f64 + gamma) / 2.0) * xi.powf(exponent) / 2.0
}

/// One step of the recursion in log-space.
pub fn recursion_step(
    ln_k: f64,
    ln_a: f64,
    delta: f64,
    n: usize,
    dim: usize,
    gamma: f64,
    xi: f64,
    exponent: f64,
) -> (f64, f64) {
    let m = (n + 1) as f64;
    let ln_next = ln_k + 2.0 * ln_a + ln_spread_kinetic(dim, gamma, delta) + exponent * m * xi.ln()
        - m * LN_2;
    let xi_n = xi.powi(n as i32 + 1);
    (ln_next, 2f64.sqrt() * delta * (1.0 - xi_n))
}

pub fn run_cascade(
    seed: &UpheavalSeed,
    k: &CollisionKernel,
    csts: &Constants,
    config: &CascadeConfig,
) -> Result<CascadeTrace> {
    if seed.regime != Regime::Cutoff {
        return Err(Error::InvalidRequest(
            "run_cascade needs a cutoff seed".into(),
        ));
    }
    config.validate()?;
    let dim = k.dimension;
    let e = config.xi_exponent_mode.exponent(dim);
    let ell = angular_infimum_ellb(k)?;
    let lce = ln_ce(seed, k, seed.damping_constant);
    let ln_k = (csts.cst_spread * ell * k.c_phi * seed.tau / 2.0).ln() + lce;
    let mut flags = Vec::new();
    let mut steps = vec![CascadeStep {
        n: 0,
        ln_a: seed.ln_a0,
        delta: seed.delta0,
    }];
    for n in 0..config.n_max {
        let last = steps[n];
        let (ln_a, delta) =
            recursion_step(ln_k, last.ln_a, last.delta, n, dim, k.gamma, config.xi, e);
        if k.gamma < 0.0
            && last.delta < 1.0
            && !flags.iter().any(|f: &String| f.starts_with("soft"))
        {
            flags
                .push("soft_rescaled: kinetic factor taken at R = 1 below unit radius".to_string());
        }
        steps.push(CascadeStep {
            n: n + 1,
            ln_a,
            delta,
        });
    }
    let cd = c_delta(seed.delta0, config.xi);
    if !(cd > 0.0) {
        return Err(Error::DegenerateEnvelope("c_delta vanished".into()));
    }
    // closed-form chain: ln a_n / 2^n ≥ ln a₀ + min(ln Kμ, 0) + min(ln λ, 0)
    let ln_mu = if k.gamma >= 0.0 {
        (dim as f64 + k.gamma) * cd.ln() + e * config.xi.ln() - LN_2
    } else {
        dim as f64 * cd.ln() + k.gamma * seed.delta0.ln().max(0.0) + e * config.xi.ln() - LN_2
    };
    let ln_lambda = chain_lambda(dim, k.gamma, config.xi, e).ln();
    if ln_lambda > 0.0 {
        flags.push("lambda_gt_1".to_string());
    }
    let mut ln_alpha_chain = seed.ln_a0 + (ln_k + ln_mu).min(0.0) + ln_lambda.min(0.0);
    if ln_alpha_chain > ALPHA_CEILING.ln() {
        ln_alpha_chain = ALPHA_CEILING.ln();
        flags.push("alpha_clamped".to_string());
    }
    let trace = CascadeTrace {
        steps,
        c_delta: cd,
        ln_k,
        ln_ce: lce,
        ln_alpha_chain,
        branch_flags: flags,
    };
    check_contraction(&trace, ln_alpha_chain)?;
    Ok(trace)
}

/// `a_n ≥ α^{2^n}` along the trace.
pub fn check_contraction(trace: &CascadeTrace, ln_alpha: f64) -> Result<()> {
    for st in &trace.steps {
        let bound = 2f64.powi(st.n as i32) * ln_alpha;
        if st.ln_a < bound - 1e-12 * bound.abs() {
            return Err(Error::NonContraction { n: st.n });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub ln_alpha: f64,
    pub ln_rho: f64,
    pub theta: f64,
    /// Factor by which ρ was reduced to sit under the step envelope (≥ 1).
    pub shrink: f64,
}

/// Step envelope `s ↦ max{a_n : δ_n ≥ s}` as sorted breakpoints `(δ, ln a)`.
fn step_envelope(steps: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = steps.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = f64::NEG_INFINITY;
    let mut out = Vec::with_capacity(pts.len());
    for &(d, la) in pts.iter().rev() {
        best = best.max(la);
        out.push((d, best));
    }
    out.reverse();
    out
}

fn envelope_at(env: &[(f64, f64)], s: f64) -> f64 {
    let i = env.partition_point(|p| p.0 < s);
    env.get(i).map_or(f64::NEG_INFINITY, |p| p.1)
}

/// Factor by which `ln_m(s)` (a decreasing radial profile) must be lowered
/// to sit under the step envelope on `[0, max δ_n]`: exact on the shells,
/// then confirmed on a uniform radial grid.
pub fn domination_shrink<F: Fn(f64) -> f64>(anchors: &[(f64, f64)], ln_m: F) -> f64 {
    let env = step_envelope(anchors);
    let mut worst = 0.0f64;
    let mut lo = 0.0;
    for &(d, la) in &env {
        worst = worst.max(ln_m(lo) - la);
        lo = d;
    }
    let top = env.last().map_or(0.0, |p| p.0);
    for i in 0..=DOMINATION_GRID {
        let s = top * i as f64 / DOMINATION_GRID as f64;
        worst = worst.max(ln_m(s) - envelope_at(&env, s));
    }
    worst.exp()
}

/// Maxwellian envelope `ρ (2πθ)^{−N/2} e^{−s²/(2θ)}` under the cascade.
///
/// With `α = α_chain²` and `θ = c_δ²/(2 ln(1/α))`, the Maxwellian at the
/// inner edge of shell `n` is `α_chain^{2^n} ≤ a_n`, so the profile sits
/// under the step envelope between anchors and not just at them.
pub fn envelope(trace: &CascadeTrace, ln_a0: f64, dim: usize) -> Result<Envelope> {
    if !(trace.c_delta > 0.0) || !ln_a0.is_finite() {
        return Err(Error::DegenerateEnvelope(
            "c_delta and a0 must be positive".into(),
        ));
    }
    let ln_alpha = 2.0 * trace.ln_alpha_chain;
    if !(ln_alpha < 0.0) {
        return Err(Error::DegenerateEnvelope(format!(
            "alpha = exp({ln_alpha}) is not below 1"
        )));
    }
    let theta = trace.c_delta * trace.c_delta / (2.0 * -ln_alpha);
    let ln_peak = ln_a0.min(0.0);
    let anchors: Vec<(f64, f64)> = trace.steps.iter().map(|s| (s.delta, s.ln_a)).collect();
    let shrink = domination_shrink(&anchors, |s| ln_peak - s * s / (2.0 * theta)).max(1.0);
    let ln_rho = ln_peak + dim as f64 / 2.0 * (2.0 * PI * theta).ln() - shrink.ln();
    Ok(Envelope {
        ln_alpha,
        ln_rho,
        theta,
        shrink,
    })
}

/// `θ′ = θ/2`, `ρ′ = ρ e^{−R₀²/θ}/2^{N/2}`, in log-space.
pub fn uniformize(ln_rho: f64, theta: f64, r0: f64, dim: usize) -> (f64, f64) {
    (
        ln_rho - r0 * r0 / theta - dim as f64 / 2.0 * LN_2,
        theta / 2.0,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffConfig {
    #[serde(default)]
    pub cascade: CascadeConfig,
    pub constants: Constants,
    #[serde(default)]
    pub delta_rule: DeltaRule,
    #[serde(default)]
    pub calibration_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutoffRun {
    pub certificate: Certificate,
    pub trace: CascadeTrace,
    pub envelope: Envelope,
}

pub fn certify_cutoff(
    k: &CollisionKernel,
    b: &AprioriBounds,
    tau: f64,
    cfg: &CutoffConfig,
) -> Result<CutoffRun> {
    if !k.is_cutoff() {
        return Err(Error::NonIntegrableAngular { nu: k.nu });
    }
    let seed = upheaval_cutoff(k, b, tau, &cfg.constants, &cfg.delta_rule)?;
    let trace = run_cascade(&seed, k, &cfg.constants, &cfg.cascade)?;
    let env = envelope(&trace, seed.ln_a0, k.dimension)?;
    check_contraction(&trace, env.ln_alpha)?;
    let (ln_rho_p, theta_p) = uniformize(env.ln_rho, env.theta, seed.r0, k.dimension);
    let mut prov = Provenance {
        kernel: KernelSummary::from(k),
        bounds: b.clone(),
        cst_spread: 0.0,
        cst_cl: 0.0,
        cst_up: 0.0,
        cst_cs: 0.0,
        cst_q1: 0.0,
        cst_eps: 0.0,
        delta0_rule: cfg.delta_rule.describe(),
        xi: cfg.cascade.xi,
        n_max: cfg.cascade.n_max,
        xi_exponent_mode: cfg.cascade.xi_exponent_mode,
        alpha: env.ln_alpha.exp(),
        ln_alpha: env.ln_alpha,
        c_delta: trace.c_delta,
        ln_ce: trace.ln_ce,
        domination_shrink: env.shrink,
        seed: seed.clone(),
        schedule: None,
        branch_flags: trace.branch_flags.clone(),
        calibration_ids: cfg.calibration_ids.clone(),
        notes: vec!["valid for t >= tau given time-uniform bounds".to_string()],
    };
    prov.record_constants(&cfg.constants);
    let certificate = Certificate::maxwellian(k.dimension, ln_rho_p, theta_p, tau, seed.r0, prov);
    certificate.validate()?;
    Ok(CutoffRun {
        certificate,
        trace,
        envelope: env,
    })
}
