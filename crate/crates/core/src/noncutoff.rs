//! The non-cutoff induction: per-step grazing split `ε_n`, time schedule
//! `Δ_n`, and the stretched-exponential certificate `C₁ e^{−C₂|v|^K}`.

use crate::cascade::{c_delta, domination_shrink, ln_spread_kinetic};
use crate::certificate::{Certificate, KernelSummary, Provenance, ScheduleRecord};
use crate::error::{Error, Result};
use crate::estimates::AprioriBounds;
use crate::geometry::XiExponentMode;
use crate::kernel::{angular_infimum_ellb, bracket, split_kernel, split_asymptotics, CollisionKernel};
use crate::upheaval::{upheaval_noncutoff, Constants, Regime, UpheavalSeed};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_4, LN_2};

/// Terms of `Σ Δ_k` below this fraction of the running sum are dropped.
const TAIL_EPS: f64 = 1e-300;
/// Largest step index probed when bounding the untraced tail.
const HORIZON: usize = 900;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default = "d_kappa")]
    pub kappa: f64,
    #[serde(default = "d_beta")]
    pub beta: f64,
    #[serde(default = "d_alpha")]
    pub alpha_sched: f64,
    #[serde(default = "d_beta_geo")]
    pub beta_geo: f64,
    #[serde(default = "d_n_max")]
    pub n_max: usize,
}

fn d_kappa() -> f64 {
    4.5
}
fn d_beta() -> f64 {
    2.25
}
fn d_alpha() -> f64 {
    0.5
}
fn d_beta_geo() -> f64 {
    0.25
}
fn d_n_max() -> usize {
    40
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { kappa: 4.5, beta: 2.25, alpha_sched: 0.5, beta_geo: 0.25, n_max: 40 }
    }
}

pub fn kappa_threshold(nu: f64) -> f64 {
    2.0 + 2.0 * nu / (2.0 - nu)
}

impl ScheduleConfig {
    pub fn validate(&self, nu: f64) -> Result<()> {
        if !(0.0..2.0).contains(&nu) {
            return Err(Error::InvalidSchedule(format!("nu = {nu} outside [0, 2)")));
        }
        if self.n_max < 8 {
            return Err(Error::InvalidSchedule(format!("n_max = {} below 8", self.n_max)));
        }
        if nu == 0.0 {
            if !(self.beta_geo > 0.0 && self.beta_geo < 1.0) {
                return Err(Error::InvalidSchedule(format!("beta_geo = {} outside (0, 1)", self.beta_geo)));
            }
            return Ok(());
        }
        let threshold = kappa_threshold(nu);
        if !(self.kappa > threshold) {
            return Err(Error::InvalidKappa { kappa: self.kappa, threshold });
        }
        let lo = threshold - 2.0;
        if !(self.beta > lo && self.beta < self.kappa - 2.0) {
            return Err(Error::InvalidSchedule(format!(
                "beta = {} outside ({lo}, {})",
                self.beta,
                self.kappa - 2.0
            )));
        }
        if !(self.alpha_sched > 0.0 && self.alpha_sched < 1.0) {
            return Err(Error::InvalidSchedule(format!("alpha_sched = {} outside (0, 1)", self.alpha_sched)));
        }
        Ok(())
    }
}

/// `K = ln κ / ln √2`, or 2 when ν = 0.
pub fn exponent_k(nu: f64, kappa: f64) -> Result<f64> {
    if nu == 0.0 {
        return Ok(2.0);
    }
    let threshold = kappa_threshold(nu);
    if !(kappa > threshold) {
        return Err(Error::InvalidKappa { kappa, threshold });
    }
    let k = kappa.ln() / 2f64.sqrt().ln();
    debug_assert!(k > 2.0 * threshold.log2());
    Ok(k)
}

/// The time schedule, normalised so that `Σ_{m≥0} Δ_m = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub nu: f64,
    pub cfg: ScheduleConfig,
    /// `ln α_s`; the self-consistent base can underflow.
    pub ln_alpha: f64,
    ln_sigma: f64,
}

fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

impl Schedule {
    pub fn new(cfg: ScheduleConfig, nu: f64) -> Result<Self> {
        Self::with_ln_alpha(cfg, nu, cfg.alpha_sched.ln())
    }

    /// Same as [`Schedule::new`] with `α_s = e^{ln_alpha}`.
    pub fn with_ln_alpha(cfg: ScheduleConfig, nu: f64, ln_alpha: f64) -> Result<Self> {
        cfg.validate(nu)?;
        if !(ln_alpha < 0.0) {
            return Err(Error::InvalidSchedule(format!("ln alpha_sched = {ln_alpha} must be negative")));
        }
        let mut s = Schedule { nu, cfg, ln_alpha, ln_sigma: 0.0 };
        s.ln_sigma = s.ln_raw_tail(0);
        Ok(s)
    }

    /// `ln` of the unnormalised `m`-th term.
    fn ln_raw(&self, m: usize) -> f64 {
        if self.nu == 0.0 {
            (m as f64 - 1.0) * self.cfg.beta_geo.ln()
        } else {
            self.cfg.beta * self.cfg.kappa.powf(m as f64 - 1.0) * self.ln_alpha
        }
    }

    fn ln_raw_tail(&self, m: usize) -> f64 {
        if self.nu == 0.0 {
            return self.ln_raw(m) - (-self.cfg.beta_geo).ln_1p();
        }
        let first = self.ln_raw(m);
        let mut acc = first;
        let mut j = m + 1;
        loop {
            let t = self.ln_raw(j);
            if t - acc < TAIL_EPS.ln() || !t.is_finite() {
                break;
            }
            acc = log_add(acc, t);
            j += 1;
        }
        acc
    }

    /// `ln Δ_m`.
    pub fn ln_delta(&self, m: usize) -> f64 {
        self.ln_raw(m) - self.ln_sigma
    }

    /// `ln Σ_{k≥m} Δ_k`.
    pub fn ln_tail(&self, m: usize) -> f64 {
        self.ln_raw_tail(m) - self.ln_sigma
    }

    pub fn ln_sigma(&self) -> f64 {
        self.ln_sigma
    }
}

/// `Δ_{n+1}`.
pub fn schedule_delta(cfg: &ScheduleConfig, nu: f64, n: usize) -> Result<f64> {
    Ok(Schedule::new(*cfg, nu)?.ln_delta(n + 1).exp())
}

/// `ln ε_n = ln cst_eps + [ln C_f + 2 ln a_n + (N+γ−γ̃) ln δ_n + (N/2−1) ln ξ_n]/(2−ν)`,
/// clamped to π/4. Returns the value and whether the clamp fired.
pub fn ln_epsilon_n(k: &CollisionKernel, c_f: f64, cst_eps: f64, ln_a: f64, delta: f64, ln_xi_n: f64) -> (f64, bool) {
    let n = k.n();
    let b = c_f.ln() + 2.0 * ln_a + (n + k.gamma - k.gamma_tilde()) * delta.ln() + (n / 2.0 - 1.0) * ln_xi_n;
    let raw = cst_eps.ln() + b / (2.0 - k.nu);
    let cap = FRAC_PI_4.ln() + (-1e-9f64).ln_1p();
    if raw > cap {
        (cap, true)
    } else {
        (raw, false)
    }
}

pub fn epsilon_n(k: &CollisionKernel, c_f: f64, cst_eps: f64, ln_a: f64, delta: f64, ln_xi_n: f64) -> f64 {
    ln_epsilon_n(k, c_f, cst_eps, ln_a, delta, ln_xi_n).0.exp()
}

/// `S = sup_{0<ε<π/4} (n_{b^S_ε} + m_{b^R_ε}) w(ε)` with `w = ε^ν`, or
/// `w = 1/(1 + |ln ε|)` when ν = 0, bracketed between the points of a log
/// grid and joined to the small-ε limit.
pub fn angular_rate_sup(k: &CollisionKernel) -> Result<f64> {
    let nu = k.nu;
    let w = |e: f64| if nu == 0.0 { 1.0 / (1.0 + e.ln().abs()) } else { e.powf(nu) };
    let pts = 96;
    let (lo, hi) = (1e-12f64.ln(), (FRAC_PI_4 * (1.0 - 1e-9)).ln());
    let grid: Vec<f64> = (0..pts).map(|i| (lo + (hi - lo) * i as f64 / (pts - 1) as f64).exp()).collect();
    let vals: Vec<(f64, f64)> = grid.iter().map(|&e| split_kernel(k, e)).collect::<Result<_>>()?;
    let mut sup = 0.0f64;
    for i in 0..pts - 1 {
        // n decreasing, m increasing in ε
        let bound = (vals[i].0 + vals[i + 1].1) * w(grid[i + 1]).max(w(grid[i]));
        sup = sup.max(bound);
    }
    let (n_lim, _) = split_asymptotics(k, grid[0]);
    let limit = if nu == 0.0 { n_lim / grid[0].ln().abs() } else { n_lim * grid[0].powf(nu) };
    // small-ε side: the head of n_bS relative to its leading term, plus slack
    let head = vals[0].0 * w(grid[0]);
    Ok(sup.max(1.01 * limit.max(head)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoncutoffStep {
    pub n: usize,
    pub ln_a: f64,
    pub delta: f64,
    /// `ε_n`, `ln Δ_{n+1}` and the damping argument `X_n` used to reach step `n+1`.
    pub ln_eps: f64,
    pub eps_clamped: bool,
    pub ln_sched: f64,
    pub damping: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoncutoffTrace {
    pub steps: Vec<NoncutoffStep>,
    pub c_delta: f64,
    pub ln_alpha: f64,
    pub kappa_eff: f64,
    pub exponent: f64,
    pub cst_damp: f64,
    pub branch_flags: Vec<String>,
}

impl NoncutoffTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,log_a_n,delta_n,eps_n,Delta_n,damping\n");
        for st in &self.steps {
            s += &format!(
                "{},{:e},{:e},{:e},{:e},{:e}\n",
                st.n,
                st.ln_a,
                st.delta,
                st.ln_eps.exp(),
                st.ln_sched.exp(),
                st.damping
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoncutoffConfig {
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default = "d_xi")]
    pub xi: f64,
    #[serde(default)]
    pub xi_exponent_mode: XiExponentMode,
    pub constants: Constants,
    #[serde(default)]
    pub calibration_ids: Vec<String>,
}

fn d_xi() -> f64 {
    0.5
}

/// Everything a step needs besides the state.
#[derive(Debug, Clone)]
pub struct StepContext<'a> {
    pub kernel: &'a CollisionKernel,
    pub schedule: Schedule,
    pub c_f: f64,
    pub cst_eps: f64,
    pub cst_damp: f64,
    /// `ln(cst_spread ℓ_b c_Φ τ/2)`.
    pub ln_gain: f64,
    pub r0: f64,
    pub xi: f64,
    pub exponent: f64,
}

impl StepContext<'_> {
    /// `X_n = cst_damp ε_n^{−ν} T_{n+1} ⟨R₀ + δ_{n+1}⟩^{γ⁺}` (ν > 0), with
    /// `ε^{−ν}` replaced by `1 + |ln ε|` when ν = 0.
    pub fn damping(&self, ln_eps: f64, n: usize, delta_next: f64) -> f64 {
        let k = self.kernel;
        let rate = if k.nu == 0.0 { (1.0 + ln_eps.abs()).ln() } else { -k.nu * ln_eps };
        let ln_x = self.cst_damp.ln() + rate + self.schedule.ln_tail(n + 1) + k.gamma_plus() * bracket(self.r0 + delta_next).ln();
        ln_x.exp()
    }

    /// Step `n → n+1` from `(ln a_n, δ_n)`.
    pub fn step(&self, n: usize, ln_a: f64, delta: f64) -> (NoncutoffStep, f64, f64) {
        let k = self.kernel;
        let m = (n + 1) as f64;
        let ln_xi_n = m * self.xi.ln();
        let (ln_eps, clamped) = ln_epsilon_n(k, self.c_f, self.cst_eps, ln_a, delta, ln_xi_n);
        let delta_next = 2f64.sqrt() * delta * (1.0 - self.xi.powi(n as i32 + 1));
        let x = self.damping(ln_eps, n, delta_next);
        let ln_sched = self.schedule.ln_delta(n + 1);
        let ln_next = self.ln_gain + ln_sched - x + 2.0 * ln_a + ln_spread_kinetic(k.dimension, k.gamma, delta) + self.exponent * ln_xi_n;
        let rec = NoncutoffStep { n, ln_a, delta, ln_eps, eps_clamped: clamped, ln_sched, damping: x };
        (rec, ln_next, delta_next)
    }
}

/// One step of the recursion, returning the next `(ln a, δ)` and the record of this step.
pub fn step_noncutoff(ctx: &StepContext, n: usize, ln_a: f64, delta: f64) -> (NoncutoffStep, f64, f64) {
    ctx.step(n, ln_a, delta)
}

/// Runs the recursion from the seed and returns the first `n_max + 1` steps
/// with `inf_n ln a_n / κ^n` over every `n`.
///
/// The step map is increasing in `ln a_n`, so the recursion itself is the
/// lower sequence. It is continued to a horizon where `κ^n` swamps every
/// polynomial term; past it `ln a_n / κ^n` tends to `β ln α_s / (κ − 2)`
/// (ν > 0) or moves by a geometric tail (ν = 0).
fn lower_sequence(ctx: &StepContext, ln_a0: f64, delta0: f64, n_max: usize, kappa: f64) -> Result<(Vec<NoncutoffStep>, f64)> {
    let nu = ctx.kernel.nu;
    let horizon = if nu > 0.0 { (250.0 * 10f64.ln() / kappa.ln()) as usize } else { HORIZON };
    let horizon = horizon.max(n_max + 8);
    let mut steps = Vec::with_capacity(n_max + 1);
    let (mut ln_a, mut delta) = (ln_a0, delta0);
    let mut inf = ln_a0.min(0.0);
    let mut kn = 1.0f64;
    let mut last = (0.0, 0.0);
    for n in 0..horizon {
        inf = inf.min(ln_a / kn);
        let (rec, next, dn) = ctx.step(n, ln_a, delta);
        if !next.is_finite() {
            return Err(Error::NonContraction { n });
        }
        if n <= n_max {
            steps.push(rec);
        }
        last = (rec.damping, next - 2.0 * ln_a);
        ln_a = next;
        delta = dn;
        kn *= kappa;
    }
    let u = ln_a / kn;
    inf = inf.min(u);
    let (x_last, c_last) = last;
    if x_last > 1e-6 {
        return Err(Error::NonContraction { n: horizon });
    }
    if nu > 0.0 {
        let s = &ctx.schedule;
        let fixed = s.cfg.beta * s.ln_alpha / (kappa - 2.0);
        // damping keeps shrinking past the horizon only if the schedule outruns ε_n
        let rate = s.cfg.beta * kappa * s.ln_alpha.abs() - 2.0 * nu / (2.0 - nu) * 1.01 * u.min(fixed).abs();
        if !(rate > 0.0) {
            return Err(Error::NonContraction { n: horizon });
        }
        inf = inf.min(1.01 * fixed);
    } else {
        inf -= 4.0 * c_last.abs() / kn;
    }
    // absorbs the rounding between κ^n products and powi
    Ok((steps, inf * (1.0 + 1e-12)))
}

/// Largest `ln α` (ν > 0) for which the schedule built on `α` keeps
/// `ln a_n ≥ κ^n ln α` along the whole recursion, found by bisection below
/// `min(ln a₀, ln α_s)`.
fn self_consistent_base<F>(ln_start: f64, mut attempt: F) -> Result<(f64, Vec<NoncutoffStep>, f64)>
where
    F: FnMut(f64) -> Result<(Vec<NoncutoffStep>, f64)>,
{
    let mut ok = |l: f64| match attempt(l) {
        Ok((st, inf)) if inf >= l => Some((st, inf)),
        _ => None,
    };
    if let Some((st, inf)) = ok(ln_start) {
        return Ok((ln_start, st, inf));
    }
    let mut hi = ln_start;
    let mut lo = 2.0 * ln_start;
    let mut best = None;
    for _ in 0..64 {
        if let Some(r) = ok(lo) {
            best = Some(r);
            break;
        }
        hi = lo;
        lo *= 2.0;
    }
    let Some(mut best) = best else {
        return Err(Error::NonContraction { n: 0 });
    };
    for _ in 0..48 {
        let mid = 0.5 * (lo + hi);
        match ok(mid) {
            Some(r) => {
                lo = mid;
                best = r;
            }
            None => hi = mid,
        }
        if (hi - lo).abs() <= 1e-10 * lo.abs() {
            break;
        }
    }
    Ok((lo, best.0, best.1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoncutoffRun {
    pub certificate: Certificate,
    pub trace: NoncutoffTrace,
    pub seed: UpheavalSeed,
}

pub fn certify_noncutoff(k: &CollisionKernel, b: &AprioriBounds, tau: f64, cfg: &NoncutoffConfig) -> Result<NoncutoffRun> {
    let schedule = Schedule::new(cfg.schedule, k.nu)?;
    let exponent_big_k = exponent_k(k.nu, cfg.schedule.kappa)?;
    if !(cfg.xi > 0.0 && cfg.xi < 1.0) {
        return Err(Error::InvalidRequest(format!("xi = {} outside (0, 1)", cfg.xi)));
    }
    let seed = upheaval_noncutoff(k, b, tau, &cfg.constants)?;
    debug_assert_eq!(seed.regime, Regime::Noncutoff);
    let c_f = seed.damping_constant;
    let cst_damp = match cfg.constants.cst_damp {
        Some(c) => c,
        None => c_f * seed.tau * angular_rate_sup(k)?,
    };
    let ell_b = angular_infimum_ellb(k)?;
    let mut ctx = StepContext {
        kernel: k,
        schedule,
        c_f,
        cst_eps: cfg.constants.cst_eps,
        cst_damp,
        ln_gain: (cfg.constants.cst_spread * ell_b * k.c_phi * seed.tau / 2.0).ln(),
        r0: seed.r0,
        xi: cfg.xi,
        exponent: cfg.xi_exponent_mode.exponent(k.dimension),
    };
    let n_max = cfg.schedule.n_max;
    let kappa_eff = if k.nu == 0.0 { 2.0 } else { cfg.schedule.kappa };
    let (steps, ell) = if k.nu == 0.0 {
        lower_sequence(&ctx, seed.ln_a0, seed.delta0, n_max, kappa_eff)?
    } else {
        let start = seed.ln_a0.min(cfg.schedule.alpha_sched.ln());
        let (ln_base, steps, inf) = self_consistent_base(start, |l| {
            let mut c = ctx.clone();
            c.schedule = Schedule::with_ln_alpha(cfg.schedule, k.nu, l)?;
            lower_sequence(&c, seed.ln_a0, seed.delta0, n_max, kappa_eff)
        })?;
        ctx.schedule = Schedule::with_ln_alpha(cfg.schedule, k.nu, ln_base)?;
        (steps, inf)
    };
    let mut flags = Vec::new();
    if steps.iter().any(|s| s.eps_clamped) {
        flags.push("eps_clamped_at_pi_over_4".to_string());
    }
    if seed.tau_infeasible {
        flags.push("tau_infeasible".to_string());
    }
    if k.nu > 0.0 && ctx.schedule.ln_alpha < cfg.schedule.alpha_sched.ln() {
        flags.push("alpha_sched_lowered".to_string());
    }
    for s in &steps {
        if s.ln_a < ell * kappa_eff.powi(s.n as i32) {
            return Err(Error::NonContraction { n: s.n });
        }
    }
    let cd = c_delta(seed.delta0, cfg.xi);
    if !(cd > 0.0) || !(ell < 0.0) {
        return Err(Error::DegenerateEnvelope("c_delta and alpha must lie in (0, 1)".into()));
    }
    let c2 = kappa_eff * -ell / cd.powf(exponent_big_k);
    let ln_peak = seed.ln_a0.min(0.0);
    let anchors: Vec<(f64, f64)> = steps.iter().map(|s| (s.delta, s.ln_a)).collect();
    let shrink = domination_shrink(&anchors, |s| ln_peak - c2 * s.powf(exponent_big_k)).max(1.0);
    let ln_c1 = ln_peak - shrink.ln();
    let scale = 2f64.powf(exponent_big_k - 1.0);
    let c2p = scale * c2;
    let ln_c1p = ln_c1 - scale * c2 * seed.r0.powf(exponent_big_k);
    let damping_sup = steps.iter().map(|s| s.damping).fold(0.0, f64::max);
    let trace = NoncutoffTrace {
        steps,
        c_delta: cd,
        ln_alpha: ell,
        kappa_eff,
        exponent: exponent_big_k,
        cst_damp,
        branch_flags: flags.clone(),
    };
    let mut prov = Provenance {
        kernel: KernelSummary::from(k),
        bounds: b.clone(),
        cst_spread: 0.0,
        cst_cl: 0.0,
        cst_up: 0.0,
        cst_cs: 0.0,
        cst_q1: 0.0,
        cst_eps: 0.0,
        delta0_rule: "lipschitz".to_string(),
        xi: cfg.xi,
        n_max: cfg.schedule.n_max,
        xi_exponent_mode: cfg.xi_exponent_mode,
        alpha: ell.exp(),
        ln_alpha: ell,
        c_delta: cd,
        ln_ce: -damping_sup,
        domination_shrink: shrink,
        seed: seed.clone(),
        schedule: Some(ScheduleRecord {
            kappa: cfg.schedule.kappa,
            beta: if k.nu == 0.0 { cfg.schedule.beta_geo } else { cfg.schedule.beta },
            alpha_sched: ctx.schedule.ln_alpha.exp(),
            kappa_eff,
            eps0: seed.eps0.unwrap_or(f64::NAN),
            cst_damp,
            damping_sup,
        }),
        branch_flags: flags,
        calibration_ids: cfg.calibration_ids.clone(),
        notes: vec![
            "valid for t >= tau given time-uniform bounds".to_string(),
            format!("C_f = {c_f:e}; ln(2) margin from tau_max = {:e}", LN_2 / seed.tau),
        ],
    };
    prov.record_constants(&cfg.constants);
    let certificate = Certificate::stretched(k.dimension, ln_c1p, c2p, exponent_big_k, seed.tau, seed.r0, prov);
    certificate.validate()?;
    Ok(NoncutoffRun { certificate, trace, seed })
}
