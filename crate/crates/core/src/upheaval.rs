//! Seeds of the cascades: the upheaval ball `B(v̄, δ₀)` with its height, in
//! the cutoff and non-cutoff regimes.

use crate::error::{Error, Result};
use crate::estimates::{loss_bound_cl, moment_factor, q1_bound_with_mass, AprioriBounds};
use crate::geometry::McEstimate;
use crate::kernel::{
    angular_infimum_ellb, ball_volume, bracket, sphere_area, split_kernel, CollisionKernel, PhiForm,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_4, PI};

/// The calibrated universal constants that the estimates leave symbolic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constants {
    pub cst_spread: f64,
    pub cst_cl: f64,
    pub cst_up: f64,
    #[serde(default = "one")]
    pub cst_cs: f64,
    #[serde(default = "one")]
    pub cst_q1: f64,
    #[serde(default = "one")]
    pub cst_eps: f64,
    /// Coefficient of the non-cutoff damping term; derived from the kernel when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cst_damp: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl Constants {
    pub fn unit() -> Self {
        Constants {
            cst_spread: 1.0,
            cst_cl: 1.0,
            cst_up: 1.0,
            cst_cs: 1.0,
            cst_q1: 1.0,
            cst_eps: 1.0,
            cst_damp: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.cst_spread,
            self.cst_cl,
            self.cst_up,
            self.cst_cs,
            self.cst_q1,
            self.cst_eps,
            self.cst_damp.unwrap_or(1.0),
        ];
        if all.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
            return Err(Error::InvalidRequest(
                "all constants must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}

/// How δ₀ is chosen in the cutoff regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeltaRule {
    User {
        delta0: f64,
    },
    /// `δ₀ = R₀ exp(−κ₁ (H + κ₀ E)/ϱ)`, a heuristic.
    Entropy {
        #[serde(default = "one")]
        kappa0: f64,
        #[serde(default = "half")]
        kappa1: f64,
    },
}

fn half() -> f64 {
    0.5
}

impl Default for DeltaRule {
    fn default() -> Self {
        DeltaRule::Entropy {
            kappa0: 1.0,
            kappa1: 0.5,
        }
    }
}

impl DeltaRule {
    pub fn delta0(&self, r0: f64, b: &AprioriBounds) -> f64 {
        match *self {
            DeltaRule::User { delta0 } => delta0,
            DeltaRule::Entropy { kappa0, kappa1 } => {
                r0 * (-kappa1 * (b.h + kappa0 * b.e) / b.rho_min).exp()
            }
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            DeltaRule::User { delta0 } => format!("user(delta0={delta0:?})"),
            DeltaRule::Entropy { kappa0, kappa1 } => {
                format!("entropy(kappa0={kappa0:?}, kappa1={kappa1:?}; heuristic)")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Cutoff,
    Noncutoff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpheavalSeed {
    pub regime: Regime,
    #[serde(rename = "R0")]
    pub r0: f64,
    pub delta0: f64,
    pub eta0: f64,
    pub a0: f64,
    /// `ln η₀` and `ln a₀`; the plain values may underflow.
    pub ln_eta0: f64,
    pub ln_a0: f64,
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_max: Option<f64>,
    /// `C_L` (cutoff) or `C_f` (non-cutoff).
    pub damping_constant: f64,
    #[serde(default)]
    pub tau_infeasible: bool,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl UpheavalSeed {
    pub fn check(&self) -> Result<()> {
        let pos = [self.r0, self.delta0, self.tau];
        if pos.iter().any(|x| !(*x > 0.0) || !x.is_finite())
            || !self.ln_a0.is_finite()
            || !self.ln_eta0.is_finite()
        {
            return Err(Error::InvalidSeed(format!(
                "seed fields must be positive: R0 = {}, delta0 = {}, eta0 = {}, a0 = {}, tau = {}",
                self.r0, self.delta0, self.eta0, self.a0, self.tau
            )));
        }
        if self.ln_a0 > self.ln_eta0 {
            return Err(Error::InvalidSeed(format!(
                "a0 = {} exceeds eta0 = {}",
                self.a0, self.eta0
            )));
        }
        if self.delta0 > self.r0 {
            return Err(Error::InvalidSeed(format!(
                "delta0 = {} exceeds R0 = {}",
                self.delta0, self.r0
            )));
        }
        if self.regime == Regime::Noncutoff {
            match (self.eps0, self.tau_max) {
                (Some(_), Some(tm)) if self.tau <= tm => {}
                _ => {
                    return Err(Error::InvalidSeed(
                        "non-cutoff seed needs eps0 and tau <= tau_max".into(),
                    ))
                }
            }
        }
        Ok(())
    }
}

/// `R₀ = √(2E/ϱ)`.
pub fn localization_radius(b: &AprioriBounds) -> f64 {
    (2.0 * b.e / b.rho_min).sqrt()
}

/// Double-Duhamel damping `e^{−xτ}(1 − e^{−xτ/2})²/(2x²)`, with its `τ²/8` limit at `x = 0`.
pub fn duhamel_factor(x: f64, tau: f64) -> f64 {
    if x == 0.0 {
        return tau * tau / 8.0;
    }
    let m = -(-0.5 * x * tau).exp_m1();
    (-x * tau).exp() * m * m / (2.0 * x * x)
}

/// `η₀ = cst_up ℓ_b c_Φ R₀^{γ−(3N−1)} δ₀^{2N}`.
pub fn upheaval_height(k: &CollisionKernel, ell_b: f64, cst_up: f64, r0: f64, delta0: f64) -> f64 {
    ln_upheaval_height(k, ell_b, cst_up, r0, delta0).exp()
}

pub fn ln_upheaval_height(
    k: &CollisionKernel,
    ell_b: f64,
    cst_up: f64,
    r0: f64,
    delta0: f64,
) -> f64 {
    let n = k.n();
    (cst_up * ell_b * k.c_phi).ln() + (k.gamma - (3.0 * n - 1.0)) * r0.ln() + 2.0 * n * delta0.ln()
}

pub fn ln_duhamel_factor(x: f64, tau: f64) -> f64 {
    if x == 0.0 {
        return 2.0 * tau.ln() - 8f64.ln();
    }
    -x * tau + 2.0 * (-(-0.5 * x * tau).exp_m1()).ln() - 2f64.ln() - 2.0 * x.ln()
}

pub fn upheaval_cutoff(
    k: &CollisionKernel,
    b: &AprioriBounds,
    tau: f64,
    csts: &Constants,
    rule: &DeltaRule,
) -> Result<UpheavalSeed> {
    b.validate()?;
    csts.validate()?;
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidRequest(format!(
            "tau = {tau} must be positive"
        )));
    }
    let c_l = loss_bound_cl(k, b, csts.cst_cl)?;
    let mut notes = Vec::new();
    let mut r0 = localization_radius(b);
    if k.gamma < 0.0 && r0 < 1.0 {
        r0 = 1.0;
        notes.push("R0 raised to 1 for the soft-potential kinetic floor".to_string());
    }
    let delta0 = rule.delta0(r0, b);
    if !(delta0 > 0.0 && delta0 <= r0) {
        return Err(Error::InvalidSeed(format!(
            "delta0 = {delta0} must lie in (0, R0 = {r0}]"
        )));
    }
    let ell = angular_infimum_ellb(k)?;
    let ln_eta0 = ln_upheaval_height(k, ell, csts.cst_up, r0, delta0);
    let x = c_l * bracket(r0 + delta0).powf(k.gamma_plus());
    let ln_a0 = ln_duhamel_factor(x, tau) + ln_eta0;
    notes.push(format!("delta0 rule: {}", rule.describe()));
    let seed = UpheavalSeed {
        regime: Regime::Cutoff,
        r0,
        delta0,
        eta0: ln_eta0.exp(),
        a0: ln_a0.exp(),
        ln_eta0,
        ln_a0,
        tau,
        eps0: None,
        tau_max: None,
        damping_constant: c_l,
        tau_infeasible: false,
        notes,
    };
    seed.check()?;
    Ok(seed)
}

/// Lipschitz seed: `δ₀ = ϱ/(4 |B(0,R₀)| W)` and `η = ϱ/(4 |B(0,R₀)|)`.
pub fn lipschitz_seed_ball(rho: f64, r0: f64, w: f64, dim: usize) -> (f64, f64) {
    let vol = ball_volume(dim) * r0.powi(dim as i32);
    let eta = rho / (4.0 * vol);
    (eta / w, eta)
}

/// `C_f = C_Φ max(cst_cl E_L, cst_cs E_L, cst_q1 ‖f‖ W) ⟨R₀ + δ₀⟩^{γ̃}`, where
/// `E_L` is the loss moment factor and `‖f‖ = E + E′` (plus `L^p` in the
/// very soft case).
pub fn noncutoff_constant(
    k: &CollisionKernel,
    b: &AprioriBounds,
    csts: &Constants,
    r0: f64,
    delta0: f64,
) -> Result<f64> {
    let w = b.w.ok_or(Error::MissingWBound)?;
    let e_l = moment_factor(k, b)?;
    let q1 = q1_bound_with_mass(k, 1.0, b, w, csts.cst_q1)? / k.big_c_phi;
    let base = (csts.cst_cl * e_l).max(csts.cst_cs * e_l).max(q1);
    Ok(k.big_c_phi * base * bracket(r0 + delta0).powf(k.gamma_tilde()))
}

/// Largest ε ≤ `eps_max` with `C_f m_{b^R_ε} ≤ target`, by bisection in ln ε.
pub fn solve_eps0(k: &CollisionKernel, c_f: f64, target: f64, eps_max: f64) -> Result<f64> {
    let g = |eps: f64| -> Result<f64> { Ok(c_f * split_kernel(k, eps)?.1) };
    if g(eps_max)? <= target {
        return Ok(eps_max);
    }
    let mut lo = 1e-100f64.ln();
    let mut hi = eps_max.ln();
    if g(lo.exp())? > target {
        return Err(Error::NoAdmissibleEps);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid.exp())? <= target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Ok(lo.exp())
}

pub const EPS_SEARCH_MAX: f64 = FRAC_PI_4 * (1.0 - 1e-9);

pub fn upheaval_noncutoff(
    k: &CollisionKernel,
    b: &AprioriBounds,
    tau_request: f64,
    csts: &Constants,
) -> Result<UpheavalSeed> {
    b.validate()?;
    csts.validate()?;
    if !(k.nu >= 0.0 && k.nu < 2.0) {
        return Err(Error::InvalidKernel(format!(
            "non-cutoff regime needs nu in [0, 2), got {}",
            k.nu
        )));
    }
    if !(tau_request > 0.0) {
        return Err(Error::InvalidRequest(format!(
            "tau = {tau_request} must be positive"
        )));
    }
    let w = b.w.ok_or(Error::MissingWBound)?;
    if !(w > 0.0) {
        return Err(Error::InvalidBounds(
            "W must be positive for the Lipschitz seed".into(),
        ));
    }
    let mut notes = Vec::new();
    let r0 = localization_radius(b);
    let (mut delta0, eta) = lipschitz_seed_ball(b.rho_min, r0, w, k.dimension);
    if delta0 > r0 {
        notes.push(format!("delta0 = {delta0:e} clamped to R0"));
        delta0 = r0;
    }
    let c_f = noncutoff_constant(k, b, csts, r0, delta0)?;
    let eps0 = solve_eps0(k, c_f, eta / 4.0, EPS_SEARCH_MAX)?;
    let (n_s, m_r) = split_kernel(k, eps0)?;
    let tau_max = std::f64::consts::LN_2 / (c_f * (m_r + n_s));
    let tau = tau_request.min(tau_max).min(1.0);
    let tau_infeasible = tau_request > tau_max;
    if tau_infeasible {
        notes.push(format!(
            "requested tau = {tau_request:?} exceeds tau_max = {tau_max:?}; clamped"
        ));
    } else if tau_request > 1.0 {
        notes.push("tau clamped to 1".to_string());
    }
    let seed = UpheavalSeed {
        regime: Regime::Noncutoff,
        r0,
        delta0,
        eta0: eta / 4.0,
        a0: eta / 4.0,
        ln_eta0: (eta / 4.0).ln(),
        ln_a0: (eta / 4.0).ln(),
        tau,
        eps0: Some(eps0),
        tau_max: Some(tau_max),
        damping_constant: c_f,
        tau_infeasible,
        notes,
    };
    seed.check()?;
    // post-hoc re-check of the two smallness conditions
    if c_f * m_r > eta / 4.0 * (1.0 + 1e-12)
        || (-c_f * (m_r + n_s) * tau).exp() < 0.5 * (1.0 - 1e-12)
    {
        return Err(Error::InvalidSeed(
            "non-cutoff smallness conditions fail at the returned values".into(),
        ));
    }
    Ok(seed)
}

/// Maxwellian fixture `ρ (2πT)^{−N/2} e^{−|v|²/(2T)}` for the `cst_up` calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxwellianFixture {
    pub rho: f64,
    pub temperature: f64,
}

impl MaxwellianFixture {
    pub fn value(&self, n: usize, v2: f64) -> f64 {
        self.rho
            * (2.0 * PI * self.temperature).powf(-(n as f64) / 2.0)
            * (-v2 / (2.0 * self.temperature)).exp()
    }

    /// Exact functionals: `E = ρ(1 + N T)` and `H = max(∫ f ln f, 0)`.
    pub fn bounds(&self, n: usize) -> AprioriBounds {
        let nf = n as f64;
        let flogf = self.rho * self.rho.ln()
            - self.rho * nf / 2.0 * ((2.0 * PI * self.temperature).ln() + 1.0);
        let mut b = AprioriBounds::new(self.rho, self.rho * (1.0 + nf * self.temperature));
        b.h = flogf.max(0.0);
        b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpheavalRatio {
    pub fixture: MaxwellianFixture,
    #[serde(rename = "R0")]
    pub r0: f64,
    pub delta0: f64,
    pub triple: McEstimate,
    pub formula: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpheavalCalibration {
    pub cst_up: f64,
    pub outer_samples: usize,
    pub inner_samples: usize,
    pub seed: u64,
    pub ratios: Vec<UpheavalRatio>,
}

pub fn default_upheaval_fixtures() -> Vec<MaxwellianFixture> {
    vec![
        MaxwellianFixture {
            rho: 1.0,
            temperature: 1.0,
        },
        MaxwellianFixture {
            rho: 1.0,
            temperature: 0.5,
        },
        MaxwellianFixture {
            rho: 0.5,
            temperature: 2.0,
        },
    ]
}

/// Smallest ratio, over the fixtures and a few points of `B(0, δ₀)`, of
/// `Q⁺(Q⁺(g^{R₀}, g^{R₀}), g^{R₀})` (less two standard errors) to
/// `ℓ_b c_Φ R₀^{γ−(3N−1)} δ₀^{2N}`, divided by 1.5.
pub fn calibrate_upheaval_cst(
    k: &CollisionKernel,
    fixtures: &[MaxwellianFixture],
    rule: &DeltaRule,
    outer: usize,
    inner: usize,
    seed: u64,
) -> Result<UpheavalCalibration> {
    if !k.is_cutoff() {
        return Err(Error::NonIntegrableAngular { nu: k.nu });
    }
    if fixtures.is_empty() {
        return Err(Error::DegenerateSample("empty fixture list".into()));
    }
    if outer < 1000 || inner < 16 {
        return Err(Error::InvalidRequest(
            "upheaval calibration needs outer >= 1000 and inner >= 16 samples".into(),
        ));
    }
    let ell = angular_infimum_ellb(k)?;
    let n = k.dimension;
    let mut ratios = Vec::new();
    for (fi, fx) in fixtures.iter().enumerate() {
        let b = fx.bounds(n);
        let mut r0 = localization_radius(&b);
        if k.gamma < 0.0 {
            r0 = r0.max(1.0);
        }
        let delta0 = rule.delta0(r0, &b);
        let formula = upheaval_height(k, ell, 1.0, r0, delta0);
        if !(formula > 0.0) || !formula.is_finite() {
            return Err(Error::DegenerateSample(format!(
                "fixture {fi}: formula denominator is {formula}"
            )));
        }
        let mut worst: Option<McEstimate> = None;
        for (pi, axis) in [None, Some(n - 1), Some(0)].iter().enumerate() {
            let mut v = vec![0.0; n];
            if let Some(a) = axis {
                v[*a] = delta0;
            }
            let s = seed ^ ((fi as u64) << 32) ^ (pi as u64);
            let est = triple_gain(k, fx, r0, &v, outer, inner, s);
            if est.rel_se() > 0.05 {
                return Err(Error::InsufficientSamples {
                    rel_se: est.rel_se(),
                });
            }
            if worst.map_or(true, |w| {
                est.value - 2.0 * est.std_error < w.value - 2.0 * w.std_error
            }) {
                worst = Some(est);
            }
        }
        let t = worst.expect("three points evaluated");
        ratios.push(UpheavalRatio {
            fixture: *fx,
            r0,
            delta0,
            triple: t,
            formula,
            ratio: (t.value - 2.0 * t.std_error) / formula,
        });
    }
    let min = ratios.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::DegenerateSample(
            "nonpositive triple gain ratio".into(),
        ));
    }
    Ok(UpheavalCalibration {
        cst_up: min / 1.5,
        outer_samples: outer,
        inner_samples: inner,
        seed,
        ratios,
    })
}

fn unit(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    loop {
        let mut s = 0.0;
        for c in out.iter_mut() {
            *c = rng.sample(StandardNormal);
            s += *c * *c;
        }
        if s > 1e-24 {
            let inv = 1.0 / s.sqrt();
            out.iter_mut().for_each(|c| *c *= inv);
            return;
        }
    }
}

/// Monte Carlo `Q⁺(h, g)(v)` where `h` (the first slot, taken at `v′_*`) is
/// supported in `B(0, rh)` and `g` (taken at `v′`) in `B(0, rg)`.
fn gain_mc<H: FnMut(&[f64], &mut ChaCha8Rng) -> f64, G: Fn(&[f64]) -> f64>(
    k: &CollisionKernel,
    mut h: H,
    g: G,
    rh: f64,
    rg: f64,
    v: &[f64],
    pairs: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, f64) {
    let n = v.len();
    let v2: f64 = v.iter().map(|x| x * x).sum();
    let rho2 = rh * rh + rg * rg - v2;
    if rho2 <= 0.0 {
        return (0.0, 0.0);
    }
    let rho = rho2.sqrt();
    let mut vs = [0.0; 8];
    let mut sig = [0.0; 8];
    let mut vp = [0.0; 8];
    let mut vq = [0.0; 8];
    let (mut s, mut s2) = (0.0, 0.0);
    for i in 0..pairs {
        let u = (i as f64 + rng.gen::<f64>()) / pairs as f64;
        let rad = rho * u.powf(1.0 / n as f64);
        unit(rng, &mut vs[..n]);
        vs[..n].iter_mut().for_each(|c| *c *= rad);
        unit(rng, &mut sig[..n]);
        let rel = (0..n).map(|j| (v[j] - vs[j]).powi(2)).sum::<f64>().sqrt();
        if rel == 0.0 {
            continue;
        }
        let mut pair = 0.0;
        for sign in [1.0, -1.0] {
            let mut dot = 0.0;
            for j in 0..n {
                let mid = 0.5 * (v[j] + vs[j]);
                vp[j] = mid + 0.5 * rel * sign * sig[j];
                vq[j] = mid - 0.5 * rel * sign * sig[j];
                dot += (v[j] - vs[j]) * sign * sig[j];
            }
            let gp = g(&vp[..n]);
            if gp == 0.0 {
                continue;
            }
            let hq = h(&vq[..n], rng);
            if hq == 0.0 {
                continue;
            }
            let theta = (dot / rel).clamp(-1.0, 1.0).acos();
            pair += k.phi(rel, PhiForm::Lower) * k.b(theta) * gp * hq;
        }
        let x = 0.5 * pair;
        s += x;
        s2 += x * x;
    }
    let m = s / pairs as f64;
    let var = (s2 / pairs as f64 - m * m).max(0.0);
    let scale = ball_volume(n) * rho.powi(n as i32) * sphere_area(n - 1);
    (scale * m, scale * (var / pairs as f64).sqrt())
}

/// Nested Monte Carlo for `Q⁺(Q⁺(g^{R₀}, g^{R₀}), g^{R₀})(v)`.
pub fn triple_gain(
    k: &CollisionKernel,
    fx: &MaxwellianFixture,
    r0: f64,
    v: &[f64],
    outer: usize,
    inner: usize,
    seed: u64,
) -> McEstimate {
    let n = k.dimension;
    let r02 = r0 * r0;
    let g = move |w: &[f64]| {
        let w2: f64 = w.iter().map(|x| x * x).sum();
        if w2 <= r02 {
            fx.value(n, w2)
        } else {
            0.0
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inner_h = |w: &[f64], rng: &mut ChaCha8Rng| {
        let mut sub = ChaCha8Rng::seed_from_u64(rng.gen());
        gain_mc(
            k,
            |x: &[f64], _: &mut ChaCha8Rng| g(x),
            g,
            r0,
            r0,
            w,
            inner,
            &mut sub,
        )
        .0
    };
    let (value, se) = gain_mc(k, inner_h, g, 2f64.sqrt() * r0, r0, v, outer, &mut rng);
    McEstimate {
        value,
        std_error: se,
        samples: outer * inner,
    }
}
