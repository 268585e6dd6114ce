//! Collision kernels `B = Φ(|z|)·b(cos θ)` and their angular integrals.

use crate::error::{Error, Result};
use crate::quadrature::{integrate, integrate_log, integrate_power_endpoint};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::sync::Arc;

/// Default relative tolerance of the angular quadratures.
pub const ANGULAR_TOL: f64 = 1e-10;
/// Points used to certify the angular infimum.
pub const INFIMUM_POINTS: usize = 4096;

/// Surface measure of the unit sphere `S^k ⊂ R^{k+1}`.
pub fn sphere_area(k: usize) -> f64 {
    match k {
        0 => 2.0,
        1 => 2.0 * PI,
        _ => 2.0 * PI / (k as f64 - 1.0) * sphere_area(k - 2),
    }
}

/// Volume of the unit ball in `R^n`.
pub fn ball_volume(n: usize) -> f64 {
    if n == 0 {
        1.0
    } else {
        sphere_area(n - 1) / n as f64
    }
}

/// Japanese bracket `⟨x⟩ = √(1 + x²)`.
pub fn bracket(x: f64) -> f64 {
    (1.0 + x * x).sqrt()
}

/// Angular part `θ ↦ b(cos θ)`.
#[derive(Clone)]
pub enum AngularProfile {
    /// `b ≡ value`.
    Constant(f64),
    /// `b₀ θ^{−1−ν} (2 sin(θ/2))^{−(N−2)}`: behaves like `b₀ θ^{−1−ν}/sin^{N−2}θ`
    /// near 0 and stays finite at θ = π.
    InversePower,
    /// Linear interpolation of tabulated `(θ, b)` pairs, constant beyond the ends.
    Tabulated { theta: Vec<f64>, value: Vec<f64> },
    /// Arbitrary profile; its small-angle behaviour is taken from the kernel's ν.
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for AngularProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AngularProfile::Constant(c) => write!(f, "Constant({c})"),
            AngularProfile::InversePower => write!(f, "InversePower"),
            AngularProfile::Tabulated { theta, .. } => {
                write!(f, "Tabulated({} points)", theta.len())
            }
            AngularProfile::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl AngularProfile {
    /// Parses a two-column `θ b` table; `#` starts a comment.
    pub fn from_table(text: &str) -> Result<Self> {
        let mut theta = Vec::new();
        let mut value = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|_| {
                    Error::InvalidKernel(format!("table line {}: cannot parse '{s}'", i + 1))
                })
            };
            if cols.len() != 2 {
                return Err(Error::InvalidKernel(format!(
                    "table line {}: expected two columns",
                    i + 1
                )));
            }
            theta.push(parse(cols[0])?);
            value.push(parse(cols[1])?);
        }
        if theta.len() < 2 {
            return Err(Error::InvalidKernel("table needs at least two rows".into()));
        }
        if theta.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidKernel(
                "table angles must be strictly increasing".into(),
            ));
        }
        Ok(AngularProfile::Tabulated { theta, value })
    }
}

/// Serializable description of a kernel, as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub dimension: usize,
    pub gamma: f64,
    pub nu: f64,
    pub b0: f64,
    pub c_phi: f64,
    #[serde(rename = "C_phi")]
    pub big_c_phi: f64,
    #[serde(default)]
    pub mollified: bool,
    /// `constant`, `inverse_power`, or `table:<path>`.
    pub profile: String,
    /// Value of the constant profile (defaults to `b0`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_value: Option<f64>,
    /// Lipschitz constant of the profile on [π/4, 3π/4], if known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CollisionKernel {
    pub dimension: usize,
    pub gamma: f64,
    pub nu: f64,
    pub b0: f64,
    pub c_phi: f64,
    pub big_c_phi: f64,
    pub mollified: bool,
    pub profile: AngularProfile,
    pub lipschitz: Option<f64>,
    pub tol: f64,
}

/// Which side of the kinetic bound to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhiForm {
    Lower,
    Upper,
}

impl CollisionKernel {
    pub fn new(
        dimension: usize,
        gamma: f64,
        nu: f64,
        b0: f64,
        c_phi: f64,
        big_c_phi: f64,
        mollified: bool,
        profile: AngularProfile,
    ) -> Result<Self> {
        let k = CollisionKernel {
            dimension,
            gamma,
            nu,
            b0,
            c_phi,
            big_c_phi,
            mollified,
            profile,
            lipschitz: None,
            tol: ANGULAR_TOL,
        };
        k.validate()?;
        Ok(k)
    }

    /// Hard spheres in dimension `n`: `Φ(z) = |z|`, `b ≡ 1`.
    pub fn hard_spheres(n: usize) -> Self {
        Self::new(
            n,
            1.0,
            1.0 - n as f64,
            1.0,
            1.0,
            1.0,
            false,
            AngularProfile::Constant(1.0),
        )
        .expect("hard-sphere kernel is valid")
    }

    /// Maxwell molecules `Φ ≡ 1` with constant `b` normalised to `n_b = 1`.
    pub fn maxwell_molecules(n: usize) -> Self {
        let b = 1.0 / sphere_area(n - 1);
        Self::new(
            n,
            0.0,
            1.0 - n as f64,
            b,
            1.0,
            1.0,
            false,
            AngularProfile::Constant(b),
        )
        .expect("Maxwell-molecule kernel is valid")
    }

    /// Inverse-power profile with singularity exponent ν and kinetic exponent γ.
    pub fn inverse_power(n: usize, gamma: f64, nu: f64, b0: f64) -> Result<Self> {
        Self::new(
            n,
            gamma,
            nu,
            b0,
            1.0,
            1.0,
            false,
            AngularProfile::InversePower,
        )
    }

    pub fn from_spec(spec: &KernelSpec, base_dir: Option<&std::path::Path>) -> Result<Self> {
        let profile = match spec.profile.as_str() {
            "constant" => AngularProfile::Constant(spec.profile_value.unwrap_or(spec.b0)),
            "inverse_power" => AngularProfile::InversePower,
            p if p.starts_with("table:") => {
                let mut path = std::path::PathBuf::from(&p[6..]);
                if let (Some(dir), true) = (base_dir, path.is_relative()) {
                    path = dir.join(path);
                }
                let text = std::fs::read_to_string(&path).map_err(|e| {
                    Error::InvalidKernel(format!("cannot read {}: {e}", path.display()))
                })?;
                AngularProfile::from_table(&text)?
            }
            other => return Err(Error::InvalidKernel(format!("unknown profile '{other}'"))),
        };
        let mut k = Self::new(
            spec.dimension,
            spec.gamma,
            spec.nu,
            spec.b0,
            spec.c_phi,
            spec.big_c_phi,
            spec.mollified,
            profile,
        )?;
        k.lipschitz = spec.lipschitz;
        Ok(k)
    }

    fn validate(&self) -> Result<()> {
        let n = self.dimension as f64;
        let bad = |m: &str| Err(Error::InvalidKernel(m.to_string()));
        if self.dimension < 2 {
            return bad("dimension must be at least 2");
        }
        if !(self.gamma > -n && self.gamma <= 1.0) {
            return bad("gamma must lie in (-N, 1]");
        }
        if !(self.nu < 2.0) {
            return bad("nu must be below 2");
        }
        if !(self.b0 > 0.0) {
            return bad("b0 must be positive");
        }
        if !(self.c_phi > 0.0 && self.c_phi <= self.big_c_phi && self.big_c_phi.is_finite()) {
            return bad("need 0 < c_phi <= C_phi");
        }
        if let AngularProfile::Tabulated { value, .. } = &self.profile {
            if value.iter().any(|v| !(*v >= 0.0)) {
                return bad("tabulated profile values must be nonnegative");
            }
        }
        let probes = 257;
        for i in 1..probes {
            let th = PI * i as f64 / probes as f64;
            let b = self.b(th);
            let core = (FRAC_PI_4..=3.0 * FRAC_PI_4).contains(&th);
            if !b.is_finite() || b < 0.0 || (core && b == 0.0) {
                return bad(&format!("angular profile must be nonnegative, and positive on [pi/4, 3pi/4]; b({th:.4}) = {b}"));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> f64 {
        self.dimension as f64
    }

    pub fn gamma_plus(&self) -> f64 {
        self.gamma.max(0.0)
    }

    pub fn gamma_tilde(&self) -> f64 {
        (2.0 + self.gamma).max(0.0)
    }

    pub fn is_cutoff(&self) -> bool {
        self.nu < 0.0
    }

    /// Whether the L^p branch of the loss estimate applies (soft, non-mollified).
    pub fn needs_lp(&self) -> bool {
        self.gamma < 0.0 && !self.mollified
    }

    /// `b(cos θ)` for θ ∈ (0, π].
    pub fn b(&self, theta: f64) -> f64 {
        match &self.profile {
            AngularProfile::Constant(c) => *c,
            AngularProfile::InversePower => {
                let chord = 2.0 * (0.5 * theta).sin();
                self.b0 * theta.powf(-1.0 - self.nu) * chord.powi(2 - self.dimension as i32)
            }
            AngularProfile::Tabulated { theta: t, value } => interp(t, value, theta),
            AngularProfile::Custom(f) => f(theta),
        }
    }

    /// Kinetic factor Φ at relative speed `z`, lower or upper form.
    pub fn phi(&self, z: f64, form: PhiForm) -> f64 {
        let c = match form {
            PhiForm::Lower => self.c_phi,
            PhiForm::Upper => self.big_c_phi,
        };
        if self.gamma == 0.0 {
            return c;
        }
        let z = if self.mollified { z.max(1.0) } else { z };
        c * z.powf(self.gamma)
    }

    /// Exponent `p` with `b(θ) sin^{N−2}θ ~ θ^p` as θ → 0, for choosing substitutions.
    fn small_angle_exponent(&self) -> f64 {
        match self.profile {
            AngularProfile::Constant(_) => self.n() - 2.0,
            AngularProfile::Tabulated { .. } => self.n() - 2.0,
            AngularProfile::InversePower | AngularProfile::Custom(_) => -1.0 - self.nu,
        }
    }

    fn weight(&self, theta: f64) -> f64 {
        if let AngularProfile::InversePower = self.profile {
            // ratio form keeps tiny angles finite
            let ratio = theta.sin() / (2.0 * (0.5 * theta).sin());
            return self.b0 * theta.powf(-1.0 - self.nu) * ratio.powi(self.dimension as i32 - 2);
        }
        self.b(theta) * theta.sin().powi(self.dimension as i32 - 2)
    }

    fn sphere_factor(&self) -> f64 {
        sphere_area(self.dimension - 2)
    }

    /// Ratio `b(θ) sin^{N−2}θ θ^{1+ν} / b₀` at a small angle; tends to 1 for
    /// profiles matching the assumed singularity.
    pub fn asymptotic_ratio(&self, theta: f64) -> f64 {
        self.weight(theta) * theta.powf(1.0 + self.nu) / self.b0
    }

    /// Angles in (0, π) outside [π/4, 3π/4] where the sampled profile is not
    /// positive. Such profiles are accepted but worth flagging.
    pub fn positivity_flags(&self) -> Vec<f64> {
        (1..1024)
            .map(|i| PI * i as f64 / 1024.0)
            .filter(|&t| !(FRAC_PI_4..=3.0 * FRAC_PI_4).contains(&t) && !(self.b(t) > 0.0))
            .collect()
    }
}

fn interp(t: &[f64], v: &[f64], x: f64) -> f64 {
    if x <= t[0] {
        return v[0];
    }
    if x >= t[t.len() - 1] {
        return v[v.len() - 1];
    }
    let i = t.partition_point(|&ti| ti <= x) - 1;
    let w = (x - t[i]) / (t[i + 1] - t[i]);
    v[i] * (1.0 - w) + v[i + 1] * w
}

/// `n_b = |S^{N−2}| ∫₀^π b(cos θ) sin^{N−2}θ dθ`, finite only for cutoff kernels.
pub fn angular_mass_nb(k: &CollisionKernel) -> Result<f64> {
    if !k.is_cutoff() {
        return Err(Error::NonIntegrableAngular { nu: k.nu });
    }
    let s = k.small_angle_exponent() + 1.0;
    let head = integrate_power_endpoint(|t| k.weight(t), FRAC_PI_2, s, k.tol, 0.0)?;
    let tail = integrate(|t| k.weight(t), FRAC_PI_2, PI, k.tol, 0.0)?;
    Ok(k.sphere_factor() * (head.value + tail.value))
}

fn transfer_weight(k: &CollisionKernel, t: f64) -> f64 {
    // 1 − cos θ written without cancellation.
    let h = (0.5 * t).sin();
    k.weight(t) * 2.0 * h * h
}

/// `m_b = |S^{N−2}| ∫₀^π b(cos θ)(1 − cos θ) sin^{N−2}θ dθ`, finite for ν < 2.
pub fn momentum_transfer_mb(k: &CollisionKernel) -> Result<f64> {
    let s = k.small_angle_exponent() + 3.0;
    let head = integrate_power_endpoint(|t| transfer_weight(k, t), FRAC_PI_2, s, k.tol, 0.0)?;
    let tail = integrate(|t| transfer_weight(k, t), FRAC_PI_2, PI, k.tol, 0.0)?;
    Ok(k.sphere_factor() * (head.value + tail.value))
}

/// Certified lower bound for `ℓ_b = inf_{[π/4, 3π/4]} b`.
///
/// Samples the profile on a uniform grid and subtracts the Lipschitz margin
/// `L·h/2` from each panel's mean; `L` defaults to twice the largest sampled
/// difference quotient.
pub fn angular_infimum_ellb(k: &CollisionKernel) -> Result<f64> {
    let n = INFIMUM_POINTS;
    let (a, b) = (FRAC_PI_4, 3.0 * FRAC_PI_4);
    let h = (b - a) / (n - 1) as f64;
    let vals: Vec<f64> = (0..n).map(|i| k.b(a + h * i as f64)).collect();
    let sampled = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(sampled > 0.0) {
        return Err(Error::NonPositiveInfimum { bound: sampled });
    }
    let lip = k.lipschitz.unwrap_or_else(|| {
        2.0 * vals
            .windows(2)
            .map(|w| ((w[1] - w[0]) / h).abs())
            .fold(0.0, f64::max)
    });
    let panel = vals
        .windows(2)
        .map(|w| 0.5 * (w[0] + w[1]) - 0.5 * lip * h)
        .fold(f64::INFINITY, f64::min);
    let bound = panel.min(sampled);
    if !(bound > 0.0) {
        return Err(Error::NonPositiveInfimum { bound });
    }
    Ok(bound)
}

/// Angular mass of `b·1_{θ≥ε}` and momentum transfer of `b·1_{θ≤ε}`.
pub fn split_kernel(k: &CollisionKernel, eps: f64) -> Result<(f64, f64)> {
    if !(eps > 0.0 && eps < FRAC_PI_4) {
        return Err(Error::InvalidEps { eps });
    }
    if !(k.nu >= 0.0 && k.nu < 2.0) {
        return Err(Error::InvalidKernel(format!(
            "split_kernel needs nu in [0, 2), got {}",
            k.nu
        )));
    }
    let n_head = integrate_log(|t| k.weight(t), eps, FRAC_PI_2, k.tol, 0.0)?;
    let n_tail = integrate(|t| k.weight(t), FRAC_PI_2, PI, k.tol, 0.0)?;
    let s = k.small_angle_exponent() + 3.0;
    let m = integrate_power_endpoint(|t| transfer_weight(k, t), eps, s, k.tol, 0.0)?;
    let f = k.sphere_factor();
    Ok((f * (n_head.value + n_tail.value), f * m.value))
}

/// Leading-order small-ε forms of [`split_kernel`], normalised by `|S^{N−2}|`:
/// `n ~ (b₀/ν) ε^{−ν}` (or `b₀ |ln ε|` at ν = 0) and `m ~ b₀ ε^{2−ν} / (2(2−ν))`.
///
/// The factor 1/2 in `m` comes from `1 − cos θ ~ θ²/2`.
pub fn split_asymptotics(k: &CollisionKernel, eps: f64) -> (f64, f64) {
    let f = k.sphere_factor();
    let n = if k.nu == 0.0 {
        k.b0 * eps.ln().abs()
    } else {
        k.b0 / k.nu * eps.powf(-k.nu)
    };
    let m = k.b0 * eps.powf(2.0 - k.nu) / (2.0 * (2.0 - k.nu));
    (f * n, f * m)
}

/// Momentum transfer of the cutoff part `b·1_{θ≥ε}`; complements `m_bR`.
pub fn momentum_transfer_cutoff_part(k: &CollisionKernel, eps: f64) -> Result<f64> {
    let head = integrate_log(|t| transfer_weight(k, t), eps, FRAC_PI_2, k.tol, 0.0)?;
    let tail = integrate(|t| transfer_weight(k, t), FRAC_PI_2, PI, k.tol, 0.0)?;
    Ok(k.sphere_factor() * (head.value + tail.value))
}
