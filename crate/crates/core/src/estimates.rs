//! Hydrodynamic functionals, a priori bounds, and the L^∞ estimates on the
//! loss term, the cancellation operator and the grazing part Q¹.

use crate::error::{Error, Result};
use crate::grid::GridDistribution;
use crate::kernel::{angular_mass_nb, bracket, split_kernel, CollisionKernel, PhiForm};
use serde::{Deserialize, Serialize};

/// Uniform bounds on the solution: `ϱ_f`, `E_f`, `E′_f`, `H_f`, `L^p_f`, `W_f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AprioriBounds {
    pub rho_min: f64,
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "Eprime", default)]
    pub eprime: f64,
    #[serde(rename = "H", default)]
    pub h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lp_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_exponent: Option<f64>,
    #[serde(rename = "W", default, skip_serializing_if = "Option::is_none")]
    pub w: Option<f64>,
}

impl AprioriBounds {
    pub fn new(rho_min: f64, e: f64) -> Self {
        AprioriBounds {
            rho_min,
            e,
            eprime: 0.0,
            h: 0.0,
            lp_value: None,
            p_exponent: None,
            w: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho_min > 0.0) {
            return Err(Error::InvalidBounds(format!(
                "rho_min = {} must be positive",
                self.rho_min
            )));
        }
        if !(self.e >= self.rho_min) || !self.e.is_finite() {
            return Err(Error::InvalidBounds(format!(
                "E = {} must be finite and at least rho_min",
                self.e
            )));
        }
        let fields = [
            self.eprime,
            self.h,
            self.lp_value.unwrap_or(0.0),
            self.w.unwrap_or(0.0),
        ];
        if fields.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidBounds(
                "bounds must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Grid values of the local functionals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Functionals {
    pub rho: f64,
    pub e: f64,
    pub eprime: f64,
    pub h: f64,
    pub lp: Option<f64>,
    pub w: f64,
}

/// Midpoint-rule functionals of `f`; `eprime` uses the weight `|v|^{γ̃}` and
/// `w` is the finite-difference surrogate of the W^{2,∞} norm.
pub fn local_functionals(f: &GridDistribution, gamma_tilde: f64, p: Option<f64>) -> Functionals {
    let dv = f.cell_volume();
    let mut v = vec![0.0; f.dimension];
    let (mut rho, mut e, mut ep, mut h, mut lp) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &x) in f.values.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        f.node_into(i, &mut v);
        let r2: f64 = v.iter().map(|c| c * c).sum();
        rho += x;
        e += x * r2;
        ep += x * r2.powf(0.5 * gamma_tilde);
        h -= x * x.ln();
        if let Some(p) = p {
            lp += x.powf(p);
        }
    }
    Functionals {
        rho: rho * dv,
        e: e * dv,
        eprime: ep * dv,
        h: h * dv,
        lp: p.map(|p| (lp * dv).powf(1.0 / p)),
        w: w_surrogate(f),
    }
}

fn w_surrogate(f: &GridDistribution) -> f64 {
    let n = f.dimension;
    let m = f.m;
    let h = f.spacing();
    let vals = &f.values;
    let mut w = vals.iter().cloned().fold(0.0, f64::max);
    if m < 3 {
        return w;
    }
    let mut idx = vec![0usize; n];
    for i in 0..vals.len() {
        let mut r = i;
        for d in (0..n).rev() {
            idx[d] = r % m;
            r /= m;
        }
        if idx.iter().any(|&c| c == 0 || c == m - 1) {
            continue;
        }
        for a in 0..n {
            let sa = f.stride(a);
            let d1 = (vals[i + sa] - vals[i - sa]) / (2.0 * h);
            let d2 = (vals[i + sa] - 2.0 * vals[i] + vals[i - sa]) / (h * h);
            w = w.max(d1.abs()).max(d2.abs());
            for b in a + 1..n {
                let sb = f.stride(b);
                let mixed = (vals[i + sa + sb] - vals[i + sa - sb] - vals[i - sa + sb]
                    + vals[i - sa - sb])
                    / (4.0 * h * h);
                w = w.max(mixed.abs());
            }
        }
    }
    w
}

/// Which branch of the loss estimate is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossCase {
    /// γ ≥ 0 or mollified: `‖g‖_{L¹_2}` suffices.
    Moment,
    /// γ < 0, non-mollified: the L^p norm enters.
    MomentPlusLp,
}

pub fn loss_case(k: &CollisionKernel) -> LossCase {
    if k.needs_lp() {
        LossCase::MomentPlusLp
    } else {
        LossCase::Moment
    }
}

/// Moment factor `E` (plus `L^p` in the soft case), checking `p > N/(N+γ)`.
pub fn moment_factor(k: &CollisionKernel, b: &AprioriBounds) -> Result<f64> {
    match loss_case(k) {
        LossCase::Moment => Ok(b.e),
        LossCase::MomentPlusLp => {
            let threshold = k.n() / (k.n() + k.gamma);
            match (b.lp_value, b.p_exponent) {
                (Some(l), Some(p)) if p > threshold => Ok(b.e + l),
                _ => Err(Error::MissingLpBound { threshold }),
            }
        }
    }
}

/// `C_L = cst·n_b·C_Φ·E` (or `cst·n_b·C_Φ·(E + L^p)`), so that
/// `L[g](v) ≤ C_L ⟨v⟩^{γ⁺}`.
pub fn loss_bound_cl(k: &CollisionKernel, b: &AprioriBounds, cst: f64) -> Result<f64> {
    loss_bound_cl_with_mass(k, angular_mass_nb(k)?, b, cst)
}

/// As [`loss_bound_cl`] with a caller-supplied angular mass (e.g. `n_{b^S_ε}`).
pub fn loss_bound_cl_with_mass(
    k: &CollisionKernel,
    n_b: f64,
    b: &AprioriBounds,
    cst: f64,
) -> Result<f64> {
    Ok(cst * n_b * k.big_c_phi * moment_factor(k, b)?)
}

/// `C_S = cst·m_{b^R_ε}·C_Φ·E` (soft case adds `L^p`).
pub fn s_bound_cs(k: &CollisionKernel, b: &AprioriBounds, eps: f64, cst: f64) -> Result<f64> {
    let (_, m_r) = split_kernel(k, eps)?;
    Ok(cst * m_r * k.big_c_phi * moment_factor(k, b)?)
}

/// Coefficient `C` with `|Q¹_ε(f,f)(v)| ≤ C ⟨v⟩^{γ̃}`, using `‖f‖_{L¹_γ̃} ≤ E + E′`.
pub fn q1_bound_coefficient(
    k: &CollisionKernel,
    b: &AprioriBounds,
    eps: f64,
    cst: f64,
) -> Result<f64> {
    let w = b.w.ok_or(Error::MissingWBound)?;
    let (_, m_r) = split_kernel(k, eps)?;
    q1_bound_with_mass(k, m_r, b, w, cst)
}

pub fn q1_bound_with_mass(
    k: &CollisionKernel,
    m_r: f64,
    b: &AprioriBounds,
    w: f64,
    cst: f64,
) -> Result<f64> {
    let mut norm = b.e + b.eprime;
    if k.gamma + 2.0 < 0.0 && !k.mollified {
        let threshold = k.n() / (k.n() + k.gamma + 2.0);
        match (b.lp_value, b.p_exponent) {
            (Some(l), Some(p)) if p > threshold => norm += l,
            _ => return Err(Error::MissingLpBound { threshold }),
        }
    }
    Ok(cst * m_r * k.big_c_phi * norm * w)
}

/// The two L^p-exponent requirements and which one binds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LpReport {
    pub loss_threshold: Option<f64>,
    pub q1_threshold: Option<f64>,
    pub p: Option<f64>,
    pub binding: Option<f64>,
    pub satisfied: bool,
}

pub fn lp_exponent_report(k: &CollisionKernel, b: &AprioriBounds) -> LpReport {
    let n = k.n();
    let loss = k.needs_lp().then(|| n / (n + k.gamma));
    let q1 = (k.nu >= 0.0 && k.gamma + 2.0 < 0.0 && !k.mollified).then(|| n / (n + k.gamma + 2.0));
    let binding = match (loss, q1) {
        (Some(a), Some(c)) => Some(a.max(c)),
        (a, c) => a.or(c),
    };
    let satisfied = match binding {
        None => true,
        Some(t) => b.p_exponent.map_or(false, |p| p > t) && b.lp_value.is_some(),
    };
    LpReport {
        loss_threshold: loss,
        q1_threshold: q1,
        p: b.p_exponent,
        binding,
        satisfied,
    }
}

/// Direct quadrature of `L[g](v) = n_b ∫ Φ(v − v_*) g(v_*) dv_*`.
pub fn loss_evaluate(
    k: &CollisionKernel,
    g: &GridDistribution,
    v: &[f64],
    form: PhiForm,
) -> Result<f64> {
    Ok(loss_evaluate_with_mass(k, angular_mass_nb(k)?, g, v, form))
}

pub fn loss_evaluate_with_mass(
    k: &CollisionKernel,
    n_b: f64,
    g: &GridDistribution,
    v: &[f64],
    form: PhiForm,
) -> f64 {
    let mut w = vec![0.0; g.dimension];
    let mut acc = 0.0;
    for (i, &x) in g.values.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        g.node_into(i, &mut w);
        let z = v
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if z == 0.0 && k.gamma < 0.0 && !k.mollified {
            // integrable singularity sitting on a node: drop the cell
            continue;
        }
        acc += k.phi(z, form) * x;
    }
    n_b * acc * g.cell_volume()
}

/// Smallest safe `cst` for `C_L` over a fixture family: 1.5 × the largest
/// observed ratio `L[g](v) / (n_b C_Φ E_g ⟨v⟩^{γ⁺})`.
pub fn calibrate_loss_cst(
    k: &CollisionKernel,
    fixtures: &[GridDistribution],
    probes: &[Vec<f64>],
) -> Result<(f64, Vec<f64>)> {
    let n_b = angular_mass_nb(k)?;
    let mut ratios = Vec::new();
    for g in fixtures {
        let p = if k.needs_lp() {
            Some(k.n() / (k.n() + k.gamma) + 0.5)
        } else {
            None
        };
        let fl = local_functionals(g, k.gamma_tilde(), p);
        let mut moment = fl.rho + fl.e;
        if let Some(l) = fl.lp {
            moment += l;
        }
        for v in probes {
            let r = v.iter().map(|c| c * c).sum::<f64>().sqrt();
            let l = loss_evaluate_with_mass(k, n_b, g, v, PhiForm::Upper);
            ratios.push(l / (n_b * k.big_c_phi * moment * bracket(r).powf(k.gamma_plus())));
        }
    }
    if ratios.is_empty() {
        return Err(Error::DegenerateSample(
            "empty loss calibration plan".into(),
        ));
    }
    let worst = ratios.iter().cloned().fold(0.0, f64::max);
    Ok((1.5 * worst, ratios))
}
