//! Certificates: the lower-bound parameters plus everything that produced them.

use crate::error::{Error, Result};
use crate::estimates::AprioriBounds;
use crate::geometry::XiExponentMode;
use crate::kernel::{AngularProfile, CollisionKernel};
use crate::upheaval::{Constants, UpheavalSeed};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    Maxwellian,
    StretchedExp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSummary {
    pub dimension: usize,
    pub gamma: f64,
    pub nu: f64,
    pub b0: f64,
    pub c_phi: f64,
    #[serde(rename = "C_phi")]
    pub big_c_phi: f64,
    pub mollified: bool,
    pub profile: String,
}

impl From<&CollisionKernel> for KernelSummary {
    fn from(k: &CollisionKernel) -> Self {
        let profile = match &k.profile {
            AngularProfile::Constant(c) => format!("constant({c:?})"),
            AngularProfile::InversePower => "inverse_power".to_string(),
            AngularProfile::Tabulated { theta, .. } => format!("table({} points)", theta.len()),
            AngularProfile::Custom(_) => "custom".to_string(),
        };
        KernelSummary {
            dimension: k.dimension,
            gamma: k.gamma,
            nu: k.nu,
            b0: k.b0,
            c_phi: k.c_phi,
            big_c_phi: k.big_c_phi,
            mollified: k.mollified,
            profile,
        }
    }
}

/// Parameters of the non-cutoff time schedule, as recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRecord {
    pub kappa: f64,
    pub beta: f64,
    pub alpha_sched: f64,
    pub kappa_eff: f64,
    pub eps0: f64,
    pub cst_damp: f64,
    /// Largest damping argument along the trace; `C_e = exp(−sup)`.
    pub damping_sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub kernel: KernelSummary,
    pub bounds: AprioriBounds,
    pub cst_spread: f64,
    #[serde(rename = "cst_CL")]
    pub cst_cl: f64,
    pub cst_up: f64,
    pub cst_cs: f64,
    pub cst_q1: f64,
    pub cst_eps: f64,
    pub delta0_rule: String,
    pub xi: f64,
    pub n_max: usize,
    pub xi_exponent_mode: XiExponentMode,
    /// May underflow to 0; `ln_alpha` is authoritative.
    pub alpha: f64,
    pub ln_alpha: f64,
    pub c_delta: f64,
    pub ln_ce: f64,
    pub domination_shrink: f64,
    pub seed: UpheavalSeed,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleRecord>,
    pub branch_flags: Vec<String>,
    #[serde(default)]
    pub calibration_ids: Vec<String>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl Provenance {
    pub fn record_constants(&mut self, c: &Constants) {
        self.cst_spread = c.cst_spread;
        self.cst_cl = c.cst_cl;
        self.cst_up = c.cst_up;
        self.cst_cs = c.cst_cs;
        self.cst_q1 = c.cst_q1;
        self.cst_eps = c.cst_eps;
    }
}

/// A certified lower bound, valid for `t ≥ tau`:
/// `ρ′ (2πθ′)^{−N/2} e^{−|v|²/(2θ′)}` or `C₁ e^{−C₂ |v|^K}`.
///
/// The plain parameters underflow for realistic inputs, so each one has a
/// log-space twin that the evaluation uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Certificate {
    pub format_version: u32,
    pub kind: CertificateKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_prime: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ln_rho_prime: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_prime: Option<f64>,
    #[serde(rename = "C1", default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(rename = "ln_C1", default, skip_serializing_if = "Option::is_none")]
    pub ln_c1: Option<f64>,
    #[serde(rename = "C2", default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    pub dimension: usize,
    pub tau: f64,
    #[serde(rename = "R0")]
    pub r0: f64,
    pub provenance: Provenance,
}

impl Certificate {
    pub fn maxwellian(
        dimension: usize,
        ln_rho: f64,
        theta: f64,
        tau: f64,
        r0: f64,
        prov: Provenance,
    ) -> Self {
        Certificate {
            format_version: FORMAT_VERSION,
            kind: CertificateKind::Maxwellian,
            rho_prime: Some(ln_rho.exp()),
            ln_rho_prime: Some(ln_rho),
            theta_prime: Some(theta),
            c1: None,
            ln_c1: None,
            c2: None,
            k: None,
            dimension,
            tau,
            r0,
            provenance: prov,
        }
    }

    pub fn stretched(
        dimension: usize,
        ln_c1: f64,
        c2: f64,
        k: f64,
        tau: f64,
        r0: f64,
        prov: Provenance,
    ) -> Self {
        Certificate {
            format_version: FORMAT_VERSION,
            kind: CertificateKind::StretchedExp,
            rho_prime: None,
            ln_rho_prime: None,
            theta_prime: None,
            c1: Some(ln_c1.exp()),
            ln_c1: Some(ln_c1),
            c2: Some(c2),
            k: Some(k),
            dimension,
            tau,
            r0,
            provenance: prov,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidRequest(format!("malformed certificate: {m}")));
        if self.format_version != FORMAT_VERSION {
            return bad(&format!(
                "format_version {} is not {FORMAT_VERSION}",
                self.format_version
            ));
        }
        match self.kind {
            CertificateKind::Maxwellian => match (self.ln_rho_prime, self.theta_prime) {
                (Some(l), Some(t)) if l.is_finite() && t > 0.0 && t.is_finite() => {}
                _ => return bad("maxwellian needs finite ln_rho_prime and positive theta_prime"),
            },
            CertificateKind::StretchedExp => match (self.ln_c1, self.c2, self.k) {
                (Some(l), Some(c2), Some(k)) if l.is_finite() && c2 > 0.0 && k >= 2.0 => {}
                _ => return bad("stretched_exp needs finite ln_C1, C2 > 0 and K >= 2"),
            },
        }
        if !(self.tau > 0.0) || !(self.r0 > 0.0) {
            return bad("tau and R0 must be positive");
        }
        Ok(())
    }

    /// `ln` of the bound at `v`.
    pub fn ln_value(&self, v: &[f64]) -> f64 {
        let s2: f64 = v.iter().map(|x| x * x).sum();
        match self.kind {
            CertificateKind::Maxwellian => {
                let th = self.theta_prime.unwrap_or(f64::NAN);
                self.ln_rho_prime.unwrap_or(f64::NAN)
                    - self.dimension as f64 / 2.0 * (2.0 * PI * th).ln()
                    - s2 / (2.0 * th)
            }
            CertificateKind::StretchedExp => {
                let k = self.k.unwrap_or(f64::NAN);
                self.ln_c1.unwrap_or(f64::NAN) - self.c2.unwrap_or(f64::NAN) * s2.powf(k / 2.0)
            }
        }
    }

    pub fn value(&self, v: &[f64]) -> f64 {
        self.ln_value(v).exp()
    }

    /// Logarithm of the peak height, attained at `v = 0`.
    pub fn ln_height(&self) -> f64 {
        self.ln_value(&vec![0.0; self.dimension])
    }

    /// Multiplies the bound by `factor` (used to test falsifiability).
    pub fn inflated(&self, factor: f64) -> Certificate {
        let mut c = self.clone();
        let l = factor.ln();
        match c.kind {
            CertificateKind::Maxwellian => {
                let v = c.ln_rho_prime.unwrap_or(f64::NAN) + l;
                c.ln_rho_prime = Some(v);
                c.rho_prime = Some(v.exp());
            }
            CertificateKind::StretchedExp => {
                let v = c.ln_c1.unwrap_or(f64::NAN) + l;
                c.ln_c1 = Some(v);
                c.c1 = Some(v.exp());
            }
        }
        c.provenance.notes.push(format!("inflated by {factor:e}"));
        c
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Certificate = serde_json::from_str(s)
            .map_err(|e| Error::InvalidRequest(format!("certificate JSON: {e}")))?;
        c.validate()?;
        Ok(c)
    }
}
