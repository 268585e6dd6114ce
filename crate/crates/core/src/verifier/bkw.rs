//! The BKW exact solution for Maxwell molecules, unit mass and energy `N`.

use crate::error::{Error, Result};
use crate::estimates::AprioriBounds;
use crate::kernel::{sphere_area, CollisionKernel};
use crate::quadrature::integrate;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BkwState {
    pub dimension: usize,
    /// Shape parameter at `t = 0`.
    pub s0: f64,
    /// Relaxation rate of `1 − S`.
    pub rate: f64,
    #[serde(default)]
    pub t0: f64,
}

pub fn s_min(n: usize) -> f64 {
    n as f64 / (n as f64 + 2.0)
}

/// `λ = (C_Φ/4) ∫_{S^{N−1}} b(cos θ) sin²θ dσ`, the decay rate of `1 − S`
/// for a Maxwell-molecule kernel.
pub fn bkw_rate(k: &CollisionKernel) -> Result<f64> {
    if k.gamma != 0.0 || !k.is_cutoff() {
        return Err(Error::InvalidKernel("BKW needs a cutoff Maxwell-molecule kernel (gamma = 0)".into()));
    }
    let n = k.dimension as i32;
    let q = integrate(|t| k.b(t) * t.sin().powi(n), 0.0, PI, 1e-12, 0.0)?;
    Ok(0.25 * k.c_phi * sphere_area(k.dimension - 2) * q.value)
}

impl BkwState {
    pub fn new(dimension: usize, s0: f64, rate: f64) -> Result<Self> {
        let st = BkwState { dimension, s0, rate, t0: 0.0 };
        st.validate()?;
        Ok(st)
    }

    pub fn for_kernel(k: &CollisionKernel, s0: f64) -> Result<Self> {
        Self::new(k.dimension, s0, bkw_rate(k)?)
    }

    pub fn validate(&self) -> Result<()> {
        let min = s_min(self.dimension);
        if !(self.s0 >= min) || self.s0 > 1.0 {
            return Err(Error::InvalidS { s: self.s0, min });
        }
        if !(self.rate > 0.0) || self.dimension < 2 {
            return Err(Error::InvalidRequest("BKW needs rate > 0 and N >= 2".into()));
        }
        Ok(())
    }

    /// `S(t) = 1 − (1 − S₀) e^{−λ(t + t₀)}`.
    pub fn s_at(&self, t: f64) -> f64 {
        1.0 - (1.0 - self.s0) * (-self.rate * (t + self.t0)).exp()
    }

    pub fn eval(&self, t: f64, v: &[f64]) -> f64 {
        let r2: f64 = v.iter().map(|x| x * x).sum();
        bkw_profile(self.dimension, self.s_at(t), r2)
    }
}

/// `(2πS)^{−N/2} e^{−r²/(2S)} [(N+2)/2 − N/(2S) + (1−S) r²/(2S²)]`.
pub fn bkw_profile(n: usize, s: f64, r2: f64) -> f64 {
    let nf = n as f64;
    let bracket = (nf + 2.0) / 2.0 - nf / (2.0 * s) + (1.0 - s) * r2 / (2.0 * s * s);
    (2.0 * PI * s).powf(-nf / 2.0) * (-r2 / (2.0 * s)).exp() * bracket
}

pub fn bkw_evaluate(state: &BkwState, t: f64, v: &[f64]) -> Result<f64> {
    let min = s_min(state.dimension);
    let s = state.s_at(t);
    if s < min {
        return Err(Error::InvalidS { s, min });
    }
    Ok(state.eval(t, v))
}

/// Radial moment `|S^{N−1}| ∫₀^{R} r^{N−1} g(r) dr` by composite Simpson.
fn radial<F: Fn(f64) -> f64>(n: usize, g: F) -> f64 {
    let (r_max, m) = (16.0, 16000);
    let h = r_max / m as f64;
    let mut acc = 0.0;
    for i in 0..=m {
        let r = i as f64 * h;
        let w = if i == 0 || i == m {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * r.powi(n as i32 - 1) * g(r);
    }
    sphere_area(n - 1) * acc * h / 3.0
}

/// `∫ f |ln f|` at shape `S`.
pub fn bkw_entropy(n: usize, s: f64) -> f64 {
    radial(n, |r| {
        let f = bkw_profile(n, s, r * r);
        if f > 0.0 {
            (f * f.ln()).abs()
        } else {
            0.0
        }
    })
}

/// `sup|f| + sup|∇f| + sup‖∇²f‖` at shape `S`, from the exact radial derivatives.
pub fn bkw_w_norm(n: usize, s: f64) -> f64 {
    let nf = n as f64;
    let c = (2.0 * PI * s).powf(-nf / 2.0);
    let a = (nf + 2.0) / 2.0 - nf / (2.0 * s);
    let b = (1.0 - s) / (2.0 * s * s);
    // f = c g(r²), g(x) = e^{−x/(2S)} (a + b x)
    let (mut f0, mut f1, mut f2) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..=8000 {
        let r = i as f64 * 2e-3;
        let x = r * r;
        let e = (-x / (2.0 * s)).exp();
        let p = a + b * x;
        let g1 = e * (b - p / (2.0 * s));
        let g2 = e * (-b / s + p / (4.0 * s * s));
        f0 = f0.max((c * e * p).abs());
        f1 = f1.max((2.0 * c * r * g1).abs());
        // Hessian eigenvalues: f'' radially, f'/r tangentially
        let radial2 = c * (2.0 * g1 + 4.0 * x * g2);
        f2 = f2.max(radial2.abs()).max((2.0 * c * g1).abs());
    }
    f0 + f1 + f2
}

/// Bounds valid for every `t ≥ t_start`, sampled over `S ∈ [S(t_start), 1]`.
pub fn bkw_bounds(state: &BkwState, t_start: f64) -> Result<AprioriBounds> {
    if !(t_start >= 0.0) {
        return Err(Error::InvalidRequest(format!("t_start = {t_start} must be nonnegative")));
    }
    state.validate()?;
    let n = state.dimension;
    let s_lo = state.s_at(t_start);
    let pts = 64;
    let (mut h, mut w) = (0.0f64, 0.0f64);
    for i in 0..=pts {
        let s = s_lo + (1.0 - s_lo) * i as f64 / pts as f64;
        h = h.max(bkw_entropy(n, s));
        w = w.max(bkw_w_norm(n, s));
    }
    let mut b = AprioriBounds::new(1.0, 1.0 + n as f64);
    b.eprime = n as f64;
    b.h = 1.001 * h;
    b.w = Some(1.001 * w);
    Ok(b)
}
