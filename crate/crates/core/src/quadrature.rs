//! Adaptive Gauss–Kronrod (7/15) quadrature with substitutions for the
//! endpoint behaviour of angular kernels.

use crate::error::{Error, Result};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_3,
    0.949_107_912_342_758_524_526_189_684_047_9,
    0.864_864_423_359_769_072_789_712_788_640_9,
    0.741_531_185_599_394_439_863_864_773_280_8,
    0.586_087_235_467_691_130_294_144_845_693_0,
    0.405_845_151_377_397_166_906_606_412_076_9,
    0.207_784_955_007_898_467_600_689_403_773_2,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_97,
    0.063_092_092_629_978_553_290_700_663_189_20,
    0.104_790_010_322_250_183_839_876_322_541_5,
    0.140_653_259_715_525_918_745_189_590_510_2,
    0.169_004_726_639_267_902_826_583_426_598_6,
    0.190_350_578_064_785_409_913_256_402_421_0,
    0.204_432_940_075_298_892_414_161_999_234_6,
    0.209_482_141_084_727_828_012_999_174_891_7,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_1,
    0.279_705_391_489_276_667_901_467_771_423_8,
    0.381_830_050_505_118_944_950_369_775_489_0,
    0.417_959_183_673_469_387_755_102_040_816_3,
];

const MAX_PANELS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, o: &Self) -> bool {
        self.error == o.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Panel {
    fn cmp(&self, o: &Self) -> Ordering {
        self.error.total_cmp(&o.error)
    }
}

/// Globally adaptive integration of `f` over `[a, b]`.
///
/// Stops once the summed error estimate is below `max(abs_tol, rel_tol·|I|)`.
/// The error estimate is the raw Kronrod–Gauss difference, which is pessimistic
/// for smooth integrands.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<QuadResult> {
    if a == b {
        return Ok(QuadResult {
            value: 0.0,
            error: 0.0,
        });
    }
    let (v, e) = gk15(&f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Panel {
        a,
        b,
        value: v,
        error: e,
    });
    let mut total = v;
    let mut err = e;
    loop {
        if !total.is_finite() || !err.is_finite() {
            return Err(Error::QuadratureFailure {
                estimate: total,
                error: err,
            });
        }
        if err <= abs_tol.max(rel_tol * total.abs()) {
            break;
        }
        if heap.len() >= MAX_PANELS {
            return Err(Error::QuadratureFailure {
                estimate: total,
                error: err,
            });
        }
        let p = heap.pop().expect("heap is never empty");
        let m = 0.5 * (p.a + p.b);
        if m <= p.a || m >= p.b {
            // Panel cannot be split further in floating point.
            return Err(Error::QuadratureFailure {
                estimate: total,
                error: err,
            });
        }
        let (v1, e1) = gk15(&f, p.a, m);
        let (v2, e2) = gk15(&f, m, p.b);
        total += v1 + v2 - p.value;
        err += e1 + e2 - p.error;
        heap.push(Panel {
            a: p.a,
            b: m,
            value: v1,
            error: e1,
        });
        heap.push(Panel {
            a: m,
            b: p.b,
            value: v2,
            error: e2,
        });
    }
    // Re-sum to shed the drift of the running updates.
    let value: f64 = heap.iter().map(|p| p.value).sum();
    let error: f64 = heap.iter().map(|p| p.error).sum();
    Ok(QuadResult { value, error })
}

/// Integrates `f` over `[0, b]` when `f(θ) ~ θ^(s-1)` near 0 with `s > 0`.
///
/// For `s < 1` the substitution `θ = u^(1/s)` turns the integrand into a
/// bounded function of `u`.
pub fn integrate_power_endpoint<F: Fn(f64) -> f64>(
    f: F,
    b: f64,
    s: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<QuadResult> {
    if !(s > 0.0) || s >= 1.0 {
        return integrate(f, 0.0, b, rel_tol, abs_tol);
    }
    let inv = 1.0 / s;
    // below the floor the integrand is frozen at its (converged) endpoint value
    let floor = 1e-100;
    let g = |u: f64| {
        let th = if u > 0.0 {
            u.powf(inv).max(floor)
        } else {
            floor
        };
        f(th) * inv * th.powf(1.0 - s)
    };
    integrate(g, 0.0, b.powf(s), rel_tol, abs_tol)
}

/// Integrates `f` over `[a, b]` with `0 < a < b` in the variable `x = ln θ`.
/// Suited to integrands that behave like a power of θ across many decades.
pub fn integrate_log<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<QuadResult> {
    let g = |x: f64| {
        let th = x.exp();
        f(th) * th
    };
    integrate(g, a.ln(), b.ln(), rel_tol, abs_tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let r = integrate(|x| x * x * x - 2.0 * x, 0.0, 2.0, 1e-14, 0.0).unwrap();
        assert!((r.value - 0.0).abs() < 1e-13);
        let r = integrate(|x| x.powi(6), -1.0, 1.0, 1e-14, 0.0).unwrap();
        assert!((r.value - 2.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn sine_integral() {
        let r = integrate(f64::sin, 0.0, std::f64::consts::PI, 1e-12, 0.0).unwrap();
        assert!((r.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn power_endpoint_singularity() {
        // ∫₀¹ θ^{-0.7} dθ = 1/0.3
        let r = integrate_power_endpoint(|t| t.powf(-0.7), 1.0, 0.3, 1e-12, 0.0).unwrap();
        assert!((r.value - 1.0 / 0.3).abs() < 1e-10, "{}", r.value);
    }

    #[test]
    fn log_substitution_over_decades() {
        // ∫_{1e-8}^{1} θ^{-1.5} dθ = 2(1e4 - 1)
        let r = integrate_log(|t| t.powf(-1.5), 1e-8, 1.0, 1e-12, 0.0).unwrap();
        let exact = 2.0 * (1e4 - 1.0);
        assert!(((r.value - exact) / exact).abs() < 1e-11);
    }

    #[test]
    fn divergent_integrand_reports_failure() {
        let r = integrate(|t: f64| 1.0 / t, 0.0, 1.0, 1e-12, 0.0);
        assert!(matches!(r, Err(Error::QuadratureFailure { .. })));
    }
}
