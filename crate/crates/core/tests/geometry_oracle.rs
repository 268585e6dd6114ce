use lbcert_core::geometry::*;
use lbcert_core::kernel::*;
use lbcert_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn maxwell_const(n: usize) -> CollisionKernel {
    CollisionKernel::new(
        n,
        0.0,
        -1.0,
        1.0,
        1.0,
        1.0,
        false,
        AngularProfile::Constant(1.0),
    )
    .unwrap()
}

/// Plain Monte Carlo over a box around the target, balls centred at `c`.
fn naive_qplus(
    k: &CollisionKernel,
    c: &[f64],
    r: f64,
    big_r: f64,
    v: &[f64],
    n_samples: usize,
    seed: u64,
) -> (f64, f64) {
    let n = v.len();
    let half = r.max(big_r) + 2.0 * (r * r + big_r * big_r).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n_samples {
        let vs: Vec<f64> = (0..n)
            .map(|j| c[j] + half * (2.0 * rng.gen::<f64>() - 1.0))
            .collect();
        let mut sig: Vec<f64> = (0..n)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let nrm = sig.iter().map(|x| x * x).sum::<f64>().sqrt();
        sig.iter_mut().for_each(|x| *x /= nrm);
        let rel = v
            .iter()
            .zip(&vs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let mut ok_p = 0.0;
        let mut ok_q = 0.0;
        let mut dot = 0.0;
        for j in 0..n {
            let mid = 0.5 * (v[j] + vs[j]);
            ok_p += (mid + 0.5 * rel * sig[j] - c[j]).powi(2);
            ok_q += (mid - 0.5 * rel * sig[j] - c[j]).powi(2);
            dot += (v[j] - vs[j]) * sig[j];
        }
        let x = if ok_p <= r * r && ok_q <= big_r * big_r {
            k.phi(rel, PhiForm::Lower) * k.b((dot / rel).clamp(-1.0, 1.0).acos())
        } else {
            0.0
        };
        s += x;
        s2 += x * x;
    }
    let m = s / n_samples as f64;
    let var = s2 / n_samples as f64 - m * m;
    let scale = (2.0 * half).powi(n as i32) * sphere_area(n - 1);
    (scale * m, scale * (var / n_samples as f64).sqrt())
}

#[test]
fn carleman_geometry_constants() {
    let g = CarlemanGeometry::default();
    assert!((g.a - (2f64.sqrt() - 1.0)).abs() < 1e-15);
    assert!((g.b_geo - (2f64.sqrt() + 1.0)).abs() < 1e-14);
    assert!((g.lambda - 0.5f64.sqrt()).abs() < 1e-15);
    assert!(g.a < 1.0 && 1.0 < g.b_geo);
}

#[test]
fn spreading_formula_examples() {
    let k2 = maxwell_const(2);
    let s = spreading_bound(&k2, 1.0, 1.0, 0.25, 1.0).unwrap();
    assert!((s.coefficient - 1.0).abs() < 1e-14);
    assert!((s.radius - 2f64.sqrt() * 0.75).abs() < 1e-14);
    let k = CollisionKernel::hard_spheres(3);
    let s = spreading_bound(&k, 1.0, 1.0, 0.99, 1.0).unwrap();
    assert!((s.radius - 0.014_142_135_6).abs() < 1e-9);
    for d in [0.3, 1.0, 2.5] {
        let s = spreading_bound(&k, d, d, 0.3, 2.0).unwrap();
        assert!((s.coefficient - 2.0 * d.powf(4.0) * 0.3f64.sqrt()).abs() < 1e-12 * s.coefficient);
        assert!((s.radius - d * 2f64.sqrt() * 0.7).abs() < 1e-14);
    }
}

#[test]
fn spreading_rejects_bad_geometry() {
    let k = CollisionKernel::hard_spheres(3);
    assert!(matches!(
        spreading_bound(&k, 2.0, 1.0, 0.5, 1.0),
        Err(Error::InvalidGeometry(_))
    ));
    assert!(matches!(
        spreading_bound(&k, 1.0, 1.0, 1.0, 1.0),
        Err(Error::InvalidGeometry(_))
    ));
    assert!(matches!(
        spreading_bound(&k, 1.0, 1.0, 0.0, 1.0),
        Err(Error::InvalidGeometry(_))
    ));
}

#[test]
fn soft_potential_rescaling_flag() {
    let k = CollisionKernel::new(
        3,
        -1.0,
        -1.0,
        1.0,
        1.0,
        1.0,
        false,
        AngularProfile::Constant(1.0),
    )
    .unwrap();
    let s = spreading_bound(&k, 0.5, 0.5, 0.5, 1.0).unwrap();
    assert!(s.rescaled);
    assert!((s.coefficient - 0.5f64.powi(3) * 0.5f64.sqrt()).abs() < 1e-14);
    assert!(!spreading_bound(&k, 2.0, 2.0, 0.5, 1.0).unwrap().rescaled);
}

#[test]
fn hard_sphere_gain_at_origin_matches_closed_form() {
    // Q⁺(1_{B1}, 1_{B1})(0) for |z| b ≡ 1 in 3D equals 8π².
    let k = CollisionKernel::hard_spheres(3);
    let q = qplus_indicator_quadrature(&k, 1.0, 1.0, &[0.0; 3], 400_000, 11).unwrap();
    assert!((q.value - 8.0 * PI * PI).abs() < 4.0 * q.std_error, "{q:?}");
    // Regression baseline for this seed.
    assert!((q.value - 79.0).abs() < 0.6);
}

#[test]
fn gain_vanishes_outside_energy_shell() {
    let k = CollisionKernel::hard_spheres(3);
    for v in [[0.0, 0.0, 1.5], [1.0, 1.0, 0.1], [3.0, 0.0, 0.0]] {
        let q = qplus_indicator_quadrature(&k, 1.0, 1.0, &v, 20_000, 3).unwrap();
        assert_eq!(q.value, 0.0);
    }
}

#[test]
fn gain_requires_cutoff_and_enough_samples() {
    let nc = CollisionKernel::inverse_power(3, 0.0, 0.5, 1.0).unwrap();
    assert!(matches!(
        qplus_indicator_quadrature(&nc, 1.0, 1.0, &[0.0; 3], 20_000, 1),
        Err(Error::NonIntegrableAngular { .. })
    ));
    let k = CollisionKernel::hard_spheres(3);
    assert!(qplus_indicator_quadrature(&k, 1.0, 1.0, &[0.0; 3], 100, 1).is_err());
    // far too few samples at the edge of the support
    let z = edge_speed(1.0, 0.002);
    assert!(matches!(
        qplus_indicator_quadrature(&k, 1.0, 1.0, &[0.0, 0.0, z], 10_000, 1),
        Err(Error::InsufficientSamples { .. })
    ));
}

#[test]
fn gain_is_deterministic() {
    let k = CollisionKernel::hard_spheres(3);
    let a = qplus_indicator_quadrature(&k, 0.7, 1.0, &[0.1, 0.2, 0.3], 50_000, 99).unwrap();
    let b = qplus_indicator_quadrature(&k, 0.7, 1.0, &[0.1, 0.2, 0.3], 50_000, 99).unwrap();
    assert_eq!(a, b);
}

#[test]
fn gain_homogeneity() {
    for k in [CollisionKernel::hard_spheres(3), maxwell_const(3)] {
        let v = [0.2, -0.1, 0.6];
        let base = qplus_indicator_quadrature(&k, 0.8, 1.0, &v, 400_000, 5).unwrap();
        for lam in [0.5, 2.0] {
            let vs: Vec<f64> = v.iter().map(|x| lam * x).collect();
            let q = qplus_indicator_quadrature(&k, 0.8 * lam, lam, &vs, 400_000, 6).unwrap();
            let scaled = lam.powf(3.0 + k.gamma);
            let diff = (q.value - scaled * base.value).abs();
            let se = (q.std_error.powi(2) + (scaled * base.std_error).powi(2)).sqrt();
            assert!(
                diff < 3.0 * se,
                "lambda={lam}: {} vs {}",
                q.value,
                scaled * base.value
            );
        }
    }
}

#[test]
fn gain_translation_invariance_against_naive_sampler() {
    let k = CollisionKernel::hard_spheres(3);
    let w = [1.5, -2.0, 0.5];
    let v = [0.3, 0.0, 0.4];
    let ours = qplus_indicator_quadrature(&k, 1.0, 1.0, &v, 200_000, 8).unwrap();
    let vt: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a + b).collect();
    let (naive, se) = naive_qplus(&k, &w, 1.0, 1.0, &vt, 2_000_000, 9);
    let tol = 3.0 * (se * se + ours.std_error * ours.std_error).sqrt();
    assert!(
        (naive - ours.value).abs() < tol,
        "{naive} ± {se} vs {ours:?}"
    );
}

#[test]
fn two_dimensional_gain_against_naive_sampler() {
    let k = maxwell_const(2);
    let v = [0.2, 0.5];
    let ours = qplus_indicator_quadrature(&k, 0.6, 1.0, &v, 200_000, 2).unwrap();
    let (naive, se) = naive_qplus(&k, &[0.0, 0.0], 0.6, 1.0, &v, 1_000_000, 4);
    assert!((naive - ours.value).abs() < 3.0 * (se * se + ours.std_error.powi(2)).sqrt());
}

#[test]
fn gain_decays_like_xi_to_the_n_half_plus_one() {
    let k = CollisionKernel::hard_spheres(3);
    let mut ratios = Vec::new();
    for xi in [0.1, 0.05, 0.025] {
        let q =
            qplus_indicator_quadrature(&k, 1.0, 1.0, &[0.0, 0.0, edge_speed(1.0, xi)], 400_000, 21)
                .unwrap();
        ratios.push(q.value / xi.powf(2.5));
    }
    for r in &ratios {
        assert!((r / ratios[2] - 1.0).abs() < 0.05, "{ratios:?}");
    }
    // with ξ^{1/2} in place of ξ^{5/2} the ratio collapses toward zero
    let q = qplus_indicator_quadrature(
        &k,
        1.0,
        1.0,
        &[0.0, 0.0, edge_speed(1.0, 0.025)],
        400_000,
        21,
    )
    .unwrap();
    assert!(q.value / 0.025f64.sqrt() < 0.1 * ratios[0] * 0.1f64.powi(2));
}

#[test]
fn reduced_integral_empty_beyond_spread_ball() {
    let k = CollisionKernel::hard_spheres(3);
    assert!(matches!(
        carleman_reduced_integral(&k, 1.0, 2f64.sqrt()),
        Err(Error::EmptyIntegrationDomain)
    ));
    assert!(matches!(
        carleman_reduced_integral(&k, 0.5, 1.2),
        Err(Error::EmptyIntegrationDomain)
    ));
}

#[test]
fn reduced_integral_scaling_near_the_edge() {
    let k = CollisionKernel::hard_spheres(3);
    let vals: Vec<f64> = [4e-2, 2e-2, 1e-2, 5e-3]
        .iter()
        .map(|&xi| carleman_reduced_integral(&k, 1.0, edge_speed(1.0, xi)).unwrap() / xi.powf(2.5))
        .collect();
    let last = vals[3];
    assert!(last > 0.0);
    for w in vals.windows(2) {
        assert!(
            (w[1] / w[0] - 1.0).abs() < (w[0] / last - 1.0).abs() + 0.02,
            "{vals:?}"
        );
    }
    assert!((vals[2] / last - 1.0).abs() < 0.01, "{vals:?}");
}

#[test]
fn reduced_integral_two_dimensions() {
    let k = maxwell_const(2);
    let v = carleman_reduced_integral(&k, 1.0, edge_speed(1.0, 0.05)).unwrap();
    assert!(v > 0.0 && v.is_finite());
}

#[test]
fn reduced_integral_never_overclaims() {
    for k in [
        CollisionKernel::hard_spheres(3),
        maxwell_const(3),
        maxwell_const(2),
    ] {
        for (p, xi) in [(1.0, 0.1), (1.0, 0.05), (0.6, 0.05), (0.8, 0.15)] {
            let z = edge_speed(p, xi);
            let lb = carleman_lower_bound(&k, p, z).unwrap();
            let mut v = vec![0.0; k.dimension];
            v[k.dimension - 1] = z;
            let q = qplus_indicator_quadrature(&k, p, 1.0, &v, 400_000, 17).unwrap();
            assert!(
                lb <= q.value + 3.0 * q.std_error,
                "N={} p={p} xi={xi}: {lb} > {q:?}",
                k.dimension
            );
        }
    }
}

#[test]
fn calibration_min_semantics() {
    assert!((calibrate_from_ratios(&[1.0]).unwrap() - 1.0 / 1.5).abs() < 1e-15);
    assert!((calibrate_from_ratios(&[3.0, 1.2, 1e9]).unwrap() - 0.8).abs() < 1e-15);
    assert!(matches!(
        calibrate_from_ratios(&[]),
        Err(Error::DegenerateSample(_))
    ));
}

#[test]
fn hard_sphere_calibration_is_positive_and_dominated() {
    let k = CollisionKernel::hard_spheres(3);
    let plan = default_plan(3);
    assert_eq!(plan.len(), 64);
    let cal = calibrate_spreading_cst(&k, &plan, 40_000, 2024, XiExponentMode::Stated).unwrap();
    assert!(cal.cst_spread > 0.0);
    for s in &cal.ratios {
        let f = spreading_with_ellb(
            &k,
            1.0,
            s.point.r,
            s.point.big_r,
            s.point.xi,
            cal.cst_spread,
            &s.point.v,
            XiExponentMode::Stated,
        )
        .unwrap();
        assert!(f.coefficient <= s.qplus.value);
    }
    let bad = vec![SamplePoint {
        r: 1.0,
        big_r: 1.0,
        xi: 0.5,
        v: vec![0.0, 0.0, 1.0],
    }];
    assert!(calibrate_spreading_cst(&k, &bad, 20_000, 1, XiExponentMode::Stated).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spreading_coefficient_monotone(r in 0.05f64..3.0, dr in 0.0f64..2.0, big in 0.0f64..2.0, xi in 0.01f64..0.99, gamma in -2.9f64..1.0) {
        let k = CollisionKernel::new(3, gamma, -1.0, 1.0, 1.0, 1.0, false, AngularProfile::Constant(1.0)).unwrap();
        let big_r = r + big;
        let a = spreading_with_ellb(&k, 1.0, r, big_r + dr, xi, 1.0, &[0.0; 3], XiExponentMode::Stated).unwrap();
        let b = spreading_with_ellb(&k, 1.0, r, big_r, xi, 1.0, &[0.0; 3], XiExponentMode::Stated).unwrap();
        prop_assert!(a.coefficient >= b.coefficient * (1.0 - 1e-12));
        let r2 = (r + dr).min(big_r);
        let c = spreading_with_ellb(&k, 1.0, r2, big_r, xi, 1.0, &[0.0; 3], XiExponentMode::Stated).unwrap();
        prop_assert!(c.coefficient >= b.coefficient * (1.0 - 1e-12));
        prop_assert!((b.radius - (r * r + big_r * big_r).sqrt() * (1.0 - xi)).abs() < 1e-12);
    }

    #[test]
    fn support_is_energy_shell(x in -3.0f64..3.0, y in -3.0f64..3.0, zc in -3.0f64..3.0, r in 0.2f64..1.0) {
        let k = CollisionKernel::hard_spheres(3);
        let v = [x, y, zc];
        let vn2 = x * x + y * y + zc * zc;
        prop_assume!(vn2 > r * r + 1.0);
        prop_assert_eq!(qplus_raw(&k, 0.0, r, 1.0, &v, 10_000, 1).unwrap().value, 0.0);
    }
}
