use lbcert_core::certificate::{Certificate, CertificateKind};
use lbcert_core::estimates::AprioriBounds;
use lbcert_core::kernel::CollisionKernel;
use lbcert_core::noncutoff::*;
use lbcert_core::upheaval::Constants;
use lbcert_core::Error;
use proptest::prelude::*;

fn bounds() -> AprioriBounds {
    let mut b = AprioriBounds::new(1.0, 4.0);
    b.eprime = 3.0;
    b.h = 4.3;
    b.w = Some(2.0);
    b
}

fn config() -> NoncutoffConfig {
    let mut c = Constants::unit();
    c.cst_spread = 50.0;
    NoncutoffConfig {
        schedule: ScheduleConfig::default(),
        xi: 0.5,
        xi_exponent_mode: Default::default(),
        constants: c,
        calibration_ids: vec![],
    }
}

fn run(gamma: f64, nu: f64) -> NoncutoffRun {
    let k = CollisionKernel::inverse_power(3, gamma, nu, 1.0).unwrap();
    certify_noncutoff(&k, &bounds(), 0.5, &config()).unwrap()
}

#[test]
fn schedule_sums_to_one() {
    for nu in [0.0, 0.5, 1.0] {
        let s = Schedule::new(ScheduleConfig::default(), nu).unwrap();
        let total: f64 = (0..400).map(|m| s.ln_delta(m).exp()).sum();
        assert!((total - 1.0).abs() < 1e-12, "nu = {nu}: {total}");
        assert!(s.ln_tail(0).abs() < 1e-12);
    }
}

#[test]
fn schedule_terms_by_hand() {
    // ν > 0: Δ_m ∝ 0.5^{2.25·4.5^{m−1}}
    let s = Schedule::new(ScheduleConfig::default(), 1.0).unwrap();
    let raw = |m: i32| 0.5f64.powf(2.25 * 4.5f64.powi(m - 1));
    let sigma: f64 = (0..12).map(raw).sum();
    for m in 0..4 {
        let want = raw(m) / sigma;
        assert!((s.ln_delta(m as usize).exp() - want).abs() < 1e-14 * want.max(1e-300));
    }
    assert!((s.ln_sigma().exp() - sigma).abs() < 1e-14);
    // ν = 0: geometric with Σ = β^{−1}/(1 − β)
    let g = Schedule::new(ScheduleConfig::default(), 0.0).unwrap();
    assert!((g.ln_sigma().exp() - 4.0 / 0.75).abs() < 1e-12);
    for m in 1..20 {
        let r = (g.ln_delta(m + 1) - g.ln_delta(m)).exp();
        assert!((r - 0.25).abs() < 1e-12);
    }
    let d = schedule_delta(&ScheduleConfig::default(), 0.0, 0).unwrap();
    assert!((d - 0.1875).abs() < 1e-12);
}

#[test]
fn tails_match_direct_sums() {
    for nu in [0.0, 1.0] {
        let s = Schedule::new(ScheduleConfig::default(), nu).unwrap();
        for m in 0..5 {
            let direct: f64 = (m..300).map(|j| s.ln_delta(j).exp()).sum();
            if direct > 0.0 {
                assert!((s.ln_tail(m).exp() / direct - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn stretched_exponent_values() {
    // K = 2 log₂ κ
    assert!((exponent_k(1.0, 4.5).unwrap() - 4.339850002884624).abs() < 1e-12);
    assert!((exponent_k(1.0, 4.5).unwrap() - 2.0 * 4.5f64.log2()).abs() < 1e-12);
    assert_eq!(exponent_k(0.0, 17.0).unwrap(), 2.0);
    assert!((kappa_threshold(1.0) - 4.0).abs() < 1e-15);
    assert!((kappa_threshold(0.5) - 8.0 / 3.0).abs() < 1e-15);
}

#[test]
fn kappa_and_beta_validation() {
    assert!(matches!(exponent_k(1.0, 3.9), Err(Error::InvalidKappa { .. })));
    assert!(matches!(exponent_k(1.0, 4.0), Err(Error::InvalidKappa { .. })));
    let mut c = ScheduleConfig::default();
    c.kappa = 3.9;
    assert!(matches!(c.validate(1.0), Err(Error::InvalidKappa { .. })));
    c.kappa = 4.5;
    c.beta = 2.6;
    assert!(matches!(c.validate(1.0), Err(Error::InvalidSchedule(_))));
    c.beta = 1.9;
    assert!(matches!(c.validate(1.0), Err(Error::InvalidSchedule(_))));
    c.beta = 2.25;
    c.alpha_sched = 1.0;
    assert!(matches!(c.validate(1.0), Err(Error::InvalidSchedule(_))));
    c.alpha_sched = 0.5;
    c.validate(1.0).unwrap();
    c.beta_geo = 1.0;
    assert!(matches!(c.validate(0.0), Err(Error::InvalidSchedule(_))));
    assert!(matches!(ScheduleConfig::default().validate(2.0), Err(Error::InvalidSchedule(_))));
}

#[test]
fn damping_vanishes_under_the_hypothesis_sequence() {
    // a_n = α^{κ^n} with α = α_s = 0.5, κ = 4.5, β = 2.25
    let k = CollisionKernel::inverse_power(3, 0.5, 1.0, 1.0).unwrap();
    let schedule = Schedule::new(ScheduleConfig::default(), 1.0).unwrap();
    let ctx = StepContext {
        kernel: &k,
        schedule,
        c_f: 10.0,
        cst_eps: 1.0,
        cst_damp: 1.0,
        ln_gain: 0.0,
        r0: 2.0,
        xi: 0.5,
        exponent: 2.5,
    };
    let mut delta = 0.1;
    let mut prev = f64::INFINITY;
    let mut last = 0.0;
    for n in 0..=40 {
        let ln_a = 0.5f64.ln() * 4.5f64.powi(n);
        let (rec, _, dn) = step_noncutoff(&ctx, n as usize, ln_a, delta);
        // the ξ_n prefactor can lift the first step; monotone from n = 1
        if n >= 2 {
            assert!(rec.damping <= prev, "n = {n}");
        }
        prev = rec.damping;
        last = rec.damping;
        delta = dn;
    }
    assert!(last < 1e-6);
}

#[test]
fn engine_damping_decreases() {
    let r = run(0.5, 1.0);
    let x: Vec<f64> = r.trace.steps.iter().map(|s| s.damping).collect();
    for w in x[1..].windows(2) {
        assert!(w[1] <= w[0]);
    }
    assert!(x.iter().all(|&v| v < 1e-6));
    assert!(x[40] < 1e-6);
}

#[test]
fn split_parameter_shrinks() {
    let r = run(0.5, 1.0);
    let free: Vec<f64> = r.trace.steps.iter().filter(|s| !s.eps_clamped).map(|s| s.ln_eps).collect();
    assert!(free.len() > 30);
    for w in free.windows(2) {
        assert!(w[1] < w[0]);
    }
}

#[test]
fn epsilon_formula_by_hand() {
    let k = CollisionKernel::inverse_power(3, 0.5, 1.0, 1.0).unwrap();
    // N + γ − γ̃ = 3 + 0.5 − 2.5, N/2 − 1 = 0.5, 2 − ν = 1
    let (l, clamped) = ln_epsilon_n(&k, 2.0, 1.0, -3.0, 0.5, 0.25f64.ln());
    let want = 2f64.ln() - 6.0 + 0.5f64.ln() + 0.5 * 0.25f64.ln();
    assert!(!clamped);
    assert!((l - want).abs() < 1e-12);
    let (l, clamped) = ln_epsilon_n(&k, 1e9, 1.0, 0.0, 1.0, 0.0);
    assert!(clamped);
    assert!(l.exp() < std::f64::consts::FRAC_PI_4);
}

#[test]
fn anchors_dominate_the_certificate() {
    for (g, nu) in [(0.5, 1.0), (0.0, 0.0), (1.0, 0.5)] {
        let r = run(g, nu);
        let c = &r.certificate;
        assert_eq!(c.kind, CertificateKind::StretchedExp);
        let ke = r.trace.kappa_eff;
        for s in &r.trace.steps {
            assert!(s.ln_a >= r.trace.ln_alpha * ke.powi(s.n as i32));
            let v = [s.delta, 0.0, 0.0];
            assert!(c.ln_value(&v) <= s.ln_a, "n = {}", s.n);
        }
        assert!(c.ln_height() <= r.seed.ln_a0);
    }
}

#[test]
fn soft_logarithmic_case_has_gaussian_tail() {
    let r = run(0.0, 0.0);
    assert_eq!(r.certificate.k, Some(2.0));
    assert_eq!(r.trace.kappa_eff, 2.0);
    assert!(r.certificate.provenance.schedule.as_ref().unwrap().beta == 0.25);
}

#[test]
fn schedule_base_is_self_consistent() {
    let r = run(0.5, 1.0);
    let sched = r.certificate.provenance.schedule.clone().unwrap();
    assert!(sched.alpha_sched <= 0.5);
    assert!(r.trace.branch_flags.iter().any(|f| f == "alpha_sched_lowered"));
    assert!(r.trace.ln_alpha <= r.seed.ln_a0);
}

#[test]
fn regression_values() {
    let c = run(0.5, 1.0).certificate;
    let rel = |a: f64, b: f64| ((a - b) / b).abs();
    assert!(rel(c.ln_c1.unwrap(), -6.7900064089561055e19) < 1e-9);
    assert!(rel(c.c2.unwrap(), 7.451310188154849e17) < 1e-9);
    assert!(rel(c.provenance.ln_alpha, -2.3695242118106663e1) < 1e-9);
}

#[test]
fn deterministic_and_round_trips() {
    let a = run(1.0, 0.5);
    let b = run(1.0, 0.5);
    assert_eq!(a.certificate, b.certificate);
    assert_eq!(a.trace.to_csv(), b.trace.to_csv());
    let back = Certificate::from_json(&a.certificate.to_json()).unwrap();
    assert_eq!(back, a.certificate);
    let csv = a.trace.to_csv();
    assert!(csv.starts_with("n,log_a_n,delta_n,eps_n,Delta_n,damping\n"));
    assert_eq!(csv.lines().count(), 42);
}

#[test]
fn rejects_bad_requests() {
    let hs = CollisionKernel::hard_spheres(3);
    assert!(certify_noncutoff(&hs, &bounds(), 0.5, &config()).is_err());
    let k = CollisionKernel::inverse_power(3, 0.5, 1.0, 1.0).unwrap();
    let mut b = bounds();
    b.w = None;
    assert!(matches!(certify_noncutoff(&k, &b, 0.5, &config()), Err(Error::MissingWBound)));
    let mut cfg = config();
    cfg.schedule.kappa = 3.9;
    assert!(matches!(certify_noncutoff(&k, &bounds(), 0.5, &cfg), Err(Error::InvalidKappa { .. })));
    let mut cfg = config();
    cfg.xi = 1.0;
    assert!(certify_noncutoff(&k, &bounds(), 0.5, &cfg).is_err());
}

#[test]
fn rate_sup_brackets_the_grid() {
    let k = CollisionKernel::inverse_power(3, 0.0, 1.0, 1.0).unwrap();
    let s = angular_rate_sup(&k).unwrap();
    for e in [1e-10, 1e-6, 1e-3, 0.1, 0.5, 0.78] {
        let (n, m) = lbcert_core::kernel::split_kernel(&k, e).unwrap();
        assert!((n + m) * e <= s);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn schedules_normalise(nu in 0.05f64..1.5, extra in 0.1f64..3.0, frac in 0.05f64..0.95, a in 0.05f64..0.95) {
        let th = kappa_threshold(nu);
        let kappa = th + extra;
        let lo = th - 2.0;
        let beta = lo + frac * (kappa - 2.0 - lo);
        let cfg = ScheduleConfig { kappa, beta, alpha_sched: a, beta_geo: 0.25, n_max: 40 };
        let s = Schedule::new(cfg, nu).unwrap();
        let total: f64 = (0..400).map(|m| s.ln_delta(m).exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(exponent_k(nu, kappa).unwrap() > 2.0 * th.log2());
    }

    #[test]
    fn uniformization_is_a_lower_bound(
        k in 2.0f64..7.0, c2 in 0.01f64..5.0, r0 in 0.1f64..3.0,
        v in prop::array::uniform3(-4.0f64..4.0), u in prop::array::uniform3(-1.0f64..1.0),
    ) {
        // |v − u|^K ≤ 2^{K−1}(|v|^K + |u|^K) with |u| ≤ R₀
        let un = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let u: Vec<f64> = u.iter().map(|x| x / un.max(1e-12) * r0.min(un)).collect();
        let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let d = v.iter().zip(&u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let s = 2f64.powf(k - 1.0);
        let shifted = -s * c2 * r0.powf(k) - s * c2 * vn.powf(k);
        prop_assert!(shifted <= -c2 * d.powf(k) + 1e-9);
    }
}


#[test]
fn tail_is_controlled_by_the_next_term() {
    // Σ_{k>n} Δ_k ≤ C Δ_{n+1} with one C for n ≤ 40
    for nu in [0.0, 1.0] {
        let s = Schedule::new(ScheduleConfig::default(), nu).unwrap();
        let c = (0..=40).map(|n| s.ln_tail(n + 1) - s.ln_delta(n + 1)).fold(f64::MIN, f64::max).exp();
        assert!(c >= 1.0 && c <= 4.0 / 3.0 + 1e-12, "nu = {nu}: C = {c}");
    }
}
