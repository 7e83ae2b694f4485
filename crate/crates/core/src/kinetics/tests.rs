use super::*;
use proptest::prelude::*;

pub(crate) fn test_emitter() -> EmitterParams {
    EmitterParams {
        lifetime_excited: 5.2e-9,
        sat_power_resonant: 100e-9,
        ion_coeff_green: 3.0e9,
        ion_coeff_res: 7.8e9,
        rec_coeff_green: 1.8e6,
        detect_eff: 4e-4,
        bg_dark_cps: 20.0,
        bg_green_cps_per_w: 15e6,
        center_frequency: 484.13e12,
        spectral_diffusion: SpectralDiffusionParams::default(),
    }
}

/// Classic fixed-step RK4, independent of the matrix exponential.
fn rk4(rates: &RateSet, p0: &StateVector, t: f64, h: f64) -> [f64; 3] {
    let g = rates.generator();
    let f = |p: [f64; 3]| -> [f64; 3] {
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..3).map(|j| g[(i, j)] * p[j]).sum();
        }
        out
    };
    let n = (t / h).round() as usize;
    let h = t / n as f64;
    let mut p = [p0.p_ground, p0.p_excited, p0.p_dark];
    let axpy =
        |a: [f64; 3], s: f64, b: [f64; 3]| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]];
    for _ in 0..n {
        let k1 = f(p);
        let k2 = f(axpy(p, h / 2.0, k1));
        let k3 = f(axpy(p, h / 2.0, k2));
        let k4 = f(axpy(p, h, k3));
        for i in 0..3 {
            p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    p
}

fn rates(kp: f64, gamma: f64, ki: f64, kr: f64) -> RateSet {
    RateSet {
        k_pump: kp,
        k_stim: kp,
        gamma_sp: gamma,
        k_ion: ki,
        k_rec: kr,
    }
}

#[test]
fn unit_saturation_on_resonance_gives_quarter_excited() {
    let mut e = test_emitter();
    e.ion_coeff_res = 0.0;
    let laser = LaserState::new(e.sat_power_resonant, 0.0, 0.0);
    let r = build_rates(&e, &laser).unwrap();
    assert!((r.p_excited_qss() - 0.25).abs() < 1e-15);
    assert!((e.excited_fraction(&laser) - 0.25).abs() < 1e-15);
    let ss = steady_state(&r);
    assert!(ss.unique == false);
    assert!((ss.state.p_excited - 0.25).abs() < 1e-12);
}

#[test]
fn no_drive_leaves_only_spontaneous_emission() {
    let e = test_emitter();
    let r = build_rates(&e, &LaserState::off()).unwrap();
    assert_eq!(r.k_pump, 0.0);
    assert_eq!(r.k_stim, 0.0);
    assert_eq!(r.k_ion, 0.0);
    assert_eq!(r.k_rec, 0.0);
    assert_eq!(r.gamma_sp, 1.0 / 5.2e-9);
}

#[test]
fn natural_linewidth_for_5_2_ns() {
    let e = test_emitter();
    let mhz = e.natural_linewidth() / 1e6;
    assert!((mhz - 30.6).abs() < 0.1, "{mhz}");
}

#[test]
fn negative_power_is_rejected() {
    let e = test_emitter();
    assert!(build_rates(&e, &LaserState::new(-1e-9, 0.0, 0.0)).is_err());
    assert!(build_rates(&e, &LaserState::new(0.0, 0.0, -1e-6)).is_err());
    assert!(build_rates(&e, &LaserState::new(0.0, f64::NAN, 0.0)).is_err());
}

#[test]
fn emitter_validation() {
    let mut e = test_emitter();
    assert!(e.validate().is_ok());
    e.detect_eff = 0.0;
    assert!(e.validate().is_err());
    e = test_emitter();
    e.lifetime_excited = 0.0;
    assert!(e.validate().is_err());
    e = test_emitter();
    e.spectral_diffusion.jump_prob_per_init_pulse = 1.5;
    assert!(e.validate().is_err());
}

#[test]
fn steady_state_conventions() {
    let none = steady_state(&rates(0.0, 1e8, 0.0, 0.0));
    assert_eq!(none.state, StateVector::bright_ground());
    assert!(!none.unique);

    let absorbing = steady_state(&rates(1e6, 1e8, 1e3, 0.0));
    assert_eq!(absorbing.state, StateVector::dark());
    assert!(absorbing.unique);

    let no_ion = steady_state(&rates(1e6, 1e8, 0.0, 5.0));
    assert_eq!(no_ion.state.p_dark, 0.0);
}

#[test]
fn steady_state_is_long_time_limit() {
    let cases = [
        rates(3e6, 1.9e8, 2e3, 50.0),
        rates(1.0, 2.0, 3.0, 4.0),
        rates(5e4, 1e5, 30.0, 0.7),
    ];
    for r in cases {
        let ss = steady_state(&r);
        let slowest = (r.k_ion * r.p_excited_qss() + r.k_rec).min(r.k_pump + r.gamma_sp);
        let t = 60.0 / slowest;
        let p = propagate(&r, &StateVector::bright_ground(), t);
        assert!((p.p_ground - ss.state.p_ground).abs() < 1e-9, "{r:?}");
        assert!((p.p_excited - ss.state.p_excited).abs() < 1e-9, "{r:?}");
        assert!((p.p_dark - ss.state.p_dark).abs() < 1e-9, "{r:?}");
    }
}

#[test]
fn propagate_identity_at_zero() {
    let p0 = StateVector::new(0.2, 0.3, 0.5);
    assert_eq!(propagate(&rates(1.0, 2.0, 3.0, 4.0), &p0, 0.0), p0);
}

#[test]
fn propagate_pure_recovery_is_exponential() {
    let r = rates(0.0, 1.9e8, 0.0, 37.0);
    for t in [1e-3, 0.01, 0.05, 0.2] {
        let p = propagate(&r, &StateVector::dark(), t);
        let want = (-37.0 * t).exp();
        assert!(
            (p.p_dark - want).abs() <= 1e-9 * want.max(1e-3),
            "t={t}: {} vs {want}",
            p.p_dark
        );
    }
}

#[test]
fn propagate_matches_rk4() {
    let cases = [
        rates(1.0, 2.0, 3.0, 4.0),
        rates(0.3, 1.0, 0.8, 0.05),
        rates(2e5, 1e6, 5e4, 2e4),
        rates(7.0, 1.0, 2.5, 9.0),
    ];
    for r in cases {
        let t = 5.0 / r.max_rate();
        let h = 1e-3 / r.max_rate();
        for p0 in [
            StateVector::bright_ground(),
            StateVector::dark(),
            StateVector::new(0.1, 0.6, 0.3),
        ] {
            let got = propagate(&r, &p0, t);
            let want = rk4(&r, &p0, t, h);
            assert!((got.p_ground - want[0]).abs() < 1e-6);
            assert!((got.p_excited - want[1]).abs() < 1e-6);
            assert!((got.p_dark - want[2]).abs() < 1e-6);
        }
    }
}

#[test]
fn telegraph_without_ionization_stays_bright() {
    let t = effective_telegraph(&rates(1e6, 1e8, 0.0, 0.0)).unwrap();
    assert_eq!(t.k_off, 0.0);
    assert_eq!(t.p_bright_ss, 1.0);
}

#[test]
fn telegraph_requires_separation() {
    let err = effective_telegraph(&rates(10.0, 100.0, 5.0, 0.0)).unwrap_err();
    assert!(matches!(
        err,
        KineticsError::TimescaleSeparationViolated { .. }
    ));
}

#[test]
fn expected_count_rate_examples() {
    let e = test_emitter();
    let off = LaserState::off();
    let s = StateVector::bright_ground();
    assert_eq!(expected_count_rate(&e, &off, &s), e.bg_dark_cps);

    let st = StateVector::new(0.9, 0.1, 0.0);
    let l1 = LaserState::new(5e-9, 0.0, 10e-6);
    let l2 = LaserState::new(5e-9, 0.0, 20e-6);
    let diff = expected_count_rate(&e, &l2, &st) - expected_count_rate(&e, &l1, &st);
    assert!((diff - e.bg_green_cps_per_w * 10e-6).abs() < 1e-9);
}

/// Bisection for the half-maximum detuning of the analytic excited fraction.
fn half_max_detuning(e: &EmitterParams, res_power: f64) -> f64 {
    let peak = e.excited_fraction(&LaserState::new(res_power, 0.0, 0.0));
    let f = |d: f64| e.excited_fraction(&LaserState::new(res_power, d, 0.0)) - 0.5 * peak;
    let (mut lo, mut hi) = (0.0, 100.0 * e.natural_linewidth());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn power_broadening_law() {
    let e = test_emitter();
    for s in [0.01, 1.0, 10.0] {
        let fwhm = 2.0 * half_max_detuning(&e, s * e.sat_power_resonant);
        let want = e.natural_linewidth() * (1.0 + s).sqrt();
        assert!((fwhm / want - 1.0).abs() < 1e-3, "s={s}: {fwhm} vs {want}");
        assert!((e.broadened_linewidth(s * e.sat_power_resonant) / want - 1.0).abs() < 1e-12);
    }
}

fn arb_rates() -> impl Strategy<Value = RateSet> {
    (
        -2.0f64..8.0,
        5.0f64..9.0,
        -3.0f64..5.0,
        -3.0f64..4.0,
        prop::bool::ANY,
        prop::bool::ANY,
    )
        .prop_map(|(kp, g, ki, kr, zi, zr)| {
            rates(
                10f64.powf(kp),
                10f64.powf(g),
                if zi { 0.0 } else { 10f64.powf(ki) },
                if zr { 0.0 } else { 10f64.powf(kr) },
            )
        })
}

proptest! {
    #[test]
    fn probability_is_conserved(r in arb_rates(), t in 0.0f64..10.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let p0 = StateVector::new(a * b, a * (1.0 - b), 1.0 - a);
        let p = propagate(&r, &p0, t);
        prop_assert!((p.sum() - 1.0).abs() < 1e-9);
        prop_assert!(p.p_ground >= 0.0 && p.p_excited >= 0.0 && p.p_dark >= 0.0);
        let ss = steady_state(&r);
        prop_assert!((ss.state.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn telegraph_matches_steady_state(r in arb_rates()) {
        prop_assume!(r.separation_ratio() >= 1000.0 && r.k_ion > 0.0 && r.k_rec > 0.0);
        let t = effective_telegraph(&r).unwrap();
        let ss = steady_state(&r);
        let exact_bright = 1.0 - ss.state.p_dark;
        prop_assert!((t.p_bright_ss - exact_bright).abs() <= 0.01 * exact_bright.max(1e-300) + 1e-12,
            "{} vs {}", t.p_bright_ss, exact_bright);
    }

    #[test]
    fn saturation_is_monotone_and_bounded(p1 in 0.0f64..1e-5, dp in 1e-15f64..1e-5, det in -1e8f64..1e8) {
        let e = test_emitter();
        let a = e.excited_fraction(&LaserState::new(p1, det, 0.0));
        let b = e.excited_fraction(&LaserState::new(p1 + dp, det, 0.0));
        prop_assert!(b > a);
        prop_assert!(b < 0.5);
    }

    #[test]
    fn ionization_is_linear_in_each_power(pr in 0.0f64..1e-7, pg in 0.0f64..1e-4, k in 0.0f64..5.0) {
        let e = test_emitter();
        let r1 = build_rates(&e, &LaserState::new(pr, 0.0, pg)).unwrap();
        let rg = build_rates(&e, &LaserState::new(pr, 0.0, k * pg)).unwrap();
        let rr = build_rates(&e, &LaserState::new(k * pr, 0.0, pg)).unwrap();
        let green_part = e.ion_coeff_green * pg;
        let res_part = e.ion_coeff_res * pr;
        let tol = 1e-9 * (r1.k_ion + rg.k_ion + rr.k_ion + 1.0);
        prop_assert!((rg.k_ion - (k * green_part + res_part)).abs() < tol);
        prop_assert!((rr.k_ion - (green_part + k * res_part)).abs() < tol);
        prop_assert!((rg.k_rec - k * r1.k_rec).abs() <= 1e-9 * (rg.k_rec + 1.0));
        let zero = build_rates(&e, &LaserState::off()).unwrap();
        prop_assert_eq!(zero.k_ion, 0.0);
    }

    #[test]
    fn argmax_detuning_ignores_detection_efficiency(eta in 1e-4f64..1.0, pr in 1e-10f64..1e-6) {
        let mut e = test_emitter();
        let grid: Vec<f64> = (-50..=50).map(|i| i as f64 * 2e6 + 0.3e6).collect();
        let argmax = |e: &EmitterParams| {
            grid.iter().copied().max_by(|&a, &b| {
                let ca = expected_count_rate(e, &LaserState::new(pr, a, 0.0),
                    &StateVector::new(0.0, e.excited_fraction(&LaserState::new(pr, a, 0.0)), 0.0));
                let cb = expected_count_rate(e, &LaserState::new(pr, b, 0.0),
                    &StateVector::new(0.0, e.excited_fraction(&LaserState::new(pr, b, 0.0)), 0.0));
                ca.partial_cmp(&cb).unwrap()
            }).unwrap()
        };
        let before = argmax(&e);
        e.detect_eff = eta;
        prop_assert_eq!(argmax(&e), before);
    }
}

#[test]
fn emitter_file_round_trip() {
    let mut e = test_emitter();
    e.spectral_diffusion = SpectralDiffusionParams {
        jump_prob_per_init_pulse: 0.25,
        jump_sigma: 12e6,
    };
    let text = serialize_emitter(&e, Some("fixture"));
    assert!(text.starts_with("# fixture\n"));
    assert!(text.contains("lifetime_ns = 5.2\n"));
    let back = parse_emitter(&text).unwrap();
    assert_eq!(back, e);
    assert_eq!(serialize_emitter(&back, Some("fixture")), text);
}

#[test]
fn emitter_file_errors_name_the_line() {
    let e = test_emitter();
    let text = serialize_emitter(&e, None).replace("detect_eff = 0.0004", "detect_eff = 1.5");
    match parse_emitter(&text).unwrap_err() {
        crate::kv::KvError::Semantic { key, line, .. } => {
            assert_eq!(key, "detect_eff");
            assert_eq!(line, 7);
        }
        other => panic!("{other:?}"),
    }
    let text = serialize_emitter(&e, None).replace("bg_dark_cps", "bg_dark_counts");
    assert!(matches!(
        parse_emitter(&text),
        Err(crate::kv::KvError::Semantic { .. })
    ));
    let text = serialize_emitter(&e, None).replace("lifetime_ns = 5.2\n", "");
    assert!(parse_emitter(&text).is_err());
}
