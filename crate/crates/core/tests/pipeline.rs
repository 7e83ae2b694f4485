//! End-to-end use of the library through its public API, on the shipped
//! emitter fixtures.

use std::fs;
use std::path::PathBuf;

use snvsim_core::analysis::{fit_exp_decay, GatingRules};
use snvsim_core::calibrate::{calibrate, fixture_text, parse_targets, verify};
use snvsim_core::kinetics::{build_rates, effective_telegraph, parse_emitter, serialize_emitter, EmitterParams};
use snvsim_core::ple::{generate_ple_with, parse_scan_map, scan_statistics};
use snvsim_core::pulse::canonical::build_canonical;
use snvsim_core::pulse::scan::{PleDrive, PleMode, ScanConfig};
use snvsim_core::ssa::{parse_trace, simulate_ensemble, SimOptions};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn emitter(id: &str) -> EmitterParams {
    let text = fs::read_to_string(fixtures().join(format!("emitters/emitter{id}.emitter"))).unwrap();
    parse_emitter(&text).unwrap()
}

#[test]
fn emitter_fixtures_round_trip() {
    for id in ["01", "02", "12", "13", "14"] {
        let e = emitter(id);
        assert_eq!(parse_emitter(&serialize_emitter(&e, None)).unwrap(), e, "emitter {id}");
    }
}

#[test]
fn calibration_reproduces_fixtures_and_verifies() {
    for id in ["01", "02", "12", "13", "14"] {
        let text = fs::read_to_string(fixtures().join(format!("targets/emitter{id}.targets"))).unwrap();
        let set = parse_targets(&text).unwrap();
        let cal = calibrate(&set.targets, &set.frozen).unwrap();
        assert!(cal.report.all_pass(), "emitter {id}");
        let shipped = fs::read_to_string(fixtures().join(format!("emitters/emitter{id}.emitter"))).unwrap();
        assert_eq!(fixture_text(&cal, set.note.as_deref()), shipped, "emitter {id}");
        assert!(verify(&emitter(id), &set.targets).all_pass());
    }
}

#[test]
fn simulated_decay_matches_the_telegraph_rate() {
    let e = emitter("12");
    let seq = build_canonical("simultaneous", None).unwrap();
    let trace = simulate_ensemble(&e, &seq, 12).unwrap();

    let pulse = trace.segment_range(1);
    let t0 = trace.bin_start[pulse.start];
    let t: Vec<f64> = pulse.clone().map(|b| 0.5 * (trace.bin_start[b] + trace.bin_end[b]) - t0).collect();
    let y: Vec<f64> = trace.counts[pulse].iter().map(|&c| c as f64).collect();
    let fit = fit_exp_decay(&t, &y).unwrap();

    let expected = effective_telegraph(&build_rates(&e, &seq.segments[1].laser).unwrap())
        .unwrap()
        .relaxation_rate();
    let (rate, err) = (fit.params["rate"], fit.std_errors["rate"]);
    assert!((rate - expected).abs() < 4.0 * err, "{rate} ± {err} vs {expected}");

    let again = parse_trace(&trace.to_csv(), &trace.meta_text()).unwrap();
    assert_eq!(again, trace);
}

#[test]
fn ple_maps_are_keyed_by_index() {
    let e = emitter("02");
    let scan = ScanConfig {
        f_min: -100e6,
        f_max: 100e6,
        ..ScanConfig::default()
    };
    let drive = PleDrive::for_mode(PleMode::ResOnly);
    let map = |k| generate_ple_with(&e, PleMode::ResOnly, &scan, &drive, 5, 2, k, SimOptions::default()).unwrap();
    let (a, b) = (map(0), map(1));
    assert_eq!(a, map(0));
    assert_ne!(a.scans, b.scans);

    let parsed = parse_scan_map(&a.to_csv(), &a.sidecar_text()).unwrap();
    assert_eq!(parsed.scans, a.scans);
    assert_eq!(parsed.detuning_grid, a.detuning_grid);
    let stats = scan_statistics(&a, &GatingRules::default());
    assert_eq!(stats.fits.len(), 5);
    assert_eq!(stats.centers.len(), stats.fits.iter().filter(|f| f.excluded.is_none()).count());
}
