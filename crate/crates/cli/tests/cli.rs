use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use snvsim_core::ple::parse_scan_map;
use snvsim_core::ssa::{parse_trace, sha256_hex};
use tempfile::TempDir;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn fixture(rel: &str) -> String {
    root().join(rel).display().to_string()
}

fn snvsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snvsim"))
        .args(args)
        .current_dir(root())
        .env_remove("SNVSIM_OUT_DIR")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> Output {
    let o = snvsim(args);
    assert!(o.status.success(), "snvsim {args:?} failed: {}", stderr(&o));
    o
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn short_simultaneous(dir: &Path) -> String {
    write(
        dir,
        "sim.conf",
        &format!(
            "[run]\nemitter = {}\nsequence = simultaneous\nseed = 3\nformats = csv, json, gnuplot\n\n[overrides]\nrepetitions = 300\n",
            fixture("fixtures/emitters/emitter12.emitter")
        ),
    )
}

#[test]
fn missing_emitter_is_a_config_error_naming_the_path() {
    let d = TempDir::new().unwrap();
    let cfg = write(d.path(), "a.conf", "[run]\nemitter = nowhere/missing.emitter\nsequence = simultaneous\nseed = 1\n");
    let o = snvsim(&["simulate", "--config", &cfg, "--out", s(&d.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere/missing.emitter"), "{}", stderr(&o));
    assert!(!d.path().join("out").exists());
}

#[test]
fn missing_config_and_seed_are_config_errors() {
    let d = TempDir::new().unwrap();
    let o = snvsim(&["simulate", "--config", "no/such.conf"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no/such.conf"));

    let cfg = write(
        d.path(),
        "a.conf",
        &format!("[run]\nemitter = {}\nsequence = simultaneous\n", fixture("fixtures/emitters/emitter12.emitter")),
    );
    let o = snvsim(&["simulate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
}

#[test]
fn bad_config_keys_and_flags_are_rejected() {
    let d = TempDir::new().unwrap();
    let e = fixture("fixtures/emitters/emitter12.emitter");
    for (name, text) in [
        ("unknown_key.conf", format!("[run]\nemitter = {e}\nsequence = simultaneous\nseed = 1\ncolour = red\n")),
        ("unknown_section.conf", format!("[run]\nemitter = {e}\nsequence = simultaneous\nseed = 1\n[extra]\n")),
        ("unknown_sequence.conf", format!("[run]\nemitter = {e}\nsequence = nope\nseed = 1\n")),
        ("bad_format.conf", format!("[run]\nemitter = {e}\nsequence = simultaneous\nseed = 1\nformats = png\n")),
        (
            "bad_override.conf",
            format!("[run]\nemitter = {e}\nsequence = resonant_only\nseed = 1\n[overrides]\ngreen_power_uW = 3\n"),
        ),
    ] {
        let cfg = write(d.path(), name, &text);
        let o = snvsim(&["simulate", "--config", &cfg, "--out", s(&d.path().join("out"))]);
        assert_eq!(o.status.code(), Some(2), "{name}: {}", stderr(&o));
    }
    let cfg = short_simultaneous(d.path());
    assert_eq!(snvsim(&["simulate", "--config", &cfg, "--threads", "0"]).status.code(), Some(2));
    assert_eq!(snvsim(&["simulate", "--config", &cfg, "--reps-override", "0"]).status.code(), Some(2));
}

#[test]
fn simulate_is_reproducible_and_seed_sensitive() {
    let d = TempDir::new().unwrap();
    let cfg = short_simultaneous(d.path());
    let run = |tag: &str, extra: &[&str]| {
        let out = d.path().join(tag);
        let mut a = vec!["simulate", "--config", &cfg, "--out", s(&out)];
        a.extend_from_slice(extra);
        ok(&a);
        fs::read(out.join("trace.csv")).unwrap()
    };
    let a = run("a", &[]);
    assert_eq!(a, run("b", &[]));
    assert_eq!(a, run("c", &["--threads", "2"]));
    assert_ne!(a, run("d", &["--seed", "4"]));
}

#[test]
fn simulate_outputs_round_trip_and_agree() {
    let d = TempDir::new().unwrap();
    let cfg = short_simultaneous(d.path());
    let out = d.path().join("out");
    ok(&["simulate", "--config", &cfg, "--out", s(&out), "--reps-override", "200"]);
    let csv = fs::read_to_string(out.join("trace.csv")).unwrap();
    let meta = fs::read_to_string(out.join("trace.meta")).unwrap();
    let trace = parse_trace(&csv, &meta).unwrap();
    assert_eq!(trace.to_csv(), csv);
    assert_eq!(trace.meta_text(), meta);
    assert_eq!(trace.meta.seed, 3);
    assert_eq!(trace.n_reps, 200);

    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["n_reps"], 200);
    assert_eq!(summary["total_counts"].as_u64().unwrap(), trace.counts.iter().sum::<u64>());
    for seg in summary["segments"].as_array().unwrap() {
        let i = seg["index"].as_u64().unwrap() as usize;
        assert_eq!(seg["counts"].as_u64().unwrap(), trace.segment_total(i));
    }
    assert!(fs::read_to_string(out.join("trace.gp")).unwrap().contains("trace.csv"));

    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["reps_override"], 200);
    assert_eq!(manifest["inputs"][0]["sha256"], sha256_hex(&fs::read_to_string(&cfg).unwrap()));
    for o in manifest["outputs"].as_array().unwrap() {
        let text = fs::read_to_string(out.join(o["path"].as_str().unwrap())).unwrap();
        assert_eq!(o["sha256"], sha256_hex(&text));
    }
}

#[test]
fn output_directory_defaults_to_the_environment() {
    let d = TempDir::new().unwrap();
    let cfg = short_simultaneous(d.path());
    let out = d.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_snvsim"))
        .args(["simulate", "--config", &cfg])
        .env("SNVSIM_OUT_DIR", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("manifest.json").exists());
}

#[test]
fn sequence_files_are_resolved_next_to_the_config() {
    let d = TempDir::new().unwrap();
    write(
        d.path(),
        "two.seq",
        "[sequence]\nrepetitions = 50\nbin_width_us = 100\nseed_label = two\n\n[segment]\nlabel = green\nduration_ms = 1\ngreen_power_uW = 10\nrecord = false\n\n[segment]\nlabel = both\nduration_ms = 1\nres_power_nW = 5\ngreen_power_uW = 10\n",
    );
    let cfg = write(
        d.path(),
        "seq.conf",
        &format!("[run]\nemitter = {}\nsequence_file = two.seq\nseed = 1\n", fixture("fixtures/emitters/emitter12.emitter")),
    );
    let out = d.path().join("out");
    ok(&["simulate", "--config", &cfg, "--out", s(&out)]);
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["segments"][1]["label"], "both");
    assert_eq!(json(&out.join("manifest.json"))["inputs"].as_array().unwrap().len(), 3);
}

fn sweep_config(dir: &Path, values: &str) -> String {
    write(
        dir,
        "sweep.conf",
        &format!(
            "[run]\nemitter = {}\nsequence = decay_point\nseed = 5\n\n[overrides]\nrepetitions = 2000\n\n[sweep]\naxis = res_power\nvalues = {values}\n",
            fixture("fixtures/emitters/emitter14.emitter")
        ),
    )
}

#[test]
fn single_value_sweep_gives_one_row_and_a_degenerate_fit() {
    let d = TempDir::new().unwrap();
    let cfg = sweep_config(d.path(), "3");
    let out = d.path().join("out");
    ok(&["sweep", "--config", &cfg, "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "{csv}");
    assert!(csv.starts_with("power_nW, rate_Hz, rate_err_Hz\n"));
    assert!(csv.lines().nth(1).unwrap().starts_with("3,"));
    let fit = json(&out.join("sweep_fit.json"));
    assert_eq!(fit["fit"]["degenerate"], true);
}

#[test]
fn sweep_table_parses_back_through_fit() {
    let d = TempDir::new().unwrap();
    let cfg = sweep_config(d.path(), "1, 3, 5");
    let out = d.path().join("out");
    ok(&["sweep", "--config", &cfg, "--out", s(&out)]);
    let sweep = json(&out.join("sweep_fit.json"));
    let refit = d.path().join("refit");
    ok(&["fit", s(&out.join("sweep.csv")), "--model", "linear", "--out", s(&refit)]);
    let f = json(&refit.join("fit.json"));
    assert_eq!(f["params"]["slope"], sweep["fit"]["params"]["slope"]);
    let points = json(&out.join("points.json"));
    assert_eq!(points.as_array().unwrap().len(), 3);
    assert!(sweep["fit"]["params"]["slope"].as_f64().unwrap() > 0.0);
}

#[test]
fn sweep_rejects_bad_sections() {
    let d = TempDir::new().unwrap();
    let e = fixture("fixtures/emitters/emitter14.emitter");
    for (name, body) in [
        ("no_sweep", String::new()),
        ("axis", "[sweep]\naxis = blue\nvalues = 1\n".into()),
        ("empty", "[sweep]\naxis = res_power\nvalues = \n".into()),
        ("negative", "[sweep]\naxis = res_power\nvalues = 1, -2\n".into()),
        ("segment", "[sweep]\naxis = res_power\nvalues = 1\nfit_segment = nope\n".into()),
        ("window", "[sweep]\naxis = res_power\nvalues = 1, 2\nwindow_min = 5\n".into()),
    ] {
        let cfg = write(d.path(), &format!("{name}.conf"), &format!("[run]\nemitter = {e}\nsequence = decay_point\nseed = 1\n\n[overrides]\nrepetitions = 10\n\n{body}"));
        let o = snvsim(&["sweep", "--config", &cfg, "--out", s(&d.path().join(name))]);
        assert_eq!(o.status.code(), Some(2), "{name}: {}", stderr(&o));
    }
}

fn ple_config(dir: &Path, extra: &str) -> String {
    write(
        dir,
        "ple.conf",
        &format!(
            "[run]\nemitter = {}\nseed = 2\nformats = csv, json, gnuplot\n\n{extra}",
            fixture("fixtures/emitters/emitter02.emitter")
        ),
    )
}

#[test]
fn ple_with_zero_scans_is_a_config_error() {
    let d = TempDir::new().unwrap();
    let cfg = ple_config(d.path(), "[ple]\nmode = res_only\nn_scans = 0\n");
    let o = snvsim(&["ple", "--config", &cfg, "--out", s(&d.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("n_scans"), "{}", stderr(&o));
}

#[test]
fn ple_writes_maps_that_parse_back_and_statistics() {
    let d = TempDir::new().unwrap();
    let cfg = ple_config(d.path(), "[ple]\nmode = init_then_scan\nn_scans = 4\nn_maps = 2\n\n[scan]\nf_min_MHz = -100\nf_max_MHz = 100\n");
    let out = d.path().join("out");
    ok(&["ple", "--config", &cfg, "--out", s(&out)]);
    for k in 0..2 {
        let csv = fs::read_to_string(out.join(format!("scan_map_{k:02}.csv"))).unwrap();
        let meta = fs::read_to_string(out.join(format!("scan_map_{k:02}.meta"))).unwrap();
        let map = parse_scan_map(&csv, &meta).unwrap();
        assert_eq!(map.n_scans(), 4);
        assert_eq!(map.detuning_grid.len(), 101);
        assert_eq!(map.to_csv(), csv);
        assert!(map.init_markers.iter().all(|&m| m));
    }
    let stats = json(&out.join("statistics.json"));
    assert_eq!(stats["mode"], "init_then_scan");
    assert_eq!(stats["maps"].as_array().unwrap().len(), 2);
    assert_eq!(stats["pooled"]["n_accepted"].as_u64().unwrap() as usize, stats["pooled"]["centers_MHz"].as_array().unwrap().len());
    // Fewer than ten accepted scans: no histogram width.
    assert!(stats["pooled"]["center_fwhm_MHz"].is_null());

    let fit_out = d.path().join("fit");
    ok(&["fit", s(&out.join("scan_map_00.csv")), "--model", "lorentzian", "--scan", "1", "--out", s(&fit_out)]);
    assert_eq!(json(&fit_out.join("fit.json"))["converged"], true);
    // Without --scan the summed spectrum is fitted; it is power broadened.
    ok(&["fit", s(&out.join("scan_map_00.csv")), "--model", "lorentzian", "--out", s(&fit_out)]);
    let fwhm = json(&fit_out.join("fit.json"))["params"]["fwhm"].as_f64().unwrap();
    assert!(fwhm > 30.6e6 && fwhm < 60e6, "{fwhm}");
}

#[test]
fn ple_reports_why_nothing_passed_gating() {
    let d = TempDir::new().unwrap();
    let cfg = ple_config(d.path(), "[ple]\nmode = res_only\nn_scans = 3\n\n[gating]\nmin_linewidth_MHz = 500\n");
    let out = d.path().join("out");
    let o = ok(&["ple", "--config", &cfg, "--out", s(&out)]);
    let stats = json(&out.join("statistics.json"));
    assert_eq!(stats["pooled"]["n_accepted"], 0);
    let reason = stats["maps"][0]["empty_reason"].as_str().unwrap();
    assert!(reason.contains("linewidth"), "{reason}");
    assert_eq!(stats["maps"][0]["exclusions"].as_array().unwrap().len(), 3);
    assert!(String::from_utf8_lossy(&o.stdout).contains("no scan passed gating"));
}

#[test]
fn calibrate_reproduces_the_shipped_fixtures() {
    let d = TempDir::new().unwrap();
    for id in ["01", "02", "12", "13", "14"] {
        let out = d.path().join(id);
        ok(&["calibrate", "--config", &fixture(&format!("fixtures/targets/emitter{id}.targets")), "--out", s(&out)]);
        let fresh = fs::read_to_string(out.join(format!("emitter{id}.emitter"))).unwrap();
        let shipped = fs::read_to_string(root().join(format!("fixtures/emitters/emitter{id}.emitter"))).unwrap();
        assert_eq!(fresh, shipped, "emitter {id}");
        let report = json(&out.join("verify.json"));
        assert!(report["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
        assert!(fs::read_to_string(out.join("verify.txt")).unwrap().contains("0 failed"));
    }
}

const TARGET_HEAD: &str = "[frozen]\nlifetime_ns = 5.2\nsat_power_nW = 100\nion_coeff_res_Hz_per_nW = 7.8\nrec_coeff_green_Hz_per_uW = 1.81\ndetect_eff = 0.0004\nbg_dark_cps = 20\nbg_green_cps_per_uW = 15\ncenter_frequency_GHz = 484130\n\n";

#[test]
fn mixed_emitter_targets_are_rejected() {
    let d = TempDir::new().unwrap();
    let t = write(
        d.path(),
        "mixed.targets",
        &format!(
            "{TARGET_HEAD}[target]\nfigure = x\nemitter = 12\nobservable = decay_rate\nres_power_nW = 5\ngreen_power_uW = 11.5\nvalue_Hz = 1100\ntolerance = 0.05\n\n\
             [target]\nfigure = y\nemitter = 14\nobservable = decay_rate\nres_power_nW = 2\ngreen_power_uW = 20\nvalue_Hz = 700\ntolerance = 0.05\n"
        ),
    );
    let o = snvsim(&["calibrate", "--config", &t, "--out", s(&d.path().join("c"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mix emitters"), "{}", stderr(&o));
    let o = snvsim(&[
        "verify",
        "--emitter",
        &fixture("fixtures/emitters/emitter12.emitter"),
        "--config",
        &t,
        "--out",
        s(&d.path().join("v")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn tolerance_zero_targets_are_a_calibration_error() {
    let d = TempDir::new().unwrap();
    // Two incompatible decay rates at the same condition cannot both hold exactly.
    let t = write(
        d.path(),
        "zero.targets",
        &format!(
            "{TARGET_HEAD}[target]\nfigure = x\nemitter = 12\nobservable = decay_rate\nres_power_nW = 5\ngreen_power_uW = 11.5\nvalue_Hz = 1100\ntolerance = 0\n\n\
             [target]\nfigure = x\nemitter = 12\nobservable = decay_rate\nres_power_nW = 5\ngreen_power_uW = 11.5\nvalue_Hz = 1101\ntolerance = 0\n"
        ),
    );
    let o = snvsim(&["calibrate", "--config", &t, "--out", s(&d.path().join("c"))]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("inconsistent"), "{}", stderr(&o));
}

#[test]
fn verify_exit_code_follows_the_report() {
    let d = TempDir::new().unwrap();
    let targets = fixture("fixtures/targets/emitter12.targets");
    let out = d.path().join("v");
    let good = ok(&["verify", "--emitter", &fixture("fixtures/emitters/emitter12.emitter"), "--config", &targets, "--out", s(&out)]);
    assert!(String::from_utf8_lossy(&good.stdout).contains("2 checked, 0 failed"));

    let text = fs::read_to_string(root().join("fixtures/emitters/emitter12.emitter")).unwrap();
    let line = text.lines().find(|l| l.starts_with("ion_coeff_green_Hz_per_uW")).unwrap();
    let bad = write(d.path(), "bad.emitter", &text.replace(line, "ion_coeff_green_Hz_per_uW = 5000"));
    let o = snvsim(&["verify", "--emitter", &bad, "--config", &targets, "--out", s(&d.path().join("v2"))]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
    assert_eq!(json(&d.path().join("v2/verify.json"))["checks"][0]["pass"], false);
}

#[test]
fn fit_reads_generic_csv_and_rejects_mismatched_models() {
    let d = TempDir::new().unwrap();
    let csv = write(d.path(), "line.csv", "x, y\n1, 3\n2, 5\n3, 7\n4, 9\n");
    let out = d.path().join("f");
    ok(&["fit", &csv, "--model", "linear", "--out", s(&out)]);
    let f = json(&out.join("fit.json"));
    assert!((f["params"]["slope"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert!((f["params"]["intercept"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    let o = snvsim(&["fit", &csv, "--model", "linear", "--x", "time", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let bad = write(d.path(), "bad.csv", "x, y\n1, a\n");
    assert_eq!(snvsim(&["fit", &bad, "--model", "linear", "--out", s(&out)]).status.code(), Some(2));

    let cfg = short_simultaneous(d.path());
    let sim = d.path().join("sim");
    ok(&["simulate", "--config", &cfg, "--out", s(&sim)]);
    let trace = sim.join("trace.csv");
    let o = snvsim(&["fit", s(&trace), "--model", "lorentzian", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    // Three recorded segments: the segment must be named.
    let o = snvsim(&["fit", s(&trace), "--model", "exp-decay", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--segment"));
    ok(&["fit", s(&trace), "--model", "exp-decay", "--segment", "1", "--out", s(&out)]);
    assert_eq!(json(&out.join("fit.json"))["model"], "exp_decay");
}
