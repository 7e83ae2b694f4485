//! ```text
//! [ple]
//! mode = res_only        # res_only | init_then_scan | simultaneous
//! n_scans = 20
//! n_maps = 1             # independent maps, pooled in the statistics
//! filter = all           # or terminated_then_complete
//!
//! [scan]                 # all optional
//! f_min_MHz = -250
//! f_max_MHz = 250
//! step_MHz = 2
//! dwell_ms = 10
//! res_power_nW = 0.9
//! green_power_uW = 1
//! init_ms = 50
//!
//! [gating]               # all optional
//! min_linewidth_MHz = 20
//! min_peak_to_bg = 2
//! max_fit_rms = 50
//! ```

#![allow(non_snake_case)] // JSON keys carry their units

use rayon::prelude::*;
use serde::Serialize;
use snvsim_core::analysis::{fit_lorentzian, hist_fwhm, FitResult, GatingRules};
use snvsim_core::ple::{generate_ple_with, pooled, scan_statistics_filtered, ScanFilter, ScanMap, ScanStatistics};
use snvsim_core::pulse::scan::{PleDrive, PleMode, ScanConfig};
use snvsim_core::units::{self, Unit};

use super::gnuplot_script;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::Output;
use crate::RunArgs;

#[derive(Serialize)]
struct Exclusion {
    scan: usize,
    reason: String,
}

#[derive(Serialize)]
struct MapStatistics {
    map: usize,
    n_scans: usize,
    n_accepted: usize,
    centers_MHz: Vec<f64>,
    linewidths_MHz: Vec<f64>,
    center_fwhm_MHz: Option<f64>,
    linewidth_fwhm_MHz: Option<f64>,
    exclusions: Vec<Exclusion>,
    empty_reason: Option<String>,
    true_center_min_MHz: f64,
    true_center_max_MHz: f64,
    /// Lorentzian fit of the spectrum summed over all scans of the map.
    summed_fwhm_MHz: Option<f64>,
    summed_center_MHz: Option<f64>,
}

#[derive(Serialize)]
struct Pooled {
    n_accepted: usize,
    centers_MHz: Vec<f64>,
    linewidths_MHz: Vec<f64>,
    center_fwhm_MHz: Option<f64>,
    linewidth_fwhm_MHz: Option<f64>,
}

#[derive(Serialize)]
struct Statistics {
    mode: &'static str,
    seed: u64,
    n_maps: usize,
    n_scans: usize,
    filter: &'static str,
    res_power_nW: f64,
    green_power_uW: f64,
    peak_linewidth_MHz: f64,
    gating: GatingMHz,
    maps: Vec<MapStatistics>,
    pooled: Pooled,
}

#[derive(Serialize)]
struct GatingMHz {
    min_linewidth_MHz: f64,
    min_peak_to_bg: f64,
    max_fit_rms: Option<f64>,
}

fn mhz(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| units::from_si(x, Unit::Megahertz)).collect()
}

fn map_statistics(k: usize, map: &ScanMap, stats: &ScanStatistics) -> MapStatistics {
    let summed: Option<FitResult> = fit_lorentzian(&map.detuning_grid, &map.sum_spectrum())
        .ok()
        .filter(|f| f.converged);
    let (lo, hi) = map
        .true_center_log
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &c| (a.min(c), b.max(c)));
    MapStatistics {
        map: k,
        n_scans: map.n_scans(),
        n_accepted: stats.centers.len(),
        centers_MHz: mhz(&stats.centers),
        linewidths_MHz: mhz(&stats.linewidths),
        center_fwhm_MHz: stats.center_fwhm.map(|v| v / 1e6),
        linewidth_fwhm_MHz: stats.linewidth_fwhm.map(|v| v / 1e6),
        exclusions: stats
            .fits
            .iter()
            .filter_map(|f| {
                f.excluded.as_ref().map(|r| Exclusion {
                    scan: f.scan,
                    reason: r.clone(),
                })
            })
            .collect(),
        empty_reason: stats.empty_reason.clone(),
        true_center_min_MHz: lo / 1e6,
        true_center_max_MHz: hi / 1e6,
        summed_fwhm_MHz: summed.as_ref().map(|f| f.get("fwhm") / 1e6),
        summed_center_MHz: summed.as_ref().map(|f| f.get("center") / 1e6),
    }
}

pub fn run(args: &RunArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(args, &["ple", "scan", "gating"])?;
    let bad = |m: String| CliError::Config(format!("{}: {m}", cfg.path.display()));
    let run = cfg.run_section();
    if run.has("sequence") || run.has("sequence_file") {
        return Err(bad("ple builds its own scan program; remove `sequence` from [run]".into()));
    }
    if args.reps_override.is_some() {
        eprintln!("snvsim: --reps-override has no effect on ple (scan maps have no repetitions)");
    }

    let sec = cfg.section("ple").ok_or_else(|| bad("missing [ple] section".into()))?;
    sec.reject_unknown(&["mode", "n_scans", "n_maps", "filter"]).map_err(|e| cfg.err(e))?;
    let mode_name = sec.str("mode").map_err(|e| cfg.err(e))?;
    let mode = PleMode::parse(mode_name)
        .ok_or_else(|| bad(format!("mode `{mode_name}` is not res_only, init_then_scan or simultaneous")))?;
    let n_scans = sec.u64("n_scans").map_err(|e| cfg.err(e))? as usize;
    if n_scans == 0 {
        return Err(bad("n_scans must be at least 1".into()));
    }
    let n_maps = sec.opt_u64("n_maps").map_err(|e| cfg.err(e))?.unwrap_or(1) as usize;
    if n_maps == 0 {
        return Err(bad("n_maps must be at least 1".into()));
    }
    let (filter, filter_name) = match sec.opt_str("filter").unwrap_or("all") {
        "all" => (ScanFilter::All, "all"),
        "terminated_then_complete" => (ScanFilter::TerminatedThenComplete, "terminated_then_complete"),
        other => return Err(bad(format!("filter `{other}` is not all or terminated_then_complete"))),
    };

    let mut scan = ScanConfig::default();
    let mut drive = PleDrive::for_mode(mode);
    if let Some(s) = cfg.section("scan") {
        s.reject_unknown(&[
            "f_min_MHz",
            "f_max_MHz",
            "step_MHz",
            "dwell_ms",
            "res_power_nW",
            "green_power_uW",
            "init_ms",
        ])
        .map_err(|e| cfg.err(e))?;
        let slots: [(&str, Unit, &mut f64); 7] = [
            ("f_min_MHz", Unit::Megahertz, &mut scan.f_min),
            ("f_max_MHz", Unit::Megahertz, &mut scan.f_max),
            ("step_MHz", Unit::Megahertz, &mut scan.step),
            ("dwell_ms", Unit::Millisecond, &mut scan.dwell),
            ("res_power_nW", Unit::Nanowatt, &mut drive.res_power),
            ("green_power_uW", Unit::Microwatt, &mut drive.green_power),
            ("init_ms", Unit::Millisecond, &mut drive.init_duration),
        ];
        for (key, unit, slot) in slots {
            if let Some(v) = s.opt_f64(key, unit).map_err(|e| cfg.err(e))? {
                *slot = v;
            }
        }
    }
    let mut gating = GatingRules::default();
    if let Some(s) = cfg.section("gating") {
        s.reject_unknown(&["min_linewidth_MHz", "min_peak_to_bg", "max_fit_rms"])
            .map_err(|e| cfg.err(e))?;
        if let Some(v) = s.opt_f64("min_linewidth_MHz", Unit::Megahertz).map_err(|e| cfg.err(e))? {
            gating.min_linewidth = v;
        }
        if let Some(v) = s.opt_f64("min_peak_to_bg", Unit::Unitless).map_err(|e| cfg.err(e))? {
            gating.min_peak_to_bg = v;
        }
        if let Some(v) = s.opt_f64("max_fit_rms", Unit::Unitless).map_err(|e| cfg.err(e))? {
            gating.max_fit_rms = v;
        }
    }
    gating.validate().map_err(bad)?;

    let (emitter, seed, sim) = (&cfg.emitter, cfg.seed, cfg.sim);
    let maps = (0..n_maps)
        .into_par_iter()
        .map(|m| {
            let map = generate_ple_with(emitter, mode, &scan, &drive, n_scans, seed, m as u64, sim)
                .map_err(|e| bad(e.to_string()))?;
            let stats = scan_statistics_filtered(&map, &gating, filter);
            Ok((map, stats))
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let all: Vec<ScanStatistics> = maps.iter().map(|(_, s)| s.clone()).collect();
    let (pc, pw) = pooled(&all);
    let statistics = Statistics {
        mode: mode.name(),
        seed,
        n_maps,
        n_scans,
        filter: filter_name,
        res_power_nW: units::from_si(drive.res_power, Unit::Nanowatt),
        green_power_uW: units::from_si(drive.green_power, Unit::Microwatt),
        peak_linewidth_MHz: maps[0].0.peak_linewidth / 1e6,
        gating: GatingMHz {
            min_linewidth_MHz: gating.min_linewidth / 1e6,
            min_peak_to_bg: gating.min_peak_to_bg,
            max_fit_rms: gating.max_fit_rms.is_finite().then_some(gating.max_fit_rms),
        },
        maps: maps.iter().enumerate().map(|(k, (m, s))| map_statistics(k, m, s)).collect(),
        pooled: Pooled {
            n_accepted: pc.len(),
            centers_MHz: mhz(&pc),
            linewidths_MHz: mhz(&pw),
            center_fwhm_MHz: hist_fwhm(&pc).ok().map(|v| v / 1e6),
            linewidth_fwhm_MHz: hist_fwhm(&pw).ok().map(|v| v / 1e6),
        },
    };

    let mut out = Output::new(&args.out, "ple");
    out.inputs(&cfg.inputs).seed(seed, None);
    for (k, (map, _)) in maps.iter().enumerate() {
        if cfg.formats.csv {
            out.add(format!("scan_map_{k:02}.csv"), map.to_csv())
                .add(format!("scan_map_{k:02}.meta"), map.sidecar_text());
        }
        if cfg.formats.gnuplot {
            out.add(
                format!("scan_map_{k:02}.gp"),
                format!(
                    "set datafile separator ','\nset xlabel 'detuning (MHz)'\nset ylabel 'scan'\nset view map\n\
                     splot 'scan_map_{k:02}.csv' skip 1 using 2:1:3 with points pointtype 5 palette\n"
                ),
            );
        }
    }
    if cfg.formats.json {
        out.json("statistics.json", &statistics);
    }
    if cfg.formats.csv {
        let mut csv = String::from("map, scan, center_MHz, fwhm_MHz, accepted\n");
        for (k, (_, s)) in maps.iter().enumerate() {
            for f in &s.fits {
                if let Some(fit) = &f.fit {
                    csv.push_str(&format!(
                        "{k},{},{},{},{}\n",
                        f.scan,
                        fit.get("center") / 1e6,
                        fit.get("fwhm") / 1e6,
                        u8::from(f.excluded.is_none())
                    ));
                }
            }
        }
        out.add("scan_fits.csv", csv);
        if cfg.formats.gnuplot {
            out.add(
                "centers.gp",
                gnuplot_script("scan_fits.csv", "fitted centres", "centre (MHz)", "count", "3:(1.0) smooth frequency", "boxes"),
            );
        }
    }
    let dir = out.finish()?;
    let p = &statistics.pooled;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3} MHz"));
    println!(
        "{} maps x {} scans ({}): {} accepted, centre FWHM {}, linewidth FWHM {} -> {}",
        n_maps,
        n_scans,
        mode.name(),
        p.n_accepted,
        fmt(p.center_fwhm_MHz),
        fmt(p.linewidth_fwhm_MHz),
        dir.display()
    );
    if p.n_accepted == 0 {
        for m in &statistics.maps {
            if let Some(r) = &m.empty_reason {
                println!("map {}: {r}", m.map);
            }
        }
    }
    Ok(())
}
