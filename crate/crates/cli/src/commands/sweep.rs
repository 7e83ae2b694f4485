//! ```text
//! [sweep]
//! axis = res_power            # or green_power
//! values = 1, 2, 3, 4, 5, 6   # nW for res_power, μW for green_power
//! observable = decay_rate     # or recovery_rate
//! fit_segment = pulse         # decay_rate: label of the segment to fit
//! window_min = 1              # optional range of the linear fit, axis units
//! window_max = 6
//! ```
//!
//! Every segment that has the swept laser on gets the new power. The
//! recovery rate is `−ln(1−q)/T` from the per-pulse recovery probability `q`
//! fitted to the readout totals, with `T` the green pulse length.

use rayon::prelude::*;
use serde::Serialize;
use snvsim_core::analysis::{fit_linear, fit_recovery_steps, FitResult};
use snvsim_core::pulse::PulseSequence;
use snvsim_core::rng::sub_seed;
use snvsim_core::ssa::{simulate_ensemble_with, BinnedTrace};
use snvsim_core::units::{self, Unit};

use super::{fit_segment_decay, gnuplot_script, segment_index};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::Output;
use crate::RunArgs;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    Res,
    Green,
}

impl Axis {
    fn unit(self) -> Unit {
        match self {
            Axis::Res => Unit::Nanowatt,
            Axis::Green => Unit::Microwatt,
        }
    }

    fn column(self) -> &'static str {
        match self {
            Axis::Res => "power_nW",
            Axis::Green => "power_uW",
        }
    }

    fn apply(self, seq: &PulseSequence, power: f64) -> PulseSequence {
        let mut seq = seq.clone();
        for s in &mut seq.segments {
            match self {
                Axis::Res if s.laser.res_power > 0.0 => s.laser.res_power = power,
                Axis::Green if s.laser.green_power > 0.0 => s.laser.green_power = power,
                _ => {}
            }
        }
        seq
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Observable {
    Decay { segment: usize },
    Recovery { readouts: Vec<usize>, green_pulse: f64 },
}

#[derive(Serialize)]
struct Point {
    power: f64,
    seed: u64,
    rate_hz: f64,
    rate_err_hz: f64,
    fit: FitResult,
}

#[derive(Serialize)]
struct SweepFit {
    axis: &'static str,
    observable: String,
    window: Option<(f64, f64)>,
    points_in_window: usize,
    fit: FitResult,
}

fn observable_rate(obs: &Observable, trace: &BinnedTrace) -> Result<(f64, f64, FitResult), CliError> {
    match obs {
        Observable::Decay { segment } => {
            let fit = fit_segment_decay(trace, *segment)?;
            Ok((fit.get("rate"), fit.err("rate"), fit))
        }
        Observable::Recovery { readouts, green_pulse } => {
            let totals: Vec<f64> = readouts.iter().map(|&i| trace.segment_total(i) as f64).collect();
            let fit = fit_recovery_steps(&totals).map_err(|e| CliError::Runtime(format!("recovery fit: {e}")))?;
            let q = fit.get("rate_per_pulse");
            if q >= 1.0 {
                return Err(CliError::Runtime(
                    "recovery completes within one pulse; shorten the green pulse to resolve the rate".into(),
                ));
            }
            let rate = -(1.0 - q).ln() / green_pulse;
            let err = fit.err("rate_per_pulse") / ((1.0 - q) * green_pulse);
            Ok((rate, err, fit))
        }
    }
}

pub fn run(args: &RunArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(args, &["overrides", "sweep"])?;
    let seq = cfg.sequence(args.reps_override)?;
    let sec = cfg
        .section("sweep")
        .ok_or_else(|| CliError::Config(format!("{}: missing [sweep] section", cfg.path.display())))?;
    sec.reject_unknown(&["axis", "values", "observable", "fit_segment", "window_min", "window_max"])
        .map_err(|e| cfg.err(e))?;
    let axis = match sec.str("axis").map_err(|e| cfg.err(e))? {
        "res_power" => Axis::Res,
        "green_power" => Axis::Green,
        other => {
            return Err(CliError::Config(format!(
                "{}: axis `{other}` is not res_power or green_power",
                cfg.path.display()
            )))
        }
    };
    let values = sec.f64_list("values", axis.unit()).map_err(|e| cfg.err(e))?;
    if values.is_empty() {
        return Err(CliError::Config(format!("{}: [sweep] values is empty", cfg.path.display())));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(CliError::Config(format!(
            "{}: sweep values must be positive, got {}",
            cfg.path.display(),
            units::format(*v, axis.unit())
        )));
    }
    let has_axis = seq.segments.iter().any(|s| match axis {
        Axis::Res => s.laser.res_power > 0.0,
        Axis::Green => s.laser.green_power > 0.0,
    });
    if !has_axis {
        return Err(CliError::Config(format!(
            "{}: no segment of the sequence has the swept laser on",
            cfg.path.display()
        )));
    }
    let obs_name = sec.opt_str("observable").unwrap_or("decay_rate").to_string();
    let obs = match obs_name.as_str() {
        "decay_rate" => {
            let label = sec.opt_str("fit_segment").unwrap_or("pulse");
            let segment = segment_index(&seq, label).map_err(|m| CliError::Config(format!("{}: {m}", cfg.path.display())))?;
            if !seq.segments[segment].record {
                return Err(CliError::Config(format!(
                    "{}: segment `{label}` is not recorded",
                    cfg.path.display()
                )));
            }
            Observable::Decay { segment }
        }
        "recovery_rate" => {
            let readouts: Vec<usize> = (0..seq.segments.len()).filter(|&i| seq.segments[i].record).collect();
            let greens: Vec<f64> = seq.segments.iter().filter(|s| s.is_green_only()).map(|s| s.duration).collect();
            if readouts.len() < 4 || greens.is_empty() {
                return Err(CliError::Config(format!(
                    "{}: recovery_rate needs green-only pulses and at least 4 recorded readouts",
                    cfg.path.display()
                )));
            }
            if greens.iter().any(|&d| d != greens[0]) {
                return Err(CliError::Config(format!(
                    "{}: recovery_rate needs green pulses of equal length",
                    cfg.path.display()
                )));
            }
            Observable::Recovery {
                readouts,
                green_pulse: greens[0],
            }
        }
        other => {
            return Err(CliError::Config(format!(
                "{}: observable `{other}` is not decay_rate or recovery_rate",
                cfg.path.display()
            )))
        }
    };
    let lo = sec.opt_f64("window_min", axis.unit()).map_err(|e| cfg.err(e))?;
    let hi = sec.opt_f64("window_max", axis.unit()).map_err(|e| cfg.err(e))?;
    let window = match (lo, hi) {
        (None, None) => None,
        (a, b) => Some((a.unwrap_or(f64::NEG_INFINITY), b.unwrap_or(f64::INFINITY))),
    };

    let (emitter, sim, seed) = (&cfg.emitter, cfg.sim, cfg.seed);
    let points = values
        .par_iter()
        .enumerate()
        .map(|(i, &p)| {
            let s = sub_seed(seed, i as u64);
            let trace = simulate_ensemble_with(emitter, &axis.apply(&seq, p), s, sim)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            let (rate_hz, rate_err_hz, fit) = observable_rate(&obs, &trace)?;
            Ok(Point {
                power: p,
                seed: s,
                rate_hz,
                rate_err_hz,
                fit,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let (x, y): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|p| window.is_none_or(|(a, b)| p.power >= a && p.power <= b))
        .map(|p| (units::from_si(p.power, axis.unit()), p.rate_hz))
        .unzip();
    if x.is_empty() {
        return Err(CliError::Config(format!("{}: no sweep value inside the fit window", cfg.path.display())));
    }
    let line = fit_linear(&x, &y).map_err(|e| CliError::Runtime(format!("linear fit: {e}")))?;
    let sweep_fit = SweepFit {
        axis: match axis {
            Axis::Res => "res_power",
            Axis::Green => "green_power",
        },
        observable: obs_name,
        window: window.map(|(a, b)| (units::from_si(a, axis.unit()), units::from_si(b, axis.unit()))),
        points_in_window: x.len(),
        fit: line,
    };

    let mut csv = format!("{}, rate_Hz, rate_err_Hz\n", axis.column());
    for p in &points {
        csv.push_str(&format!("{},{},{}\n", units::format(p.power, axis.unit()), p.rate_hz, p.rate_err_hz));
    }
    let unit_label = match axis {
        Axis::Res => "nW/Hz per nW",
        Axis::Green => "μW/Hz per μW",
    };
    let mut text = format!(
        "# linear fit of {} vs {} ({unit_label})\n",
        sweep_fit.observable, sweep_fit.axis
    );
    text.push_str(&sweep_fit.fit.to_text());

    let mut out = Output::new(&args.out, "sweep");
    out.inputs(&cfg.inputs).seed(cfg.seed, args.reps_override);
    if cfg.formats.csv {
        out.add("sweep.csv", csv);
        out.add("sweep_fit.txt", text);
    }
    if cfg.formats.json {
        out.json("sweep_fit.json", &sweep_fit).json("points.json", &points);
    }
    if cfg.formats.gnuplot {
        let xl = match axis {
            Axis::Res => "resonant power (nW)",
            Axis::Green => "green power (uW)",
        };
        let mut gp = gnuplot_script("sweep.csv", &sweep_fit.observable, xl, "rate (Hz)", "1:2:3", "yerrorbars");
        let f = &sweep_fit.fit;
        gp.push_str(&format!("replot {}*x + {} with lines\n", f.get("slope"), f.get("intercept")));
        out.add("sweep.gp", gp);
    }
    let dir = out.finish()?;
    let f = &sweep_fit.fit;
    if f.degenerate {
        println!("{} points; linear fit degenerate -> {}", points.len(), dir.display());
    } else {
        println!(
            "{} points; slope {} ± {}, intercept {} ± {}, r² {} -> {}",
            points.len(),
            f.get("slope"),
            f.err("slope"),
            f.get("intercept"),
            f.err("intercept"),
            f.get("r_squared"),
            dir.display()
        );
    }
    Ok(())
}
