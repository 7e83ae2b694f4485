//! Calibration target files: one `[target]` per measured value, plus the
//! frozen emitter fields.
//!
//! ```text
//! [calibration]
//! note = free text copied into the fixture header   # optional
//!
//! [frozen]
//! lifetime_ns = 5.2
//! sat_power_nW = 100
//! ...                      # any emitter-file key
//!
//! [target]
//! figure = 3(b)
//! emitter = 12
//! observable = decay_rate
//! res_power_nW = 5
//! green_power_uW = 11.5
//! value_Hz = 1100
//! tolerance = 0.05         # relative
//! ```
//!
//! The value key carries the observable's unit: `value_Hz` (decay_rate,
//! recovery_rate), `value_Hz_per_nW` (decay_slope_vs_res, which lists its
//! sweep as `res_powers_nW` instead of `res_power_nW`), `value_cps`
//! (bright_cps) and `value_MHz` (linewidth).

use crate::kinetics::file::EMITTER_KEYS;
use crate::kinetics::LaserState;
use crate::kv::{self, KvError, Section, Writer};
use crate::units::Unit;

use super::{CalibrationTarget, FrozenParams, Observable};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TargetSet {
    pub note: Option<String>,
    pub frozen: FrozenParams,
    pub targets: Vec<CalibrationTarget>,
}

fn value_key(o: Observable) -> (&'static str, Unit) {
    match o {
        Observable::DecayRate | Observable::RecoveryRate => ("value_Hz", Unit::Unitless),
        Observable::DecaySlopeVsRes => ("value_Hz_per_nW", Unit::HzPerNanowatt),
        Observable::BrightCps => ("value_cps", Unit::Unitless),
        Observable::Linewidth => ("value_MHz", Unit::Megahertz),
    }
}

fn frozen_slot(f: &mut FrozenParams, i: usize) -> &mut Option<f64> {
    match i {
        0 => &mut f.lifetime_excited,
        1 => &mut f.sat_power_resonant,
        2 => &mut f.ion_coeff_green,
        3 => &mut f.ion_coeff_res,
        4 => &mut f.rec_coeff_green,
        5 => &mut f.detect_eff,
        6 => &mut f.bg_dark_cps,
        7 => &mut f.bg_green_cps_per_w,
        _ => &mut f.center_frequency,
    }
}

fn parse_target(s: &Section) -> Result<CalibrationTarget, KvError> {
    let name = s.str("observable")?;
    let observable = Observable::parse(name)
        .ok_or_else(|| KvError::semantic(s.line_of("observable"), "observable", format!("unknown observable `{name}`")))?;
    let (vkey, vunit) = value_key(observable);
    let slope = observable == Observable::DecaySlopeVsRes;
    let power_key = if slope { "res_powers_nW" } else { "res_power_nW" };
    s.reject_unknown(&["figure", "emitter", "observable", power_key, "green_power_uW", vkey, "tolerance"])?;

    let (res_power, res_sweep) = if slope {
        (0.0, s.f64_list("res_powers_nW", Unit::Nanowatt)?)
    } else {
        (s.opt_f64("res_power_nW", Unit::Nanowatt)?.unwrap_or(0.0), Vec::new())
    };
    Ok(CalibrationTarget {
        figure: s.str("figure")?.to_string(),
        emitter_id: s.str("emitter")?.to_string(),
        observable,
        condition: LaserState::new(res_power, 0.0, s.opt_f64("green_power_uW", Unit::Microwatt)?.unwrap_or(0.0)),
        res_sweep,
        value: s.f64(vkey, vunit)?,
        tolerance: s.f64("tolerance", Unit::Unitless)?,
    })
}

pub fn parse_targets(text: &str) -> Result<TargetSet, KvError> {
    let doc = kv::parse(text)?;
    doc.allow_sections(&["calibration", "frozen", "target"])?;
    let mut set = TargetSet::default();
    for name in ["calibration", "frozen"] {
        if doc.sections_named(name).count() > 1 {
            let s = doc.sections_named(name).nth(1).expect("counted");
            return Err(KvError::Syntax {
                line: s.line,
                col: 1,
                msg: format!("[{name}] may appear only once"),
            });
        }
    }
    if let Some(c) = doc.section("calibration") {
        c.reject_unknown(&["note"])?;
        set.note = c.opt_str("note").map(str::to_string);
    }
    if let Some(f) = doc.section("frozen") {
        let keys: Vec<&str> = EMITTER_KEYS.iter().map(|(k, _)| *k).collect();
        f.reject_unknown(&keys)?;
        for (i, (key, unit)) in EMITTER_KEYS.iter().enumerate() {
            *frozen_slot(&mut set.frozen, i) = f.opt_f64(key, *unit)?;
        }
    }
    for s in doc.sections_named("target") {
        set.targets.push(parse_target(s)?);
    }
    if set.targets.is_empty() {
        return Err(KvError::Syntax {
            line: 1,
            col: 1,
            msg: "no [target] sections".into(),
        });
    }
    Ok(set)
}

pub fn serialize_targets(set: &TargetSet) -> String {
    let mut w = Writer::new();
    if let Some(note) = &set.note {
        w.section("calibration");
        w.raw("note", note);
    }
    let mut frozen = set.frozen.clone();
    if (0..EMITTER_KEYS.len()).any(|i| frozen_slot(&mut frozen, i).is_some()) {
        w.section("frozen");
        for (i, (key, unit)) in EMITTER_KEYS.iter().enumerate() {
            if let Some(v) = *frozen_slot(&mut frozen, i) {
                w.num(key, v, *unit);
            }
        }
    }
    for t in &set.targets {
        w.section("target");
        w.raw("figure", &t.figure);
        w.raw("emitter", &t.emitter_id);
        w.raw("observable", t.observable.name());
        if t.observable == Observable::DecaySlopeVsRes {
            let list: Vec<String> = t.res_sweep.iter().map(|p| crate::units::format(*p, Unit::Nanowatt)).collect();
            w.raw("res_powers_nW", list.join(", "));
        } else {
            w.num("res_power_nW", t.condition.res_power, Unit::Nanowatt);
        }
        w.num("green_power_uW", t.condition.green_power, Unit::Microwatt);
        let (vkey, vunit) = value_key(t.observable);
        w.num(vkey, t.value, vunit);
        w.num("tolerance", t.tolerance, Unit::Unitless);
    }
    w.finish()
}
