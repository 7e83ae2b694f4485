//! Sequence files: a `[sequence]` header followed by one `[segment]` block per
//! segment, in order.
//!
//! ```text
//! [sequence]
//! repetitions = 10000
//! bin_width_us = 20
//! seed_label = decay
//! dark_start = false
//!
//! [segment]
//! label = pulse
//! duration_ms = 2
//! res_power_nW = 5
//! res_detuning_MHz = 0
//! green_power_uW = 11.5
//! record = true
//! ```
//!
//! A segment may add `sweep_start_MHz` and `sweep_end_MHz` (both or neither)
//! for a linear detuning sweep.

use crate::kinetics::LaserState;
use crate::kv::{self, KvError, Writer};
use crate::units::Unit;

use super::{PulseError, PulseSegment, PulseSequence};

const SEQUENCE_KEYS: &[&str] = &["repetitions", "bin_width_us", "seed_label", "dark_start"];
const SEGMENT_KEYS: &[&str] = &[
    "label",
    "duration_ms",
    "res_power_nW",
    "res_detuning_MHz",
    "green_power_uW",
    "record",
    "sweep_start_MHz",
    "sweep_end_MHz",
];

pub fn parse_sequence(text: &str) -> Result<PulseSequence, KvError> {
    let doc = kv::parse(text)?;
    doc.allow_sections(&["sequence", "segment"])?;
    let header = doc.section("sequence").ok_or_else(|| KvError::Syntax {
        line: 1,
        col: 1,
        msg: "missing [sequence] header".into(),
    })?;
    if doc.sections_named("sequence").count() > 1 {
        return Err(KvError::Syntax {
            line: doc.sections_named("sequence").nth(1).map_or(1, |s| s.line),
            col: 1,
            msg: "only one [sequence] header is allowed".into(),
        });
    }
    header.reject_unknown(SEQUENCE_KEYS)?;

    let mut segments = Vec::new();
    let mut lines = Vec::new();
    for (index, sec) in doc.sections_named("segment").enumerate() {
        sec.reject_unknown(SEGMENT_KEYS)?;
        let label = sec
            .opt_str("label")
            .map(str::to_string)
            .unwrap_or_else(|| format!("segment{index}"));
        let laser = LaserState {
            res_power: sec.opt_f64("res_power_nW", Unit::Nanowatt)?.unwrap_or(0.0),
            res_detuning: sec
                .opt_f64("res_detuning_MHz", Unit::Megahertz)?
                .unwrap_or(0.0),
            green_power: sec
                .opt_f64("green_power_uW", Unit::Microwatt)?
                .unwrap_or(0.0),
        };
        let sweep = match (
            sec.opt_f64("sweep_start_MHz", Unit::Megahertz)?,
            sec.opt_f64("sweep_end_MHz", Unit::Megahertz)?,
        ) {
            (Some(a), Some(b)) => Some((a, b)),
            (None, None) => None,
            _ => {
                let key = if sec.has("sweep_start_MHz") {
                    "sweep_end_MHz"
                } else {
                    "sweep_start_MHz"
                };
                return Err(KvError::semantic(
                    sec.line,
                    key,
                    format!("segment {index} (`{label}`): sweep needs both start and end"),
                ));
            }
        };
        segments.push(PulseSegment {
            duration: sec.f64("duration_ms", Unit::Millisecond)?,
            laser,
            detuning_sweep: sweep,
            record: sec.opt_bool("record")?.unwrap_or(true),
            label,
        });
        lines.push(sec);
    }

    let seq = PulseSequence {
        segments,
        repetitions: header.u64("repetitions")?,
        bin_width: header.f64("bin_width_us", Unit::Microsecond)?,
        seed_label: header.opt_str("seed_label").unwrap_or("").to_string(),
        dark_start: header.opt_bool("dark_start")?.unwrap_or(false),
    };

    seq.validate().map_err(|err| match &err {
        PulseError::Segment { index, msg, .. } => {
            let key = offending_key(msg);
            let line = lines.get(*index).map_or(header.line, |s| s.line_of(key));
            KvError::semantic(line, key, err.to_string())
        }
        PulseError::Sequence(msg) => {
            let key = if msg.contains("repetitions") {
                "repetitions"
            } else if msg.contains("seed label") {
                "seed_label"
            } else if msg.contains("no segments") || msg.contains("no recorded") {
                "segment"
            } else {
                "bin_width_us"
            };
            KvError::semantic(header.line_of(key), key, err.to_string())
        }
        PulseError::Scan(_) => KvError::semantic(header.line, "sequence", err.to_string()),
    })?;
    Ok(seq)
}

fn offending_key(msg: &str) -> &'static str {
    if msg.starts_with("duration") {
        "duration_ms"
    } else if msg.contains("res_power") {
        "res_power_nW"
    } else if msg.contains("green_power") {
        "green_power_uW"
    } else if msg.contains("res_detuning") {
        "res_detuning_MHz"
    } else if msg.starts_with("sweep") {
        "sweep_start_MHz"
    } else {
        "label"
    }
}

pub fn serialize_sequence(seq: &PulseSequence) -> String {
    let mut w = Writer::new();
    w.section("sequence");
    w.raw("repetitions", seq.repetitions);
    w.num("bin_width_us", seq.bin_width, Unit::Microsecond);
    if !seq.seed_label.is_empty() {
        w.raw("seed_label", &seq.seed_label);
    }
    w.raw("dark_start", seq.dark_start);
    for s in &seq.segments {
        w.section("segment");
        w.raw("label", &s.label);
        w.num("duration_ms", s.duration, Unit::Millisecond);
        w.num("res_power_nW", s.laser.res_power, Unit::Nanowatt);
        w.num("res_detuning_MHz", s.laser.res_detuning, Unit::Megahertz);
        w.num("green_power_uW", s.laser.green_power, Unit::Microwatt);
        w.raw("record", s.record);
        if let Some((a, b)) = s.detuning_sweep {
            w.num("sweep_start_MHz", a, Unit::Megahertz);
            w.num("sweep_end_MHz", b, Unit::Megahertz);
        }
    }
    w.finish()
}
