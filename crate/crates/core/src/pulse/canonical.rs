//! Builders for the standard experiments. Defaults follow the laser
//! conditions of the corresponding measurements; every value can be
//! overridden.

use crate::kinetics::LaserState;
use crate::kv::{KvError, Section};
use crate::units::Unit;

use super::scan::{self, PleDrive, PleMode, ScanConfig};
use super::{PulseSegment, PulseSequence};

/// A single resonant-only pulse. The default is the 5 nW, 2 ms trace; see
/// [`ResonantOnly::long_decay`] for the 8 s, 4 nW run.
#[derive(Debug, Clone, PartialEq)]
pub struct ResonantOnly {
    pub res_power: f64,
    pub pulse: f64,
    pub repetitions: u64,
    pub bin_width: f64,
}

impl Default for ResonantOnly {
    fn default() -> Self {
        Self {
            res_power: 5e-9,
            pulse: 2e-3,
            repetitions: 10_000,
            bin_width: 20e-6,
        }
    }
}

impl ResonantOnly {
    pub fn long_decay() -> Self {
        Self {
            res_power: 4e-9,
            pulse: 8.0,
            repetitions: 100,
            bin_width: 50e-3,
        }
    }

    pub fn build(&self) -> PulseSequence {
        PulseSequence {
            segments: vec![PulseSegment::new(
                "resonant",
                self.pulse,
                LaserState::new(self.res_power, 0.0, 0.0),
                true,
            )],
            repetitions: self.repetitions,
            bin_width: self.bin_width,
            seed_label: "resonant_only".into(),
            dark_start: false,
        }
    }
}

/// Resonant pulse on top of continuous green light: green-only lead,
/// simultaneous pulse, green-only tail.
#[derive(Debug, Clone, PartialEq)]
pub struct Simultaneous {
    pub res_power: f64,
    pub green_power: f64,
    pub lead: f64,
    pub pulse: f64,
    pub tail: f64,
    pub repetitions: u64,
    pub bin_width: f64,
}

impl Default for Simultaneous {
    fn default() -> Self {
        Self {
            res_power: 5e-9,
            green_power: 11.5e-6,
            lead: 0.5e-3,
            pulse: 2e-3,
            tail: 1e-3,
            repetitions: 10_000,
            bin_width: 20e-6,
        }
    }
}

impl Simultaneous {
    pub fn build(&self) -> PulseSequence {
        let green = LaserState::new(0.0, 0.0, self.green_power);
        let both = LaserState::new(self.res_power, 0.0, self.green_power);
        PulseSequence {
            segments: vec![
                PulseSegment::new("lead", self.lead, green, true),
                PulseSegment::new("pulse", self.pulse, both, true),
                PulseSegment::new("tail", self.tail, green, true),
            ],
            repetitions: self.repetitions,
            bin_width: self.bin_width,
            seed_label: "simultaneous".into(),
            dark_start: false,
        }
    }
}

/// Green initialization followed by one simultaneous pulse, as used for
/// each point of a decay-rate power sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayPoint {
    pub res_power: f64,
    pub green_power: f64,
    pub init: f64,
    pub pulse: f64,
    pub repetitions: u64,
    pub bin_width: f64,
}

impl Default for DecayPoint {
    fn default() -> Self {
        Self {
            res_power: 2e-9,
            green_power: 20e-6,
            init: 1e-3,
            pulse: 5e-3,
            repetitions: 10_000,
            bin_width: 25e-6,
        }
    }
}

impl DecayPoint {
    pub fn build(&self) -> PulseSequence {
        PulseSequence {
            segments: vec![
                PulseSegment::new(
                    "init",
                    self.init,
                    LaserState::new(0.0, 0.0, self.green_power),
                    false,
                ),
                PulseSegment::new(
                    "pulse",
                    self.pulse,
                    LaserState::new(self.res_power, 0.0, self.green_power),
                    true,
                ),
            ],
            repetitions: self.repetitions,
            bin_width: self.bin_width,
            seed_label: "decay_point".into(),
            dark_start: false,
        }
    }
}

/// Reference readout, two simultaneous pulses each followed by a readout,
/// then green re-initialization and a final readout (8 segments).
#[derive(Debug, Clone, PartialEq)]
pub struct MultiPulse {
    pub res_power: f64,
    pub green_power: f64,
    pub init: f64,
    pub readout: f64,
    pub simultaneous: f64,
    pub repetitions: u64,
    pub bin_width: f64,
}

impl Default for MultiPulse {
    fn default() -> Self {
        Self {
            res_power: 4e-9,
            green_power: 32.2e-6,
            init: 50e-3,
            readout: 5e-3,
            simultaneous: 0.1e-3,
            repetitions: 10_000,
            bin_width: 50e-6,
        }
    }
}

impl MultiPulse {
    pub fn build(&self) -> PulseSequence {
        let green = LaserState::new(0.0, 0.0, self.green_power);
        let res = LaserState::new(self.res_power, 0.0, 0.0);
        let both = LaserState::new(self.res_power, 0.0, self.green_power);
        let seg = |l: &str, d, laser, rec| PulseSegment::new(l, d, laser, rec);
        PulseSequence {
            segments: vec![
                seg("init", self.init, green, false),
                seg("readout0", self.readout, res, true),
                seg("simultaneous1", self.simultaneous, both, true),
                seg("readout1", self.readout, res, true),
                seg("simultaneous2", self.simultaneous, both, true),
                seg("readout2", self.readout, res, true),
                seg("reinit", self.init, green, false),
                seg("readout3", self.readout, res, true),
            ],
            repetitions: self.repetitions,
            bin_width: self.bin_width,
            seed_label: "multi_pulse".into(),
            dark_start: false,
        }
    }
}

/// A simultaneous block that parks the emitter in its dark-leaning steady
/// state, then `blocks` repetitions of (green pulse, resonant readout).
#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    pub res_power: f64,
    pub green_power: f64,
    pub simultaneous: f64,
    pub green_pulse: f64,
    pub readout: f64,
    pub blocks: usize,
    pub repetitions: u64,
    pub bin_width: f64,
    pub dark_start: bool,
}

impl Default for Recovery {
    fn default() -> Self {
        Self {
            res_power: 5e-9,
            green_power: 30.1e-6,
            simultaneous: 5e-3,
            green_pulse: 10e-3,
            readout: 5e-3,
            blocks: 16,
            repetitions: 10_000,
            bin_width: 0.5e-3,
            dark_start: false,
        }
    }
}

impl Recovery {
    pub fn build(&self) -> PulseSequence {
        let mut segments = vec![PulseSegment::new(
            "simultaneous",
            self.simultaneous,
            LaserState::new(self.res_power, 0.0, self.green_power),
            false,
        )];
        for n in 1..=self.blocks {
            segments.push(PulseSegment::new(
                format!("green{n}"),
                self.green_pulse,
                LaserState::new(0.0, 0.0, self.green_power),
                false,
            ));
            segments.push(PulseSegment::new(
                format!("readout{n}"),
                self.readout,
                LaserState::new(self.res_power, 0.0, 0.0),
                true,
            ));
        }
        PulseSequence {
            segments,
            repetitions: self.repetitions,
            bin_width: self.bin_width,
            seed_label: "recovery".into(),
            dark_start: self.dark_start,
        }
    }
}

pub const CANONICAL_NAMES: &[&str] = &[
    "resonant_only",
    "resonant_long",
    "simultaneous",
    "decay_point",
    "multi_pulse",
    "recovery",
    "ple_res_only",
    "ple_init_then_scan",
    "ple_simultaneous",
];

fn set_f64(sec: Option<&Section>, key: &str, unit: Unit, slot: &mut f64) -> Result<(), KvError> {
    if let Some(v) = sec.map(|s| s.opt_f64(key, unit)).transpose()?.flatten() {
        *slot = v;
    }
    Ok(())
}

fn set_u64(sec: Option<&Section>, key: &str, slot: &mut u64) -> Result<(), KvError> {
    if let Some(v) = sec.map(|s| s.opt_u64(key)).transpose()?.flatten() {
        *slot = v;
    }
    Ok(())
}

/// Builds a named canonical sequence, applying any overrides present in
/// `overrides` (keys use the same unit suffixes as sequence files).
pub fn build_canonical(name: &str, overrides: Option<&Section>) -> Result<PulseSequence, KvError> {
    let o = overrides;
    let common_keys = [
        "res_power_nW",
        "green_power_uW",
        "repetitions",
        "bin_width_us",
    ];
    let check = |extra: &[&str]| -> Result<(), KvError> {
        if let Some(s) = o {
            let allowed: Vec<&str> = common_keys.iter().chain(extra.iter()).copied().collect();
            s.reject_unknown(&allowed)?;
        }
        Ok(())
    };
    let seq = match name {
        "resonant_only" | "resonant_long" => {
            check(&["pulse_ms"])?;
            let mut b = if name == "resonant_only" {
                ResonantOnly::default()
            } else {
                ResonantOnly::long_decay()
            };
            set_f64(o, "res_power_nW", Unit::Nanowatt, &mut b.res_power)?;
            set_f64(o, "pulse_ms", Unit::Millisecond, &mut b.pulse)?;
            set_u64(o, "repetitions", &mut b.repetitions)?;
            set_f64(o, "bin_width_us", Unit::Microsecond, &mut b.bin_width)?;
            if o.is_some_and(|s| s.has("green_power_uW")) {
                return Err(KvError::semantic(
                    o.map_or(0, |s| s.line_of("green_power_uW")),
                    "green_power_uW",
                    "resonant-only sequences have no green light",
                ));
            }
            b.build()
        }
        "simultaneous" => {
            check(&["lead_ms", "pulse_ms", "tail_ms"])?;
            let mut b = Simultaneous::default();
            set_f64(o, "res_power_nW", Unit::Nanowatt, &mut b.res_power)?;
            set_f64(o, "green_power_uW", Unit::Microwatt, &mut b.green_power)?;
            set_f64(o, "lead_ms", Unit::Millisecond, &mut b.lead)?;
            set_f64(o, "pulse_ms", Unit::Millisecond, &mut b.pulse)?;
            set_f64(o, "tail_ms", Unit::Millisecond, &mut b.tail)?;
            set_u64(o, "repetitions", &mut b.repetitions)?;
            set_f64(o, "bin_width_us", Unit::Microsecond, &mut b.bin_width)?;
            b.build()
        }
        "decay_point" => {
            check(&["init_ms", "pulse_ms"])?;
            let mut b = DecayPoint::default();
            set_f64(o, "res_power_nW", Unit::Nanowatt, &mut b.res_power)?;
            set_f64(o, "green_power_uW", Unit::Microwatt, &mut b.green_power)?;
            set_f64(o, "init_ms", Unit::Millisecond, &mut b.init)?;
            set_f64(o, "pulse_ms", Unit::Millisecond, &mut b.pulse)?;
            set_u64(o, "repetitions", &mut b.repetitions)?;
            set_f64(o, "bin_width_us", Unit::Microsecond, &mut b.bin_width)?;
            b.build()
        }
        "multi_pulse" => {
            check(&["init_ms", "readout_ms", "simultaneous_ms"])?;
            let mut b = MultiPulse::default();
            set_f64(o, "res_power_nW", Unit::Nanowatt, &mut b.res_power)?;
            set_f64(o, "green_power_uW", Unit::Microwatt, &mut b.green_power)?;
            set_f64(o, "init_ms", Unit::Millisecond, &mut b.init)?;
            set_f64(o, "readout_ms", Unit::Millisecond, &mut b.readout)?;
            set_f64(o, "simultaneous_ms", Unit::Millisecond, &mut b.simultaneous)?;
            set_u64(o, "repetitions", &mut b.repetitions)?;
            set_f64(o, "bin_width_us", Unit::Microsecond, &mut b.bin_width)?;
            b.build()
        }
        "recovery" => {
            check(&[
                "simultaneous_ms",
                "green_pulse_ms",
                "readout_ms",
                "blocks",
                "dark_start",
            ])?;
            let mut b = Recovery::default();
            set_f64(o, "res_power_nW", Unit::Nanowatt, &mut b.res_power)?;
            set_f64(o, "green_power_uW", Unit::Microwatt, &mut b.green_power)?;
            set_f64(o, "simultaneous_ms", Unit::Millisecond, &mut b.simultaneous)?;
            set_f64(o, "green_pulse_ms", Unit::Millisecond, &mut b.green_pulse)?;
            set_f64(o, "readout_ms", Unit::Millisecond, &mut b.readout)?;
            let mut blocks = b.blocks as u64;
            set_u64(o, "blocks", &mut blocks)?;
            b.blocks = blocks as usize;
            set_u64(o, "repetitions", &mut b.repetitions)?;
            set_f64(o, "bin_width_us", Unit::Microsecond, &mut b.bin_width)?;
            if let Some(d) = o.map(|s| s.opt_bool("dark_start")).transpose()?.flatten() {
                b.dark_start = d;
            }
            b.build()
        }
        "ple_res_only" | "ple_init_then_scan" | "ple_simultaneous" => {
            check(&["f_min_MHz", "f_max_MHz", "step_MHz", "dwell_ms", "init_ms"])?;
            let mode = match name {
                "ple_res_only" => PleMode::ResOnly,
                "ple_init_then_scan" => PleMode::InitThenScan,
                _ => PleMode::Simultaneous,
            };
            let mut drive = PleDrive::for_mode(mode);
            let mut cfg = ScanConfig::default();
            set_f64(o, "res_power_nW", Unit::Nanowatt, &mut drive.res_power)?;
            set_f64(o, "green_power_uW", Unit::Microwatt, &mut drive.green_power)?;
            set_f64(o, "init_ms", Unit::Millisecond, &mut drive.init_duration)?;
            set_f64(o, "f_min_MHz", Unit::Megahertz, &mut cfg.f_min)?;
            set_f64(o, "f_max_MHz", Unit::Megahertz, &mut cfg.f_max)?;
            set_f64(o, "step_MHz", Unit::Megahertz, &mut cfg.step)?;
            set_f64(o, "dwell_ms", Unit::Millisecond, &mut cfg.dwell)?;
            let mut scans = scan::expand_scan_program(mode, &cfg, 1, &drive)
                .map_err(|e| KvError::semantic(o.map_or(0, |s| s.line), "scan", e.to_string()))?;
            scans.remove(0)
        }
        other => {
            return Err(KvError::semantic(
                o.map_or(0, |s| s.line),
                "sequence",
                format!(
                    "unknown canonical sequence `{other}` (known: {})",
                    CANONICAL_NAMES.join(", ")
                ),
            ))
        }
    };
    seq.validate()
        .map_err(|e| KvError::semantic(o.map_or(0, |s| s.line), "sequence", e.to_string()))?;
    Ok(seq)
}
