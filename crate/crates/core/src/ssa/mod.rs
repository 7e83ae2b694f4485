//! Event-driven simulation of one emitter under a pulse sequence.
//!
//! Two paths share the same segment loop:
//!
//! * **exact** tracks ground, excited and dark and draws every optical cycle;
//! * **hybrid** collapses ground and excited into a single bright state with
//!   the quasi-steady excited fraction `p_e`. Detected photons then arrive at
//!   `η·Γ·p_e` and ionization at `p_e·k_ion`.
//!
//! The hybrid path is used per segment whenever the drive keeps optical
//! cycling at least [`SimOptions::hybrid_min_separation`] times faster than
//! the charge dynamics; otherwise the segment runs exactly.
//!
//! Time-varying (swept) segments are sampled by thinning against the largest
//! pump rate reached in the segment.

mod trace;

pub use trace::{parse_trace, parse_trace_csv, parse_trace_meta, BinnedTrace, TraceMeta, TraceParseError, TRACE_CSV_HEADER};

use rand::Rng as _;
use rand_distr::Exp1;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::kinetics::{serialize_emitter, EmitterParams, KineticsError, LaserState};
use crate::pulse::{serialize_sequence, PulseError, PulseSegment, PulseSequence};
use crate::rng::{self, Rng};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("emitter: {0}")]
    Emitter(#[from] KineticsError),
    #[error("sequence: {0}")]
    Sequence(#[from] PulseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    PhotonDetected,
    ToDark,
    ToBright,
    SegmentBoundary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    /// Seconds from the start of the repetition.
    pub time: f64,
    pub kind: EventKind,
    pub segment: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimMode {
    Exact,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub mode: SimMode,
    pub hybrid_min_separation: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            mode: SimMode::Hybrid,
            hybrid_min_separation: 1e3,
        }
    }
}

impl SimOptions {
    pub fn exact() -> Self {
        Self {
            mode: SimMode::Exact,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum State {
    Ground,
    Excited,
    Dark,
    /// Ground and excited lumped together (hybrid path only).
    Bright,
}

pub(crate) trait Sink {
    fn event(&mut self, time: f64, kind: EventKind, segment: usize);
    /// Called for every spontaneous excited→ground decay on the exact path.
    fn radiative(&mut self) {}
}

impl Sink for Vec<EventRecord> {
    fn event(&mut self, time: f64, kind: EventKind, segment: usize) {
        self.push(EventRecord {
            time,
            kind,
            segment,
        });
    }
}

/// Rates of one segment, with the pump evaluated lazily for sweeps.
struct SegmentModel<'a> {
    emitter: &'a EmitterParams,
    seg: &'a PulseSegment,
    start: f64,
    center_shift: f64,
    gamma: f64,
    eta: f64,
    k_ion: f64,
    k_rec: f64,
    bg: f64,
    pump_max: f64,
}

impl<'a> SegmentModel<'a> {
    fn new(emitter: &'a EmitterParams, seg: &'a PulseSegment, start: f64, center_shift: f64) -> Self {
        let l = seg.laser;
        let gamma = emitter.gamma_sp();
        let pump = |detuning: f64| 0.5 * gamma * emitter.saturation(l.res_power) * emitter.lorentz_factor(detuning);
        Self {
            emitter,
            seg,
            start,
            center_shift,
            gamma,
            eta: emitter.detect_eff,
            k_ion: emitter.ion_coeff_green * l.green_power + emitter.ion_coeff_res * l.res_power,
            k_rec: emitter.rec_coeff_green * l.green_power,
            bg: emitter.background_cps(&l),
            pump_max: pump(seg.min_abs_detuning(center_shift)),
        }
    }

    fn pump_at(&self, t: f64) -> f64 {
        if self.seg.detuning_sweep.is_none() {
            return self.pump_max;
        }
        let l = self.seg.laser_at(t - self.start);
        0.5 * self.gamma
            * self.emitter.saturation(l.res_power)
            * self.emitter.lorentz_factor(l.res_detuning - self.center_shift)
    }

    fn excited_fraction(&self, pump: f64) -> f64 {
        let d = 2.0 * pump + self.gamma;
        if d > 0.0 {
            pump / d
        } else {
            0.0
        }
    }

    fn separation(&self) -> f64 {
        let slow = self.k_ion + self.k_rec;
        if slow == 0.0 {
            f64::INFINITY
        } else {
            (self.pump_max + self.gamma) / slow
        }
    }
}

/// Persistent emitter state driven through consecutive segments.
pub(crate) struct Runner<'a> {
    emitter: &'a EmitterParams,
    opts: SimOptions,
    pub state: State,
    /// Emitter centre offset from its nominal frequency, Hz.
    pub center_shift: f64,
    /// Excited fraction at the end of the last hybrid segment, used to
    /// resolve the bright state when the next segment runs exactly.
    last_pe: f64,
}

impl<'a> Runner<'a> {
    pub fn new(emitter: &'a EmitterParams, opts: SimOptions, dark_start: bool) -> Self {
        Self {
            emitter,
            opts,
            state: if dark_start { State::Dark } else { State::Ground },
            center_shift: 0.0,
            last_pe: 0.0,
        }
    }

    pub fn is_dark(&self) -> bool {
        self.state == State::Dark
    }

    /// Advances through `seg`, which occupies `[start, start + duration)`.
    pub fn run_segment(&mut self, seg: &PulseSegment, index: usize, start: f64, rng: &mut Rng, sink: &mut impl Sink) {
        let m = SegmentModel::new(self.emitter, seg, start, self.center_shift);
        let end = start + seg.duration;
        let hybrid = self.opts.mode == SimMode::Hybrid && m.separation() >= self.opts.hybrid_min_separation;

        match (hybrid, self.state) {
            (true, State::Ground | State::Excited) => self.state = State::Bright,
            (false, State::Bright) => {
                self.state = if rng.random::<f64>() < self.last_pe {
                    State::Excited
                } else {
                    State::Ground
                }
            }
            _ => {}
        }

        let swept = seg.detuning_sweep.is_some();
        let pe_max = m.excited_fraction(m.pump_max);
        let mut t = start;
        loop {
            let bound = m.bg
                + match self.state {
                    State::Ground => m.pump_max,
                    State::Excited => m.gamma + m.k_ion + m.pump_max,
                    State::Dark => m.k_rec,
                    State::Bright => pe_max * (m.eta * m.gamma + m.k_ion),
                };
            if bound <= 0.0 {
                break;
            }
            let wait: f64 = rng.sample(Exp1);
            t += wait / bound;
            if t >= end {
                break;
            }
            let mut u = rng.random::<f64>() * bound;
            if u < m.bg {
                sink.event(t, EventKind::PhotonDetected, index);
                continue;
            }
            u -= m.bg;
            let pump = if swept { m.pump_at(t) } else { m.pump_max };
            match self.state {
                State::Ground => {
                    if u < pump {
                        self.state = State::Excited;
                    }
                }
                State::Excited => {
                    if u < m.gamma {
                        self.state = State::Ground;
                        sink.radiative();
                        if rng.random::<f64>() < m.eta {
                            sink.event(t, EventKind::PhotonDetected, index);
                        }
                    } else if u < m.gamma + m.k_ion {
                        self.state = State::Dark;
                        sink.event(t, EventKind::ToDark, index);
                    } else if u < m.gamma + m.k_ion + pump {
                        self.state = State::Ground;
                    }
                }
                State::Dark => {
                    self.state = if hybrid { State::Bright } else { State::Ground };
                    sink.event(t, EventKind::ToBright, index);
                }
                State::Bright => {
                    let pe = if swept { m.excited_fraction(pump) } else { pe_max };
                    let signal = pe * m.eta * m.gamma;
                    if u < signal {
                        sink.event(t, EventKind::PhotonDetected, index);
                    } else if u < signal + pe * m.k_ion {
                        self.state = State::Dark;
                        sink.event(t, EventKind::ToDark, index);
                    }
                }
            }
        }
        if hybrid {
            self.last_pe = m.excited_fraction(m.pump_at(end));
        }
    }
}

fn run_repetition(
    emitter: &EmitterParams,
    seq: &PulseSequence,
    starts: &[f64],
    rng: &mut Rng,
    opts: SimOptions,
    sink: &mut impl Sink,
) {
    let mut runner = Runner::new(emitter, opts, seq.dark_start);
    for (i, seg) in seq.segments.iter().enumerate() {
        if i > 0 {
            sink.event(starts[i], EventKind::SegmentBoundary, i);
        }
        runner.run_segment(seg, i, starts[i], rng, sink);
    }
}

fn check(emitter: &EmitterParams, seq: &PulseSequence) -> Result<(), SimError> {
    emitter.validate()?;
    seq.validate()?;
    Ok(())
}

pub fn simulate_repetition(
    emitter: &EmitterParams,
    seq: &PulseSequence,
    rep_index: u64,
    seed: u64,
) -> Result<Vec<EventRecord>, SimError> {
    simulate_repetition_with(emitter, seq, rep_index, seed, SimOptions::default())
}

pub fn simulate_repetition_with(
    emitter: &EmitterParams,
    seq: &PulseSequence,
    rep_index: u64,
    seed: u64,
    opts: SimOptions,
) -> Result<Vec<EventRecord>, SimError> {
    check(emitter, seq)?;
    let mut events = Vec::new();
    let mut rng = rng::keyed(seed, rep_index, rng::streams::ENSEMBLE);
    run_repetition(emitter, seq, &seq.segment_starts(), &mut rng, opts, &mut events);
    Ok(events)
}

/// Output bins of a sequence: every recorded segment is cut into bins of
/// `bin_width`, the last one truncated at the segment end.
#[derive(Debug, Clone, PartialEq)]
pub struct BinLayout {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub segment: Vec<usize>,
    first_bin: Vec<Option<usize>>,
    seg_start: Vec<f64>,
    width: f64,
}

impl BinLayout {
    pub fn new(seq: &PulseSequence) -> Self {
        let seg_start = seq.segment_starts();
        let mut l = BinLayout {
            start: Vec::new(),
            end: Vec::new(),
            segment: Vec::new(),
            first_bin: Vec::with_capacity(seq.segments.len()),
            seg_start: seg_start.clone(),
            width: seq.bin_width,
        };
        for (i, seg) in seq.segments.iter().enumerate() {
            if !seg.record {
                l.first_bin.push(None);
                continue;
            }
            l.first_bin.push(Some(l.start.len()));
            let t0 = seg_start[i];
            let t1 = t0 + seg.duration;
            let n = ((seg.duration / seq.bin_width) - 1e-9).ceil().max(1.0) as usize;
            for k in 0..n {
                l.start.push(t0 + k as f64 * seq.bin_width);
                l.end.push((t0 + (k + 1) as f64 * seq.bin_width).min(t1));
                l.segment.push(i);
            }
        }
        l
    }

    pub fn len(&self) -> usize {
        self.start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start.is_empty()
    }

    pub fn bin_of(&self, segment: usize, time: f64) -> Option<usize> {
        let first = self.first_bin[segment]?;
        let last = self.first_bin[segment + 1..]
            .iter()
            .flatten()
            .next()
            .copied()
            .unwrap_or(self.len())
            - 1;
        let k = ((time - self.seg_start[segment]) / self.width).floor().max(0.0) as usize;
        Some((first + k).min(last))
    }
}

struct Binner<'a> {
    layout: &'a BinLayout,
    counts: &'a mut [u64],
}

impl Sink for Binner<'_> {
    fn event(&mut self, time: f64, kind: EventKind, segment: usize) {
        if kind == EventKind::PhotonDetected {
            if let Some(b) = self.layout.bin_of(segment, time) {
                self.counts[b] += 1;
            }
        }
    }
}

/// Bins the detected photons of an event list the same way the ensemble does.
pub fn bin_events(layout: &BinLayout, events: &[EventRecord]) -> Vec<u64> {
    let mut counts = vec![0; layout.len()];
    let mut b = Binner {
        layout,
        counts: &mut counts,
    };
    for e in events {
        b.event(e.time, e.kind, e.segment);
    }
    counts
}

pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn simulate_ensemble(emitter: &EmitterParams, seq: &PulseSequence, seed: u64) -> Result<BinnedTrace, SimError> {
    simulate_ensemble_with(emitter, seq, seed, SimOptions::default())
}

/// Sum of the binned detected photons over all repetitions.
///
/// Repetitions are independent work items; per-repetition counts are merged
/// by integer addition, so the result does not depend on the thread count.
pub fn simulate_ensemble_with(
    emitter: &EmitterParams,
    seq: &PulseSequence,
    seed: u64,
    opts: SimOptions,
) -> Result<BinnedTrace, SimError> {
    check(emitter, seq)?;
    const CHUNK: u64 = 32;
    let layout = BinLayout::new(seq);
    let starts = seq.segment_starts();
    let n = layout.len();
    let reps = seq.repetitions;
    let counts = (0..reps.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut counts = vec![0u64; n];
            for rep in c * CHUNK..((c + 1) * CHUNK).min(reps) {
                let mut rng = rng::keyed(seed, rep, rng::streams::ENSEMBLE);
                let mut sink = Binner {
                    layout: &layout,
                    counts: &mut counts,
                };
                run_repetition(emitter, seq, &starts, &mut rng, opts, &mut sink);
            }
            counts
        })
        .reduce(
            || vec![0u64; n],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(BinnedTrace {
        bin_start: layout.start,
        bin_end: layout.end,
        segment: layout.segment,
        counts,
        n_reps: reps,
        meta: TraceMeta {
            sequence_hash: sha256_hex(&serialize_sequence(seq)),
            emitter_hash: sha256_hex(&serialize_emitter(emitter, None)),
            seed,
        },
    })
}

/// One long repetition under constant drive.
pub fn real_time_sequence(laser: LaserState, total_time: f64, bin_width: f64) -> PulseSequence {
    PulseSequence {
        segments: vec![PulseSegment::new("real_time", total_time, laser, true)],
        repetitions: 1,
        bin_width,
        seed_label: "real_time".into(),
        dark_start: false,
    }
}

pub fn real_time_trace(
    emitter: &EmitterParams,
    laser: LaserState,
    total_time: f64,
    bin_width: f64,
    seed: u64,
) -> Result<BinnedTrace, SimError> {
    simulate_ensemble(emitter, &real_time_sequence(laser, total_time, bin_width), seed)
}
