//! Piecewise-constant laser programs.
//!
//! A [`PulseSequence`] is an ordered list of segments, each holding the two
//! laser settings for a fixed duration. Segments switch instantaneously.
//! Canonical builders for the standard experiments live in [`canonical`],
//! boustrophedon PLE scan programs in [`scan`].

pub mod canonical;
mod file;
pub mod scan;

pub use file::{parse_sequence, serialize_sequence};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinetics::LaserState;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PulseError {
    #[error("segment {index} (`{label}`): {msg}")]
    Segment {
        index: usize,
        label: String,
        msg: String,
    },
    #[error("sequence: {0}")]
    Sequence(String),
    #[error("scan program: {0}")]
    Scan(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSegment {
    /// Seconds.
    pub duration: f64,
    pub laser: LaserState,
    /// Linear resonant-detuning sweep (start, end) in Hz over the segment;
    /// overrides `laser.res_detuning` when present.
    pub detuning_sweep: Option<(f64, f64)>,
    /// Whether photons detected in this segment go to the output bins.
    pub record: bool,
    pub label: String,
}

impl PulseSegment {
    pub fn new(label: impl Into<String>, duration: f64, laser: LaserState, record: bool) -> Self {
        Self {
            duration,
            laser,
            detuning_sweep: None,
            record,
            label: label.into(),
        }
    }

    /// Laser settings at `offset` seconds into the segment.
    pub fn laser_at(&self, offset: f64) -> LaserState {
        match self.detuning_sweep {
            None => self.laser,
            Some((start, end)) => {
                let frac = (offset / self.duration).clamp(0.0, 1.0);
                LaserState {
                    res_detuning: start + (end - start) * frac,
                    ..self.laser
                }
            }
        }
    }

    /// Detuning closest to resonance reached during the segment.
    pub fn min_abs_detuning(&self, center_shift: f64) -> f64 {
        match self.detuning_sweep {
            None => (self.laser.res_detuning - center_shift).abs(),
            Some((a, b)) => {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                if (lo..=hi).contains(&center_shift) {
                    0.0
                } else {
                    (lo - center_shift).abs().min((hi - center_shift).abs())
                }
            }
        }
    }

    pub fn is_green_only(&self) -> bool {
        self.laser.green_power > 0.0 && self.laser.res_power == 0.0
    }

    fn validate(&self, index: usize) -> Result<(), PulseError> {
        let fail = |msg: String| PulseError::Segment {
            index,
            label: self.label.clone(),
            msg,
        };
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(fail(format!(
                "duration must be > 0, got {} s",
                self.duration
            )));
        }
        self.laser.validate().map_err(|e| fail(e.to_string()))?;
        if let Some((a, b)) = self.detuning_sweep {
            if !(a.is_finite() && b.is_finite()) {
                return Err(fail("sweep endpoints must be finite".into()));
            }
        }
        if self.label.is_empty() || self.label.contains(|c: char| c == '#' || c.is_control()) {
            return Err(fail("label must be non-empty text without `#`".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub segments: Vec<PulseSegment>,
    pub repetitions: u64,
    /// Output histogram bin width, s.
    pub bin_width: f64,
    pub seed_label: String,
    /// Start every repetition in the dark state instead of bright ground.
    pub dark_start: bool,
}

impl PulseSequence {
    pub fn validate(&self) -> Result<(), PulseError> {
        if self.segments.is_empty() {
            return Err(PulseError::Sequence("no segments".into()));
        }
        for (i, s) in self.segments.iter().enumerate() {
            s.validate(i)?;
        }
        if self.repetitions == 0 {
            return Err(PulseError::Sequence("repetitions must be >= 1".into()));
        }
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) {
            return Err(PulseError::Sequence("bin width must be > 0".into()));
        }
        if self
            .seed_label
            .contains(|c: char| c == '#' || c.is_control())
        {
            return Err(PulseError::Sequence(
                "seed label must not contain `#`".into(),
            ));
        }
        let recorded: Vec<&PulseSegment> = self.segments.iter().filter(|s| s.record).collect();
        if recorded.is_empty() {
            return Err(PulseError::Sequence("no recorded segment".into()));
        }
        let shortest = recorded
            .iter()
            .map(|s| s.duration)
            .fold(f64::INFINITY, f64::min);
        // Allow for rounding in unit conversion.
        if self.bin_width > shortest * (1.0 + 1e-9) {
            return Err(PulseError::Sequence(format!(
                "bin width {} s exceeds the shortest recorded segment ({} s)",
                self.bin_width, shortest
            )));
        }
        Ok(())
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn recorded_duration(&self) -> f64 {
        self.segments
            .iter()
            .filter(|s| s.record)
            .map(|s| s.duration)
            .sum()
    }

    /// Start time of each segment within one repetition.
    pub fn segment_starts(&self) -> Vec<f64> {
        let mut t = 0.0;
        self.segments
            .iter()
            .map(|s| {
                let start = t;
                t += s.duration;
                start
            })
            .collect()
    }
}
