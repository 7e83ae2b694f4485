//! Consecutive PLE scan programs in boustrophedon order: scan 0 runs from
//! high to low detuning, scan 1 back up, and so on.

use serde::{Deserialize, Serialize};

use crate::kinetics::LaserState;

use super::{PulseError, PulseSegment, PulseSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PleMode {
    /// Weak resonant laser alone.
    ResOnly,
    /// Stronger resonant laser with a green initialization pulse before each scan.
    InitThenScan,
    /// Resonant and green light together at every grid point.
    Simultaneous,
}

impl PleMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "res_only" | "a" => Some(PleMode::ResOnly),
            "init_then_scan" | "b" => Some(PleMode::InitThenScan),
            "simultaneous" | "c" => Some(PleMode::Simultaneous),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PleMode::ResOnly => "res_only",
            PleMode::InitThenScan => "init_then_scan",
            PleMode::Simultaneous => "simultaneous",
        }
    }
}

/// Detuning grid and per-point dwell, SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub f_min: f64,
    pub f_max: f64,
    pub step: f64,
    pub dwell: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            f_min: -250e6,
            f_max: 250e6,
            step: 2e6,
            dwell: 10e-3,
        }
    }
}

impl ScanConfig {
    /// Ascending grid `f_min, f_min + step, ...` up to `f_max`.
    pub fn grid(&self) -> Result<Vec<f64>, PulseError> {
        let ok = self.f_min.is_finite() && self.f_max.is_finite() && self.step.is_finite();
        if !ok || self.f_min >= self.f_max || self.step <= 0.0 {
            return Err(PulseError::Scan(format!(
                "empty grid: need f_min < f_max and step > 0 (got {} .. {} step {})",
                self.f_min, self.f_max, self.step
            )));
        }
        if !(self.dwell > 0.0 && self.dwell.is_finite()) {
            return Err(PulseError::Scan("dwell must be > 0".into()));
        }
        let n = ((self.f_max - self.f_min) / self.step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|i| self.f_min + i as f64 * self.step).collect())
    }
}

/// Laser powers of a scan program.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PleDrive {
    pub res_power: f64,
    /// Green power of the init pulse (InitThenScan) or during each dwell
    /// (Simultaneous). Ignored for ResOnly.
    pub green_power: f64,
    pub init_duration: f64,
}

impl PleDrive {
    pub fn for_mode(mode: PleMode) -> Self {
        match mode {
            PleMode::ResOnly => Self {
                res_power: 0.9e-9,
                green_power: 0.0,
                init_duration: 0.0,
            },
            PleMode::InitThenScan => Self {
                res_power: 10e-9,
                green_power: 20e-6,
                init_duration: 50e-3,
            },
            PleMode::Simultaneous => Self {
                res_power: 0.9e-9,
                green_power: 1e-6,
                init_duration: 0.0,
            },
        }
    }
}

/// Whether scan `k` runs from high to low detuning.
pub fn is_descending(k: usize) -> bool {
    k % 2 == 0
}

/// Grid indices in the order scan `k` visits them.
pub fn visit_order(k: usize, n: usize) -> Vec<usize> {
    if is_descending(k) {
        (0..n).rev().collect()
    } else {
        (0..n).collect()
    }
}

/// Label carried by the dwell segment at grid index `i`.
pub fn point_label(i: usize) -> String {
    format!("pt{i}")
}

/// Parses a label produced by [`point_label`].
pub fn point_index(label: &str) -> Option<usize> {
    label.strip_prefix("pt")?.parse().ok()
}

pub const INIT_LABEL: &str = "init";

pub fn expand_scan_program(
    mode: PleMode,
    scan: &ScanConfig,
    n_scans: usize,
    drive: &PleDrive,
) -> Result<Vec<PulseSequence>, PulseError> {
    if n_scans == 0 {
        return Err(PulseError::Scan("at least one scan is required".into()));
    }
    let grid = scan.grid()?;
    let green_on_dwell = match mode {
        PleMode::Simultaneous => drive.green_power,
        _ => 0.0,
    };
    if mode == PleMode::InitThenScan && !(drive.init_duration > 0.0 && drive.green_power > 0.0) {
        return Err(PulseError::Scan(
            "init_then_scan needs a green init pulse".into(),
        ));
    }

    let scans = (0..n_scans)
        .map(|k| {
            let mut segments = Vec::with_capacity(grid.len() + 1);
            if mode == PleMode::InitThenScan {
                segments.push(PulseSegment::new(
                    INIT_LABEL,
                    drive.init_duration,
                    LaserState::new(0.0, 0.0, drive.green_power),
                    false,
                ));
            }
            for i in visit_order(k, grid.len()) {
                segments.push(PulseSegment::new(
                    point_label(i),
                    scan.dwell,
                    LaserState::new(drive.res_power, grid[i], green_on_dwell),
                    true,
                ));
            }
            PulseSequence {
                segments,
                repetitions: 1,
                bin_width: scan.dwell,
                seed_label: format!("ple_{}_scan{k}", mode.name()),
                dark_start: false,
            }
        })
        .collect::<Vec<_>>();
    for s in &scans {
        s.validate()?;
    }
    Ok(scans)
}
