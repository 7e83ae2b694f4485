//! Consecutive PLE scan maps and their per-scan statistics.
//!
//! The emitter's charge state persists across grid points and across scans;
//! only green light (or a recovery event) brings a dark emitter back.

mod io;

pub use io::{parse_scan_map, SCAN_CSV_HEADER};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use thiserror::Error;

use crate::analysis::{fit_lorentzian, hist_fwhm, FitResult, GatingRules};
use crate::kinetics::{EmitterParams, KineticsError};
use crate::pulse::scan::{expand_scan_program, point_index, PleDrive, PleMode, ScanConfig};
use crate::pulse::PulseError;
use crate::rng;
use crate::ssa::{EventKind, Runner, SimOptions, Sink};

#[derive(Debug, Error)]
pub enum PleError {
    #[error("emitter: {0}")]
    Emitter(#[from] KineticsError),
    #[error("scan program: {0}")]
    Program(#[from] PulseError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanMap {
    pub mode: PleMode,
    /// Ascending detunings from the nominal centre, Hz.
    pub detuning_grid: Vec<f64>,
    /// Counts per scan, indexed like `detuning_grid` whatever the direction.
    pub scans: Vec<Vec<u64>>,
    pub descending: Vec<bool>,
    /// Whether a green init pulse preceded the scan.
    pub init_markers: Vec<bool>,
    /// Emitter centre offset during each scan, Hz.
    pub true_center_log: Vec<f64>,
    /// Simulation diagnostics: the emitter was dark at some time during the
    /// dwell at that grid point. Not part of the file format.
    pub dark_points: Vec<Vec<bool>>,
    /// Power-broadened linewidth at the scan drive, Hz; defines the peak
    /// region `true centre ± linewidth` used by the scan filters.
    pub peak_linewidth: f64,
    pub dwell: f64,
}

impl ScanMap {
    pub fn n_scans(&self) -> usize {
        self.scans.len()
    }

    fn scan_f64(&self, k: usize) -> Vec<f64> {
        self.scans[k].iter().map(|&c| c as f64).collect()
    }

    /// Mean over scans at every grid point.
    pub fn mean_spectrum(&self) -> Vec<f64> {
        let n = self.n_scans().max(1) as f64;
        (0..self.detuning_grid.len())
            .map(|i| self.scans.iter().map(|s| s[i] as f64).sum::<f64>() / n)
            .collect()
    }

    /// Total over scans at every grid point; Poisson counts, so this is the
    /// spectrum to fit.
    pub fn sum_spectrum(&self) -> Vec<f64> {
        (0..self.detuning_grid.len())
            .map(|i| self.scans.iter().map(|s| s[i] as f64).sum())
            .collect()
    }

    /// Maximum over scans at every grid point.
    pub fn max_spectrum(&self) -> Vec<f64> {
        (0..self.detuning_grid.len())
            .map(|i| self.scans.iter().map(|s| s[i]).max().unwrap_or(0) as f64)
            .collect()
    }

    fn in_peak_region(&self, k: usize, i: usize) -> bool {
        (self.detuning_grid[i] - self.true_center_log[k]).abs() <= self.peak_linewidth
    }

    /// No dark interval overlaps the peak region.
    pub fn is_complete(&self, k: usize) -> bool {
        !(0..self.detuning_grid.len()).any(|i| self.dark_points[k][i] && self.in_peak_region(k, i))
    }

    /// Fluorescence ended inside the peak region and did not come back
    /// before the end of the scan.
    pub fn is_terminated(&self, k: usize) -> bool {
        let order: Vec<usize> = if self.descending[k] {
            (0..self.detuning_grid.len()).rev().collect()
        } else {
            (0..self.detuning_grid.len()).collect()
        };
        let Some(first_dark) = order.iter().position(|&i| self.dark_points[k][i]) else {
            return false;
        };
        let was_bright_before = first_dark > 0;
        was_bright_before
            && self.in_peak_region(k, order[first_dark])
            && order[first_dark..].iter().all(|&i| self.dark_points[k][i])
    }

    /// Scans that show a complete peak right after a terminated scan.
    pub fn terminated_then_complete(&self) -> Vec<usize> {
        (1..self.n_scans())
            .filter(|&k| self.is_terminated(k - 1) && self.is_complete(k))
            .collect()
    }
}

#[derive(Default)]
struct PointCounter {
    photons: u64,
    went_dark: bool,
}

impl Sink for PointCounter {
    fn event(&mut self, _: f64, kind: EventKind, _: usize) {
        match kind {
            EventKind::PhotonDetected => self.photons += 1,
            EventKind::ToDark => self.went_dark = true,
            _ => {}
        }
    }
}

pub fn generate_ple(
    emitter: &EmitterParams,
    mode: PleMode,
    scan: &ScanConfig,
    n_scans: usize,
    seed: u64,
) -> Result<ScanMap, PleError> {
    generate_ple_with(emitter, mode, scan, &PleDrive::for_mode(mode), n_scans, seed, 0, SimOptions::default())
}

pub fn generate_ple_with(
    emitter: &EmitterParams,
    mode: PleMode,
    scan: &ScanConfig,
    drive: &PleDrive,
    n_scans: usize,
    seed: u64,
    map_index: u64,
    opts: SimOptions,
) -> Result<ScanMap, PleError> {
    emitter.validate()?;
    let program = expand_scan_program(mode, scan, n_scans, drive)?;
    let grid = scan.grid()?;
    let n = grid.len();

    // Maps of one run are independent: each gets its own stream index.
    let mut rng = rng::keyed(seed, map_index, rng::streams::PLE);
    // Separate stream, so enabling diffusion leaves the photon draws alone.
    let mut jump_rng = rng::keyed(seed, map_index, rng::streams::DIFFUSION);
    let diffusion = emitter.spectral_diffusion;
    let jump = Normal::new(0.0, diffusion.jump_sigma.max(0.0)).expect("validated sigma");

    let mut runner = Runner::new(emitter, opts, false);
    let mut map = ScanMap {
        mode,
        detuning_grid: grid,
        scans: Vec::with_capacity(n_scans),
        descending: Vec::with_capacity(n_scans),
        init_markers: Vec::with_capacity(n_scans),
        true_center_log: Vec::with_capacity(n_scans),
        dark_points: Vec::with_capacity(n_scans),
        peak_linewidth: emitter.broadened_linewidth(drive.res_power),
        dwell: scan.dwell,
    };
    let mut t = 0.0;
    for (k, seq) in program.iter().enumerate() {
        let mut counts = vec![0u64; n];
        let mut dark = vec![false; n];
        let mut had_init = false;
        for (j, seg) in seq.segments.iter().enumerate() {
            let started_dark = runner.is_dark();
            let mut sink = PointCounter::default();
            runner.run_segment(seg, j, t, &mut rng, &mut sink);
            t += seg.duration;
            match point_index(&seg.label) {
                Some(i) => {
                    counts[i] = sink.photons;
                    dark[i] = started_dark || sink.went_dark || runner.is_dark();
                }
                None => {
                    had_init |= seg.is_green_only();
                    if seg.is_green_only() && diffusion.is_enabled() && jump_rng.random::<f64>() < diffusion.jump_prob_per_init_pulse {
                        runner.center_shift = jump.sample(&mut jump_rng);
                    }
                }
            }
        }
        map.scans.push(counts);
        map.descending.push(crate::pulse::scan::is_descending(k));
        map.init_markers.push(had_init);
        map.true_center_log.push(runner.center_shift);
        map.dark_points.push(dark);
    }
    Ok(map)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanFit {
    pub scan: usize,
    pub fit: Option<FitResult>,
    /// Why the scan was left out of the statistics.
    pub excluded: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanStatistics {
    /// Fitted centres of the accepted scans, Hz.
    pub centers: Vec<f64>,
    /// Fitted FWHMs of the accepted scans, Hz.
    pub linewidths: Vec<f64>,
    pub fits: Vec<ScanFit>,
    /// Histogram FWHM of `centers` (needs at least 10 scans).
    pub center_fwhm: Option<f64>,
    pub linewidth_fwhm: Option<f64>,
    /// Set when no scan passed.
    pub empty_reason: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanFilter {
    All,
    /// Complete peaks whose preceding scan terminated near resonance.
    TerminatedThenComplete,
}

pub fn scan_statistics(map: &ScanMap, gating: &GatingRules) -> ScanStatistics {
    scan_statistics_filtered(map, gating, ScanFilter::All)
}

pub fn scan_statistics_filtered(map: &ScanMap, gating: &GatingRules, filter: ScanFilter) -> ScanStatistics {
    let selected: Vec<usize> = match filter {
        ScanFilter::All => (0..map.n_scans()).collect(),
        ScanFilter::TerminatedThenComplete => map.terminated_then_complete(),
    };
    let mut stats = ScanStatistics {
        centers: Vec::new(),
        linewidths: Vec::new(),
        fits: Vec::with_capacity(selected.len()),
        center_fwhm: None,
        linewidth_fwhm: None,
        empty_reason: None,
    };
    for k in selected {
        let entry = match fit_lorentzian(&map.detuning_grid, &map.scan_f64(k)) {
            Err(e) => ScanFit {
                scan: k,
                fit: None,
                excluded: Some(e.to_string()),
            },
            Ok(fit) => {
                let excluded = gating.reject_reason(&fit);
                if excluded.is_none() {
                    stats.centers.push(fit.get("center"));
                    stats.linewidths.push(fit.get("fwhm"));
                }
                ScanFit {
                    scan: k,
                    fit: Some(fit),
                    excluded,
                }
            }
        };
        stats.fits.push(entry);
    }
    stats.center_fwhm = hist_fwhm(&stats.centers).ok();
    stats.linewidth_fwhm = hist_fwhm(&stats.linewidths).ok();
    if stats.centers.is_empty() {
        stats.empty_reason = Some(if stats.fits.is_empty() {
            "no scans selected".into()
        } else {
            let mut reasons: Vec<String> = stats.fits.iter().filter_map(|f| f.excluded.clone()).collect();
            reasons.sort();
            reasons.dedup();
            format!("no scan passed gating: {}", reasons.join("; "))
        });
    }
    stats
}

/// Pools the accepted centres and linewidths of several maps.
pub fn pooled(stats: &[ScanStatistics]) -> (Vec<f64>, Vec<f64>) {
    let c = stats.iter().flat_map(|s| s.centers.iter().copied()).collect();
    let w = stats.iter().flat_map(|s| s.linewidths.iter().copied()).collect();
    (c, w)
}
