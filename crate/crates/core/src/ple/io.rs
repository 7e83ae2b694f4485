use crate::kv::{self, KvError, Writer};
use crate::pulse::scan::PleMode;
use crate::units::{self, Unit};

use super::ScanMap;

pub const SCAN_CSV_HEADER: &str = "scan_index, detuning_MHz, counts";

impl ScanMap {
    /// Long form, one row per (scan, grid point), grid ascending.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SCAN_CSV_HEADER);
        out.push('\n');
        let f: Vec<String> = self.detuning_grid.iter().map(|&d| units::format(d, Unit::Megahertz)).collect();
        for (k, scan) in self.scans.iter().enumerate() {
            for (i, c) in scan.iter().enumerate() {
                out.push_str(&format!("{k},{},{c}\n", f[i]));
            }
        }
        out
    }

    pub fn sidecar_text(&self) -> String {
        let flags = |v: &[bool]| v.iter().map(|&b| if b { "1" } else { "0" }).collect::<Vec<_>>().join(", ");
        let centers = self
            .true_center_log
            .iter()
            .map(|&c| units::format(c, Unit::Megahertz))
            .collect::<Vec<_>>()
            .join(", ");
        let mut w = Writer::new();
        w.section("scan_map")
            .raw("mode", self.mode.name())
            .num("dwell_ms", self.dwell, Unit::Millisecond)
            .num("peak_linewidth_MHz", self.peak_linewidth, Unit::Megahertz)
            .raw("n_scans", self.n_scans())
            .raw("n_points", self.detuning_grid.len())
            .raw("descending", flags(&self.descending))
            .raw("init_markers", flags(&self.init_markers))
            .raw("true_center_MHz", centers);
        w.finish()
    }
}

fn bad(line: usize, key: &str, msg: impl Into<String>) -> KvError {
    KvError::semantic(line, key, msg)
}

/// Reads a map written by [`ScanMap::to_csv`] and [`ScanMap::sidecar_text`].
/// Dark-state diagnostics are not stored and come back all false.
pub fn parse_scan_map(csv: &str, sidecar: &str) -> Result<ScanMap, KvError> {
    let doc = kv::parse(sidecar)?;
    doc.allow_sections(&["scan_map"])?;
    let s = doc
        .section("scan_map")
        .ok_or_else(|| bad(1, "scan_map", "missing [scan_map] section"))?;
    s.reject_unknown(&[
        "mode",
        "dwell_ms",
        "peak_linewidth_MHz",
        "n_scans",
        "n_points",
        "descending",
        "init_markers",
        "true_center_MHz",
    ])?;
    let mode = PleMode::parse(s.str("mode")?).ok_or_else(|| bad(s.line_of("mode"), "mode", "unknown PLE mode"))?;
    let n_scans = s.u64("n_scans")? as usize;
    let n_points = s.u64("n_points")? as usize;
    let list = |key: &str, unit: Unit| -> Result<Vec<f64>, KvError> {
        let v = s.f64_list(key, unit)?;
        if v.len() != n_scans {
            return Err(bad(s.line_of(key), key, format!("expected {n_scans} entries, found {}", v.len())));
        }
        Ok(v)
    };
    let flags = |key: &str| -> Result<Vec<bool>, KvError> { Ok(list(key, Unit::Unitless)?.iter().map(|&v| v != 0.0).collect()) };

    let mut map = ScanMap {
        mode,
        detuning_grid: Vec::with_capacity(n_points),
        scans: vec![vec![0; n_points]; n_scans],
        descending: flags("descending")?,
        init_markers: flags("init_markers")?,
        true_center_log: list("true_center_MHz", Unit::Megahertz)?,
        dark_points: vec![vec![false; n_points]; n_scans],
        peak_linewidth: s.f64("peak_linewidth_MHz", Unit::Megahertz)?,
        dwell: s.f64("dwell_ms", Unit::Millisecond)?,
    };

    let mut lines = csv.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.split(',').map(str::trim).eq(SCAN_CSV_HEADER.split(',').map(str::trim)) => {}
        _ => return Err(KvError::Syntax { line: 1, col: 1, msg: format!("expected header `{SCAN_CSV_HEADER}`") }),
    }
    let mut rows = 0;
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = raw.split(',').map(str::trim).collect();
        let syntax = |msg: String| KvError::Syntax { line, col: 1, msg };
        if f.len() != 3 {
            return Err(syntax(format!("expected 3 fields, found {}", f.len())));
        }
        let k: usize = f[0].parse().map_err(|_| syntax(format!("bad scan index `{}`", f[0])))?;
        let d = units::parse(f[1], Unit::Megahertz).ok_or_else(|| syntax(format!("bad detuning `{}`", f[1])))?;
        let c: u64 = f[2].parse().map_err(|_| syntax(format!("bad count `{}`", f[2])))?;
        let i = rows % n_points.max(1);
        if k != rows / n_points.max(1) || k >= n_scans {
            return Err(syntax("rows out of order".into()));
        }
        if k == 0 {
            map.detuning_grid.push(d);
        } else if map.detuning_grid[i] != d {
            return Err(syntax("grid differs between scans".into()));
        }
        map.scans[k][i] = c;
        rows += 1;
    }
    if rows != n_scans * n_points {
        return Err(KvError::Syntax {
            line: rows + 1,
            col: 1,
            msg: format!("expected {} rows, found {rows}", n_scans * n_points),
        });
    }
    Ok(map)
}
