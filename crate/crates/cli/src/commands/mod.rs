pub mod calibrate;
pub mod fit;
pub mod ple;
pub mod simulate;
pub mod sweep;

use snvsim_core::analysis::{fit_exp_decay, FitResult};
use snvsim_core::pulse::PulseSequence;
use snvsim_core::ssa::BinnedTrace;

use crate::error::CliError;

/// Segment index of the first segment labelled `label`.
pub fn segment_index(seq: &PulseSequence, label: &str) -> Result<usize, String> {
    seq.segments.iter().position(|s| s.label == label).ok_or_else(|| {
        let labels: Vec<&str> = seq.segments.iter().map(|s| s.label.as_str()).collect();
        format!("no segment labelled `{label}` (have: {})", labels.join(", "))
    })
}

/// Exponential fit to the bins of one segment, time measured from the
/// segment's first bin.
pub fn fit_segment_decay(trace: &BinnedTrace, segment: usize) -> Result<FitResult, CliError> {
    let r = trace.segment_range(segment);
    if r.is_empty() {
        return Err(CliError::Runtime(format!("segment {segment} has no recorded bins")));
    }
    let t0 = trace.bin_start[r.start];
    let t: Vec<f64> = trace.bin_centers()[r.clone()].iter().map(|c| c - t0).collect();
    let y: Vec<f64> = trace.counts[r].iter().map(|&c| c as f64).collect();
    fit_exp_decay(&t, &y).map_err(|e| CliError::Runtime(format!("decay fit of segment {segment}: {e}")))
}

/// Plot script for a two-column CSV.
pub fn gnuplot_script(csv: &str, title: &str, xlabel: &str, ylabel: &str, columns: &str, style: &str) -> String {
    format!(
        "set datafile separator ','\nset key off\nset title '{title}'\nset xlabel '{xlabel}'\nset ylabel '{ylabel}'\nplot '{csv}' skip 1 using {columns} with {style}\n"
    )
}
