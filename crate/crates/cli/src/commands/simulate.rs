use serde::Serialize;
use snvsim_core::ssa::simulate_ensemble_with;

use super::gnuplot_script;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::Output;
use crate::RunArgs;

#[derive(Serialize)]
struct SegmentSummary {
    index: usize,
    label: String,
    duration_ms: f64,
    recorded: bool,
    counts: u64,
    /// Mean detected rate per repetition over the segment.
    mean_cps: Option<f64>,
}

#[derive(Serialize)]
struct Summary {
    seed: u64,
    n_reps: u64,
    n_bins: usize,
    total_counts: u64,
    sequence_sha256: String,
    emitter_sha256: String,
    segments: Vec<SegmentSummary>,
}

pub fn run(args: &RunArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(args, &["overrides"])?;
    let seq = cfg.sequence(args.reps_override)?;
    let trace = simulate_ensemble_with(&cfg.emitter, &seq, cfg.seed, cfg.sim)
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let segments = seq
        .segments
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let counts = trace.segment_total(i);
            SegmentSummary {
                index: i,
                label: s.label.clone(),
                duration_ms: s.duration * 1e3,
                recorded: s.record,
                counts,
                mean_cps: s.record.then(|| counts as f64 / (trace.n_reps as f64 * s.duration)),
            }
        })
        .collect();
    let summary = Summary {
        seed: cfg.seed,
        n_reps: trace.n_reps,
        n_bins: trace.len(),
        total_counts: trace.counts.iter().sum(),
        sequence_sha256: trace.meta.sequence_hash.clone(),
        emitter_sha256: trace.meta.emitter_hash.clone(),
        segments,
    };

    let mut out = Output::new(&args.out, "simulate");
    out.inputs(&cfg.inputs).seed(cfg.seed, args.reps_override);
    if cfg.formats.csv {
        out.add("trace.csv", trace.to_csv()).add("trace.meta", trace.meta_text());
    }
    if cfg.formats.json {
        out.json("summary.json", &summary);
    }
    if cfg.formats.gnuplot {
        out.add(
            "trace.gp",
            gnuplot_script("trace.csv", "binned trace", "time (s)", "counts", "(($1+$2)/2):3", "steps"),
        );
    }
    let dir = out.finish()?;
    println!(
        "simulated {} reps, {} bins, {} counts -> {}",
        summary.n_reps,
        summary.n_bins,
        summary.total_counts,
        dir.display()
    );
    Ok(())
}
