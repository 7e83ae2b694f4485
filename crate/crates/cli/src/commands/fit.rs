//! Fits to CSVs already on disk. The file kind is recognised by its header:
//! binned traces and scan maps written by this tool, or any CSV with a
//! header row of column names.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use snvsim_core::analysis::{fit_exp_decay, fit_linear, fit_lorentzian, fit_recovery_steps, FitResult};
use snvsim_core::ple::{parse_scan_map, SCAN_CSV_HEADER};
use snvsim_core::ssa::{parse_trace, parse_trace_csv, BinnedTrace, TRACE_CSV_HEADER};

use super::fit_segment_decay;
use crate::config::read;
use crate::error::CliError;
use crate::output::Output;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Model {
    ExpDecay,
    Lorentzian,
    Linear,
    Recovery,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// CSV to fit.
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub model: Model,
    /// Sidecar of a trace or scan map (default: the CSV path with `.meta`).
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// Trace segment index for exp-decay (default: the only recorded one).
    #[arg(long)]
    pub segment: Option<usize>,
    /// Scan index for a scan map (default: sum over all scans).
    #[arg(long)]
    pub scan: Option<usize>,
    /// Column names for a generic CSV (default: the first two columns).
    #[arg(long)]
    pub x: Option<String>,
    #[arg(long)]
    pub y: Option<String>,
    #[arg(long, env = "SNVSIM_OUT_DIR", default_value = "snvsim-out")]
    pub out: PathBuf,
}

/// A CSV with a header row and numeric fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let columns: Vec<String> = r.headers().map_err(|e| e.to_string())?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            let line = rec.position().map_or(0, |p| p.line());
            let row = rec
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| format!("line {line}: `{f}` is not a number")))
                .collect::<Result<Vec<f64>, String>>()?;
            rows.push(row);
        }
        if columns.is_empty() || columns.iter().all(String::is_empty) {
            return Err("empty file".into());
        }
        Ok(Self { columns, rows })
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, String> {
        let k = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| format!("no column `{name}` (have: {})", self.columns.join(", ")))?;
        Ok(self.rows.iter().map(|r| r[k]).collect())
    }
}

fn sidecar(args: &FitArgs) -> PathBuf {
    args.meta.clone().unwrap_or_else(|| args.input.with_extension("meta"))
}

fn header_is(text: &str, header: &str) -> bool {
    text.lines()
        .next()
        .is_some_and(|h| h.split(',').map(str::trim).eq(header.split(',').map(str::trim)))
}

fn load_trace(args: &FitArgs, text: &str) -> Result<BinnedTrace, CliError> {
    let input = &args.input;
    let meta = sidecar(args);
    let parsed = if args.meta.is_some() || meta.exists() {
        parse_trace(text, &read(&meta, "trace sidecar")?)
    } else {
        parse_trace_csv(text)
    };
    parsed.map_err(|e| CliError::Config(format!("{}: {e}", input.display())))
}

fn fit_trace(args: &FitArgs, trace: &BinnedTrace) -> Result<FitResult, CliError> {
    let bad = |m: String| CliError::Config(format!("{}: {m}", args.input.display()));
    let segs = trace.segments();
    match args.model {
        Model::ExpDecay => {
            let seg = match args.segment {
                Some(s) if segs.contains(&s) => s,
                Some(s) => return Err(bad(format!("segment {s} has no bins (recorded: {segs:?})"))),
                None if segs.len() == 1 => segs[0],
                None => return Err(bad(format!("several recorded segments {segs:?}; pick one with --segment"))),
            };
            fit_segment_decay(trace, seg)
        }
        Model::Recovery => {
            let totals: Vec<f64> = segs.iter().map(|&s| trace.segment_total(s) as f64).collect();
            fit_recovery_steps(&totals).map_err(|e| CliError::Runtime(e.to_string()))
        }
        Model::Linear => fit_linear(&trace.bin_centers(), &trace.counts.iter().map(|&c| c as f64).collect::<Vec<_>>())
            .map_err(|e| CliError::Runtime(e.to_string())),
        Model::Lorentzian => Err(bad("a time trace has no spectrum; use a scan map".into())),
    }
}

fn fit_table(args: &FitArgs, t: &Table) -> Result<FitResult, CliError> {
    let bad = |m: String| CliError::Config(format!("{}: {m}", args.input.display()));
    if t.columns.len() < 2 && args.model != Model::Recovery {
        return Err(bad("need at least two columns".into()));
    }
    let xname = args.x.clone().unwrap_or_else(|| t.columns[0].clone());
    let yname = args
        .y
        .clone()
        .unwrap_or_else(|| t.columns.get(1).cloned().unwrap_or_else(|| t.columns[0].clone()));
    let y = t.column(&yname).map_err(bad)?;
    let run = |r: Result<FitResult, _>| r.map_err(|e: snvsim_core::analysis::FitError| CliError::Runtime(e.to_string()));
    if args.model == Model::Recovery {
        return run(fit_recovery_steps(&y));
    }
    let x = t.column(&xname).map_err(bad)?;
    run(match args.model {
        Model::ExpDecay => fit_exp_decay(&x, &y),
        Model::Lorentzian => fit_lorentzian(&x, &y),
        Model::Linear => fit_linear(&x, &y),
        Model::Recovery => unreachable!(),
    })
}

pub fn fit_file(args: &FitArgs) -> Result<(FitResult, Vec<(PathBuf, String)>), CliError> {
    let text = read(&args.input, "input")?;
    let mut inputs = vec![(args.input.clone(), text.clone())];
    let fit = if header_is(&text, TRACE_CSV_HEADER) {
        let trace = load_trace(args, &text)?;
        fit_trace(args, &trace)?
    } else if header_is(&text, SCAN_CSV_HEADER) {
        if args.model != Model::Lorentzian {
            return Err(CliError::Config(format!(
                "{}: scan maps take the lorentzian model",
                args.input.display()
            )));
        }
        let meta_path = sidecar(args);
        let meta = read(&meta_path, "scan map sidecar")?;
        let map = parse_scan_map(&text, &meta).map_err(|e| CliError::Config(format!("{}: {e}", args.input.display())))?;
        inputs.push((meta_path, meta));
        let y: Vec<f64> = match args.scan {
            Some(k) if k < map.n_scans() => map.scans[k].iter().map(|&c| c as f64).collect(),
            Some(k) => {
                return Err(CliError::Config(format!(
                    "{}: scan {k} out of range (map has {})",
                    args.input.display(),
                    map.n_scans()
                )))
            }
            None => map.sum_spectrum(),
        };
        fit_lorentzian(&map.detuning_grid, &y).map_err(|e| CliError::Runtime(e.to_string()))?
    } else {
        let t = Table::parse(&text).map_err(|m| CliError::Config(format!("{}: {m}", args.input.display())))?;
        fit_table(args, &t)?
    };
    Ok((fit, inputs))
}

pub fn run(args: &FitArgs) -> Result<(), CliError> {
    let (fit, inputs) = fit_file(args)?;
    let mut out = Output::new(&args.out, "fit");
    for (p, text) in &inputs {
        out.input(crate::output::FileHash::of(Path::new(p), text));
    }
    out.add("fit.txt", fit.to_text()).json("fit.json", &fit);
    out.finish()?;
    print!("{}", fit.to_text());
    Ok(())
}
