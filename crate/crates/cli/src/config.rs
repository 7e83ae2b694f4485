//! Run configuration files.
//!
//! ```text
//! [run]
//! emitter = ../fixtures/emitters/emitter12.emitter   # relative to this file
//! sequence = simultaneous        # canonical name, or
//! # sequence_file = my.seq       # a sequence file
//! seed = 1
//! formats = csv, json, gnuplot   # default: csv, json
//! sim_mode = hybrid              # or exact
//!
//! [overrides]                    # canonical-sequence parameters
//! res_power_nW = 5
//! ```
//!
//! Commands add their own sections (`[sweep]`, `[ple]`, `[scan]`, `[gating]`).

use std::fs;
use std::path::{Path, PathBuf};

use snvsim_core::kinetics::{parse_emitter, EmitterParams};
use snvsim_core::kv::{self, Document, KvError, Section};
use snvsim_core::pulse::canonical::build_canonical;
use snvsim_core::pulse::{parse_sequence, PulseSequence};
use snvsim_core::ssa::{SimMode, SimOptions};

use crate::error::CliError;
use crate::output::FileHash;
use crate::RunArgs;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Formats {
    pub csv: bool,
    pub json: bool,
    pub gnuplot: bool,
}

pub struct RunConfig {
    pub path: PathBuf,
    pub doc: Document,
    pub emitter: EmitterParams,
    pub seed: u64,
    pub formats: Formats,
    pub sim: SimOptions,
    /// Hashes of the configuration and every file it references.
    pub inputs: Vec<FileHash>,
}

pub fn read(path: &Path, what: &str) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {what} `{}`: {e}", path.display())))
}

pub fn kv_error(path: &Path, e: KvError) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

pub fn load_emitter(path: &Path) -> Result<(EmitterParams, FileHash), CliError> {
    let text = read(path, "emitter file")?;
    let params = parse_emitter(&text).map_err(|e| kv_error(path, e))?;
    Ok((params, FileHash::of(path, &text)))
}

const RUN_KEYS: &[&str] = &["emitter", "sequence", "sequence_file", "seed", "formats", "sim_mode"];

impl RunConfig {
    /// Parses the configuration named in `args`, accepting only `sections`
    /// besides `[run]`.
    pub fn load(args: &RunArgs, sections: &[&str]) -> Result<Self, CliError> {
        let path = args.config.clone();
        let text = read(&path, "configuration")?;
        let doc = kv::parse(&text).map_err(|e| kv_error(&path, e))?;
        let mut allowed = vec!["run"];
        allowed.extend_from_slice(sections);
        doc.allow_sections(&allowed).map_err(|e| kv_error(&path, e))?;
        let run = doc
            .section("run")
            .ok_or_else(|| CliError::Config(format!("{}: missing [run] section", path.display())))?;
        run.reject_unknown(RUN_KEYS).map_err(|e| kv_error(&path, e))?;
        for name in &allowed {
            if doc.sections_named(name).count() > 1 {
                return Err(CliError::Config(format!("{}: [{name}] may appear only once", path.display())));
            }
        }

        let emitter_path = resolve(&path, run.str("emitter").map_err(|e| kv_error(&path, e))?);
        let (emitter, emitter_hash) = load_emitter(&emitter_path)?;

        let seed = match args.seed {
            Some(s) => s,
            None => run.opt_u64("seed").map_err(|e| kv_error(&path, e))?.ok_or_else(|| {
                CliError::Config(format!("{}: no seed in [run] and no --seed given", path.display()))
            })?,
        };

        let mut formats = Formats {
            csv: true,
            json: true,
            gnuplot: false,
        };
        if let Some(list) = run.opt_str("formats") {
            formats = Formats {
                csv: false,
                json: false,
                gnuplot: false,
            };
            for f in list.split(',').map(str::trim) {
                match f {
                    "csv" => formats.csv = true,
                    "json" => formats.json = true,
                    "gnuplot" => formats.gnuplot = true,
                    other => {
                        return Err(kv_error(
                            &path,
                            KvError::semantic(run.line_of("formats"), "formats", format!("unknown format `{other}`")),
                        ))
                    }
                }
            }
        }

        let mut sim = SimOptions::default();
        if let Some(m) = run.opt_str("sim_mode") {
            sim.mode = match m {
                "hybrid" => SimMode::Hybrid,
                "exact" => SimMode::Exact,
                other => {
                    return Err(kv_error(
                        &path,
                        KvError::semantic(run.line_of("sim_mode"), "sim_mode", format!("`{other}` is not hybrid or exact")),
                    ))
                }
            };
        }

        let inputs = vec![FileHash::of(&path, &text), emitter_hash];
        Ok(Self {
            path,
            doc,
            emitter,
            seed,
            formats,
            sim,
            inputs,
        })
    }

    pub fn run_section(&self) -> &Section {
        self.doc.section("run").expect("checked in load")
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.doc.section(name)
    }

    pub fn err(&self, e: KvError) -> CliError {
        kv_error(&self.path, e)
    }

    /// The sequence named in `[run]`, with `[overrides]` applied to a
    /// canonical sequence and the repetition override on top.
    pub fn sequence(&mut self, reps_override: Option<u64>) -> Result<PulseSequence, CliError> {
        let run = self.run_section();
        let mut seq = match (run.opt_str("sequence"), run.opt_str("sequence_file")) {
            (Some(name), None) => build_canonical(name, self.section("overrides")).map_err(|e| self.err(e))?,
            (None, Some(file)) => {
                if self.section("overrides").is_some() {
                    return Err(CliError::Config(format!(
                        "{}: [overrides] applies only to canonical sequences",
                        self.path.display()
                    )));
                }
                let p = resolve(&self.path, file);
                let text = read(&p, "sequence file")?;
                let seq = parse_sequence(&text).map_err(|e| kv_error(&p, e))?;
                self.inputs.push(FileHash::of(&p, &text));
                seq
            }
            (Some(_), Some(_)) => {
                return Err(CliError::Config(format!(
                    "{}: give either `sequence` or `sequence_file`, not both",
                    self.path.display()
                )))
            }
            (None, None) => {
                return Err(CliError::Config(format!(
                    "{}: [run] needs `sequence` or `sequence_file`",
                    self.path.display()
                )))
            }
        };
        if let Some(r) = reps_override {
            if r == 0 {
                return Err(CliError::Config("--reps-override must be at least 1".into()));
            }
            seq.repetitions = r;
        }
        seq.validate()
            .map_err(|e| CliError::Config(format!("{}: {e}", self.path.display())))?;
        Ok(seq)
    }
}

/// Paths in a configuration are relative to the configuration's directory.
pub fn resolve(config: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config.parent().unwrap_or(Path::new(".")).join(p)
    }
}
