use std::path::Path;

use snvsim_core::calibrate::{self, fixture_text, parse_targets, CalibrationError, TargetSet, VerifyReport};

use crate::config::{kv_error, load_emitter, read};
use crate::error::CliError;
use crate::output::{FileHash, Output};

fn load_targets(path: &Path) -> Result<(TargetSet, FileHash), CliError> {
    let text = read(path, "targets file")?;
    let set = parse_targets(&text).map_err(|e| kv_error(path, e))?;
    Ok((set, FileHash::of(path, &text)))
}

fn add_report(out: &mut Output, report: &VerifyReport) {
    out.add("verify.txt", report.to_text()).json("verify.json", report);
}

pub fn calibrate(config: &Path, dir: &Path) -> Result<(), CliError> {
    let (set, hash) = load_targets(config)?;
    let cal = calibrate::calibrate(&set.targets, &set.frozen).map_err(|e| match e {
        CalibrationError::InconsistentTargets(_) => CliError::Calibration(format!("{}: {e}", config.display())),
        _ => CliError::Config(format!("{}: {e}", config.display())),
    })?;
    let mut out = Output::new(dir, "calibrate");
    out.input(hash);
    out.add(format!("emitter{}.emitter", cal.emitter_id), fixture_text(&cal, set.note.as_deref()));
    add_report(&mut out, &cal.report);
    let dir = out.finish()?;
    print!("{}", cal.report.to_text());
    println!("emitter{}.emitter -> {}", cal.emitter_id, dir.display());
    Ok(())
}

pub fn verify(emitter: &Path, config: &Path, dir: &Path) -> Result<(), CliError> {
    let (params, emitter_hash) = load_emitter(emitter)?;
    let (set, hash) = load_targets(config)?;
    if set.targets.is_empty() {
        return Err(CliError::Config(format!("{}: {}", config.display(), CalibrationError::NoTargets)));
    }
    let mut ids: Vec<String> = set.targets.iter().map(|t| t.emitter_id.clone()).collect();
    ids.sort();
    ids.dedup();
    if ids.len() > 1 {
        return Err(CliError::Config(format!(
            "{}: {}",
            config.display(),
            CalibrationError::MixedEmitters(ids)
        )));
    }
    let report = calibrate::verify(&params, &set.targets);
    let mut out = Output::new(dir, "verify");
    out.input(emitter_hash).input(hash);
    add_report(&mut out, &report);
    out.finish()?;
    print!("{}", report.to_text());
    if report.all_pass() {
        Ok(())
    } else {
        Err(CliError::Calibration(format!(
            "{} of {} targets failed",
            report.failures().len(),
            report.checks.len()
        )))
    }
}
