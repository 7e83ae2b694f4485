//! Inverts measured observables into emitter coefficients.
//!
//! Every kinetic observable is linear in the three charge-transfer
//! coefficients once τ and P_sat are fixed, so the kinetic part is one
//! weighted linear least-squares solve; the detection efficiency follows
//! from the bright count rate. The result is then checked against every
//! target through the analytic forward model.

mod file;

pub use file::{parse_targets, serialize_targets, TargetSet};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::analysis::fit_linear;
use crate::kinetics::{
    build_rates, effective_telegraph, serialize_emitter, EmitterParams, LaserState, SpectralDiffusionParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    /// Relaxation rate k_off + k_on of the bright population, Hz.
    DecayRate,
    /// Least-squares slope of the decay rate over a resonant-power sweep, Hz/W.
    DecaySlopeVsRes,
    /// Dark-to-bright rate k_rec, Hz.
    RecoveryRate,
    /// Count rate while bright, background included, counts/s.
    BrightCps,
    /// Power-broadened PLE linewidth, Hz.
    Linewidth,
}

impl Observable {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "decay_rate" => Observable::DecayRate,
            "decay_slope_vs_res" => Observable::DecaySlopeVsRes,
            "recovery_rate" => Observable::RecoveryRate,
            "bright_cps" => Observable::BrightCps,
            "linewidth" => Observable::Linewidth,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Observable::DecayRate => "decay_rate",
            Observable::DecaySlopeVsRes => "decay_slope_vs_res",
            Observable::RecoveryRate => "recovery_rate",
            Observable::BrightCps => "bright_cps",
            Observable::Linewidth => "linewidth",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationTarget {
    /// Where the value comes from, e.g. `3(b)`.
    pub figure: String,
    pub emitter_id: String,
    pub observable: Observable,
    /// Drive at resonance. For a slope target only the green power is used.
    pub condition: LaserState,
    /// Resonant powers of the sweep behind a slope target, W.
    pub res_sweep: Vec<f64>,
    /// SI value.
    pub value: f64,
    /// Allowed relative deviation.
    pub tolerance: f64,
}

impl CalibrationTarget {
    pub fn describe(&self) -> String {
        let c = &self.condition;
        let drive = if self.observable == Observable::DecaySlopeVsRes {
            let nw: Vec<String> = self.res_sweep.iter().map(|p| format!("{}", p * 1e9)).collect();
            format!("res [{}] nW, green {} uW", nw.join(", "), c.green_power * 1e6)
        } else {
            format!("res {} nW, green {} uW", c.res_power * 1e9, c.green_power * 1e6)
        };
        format!("{} {} ({drive})", self.figure, self.observable.name())
    }
}

/// Coefficients a calibration can solve for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Coefficient {
    IonCoeffGreen,
    IonCoeffRes,
    RecCoeffGreen,
    DetectEff,
}

impl Coefficient {
    pub const ALL: [Coefficient; 4] = [
        Coefficient::IonCoeffGreen,
        Coefficient::IonCoeffRes,
        Coefficient::RecCoeffGreen,
        Coefficient::DetectEff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Coefficient::IonCoeffGreen => "ion_coeff_green",
            Coefficient::IonCoeffRes => "ion_coeff_res",
            Coefficient::RecCoeffGreen => "rec_coeff_green",
            Coefficient::DetectEff => "detect_eff",
        }
    }

    pub fn get(self, p: &EmitterParams) -> f64 {
        match self {
            Coefficient::IonCoeffGreen => p.ion_coeff_green,
            Coefficient::IonCoeffRes => p.ion_coeff_res,
            Coefficient::RecCoeffGreen => p.rec_coeff_green,
            Coefficient::DetectEff => p.detect_eff,
        }
    }

    pub fn set(self, p: &mut EmitterParams, v: f64) {
        match self {
            Coefficient::IonCoeffGreen => p.ion_coeff_green = v,
            Coefficient::IonCoeffRes => p.ion_coeff_res = v,
            Coefficient::RecCoeffGreen => p.rec_coeff_green = v,
            Coefficient::DetectEff => p.detect_eff = v,
        }
    }
}

/// Emitter fields fixed before the solve; `None` means solve for it (for
/// the four coefficients) or missing (for everything else).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrozenParams {
    pub lifetime_excited: Option<f64>,
    pub sat_power_resonant: Option<f64>,
    pub ion_coeff_green: Option<f64>,
    pub ion_coeff_res: Option<f64>,
    pub rec_coeff_green: Option<f64>,
    pub detect_eff: Option<f64>,
    pub bg_dark_cps: Option<f64>,
    pub bg_green_cps_per_w: Option<f64>,
    pub center_frequency: Option<f64>,
}

impl FrozenParams {
    fn coefficient(&self, c: Coefficient) -> Option<f64> {
        match c {
            Coefficient::IonCoeffGreen => self.ion_coeff_green,
            Coefficient::IonCoeffRes => self.ion_coeff_res,
            Coefficient::RecCoeffGreen => self.rec_coeff_green,
            Coefficient::DetectEff => self.detect_eff,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("no targets given")]
    NoTargets,
    #[error("targets mix emitters {0:?}; calibrate one emitter at a time")]
    MixedEmitters(Vec<String>),
    #[error("underdetermined: {}", .0.join("; "))]
    Underdetermined(Vec<String>),
    #[error("inconsistent targets: {}", .0.join("; "))]
    InconsistentTargets(Vec<String>),
    #[error("target {index}: {msg}")]
    InvalidTarget { index: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub params: EmitterParams,
    pub emitter_id: String,
    /// Coefficients determined by the targets, in solve order.
    pub solved: Vec<Coefficient>,
    pub report: VerifyReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetCheck {
    pub target: String,
    pub observable: Observable,
    pub expected: f64,
    pub predicted: f64,
    /// (predicted − expected)/expected.
    pub margin: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Set when the forward model could not be evaluated.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<TargetCheck>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<&TargetCheck> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let status = if c.pass { "PASS" } else { "FAIL" };
            match &c.error {
                Some(e) => out.push_str(&format!("{status} {}: {e}\n", c.target)),
                None => out.push_str(&format!(
                    "{status} {}: expected {:.6e}, predicted {:.6e}, margin {:+.2}% (tolerance {:.2}%)\n",
                    c.target,
                    c.expected,
                    c.predicted,
                    100.0 * c.margin,
                    100.0 * c.tolerance
                )),
            }
        }
        let n_fail = self.failures().len();
        out.push_str(&format!("{} checked, {} failed\n", self.checks.len(), n_fail));
        out
    }
}

fn at_resonance(res_power: f64, green_power: f64) -> LaserState {
    LaserState::new(res_power, 0.0, green_power)
}

/// Decay rate through the telegraph reduction.
fn decay_rate(p: &EmitterParams, laser: &LaserState) -> Result<f64, String> {
    let rates = build_rates(p, laser).map_err(|e| e.to_string())?;
    let t = effective_telegraph(&rates).map_err(|e| e.to_string())?;
    Ok(t.relaxation_rate())
}

/// Analytic value of one observable for `p`.
pub fn predict(p: &EmitterParams, target: &CalibrationTarget) -> Result<f64, String> {
    let c = &target.condition;
    match target.observable {
        Observable::DecayRate => decay_rate(p, &at_resonance(c.res_power, c.green_power)),
        Observable::DecaySlopeVsRes => {
            let rates = target
                .res_sweep
                .iter()
                .map(|&r| decay_rate(p, &at_resonance(r, c.green_power)))
                .collect::<Result<Vec<f64>, String>>()?;
            let fit = fit_linear(&target.res_sweep, &rates).map_err(|e| e.to_string())?;
            if fit.degenerate {
                return Err("slope needs at least three distinct resonant powers".into());
            }
            Ok(fit.get("slope"))
        }
        Observable::RecoveryRate => Ok(p.rec_coeff_green * c.green_power),
        Observable::BrightCps => {
            let laser = at_resonance(c.res_power, c.green_power);
            Ok(p.detect_eff * p.gamma_sp() * p.excited_fraction(&laser) + p.background_cps(&laser))
        }
        Observable::Linewidth => Ok(p.broadened_linewidth(c.res_power)),
    }
}

/// Forward-evaluates every target and reports signed relative margins.
pub fn verify(p: &EmitterParams, targets: &[CalibrationTarget]) -> VerifyReport {
    let checks = targets
        .iter()
        .map(|t| match predict(p, t) {
            Ok(pred) => {
                let margin = (pred - t.value) / t.value;
                TargetCheck {
                    target: t.describe(),
                    observable: t.observable,
                    expected: t.value,
                    predicted: pred,
                    margin,
                    tolerance: t.tolerance,
                    pass: margin.abs() <= t.tolerance,
                    error: None,
                }
            }
            Err(e) => TargetCheck {
                target: t.describe(),
                observable: t.observable,
                expected: t.value,
                predicted: f64::NAN,
                margin: f64::NAN,
                tolerance: t.tolerance,
                pass: false,
                error: Some(e),
            },
        })
        .collect();
    VerifyReport { checks }
}

fn validate_target(index: usize, t: &CalibrationTarget) -> Result<(), CalibrationError> {
    let bad = |msg: &str| CalibrationError::InvalidTarget {
        index,
        msg: format!("{}: {msg}", t.describe()),
    };
    if !(t.value.is_finite() && t.value > 0.0) {
        return Err(bad("value must be finite and > 0"));
    }
    if !(t.tolerance.is_finite() && t.tolerance >= 0.0) {
        return Err(bad("tolerance must be finite and >= 0"));
    }
    t.condition.validate().map_err(|e| bad(&e.to_string()))?;
    if t.observable == Observable::DecaySlopeVsRes && t.res_sweep.len() < 3 {
        return Err(bad("slope needs at least three resonant powers"));
    }
    if t.res_sweep.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(bad("resonant powers must be finite and >= 0"));
    }
    Ok(())
}

/// Row of the kinetic design matrix: the observable's derivative with
/// respect to (c_g, c_r, c_rec). Exact, since each kinetic observable is
/// linear in them.
fn kinetic_row(p: &EmitterParams, t: &CalibrationTarget) -> Option<[f64; 3]> {
    let pe = |res: f64| p.excited_fraction(&at_resonance(res, 0.0));
    let g = t.condition.green_power;
    match t.observable {
        Observable::DecayRate => {
            let r = t.condition.res_power;
            Some([pe(r) * g, pe(r) * r, g])
        }
        Observable::DecaySlopeVsRes => {
            let xs = &t.res_sweep;
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let sxx: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
            let mut row = [0.0; 3];
            for &x in xs {
                let w = (x - mean) / sxx;
                row[0] += w * pe(x) * g;
                row[1] += w * pe(x) * x;
                row[2] += w * g;
            }
            Some(row)
        }
        Observable::RecoveryRate => Some([0.0, 0.0, g]),
        Observable::BrightCps | Observable::Linewidth => None,
    }
}

/// Solves for every coefficient not frozen, then checks all targets.
pub fn calibrate(targets: &[CalibrationTarget], frozen: &FrozenParams) -> Result<Calibration, CalibrationError> {
    if targets.is_empty() {
        return Err(CalibrationError::NoTargets);
    }
    let mut ids: Vec<String> = targets.iter().map(|t| t.emitter_id.clone()).collect();
    ids.sort();
    ids.dedup();
    if ids.len() > 1 {
        return Err(CalibrationError::MixedEmitters(ids));
    }
    for (i, t) in targets.iter().enumerate() {
        validate_target(i, t)?;
    }

    let required = [
        ("lifetime_excited", frozen.lifetime_excited),
        ("sat_power_resonant", frozen.sat_power_resonant),
        ("bg_dark_cps", frozen.bg_dark_cps),
        ("bg_green_cps_per_w", frozen.bg_green_cps_per_w),
        ("center_frequency", frozen.center_frequency),
    ];
    let missing: Vec<String> = required
        .iter()
        .filter(|(_, v)| v.is_none())
        .map(|(n, _)| format!("{n} must be frozen"))
        .collect();
    if !missing.is_empty() {
        return Err(CalibrationError::Underdetermined(missing));
    }

    let mut p = EmitterParams {
        lifetime_excited: frozen.lifetime_excited.unwrap(),
        sat_power_resonant: frozen.sat_power_resonant.unwrap(),
        ion_coeff_green: frozen.ion_coeff_green.unwrap_or(0.0),
        ion_coeff_res: frozen.ion_coeff_res.unwrap_or(0.0),
        rec_coeff_green: frozen.rec_coeff_green.unwrap_or(0.0),
        detect_eff: frozen.detect_eff.unwrap_or(1.0),
        bg_dark_cps: frozen.bg_dark_cps.unwrap(),
        bg_green_cps_per_w: frozen.bg_green_cps_per_w.unwrap(),
        center_frequency: frozen.center_frequency.unwrap(),
        spectral_diffusion: SpectralDiffusionParams::default(),
    };

    let kinetic = [Coefficient::IonCoeffGreen, Coefficient::IonCoeffRes, Coefficient::RecCoeffGreen];
    let free: Vec<usize> = (0..3).filter(|&j| frozen.coefficient(kinetic[j]).is_none()).collect();
    let mut solved = Vec::new();
    let rows: Vec<(&CalibrationTarget, [f64; 3])> = targets
        .iter()
        .filter_map(|t| kinetic_row(&p, t).map(|r| (t, r)))
        .collect();

    if !free.is_empty() {
        let fixed = [p.ion_coeff_green, p.ion_coeff_res, p.rec_coeff_green];
        // Relative residuals: each row is divided by its target value.
        let a = DMatrix::from_fn(rows.len(), free.len(), |i, j| rows[i].1[free[j]] / rows[i].0.value);
        let b = DVector::from_fn(rows.len(), |i, _| {
            let (t, r) = &rows[i];
            let known: f64 = (0..3).filter(|j| !free.contains(j)).map(|j| r[j] * fixed[j]).sum();
            (t.value - known) / t.value
        });
        let unidentified = unidentified_columns(&a);
        if !unidentified.is_empty() {
            let names = unidentified
                .iter()
                .map(|&j| format!("no target constrains {}; freeze it or add a target", kinetic[free[j]].name()))
                .collect();
            return Err(CalibrationError::Underdetermined(names));
        }
        let x = a
            .clone()
            .svd(true, true)
            .solve(&b, 1e-14)
            .map_err(|e| CalibrationError::Underdetermined(vec![e.to_string()]))?;
        for (j, &col) in free.iter().enumerate() {
            kinetic[col].set(&mut p, x[j]);
            solved.push(kinetic[col]);
        }
    }

    if frozen.detect_eff.is_none() {
        // bright_cps − background = η · Γ · p_e, one unknown.
        let (mut num, mut den) = (0.0, 0.0);
        for t in targets.iter().filter(|t| t.observable == Observable::BrightCps) {
            let laser = at_resonance(t.condition.res_power, t.condition.green_power);
            let a = p.gamma_sp() * p.excited_fraction(&laser) / t.value;
            let b = (t.value - p.background_cps(&laser)) / t.value;
            num += a * b;
            den += a * a;
        }
        if den == 0.0 {
            return Err(CalibrationError::Underdetermined(vec![
                "no bright_cps target at nonzero resonant power constrains detect_eff; freeze it or add one".into(),
            ]));
        }
        p.detect_eff = num / den;
        solved.push(Coefficient::DetectEff);
    }

    let negative: Vec<String> = solved
        .iter()
        .filter(|c| !(c.get(&p) >= 0.0) || (**c == Coefficient::DetectEff && !(c.get(&p) > 0.0 && c.get(&p) <= 1.0)))
        .map(|c| format!("{} = {:e} is unphysical", c.name(), c.get(&p)))
        .collect();
    if !negative.is_empty() {
        return Err(CalibrationError::InconsistentTargets(negative));
    }

    let report = verify(&p, targets);
    if !report.all_pass() {
        let violated = report
            .failures()
            .iter()
            .map(|c| match &c.error {
                Some(e) => format!("{}: {e}", c.target),
                None => format!("{}: margin {:+.3}% exceeds {:.3}%", c.target, 100.0 * c.margin, 100.0 * c.tolerance),
            })
            .collect();
        return Err(CalibrationError::InconsistentTargets(violated));
    }
    Ok(Calibration {
        params: p,
        emitter_id: ids.remove(0),
        solved,
        report,
    })
}

/// Emitter file for a calibration, with a header saying which values were
/// solved and which were taken as given.
pub fn fixture_text(cal: &Calibration, note: Option<&str>) -> String {
    let solved: Vec<&str> = cal.solved.iter().map(|c| c.name()).collect();
    let mut header = format!("Emitter {} calibrated against {} targets.\n", cal.emitter_id, cal.report.checks.len());
    header.push_str(&format!(
        "Solved: {}. All other values frozen.\n",
        if solved.is_empty() { "none".to_string() } else { solved.join(", ") }
    ));
    for c in &cal.report.checks {
        header.push_str(&format!("  {}: {:+.2e} relative\n", c.target, c.margin));
    }
    if let Some(n) = note {
        header.push_str(n);
    }
    serialize_emitter(&cal.params, Some(header.trim_end()))
}

/// Columns of `a` that the rows do not determine: zero columns, and
/// columns in the span of earlier ones.
fn unidentified_columns(a: &DMatrix<f64>) -> Vec<usize> {
    let mut out = Vec::new();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for j in 0..a.ncols() {
        let mut v = a.column(j).into_owned();
        let scale = v.norm();
        for q in &basis {
            let d = q.dot(&v);
            v -= q * d;
        }
        if scale == 0.0 || v.norm() <= 1e-10 * scale {
            out.push(j);
        } else {
            let n = v.norm();
            basis.push(v / n);
        }
    }
    out
}
