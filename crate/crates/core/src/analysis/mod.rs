//! Curve fits and summary statistics for traces, spectra and rate laws.

mod lm;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no peak: height {height} above median is within 3x the edge noise {noise}")]
    PeakNotFound { height: f64, noise: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    pub params: BTreeMap<String, f64>,
    pub std_errors: BTreeMap<String, f64>,
    pub residual_rms: f64,
    pub converged: bool,
    /// Data could not constrain the model (constant y, all-equal x, ...).
    pub degenerate: bool,
    pub n_points: usize,
}

impl FitResult {
    fn new(model: &str, names: &[&str], values: &[f64], errors: &[f64], n_points: usize) -> Self {
        Self {
            model: model.into(),
            params: names.iter().map(|n| n.to_string()).zip(values.iter().copied()).collect(),
            std_errors: names.iter().map(|n| n.to_string()).zip(errors.iter().copied()).collect(),
            residual_rms: 0.0,
            converged: true,
            degenerate: false,
            n_points,
        }
    }

    /// Value of a named parameter; panics on an unknown name.
    pub fn get(&self, name: &str) -> f64 {
        self.params[name]
    }

    pub fn err(&self, name: &str) -> f64 {
        self.std_errors.get(name).copied().unwrap_or(0.0)
    }

    /// One `name = value ± error` line per parameter.
    pub fn to_text(&self) -> String {
        let mut out = format!("# {} fit, {} points", self.model, self.n_points);
        if !self.converged {
            out.push_str(", NOT CONVERGED");
        }
        if self.degenerate {
            out.push_str(", DEGENERATE");
        }
        out.push('\n');
        for (name, v) in &self.params {
            match self.std_errors.get(name) {
                Some(e) => writeln!(out, "{name} = {v} ± {e}"),
                None => writeln!(out, "{name} = {v}"),
            }
            .expect("write to string");
        }
        writeln!(out, "residual_rms = {}", self.residual_rms).expect("write to string");
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit result serializes")
    }
}

/// Acceptance rules applied to per-scan Lorentzian fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatingRules {
    /// Hz.
    pub min_linewidth: f64,
    /// Fitted amplitude over fitted offset.
    pub min_peak_to_bg: f64,
    /// counts.
    pub max_fit_rms: f64,
}

impl Default for GatingRules {
    fn default() -> Self {
        Self {
            min_linewidth: 20e6,
            min_peak_to_bg: 2.0,
            max_fit_rms: f64::INFINITY,
        }
    }
}

impl GatingRules {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("min_linewidth", self.min_linewidth),
            ("min_peak_to_bg", self.min_peak_to_bg),
            ("max_fit_rms", self.max_fit_rms),
        ] {
            if v.is_nan() || v < 0.0 {
                return Err(format!("{name} must be >= 0, got {v}"));
            }
        }
        Ok(())
    }

    /// Reason the fit is rejected, if any.
    pub fn reject_reason(&self, fit: &FitResult) -> Option<String> {
        if !fit.converged {
            return Some("fit did not converge".into());
        }
        let w = fit.get("fwhm");
        if w < self.min_linewidth {
            return Some(format!("linewidth {:.3} MHz below {:.3} MHz", w / 1e6, self.min_linewidth / 1e6));
        }
        let (a, c) = (fit.get("amplitude"), fit.get("offset"));
        let ratio = if c > 0.0 { a / c } else if a > 0.0 { f64::INFINITY } else { 0.0 };
        if ratio < self.min_peak_to_bg {
            return Some(format!("peak-to-background {ratio:.3} below {}", self.min_peak_to_bg));
        }
        if fit.residual_rms > self.max_fit_rms {
            return Some(format!("residual rms {:.3} above {}", fit.residual_rms, self.max_fit_rms));
        }
        None
    }
}

/// Weights for count data: 1/max(y, 1).
pub fn poisson_weights(y: &[f64]) -> Vec<f64> {
    y.iter().map(|&v| 1.0 / v.max(1.0)).collect()
}

fn check_xy(x: &[f64], y: &[f64], need: usize) -> Result<(), FitError> {
    if x.len() != y.len() {
        return Err(FitError::InvalidInput(format!("{} x values but {} y values", x.len(), y.len())));
    }
    if x.len() < need {
        return Err(FitError::TooFewPoints { need, got: x.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(FitError::InvalidInput("non-finite value".into()));
    }
    Ok(())
}

fn rms(x: &[f64], y: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    (x.iter().zip(y).map(|(&a, &b)| (b - f(a)).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

fn std_errors(cov: &Option<nalgebra::DMatrix<f64>>, m: usize) -> Vec<f64> {
    match cov {
        Some(c) => (0..m).map(|k| c[(k, k)].max(0.0).sqrt()).collect(),
        None => vec![0.0; m],
    }
}

/// `y = A·exp(−k t) + C`, Poisson-weighted.
pub fn fit_exp_decay(t: &[f64], y: &[f64]) -> Result<FitResult, FitError> {
    fit_exp_decay_weighted(t, y, &poisson_weights(y))
}

pub fn fit_exp_decay_weighted(t: &[f64], y: &[f64], w: &[f64]) -> Result<FitResult, FitError> {
    check_xy(t, y, 5)?;
    if t.windows(2).any(|p| p[1] <= p[0]) {
        return Err(FitError::InvalidInput("t must be strictly increasing".into()));
    }
    let names = ["rate", "amplitude", "offset"];
    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi - lo <= 1e-12 * hi.abs().max(lo.abs()) {
        let mut r = FitResult::new("exp_decay", &names, &[0.0, 0.0, y[0]], &[0.0; 3], t.len());
        r.degenerate = true;
        return Ok(r);
    }

    // Log-linear guess on the excursion from the far end of the trace.
    let n = y.len();
    let q = (n / 4).max(1);
    let head = y[..q].iter().sum::<f64>() / q as f64;
    let tail = y[n - q..].iter().sum::<f64>() / q as f64;
    let sign = if head >= tail { 1.0 } else { -1.0 };
    let base = if sign > 0.0 { lo } else { hi };
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .filter_map(|(&ti, &yi)| {
            let d = sign * (yi - base);
            (d > 1e-9 * (hi - lo)).then(|| (ti, d.ln()))
        })
        .collect();
    let (k0, a0) = if pts.len() >= 2 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        let (slope, icpt) = ols(&xs, &ys);
        let k = if slope < 0.0 { -slope } else { 1.0 / (t[n - 1] - t[0]) };
        (k, sign * icpt.exp())
    } else {
        (1.0 / (t[n - 1] - t[0]), y[0] - base)
    };
    let t0 = t[0];
    let p0 = [k0, a0 * (-k0 * t0).exp(), base];
    // Internally the amplitude refers to t0 to keep the problem well scaled.
    let model = |x: f64, p: &[f64], g: &mut [f64]| {
        let e = (-p[0] * (x - t0)).exp();
        g[0] = -p[1] * (x - t0) * e;
        g[1] = e;
        g[2] = 1.0;
        p[1] * e + p[2]
    };
    let out = lm::fit(t, y, w, &p0, model);
    let [k, a_t0, c] = [out.params[0], out.params[1], out.params[2]];
    let errs = std_errors(&out.covariance, 3);
    let shift = (k * t0).exp();
    let mut r = FitResult::new(
        "exp_decay",
        &names,
        &[k, a_t0 * shift, c],
        &[errs[0], (errs[1] * shift).hypot(a_t0 * shift * t0 * errs[0]), errs[2]],
        t.len(),
    );
    r.residual_rms = rms(t, y, |x| a_t0 * (-k * (x - t0)).exp() + c);
    r.converged = out.converged && out.params.iter().all(|v| v.is_finite());
    Ok(r)
}

pub fn lorentzian(f: f64, center: f64, fwhm: f64, amplitude: f64, offset: f64) -> f64 {
    let h = 0.5 * fwhm;
    amplitude * h * h / ((f - center).powi(2) + h * h) + offset
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median absolute deviation.
fn mad(v: &[f64]) -> f64 {
    let m = median(&mut v.to_vec());
    median(&mut v.iter().map(|x| (x - m).abs()).collect::<Vec<_>>())
}

/// `y = A·(w/2)²/((f−f₀)² + (w/2)²) + C`, Poisson-weighted.
pub fn fit_lorentzian(f: &[f64], y: &[f64]) -> Result<FitResult, FitError> {
    fit_lorentzian_weighted(f, y, &poisson_weights(y))
}

pub fn fit_lorentzian_weighted(f: &[f64], y: &[f64], w: &[f64]) -> Result<FitResult, FitError> {
    check_xy(f, y, 7)?;
    // Work on ascending frequency whatever the scan direction.
    let mut idx: Vec<usize> = (0..f.len()).collect();
    idx.sort_by(|&a, &b| f[a].total_cmp(&f[b]));
    let fx: Vec<f64> = idx.iter().map(|&i| f[i]).collect();
    let fy: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let fw: Vec<f64> = idx.iter().map(|&i| w[i]).collect();
    let n = fx.len();
    if fx.windows(2).any(|p| p[1] == p[0]) {
        return Err(FitError::InvalidInput("duplicate frequencies".into()));
    }

    let k = ((n as f64 * 0.15).round() as usize).max(2);
    let edges: Vec<f64> = fy[..k].iter().chain(&fy[n - k..]).copied().collect();
    let c0 = median(&mut edges.clone());
    let noise = 1.4826 * mad(&edges);
    let (imax, &ymax) = fy
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let height = ymax - median(&mut fy.clone());
    if height <= 3.0 * noise {
        return Err(FitError::PeakNotFound { height, noise });
    }

    let half = c0 + 0.5 * (ymax - c0);
    let crossing = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let mut prev = imax;
        for i in range {
            if fy[i] < half {
                let (x0, y0, x1, y1) = (fx[prev], fy[prev], fx[i], fy[i]);
                return Some(x0 + (half - y0) * (x1 - x0) / (y1 - y0));
            }
            prev = i;
        }
        None
    };
    let left = crossing(&mut (0..imax).rev());
    let right = crossing(&mut (imax + 1..n));
    let step = (fx[n - 1] - fx[0]) / (n - 1) as f64;
    let w0 = match (left, right) {
        (Some(l), Some(r)) => r - l,
        (Some(l), None) => 2.0 * (fx[imax] - l),
        (None, Some(r)) => 2.0 * (r - fx[imax]),
        (None, None) => 3.0 * step,
    }
    .max(step);

    let model = |x: f64, p: &[f64], g: &mut [f64]| {
        let (f0, wd, a) = (p[0], p[1], p[2]);
        let h2 = 0.25 * wd * wd;
        let d = x - f0;
        let den = d * d + h2;
        let l = h2 / den;
        g[0] = a * h2 * 2.0 * d / (den * den);
        g[1] = a * 0.5 * wd * d * d / (den * den);
        g[2] = l;
        g[3] = 1.0;
        a * l + p[3]
    };
    // A blinking peak can leave an isolated spike at its maximum; also start
    // from the excess-count centroid with wider widths and keep the best.
    let excess: Vec<f64> = fy.iter().map(|v| (v - c0).max(0.0)).collect();
    let mass: f64 = excess.iter().sum();
    let centroid = if mass > 0.0 {
        fx.iter().zip(&excess).map(|(x, e)| x * e).sum::<f64>() / mass
    } else {
        fx[imax]
    };
    let chi2 = |p: &[f64]| -> f64 {
        (0..n)
            .map(|i| fw[i] * (fy[i] - lorentzian(fx[i], p[0], p[1], p[2], p[3])).powi(2))
            .sum()
    };
    let mut best: Option<(f64, lm::LmOutcome)> = None;
    for (center, width) in [
        (fx[imax], w0),
        (centroid, 3.0 * w0),
        (centroid, 10.0 * w0),
    ] {
        let out = lm::fit(&fx, &fy, &fw, &[center, width, ymax - c0, c0], model);
        if !out.params.iter().all(|v| v.is_finite()) {
            continue;
        }
        let c = chi2(&out.params);
        let better = match &best {
            None => true,
            Some((bc, bo)) => (out.converged && !bo.converged) || (out.converged == bo.converged && c < *bc),
        };
        if better {
            best = Some((c, out));
        }
    }
    let out = match best {
        Some((_, out)) => out,
        None => lm::fit(&fx, &fy, &fw, &[fx[imax], w0, ymax - c0, c0], model),
    };
    let p = &out.params;
    let errs = std_errors(&out.covariance, 4);
    let mut r = FitResult::new(
        "lorentzian",
        &["center", "fwhm", "amplitude", "offset"],
        &[p[0], p[1].abs(), p[2], p[3]],
        &errs,
        n,
    );
    r.residual_rms = rms(&fx, &fy, |x| lorentzian(x, p[0], p[1], p[2], p[3]));
    r.converged = out.converged && p.iter().all(|v| v.is_finite());
    Ok(r)
}

/// Slope and intercept by ordinary least squares.
fn ols(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Unweighted straight line `y = slope·x + intercept`.
///
/// Fewer than three points or all-equal `x` give a degenerate result.
pub fn fit_linear(x: &[f64], y: &[f64]) -> Result<FitResult, FitError> {
    check_xy(x, y, 1)?;
    let names = ["slope", "intercept", "r_squared"];
    let n = x.len();
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if n < 3 || sxx == 0.0 {
        let mut r = FitResult::new("linear", &names, &[0.0, my, 0.0], &[0.0, 0.0, 0.0], n);
        r.std_errors.remove("r_squared");
        r.converged = false;
        r.degenerate = true;
        r.residual_rms = rms(x, y, |_| my);
        return Ok(r);
    }
    let (slope, intercept) = ols(x, y);
    let ssr: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let sst: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let s2 = ssr / (nf - 2.0);
    let r2 = if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 };
    let mut r = FitResult::new(
        "linear",
        &names,
        &[slope, intercept, r2],
        &[(s2 / sxx).sqrt(), (s2 * (1.0 / nf + mx * mx / sxx)).sqrt(), 0.0],
        n,
    );
    r.std_errors.remove("r_squared");
    r.residual_rms = (ssr / nf).sqrt();
    Ok(r)
}

/// First pulse index `n` with `1 − (1−q)ⁿ ≥ 0.95`.
pub fn recovery_index_95(q: f64) -> u32 {
    if q >= 1.0 {
        return 1;
    }
    if q <= 0.0 {
        return u32::MAX;
    }
    // Relative slack so that e.g. q = 0.95 (not exact in binary) still
    // reaches 95% at the first pulse.
    let reached = |n: f64| (1.0 - q).powf(n) <= 0.05 * (1.0 + 1e-12);
    let mut n = (0.05f64.ln() / (1.0 - q).ln()).ceil().max(1.0);
    while n > 1.0 && reached(n - 1.0) {
        n -= 1.0;
    }
    while !reached(n) {
        n += 1.0;
    }
    n as u32
}

/// Geometric recovery over pulses: `counts_n = L − D·(1−q)ⁿ` for n = 1, 2, ….
///
/// `L` (`saturation_level`) is the plateau and `D` the contrast between the
/// plateau and the extrapolated level before the first pulse, so that the
/// usual form `S·(1 − (1−q)ⁿ) + C` has `S = D`, `C = L − D`. Uses a profile
/// search over q with the linear parameters solved exactly, Poisson-weighted.
pub fn fit_recovery_steps(block_counts: &[f64]) -> Result<FitResult, FitError> {
    let n = block_counts.len();
    let x: Vec<f64> = (1..=n).map(|i| i as f64).collect();
    check_xy(&x, block_counts, 4)?;
    let y = block_counts;
    let w = poisson_weights(y);
    let names = ["rate_per_pulse", "saturation_level", "contrast", "index_95"];

    // Weighted LS for (L, D) at fixed q; returns (χ², L, D).
    let solve = |q: f64| -> (f64, f64, f64) {
        let b: Vec<f64> = x.iter().map(|&i| (1.0 - q).powf(i)).collect();
        let (mut s1, mut sb, mut sbb, mut sy, mut sby) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            s1 += w[i];
            sb += w[i] * b[i];
            sbb += w[i] * b[i] * b[i];
            sy += w[i] * y[i];
            sby += w[i] * b[i] * y[i];
        }
        let det = s1 * sbb - sb * sb;
        let (l, d) = if det.abs() <= 1e-14 * s1 * sbb.max(1e-300) {
            (sy / s1, 0.0)
        } else {
            let l = (sy * sbb - sb * sby) / det;
            let coef = (s1 * sby - sb * sy) / det;
            (l, -coef)
        };
        let chi2 = (0..n).map(|i| w[i] * (y[i] - l + d * b[i]).powi(2)).sum();
        (chi2, l, d)
    };

    let grid = 2000;
    let (mut best_q, mut best) = (1.0, solve(1.0).0);
    for k in 1..grid {
        let q = k as f64 / grid as f64;
        let c = solve(q).0;
        if c < best {
            best = c;
            best_q = q;
        }
    }
    // Golden-section refinement inside the bracketing grid cells.
    let (mut a, mut b) = ((best_q - 1.0 / grid as f64).max(1e-12), (best_q + 1.0 / grid as f64).min(1.0));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut iters = 0;
    while b - a > 1e-13 && iters < 200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if solve(c).0 <= solve(d).0 {
            b = d;
        } else {
            a = c;
        }
        iters += 1;
    }
    let mut q = 0.5 * (a + b);
    if solve(1.0).0 <= solve(q).0 {
        q = 1.0;
    }
    let (chi2, l, d) = solve(q);

    // Linearized errors from the full 3-parameter Jacobian.
    let jac = nalgebra::DMatrix::from_fn(n, 3, |i, k| {
        let b = (1.0 - q).powf(x[i]);
        match k {
            0 => d * x[i] * (1.0 - q).powf(x[i] - 1.0),
            1 => 1.0,
            _ => -b,
        }
    });
    let jw = nalgebra::DMatrix::from_fn(n, 3, |i, k| w[i] * jac[(i, k)]);
    let dof = n.saturating_sub(3).max(1) as f64;
    let cov = (jw.transpose() * &jac).try_inverse().map(|c| c * (chi2 / dof));
    let errs = std_errors(&cov, 3);

    let mut r = FitResult::new(
        "recovery_steps",
        &names,
        &[q, l, d, recovery_index_95(q) as f64],
        &errs,
        n,
    );
    r.residual_rms = rms(&x, y, |i| l - d * (1.0 - q).powf(i));
    r.converged = iters < 200 || b - a <= 1e-13;
    r.degenerate = d == 0.0;
    Ok(r)
}

/// Histogram width convention used for all centre/linewidth distributions:
/// FWHM = 2√(2 ln 2)·σ with σ = 1.4826·MAD.
pub fn hist_fwhm(values: &[f64]) -> Result<f64, FitError> {
    if values.len() < 10 {
        return Err(FitError::TooFewPoints {
            need: 10,
            got: values.len(),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(FitError::InvalidInput("non-finite value".into()));
    }
    Ok(2.0 * (2.0 * 2f64.ln()).sqrt() * 1.4826 * mad(values))
}
