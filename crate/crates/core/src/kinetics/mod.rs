//! Three-level charge/optical kinetics of a single emitter.
//!
//! States are the bright ground state, the bright excited state and the dark
//! (doubly charged) state. A resonant laser pumps ground to excited with
//! the incoherent two-level rate `k_pump = (Γ/2)·s·L(δ)`, stimulated emission
//! returns at the same rate, and spontaneous emission at `Γ = 1/τ`.
//! Ionization to the dark state happens from the excited state only and is
//! driven by photons of either laser; the green laser brings the dark state
//! back to the bright ground state.

pub(crate) mod file;

pub use file::{parse_emitter, serialize_emitter};

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KineticsError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error(
        "optical cycling is only {ratio:.3e}x faster than charge dynamics (need >= {required})"
    )]
    TimescaleSeparationViolated { ratio: f64, required: f64 },
}

fn invalid(name: &'static str, reason: impl Into<String>) -> KineticsError {
    KineticsError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

/// Optional random jumps of the emitter centre frequency after each green
/// initialization pulse. The default disables diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpectralDiffusionParams {
    pub jump_prob_per_init_pulse: f64,
    /// Standard deviation of a zero-mean jump, Hz.
    pub jump_sigma: f64,
}

impl SpectralDiffusionParams {
    pub fn is_enabled(&self) -> bool {
        self.jump_prob_per_init_pulse > 0.0 && self.jump_sigma > 0.0
    }

    pub fn validate(&self) -> Result<(), KineticsError> {
        if !(0.0..=1.0).contains(&self.jump_prob_per_init_pulse) {
            return Err(invalid("jump_prob_per_init_pulse", "must lie in [0, 1]"));
        }
        if !(self.jump_sigma >= 0.0 && self.jump_sigma.is_finite()) {
            return Err(invalid("jump_sigma", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Physical coefficients of one emitter, all in SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmitterParams {
    /// Excited-state lifetime τ, s.
    pub lifetime_excited: f64,
    /// Resonant power giving saturation parameter s = 1, W.
    pub sat_power_resonant: f64,
    /// Excited-state ionization per green power, Hz/W.
    pub ion_coeff_green: f64,
    /// Excited-state ionization per resonant power, Hz/W.
    pub ion_coeff_res: f64,
    /// Dark to bright recovery per green power, Hz/W.
    pub rec_coeff_green: f64,
    /// Probability that a radiative decay is detected.
    pub detect_eff: f64,
    pub bg_dark_cps: f64,
    /// Background counts/s per W of green light.
    pub bg_green_cps_per_w: f64,
    /// Absolute emitter resonance, Hz. Laser detunings are relative to it.
    pub center_frequency: f64,
    pub spectral_diffusion: SpectralDiffusionParams,
}

impl EmitterParams {
    pub fn validate(&self) -> Result<(), KineticsError> {
        if !(self.lifetime_excited > 0.0 && self.lifetime_excited.is_finite()) {
            return Err(invalid("lifetime_excited", "must be finite and > 0"));
        }
        if !(self.sat_power_resonant > 0.0 && self.sat_power_resonant.is_finite()) {
            return Err(invalid("sat_power_resonant", "must be finite and > 0"));
        }
        let nonneg = [
            ("ion_coeff_green", self.ion_coeff_green),
            ("ion_coeff_res", self.ion_coeff_res),
            ("rec_coeff_green", self.rec_coeff_green),
            ("bg_dark_cps", self.bg_dark_cps),
            ("bg_green_cps_per_w", self.bg_green_cps_per_w),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if !(self.detect_eff > 0.0 && self.detect_eff <= 1.0) {
            return Err(invalid("detect_eff", "must lie in (0, 1]"));
        }
        if !self.center_frequency.is_finite() {
            return Err(invalid("center_frequency", "must be finite"));
        }
        self.spectral_diffusion.validate()
    }

    /// Spontaneous emission rate Γ = 1/τ, Hz.
    pub fn gamma_sp(&self) -> f64 {
        1.0 / self.lifetime_excited
    }

    /// Transform-limited linewidth Γν = 1/(2πτ), Hz (FWHM).
    pub fn natural_linewidth(&self) -> f64 {
        1.0 / (2.0 * PI * self.lifetime_excited)
    }

    pub fn saturation(&self, res_power: f64) -> f64 {
        res_power / self.sat_power_resonant
    }

    /// Lorentzian detuning factor L(δ) with L(0) = 1.
    pub fn lorentz_factor(&self, detuning: f64) -> f64 {
        let x = 2.0 * detuning / self.natural_linewidth();
        1.0 / (1.0 + x * x)
    }

    /// Power-broadened PLE linewidth Γν·√(1+s), Hz.
    pub fn broadened_linewidth(&self, res_power: f64) -> f64 {
        self.natural_linewidth() * (1.0 + self.saturation(res_power)).sqrt()
    }

    /// Quasi-steady excited fraction within the bright manifold.
    pub fn excited_fraction(&self, laser: &LaserState) -> f64 {
        let sl = self.saturation(laser.res_power) * self.lorentz_factor(laser.res_detuning);
        0.5 * sl / (sl + 1.0)
    }

    /// Background count rate for the given lasers, counts/s.
    pub fn background_cps(&self, laser: &LaserState) -> f64 {
        self.bg_dark_cps + self.bg_green_cps_per_w * laser.green_power
    }
}

/// Instantaneous drive of the two independently gated lasers.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LaserState {
    /// Resonant power, W.
    pub res_power: f64,
    /// Resonant laser frequency minus emitter centre, Hz.
    pub res_detuning: f64,
    /// Non-resonant (green) power, W.
    pub green_power: f64,
}

impl LaserState {
    pub fn new(res_power: f64, res_detuning: f64, green_power: f64) -> Self {
        Self {
            res_power,
            res_detuning,
            green_power,
        }
    }

    pub fn off() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), KineticsError> {
        if !(self.res_power >= 0.0 && self.res_power.is_finite()) {
            return Err(invalid(
                "res_power",
                format!("must be finite and >= 0, got {}", self.res_power),
            ));
        }
        if !(self.green_power >= 0.0 && self.green_power.is_finite()) {
            return Err(invalid(
                "green_power",
                format!("must be finite and >= 0, got {}", self.green_power),
            ));
        }
        if !self.res_detuning.is_finite() {
            return Err(invalid("res_detuning", "must be finite"));
        }
        Ok(())
    }
}

/// Rate constants of the three-state generator for one constant drive, Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSet {
    pub k_pump: f64,
    pub k_stim: f64,
    pub gamma_sp: f64,
    pub k_ion: f64,
    pub k_rec: f64,
}

impl RateSet {
    /// Generator `G` of `dp/dt = G p` with state order (ground, excited, dark).
    pub fn generator(&self) -> Matrix3<f64> {
        let down = self.k_stim + self.gamma_sp;
        Matrix3::new(
            -self.k_pump,
            down,
            self.k_rec,
            self.k_pump,
            -(down + self.k_ion),
            0.0,
            0.0,
            self.k_ion,
            -self.k_rec,
        )
    }

    /// Excited fraction of the bright manifold under fast optical cycling.
    pub fn p_excited_qss(&self) -> f64 {
        let denom = self.k_pump + self.k_stim + self.gamma_sp;
        if denom > 0.0 {
            self.k_pump / denom
        } else {
            0.0
        }
    }

    /// How much faster optical cycling is than charge dynamics.
    pub fn separation_ratio(&self) -> f64 {
        let slow = self.k_ion + self.k_rec;
        if slow == 0.0 {
            f64::INFINITY
        } else {
            (self.k_pump + self.gamma_sp) / slow
        }
    }

    pub fn max_rate(&self) -> f64 {
        self.k_pump
            .max(self.k_stim + self.gamma_sp + self.k_ion)
            .max(self.k_rec)
    }
}

/// Occupation probabilities of (ground, excited, dark).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub p_ground: f64,
    pub p_excited: f64,
    pub p_dark: f64,
}

impl StateVector {
    pub fn new(p_ground: f64, p_excited: f64, p_dark: f64) -> Self {
        Self {
            p_ground,
            p_excited,
            p_dark,
        }
    }

    pub fn bright_ground() -> Self {
        Self::new(1.0, 0.0, 0.0)
    }

    pub fn dark() -> Self {
        Self::new(0.0, 0.0, 1.0)
    }

    pub fn sum(&self) -> f64 {
        self.p_ground + self.p_excited + self.p_dark
    }

    pub fn p_bright(&self) -> f64 {
        self.p_ground + self.p_excited
    }

    fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.p_ground, self.p_excited, self.p_dark)
    }

    /// Clamps rounding noise below zero and renormalizes.
    fn from_vector_normalized(v: Vector3<f64>) -> Self {
        let c = v.map(|x| x.max(0.0));
        let s = c.sum();
        Self::new(c[0] / s, c[1] / s, c[2] / s)
    }
}

pub fn build_rates(emitter: &EmitterParams, laser: &LaserState) -> Result<RateSet, KineticsError> {
    laser.validate()?;
    let gamma_sp = emitter.gamma_sp();
    let sl = emitter.saturation(laser.res_power) * emitter.lorentz_factor(laser.res_detuning);
    let k_pump = 0.5 * gamma_sp * sl;
    Ok(RateSet {
        k_pump,
        k_stim: k_pump,
        gamma_sp,
        k_ion: emitter.ion_coeff_green * laser.green_power
            + emitter.ion_coeff_res * laser.res_power,
        k_rec: emitter.rec_coeff_green * laser.green_power,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyState {
    pub state: StateVector,
    /// False when the chain has more than one closed class; `state` then
    /// follows the documented convention.
    pub unique: bool,
}

/// Stationary distribution of the generator.
///
/// Uses the spanning-tree form of the null vector, which stays exact for
/// rates spanning many orders of magnitude.
pub fn steady_state(rates: &RateSet) -> SteadyState {
    let kp = rates.k_pump;
    let down = rates.k_stim + rates.gamma_sp;
    let ki = rates.k_ion;
    let kr = rates.k_rec;

    let w_ground = kr * (down + ki);
    let w_excited = kp * kr;
    let w_dark = kp * ki;
    let z = w_ground + w_excited + w_dark;
    if z > 0.0 {
        return SteadyState {
            state: StateVector::new(w_ground / z, w_excited / z, w_dark / z),
            unique: true,
        };
    }

    // kr = 0 and (kp = 0 or ki = 0): the dark state is closed on its own.
    let state = if kp == 0.0 {
        StateVector::bright_ground()
    } else {
        let b = kp + down;
        StateVector::new(down / b, kp / b, 0.0)
    };
    SteadyState {
        state,
        unique: false,
    }
}

/// Exact solution of the master equation over constant rates.
pub fn propagate(rates: &RateSet, p0: &StateVector, t: f64) -> StateVector {
    assert!(t >= 0.0, "propagate: negative time {t}");
    if t == 0.0 {
        return *p0;
    }
    let evolved = (rates.generator() * t).exp() * p0.to_vector();
    StateVector::from_vector_normalized(evolved)
}

/// Reduced bright/dark description valid under fast optical cycling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Telegraph {
    pub k_off: f64,
    pub k_on: f64,
    pub p_bright_ss: f64,
}

impl Telegraph {
    /// Relaxation rate of the ensemble bright population.
    pub fn relaxation_rate(&self) -> f64 {
        self.k_off + self.k_on
    }
}

pub const MIN_TELEGRAPH_SEPARATION: f64 = 100.0;

pub fn effective_telegraph(rates: &RateSet) -> Result<Telegraph, KineticsError> {
    let ratio = rates.separation_ratio();
    if ratio < MIN_TELEGRAPH_SEPARATION {
        return Err(KineticsError::TimescaleSeparationViolated {
            ratio,
            required: MIN_TELEGRAPH_SEPARATION,
        });
    }
    let k_off = rates.p_excited_qss() * rates.k_ion;
    let k_on = rates.k_rec;
    let p_bright_ss = if k_off == 0.0 {
        1.0
    } else {
        k_on / (k_on + k_off)
    };
    Ok(Telegraph {
        k_off,
        k_on,
        p_bright_ss,
    })
}

/// Mean detected count rate for an occupation vector, counts/s.
pub fn expected_count_rate(
    emitter: &EmitterParams,
    laser: &LaserState,
    state: &StateVector,
) -> f64 {
    emitter.detect_eff * emitter.gamma_sp() * state.p_excited + emitter.background_cps(laser)
}

#[cfg(test)]
pub(crate) mod tests;
