//! Emitter parameter files.
//!
//! ```text
//! [emitter]
//! lifetime_ns = 5.2
//! sat_power_nW = 100
//! ion_coeff_green_Hz_per_uW = 3220
//! ion_coeff_res_Hz_per_nW = 7.8
//! rec_coeff_green_Hz_per_uW = 1.81
//! detect_eff = 0.0004
//! bg_dark_cps = 20
//! bg_green_cps_per_uW = 15
//! center_frequency_GHz = 484130
//!
//! [spectral_diffusion]          # optional
//! jump_prob_per_init_pulse = 0
//! jump_sigma_MHz = 0
//! ```

use crate::kv::{self, KvError, Writer};
use crate::units::Unit;

use super::{EmitterParams, SpectralDiffusionParams};

pub(crate) const EMITTER_KEYS: &[(&str, Unit)] = &[
    ("lifetime_ns", Unit::Nanosecond),
    ("sat_power_nW", Unit::Nanowatt),
    ("ion_coeff_green_Hz_per_uW", Unit::HzPerMicrowatt),
    ("ion_coeff_res_Hz_per_nW", Unit::HzPerNanowatt),
    ("rec_coeff_green_Hz_per_uW", Unit::HzPerMicrowatt),
    ("detect_eff", Unit::Unitless),
    ("bg_dark_cps", Unit::Unitless),
    ("bg_green_cps_per_uW", Unit::CpsPerMicrowatt),
    ("center_frequency_GHz", Unit::Gigahertz),
];

const DIFFUSION_KEYS: &[&str] = &["jump_prob_per_init_pulse", "jump_sigma_MHz"];

pub fn parse_emitter(text: &str) -> Result<EmitterParams, KvError> {
    let doc = kv::parse(text)?;
    doc.allow_sections(&["emitter", "spectral_diffusion"])?;
    let em = doc.section("emitter").ok_or_else(|| KvError::Syntax {
        line: 1,
        col: 1,
        msg: "missing [emitter] section".into(),
    })?;
    if doc.sections_named("emitter").count() > 1
        || doc.sections_named("spectral_diffusion").count() > 1
    {
        return Err(KvError::Syntax {
            line: 1,
            col: 1,
            msg: "each section may appear only once".into(),
        });
    }
    let keys: Vec<&str> = EMITTER_KEYS.iter().map(|(k, _)| *k).collect();
    em.reject_unknown(&keys)?;
    let get = |i: usize| em.f64(EMITTER_KEYS[i].0, EMITTER_KEYS[i].1);

    let mut spectral_diffusion = SpectralDiffusionParams::default();
    if let Some(sd) = doc.section("spectral_diffusion") {
        sd.reject_unknown(DIFFUSION_KEYS)?;
        spectral_diffusion.jump_prob_per_init_pulse = sd
            .opt_f64("jump_prob_per_init_pulse", Unit::Unitless)?
            .unwrap_or(0.0);
        spectral_diffusion.jump_sigma = sd
            .opt_f64("jump_sigma_MHz", Unit::Megahertz)?
            .unwrap_or(0.0);
    }

    let params = EmitterParams {
        lifetime_excited: get(0)?,
        sat_power_resonant: get(1)?,
        ion_coeff_green: get(2)?,
        ion_coeff_res: get(3)?,
        rec_coeff_green: get(4)?,
        detect_eff: get(5)?,
        bg_dark_cps: get(6)?,
        bg_green_cps_per_w: get(7)?,
        center_frequency: get(8)?,
        spectral_diffusion,
    };
    if let Err(super::KineticsError::InvalidParameter { name, reason }) = params.validate() {
        let key = file_key_for(name);
        let line = if DIFFUSION_KEYS.contains(&key) {
            doc.section("spectral_diffusion")
                .map_or(1, |s| s.line_of(key))
        } else {
            em.line_of(key)
        };
        return Err(KvError::semantic(line, key, reason));
    }
    Ok(params)
}

fn file_key_for(field: &str) -> &'static str {
    match field {
        "lifetime_excited" => "lifetime_ns",
        "sat_power_resonant" => "sat_power_nW",
        "ion_coeff_green" => "ion_coeff_green_Hz_per_uW",
        "ion_coeff_res" => "ion_coeff_res_Hz_per_nW",
        "rec_coeff_green" => "rec_coeff_green_Hz_per_uW",
        "detect_eff" => "detect_eff",
        "bg_dark_cps" => "bg_dark_cps",
        "bg_green_cps_per_w" => "bg_green_cps_per_uW",
        "center_frequency" => "center_frequency_GHz",
        "jump_prob_per_init_pulse" => "jump_prob_per_init_pulse",
        "jump_sigma" => "jump_sigma_MHz",
        _ => "emitter",
    }
}

/// Canonical text for `params`, optionally preceded by comment lines.
pub fn serialize_emitter(params: &EmitterParams, header_comment: Option<&str>) -> String {
    let mut w = Writer::new();
    if let Some(c) = header_comment {
        w.comment(c);
    }
    w.section("emitter");
    let values = [
        params.lifetime_excited,
        params.sat_power_resonant,
        params.ion_coeff_green,
        params.ion_coeff_res,
        params.rec_coeff_green,
        params.detect_eff,
        params.bg_dark_cps,
        params.bg_green_cps_per_w,
        params.center_frequency,
    ];
    for ((key, unit), v) in EMITTER_KEYS.iter().zip(values) {
        w.num(key, v, *unit);
    }
    if params.spectral_diffusion != SpectralDiffusionParams::default() {
        w.section("spectral_diffusion");
        w.num(
            "jump_prob_per_init_pulse",
            params.spectral_diffusion.jump_prob_per_init_pulse,
            Unit::Unitless,
        );
        w.num(
            "jump_sigma_MHz",
            params.spectral_diffusion.jump_sigma,
            Unit::Megahertz,
        );
    }
    w.finish()
}
