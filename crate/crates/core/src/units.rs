//! Conversion between the SI values used internally and the lab units used in
//! every text file (nW, μW, MHz, ms, ...).
//!
//! Each unit is a power of ten away from SI. Text is converted by shifting the
//! decimal exponent before parsing, and [`format`] shifts the shortest SI
//! representation back, so the text formats round-trip bit-exactly.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    Unitless,
    Nanosecond,
    Microsecond,
    Millisecond,
    Second,
    Nanowatt,
    Microwatt,
    Megahertz,
    Gigahertz,
    /// Hz per nW, stored as Hz/W.
    HzPerNanowatt,
    /// Hz per μW, stored as Hz/W.
    HzPerMicrowatt,
    /// counts/s per μW, stored as counts/s/W.
    CpsPerMicrowatt,
}

impl Unit {
    /// Power of ten such that `si = file * 10^exp`.
    fn exponent(self) -> i32 {
        match self {
            Unit::Unitless | Unit::Second => 0,
            Unit::Nanosecond | Unit::Nanowatt => -9,
            Unit::Microsecond | Unit::Microwatt => -6,
            Unit::Millisecond => -3,
            Unit::Megahertz | Unit::HzPerMicrowatt | Unit::CpsPerMicrowatt => 6,
            Unit::Gigahertz | Unit::HzPerNanowatt => 9,
        }
    }
}

pub fn to_si(value: f64, unit: Unit) -> f64 {
    let e = unit.exponent();
    if e >= 0 {
        value * 10f64.powi(e)
    } else {
        value / 10f64.powi(-e)
    }
}

pub fn from_si(value: f64, unit: Unit) -> f64 {
    let e = unit.exponent();
    if e >= 0 {
        value / 10f64.powi(e)
    } else {
        value * 10f64.powi(-e)
    }
}

/// Parses a decimal written in `unit` straight to SI.
///
/// The power of ten is applied to the decimal exponent before parsing, so the
/// result is the correctly rounded SI value (`"4.1"` MHz is exactly `4.1e6`).
pub fn parse(text: &str, unit: Unit) -> Option<f64> {
    let text = text.trim();
    let (mant, exp) = match text.find(['e', 'E']) {
        Some(p) => (&text[..p], text[p + 1..].parse::<i32>().ok()?),
        None => (text, 0),
    };
    let mant_ok = !mant.is_empty()
        && mant
            .trim_start_matches(['+', '-'])
            .chars()
            .all(|c| c.is_ascii_digit() || c == '.')
        && mant.chars().any(|c| c.is_ascii_digit());
    if !mant_ok {
        return None;
    }
    let v: f64 = format!("{mant}e{}", exp.checked_add(unit.exponent())?)
        .parse()
        .ok()?;
    v.is_finite().then_some(v)
}

/// Shortest decimal in `unit` that [`parse`]s back to exactly `si`.
pub fn format(si: f64, unit: Unit) -> String {
    if !si.is_finite() {
        return si.to_string();
    }
    if si == 0.0 {
        return "0".into();
    }
    // `{:e}` gives the shortest round-tripping digits of the SI value; shifting
    // the decimal point by the unit exponent is exact.
    let sci = format!("{:e}", si);
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent");
    let (sign, mant) = match mant.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mant),
    };
    let digits: String = mant.chars().filter(|c| *c != '.').collect();
    let n = digits.len() as i32;
    // value = 0.d1d2...dn * 10^point
    let point = exp - unit.exponent() + 1;
    if point > 21 || point < -6 {
        let m = if n > 1 {
            format!("{}.{}", &digits[..1], &digits[1..])
        } else {
            digits
        };
        return format!("{sign}{m}e{}", point - 1);
    }
    let body = if point <= 0 {
        format!("0.{}{}", "0".repeat((-point) as usize), digits)
    } else if point >= n {
        format!("{}{}", digits, "0".repeat((point - n) as usize))
    } else {
        format!(
            "{}.{}",
            &digits[..point as usize],
            &digits[point as usize..]
        )
    };
    format!("{sign}{body}")
}
