//! Fixed float formatting for emitted files.
//!
//! Every float that lands in a CSV or JSON report is formatted (or rounded)
//! to 6 significant digits, which makes outputs byte-reproducible across
//! runs.

/// Rounds to 6 significant digits; use before handing values to serde_json.
pub fn round_sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let magnitude = x.abs().log10().floor() as i32;
    let factor = 10f64.powi(5 - magnitude);
    (x * factor).round() / factor
}

/// 6-significant-digit decimal string; falls back to scientific notation far
/// from unit scale.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0.00000".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = 5 - magnitude;
    if (0..=17).contains(&decimals) {
        format!("{:.*}", decimals as usize, x)
    } else {
        format!("{x:.5e}")
    }
}
