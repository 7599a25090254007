//! Experiment runner behind the `biharm` command.

pub mod config;
pub mod experiment;

use std::f64::consts::PI;

/// Parses an angle in radians written as a number or as a multiple of pi,
/// e.g. `4.71`, `pi`, `1.5pi`, `3pi/2`, `11*pi/12`.
pub fn parse_angle(s: &str) -> Option<f64> {
    let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    if let Ok(x) = s.parse::<f64>() {
        return Some(x);
    }
    let (num, den) = match s.split_once('/') {
        Some((n, d)) => (n, d.parse::<f64>().ok()?),
        None => (s.as_str(), 1.0),
    };
    let coef = num.strip_suffix("pi")?;
    let coef = coef.strip_suffix('*').unwrap_or(coef);
    let c = if coef.is_empty() { 1.0 } else { coef.parse::<f64>().ok()? };
    Some(c * PI / den)
}
