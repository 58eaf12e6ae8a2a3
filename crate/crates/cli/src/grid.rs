//! Parsing of `a:b:step` ranges and comma-separated lists.

use thiserror::Error;

/// Ranges longer than this are almost certainly a typo in `step`.
const MAX_POINTS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Inclusive range `a, a + step, .., b`; every value is snapped to the
/// nearest multiple of 1e-12 so `0:1:0.1` yields exactly `0.3`, not
/// `0.30000000000000004`.
pub fn parse_range(text: &str) -> Result<Vec<f64>, UsageError> {
    let bad = |why: &str| UsageError(format!("invalid range `{text}`: {why} (expected a:b:step)"));
    let parts: Vec<&str> = text.split(':').collect();
    let [a, b, step] = parts.as_slice() else {
        return Err(bad("needs three fields"));
    };
    let num = |s: &str| s.trim().parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| bad("not a number"));
    let (a, b, step) = (num(a)?, num(b)?, num(step)?);
    if !(step > 0.0) {
        return Err(bad("step must be > 0"));
    }
    if b < a {
        return Err(bad("end is below start"));
    }
    let span = (b - a) / step;
    if span >= MAX_POINTS as f64 {
        return Err(bad("too many points"));
    }
    let count = (span + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| snap(a + i as f64 * step).min(b)).collect())
}

/// Nearest multiple of 1e-12, taken in decimal so `0.1 * 3` becomes `0.3`.
fn snap(x: f64) -> f64 {
    format!("{x:.12}").parse().expect("formatted float parses")
}

pub fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, UsageError> {
    let values: Result<Vec<T>, _> = text.split(',').map(|s| s.trim().parse::<T>()).collect();
    match values {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(UsageError(format!("invalid {what} `{text}`: expected comma-separated values"))),
    }
}
