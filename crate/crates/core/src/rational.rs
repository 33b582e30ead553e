//! Exact rational helpers shared by every module.

use alloc::string::String;

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Arbitrary-precision rational number.
pub type Rational = num_rational::BigRational;

pub fn ratio(num: u64, den: u64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

pub fn from_int(v: i64) -> Rational {
    Rational::from_integer(BigInt::from(v))
}

pub fn zero() -> Rational {
    Rational::zero()
}

pub fn one() -> Rational {
    Rational::one()
}

/// Lossy conversion for reporting.
pub fn to_f64(r: &Rational) -> f64 {
    match (r.numer().to_f64(), r.denom().to_f64()) {
        (Some(n), Some(d)) if n.is_finite() && d.is_finite() => n / d,
        _ => {
            // Huge numerator/denominator: scale both down first.
            let shift = r.denom().bits().max(r.numer().bits()).saturating_sub(1000);
            let n = (r.numer() >> shift as usize).to_f64().unwrap_or(f64::NAN);
            let d = (r.denom() >> shift as usize).to_f64().unwrap_or(f64::NAN);
            n / d
        }
    }
}

pub fn abs_diff(a: &Rational, b: &Rational) -> Rational {
    (a - b).abs()
}

/// Parses `"p/q"`, `"p"` or a finite decimal such as `"0.01"` exactly.
///
/// Decimals are accepted here because tolerances are usually written that
/// way; probability tables use [`parse_fraction`] instead.
pub fn parse_decimal(s: &str) -> Option<Rational> {
    let s = s.trim();
    if let Some(r) = parse_fraction(s) {
        return Some(r);
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = body.split_once('.')?;
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let mut digits = String::from(int_part);
    digits.push_str(frac_part);
    let numer: BigInt = if digits.is_empty() { BigInt::zero() } else { digits.parse().ok()? };
    let denom = num_traits::pow(BigInt::from(10u32), frac_part.len());
    let r = Rational::new(numer, denom);
    Some(if neg { -r } else { r })
}

/// Parses `"p/q"` or an integer `"p"`. Decimal points are rejected.
pub fn parse_fraction(s: &str) -> Option<Rational> {
    let s = s.trim();
    match s.split_once('/') {
        Some((n, d)) => {
            let n: BigInt = n.trim().parse().ok()?;
            let d: BigInt = d.trim().parse().ok()?;
            if d.is_zero() {
                return None;
            }
            Some(Rational::new(n, d))
        }
        None => {
            let n: BigInt = s.parse().ok()?;
            Some(Rational::from_integer(n))
        }
    }
}

/// Canonical `p/q` (or `p` when integral) rendering.
pub fn format(r: &Rational) -> String {
    use core::fmt::Write;
    let mut out = String::new();
    if r.denom().is_one() {
        let _ = write!(out, "{}", r.numer());
    } else {
        let _ = write!(out, "{}/{}", r.numer(), r.denom());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_parsing_is_exact() {
        assert_eq!(parse_decimal("0.01"), Some(ratio(1, 100)));
        assert_eq!(parse_decimal("1/3"), Some(ratio(1, 3)));
        assert_eq!(parse_decimal("2"), Some(from_int(2)));
        assert_eq!(parse_decimal(".5"), Some(ratio(1, 2)));
        assert_eq!(parse_decimal("abc"), None);
        assert_eq!(parse_fraction("0.5"), None);
        assert_eq!(parse_fraction("3/0"), None);
    }

    #[test]
    fn formatting() {
        assert_eq!(format(&ratio(2, 4)), "1/2");
        assert_eq!(format(&from_int(3)), "3");
    }

    #[test]
    fn to_f64_handles_huge_values() {
        let big = Rational::new(num_traits::pow(BigInt::from(10), 400), num_traits::pow(BigInt::from(10), 400) * 4);
        assert!((to_f64(&big) - 0.25).abs() < 1e-12);
    }
}
