//! Exact rational numbers used for every probability and reward.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub type Q = BigRational;

pub fn ratio(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn int(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

pub fn one() -> Q {
    Q::one()
}

pub fn zero() -> Q {
    Q::zero()
}

/// Parses `p/q` or `p` with non-negative decimal integers. A zero
/// denominator is rejected.
pub fn parse(text: &str) -> Option<Q> {
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    match text.split_once('/') {
        Some((n, d)) => {
            if !digits(n) || !digits(d) {
                return None;
            }
            let d: BigInt = d.parse().ok()?;
            if d.is_zero() {
                return None;
            }
            Some(Q::new(n.parse().ok()?, d))
        }
        None => {
            if !digits(text) {
                return None;
            }
            Some(Q::from_integer(text.parse().ok()?))
        }
    }
}

/// Canonical text: reduced `p/q`, or `p` for integers.
pub fn format(x: &Q) -> String {
    x.to_string()
}

pub fn to_f64(x: &Q) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

pub fn in_unit_interval(x: &Q) -> bool {
    !x.is_negative() && *x <= Q::one()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_format() {
        assert_eq!(parse("2/4"), Some(ratio(1, 2)));
        assert_eq!(parse("3"), Some(int(3)));
        assert_eq!(parse("1/0"), None);
        assert_eq!(parse("-1"), None);
        assert_eq!(parse("1/"), None);
        assert_eq!(format(&ratio(2, 6)), "1/3");
        assert_eq!(format(&int(1)), "1");
    }
}
