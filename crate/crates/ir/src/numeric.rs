//! Float formatting and the portable exponential.
//!
//! Both backends must agree bit-for-bit on float64 results, which rules
//! out leaning on libm: the exponential is implemented here with plain
//! IEEE arithmetic and the C emitter reproduces the same operation
//! sequence verbatim. Printing uses 17 significant digits, enough to
//! round-trip any double, shaped like C's `%.17g` so interpreted and
//! compiled output lines compare equal as strings.

/// Formats like C `printf("%.17g", x)` under glibc: shortest of fixed and
/// scientific placement for 17 significant digits, trailing zeros
/// stripped, two-digit exponent minimum.
pub fn fmt_g17(x: f64) -> String {
    if x.is_nan() {
        return if x.is_sign_negative() { "-nan".into() } else { "nan".into() };
    }
    if x.is_infinite() {
        return if x < 0.0 { "-inf".into() } else { "inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    // Round to 17 significant digits once, then place the decimal point
    // from the rounded digit string so no second rounding happens.
    let neg = x < 0.0;
    let s = format!("{:.16e}", x.abs());
    let (mant, exp) = s.split_once('e').expect("exponent in {:e} output");
    let exp: i32 = exp.parse().expect("numeric exponent");
    let digits: String = mant.chars().filter(|c| *c != '.').collect();
    debug_assert_eq!(digits.len(), 17);
    let sign = if neg { "-" } else { "" };

    if !(-4..17).contains(&exp) {
        let trimmed = digits.trim_end_matches('0');
        let trimmed = if trimmed.is_empty() { "0" } else { trimmed };
        let (head, tail) = trimmed.split_at(1);
        let mant_s = if tail.is_empty() {
            head.to_string()
        } else {
            format!("{}.{}", head, tail)
        };
        let esign = if exp < 0 { '-' } else { '+' };
        format!("{}{}e{}{:02}", sign, mant_s, esign, exp.abs())
    } else if exp >= 0 {
        let cut = exp as usize + 1;
        let int_part = &digits[..cut];
        let frac = digits[cut..].trim_end_matches('0');
        if frac.is_empty() {
            format!("{}{}", sign, int_part)
        } else {
            format!("{}{}.{}", sign, int_part, frac)
        }
    } else {
        let zeros = "0".repeat((-exp - 1) as usize);
        let frac = digits.trim_end_matches('0');
        format!("{}0.{}{}", sign, zeros, frac)
    }
}

// Spelled as literals (not std consts) because these exact decimal
// spellings are duplicated verbatim in the emitted C prelude; the hi/lo
// pair is a two-term split of ln 2, not an approximation of it.
#[allow(clippy::approx_constant)]
const LOG2_E: f64 = 1.4426950408889634;
#[allow(clippy::approx_constant)]
const LN2_HI: f64 = 0.6931471805599453;
const LN2_LO: f64 = 2.3190468138462996e-17;

/// Portable exponential: argument reduction against ln 2 split in two
/// parts, a fixed-degree Taylor polynomial, then exact scaling by a power
/// of two. Every step is a single IEEE operation, so the emitted C twin
/// (`k_exp` in the runtime prelude) produces identical bits.
pub fn kexp(x: f64) -> f64 {
    if x.is_nan() {
        return x;
    }
    if x > 709.782712893384 {
        return f64::INFINITY;
    }
    if x < -745.1332191019412 {
        return 0.0;
    }
    let nf = (x * LOG2_E + 0.5).floor();
    let mut r = x - nf * LN2_HI;
    r -= nf * LN2_LO;
    // Taylor e^r for |r| <= (ln 2)/2 + reduction slack, Horner order.
    let mut p = 1.0 / 6227020800.0; // 1/13!
    p = p * r + 1.0 / 479001600.0;
    p = p * r + 1.0 / 39916800.0;
    p = p * r + 1.0 / 3628800.0;
    p = p * r + 1.0 / 362880.0;
    p = p * r + 1.0 / 40320.0;
    p = p * r + 1.0 / 5040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    scale2(p, nf as i64)
}

/// p * 2^n without libm. Normal exponents fold into one multiply; deep
/// negative scales go in two steps so subnormal results round the same
/// way in both backends (each step is one IEEE multiply).
fn scale2(p: f64, n: i64) -> f64 {
    if (-1021..=1023).contains(&n) {
        p * pow2(n)
    } else if n < 0 {
        (p * pow2(-1021)) * pow2(n + 1021)
    } else {
        (p * pow2(1023)) * pow2(n - 1023)
    }
}

fn pow2(n: i64) -> f64 {
    debug_assert!((-1021..=1023).contains(&n));
    f64::from_bits(((n + 1023) as u64) << 52)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_integral_values_have_no_point() {
        assert_eq!(fmt_g17(4.0), "4");
        assert_eq!(fmt_g17(-12.0), "-12");
        assert_eq!(fmt_g17(0.0), "0");
        assert_eq!(fmt_g17(-0.0), "-0");
    }

    #[test]
    fn format_switches_to_scientific_like_percent_g() {
        assert_eq!(fmt_g17(1e-5), "1.0000000000000001e-05");
        assert_eq!(fmt_g17(0.0001), "0.0001");
        assert_eq!(fmt_g17(1e17), "1e+17");
        assert_eq!(fmt_g17(99999999999999999.0), "1e+17");
        assert_eq!(fmt_g17(1.5), "1.5");
    }

    #[test]
    fn format_round_trips_doubles() {
        let cases = [
            0.1,
            -3.0 / 7.0,
            f64::MIN_POSITIVE,
            f64::MAX,
            5e-324,
            2187.0,
            1.0 + f64::EPSILON,
        ];
        for &x in &cases {
            let s = fmt_g17(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{} -> {}", x, s);
        }
    }

    #[test]
    fn format_specials() {
        assert_eq!(fmt_g17(f64::INFINITY), "inf");
        assert_eq!(fmt_g17(f64::NEG_INFINITY), "-inf");
        assert_eq!(fmt_g17(f64::NAN), "nan");
    }

    #[test]
    fn kexp_tracks_libm_closely() {
        for i in -60..=60 {
            let x = i as f64 * 0.37;
            let want = x.exp();
            let got = kexp(x);
            let rel = ((got - want) / want).abs();
            assert!(rel < 1e-14, "x={} got={} want={}", x, got, want);
        }
    }

    #[test]
    fn kexp_edges() {
        assert_eq!(kexp(0.0), 1.0);
        assert_eq!(kexp(800.0), f64::INFINITY);
        assert_eq!(kexp(-800.0), 0.0);
        assert!(kexp(f64::NAN).is_nan());
        // Deep negative arguments land in the subnormal range.
        let tiny = kexp(-744.0);
        assert!(tiny > 0.0 && tiny < f64::MIN_POSITIVE);
    }
}
