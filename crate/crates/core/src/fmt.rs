//! Shortest-stable decimal rendering shared by every text artifact.

/// `printf("%.9g")`: nine significant digits, trailing zeros trimmed,
/// exponent form outside `1e-4 ..= 1e9`. Nine digits round-trip any `f32`.
pub fn sig9(x: f64) -> String {
    general(x, 9)
}

/// `printf("%.{precision}g")` for finite `x`; `inf`, `-inf` and `nan` otherwise.
pub fn general(x: f64, precision: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let p = precision.max(1);
    let sci = format!("{:.*e}", p - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= p as i32 {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matches_printf() {
        assert_eq!(sig9(0.0), "0");
        assert_eq!(sig9(1.0), "1");
        assert_eq!(sig9(-0.7), "-0.7");
        assert_eq!(sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(sig9(123456789.0), "123456789");
        assert_eq!(sig9(1234567891.0), "1.23456789e+09");
        assert_eq!(sig9(0.0001), "0.0001");
        assert_eq!(sig9(0.00001234), "1.234e-05");
        assert_eq!(sig9(9.9999999999), "10");
        assert_eq!(general(2.5, 1), "2");
        assert_eq!(sig9(f64::INFINITY), "inf");
    }

    proptest! {
        #[test]
        fn f32_round_trips(x in any::<f32>().prop_filter("finite", |x| x.is_finite())) {
            let s = sig9(f64::from(x));
            prop_assert_eq!(s.parse::<f32>().unwrap(), x);
        }
    }
}
