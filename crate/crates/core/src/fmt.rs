//! Fixed significant-digit number formatting for CSV output.

/// Default significant digits of emitted numbers.
pub const CSV_DIGITS: usize = 12;

/// Formats `x` with [`CSV_DIGITS`] significant digits.
pub fn sig(x: f64) -> String {
    sig_digits(x, CSV_DIGITS)
}

/// Formats `x` with `digits` significant digits, `%g` style: plain decimal
/// for moderate exponents, scientific otherwise, trailing zeros removed.
pub fn sig_digits(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if exp < -5 || exp >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        format!("{mantissa}e{exp}")
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
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

    #[test]
    fn formats() {
        assert_eq!(sig(0.0), "0");
        assert_eq!(sig(1.0), "1");
        assert_eq!(sig(217.9104), "217.9104");
        assert_eq!(sig(1.0 / 3.0), "0.333333333333");
        assert_eq!(sig(-2.5e-9), "-2.5e-9");
        assert_eq!(sig(6.6e-6), "6.6e-6");
        assert_eq!(sig(1e15), "1e15");
        assert_eq!(sig(123456789012.0), "123456789012");
        assert_eq!(sig_digits(0.123456, 3), "0.123");
    }

    #[test]
    fn round_trips_to_twelve_digits() {
        for &x in &[std::f64::consts::PI, 1e-7 / 3.0, 9.999_999_999_999_9e5, 0.95] {
            let y: f64 = sig(x).parse().unwrap();
            assert!((x - y).abs() <= 1e-11 * x.abs());
        }
    }
}
