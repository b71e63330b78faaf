//! Decimal output with 17 significant digits, which round-trips every `f64`.

/// `%.17g`-style text: trailing zeros trimmed, scientific outside `1e-5..1e17`.
pub fn num(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.16e}", x);
    let (mant, exp) = sci.split_once('e').expect("scientific form");
    let exp: i32 = exp.parse().expect("exponent");
    let (sign, mant) = mant.strip_prefix('-').map_or(("", mant), |m| ("-", m));
    let digits: String = mant.chars().filter(|c| *c != '.').collect();
    let body = if (-5..17).contains(&exp) {
        if exp >= 0 {
            let (int, frac) = digits.split_at(exp as usize + 1);
            trim(format!("{int}.{frac}"))
        } else {
            trim(format!("0.{}{digits}", "0".repeat((-exp - 1) as usize)))
        }
    } else {
        let (d0, rest) = digits.split_at(1);
        format!("{}e{exp}", trim(format!("{d0}.{rest}")))
    };
    format!("{sign}{body}")
}

fn trim(s: String) -> String {
    let t = s.trim_end_matches('0').trim_end_matches('.');
    t.to_string()
}

#[cfg(test)]
mod tests {
    use super::num;

    #[test]
    fn examples() {
        assert_eq!(num(1.5), "1.5");
        assert_eq!(num(-2.0), "-2");
        assert_eq!(num(0.1), "0.10000000000000001");
        assert_eq!(num(1e-7), "9.9999999999999995e-8");
        assert_eq!(num(1e20), "1e20");
        assert_eq!(num(123.0), "123");
    }

    #[test]
    fn round_trips() {
        for x in [0.1 + 0.2, 1.0 / 3.0, -7.25e-300, 5e-324, f64::MAX, 2.5e16, 1e-5] {
            assert_eq!(num(x).parse::<f64>().unwrap().to_bits(), x.to_bits(), "{x}");
        }
    }
}
