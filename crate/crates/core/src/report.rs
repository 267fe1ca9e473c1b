//! Output formatting and CSV writers for estimates.

use std::path::Path;

use crate::error::{Error, Result};

/// Format with 10 significant digits: fixed notation for moderate magnitudes,
/// scientific otherwise, trailing zeros removed.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.9e}", x);
    let (mant, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..10).contains(&exp) {
        let decimals = (9 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x))
    } else {
        format!("{}e{}", trim_zeros(mant), exp)
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

/// Write a header and string rows.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_significant_digits() {
        assert_eq!(fmt_num(1.0), "1");
        assert_eq!(fmt_num(1.306122448979592), "1.306122449");
        assert_eq!(fmt_num(-0.000123456789012), "-0.000123456789");
        assert_eq!(fmt_num(3.66e-7), "3.66e-7");
        assert_eq!(fmt_num(12345678901.0), "1.23456789e10");
        assert_eq!(fmt_num(0.05), "0.05");
        assert_eq!(fmt_num(9.9999999999), "10");
    }
}
