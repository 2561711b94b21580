//! Shared helpers for the line-delimited text formats: significant-digit
//! number formatting and `#key=value` header lines.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Formats `x` with `digits` significant digits, like C's `%.{digits}g`.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    assert!(digits >= 1);
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Ordered `key=value` pairs carried by a `#`-prefixed header line.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Header(pub Vec<(String, String)>);

impl Header {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.0.push((key.into(), value.to_string()));
        self
    }

    pub fn extend(mut self, extra: &[(String, String)]) -> Self {
        self.0.extend(extra.iter().cloned());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str, what: &'static str, line: usize) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::parse(what, line, format!("header lacks {key}=")))
    }

    pub fn parse(line: &str, what: &'static str, line_no: usize) -> Result<Self> {
        let body = line
            .strip_prefix('#')
            .ok_or_else(|| Error::parse(what, line_no, "expected '#' header line"))?;
        let mut fields = Vec::new();
        for field in body.split('\t') {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::parse(what, line_no, format!("header field {field:?}")))?;
            fields.push((k.to_string(), v.to_string()));
        }
        Ok(Header(fields))
    }

    pub fn render(&self) -> String {
        let mut out = String::from("#");
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                out.push('\t');
            }
            out.push_str(k);
            out.push('=');
            out.push_str(v);
        }
        out
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes through a temp file in the same directory, then renames.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_string(),
    });
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn parse_f64(s: &str, what: &'static str, line: usize) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::parse(what, line, format!("bad number {s:?}")))
}

pub(crate) fn parse_u64(s: &str, what: &'static str, line: usize) -> Result<u64> {
    s.parse::<u64>()
        .map_err(|_| Error::parse(what, line, format!("bad integer {s:?}")))
}

/// Renders a comma-separated list, the form used for cutoffs and probes.
pub fn join_list<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

pub fn parse_list<T: std::str::FromStr>(s: &str) -> Option<Vec<T>> {
    if s.trim().is_empty() {
        return Some(Vec::new());
    }
    s.split(',').map(|p| p.trim().parse().ok()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig_digits_match_printf_g() {
        assert_eq!(fmt_sig(0.5, 9), "0.5");
        assert_eq!(fmt_sig(1.0, 9), "1");
        assert_eq!(fmt_sig(-0.123456789123, 9), "-0.123456789");
        assert_eq!(fmt_sig(123456789.4, 9), "123456789");
        assert_eq!(fmt_sig(1234567890.0, 9), "1.23456789e+09");
        assert_eq!(fmt_sig(0.00001234, 9), "1.234e-05");
        assert_eq!(fmt_sig(0.0001234, 9), "0.0001234");
        assert_eq!(fmt_sig(std::f64::consts::FRAC_1_SQRT_2, 12), "0.707106781187");
    }

    #[test]
    fn sig_digits_round_trip_within_precision() {
        for &x in &[std::f64::consts::PI, -2.5e-7, 9.99999999999e5, 1e300] {
            let back: f64 = fmt_sig(x, 9).parse().unwrap();
            assert!(((back - x) / x).abs() < 1e-8, "{x} -> {back}");
        }
    }

    #[test]
    fn header_round_trip() {
        let h = Header::new().with("model", "fi2i").with("completeness", "dense");
        let line = h.render();
        assert_eq!(line, "#model=fi2i\tcompleteness=dense");
        assert_eq!(Header::parse(&line, "t", 1).unwrap(), h);
        assert!(Header::parse("model=x", "t", 1).is_err());
    }
}
