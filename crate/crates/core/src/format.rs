//! Decimal float formatting shared by the corpus, checkpoint, and CSV writers.

use serde_json::value::RawValue;

/// `x` with 17 significant digits, e.g. `-1.2500000000000000e-3`.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// A JSON array literal of 17-significant-digit floats.
pub fn raw_f64_array(xs: &[f64]) -> Box<RawValue> {
    let mut s = String::with_capacity(xs.len() * 24 + 2);
    s.push('[');
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&fmt17(*x));
    }
    s.push(']');
    RawValue::from_string(s).expect("float array is valid JSON")
}

/// Byte offset of a serde_json error position within `text`.
pub fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1).min(l.len());
        }
        offset += l.len();
    }
    text.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for &x in &[0.1, -1.0 / 3.0, 1e-300, 12345.678901234567, f64::MIN_POSITIVE, 0.0] {
            let s = fmt17(x);
            let back: f64 = serde_json::from_str(&s).unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(fmt17(1.0), "1.0000000000000000e0");
    }
}
