//! Serialize floats with 17 significant digits.
//!
//! `serde_json` emits the shortest round-trip representation, which is exact
//! but variable-width. Model and trajectory files pin the width so that
//! byte-level comparisons across runs are meaningful.

use serde::ser::{SerializeSeq, Serializer};
use serde::Serialize;
use serde_json::value::RawValue;

pub fn format(x: f64) -> String {
    if x == 0.0 {
        // keeps "-0" out of the output
        return "0.0000000000000000e0".to_string();
    }
    format!("{x:.16e}")
}

/// Non-finite values become `null`, which JSON has no number for.
fn raw(x: f64) -> Box<RawValue> {
    let text = if x.is_finite() { format(x) } else { "null".to_string() };
    RawValue::from_string(text).expect("formatted float is valid JSON")
}

pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    raw(*x).serialize(s)
}

pub mod vec {
    use super::*;

    pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(xs.len()))?;
        for &x in xs {
            seq.serialize_element(&raw(x))?;
        }
        seq.end()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 123456.789, f64::MAX] {
            let s = format(x);
            let mantissa = s.split('e').next().unwrap().replace(['-', '.'], "");
            assert_eq!(mantissa.len(), 17, "{s}");
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(format(-0.0), format(0.0));
    }
}
