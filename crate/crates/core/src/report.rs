//! Byte-stable JSON and CSV encoding of analysis reports.
//!
//! Object keys are sorted and every float is rounded to 12 significant digits
//! before printing, so equal inputs always produce equal bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Number, Value};

use crate::error::Result;

pub const SIGNIFICANT_DIGITS: usize = 12;

/// Rounds `x` to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .unwrap_or(x)
}

/// Converts `value` to a JSON tree with sorted keys and rounded floats.
/// Non-finite floats become `null`.
pub fn normalize<T: Serialize>(value: &T) -> Result<Value> {
    Ok(normalize_value(serde_json::to_value(value)?))
}

fn normalize_value(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or(f64::NAN);
            Number::from_f64(round_sig(x)).map_or(Value::Null, Value::Number)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(normalize_value).collect()),
        Value::Object(o) => {
            // serde_json's default map is ordered by key.
            let m: Map<String, Value> = o
                .into_iter()
                .map(|(k, v)| (k, normalize_value(v)))
                .collect();
            Value::Object(m)
        }
        other => other,
    }
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(&normalize(value)?)?;
    out.push(b'\n');
    Ok(out)
}

/// Flattens a JSON tree into `(path, value)` pairs. Object keys join with `.`,
/// array indices appear as `[i]`.
pub fn flatten(v: &Value) -> Vec<(String, String)> {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
        match v {
            Value::Object(o) => {
                for (k, child) in o {
                    let p = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    walk(&p, child, out);
                }
            }
            Value::Array(a) => {
                for (i, child) in a.iter().enumerate() {
                    walk(&format!("{prefix}[{i}]"), child, out);
                }
            }
            Value::String(s) => out.push((prefix.to_string(), s.clone())),
            Value::Null => out.push((prefix.to_string(), String::new())),
            other => out.push((prefix.to_string(), other.to_string())),
        }
    }
    let mut out = Vec::new();
    walk("", v, &mut out);
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Long-format CSV: a `path,value` header, then one row per leaf of the
/// normalized JSON tree, carrying exactly the values the JSON encoding prints.
pub fn to_csv_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = String::from("path,value\n");
    for (k, v) in flatten(&normalize(value)?) {
        out.push_str(&csv_field(&k));
        out.push(',');
        out.push_str(&csv_field(&v));
        out.push('\n');
    }
    Ok(out.into_bytes())
}

/// Writes `bytes` to `<path>.tmp` and renames it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let result = (|| -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn rounding() {
        assert_eq!(round_sig(0.1 + 0.2), 0.3);
        assert_eq!(round_sig(1.0 / 3.0), 0.333333333333);
        assert_eq!(round_sig(-2.0f64.sqrt() * 1e-300), -1.41421356237e-300);
        assert_eq!(round_sig(0.0), 0.0);
    }

    #[test]
    fn keys_sorted_and_floats_rounded() {
        let v = json!({"b": 1.0 / 3.0, "a": [1, 2.5], "c": {"z": true, "y": null}});
        let s = String::from_utf8(to_json_bytes(&v).unwrap()).unwrap();
        assert!(s.find("\"a\"").unwrap() < s.find("\"b\"").unwrap());
        assert!(s.contains("0.333333333333"));
        assert!(!s.contains("0.3333333333333"));
    }

    #[test]
    fn non_finite_becomes_null() {
        let v = normalize(&vec![f64::NAN, 1.0]).unwrap();
        assert_eq!(v, json!([null, 1.0]));
    }

    #[test]
    fn csv_matches_json_leaves() {
        let v = json!({"name": "a,b", "x": [0.5, {"k": "q\"t"}]});
        let csv = String::from_utf8(to_csv_bytes(&v).unwrap()).unwrap();
        assert_eq!(
            csv,
            "path,value\nname,\"a,b\"\nx[0],0.5\nx[1].k,\"q\"\"t\"\n"
        );
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert!(!dir.path().join("r.json.tmp").exists());
    }
}
