//! Flat `key = value` text files used for scene and pipeline configuration.
//! Lines starting with `#` and blank lines are ignored; keys may repeat,
//! with the last occurrence winning.

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn parse_kv_text(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "{}:{}: expected `key = value`, got `{line}`",
                origin.display(),
                lineno + 1
            )));
        };
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

pub(crate) fn parse_kv_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_kv_text(&text, path)
}

pub(crate) fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key `{key}`: `{value}` is not a valid count")))
}

pub(crate) fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key `{key}`: `{value}` is not a valid integer")))
}

pub(crate) fn parse_f64(key: &str, value: &str) -> Result<f64> {
    let v: f64 = value
        .parse()
        .map_err(|_| Error::Config(format!("key `{key}`: `{value}` is not a valid number")))?;
    if !v.is_finite() {
        return Err(Error::Config(format!("key `{key}`: value must be finite")));
    }
    Ok(v)
}

pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "key `{key}`: `{value}` is not a boolean"
        ))),
    }
}

/// Parses `lo,hi` (or a single number meaning `x,x`) into an ordered range.
pub(crate) fn parse_range(key: &str, value: &str) -> Result<(f64, f64)> {
    let (lo, hi) = match value.split_once(',') {
        Some((a, b)) => (parse_f64(key, a.trim())?, parse_f64(key, b.trim())?),
        None => {
            let v = parse_f64(key, value)?;
            (v, v)
        }
    };
    if lo > hi {
        return Err(Error::Config(format!(
            "key `{key}`: range lower bound {lo} exceeds upper bound {hi}"
        )));
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    #[test]
    fn parses_comments_blanks_and_pairs() {
        let text = "# comment\n\n a = 1 \nb=two\na = 3\n";
        let kv = parse_kv_text(text, &PathBuf::from("<test>")).unwrap();
        assert_eq!(
            kv,
            vec![
                ("a".into(), "1".into()),
                ("b".into(), "two".into()),
                ("a".into(), "3".into())
            ]
        );
    }

    #[test]
    fn rejects_lines_without_equals() {
        assert!(parse_kv_text("just words\n", &PathBuf::from("<test>")).is_err());
    }

    #[test]
    fn range_syntax() {
        assert_eq!(parse_range("k", "0.5, 2").unwrap(), (0.5, 2.0));
        assert_eq!(parse_range("k", "1.5").unwrap(), (1.5, 1.5));
        assert!(parse_range("k", "3,1").is_err());
    }
}
