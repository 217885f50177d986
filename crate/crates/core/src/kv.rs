//! Flat `key = value` text used for configuration files and reports.
//!
//! Blank lines and lines starting with `#` are skipped; a `#` after the value
//! starts a trailing comment. Keys are case-sensitive and may repeat, in which
//! case later entries win when the pairs are applied in order.

use crate::error::{Error, Result};

pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            });
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || k.contains(char::is_whitespace) {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("bad key `{k}`"),
            });
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

pub fn render<K: AsRef<str>, V: AsRef<str>>(pairs: &[(K, V)]) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        s.push_str(k.as_ref());
        s.push_str(" = ");
        s.push_str(v.as_ref());
        s.push('\n');
    }
    s
}

/// Typed value parsing with the key named in the error.
pub fn value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
}

pub fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean `{v}` for `{key}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_blanks() {
        let p = parse("# header\n\nlr = 0.001  # trailing\n epochs=3\n").unwrap();
        assert_eq!(
            p,
            vec![("lr".into(), "0.001".into()), ("epochs".into(), "3".into())]
        );
    }

    #[test]
    fn missing_equals_names_line() {
        match parse("a = 1\noops\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn render_round_trip() {
        let pairs = vec![("a".to_string(), "1".to_string()), ("b".into(), "x y".into())];
        assert_eq!(parse(&render(&pairs)).unwrap(), pairs);
    }
}
