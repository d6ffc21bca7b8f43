//! Flat `key = value` text with `#` comments.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Parses lines into ordered `(key, value)` pairs. Blank lines and
/// everything after `#` are ignored; a repeated key is an error.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if out.iter().any(|(seen, _)| seen == k) {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Splits a `key=value` override as given on a command line.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) =
        s.split_once('=').ok_or_else(|| Error::Config(format!("override `{s}` is not of the form key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

pub fn render(pairs: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        let _ = writeln!(out, "{k} = {v}");
    }
    out
}

pub fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| Error::Config(format!("`{key}`: cannot parse `{v}`: {e}")))
}

pub fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    if v.trim().is_empty() || v.trim() == "none" {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| parse_value(key, p.trim())).collect()
}

pub fn join<T: std::fmt::Display>(items: &[T]) -> String {
    if items.is_empty() {
        return "none".into();
    }
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_whitespace() {
        let kv = parse("# header\n a = 1 # trailing\n\nb=x,y\n").unwrap();
        assert_eq!(kv, vec![("a".into(), "1".into()), ("b".into(), "x,y".into())]);
    }

    #[test]
    fn errors_name_the_line() {
        let e = parse("a = 1\nnonsense\n").unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");
        assert!(parse("a = 1\na = 2").is_err());
    }

    #[test]
    fn lists() {
        assert_eq!(parse_list::<usize>("k", "1, 2,3").unwrap(), vec![1, 2, 3]);
        assert!(parse_list::<usize>("k", "none").unwrap().is_empty());
        assert_eq!(join::<usize>(&[]), "none");
        assert!(parse_list::<usize>("k", "1,x").is_err());
    }

    #[test]
    fn render_then_parse() {
        let pairs = vec![("lr".to_string(), "0.0005".to_string()), ("sc_levels".to_string(), "M,H".to_string())];
        assert_eq!(parse(&render(&pairs)).unwrap(), pairs);
    }
}
