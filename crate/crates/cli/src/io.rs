use std::fmt;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use rtlmp_core::PowerCase;
use serde::Serialize;

/// Bad flag combinations; exits with status 2 like parse errors.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Reads a vector: one value per line, `#` comments and blank lines
/// skipped, the last comma-separated field of each row taken as the value.
/// A first row that does not parse is treated as a header.
pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    let mut first = true;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let field = line.rsplit(',').next().unwrap_or("").trim();
        match field.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if first => {}
            Err(_) => anyhow::bail!("{}:{}: '{field}' is not a number", path.display(), n + 1),
        }
        first = false;
    }
    Ok(out)
}

/// Branch ids from a comma-separated list of ids or `i-j` pairs.
pub fn parse_lines(case: &PowerCase, list: &str) -> Result<Vec<usize>> {
    let mut ids = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        ids.push(case.resolve_branch(part)?);
    }
    ids.sort_unstable();
    ids.dedup();
    Ok(ids)
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Writes `body` to `out`, or to standard output when there is no file.
/// With a file, `summary` goes to standard output instead.
pub fn emit(out: Option<&Path>, body: &str, summary: impl FnOnce() -> String) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, body).with_context(|| format!("writing {}", p.display()))?;
            print!("{}", summary());
        }
        None => print!("{body}"),
    }
    Ok(())
}

pub fn csv_string<R: Serialize>(rows: impl IntoIterator<Item = R>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vector_with_header_labels_and_comments() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.csv");
        fs::write(&p, "meter,value\n# note\nP1,0.5\n\nF1-2,-1e-2\n3\n").unwrap();
        assert_eq!(read_vector(&p).unwrap(), vec![0.5, -0.01, 3.0]);
        fs::write(&p, "1\nx\n").unwrap();
        assert!(read_vector(&p).is_err());
    }

    #[test]
    fn line_lists() {
        let case = rtlmp_core::case::t3().case;
        let id = case.resolve_branch("1-3").unwrap();
        assert_eq!(parse_lines(&case, " 3-1 , ").unwrap(), vec![id]);
        assert!(parse_lines(&case, "").unwrap().is_empty());
        assert!(parse_lines(&case, "1-9").is_err());
    }
}
