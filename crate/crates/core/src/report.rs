//! CSV and manifest output shared by training, evaluation, and the RL task.

use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

/// Write a CSV file with a header row. Values are written as given.
pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut out = String::with_capacity(rows.iter().map(|r| r.len() + 1).sum::<usize>() + header.len() + 1);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(row);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read a CSV written by [`write_csv`]: returns (header fields, rows of fields).
/// No quoting is used anywhere in this project's files.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty csv", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    Ok((header, rows))
}

/// Write the run manifest next to a command's outputs: enough `key = value`
/// lines to re-run the command exactly.
pub fn write_manifest(dir: &Path, command: &str, entries: &[(String, String)]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("manifest.txt");
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(&path, e);
    writeln!(w, "command = {command}").map_err(io)?;
    writeln!(w, "version = {}", env!("CARGO_PKG_VERSION")).map_err(io)?;
    for (k, v) in entries {
        writeln!(w, "{k} = {v}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Parse a flat `key = value` file (manifest or config override).
pub fn read_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Format(format!("{}:{}: expected key = value", path.display(), lineno + 1))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut path = std::env::temp_dir();
        path.push(format!("dlab-report-{}.csv", std::process::id()));
        write_csv(&path, "a,b", &["1,2".into(), "3,4".into()]).unwrap();
        let (header, rows) = read_csv(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(header, vec!["a", "b"]);
        assert_eq!(rows, vec![vec!["1", "2"], vec!["3", "4"]]);
    }

    #[test]
    fn key_value_parsing_skips_comments() {
        let mut path = std::env::temp_dir();
        path.push(format!("dlab-kv-{}.txt", std::process::id()));
        std::fs::write(&path, "# comment\nseed = 5\n\nlambda = 0.05\n").unwrap();
        let kv = read_key_values(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(kv, vec![("seed".into(), "5".into()), ("lambda".into(), "0.05".into())]);
    }
}
