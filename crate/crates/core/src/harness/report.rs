use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

fn csv_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            csv_files(&path, out)?;
        } else if path.extension().and_then(|e| e.to_str()) == Some("csv") {
            out.push(path);
        }
    }
    Ok(())
}

/// Gathers every CSV table under `dir` into one plain-text report, one
/// section per file in path order. Output is LF-terminated and independent
/// of directory iteration order.
pub fn collect_report(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    csv_files(dir, &mut files)?;
    files.sort();
    if files.is_empty() {
        return Err(Error::Empty("no CSV tables under the report directory"));
    }
    let mut s = String::new();
    for f in files {
        let rel = f.strip_prefix(dir).unwrap_or(&f);
        let body = std::fs::read_to_string(&f).map_err(|e| Error::io(&f, e))?;
        s.push_str(&format!("== {}\n", rel.to_string_lossy().replace('\\', "/")));
        for line in body.lines() {
            s.push_str(line);
            s.push('\n');
        }
        s.push('\n');
    }
    Ok(s)
}
