use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::CliError;

pub const TOOL: &str = concat!("awmi ", env!("CARGO_PKG_VERSION"));

/// Shortest round-trip representation, in exponent form outside
/// `[1e-4, 1e15)`; empty for undefined values.
pub fn num(v: Option<f64>) -> String {
    match v {
        None => String::new(),
        Some(v) if v != 0.0 && v.is_finite() && !(1e-4..1e15).contains(&v.abs()) => {
            format!("{v:e}")
        }
        Some(v) => format!("{v}"),
    }
}

/// Comment lines prepended to CSV output.
pub fn csv_header(config: &impl Serialize, notes: &[String]) -> String {
    let mut out = format!("# tool: {TOOL}\n");
    let cfg = serde_json::to_string(config).expect("config serializes");
    let _ = writeln!(out, "# run_config: {cfg}");
    for n in notes {
        let _ = writeln!(out, "# {n}");
    }
    out
}

pub fn csv_document(
    config: &impl Serialize,
    notes: &[String],
    columns: &[String],
    rows: &[Vec<String>],
) -> String {
    let mut out = csv_header(config, notes);
    out.push_str(&columns.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.iter().map(|c| escape(c)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

fn escape(cell: &str) -> String {
    if cell.contains([',', '"', '\n']) {
        format!("\"{}\"", cell.replace('"', "\"\""))
    } else {
        cell.to_string()
    }
}

pub fn json_document(config: &impl Serialize, notes: &[String], data: &impl Serialize) -> String {
    let doc = json!({
        "meta": { "tool": TOOL, "run_config": config, "notes": notes },
        "data": data,
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("document serializes");
    s.push('\n');
    s
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let io = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    std::fs::create_dir_all(&dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Sends a document to `<dir>/<name>` or to stdout.
pub fn emit(dir: Option<&Path>, name: &str, body: &str) -> Result<Option<PathBuf>, CliError> {
    match dir {
        Some(d) => {
            let path = d.join(name);
            write_atomic(&path, body.as_bytes())?;
            Ok(Some(path))
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(body.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|source| CliError::Io {
                    path: PathBuf::from("<stdout>"),
                    source,
                })?;
            Ok(None)
        }
    }
}
