//! CSV and JSON emission with a `#` provenance header.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::options::{Failure, Invocation};

/// First line of every CSV header; also how config files are recognized as
/// previous outputs.
pub const HEADER_MARK: &str = "# kseries";

/// `# kseries <command>` followed by one `# key = value` line per setting.
pub fn header(inv: &Invocation) -> String {
    let mut s = format!("{HEADER_MARK} {}\n", inv.command);
    for (k, v) in &inv.resolved {
        s.push_str(&format!("# {k} = {v}\n"));
    }
    s
}

/// The resolved settings as a JSON object.
pub fn config_json(inv: &Invocation) -> Value {
    let mut obj = serde_json::Map::new();
    obj.insert("command".into(), Value::String(inv.command.into()));
    for (k, v) in &inv.resolved {
        obj.insert(k.clone(), Value::String(v.clone()));
    }
    Value::Object(obj)
}

/// A CSV table written to a file or standard output.
pub struct Table {
    w: Box<dyn Write>,
}

impl Table {
    pub fn create(inv: &Invocation, columns: &[&str]) -> Result<Self, Failure> {
        let w: Box<dyn Write> = match &inv.out {
            Some(p) => Box::new(BufWriter::new(open(p)?)),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        };
        let mut t = Self { w };
        t.w.write_all(header(inv).as_bytes())?;
        writeln!(t.w, "{}", columns.join(","))?;
        Ok(t)
    }

    pub fn row(&mut self, cells: &[String]) -> Result<(), Failure> {
        writeln!(self.w, "{}", cells.join(","))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), Failure> {
        self.w.flush()?;
        Ok(())
    }
}

fn open(p: &Path) -> Result<File, Failure> {
    File::create(p).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))
}

/// Shortest representation that parses back to the same value.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Where the JSON companion goes: the explicit path, else the CSV path with
/// a `.json` extension, else nowhere.
pub fn json_path(explicit: Option<PathBuf>, inv: &Invocation) -> Option<PathBuf> {
    explicit.or_else(|| inv.out.as_ref().map(|p| p.with_extension("json")))
}

pub fn write_json(path: &Path, value: &Value) -> Result<(), Failure> {
    let mut w = BufWriter::new(open(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Failure::Io(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
