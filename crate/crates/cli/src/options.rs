//! Layered configuration: config file, then `--set` pairs, then flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use kernel_series::config::ConfigMap;
use kernel_series::Error;

use crate::CommonArgs;

/// Flag groups that map onto config keys.
pub trait Keyed {
    fn pairs(&self) -> Vec<(&'static str, Option<String>)>;
}

/// Why a command stopped, mapped onto the process exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Core(Error),
    Io(String),
    /// The run completed but a requested diagnostic could not be produced.
    Diagnostic(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Core(e) => match e {
                Error::Config(_) | Error::Domain(_) | Error::InvalidOrder(_) | Error::NoFixpoint | Error::Coverage { .. } => 2,
                Error::Divergence { .. } => 3,
                _ => 4,
            },
            Failure::Io(_) => 1,
            Failure::Diagnostic(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
            Failure::Diagnostic(m) => write!(f, "diagnostic failure: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

/// Reads a config file. Output files of this program are accepted too: the
/// `# key = value` lines of their header are taken as the configuration.
pub fn read_config_file(path: &Path) -> Result<ConfigMap, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let body = if text.starts_with(crate::output::HEADER_MARK) {
        text.lines()
            .skip(1)
            .take_while(|l| l.starts_with('#'))
            .map(|l| l.trim_start_matches('#').trim())
            .collect::<Vec<_>>()
            .join("\n")
    } else {
        text
    };
    ConfigMap::parse(&body).map_err(Failure::Core)
}

/// A subcommand with its merged, not yet validated, configuration.
pub struct Invocation {
    pub command: &'static str,
    pub map: ConfigMap,
    pub resolved: Vec<(String, String)>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub print_config: bool,
}

impl Invocation {
    pub fn new(
        command: &'static str,
        common: &CommonArgs,
        flags: Vec<(&'static str, Option<String>)>,
    ) -> Result<Self, Failure> {
        let mut map = match &common.config {
            Some(p) => read_config_file(p)?,
            None => ConfigMap::new(),
        };
        for kv in &common.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Failure::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            map.set(k.trim(), v.trim());
        }
        for (k, v) in flags {
            if let Some(v) = v {
                map.set(k, v);
            }
        }
        if common.workers == Some(0) {
            return Err(Failure::Config("workers must be at least 1".into()));
        }
        Ok(Self {
            command,
            map,
            resolved: Vec::new(),
            workers: common.workers,
            out: common.out.clone(),
            print_config: common.print_config,
        })
    }

    /// Takes `key`, falling back to `default`, and records the resolved value.
    pub fn value<T: FromStr + ToString>(&mut self, key: &str, default: T) -> Result<T, Failure>
    where
        T::Err: fmt::Display,
    {
        let v = self.map.take_parsed(key)?.unwrap_or(default);
        self.record(key, v.to_string());
        Ok(v)
    }

    pub fn record(&mut self, key: &str, value: impl Into<String>) {
        self.resolved.push((key.to_string(), value.into()));
    }

    /// Fails on keys nobody consumed.
    pub fn finish(&self) -> Result<(), Failure> {
        self.map.reject_unknown().map_err(Failure::Core)
    }
}
