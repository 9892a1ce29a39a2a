use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use mesa_core::config::RunConfig;
use mesa_core::env::Environment;
use mesa_core::orca::OrcaCrowd;
use mesa_core::Error;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl CliError {
    /// 0 success, 1 usage/config, 2 numeric divergence, 3 I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(Error::Divergence { .. } | Error::Numeric { .. }) => 2,
            CliError::Core(Error::Io { .. }) => 3,
            CliError::Core(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e).into())
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e).into())
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("output types serialize")
}

pub struct Context {
    pub cfg: RunConfig,
    pub digest: String,
    pub workers: usize,
    pub out: PathBuf,
}

impl Context {
    pub fn new(
        config: Option<&Path>,
        seed: Option<u64>,
        workers: Option<usize>,
        out: Option<PathBuf>,
    ) -> CliResult<Self> {
        let mut cfg = match config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
            cfg.train.seed = s;
        }
        let workers = match workers {
            Some(0) => return usage("--workers must be at least 1"),
            Some(w) => w,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        };
        let out = out
            .or_else(|| cfg.paths.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok(Context {
            digest: cfg.digest(),
            cfg,
            workers,
            out,
        })
    }

    pub fn environment(&self) -> Environment {
        Environment::new(
            self.cfg.reward.clone(),
            OrcaCrowd {
                params: self.cfg.orca.clone(),
                see_robot: self.cfg.humans_see_robot,
            },
        )
    }

    /// Path of `name` inside the output directory, creating the directory.
    pub fn output(&self, name: &str) -> CliResult<PathBuf> {
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        Ok(self.out.join(name))
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.output(name)?;
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).expect("output types serialize");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn write_jsonl<T: Serialize>(
        &self,
        name: &str,
        rows: impl IntoIterator<Item = T>,
    ) -> CliResult<PathBuf> {
        let path = self.output(name)?;
        let mut w = LineWriter::create(&path)?;
        for row in rows {
            w.line(&row)?;
        }
        w.finish()?;
        Ok(path)
    }
}

/// Buffered JSONL writer that reports errors with the file path.
pub struct LineWriter {
    path: PathBuf,
    inner: BufWriter<File>,
}

impl LineWriter {
    pub fn create(path: &Path) -> Result<Self, Error> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(LineWriter {
            path: path.to_path_buf(),
            inner: BufWriter::new(f),
        })
    }

    pub fn line<T: Serialize>(&mut self, row: &T) -> Result<(), Error> {
        writeln!(self.inner, "{}", to_json(row)).map_err(|e| Error::io(&self.path, e))
    }

    pub fn raw(&mut self, line: &str) -> Result<(), Error> {
        writeln!(self.inner, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<(), Error> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}
