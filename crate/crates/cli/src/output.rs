use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use bevdrive::scenario::{fixtures, format, Scenario};
use serde::Serialize;

use crate::error::{CliResult, Failure};

/// Scenario source: `builtin:<set>`, a directory of `*.jsonl` files, or one file.
pub fn load_source(source: &str) -> CliResult<Vec<Scenario>> {
    if let Some(set) = source.strip_prefix("builtin:") {
        return fixtures::by_set(set).map_err(|e| Failure::usage(e.to_string()));
    }
    let path = Path::new(source);
    let scenarios = if path.is_dir() {
        format::load_scenarios(path)?
    } else {
        vec![format::load_scenario_file(path)?]
    };
    Ok(scenarios)
}

/// A file-name-safe form of a scenario id.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| Failure::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| Failure::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn buffered(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Failure::io(path, e))
}

pub fn finish(path: &Path, mut w: impl Write) -> CliResult<()> {
    w.flush().map_err(|e| Failure::io(path, e))
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub source: &'a str,
    pub scenarios: Vec<&'a str>,
    pub seed: Option<u64>,
    pub config: C,
    pub outputs: Vec<String>,
}

impl<'a, C: Serialize> Manifest<'a, C> {
    pub fn new(
        command: &'static str,
        source: &'a str,
        scenarios: &'a [Scenario],
        seed: Option<u64>,
        config: C,
    ) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            source,
            scenarios: scenarios.iter().map(|s| s.id.as_str()).collect(),
            seed,
            config,
            outputs: Vec::new(),
        }
    }

    pub fn output(mut self, rel: &str) -> Self {
        self.outputs.push(rel.to_string());
        self
    }

    /// Create `dir` and write `manifest.json` into it.
    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        create_dir(dir)?;
        let path = dir.join("manifest.json");
        write_json(&path, self)?;
        Ok(path)
    }
}

/// Run `f` over `items` on `jobs` threads, keeping input order.
pub fn parallel_map<T, R, F>(jobs: usize, items: &[T], f: F) -> CliResult<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure::usage(format!("thread pool: {e}")))?;
    Ok(pool.install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()))
}

/// Print to stdout; a closed pipe (`| head`) is not an error.
pub fn stdout(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}
