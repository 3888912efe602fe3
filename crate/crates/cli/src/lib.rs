//! Configuration, task dispatch and result files for the `nmon` binary.

pub mod config;
pub mod output;
pub mod tasks;

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

pub use config::{apply_override, from_table, parse_config, ConfigError, RunConfig, Task};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),

    #[error("{0}")]
    Numerics(#[from] nmon::Error),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: not a manifest: {reason}", path.display())]
    Manifest { path: PathBuf, reason: String },
}

pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerics(e) if !e.is_input_error() => EXIT_NUMERICAL,
            _ => EXIT_INPUT,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Numerics(e) if e.is_input_error() => "input",
            CliError::Numerics(_) => "numerical",
            CliError::Io { .. } => "io",
            CliError::Manifest { .. } => "manifest",
        }
    }

    /// Machine-readable error record.
    pub fn record(&self) -> Value {
        let mut rec = json!({ "kind": self.kind(), "message": self.to_string(), "exit_code": self.exit_code() });
        if let CliError::Config(e) = self {
            rec["path"] = Value::from(e.path.as_str());
        }
        json!({ "error": rec })
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

/// Loads a config document, or the resolved config stored in a manifest.
pub fn load_table(path: &Path, manifest: bool) -> Result<toml::Table, CliError> {
    let text = read(path)?;
    let text = if manifest {
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Manifest { path: path.to_path_buf(), reason: e.to_string() })?;
        v["config"]
            .as_str()
            .ok_or_else(|| CliError::Manifest { path: path.to_path_buf(), reason: "missing `config` string".into() })?
            .to_string()
    } else {
        text
    };
    text.parse::<toml::Table>().map_err(|e| {
        CliError::Config(ConfigError {
            path: String::new(),
            kind: config::ConfigErrorKind::Syntax(e.message().to_string()),
        })
    })
}

/// Applies overrides in order and validates.
pub fn resolve(mut table: toml::Table, overrides: &[String]) -> Result<RunConfig, CliError> {
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    Ok(from_table(&table)?)
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    pub manifest: Value,
}

/// Runs the configured task and writes its tables plus `manifest.json`.
pub fn execute(config: &RunConfig) -> Result<RunSummary, CliError> {
    let outcome = tasks::run_task(config)?;
    let dir = &config.output.dir;
    output::ensure_dir(dir)?;
    let mut files = Vec::new();
    let mut names = Vec::new();
    for t in &outcome.tables {
        let name = t.file_name(config.output.format);
        files.push(output::write_file(dir, &name, &t.render(config.output.format))?);
        names.push(name);
    }
    let resolved = config.to_table();
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "task": config.task.name(),
        "config": config.to_toml(),
        "resolved": serde_json::to_value(&resolved).expect("toml tables map onto json"),
        "circuit": tasks::spec_value(&outcome.spec),
        "cutoffs": outcome.cutoffs,
        "files": names,
        "results": outcome.results,
    });
    files.push(output::write_file(dir, "manifest.json", &output::pretty(&manifest))?);
    Ok(RunSummary { files, manifest })
}
