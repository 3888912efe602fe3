use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nmon_cli::{execute, load_table, output, resolve, CliError, RunConfig, Task};

/// Spectra, matrix elements, sweeps and driven dynamics of N-arm qubits.
#[derive(Debug, Parser)]
#[command(name = "nmon", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run whatever task the config names.
    Run(Common),
    /// Lowest levels, parities and the Josephson potential.
    Spectrum(Common),
    /// One parameter swept over a grid.
    Sweep(Common),
    /// Figures of merit over a (beta, eta) grid.
    PhaseDiagram(Common),
    /// Charge and flux matrix-element tables.
    MatrixElements(Common),
    /// Resonant flux-driven trajectory.
    Rabi(Common),
    /// Shunt ratio that minimizes the flux 0-1 element.
    KappaNull(Common),
    /// Smallest drive amplitude that inverts the qubit within a horizon.
    Threshold(Common),
    /// Parse and validate a config, then print it fully resolved.
    Check(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML config file.
    #[arg(short, long, required_unless_present = "manifest")]
    config: Option<PathBuf>,
    /// Rerun the resolved config recorded in a manifest.json.
    #[arg(long, conflicts_with = "config")]
    manifest: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Output format, csv or json (overrides output.format).
    #[arg(long)]
    format: Option<String>,
    /// Override any key, e.g. `--set circuit.kappa=0.3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn load(common: &Common, task: Option<Task>) -> Result<RunConfig, CliError> {
    let (path, is_manifest) = match (&common.config, &common.manifest) {
        (Some(p), _) => (p, false),
        (None, Some(p)) => (p, true),
        (None, None) => unreachable!("clap requires one of --config or --manifest"),
    };
    let table = load_table(path, is_manifest)?;
    let mut overrides = common.set.clone();
    if let Some(task) = task {
        overrides.push(format!("task={}", toml_string(task.name())));
    }
    if let Some(out) = &common.out {
        overrides.push(format!("output.dir={}", toml_string(&out.to_string_lossy())));
    }
    if let Some(f) = &common.format {
        overrides.push(format!("output.format={}", toml_string(f)));
    }
    resolve(table, &overrides)
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("NMON_THREADS") else { return Ok(()) };
    let n: usize = raw.trim().parse().map_err(|_| format!("NMON_THREADS must be a positive integer, got `{raw}`"))?;
    if n == 0 {
        return Err("NMON_THREADS must be at least 1".into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn fail(err: &CliError, out_dir: Option<&PathBuf>) -> ExitCode {
    let record = output::pretty(&err.record());
    eprint!("{record}");
    if let Some(dir) = out_dir {
        if output::ensure_dir(dir).is_ok() {
            let _ = output::write_file(dir, "error.json", &record);
        }
    }
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("{}", output::pretty(&serde_json::json!({ "error": { "kind": "env", "message": msg, "exit_code": 1 } })));
        return ExitCode::from(nmon_cli::EXIT_INPUT as u8);
    }
    let (common, task, check) = match &cli.command {
        Command::Run(c) => (c, None, false),
        Command::Check(c) => (c, None, true),
        Command::Spectrum(c) => (c, Some(Task::Spectrum), false),
        Command::Sweep(c) => (c, Some(Task::Sweep), false),
        Command::PhaseDiagram(c) => (c, Some(Task::PhaseDiagram), false),
        Command::MatrixElements(c) => (c, Some(Task::MatrixElements), false),
        Command::Rabi(c) => (c, Some(Task::Rabi), false),
        Command::KappaNull(c) => (c, Some(Task::KappaNull), false),
        Command::Threshold(c) => (c, Some(Task::Threshold), false),
    };
    let config = match load(common, task) {
        Ok(c) => c,
        Err(e) => return fail(&e, common.out.as_ref()),
    };
    if check {
        print!("{}", config.to_toml());
        return ExitCode::SUCCESS;
    }
    match execute(&config) {
        Ok(summary) => {
            for f in &summary.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e, Some(&config.output.dir)),
    }
}
