//! Run configuration: a TOML document with one table per concern.
//!
//! ```toml
//! task = "spectrum"
//!
//! [circuit]
//! preset = "nmon"      # nmon | transmon | split-transmon | fluxonium
//! n = 2
//! m = 3
//! beta = 75.0          # or ej_n / ej_m in GHz together with ec
//! eta = 15.0
//!
//! [analysis]
//! rescale_omega01 = 6.08
//!
//! [output]
//! dir = "out/fig2"
//! ```
//!
//! Every key is checked; unknown keys, missing keys and type mismatches are
//! reported with their full dotted path.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::LazyLock;

use nmon::circuit::Preset;
use nmon::sweeps::{linspace, SweepParam};
use nmon::{CircuitSpec, CodeSpaceOptions};
use toml::{Table, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigErrorKind {
    Syntax(String),
    UnknownKey,
    Missing,
    Type { expected: &'static str, found: &'static str },
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub kind: ConfigErrorKind,
}

impl ConfigError {
    fn new(path: impl Into<String>, kind: ConfigErrorKind) -> Self {
        Self { path: path.into(), kind }
    }

    pub fn invalid(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Self::new(path, ConfigErrorKind::Invalid(msg.into()))
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = if self.path.is_empty() { "<root>" } else { &self.path };
        match &self.kind {
            ConfigErrorKind::Syntax(msg) => write!(f, "syntax error: {msg}"),
            ConfigErrorKind::UnknownKey => write!(f, "{at}: unknown key"),
            ConfigErrorKind::Missing => write!(f, "{at}: required key is missing"),
            ConfigErrorKind::Type { expected, found } => write!(f, "{at}: expected {expected}, found {found}"),
            ConfigErrorKind::Invalid(msg) => write!(f, "{at}: {msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Spectrum,
    Sweep,
    PhaseDiagram,
    MatrixElements,
    Rabi,
    KappaNull,
    Threshold,
}

impl Task {
    pub const ALL: [Task; 7] = [
        Task::Spectrum,
        Task::Sweep,
        Task::PhaseDiagram,
        Task::MatrixElements,
        Task::Rabi,
        Task::KappaNull,
        Task::Threshold,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Task::Spectrum => "spectrum",
            Task::Sweep => "sweep",
            Task::PhaseDiagram => "phase-diagram",
            Task::MatrixElements => "matrix-elements",
            Task::Rabi => "rabi",
            Task::KappaNull => "kappa-null",
            Task::Threshold => "threshold",
        }
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Task::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown task `{s}`, expected one of {}", Task::ALL.map(|t| t.name()).join(", ")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn name(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// Circuit energies as given in the file, before presets are expanded.
#[derive(Debug, Clone, PartialEq)]
pub enum CircuitInput {
    NMon { n: usize, m: usize, ej_n: f64, ej_m: f64, ec: f64 },
    Transmon { ej: f64, ec: f64 },
    SplitTransmon { e_sigma: f64, d: f64, ec: f64 },
    Fluxonium { ej_n: f64, ej_m: f64, ec: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CircuitConfig {
    pub input: CircuitInput,
    pub kappa: f64,
    pub ng: f64,
    pub phi_ext: f64,
}

impl CircuitConfig {
    pub fn preset_name(&self) -> &'static str {
        match self.input {
            CircuitInput::NMon { .. } => "nmon",
            CircuitInput::Transmon { .. } => "transmon",
            CircuitInput::SplitTransmon { .. } => "split-transmon",
            CircuitInput::Fluxonium { .. } => "fluxonium",
        }
    }

    pub fn spec(&self) -> nmon::Result<CircuitSpec> {
        let preset = match self.input {
            CircuitInput::NMon { n, m, ej_n, ej_m, ec } => Preset::NMon { n_arm: n, m_arm: m, ej_n, ej_m, ec },
            CircuitInput::Transmon { ej, ec } => Preset::Transmon { ej, ec },
            CircuitInput::SplitTransmon { e_sigma, d, ec } => Preset::SplitTransmon { e_sigma, d, ec },
            CircuitInput::Fluxonium { ej_n, ej_m, ec } => Preset::Fluxonium { ej_n, ej_m, ec },
        };
        preset.build()?.with_kappa(self.kappa)?.with_ng(self.ng)?.with_phi_ext(self.phi_ext)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectBy {
    Charge,
    Flux,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub levels: usize,
    pub l_max: usize,
    pub tol: f64,
    pub me_floor: f64,
    pub select_by: SelectBy,
    /// Forces `i2` instead of the frequency-closest choice.
    pub i2: Option<usize>,
    /// GHz; every energy is rescaled so the qubit sits at this frequency.
    pub rescale_omega01: Option<f64>,
}

impl AnalysisConfig {
    pub fn options(&self) -> nmon::AnalysisOptions {
        nmon::AnalysisOptions {
            levels: self.levels,
            tol: self.tol,
            code: CodeSpaceOptions { l_max: self.l_max, me_floor: self.me_floor },
        }
    }
}

/// Grid either listed or generated.
#[derive(Debug, Clone, PartialEq)]
pub enum Grid {
    Values(Vec<f64>),
    Linspace { start: f64, stop: f64, points: usize, endpoint: bool },
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        match *self {
            Grid::Values(ref v) => v.clone(),
            Grid::Linspace { start, stop, points, endpoint: true } => linspace(start, stop, points),
            Grid::Linspace { start, stop, points, endpoint: false } => {
                (0..points).map(|k| start + (stop - start) * k as f64 / points as f64).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub param: SweepParam,
    pub grid: Grid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDiagramConfig {
    pub beta: Grid,
    pub eta: Grid,
}

/// Time span in ns or in resonant Rabi periods at a reference amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Span {
    Ns(f64),
    Periods(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriveConfig {
    pub amplitude: f64,
    /// GHz; `None` drives at the qubit frequency.
    pub frequency: Option<f64>,
    pub phase: f64,
    pub duration: Span,
    pub ramp_ns: Option<f64>,
    pub step: Option<f64>,
    pub record_every: usize,
    pub initial: usize,
    /// Level whose population is tracked; `None` means the code-space `i1`.
    pub target: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdConfig {
    pub target_pop: f64,
    pub horizon: Span,
    pub reference_amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub circuit: CircuitConfig,
    pub analysis: AnalysisConfig,
    pub sweep: Option<SweepConfig>,
    pub phase_diagram: Option<PhaseDiagramConfig>,
    pub drive: Option<DriveConfig>,
    pub threshold: Option<ThresholdConfig>,
    pub output: OutputConfig,
}

pub const DEFAULT_LEVELS: usize = 8;
pub const DEFAULT_RECORD_EVERY: usize = 8;

static EMPTY: LazyLock<Table> = LazyLock::new(Table::new);

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "string",
        Value::Integer(_) => "integer",
        Value::Float(_) => "float",
        Value::Boolean(_) => "boolean",
        Value::Datetime(_) => "datetime",
        Value::Array(_) => "array",
        Value::Table(_) => "table",
    }
}

/// Read-once view of one table that remembers which keys were consumed.
struct Section<'a> {
    path: String,
    table: &'a Table,
    used: std::cell::RefCell<Vec<&'a str>>,
}

impl<'a> Section<'a> {
    fn new(path: &str, table: &'a Table) -> Self {
        Self { path: path.to_string(), table, used: Default::default() }
    }

    fn key_path(&self, key: &str) -> String {
        if self.path.is_empty() { key.to_string() } else { format!("{}.{key}", self.path) }
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        let (k, v) = self.table.get_key_value(key)?;
        self.used.borrow_mut().push(k.as_str());
        Some(v)
    }

    fn mismatch(&self, key: &str, expected: &'static str, v: &Value) -> ConfigError {
        ConfigError::new(self.key_path(key), ConfigErrorKind::Type { expected, found: type_name(v) })
    }

    fn f64(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Float(x)) => Ok(Some(*x)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(v) => Err(self.mismatch(key, "number", v)),
        }
    }

    fn usize(&self, key: &str) -> Result<Option<usize>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as usize)),
            Some(Value::Integer(i)) => Err(ConfigError::invalid(self.key_path(key), format!("must be nonnegative, got {i}"))),
            Some(v) => Err(self.mismatch(key, "integer", v)),
        }
    }

    fn bool(&self, key: &str) -> Result<Option<bool>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(v) => Err(self.mismatch(key, "boolean", v)),
        }
    }

    fn str(&self, key: &str) -> Result<Option<&'a str>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.as_str())),
            Some(v) => Err(self.mismatch(key, "string", v)),
        }
    }

    fn table(&self, key: &str) -> Result<Option<Section<'a>>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Table(t)) => Ok(Some(Section::new(&self.key_path(key), t))),
            Some(v) => Err(self.mismatch(key, "table", v)),
        }
    }

    fn required<T>(&self, key: &str, v: Option<T>) -> Result<T> {
        v.ok_or_else(|| ConfigError::new(self.key_path(key), ConfigErrorKind::Missing))
    }

    fn finite(&self, key: &str) -> Result<Option<f64>> {
        match self.f64(key)? {
            Some(x) if !x.is_finite() => Err(ConfigError::invalid(self.key_path(key), "must be finite")),
            other => Ok(other),
        }
    }

    fn positive(&self, key: &str) -> Result<Option<f64>> {
        match self.finite(key)? {
            Some(x) if x <= 0.0 => Err(ConfigError::invalid(self.key_path(key), format!("must be positive, got {x}"))),
            other => Ok(other),
        }
    }

    fn nonnegative(&self, key: &str) -> Result<Option<f64>> {
        match self.finite(key)? {
            Some(x) if x < 0.0 => Err(ConfigError::invalid(self.key_path(key), format!("must be nonnegative, got {x}"))),
            other => Ok(other),
        }
    }

    fn finish(self) -> Result<()> {
        let used = self.used.borrow();
        match self.table.keys().find(|k| !used.contains(&k.as_str())) {
            Some(k) => Err(ConfigError::new(self.key_path(k), ConfigErrorKind::UnknownKey)),
            None => Ok(()),
        }
    }
}

fn parse_grid(section: &Section<'_>, key: &str) -> Result<Grid> {
    let path = section.key_path(key);
    let grid = match section.get(key) {
        None => return Err(ConfigError::new(path, ConfigErrorKind::Missing)),
        Some(Value::Array(items)) => {
            let values = items
                .iter()
                .enumerate()
                .map(|(i, v)| match v {
                    Value::Float(x) => Ok(*x),
                    Value::Integer(n) => Ok(*n as f64),
                    other => Err(ConfigError::new(
                        format!("{path}[{i}]"),
                        ConfigErrorKind::Type { expected: "number", found: type_name(other) },
                    )),
                })
                .collect::<Result<Vec<f64>>>()?;
            Grid::Values(values)
        }
        Some(Value::Table(t)) => {
            let s = Section::new(&path, t);
            let start = s.finite("start")?;
            let start = s.required("start", start)?;
            let stop = s.finite("stop")?;
            let stop = s.required("stop", stop)?;
            let points = s.usize("points")?;
            let points = s.required("points", points)?;
            let endpoint = s.bool("endpoint")?.unwrap_or(true);
            s.finish()?;
            if points == 0 {
                return Err(ConfigError::invalid(format!("{path}.points"), "must be at least 1"));
            }
            Grid::Linspace { start, stop, points, endpoint }
        }
        Some(v) => return Err(section.mismatch(key, "array or table", v)),
    };
    nmon::sweeps::check_grid(&grid.values(), key).map_err(|e| ConfigError::invalid(path, e.to_string()))?;
    Ok(grid)
}

fn parse_span(section: &Section<'_>, ns_key: &str, periods_key: &str) -> Result<Option<Span>> {
    let ns = section.positive(ns_key)?;
    let periods = section.positive(periods_key)?;
    match (ns, periods) {
        (Some(_), Some(_)) => Err(ConfigError::invalid(
            section.key_path(periods_key),
            format!("conflicts with {}", section.key_path(ns_key)),
        )),
        (Some(t), None) => Ok(Some(Span::Ns(t))),
        (None, Some(p)) => Ok(Some(Span::Periods(p))),
        (None, None) => Ok(None),
    }
}

/// An energy given directly in GHz or as a ratio to `ec`.
fn energy(s: &Section<'_>, direct: &str, ratio: &str, ec: f64) -> Result<Option<f64>> {
    let d = s.nonnegative(direct)?;
    let r = s.nonnegative(ratio)?;
    match (d, r) {
        (Some(_), Some(_)) => Err(ConfigError::invalid(s.key_path(ratio), format!("conflicts with {}", s.key_path(direct)))),
        (Some(x), None) => Ok(Some(x)),
        (None, Some(x)) => Ok(Some(x * ec)),
        (None, None) => Ok(None),
    }
}

fn parse_circuit(root: &Section<'_>) -> Result<CircuitConfig> {
    let s = root.table("circuit")?;
    let s = root.required("circuit", s)?;
    let preset = s.str("preset")?.unwrap_or("nmon");
    let ec = s.positive("ec")?.unwrap_or(1.0);
    let need = |key: &str, v: Option<f64>| s.required(key, v);
    let input = match preset {
        "nmon" => {
            let n = s.usize("n")?;
            let n = s.required("n", n)?;
            let m = s.usize("m")?;
            let m = s.required("m", m)?;
            for (key, v) in [("n", n), ("m", m)] {
                if v == 0 {
                    return Err(ConfigError::invalid(s.key_path(key), "must be at least 1"));
                }
            }
            let ej_n = need("ej_n", energy(&s, "ej_n", "beta", ec)?)?;
            let ej_m = need("ej_m", energy(&s, "ej_m", "eta", ec)?)?;
            CircuitInput::NMon { n, m, ej_n, ej_m, ec }
        }
        "transmon" => CircuitInput::Transmon { ej: need("ej", energy(&s, "ej", "beta", ec)?)?, ec },
        "split-transmon" => {
            let e_sigma = need("e_sigma", s.nonnegative("e_sigma")?)?;
            let d = s.finite("d")?.unwrap_or(0.0);
            if d.abs() > e_sigma {
                return Err(ConfigError::invalid(s.key_path("d"), format!("|d| = {} exceeds e_sigma = {e_sigma}", d.abs())));
            }
            CircuitInput::SplitTransmon { e_sigma, d, ec }
        }
        "fluxonium" => {
            let ej_n = need("ej_n", energy(&s, "ej_n", "beta", ec)?)?;
            let ej_m = need("ej_m", energy(&s, "ej_m", "eta", ec)?)?;
            CircuitInput::Fluxonium { ej_n, ej_m, ec }
        }
        other => {
            return Err(ConfigError::invalid(
                s.key_path("preset"),
                format!("unknown preset `{other}`, expected nmon, transmon, split-transmon or fluxonium"),
            ))
        }
    };
    let default_kappa = if matches!(input, CircuitInput::Fluxonium { .. }) { 1.0 } else { 0.5 };
    let kappa = s.finite("kappa")?.unwrap_or(default_kappa);
    if !(0.0..=1.0).contains(&kappa) {
        return Err(ConfigError::invalid(s.key_path("kappa"), format!("must lie in [0, 1], got {kappa}")));
    }
    let ng = s.finite("ng")?.unwrap_or(0.0);
    let phi_ext = s.finite("phi_ext")?.unwrap_or(0.0);
    s.finish()?;
    Ok(CircuitConfig { input, kappa, ng, phi_ext })
}

fn parse_analysis(root: &Section<'_>) -> Result<AnalysisConfig> {
    let s = root.table("analysis")?.unwrap_or_else(|| Section::new("analysis", &EMPTY));
    let levels = s.usize("levels")?.unwrap_or(DEFAULT_LEVELS);
    if levels < 3 {
        return Err(ConfigError::invalid(s.key_path("levels"), format!("must be at least 3, got {levels}")));
    }
    let l_max = s.usize("l_max")?.unwrap_or(levels.min(DEFAULT_LEVELS));
    if l_max < 3 || l_max > levels {
        return Err(ConfigError::invalid(s.key_path("l_max"), format!("must lie in 3..={levels}, got {l_max}")));
    }
    let tol = s.positive("tol")?.unwrap_or(nmon::spectral::DEFAULT_TOL);
    let me_floor = s.nonnegative("me_floor")?.unwrap_or(CodeSpaceOptions::default().me_floor);
    let select_by = match s.str("select_by")?.unwrap_or("charge") {
        "charge" => SelectBy::Charge,
        "flux" => SelectBy::Flux,
        other => return Err(ConfigError::invalid(s.key_path("select_by"), format!("expected charge or flux, got `{other}`"))),
    };
    let i2 = s.usize("i2")?;
    if let Some(i2) = i2 {
        if i2 == 0 || i2 >= levels {
            return Err(ConfigError::invalid(s.key_path("i2"), format!("must lie in 1..{levels}, got {i2}")));
        }
    }
    let rescale_omega01 = s.positive("rescale_omega01")?;
    s.finish()?;
    Ok(AnalysisConfig { levels, l_max, tol, me_floor, select_by, i2, rescale_omega01 })
}

fn parse_sweep(root: &Section<'_>) -> Result<Option<SweepConfig>> {
    let Some(s) = root.table("sweep")? else { return Ok(None) };
    let param = s.str("param")?;
    let param = s.required("param", param)?;
    let param = SweepParam::from_str(param).map_err(|e| ConfigError::invalid(s.key_path("param"), e.to_string()))?;
    let grid = parse_grid(&s, "grid")?;
    if param == SweepParam::Kappa {
        if let Some(k) = grid.values().iter().find(|k| !(0.0..=1.0).contains(*k)) {
            return Err(ConfigError::invalid(s.key_path("grid"), format!("kappa value {k} outside [0, 1]")));
        }
    }
    s.finish()?;
    Ok(Some(SweepConfig { param, grid }))
}

fn parse_phase_diagram(root: &Section<'_>) -> Result<Option<PhaseDiagramConfig>> {
    let Some(s) = root.table("phase_diagram")? else { return Ok(None) };
    let beta = parse_grid(&s, "beta")?;
    let eta = parse_grid(&s, "eta")?;
    for (key, g) in [("beta", &beta), ("eta", &eta)] {
        if let Some(x) = g.values().iter().find(|x| !(0.0..=nmon::sweeps::MAX_RATIO).contains(*x)) {
            return Err(ConfigError::invalid(s.key_path(key), format!("value {x} outside [0, {}]", nmon::sweeps::MAX_RATIO)));
        }
    }
    s.finish()?;
    Ok(Some(PhaseDiagramConfig { beta, eta }))
}

fn parse_drive(root: &Section<'_>, levels: usize) -> Result<Option<DriveConfig>> {
    let Some(s) = root.table("drive")? else { return Ok(None) };
    let amplitude = s.nonnegative("amplitude")?;
    let amplitude = s.required("amplitude", amplitude)?;
    let frequency = s.positive("frequency")?;
    let phase = s.finite("phase")?.unwrap_or(0.0);
    let duration = parse_span(&s, "duration_ns", "duration_periods")?;
    let duration = s.required("duration_ns", duration)?;
    let ramp_ns = s.positive("ramp_ns")?;
    let step = s.positive("step")?;
    let record_every = s.usize("record_every")?.unwrap_or(DEFAULT_RECORD_EVERY);
    if record_every == 0 {
        return Err(ConfigError::invalid(s.key_path("record_every"), "must be at least 1"));
    }
    let initial = s.usize("initial")?.unwrap_or(0);
    let target = s.usize("target")?;
    for (key, v) in [("initial", Some(initial)), ("target", target)] {
        if let Some(v) = v {
            if v >= levels {
                return Err(ConfigError::invalid(s.key_path(key), format!("level {v} outside 0..{levels}")));
            }
        }
    }
    s.finish()?;
    Ok(Some(DriveConfig { amplitude, frequency, phase, duration, ramp_ns, step, record_every, initial, target }))
}

fn parse_threshold(root: &Section<'_>) -> Result<Option<ThresholdConfig>> {
    let Some(s) = root.table("threshold")? else { return Ok(None) };
    let target_pop = s.finite("target_pop")?.unwrap_or(nmon::dynamics::DEFAULT_TARGET_POP);
    if !(0.0..1.0).contains(&target_pop) {
        return Err(ConfigError::invalid(s.key_path("target_pop"), format!("must lie in [0, 1), got {target_pop}")));
    }
    let horizon = parse_span(&s, "horizon_ns", "horizon_periods")?.unwrap_or(Span::Periods(10.0));
    let reference_amplitude = s.positive("reference_amplitude")?.unwrap_or(0.3);
    s.finish()?;
    Ok(Some(ThresholdConfig { target_pop, horizon, reference_amplitude }))
}

fn parse_output(root: &Section<'_>) -> Result<OutputConfig> {
    let s = root.table("output")?.unwrap_or_else(|| Section::new("output", &EMPTY));
    let dir = PathBuf::from(s.str("dir")?.unwrap_or("out"));
    let format = match s.str("format")?.unwrap_or("csv") {
        "csv" => Format::Csv,
        "json" => Format::Json,
        other => return Err(ConfigError::invalid(s.key_path("format"), format!("expected csv or json, got `{other}`"))),
    };
    s.finish()?;
    Ok(OutputConfig { dir, format })
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::new("", ConfigErrorKind::Syntax(e.message().to_string())))?;
    from_table(&table)
}

/// Validates an already parsed document.
pub fn from_table(table: &Table) -> Result<RunConfig> {
    let root = Section::new("", table);
    let task = root.str("task")?;
    let task = root.required("task", task)?;
    let task = Task::from_str(task).map_err(|e| ConfigError::invalid("task", e))?;
    let circuit = parse_circuit(&root)?;
    let analysis = parse_analysis(&root)?;
    let sweep = parse_sweep(&root)?;
    let phase_diagram = parse_phase_diagram(&root)?;
    let drive = parse_drive(&root, analysis.levels)?;
    let threshold = parse_threshold(&root)?;
    let output = parse_output(&root)?;
    root.finish()?;

    let needs = |present: bool, section: &str| {
        if present { Ok(()) } else { Err(ConfigError::new(section, ConfigErrorKind::Missing)) }
    };
    match task {
        Task::Sweep => needs(sweep.is_some(), "sweep")?,
        Task::PhaseDiagram => {
            needs(phase_diagram.is_some(), "phase_diagram")?;
            if !matches!(circuit.input, CircuitInput::NMon { .. }) {
                return Err(ConfigError::invalid("circuit.preset", "phase-diagram requires the nmon preset"));
            }
            if analysis.rescale_omega01.is_some() {
                return Err(ConfigError::invalid("analysis.rescale_omega01", "phase diagrams are dimensionless"));
            }
        }
        Task::Rabi => needs(drive.is_some(), "drive")?,
        Task::Threshold => needs(drive.is_some(), "drive")?,
        Task::Spectrum | Task::MatrixElements | Task::KappaNull => {}
    }
    let config = RunConfig { task, circuit, analysis, sweep, phase_diagram, drive, threshold, output };
    config.circuit.spec().map_err(|e| match e {
        nmon::Error::InvalidParameter { name, reason } => ConfigError::invalid(format!("circuit.{name}"), reason),
        other => ConfigError::invalid("circuit", other.to_string()),
    })?;
    Ok(config)
}

/// Applies a `dotted.key=value` override. The value is read as a TOML value
/// and falls back to a plain string.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::invalid(assignment, "override must look like key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| ConfigError::invalid(key, "empty key"))?;
    let mut cursor = table;
    let mut path = String::new();
    for part in parts {
        if !path.is_empty() {
            path.push('.');
        }
        path.push_str(part);
        let entry = cursor.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cursor = match entry {
            Value::Table(t) => t,
            other => {
                return Err(ConfigError::new(
                    path.clone(),
                    ConfigErrorKind::Type { expected: "table", found: type_name(other) },
                ))
            }
        };
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

fn span_entry(t: &mut Table, ns_key: &str, periods_key: &str, span: Span) {
    match span {
        Span::Ns(x) => t.insert(ns_key.into(), Value::Float(x)),
        Span::Periods(x) => t.insert(periods_key.into(), Value::Float(x)),
    };
}

fn grid_value(g: &Grid) -> Value {
    match g {
        Grid::Values(v) => Value::Array(v.iter().map(|&x| Value::Float(x)).collect()),
        Grid::Linspace { start, stop, points, endpoint } => {
            let mut t = Table::new();
            t.insert("start".into(), Value::Float(*start));
            t.insert("stop".into(), Value::Float(*stop));
            t.insert("points".into(), Value::Integer(*points as i64));
            t.insert("endpoint".into(), Value::Boolean(*endpoint));
            Value::Table(t)
        }
    }
}

impl RunConfig {
    /// Fully resolved document; parsing it yields an identical config.
    pub fn to_table(&self) -> Table {
        let mut root = Table::new();
        root.insert("task".into(), Value::String(self.task.name().into()));

        let mut c = Table::new();
        c.insert("preset".into(), Value::String(self.circuit.preset_name().into()));
        let put = |t: &mut Table, k: &str, v: f64| {
            t.insert(k.into(), Value::Float(v));
        };
        match self.circuit.input {
            CircuitInput::NMon { n, m, ej_n, ej_m, ec } => {
                c.insert("n".into(), Value::Integer(n as i64));
                c.insert("m".into(), Value::Integer(m as i64));
                put(&mut c, "ej_n", ej_n);
                put(&mut c, "ej_m", ej_m);
                put(&mut c, "ec", ec);
            }
            CircuitInput::Transmon { ej, ec } => {
                put(&mut c, "ej", ej);
                put(&mut c, "ec", ec);
            }
            CircuitInput::SplitTransmon { e_sigma, d, ec } => {
                put(&mut c, "e_sigma", e_sigma);
                put(&mut c, "d", d);
                put(&mut c, "ec", ec);
            }
            CircuitInput::Fluxonium { ej_n, ej_m, ec } => {
                put(&mut c, "ej_n", ej_n);
                put(&mut c, "ej_m", ej_m);
                put(&mut c, "ec", ec);
            }
        }
        put(&mut c, "kappa", self.circuit.kappa);
        put(&mut c, "ng", self.circuit.ng);
        put(&mut c, "phi_ext", self.circuit.phi_ext);
        root.insert("circuit".into(), Value::Table(c));

        let a = &self.analysis;
        let mut t = Table::new();
        t.insert("levels".into(), Value::Integer(a.levels as i64));
        t.insert("l_max".into(), Value::Integer(a.l_max as i64));
        put(&mut t, "tol", a.tol);
        put(&mut t, "me_floor", a.me_floor);
        let by = match a.select_by {
            SelectBy::Charge => "charge",
            SelectBy::Flux => "flux",
        };
        t.insert("select_by".into(), Value::String(by.into()));
        if let Some(i2) = a.i2 {
            t.insert("i2".into(), Value::Integer(i2 as i64));
        }
        if let Some(w) = a.rescale_omega01 {
            put(&mut t, "rescale_omega01", w);
        }
        root.insert("analysis".into(), Value::Table(t));

        if let Some(s) = &self.sweep {
            let mut t = Table::new();
            t.insert("param".into(), Value::String(s.param.name().into()));
            t.insert("grid".into(), grid_value(&s.grid));
            root.insert("sweep".into(), Value::Table(t));
        }
        if let Some(p) = &self.phase_diagram {
            let mut t = Table::new();
            t.insert("beta".into(), grid_value(&p.beta));
            t.insert("eta".into(), grid_value(&p.eta));
            root.insert("phase_diagram".into(), Value::Table(t));
        }
        if let Some(d) = &self.drive {
            let mut t = Table::new();
            put(&mut t, "amplitude", d.amplitude);
            if let Some(f) = d.frequency {
                put(&mut t, "frequency", f);
            }
            put(&mut t, "phase", d.phase);
            span_entry(&mut t, "duration_ns", "duration_periods", d.duration);
            if let Some(r) = d.ramp_ns {
                put(&mut t, "ramp_ns", r);
            }
            if let Some(h) = d.step {
                put(&mut t, "step", h);
            }
            t.insert("record_every".into(), Value::Integer(d.record_every as i64));
            t.insert("initial".into(), Value::Integer(d.initial as i64));
            if let Some(k) = d.target {
                t.insert("target".into(), Value::Integer(k as i64));
            }
            root.insert("drive".into(), Value::Table(t));
        }
        if let Some(th) = &self.threshold {
            let mut t = Table::new();
            put(&mut t, "target_pop", th.target_pop);
            span_entry(&mut t, "horizon_ns", "horizon_periods", th.horizon);
            put(&mut t, "reference_amplitude", th.reference_amplitude);
            root.insert("threshold".into(), Value::Table(t));
        }
        let mut o = Table::new();
        o.insert("dir".into(), Value::String(self.output.dir.to_string_lossy().into_owned()));
        o.insert("format".into(), Value::String(self.output.format.name().into()));
        root.insert("output".into(), Value::Table(o));
        root
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_table()).expect("config tables always serialize")
    }
}
