//! One function per task. Each returns the tables to write and a JSON
//! summary that goes into the manifest.

use std::f64::consts::PI;

use nmon::dynamics::{
    inversion_threshold, rabi_horizon, rabi_metrics, simulate_drive, DriveProtocol, DrivenSystem, Envelope,
    InitialState, SimulationOptions, ThresholdQuery,
};
use nmon::metrics::{rescale_to_frequency, select_code_space};
use nmon::spectral::derivative_in_eigenbasis;
use nmon::sweeps::{charge_dispersion, find_kappa_null, linspace, phase_diagram, sweep_parameter, SweepParam};
use nmon::{converged_solution, Analysis, Channel, CircuitSpec, CodeSpace};
use serde_json::{json, Value};

use crate::config::{AnalysisConfig, DriveConfig, RunConfig, SelectBy, Span, Task};
use crate::output::{columns, indexed, Cell, Table};

pub const POTENTIAL_POINTS: usize = 401;
pub const KAPPA_SCAN_POINTS: usize = 101;

#[derive(Debug, Clone)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub results: Value,
    /// Charge cutoffs of every diagonalization, in evaluation order.
    pub cutoffs: Vec<usize>,
    pub spec: CircuitSpec,
}

fn analyze(spec: &CircuitSpec, cfg: &AnalysisConfig, fixed: Option<(usize, usize)>) -> nmon::Result<Analysis> {
    let opts = cfg.options();
    let solution = converged_solution(spec, opts.levels, opts.tol)?;
    let charge = derivative_in_eigenbasis(spec, &solution, Channel::Charge, opts.levels)?;
    let flux = derivative_in_eigenbasis(spec, &solution, Channel::Flux, opts.levels)?;
    let code = match fixed {
        Some((i1, i2)) => CodeSpace::from_levels(&solution, i1, i2)?,
        None => {
            let table = match cfg.select_by {
                SelectBy::Charge => &charge,
                SelectBy::Flux => &flux,
            };
            let code = select_code_space(&solution, table, &opts.code)?;
            match cfg.i2 {
                Some(i2) => CodeSpace::from_levels(&solution, code.i1, i2)?,
                None => code,
            }
        }
    };
    Ok(Analysis { spec: *spec, solution, charge, flux, code })
}

/// Resolved circuit and its analysis, after optional rescaling. The code
/// space is chosen before rescaling and carried over.
fn prepare(config: &RunConfig) -> nmon::Result<Analysis> {
    let spec = config.circuit.spec()?;
    let a = analyze(&spec, &config.analysis, None)?;
    match config.analysis.rescale_omega01 {
        None => Ok(a),
        Some(target) => {
            let scaled = rescale_to_frequency(&spec, &a.code, target)?;
            analyze(&scaled, &config.analysis, Some((a.code.i1, a.code.i2)))
        }
    }
}

fn spec_json(s: &CircuitSpec) -> Value {
    json!({
        "n_arm": s.n_arm, "m_arm": s.m_arm, "ej_n": s.ej_n, "ej_m": s.ej_m, "ec": s.ec,
        "kappa": s.kappa, "ng": s.ng, "phi_ext": s.phi_ext,
    })
}

fn code_json(a: &Analysis) -> Value {
    json!({
        "i0": a.code.i0, "i1": a.code.i1, "i2": a.code.i2,
        "omega01_ghz": a.code.omega01, "omega12_ghz": a.code.omega12(&a.solution), "alpha_r": a.code.alpha_r,
        "me_charge_01": a.me01(Channel::Charge), "me_charge_12": a.me12(Channel::Charge),
        "me_flux_01": a.me01(Channel::Flux), "me_flux_12": a.me12(Channel::Flux),
    })
}

fn finite_or_null(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

pub fn run_task(config: &RunConfig) -> nmon::Result<Outcome> {
    match config.task {
        Task::Spectrum => spectrum(config),
        Task::Sweep => sweep(config),
        Task::PhaseDiagram => diagram(config),
        Task::MatrixElements => matrix_elements(config),
        Task::Rabi => rabi(config),
        Task::KappaNull => kappa_null(config),
        Task::Threshold => threshold(config),
    }
}

fn spectrum(config: &RunConfig) -> nmon::Result<Outcome> {
    let a = prepare(config)?;
    let mut levels = Table::new("spectrum", columns(&["level", "energy_ghz", "parity"]));
    for k in 0..a.solution.n_levels() {
        levels.push(vec![k.into(), a.solution.energy(k).into(), a.solution.reflection_parity(k).into()]);
    }
    let mut potential = Table::new("potential", columns(&["phi", "potential_ghz"]));
    for phi in linspace(-PI, PI, POTENTIAL_POINTS) {
        potential.push(vec![phi.into(), a.spec.potential(phi).into()]);
    }
    let results = json!({ "code_space": code_json(&a), "converged": a.solution.converged() });
    Ok(Outcome { tables: vec![levels, potential], results, cutoffs: vec![a.solution.cutoff()], spec: a.spec })
}

fn sweep(config: &RunConfig) -> nmon::Result<Outcome> {
    let s = config.sweep.as_ref().expect("validated: sweep section present");
    let a = prepare(config)?;
    let opts = config.analysis.options();
    let grid = s.grid.values();
    let result = sweep_parameter(&a.spec, s.param, &grid, &opts)?;
    let n = opts.levels;
    let mut head = columns(&["param_value"]);
    head.extend(indexed("E", n));
    head.extend(columns(&["omega01", "alpha_r", "me_charge_01", "me_flux_01"]));
    let mut table = Table::new("sweep", head);
    for p in &result.points {
        let mut row: Vec<Cell> = vec![p.value.into()];
        row.extend(p.energies.iter().map(|&e| Cell::from(e)));
        match p.metrics {
            Some(m) => row.extend([m.omega01, m.alpha_r, m.me_charge_01, m.me_flux_01].map(Cell::from)),
            None => row.extend([Cell::Empty, Cell::Empty, Cell::Empty, Cell::Empty]),
        }
        table.push(row);
    }
    let unconverged = result.points.iter().filter(|p| !p.converged).count();
    let mut results = json!({
        "param": s.param.name(),
        "points": result.points.len(),
        "unconverged_points": unconverged,
        "missing_code_space": result.points.iter().filter(|p| p.metrics.is_none()).count(),
    });
    if s.param == SweepParam::Ng {
        results["charge_dispersion"] = finite_or_null(charge_dispersion(&a.spec, &opts)?);
    }
    let mut cutoffs = vec![a.solution.cutoff()];
    cutoffs.extend(result.points.iter().map(|p| p.cutoff));
    Ok(Outcome { tables: vec![table], results, cutoffs, spec: a.spec })
}

fn diagram(config: &RunConfig) -> nmon::Result<Outcome> {
    let p = config.phase_diagram.as_ref().expect("validated: phase_diagram section present");
    let spec = config.circuit.spec()?;
    let (betas, etas) = (p.beta.values(), p.eta.values());
    let pd = phase_diagram(spec.n_arm, spec.m_arm, spec.kappa, &betas, &etas, &config.analysis.options())?;
    let head = columns(&[
        "beta",
        "eta",
        "alpha_r",
        "me_charge_01",
        "me_flux_01",
        "omega01_over_ec",
        "i1",
        "i2",
        "converged",
    ]);
    let mut table = Table::new("phase_diagram", head);
    for c in &pd.cells {
        table.push(vec![
            c.beta.into(),
            c.eta.into(),
            c.alpha_r.into(),
            c.me_charge_01.into(),
            c.me_flux_01.into(),
            c.omega01_over_ec.into(),
            c.i1.into(),
            c.i2.into(),
            c.converged.into(),
        ]);
    }
    let (bi, ej) = pd.nearest(spec.beta(), spec.eta());
    let seed = pd.cell(bi, ej);
    let results = json!({
        "cells": pd.cells.len(),
        "converged_cells": pd.cells.iter().filter(|c| c.converged).count(),
        "reference_cell": {
            "beta": seed.beta, "eta": seed.eta, "alpha_r": finite_or_null(seed.alpha_r),
            "me_flux_01": finite_or_null(seed.me_flux_01),
        },
    });
    Ok(Outcome { tables: vec![table], results, cutoffs: Vec::new(), spec })
}

fn matrix_elements(config: &RunConfig) -> nmon::Result<Outcome> {
    let a = prepare(config)?;
    let mut table = Table::new("me_table", columns(&["channel", "i", "j", "abs_value", "normalized"]));
    for channel in [Channel::Charge, Channel::Flux] {
        let bare = a.table(channel, false);
        let norm = a.table(channel, true);
        for (i, j, v) in bare.triplets() {
            table.push(vec![channel.name().into(), i.into(), j.into(), v.into(), norm.get(i, j).into()]);
        }
    }
    let results = json!({ "code_space": code_json(&a) });
    Ok(Outcome { tables: vec![table], results, cutoffs: vec![a.solution.cutoff()], spec: a.spec })
}

struct DriveSetup {
    analysis: Analysis,
    system: DrivenSystem,
    frequency: f64,
    target: usize,
}

fn drive_setup(config: &RunConfig, drive: &DriveConfig) -> nmon::Result<DriveSetup> {
    let analysis = prepare(config)?;
    let system = DrivenSystem::from_solution(&analysis.solution, &analysis.flux, config.analysis.levels)?;
    let frequency = drive.frequency.unwrap_or(analysis.code.omega01);
    let target = drive.target.unwrap_or(analysis.code.i1);
    Ok(DriveSetup { analysis, system, frequency, target })
}

fn span_ns(setup: &DriveSetup, from: usize, amplitude: f64, span: Span) -> nmon::Result<f64> {
    match span {
        Span::Ns(t) => Ok(t),
        Span::Periods(p) => rabi_horizon(&setup.system, from, setup.target, amplitude, p),
    }
}

fn rabi(config: &RunConfig) -> nmon::Result<Outcome> {
    let d = config.drive.as_ref().expect("validated: drive section present");
    let setup = drive_setup(config, d)?;
    let duration = span_ns(&setup, d.initial, d.amplitude, d.duration)?;
    let protocol = DriveProtocol {
        amplitude: d.amplitude,
        frequency: setup.frequency,
        phase: d.phase,
        duration,
        envelope: d.ramp_ns.map_or(Envelope::Constant, |ramp_ns| Envelope::Ramped { ramp_ns }),
    };
    protocol.validate()?;
    let sim = SimulationOptions { step: d.step, record_every: d.record_every };
    let traj = simulate_drive(&setup.system, &protocol, &InitialState::Level(d.initial), &sim)?;

    let levels = traj.levels();
    let mut head = columns(&["t_ns"]);
    head.extend(indexed("pop", levels));
    head.push("norm".into());
    let mut table = Table::new("trajectory", head);
    for (s, &t) in traj.times.iter().enumerate() {
        let mut row: Vec<Cell> = vec![t.into()];
        row.extend((0..levels).map(|k| Cell::from(traj.population(s, k))));
        row.push(traj.norm(s).into());
        table.push(row);
    }
    let metrics = match rabi_metrics(&traj, setup.target) {
        Ok(m) => json!({
            "peak_population": m.peak_population,
            "time_to_peak_ns": m.time_to_peak,
            "rabi_frequency_ghz": m.rabi_frequency,
        }),
        Err(e) => json!({ "unavailable": e.to_string() }),
    };
    let results = json!({
        "code_space": code_json(&setup.analysis),
        "target_level": setup.target,
        "drive_frequency_ghz": setup.frequency,
        "duration_ns": duration,
        "step_ns": traj.step,
        "samples": traj.times.len(),
        "max_norm_drift": traj.max_norm_drift,
        "rabi": metrics,
    });
    Ok(Outcome { tables: vec![table], results, cutoffs: vec![setup.analysis.solution.cutoff()], spec: setup.analysis.spec })
}

fn kappa_null(config: &RunConfig) -> nmon::Result<Outcome> {
    let a = prepare(config)?;
    let opts = config.analysis.options();
    let found = find_kappa_null(&a.spec, &opts)?;
    let scan = sweep_parameter(&a.spec, SweepParam::Kappa, &linspace(0.0, 1.0, KAPPA_SCAN_POINTS), &opts)?;
    let mut table = Table::new("kappa_scan", columns(&["kappa", "me_charge_01", "me_flux_01"]));
    for p in &scan.points {
        match p.metrics {
            Some(m) => table.push(vec![p.value.into(), m.me_charge_01.into(), m.me_flux_01.into()]),
            None => table.push(vec![p.value.into(), Cell::Empty, Cell::Empty]),
        }
    }
    let results = json!({
        "code_space": code_json(&a),
        "kappa_null": found.kappa,
        "me_flux_01_at_null": found.objective,
    });
    let mut cutoffs = vec![a.solution.cutoff()];
    cutoffs.extend(scan.points.iter().map(|p| p.cutoff));
    Ok(Outcome { tables: vec![table], results, cutoffs, spec: a.spec })
}

fn threshold(config: &RunConfig) -> nmon::Result<Outcome> {
    let d = config.drive.as_ref().expect("validated: drive section present");
    let th = config.threshold.clone().unwrap_or(crate::config::ThresholdConfig {
        target_pop: nmon::dynamics::DEFAULT_TARGET_POP,
        horizon: Span::Periods(10.0),
        reference_amplitude: 0.3,
    });
    let setup = drive_setup(config, d)?;
    let horizon = span_ns(&setup, d.initial, th.reference_amplitude, th.horizon)?;
    let query = ThresholdQuery {
        frequency: setup.frequency,
        horizon,
        target_pop: th.target_pop,
        initial: d.initial,
        target: setup.target,
    };
    let sim = SimulationOptions { step: d.step, record_every: d.record_every };
    let amplitude = match inversion_threshold(&setup.system, &query, &sim) {
        Ok(x) => Some(x),
        Err(nmon::Error::Unreachable { .. }) => None,
        Err(e) => return Err(e),
    };
    let mut table = Table::new(
        "threshold",
        columns(&["drive_frequency_ghz", "horizon_ns", "target_pop", "target_level", "reachable", "amplitude"]),
    );
    table.push(vec![
        setup.frequency.into(),
        horizon.into(),
        th.target_pop.into(),
        setup.target.into(),
        amplitude.is_some().into(),
        amplitude.map_or(Cell::Empty, Cell::from),
    ]);
    let results = json!({
        "code_space": code_json(&setup.analysis),
        "horizon_ns": horizon,
        "threshold_amplitude": amplitude,
        "tolerance": nmon::dynamics::THRESHOLD_TOL,
    });
    Ok(Outcome { tables: vec![table], results, cutoffs: vec![setup.analysis.solution.cutoff()], spec: setup.analysis.spec })
}

pub fn spec_value(spec: &CircuitSpec) -> Value {
    spec_json(spec)
}
