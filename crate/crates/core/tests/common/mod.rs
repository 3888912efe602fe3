//! Checks shared by the property suite and the acceptance report. Each
//! returns the worst deviation it saw so callers can compare it with their
//! own tolerance.

#![allow(dead_code)]

use faer::{c64, Mat};
use nmon::dynamics::{simulate, simulate_drive, DriveProtocol, DrivenSystem, InitialState, SimulationOptions};
use nmon::spectral::{converged_solution, initial_cutoff, to_eigenbasis, DEFAULT_TOL};
use nmon::{build_d_flux, build_d_ng, build_hamiltonian, diagonalize, Analysis, AnalysisOptions, Channel, ChargeOperator, CircuitSpec};

pub const LEVELS: usize = 8;

pub fn cutoff_for(spec: &CircuitSpec) -> usize {
    initial_cutoff(spec, LEVELS)
}

fn rel_deviation(op: &ChargeOperator) -> f64 {
    op.hermiticity_deviation() / op.max_abs().max(f64::MIN_POSITIVE)
}

/// Relative anti-Hermitian part of `H`, `dH/dn_g` and `dH/dphi_ext`.
pub fn hermiticity(spec: &CircuitSpec) -> f64 {
    let c = cutoff_for(spec);
    [
        build_hamiltonian(spec, c).unwrap(),
        build_d_ng(spec, c).unwrap(),
        build_d_flux(spec, c).unwrap(),
    ]
    .iter()
    .map(rel_deviation)
    .fold(0.0, f64::max)
}

fn max_diff(a: &ChargeOperator, b: &Mat<c64>) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.dim() {
        for i in 0..a.dim() {
            m = m.max((a.entries()[(i, j)] - b[(i, j)]).norm());
        }
    }
    m
}

/// Analytic `dH/dn_g` and `dH/dphi_ext` against central differences of `H`,
/// relative to the largest entry of the analytic operator.
pub fn derivative_vs_fd(spec: &CircuitSpec, delta: f64) -> f64 {
    let c = cutoff_for(spec);
    let fd = |plus: CircuitSpec, minus: CircuitSpec| {
        let hp = build_hamiltonian(&plus, c).unwrap();
        let hm = build_hamiltonian(&minus, c).unwrap();
        Mat::<c64>::from_fn(hp.dim(), hp.dim(), |i, j| (hp.entries()[(i, j)] - hm.entries()[(i, j)]) / (2.0 * delta))
    };
    let d_ng = build_d_ng(spec, c).unwrap();
    let fd_ng = fd(spec.with_ng(spec.ng + delta).unwrap(), spec.with_ng(spec.ng - delta).unwrap());
    let d_fl = build_d_flux(spec, c).unwrap();
    let fd_fl = fd(spec.with_phi_ext(spec.phi_ext + delta).unwrap(), spec.with_phi_ext(spec.phi_ext - delta).unwrap());
    let e_ng = max_diff(&d_ng, &fd_ng) / d_ng.max_abs().max(f64::MIN_POSITIVE);
    let e_fl = if d_fl.max_abs() > 0.0 { max_diff(&d_fl, &fd_fl) / d_fl.max_abs() } else { max_diff(&d_fl, &fd_fl) };
    e_ng.max(e_fl)
}

/// Eigenvalue central differences against diagonal eigenbasis elements for
/// both channels at a fixed cutoff, relative to the largest diagonal element
/// (or `E_C` when every level is insensitive). Levels closer than
/// `min_gap` to a neighbour are skipped.
pub fn hellmann_feynman(spec: &CircuitSpec, delta: f64) -> f64 {
    let c = cutoff_for(spec);
    let sol = diagonalize(&build_hamiltonian(spec, c).unwrap(), LEVELS + 1).unwrap();
    let e = sol.energies();
    let span = e[LEVELS] - e[0];
    let isolated: Vec<usize> = (0..LEVELS)
        .filter(|&k| {
            let below = if k > 0 { e[k] - e[k - 1] } else { f64::INFINITY };
            let above = e[k + 1] - e[k];
            below.min(above) > 1e-4 * span
        })
        .collect();
    let mut worst = 0.0f64;
    for (channel, shift) in [(Channel::Charge, 0), (Channel::Flux, 1)] {
        let op = match channel {
            Channel::Charge => build_d_ng(spec, c).unwrap(),
            Channel::Flux => build_d_flux(spec, c).unwrap(),
        };
        let table = to_eigenbasis(&op, &sol, LEVELS, channel).unwrap();
        let moved = |d: f64| {
            let s = if shift == 0 { spec.with_ng(spec.ng + d) } else { spec.with_phi_ext(spec.phi_ext + d) }.unwrap();
            diagonalize(&build_hamiltonian(&s, c).unwrap(), LEVELS).unwrap()
        };
        let (p, m) = (moved(delta), moved(-delta));
        let scale = (0..LEVELS).map(|k| table.get(k, k).re.abs()).fold(spec.ec, f64::max);
        for &k in &isolated {
            let fd = (p.energy(k) - m.energy(k)) / (2.0 * delta);
            worst = worst.max((fd - table.get(k, k).re).abs() / scale);
        }
    }
    worst
}

/// Largest change of the lowest levels between two shunt ratios, relative to
/// the level span.
pub fn kappa_invariance(spec: &CircuitSpec, other_kappa: f64) -> f64 {
    let c = cutoff_for(spec);
    let a = diagonalize(&build_hamiltonian(spec, c).unwrap(), LEVELS).unwrap();
    let b = diagonalize(&build_hamiltonian(&spec.with_kappa(other_kappa).unwrap(), c).unwrap(), LEVELS).unwrap();
    let span = (a.energy(LEVELS - 1) - a.energy(0)).max(spec.ec);
    a.energies().iter().zip(b.energies()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / span
}

fn converged_shift(spec: &CircuitSpec, shifted: &CircuitSpec) -> f64 {
    let a = converged_solution(spec, LEVELS, DEFAULT_TOL).unwrap();
    let b = converged_solution(shifted, LEVELS, DEFAULT_TOL).unwrap();
    let span = (a.energy(LEVELS - 1) - a.energy(0)).max(spec.ec);
    a.energies().iter().zip(b.energies()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / span
}

/// Converged spectrum at `n_g` against `n_g + 1`.
pub fn ng_periodicity(spec: &CircuitSpec) -> f64 {
    converged_shift(spec, &spec.with_ng(spec.ng + 1.0).unwrap())
}

/// Converged spectrum at `phi_ext` against `phi_ext + 2 pi`.
pub fn flux_periodicity(spec: &CircuitSpec) -> f64 {
    converged_shift(spec, &spec.with_phi_ext(spec.phi_ext + 2.0 * std::f64::consts::PI).unwrap())
}

/// At `n_g = 0`, `phi_ext = 0`: worst `1 - |parity|` over isolated levels and
/// worst same-parity element (relative to the largest element) for both
/// channels.
pub fn parity_selection(spec: &CircuitSpec) -> f64 {
    let spec = spec.with_ng(0.0).unwrap().with_phi_ext(0.0).unwrap();
    let c = cutoff_for(&spec);
    let sol = diagonalize(&build_hamiltonian(&spec, c).unwrap(), LEVELS + 1).unwrap();
    let e = sol.energies();
    let span = e[LEVELS] - e[0];
    let isolated: Vec<usize> = (0..LEVELS)
        .filter(|&k| {
            let below = if k > 0 { e[k] - e[k - 1] } else { f64::INFINITY };
            below.min(e[k + 1] - e[k]) > 1e-3 * span
        })
        .collect();
    let mut worst = 0.0f64;
    for &k in &isolated {
        worst = worst.max(1.0 - sol.reflection_parity(k).abs());
    }
    for (op, channel) in [(build_d_ng(&spec, c).unwrap(), Channel::Charge), (build_d_flux(&spec, c).unwrap(), Channel::Flux)] {
        let t = to_eigenbasis(&op, &sol, LEVELS, channel).unwrap();
        let scale = (0..LEVELS)
            .flat_map(|u| (0..LEVELS).map(move |v| (u, v)))
            .map(|(u, v)| t.get(u, v).norm())
            .fold(0.0, f64::max);
        if scale == 0.0 {
            continue;
        }
        for &u in &isolated {
            for &v in &isolated {
                if sol.reflection_parity(u) * sol.reflection_parity(v) > 0.0 {
                    worst = worst.max(t.get(u, v).norm() / scale);
                }
            }
        }
    }
    worst
}

/// Scaling every energy by `s`: returns the worst of the relative energy
/// scaling error, the change in `alpha_r` and in normalized elements, and
/// `f64::INFINITY` if the code-space indices moved.
pub fn scale_invariance(spec: &CircuitSpec, s: f64) -> f64 {
    let opts = AnalysisOptions::default();
    let a = Analysis::new(spec, &opts).unwrap();
    let b = Analysis::new(&spec.scaled(s), &opts).unwrap();
    if (a.code.i1, a.code.i2) != (b.code.i1, b.code.i2) {
        return f64::INFINITY;
    }
    let span = a.solution.energy(LEVELS - 1) - a.solution.energy(0);
    let mut worst = 0.0f64;
    for (x, y) in a.solution.energies().iter().zip(b.solution.energies()) {
        worst = worst.max((y - s * x).abs() / (s * span));
    }
    worst = worst.max((a.code.alpha_r - b.code.alpha_r).abs());
    for channel in [Channel::Charge, Channel::Flux] {
        for u in 0..LEVELS {
            for v in 0..LEVELS {
                worst = worst.max((a.normalized(channel, u, v) - b.normalized(channel, u, v)).abs());
            }
        }
    }
    worst
}

pub fn two_level(f0: f64, d: f64) -> DrivenSystem {
    let mut m = Mat::<c64>::zeros(2, 2);
    m[(0, 1)] = c64::new(d, 0.0);
    m[(1, 0)] = c64::new(d, 0.0);
    DrivenSystem::new(vec![0.0, f0], m).unwrap()
}

/// Ladder of `levels` states with nearest- and next-nearest-neighbour
/// couplings, a stand-in for a truncated qubit.
pub fn ladder(levels: usize, f0: f64, anharm: f64, d: f64) -> DrivenSystem {
    let energies = (0..levels).map(|n| n as f64 * f0 + 0.5 * anharm * (n * n.saturating_sub(1)) as f64).collect();
    let mut m = Mat::<c64>::zeros(levels, levels);
    for n in 0..levels {
        m[(n, n)] = c64::new(0.05 * d * n as f64, 0.0);
        if n + 1 < levels {
            let g = c64::new(0.0, d * ((n + 1) as f64).sqrt());
            m[(n, n + 1)] = g;
            m[(n + 1, n)] = g.conj();
        }
        if n + 2 < levels {
            let g = c64::new(0.1 * d, 0.0);
            m[(n, n + 2)] = g;
            m[(n + 2, n)] = g;
        }
    }
    DrivenSystem::new(energies, m).unwrap()
}

/// Maximum norm drift at the default step and the drift ratio after halving
/// the step, on a strongly driven ladder.
pub fn norm_drift_convergence() -> (f64, f64) {
    let sys = ladder(6, 5.0, -0.3, 0.6);
    let p = DriveProtocol::new(0.5, 5.0, 20.0).unwrap();
    let run = |step: Option<f64>| simulate_drive(&sys, &p, &InitialState::Level(0), &SimulationOptions { step, record_every: 1000 }).unwrap();
    let base = run(None);
    let half = run(Some(0.5 * base.step));
    (base.max_norm_drift, base.max_norm_drift / half.max_norm_drift)
}

/// Largest population difference after shifting every energy by `shift`.
pub fn energy_shift_invariance(shift: f64) -> f64 {
    let sys = ladder(5, 4.0, -0.2, 0.3);
    let shifted = DrivenSystem::new(sys.energies().iter().map(|e| e + shift).collect(), sys.coupling().to_owned()).unwrap();
    let p = DriveProtocol::new(0.3, 4.0, 10.0).unwrap();
    let opts = SimulationOptions { step: Some(sys.max_step(4.0)), record_every: 10 };
    let a = simulate_drive(&sys, &p, &InitialState::Level(0), &opts).unwrap();
    let b = simulate_drive(&shifted, &p, &InitialState::Level(0), &opts).unwrap();
    let mut worst = 0.0f64;
    for s in 0..a.times.len() {
        for k in 0..sys.levels() {
            worst = worst.max((a.population(s, k) - b.population(s, k)).abs());
        }
    }
    worst
}

/// Resonant two-level drive: `(estimated, analytic)` population oscillation
/// frequency in GHz. The rotating-wave rate is `d * amplitude`.
pub fn two_level_rabi(f0: f64, d: f64, amplitude: f64, periods: f64) -> (f64, f64) {
    let sys = two_level(f0, d);
    let analytic = d * amplitude;
    let p = DriveProtocol::new(amplitude, f0, periods / analytic).unwrap();
    let every = ((1.0 / (40.0 * f0)) / sys.max_step(f0)).floor().max(1.0) as usize;
    let traj = simulate_drive(&sys, &p, &InitialState::Level(0), &SimulationOptions { step: None, record_every: every }).unwrap();
    let m = nmon::dynamics::rabi_metrics(&traj, 1).unwrap();
    (m.rabi_frequency, analytic)
}

/// Golden-rule check on a two-level system driven by a comb of weak tones
/// centred on resonance. Each tone is simulated alone and the excited
/// populations are summed, which is the phase-averaged ensemble. Returns
/// `(fitted slope, golden-rule rate)` in 1/ns.
pub fn golden_rule(me: f64, amplitude: f64) -> (f64, f64) {
    use std::f64::consts::PI;
    let f0 = 1.0;
    let sys = two_level(f0, me);
    let spacing = 0.002;
    let tones = 201;
    let t_end = 100.0;
    let density = PI * amplitude * amplitude / (2.0 * 2.0 * PI * spacing);
    let rate = nmon::metrics::transition_rate(me, |_| density, 2.0 * PI * f0).unwrap();

    let samples = 11;
    let every = 300;
    let opts = SimulationOptions { step: Some(t_end / (every * (samples - 1)) as f64), record_every: every };
    let mut total = vec![0.0; samples];
    for k in 0..tones {
        let f = f0 + spacing * (k as f64 - (tones / 2) as f64);
        let traj = simulate(&sys, |t| amplitude * (2.0 * PI * f * t).cos(), f, t_end, &InitialState::Level(0), &opts).unwrap();
        for (acc, p) in total.iter_mut().zip(traj.populations(1)) {
            *acc += p;
        }
    }
    // Least-squares slope over the linear regime t in [20, 100] ns.
    let pts: Vec<(f64, f64)> = (2..samples).map(|i| (i as f64 * t_end / (samples - 1) as f64, total[i])).collect();
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / n, sy / n);
    let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (num / den, rate)
}

/// `(13, 2, 140, 55, kappa = 1)` rescaled to a 5.39 GHz qubit, its lowest
/// eight levels and the code space selected before rescaling.
pub fn driven_thirteen_two() -> (DrivenSystem, nmon::CodeSpace) {
    let spec = CircuitSpec::from_ratios(13, 2, 140.0, 55.0).unwrap().with_kappa(1.0).unwrap();
    let a = Analysis::new(&spec, &AnalysisOptions::default()).unwrap();
    let scaled = nmon::metrics::rescale_to_frequency(&spec, &a.code, 5.39).unwrap();
    let b = Analysis::new(&scaled, &AnalysisOptions::default()).unwrap();
    let code = nmon::CodeSpace::from_levels(&b.solution, a.code.i1, a.code.i2).unwrap();
    (DrivenSystem::from_solution(&b.solution, &b.flux, LEVELS).unwrap(), code)
}
