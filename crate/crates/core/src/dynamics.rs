//! Flux-driven coherent dynamics in the truncated eigenbasis.
//!
//! Coefficients evolve in the interaction picture,
//!
//! ```text
//! dc_n/dt = -i 2 pi sum_m D_nm dphi(t) exp(i 2 pi (E_n - E_m) t) c_m
//! ```
//!
//! with energies and `D = dH/dphi_ext` in GHz and `t` in ns, integrated by
//! classic fourth-order Runge-Kutta without renormalization.

use std::f64::consts::PI;

use faer::{c64, Mat, MatRef};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::spectral::{EigenSolution, EigenbasisOperator};

/// Stability bound factor: `step <= 1 / (STEP_FACTOR * fastest frequency)`.
pub const STEP_FACTOR: f64 = 20.0;

/// Norm drift beyond this aborts a simulation.
pub const ABORT_DRIFT: f64 = 1e-4;

/// Default population counted as an inversion.
pub const DEFAULT_TARGET_POP: f64 = 0.95;

/// Amplitude resolution of [`inversion_threshold`].
pub const THRESHOLD_TOL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Envelope {
    Constant,
    /// `sin^2` rise over the first `ramp_ns`.
    Ramped { ramp_ns: f64 },
}

/// `dphi(t) = amplitude * envelope(t) * sin(2 pi frequency t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveProtocol {
    /// Radians of external flux.
    pub amplitude: f64,
    /// GHz.
    pub frequency: f64,
    pub phase: f64,
    /// ns.
    pub duration: f64,
    pub envelope: Envelope,
}

impl DriveProtocol {
    pub fn new(amplitude: f64, frequency: f64, duration: f64) -> Result<Self> {
        let p = Self { amplitude, frequency, phase: 0.0, duration, envelope: Envelope::Constant };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0) || !self.amplitude.is_finite() {
            return Err(Error::param("amplitude", format!("must be finite and nonnegative, got {}", self.amplitude)));
        }
        if !(self.frequency >= 0.0) || !self.frequency.is_finite() {
            return Err(Error::param("frequency", format!("must be finite and nonnegative, got {}", self.frequency)));
        }
        if !self.phase.is_finite() {
            return Err(Error::param("phase", "must be finite"));
        }
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(Error::param("duration", format!("must be positive, got {}", self.duration)));
        }
        if let Envelope::Ramped { ramp_ns } = self.envelope {
            if !(ramp_ns > 0.0) || !ramp_ns.is_finite() {
                return Err(Error::param("ramp_ns", format!("must be positive, got {ramp_ns}")));
            }
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> f64 {
        let env = match self.envelope {
            Envelope::Constant => 1.0,
            Envelope::Ramped { ramp_ns } if t < ramp_ns => (0.5 * PI * t / ramp_ns).sin().powi(2),
            Envelope::Ramped { .. } => 1.0,
        };
        self.amplitude * env * (2.0 * PI * self.frequency * t + self.phase).sin()
    }
}

/// Truncated level structure and drive coupling.
#[derive(Debug, Clone)]
pub struct DrivenSystem {
    energies: Vec<f64>,
    coupling: Mat<c64>,
}

impl DrivenSystem {
    /// `energies` in GHz and a Hermitian `coupling` matrix `<n|dH/dlambda|m>`
    /// in GHz per unit drive.
    pub fn new(energies: Vec<f64>, coupling: Mat<c64>) -> Result<Self> {
        let l = energies.len();
        if l == 0 || coupling.nrows() != l || coupling.ncols() != l {
            return Err(Error::param(
                "coupling",
                format!("must be {l}x{l}, got {}x{}", coupling.nrows(), coupling.ncols()),
            ));
        }
        if energies.iter().any(|e| !e.is_finite()) {
            return Err(Error::param("energies", "must be finite"));
        }
        let mut dev = 0.0f64;
        let mut scale = 0.0f64;
        for j in 0..l {
            for i in 0..l {
                dev = dev.max((coupling[(i, j)] - coupling[(j, i)].conj()).norm());
                scale = scale.max(coupling[(i, j)].norm());
            }
        }
        if dev > 1e-12 * scale.max(1.0) {
            return Err(Error::NotHermitian { deviation: dev, scale });
        }
        Ok(Self { energies, coupling })
    }

    /// Lowest `levels` states of a solution coupled through `flux_op`.
    pub fn from_solution(sol: &EigenSolution, flux_op: &EigenbasisOperator, levels: usize) -> Result<Self> {
        if levels == 0 || levels > sol.n_levels() || levels > flux_op.n_levels() {
            return Err(Error::TooManyLevels {
                requested: levels,
                available: sol.n_levels().min(flux_op.n_levels()),
            });
        }
        let coupling = Mat::<c64>::from_fn(levels, levels, |i, j| flux_op.get(i, j));
        Self::new(sol.energies()[..levels].to_vec(), coupling)
    }

    pub fn levels(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn coupling(&self) -> MatRef<'_, c64> {
        self.coupling.as_ref()
    }

    /// Largest `|E_n - E_m|`, GHz.
    pub fn spread(&self) -> f64 {
        let max = self.energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.energies.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }

    /// Largest stable step for a drive at `frequency` GHz.
    pub fn max_step(&self, frequency: f64) -> f64 {
        let fastest = self.spread().max(frequency.abs());
        if fastest > 0.0 { 1.0 / (STEP_FACTOR * fastest) } else { f64::INFINITY }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Level(usize),
    Amplitudes(Vec<c64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    /// Integration step in ns; `None` uses the stability bound.
    pub step: Option<f64>,
    /// Record every `record_every`-th step (the final time is always kept).
    pub record_every: usize,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self { step: None, record_every: 1 }
    }
}

/// Sampled interaction-picture coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// One row of `levels` coefficients per recorded time.
    pub amplitudes: Vec<Vec<c64>>,
    /// Integration step used, ns.
    pub step: f64,
    /// `max_t |sum |c_n|^2 - 1|` over every integration step.
    pub max_norm_drift: f64,
}

impl Trajectory {
    pub fn levels(&self) -> usize {
        self.amplitudes.first().map_or(0, Vec::len)
    }

    pub fn population(&self, sample: usize, level: usize) -> f64 {
        self.amplitudes[sample][level].norm_sqr()
    }

    pub fn populations(&self, level: usize) -> Vec<f64> {
        self.amplitudes.iter().map(|row| row[level].norm_sqr()).collect()
    }

    pub fn norm(&self, sample: usize) -> f64 {
        self.amplitudes[sample].iter().map(|c| c.norm_sqr()).sum()
    }
}

fn initial_vector(initial: &InitialState, levels: usize) -> Result<Vec<c64>> {
    match initial {
        InitialState::Level(k) if *k < levels => {
            let mut c = vec![c64::new(0.0, 0.0); levels];
            c[*k] = c64::new(1.0, 0.0);
            Ok(c)
        }
        InitialState::Level(k) => Err(Error::param("initial", format!("level {k} outside 0..{levels}"))),
        InitialState::Amplitudes(a) => {
            if a.len() != levels {
                return Err(Error::param("initial", format!("expected {levels} amplitudes, got {}", a.len())));
            }
            let norm: f64 = a.iter().map(|c| c.norm_sqr()).sum();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(Error::param("initial", format!("amplitudes must be normalized, norm {norm}")));
            }
            Ok(a.clone())
        }
    }
}

/// Integrates under an arbitrary real drive `dlambda(t)` for `duration` ns.
///
/// `max_frequency` is the fastest drive component in GHz and enters the
/// step bound.
pub fn simulate(
    system: &DrivenSystem,
    drive: impl Fn(f64) -> f64,
    max_frequency: f64,
    duration: f64,
    initial: &InitialState,
    opts: &SimulationOptions,
) -> Result<Trajectory> {
    let l = system.levels();
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::param("duration", format!("must be positive, got {duration}")));
    }
    if opts.record_every == 0 {
        return Err(Error::param("record_every", "must be at least 1"));
    }
    let bound = system.max_step(max_frequency);
    let target = opts.step.unwrap_or(bound.min(duration));
    if !(target > 0.0) || !target.is_finite() {
        return Err(Error::param("step", format!("must be positive, got {target}")));
    }
    if target > bound * (1.0 + 1e-9) {
        return Err(Error::StepTooLarge { step: target, max: bound });
    }
    let n_steps = (duration / target).ceil() as usize;
    let h = duration / n_steps as f64;

    let mut c = initial_vector(initial, l)?;
    let e = system.energies();
    let d = system.coupling();
    let minus_i_2pi = c64::new(0.0, -2.0 * PI);
    let rhs = |t: f64, c: &[c64], out: &mut [c64]| {
        let s = drive(t);
        for n in 0..l {
            let mut acc = c64::new(0.0, 0.0);
            for m in 0..l {
                let dnm = d[(n, m)];
                if dnm != c64::new(0.0, 0.0) {
                    acc += dnm * c64::cis(2.0 * PI * (e[n] - e[m]) * t) * c[m];
                }
            }
            out[n] = minus_i_2pi * s * acc;
        }
    };

    let mut times = vec![0.0];
    let mut amplitudes = vec![c.clone()];
    let mut max_drift = 0.0f64;
    let zero = c64::new(0.0, 0.0);
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![zero; l], vec![zero; l], vec![zero; l], vec![zero; l], vec![zero; l]);
    for step in 1..=n_steps {
        let t = (step - 1) as f64 * h;
        rhs(t, &c, &mut k1);
        for i in 0..l {
            tmp[i] = c[i] + k1[i] * (0.5 * h);
        }
        rhs(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..l {
            tmp[i] = c[i] + k2[i] * (0.5 * h);
        }
        rhs(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..l {
            tmp[i] = c[i] + k3[i] * h;
        }
        rhs(t + h, &tmp, &mut k4);
        for i in 0..l {
            c[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0);
        }

        let t_new = step as f64 * h;
        let drift = (c.iter().map(|z| z.norm_sqr()).sum::<f64>() - 1.0).abs();
        max_drift = max_drift.max(drift);
        if !(drift <= ABORT_DRIFT) {
            return Err(Error::NormDrift { time: t_new, drift });
        }
        if step % opts.record_every == 0 || step == n_steps {
            times.push(t_new);
            amplitudes.push(c.clone());
        }
    }
    Ok(Trajectory { times, amplitudes, step: h, max_norm_drift: max_drift })
}

/// Integrates under a [`DriveProtocol`].
pub fn simulate_drive(
    system: &DrivenSystem,
    protocol: &DriveProtocol,
    initial: &InitialState,
    opts: &SimulationOptions,
) -> Result<Trajectory> {
    protocol.validate()?;
    simulate(system, |t| protocol.value(t), protocol.frequency, protocol.duration, initial, opts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RabiMetrics {
    pub peak_population: f64,
    pub time_to_peak: f64,
    /// Frequency of the dominant population oscillation, GHz.
    pub rabi_frequency: f64,
}

const FLAT_TOL: f64 = 1e-12;
const MIN_PERIODS: f64 = 1.5;
const ZERO_PAD: usize = 16;

/// Peak population of `target` and the dominant oscillation frequency of its
/// population, located on a zero-padded spectrum and refined by parabolic
/// interpolation. Requires evenly spaced samples apart from a shorter final
/// interval.
pub fn rabi_metrics(traj: &Trajectory, target: usize) -> Result<RabiMetrics> {
    if target >= traj.levels() {
        return Err(Error::param("target", format!("level {target} outside 0..{}", traj.levels())));
    }
    let p = traj.populations(target);
    let (peak_idx, peak) = p.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let time_to_peak = traj.times[peak_idx];
    let min = p.iter().copied().fold(f64::INFINITY, f64::min);
    if peak - min <= FLAT_TOL {
        return Ok(RabiMetrics { peak_population: peak, time_to_peak, rabi_frequency: 0.0 });
    }
    if p.len() < 8 {
        return Err(Error::TrajectoryTooShort(format!("only {} samples", p.len())));
    }

    // The final time is always recorded, so only the last interval may be short.
    let dt = traj.times[1] - traj.times[0];
    let even = |w: &[f64]| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt;
    let gaps = traj.times.len() - 1;
    let n = match traj.times.windows(2).position(|w| !even(w)) {
        None => p.len(),
        Some(i) if i + 1 == gaps && traj.times[gaps] - traj.times[gaps - 1] < dt => p.len() - 1,
        Some(_) => return Err(Error::TrajectoryTooShort("samples are not evenly spaced".into())),
    };
    let p = &p[..n];
    let span = traj.times[n - 1] - traj.times[0];

    let mean = p.iter().sum::<f64>() / p.len() as f64;
    let size = (p.len() * ZERO_PAD).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = p
        .iter()
        .map(|&v| Complex::new(v - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    FftPlanner::new().plan_fft_forward(size).process(&mut buf);
    let mag: Vec<f64> = buf[..size / 2].iter().map(|z| z.norm()).collect();

    // Skip the leakage lobe around zero frequency.
    let mut k = 1;
    while k + 1 < mag.len() && mag[k + 1] < mag[k] {
        k += 1;
    }
    let peak_bin = (k..mag.len() - 1).max_by(|&a, &b| mag[a].total_cmp(&mag[b])).unwrap_or(k);
    let shift = if peak_bin > 0 {
        let (a, b, c) = (mag[peak_bin - 1], mag[peak_bin], mag[peak_bin + 1]);
        let denom = a - 2.0 * b + c;
        if denom != 0.0 { 0.5 * (a - c) / denom } else { 0.0 }
    } else {
        0.0
    };
    let rabi_frequency = (peak_bin as f64 + shift) / (size as f64 * dt);
    if rabi_frequency * span < MIN_PERIODS {
        return Err(Error::TrajectoryTooShort(format!(
            "{span} ns covers {:.2} periods of the {rabi_frequency} GHz oscillation",
            rabi_frequency * span
        )));
    }
    Ok(RabiMetrics { peak_population: peak, time_to_peak, rabi_frequency })
}

/// Horizon of `periods` resonant Rabi periods at `amplitude` for the
/// transition `from -> to`, from the rotating-wave rate `|D| * amplitude`.
pub fn rabi_horizon(system: &DrivenSystem, from: usize, to: usize, amplitude: f64, periods: f64) -> Result<f64> {
    let l = system.levels();
    if from >= l || to >= l {
        return Err(Error::param("level", format!("levels must lie below {l}")));
    }
    let rate = system.coupling()[(from, to)].norm() * amplitude;
    if !(rate > 0.0) {
        return Err(Error::param("amplitude", "transition is not driven"));
    }
    Ok(periods / rate)
}

/// Threshold search problem for [`inversion_threshold`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdQuery {
    pub frequency: f64,
    pub horizon: f64,
    pub target_pop: f64,
    pub initial: usize,
    pub target: usize,
}

/// Amplitude scan spacing used by [`inversion_threshold`] to bracket the
/// threshold before bisection.
pub const THRESHOLD_SCAN: f64 = 0.05;

/// Smallest drive amplitude in `[0, 1]` (to [`THRESHOLD_TOL`]) whose
/// trajectory brings `target` above `target_pop` within the horizon.
///
/// Inversion is not monotone in amplitude (strong drives leak), so the
/// first success on a [`THRESHOLD_SCAN`] grid is bracketed against the scan
/// point below it and refined by bisection.
pub fn inversion_threshold(system: &DrivenSystem, query: &ThresholdQuery, opts: &SimulationOptions) -> Result<f64> {
    if !(query.target_pop < 1.0) || query.target_pop.is_nan() {
        return Err(Error::param("target_pop", format!("must be below 1, got {}", query.target_pop)));
    }
    if query.target_pop <= 0.0 {
        return Ok(0.0);
    }
    let reached = |amplitude: f64| -> Result<bool> {
        let protocol = DriveProtocol::new(amplitude, query.frequency, query.horizon)?;
        let traj = simulate_drive(system, &protocol, &InitialState::Level(query.initial), opts)?;
        if query.target >= traj.levels() {
            return Err(Error::param("target", format!("level {} outside 0..{}", query.target, traj.levels())));
        }
        Ok(traj.populations(query.target).into_iter().fold(0.0, f64::max) >= query.target_pop)
    };
    let steps = (1.0 / THRESHOLD_SCAN).round() as usize;
    let mut bracket = None;
    for k in 1..=steps {
        let a = k as f64 / steps as f64;
        if reached(a)? {
            bracket = Some(((k - 1) as f64 / steps as f64, a));
            break;
        }
    }
    let (mut lo, mut hi) =
        bracket.ok_or(Error::Unreachable { target: query.target_pop, amplitude: 1.0, horizon: query.horizon })?;
    while hi - lo > THRESHOLD_TOL {
        let mid = 0.5 * (lo + hi);
        if reached(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
