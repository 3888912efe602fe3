//! Parameter sweeps, charge dispersion, (beta, eta) phase diagrams and the
//! kappa null search for flux matrix elements.

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::circuit::CircuitSpec;
use crate::error::{Error, Result};
use crate::metrics::{Analysis, AnalysisOptions};
use crate::spectral::{converged_solution, Channel};

/// Largest `beta` or `eta` accepted by [`phase_diagram`].
pub const MAX_RATIO: f64 = 500.0;

/// Points on the offset-charge grid used by [`charge_dispersion`].
pub const DISPERSION_POINTS: usize = 41;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepParam {
    Ng,
    PhiExt,
    Kappa,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Ng => "ng",
            SweepParam::PhiExt => "phi_ext",
            SweepParam::Kappa => "kappa",
        }
    }

    pub fn apply(&self, spec: &CircuitSpec, value: f64) -> Result<CircuitSpec> {
        match self {
            SweepParam::Ng => spec.with_ng(value),
            SweepParam::PhiExt => spec.with_phi_ext(value),
            SweepParam::Kappa => spec.with_kappa(value),
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ng" => Ok(SweepParam::Ng),
            "phi_ext" => Ok(SweepParam::PhiExt),
            "kappa" => Ok(SweepParam::Kappa),
            other => Err(Error::param("param", format!("expected ng, phi_ext or kappa, got `{other}`"))),
        }
    }
}

/// Code-space figures of merit at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMetrics {
    pub i1: usize,
    pub i2: usize,
    pub omega01: f64,
    pub alpha_r: f64,
    pub me_charge_01: f64,
    pub me_charge_12: f64,
    pub me_flux_01: f64,
    pub me_flux_12: f64,
}

impl PointMetrics {
    pub fn from_analysis(a: &Analysis) -> Self {
        Self {
            i1: a.code.i1,
            i2: a.code.i2,
            omega01: a.code.omega01,
            alpha_r: a.code.alpha_r,
            me_charge_01: a.me01(Channel::Charge),
            me_charge_12: a.me12(Channel::Charge),
            me_flux_01: a.me01(Channel::Flux),
            me_flux_12: a.me12(Channel::Flux),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub energies: Vec<f64>,
    /// `None` when no code space could be selected at this point.
    pub metrics: Option<PointMetrics>,
    pub cutoff: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub param: SweepParam,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn grid(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    /// `E_{i1} - E_0` at every point for a fixed `i1`.
    pub fn gap(&self, i1: usize) -> Vec<f64> {
        self.points.iter().map(|p| p.energies[i1] - p.energies[0]).collect()
    }
}

/// Checks that a grid is nonempty, finite and strictly monotone.
pub fn check_grid(grid: &[f64], name: &str) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidGrid(format!("{name} grid is empty")));
    }
    if let Some(x) = grid.iter().find(|x| !x.is_finite()) {
        return Err(Error::InvalidGrid(format!("{name} grid contains {x}")));
    }
    if grid.len() > 1 {
        let up = grid[1] > grid[0];
        let ok = grid.windows(2).all(|w| if up { w[1] > w[0] } else { w[1] < w[0] });
        if !ok {
            return Err(Error::InvalidGrid(format!("{name} grid is not strictly monotone")));
        }
    }
    Ok(())
}

/// `n` evenly spaced points from `lo` to `hi`, both included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Converged spectrum and metrics at every grid value of one parameter.
pub fn sweep_parameter(spec: &CircuitSpec, param: SweepParam, grid: &[f64], opts: &AnalysisOptions) -> Result<SweepResult> {
    check_grid(grid, param.name())?;
    let points = grid
        .par_iter()
        .map(|&value| {
            let point = param.apply(spec, value)?;
            let solution = converged_solution(&point, opts.levels, opts.tol)?;
            let energies = solution.energies().to_vec();
            let (cutoff, converged) = (solution.cutoff(), solution.converged());
            let metrics = match Analysis::from_solution(&point, solution, opts) {
                Ok(a) => Some(PointMetrics::from_analysis(&a)),
                Err(Error::CodeSpace { .. }) => None,
                Err(e) => return Err(e),
            };
            Ok(SweepPoint { value, energies, metrics, cutoff, converged })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { param, points })
}

/// Peak-to-peak variation of `omega01` over one period of offset charge,
/// relative to its mean.
///
/// `i1` is chosen once at the spec's own `n_g` and held fixed; if no code
/// space exists there (e.g. free charge) the first excited level is used.
pub fn charge_dispersion(spec: &CircuitSpec, opts: &AnalysisOptions) -> Result<f64> {
    let i1 = match Analysis::new(spec, opts) {
        Ok(a) => a.code.i1,
        Err(Error::CodeSpace { .. }) => 1,
        Err(e) => return Err(e),
    };
    let grid = linspace(spec.ng - 0.5, spec.ng + 0.5, DISPERSION_POINTS);
    let omegas = grid
        .par_iter()
        .map(|&ng| {
            let sol = converged_solution(&spec.with_ng(ng)?, opts.levels, opts.tol)?;
            Ok(sol.energy(i1) - sol.energy(0))
        })
        .collect::<Result<Vec<f64>>>()?;
    let max = omegas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = omegas.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = omegas.iter().sum::<f64>() / omegas.len() as f64;
    Ok((max - min) / mean)
}

/// One `(beta, eta)` cell. Metrics are NaN and the level indices `None` when
/// the cell failed or did not converge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseCell {
    pub beta: f64,
    pub eta: f64,
    pub alpha_r: f64,
    pub me_charge_01: f64,
    pub me_flux_01: f64,
    pub omega01_over_ec: f64,
    pub omega12_over_ec: f64,
    pub i1: Option<usize>,
    pub i2: Option<usize>,
    pub converged: bool,
}

impl PhaseCell {
    fn failed(beta: f64, eta: f64) -> Self {
        Self {
            beta,
            eta,
            alpha_r: f64::NAN,
            me_charge_01: f64::NAN,
            me_flux_01: f64::NAN,
            omega01_over_ec: f64::NAN,
            omega12_over_ec: f64::NAN,
            i1: None,
            i2: None,
            converged: false,
        }
    }

    fn evaluate(n_arm: usize, m_arm: usize, kappa: f64, beta: f64, eta: f64, opts: &AnalysisOptions) -> Self {
        let analysis = CircuitSpec::from_ratios(n_arm, m_arm, beta, eta)
            .and_then(|s| s.with_kappa(kappa))
            .and_then(|s| Analysis::new(&s, opts));
        let a = match analysis {
            Ok(a) if a.solution.converged() => a,
            _ => return Self::failed(beta, eta),
        };
        let ec = a.spec.ec;
        let omega01_over_ec = a.code.omega01 / ec;
        let omega12_over_ec = a.code.omega12(&a.solution) / ec;
        Self {
            beta,
            eta,
            alpha_r: (omega12_over_ec - omega01_over_ec) / omega01_over_ec,
            me_charge_01: a.me01(Channel::Charge),
            me_flux_01: a.me01(Channel::Flux),
            omega01_over_ec,
            omega12_over_ec,
            i1: Some(a.code.i1),
            i2: Some(a.code.i2),
            converged: true,
        }
    }
}

/// Cells stored beta-major: `cells[bi * eta_grid.len() + ej]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDiagram {
    pub n_arm: usize,
    pub m_arm: usize,
    pub kappa: f64,
    pub beta_grid: Vec<f64>,
    pub eta_grid: Vec<f64>,
    pub cells: Vec<PhaseCell>,
}

impl PhaseDiagram {
    pub fn cell(&self, bi: usize, ej: usize) -> &PhaseCell {
        &self.cells[bi * self.eta_grid.len() + ej]
    }

    /// Grid indices of the cell closest to `(beta, eta)`.
    pub fn nearest(&self, beta: f64, eta: f64) -> (usize, usize) {
        let closest = |grid: &[f64], x: f64| {
            (0..grid.len()).min_by(|&a, &b| (grid[a] - x).abs().total_cmp(&(grid[b] - x).abs())).unwrap_or(0)
        };
        (closest(&self.beta_grid, beta), closest(&self.eta_grid, eta))
    }

    /// Four-connected set of cells containing `seed` on which `inside` holds,
    /// in breadth-first order. Empty if the seed itself fails the predicate.
    pub fn connected_region(&self, seed: (usize, usize), inside: impl Fn(&PhaseCell) -> bool) -> Vec<(usize, usize)> {
        let (nb, ne) = (self.beta_grid.len(), self.eta_grid.len());
        if seed.0 >= nb || seed.1 >= ne || !inside(self.cell(seed.0, seed.1)) {
            return Vec::new();
        }
        let mut seen = vec![false; nb * ne];
        let mut queue = VecDeque::from([seed]);
        seen[seed.0 * ne + seed.1] = true;
        let mut region = Vec::new();
        while let Some((b, e)) = queue.pop_front() {
            region.push((b, e));
            let neighbours = [
                (b.wrapping_sub(1), e),
                (b + 1, e),
                (b, e.wrapping_sub(1)),
                (b, e + 1),
            ];
            for (nb_, ne_) in neighbours {
                if nb_ < nb && ne_ < ne && !seen[nb_ * ne + ne_] && inside(self.cell(nb_, ne_)) {
                    seen[nb_ * ne + ne_] = true;
                    queue.push_back((nb_, ne_));
                }
            }
        }
        region
    }
}

fn check_ratio_grid(grid: &[f64], name: &str) -> Result<()> {
    check_grid(grid, name)?;
    if let Some(x) = grid.iter().find(|&&x| !(0.0..=MAX_RATIO).contains(&x)) {
        return Err(Error::InvalidGrid(format!("{name} value {x} outside [0, {MAX_RATIO}]")));
    }
    Ok(())
}

/// Evaluates every `(beta, eta)` cell at `E_C = 1`, `n_g = 0`, `phi_ext = 0`.
pub fn phase_diagram(
    n_arm: usize,
    m_arm: usize,
    kappa: f64,
    beta_grid: &[f64],
    eta_grid: &[f64],
    opts: &AnalysisOptions,
) -> Result<PhaseDiagram> {
    check_ratio_grid(beta_grid, "beta")?;
    check_ratio_grid(eta_grid, "eta")?;
    CircuitSpec::from_ratios(n_arm, m_arm, 1.0, 1.0)?.with_kappa(kappa)?;
    let ne = eta_grid.len();
    let cells = (0..beta_grid.len() * ne)
        .into_par_iter()
        .map(|k| PhaseCell::evaluate(n_arm, m_arm, kappa, beta_grid[k / ne], eta_grid[k % ne], opts))
        .collect();
    Ok(PhaseDiagram {
        n_arm,
        m_arm,
        kappa,
        beta_grid: beta_grid.to_vec(),
        eta_grid: eta_grid.to_vec(),
        cells,
    })
}

/// Result of [`find_kappa_null`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaNull {
    pub kappa: f64,
    /// Normalized flux 0->i1 element at `kappa`.
    pub objective: f64,
}

const COARSE_KAPPA: usize = 11;
const GOLDEN_TOL: f64 = 1e-10;

/// Shunt ratio in `[0, 1]` minimizing the normalized flux 0->1 element.
///
/// The code space is taken from the input spec and held fixed while `kappa`
/// varies. An 11-point scan brackets the minimum, then golden-section search
/// refines it; a minimum on the scan boundary is returned as is.
pub fn find_kappa_null(spec: &CircuitSpec, opts: &AnalysisOptions) -> Result<KappaNull> {
    let code = Analysis::new(spec, opts)?.code;
    let objective = |kappa: f64| -> Result<f64> {
        let a = Analysis::new(&spec.with_kappa(kappa)?, opts)?.with_code(code);
        Ok(a.me01(Channel::Flux))
    };

    let scan = linspace(0.0, 1.0, COARSE_KAPPA)
        .into_par_iter()
        .map(|k| Ok((k, objective(k)?)))
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let best = (0..scan.len()).min_by(|&a, &b| scan[a].1.total_cmp(&scan[b].1)).unwrap_or(0);
    if best == 0 || best == scan.len() - 1 {
        return Ok(KappaNull { kappa: scan[best].0, objective: scan[best].1 });
    }

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (scan[best - 1].0, scan[best + 1].0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (objective(c)?, objective(d)?);
    while b - a > GOLDEN_TOL {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d)?;
        }
    }
    let (kappa, value) = if fc < fd { (c, fc) } else { (d, fd) };
    if value <= scan[best].1 {
        Ok(KappaNull { kappa, objective: value })
    } else {
        Ok(KappaNull { kappa: scan[best].0, objective: scan[best].1 })
    }
}

/// Normalized flux 0->i1 element carrying a phase-independent sign.
///
/// The sign is taken relative to the charge element on the same transition,
/// `Im(F conj(C)) / (|C| omega01)`, so it is unaffected by eigenvector phases
/// and changes sign where the flux element passes through zero.
pub fn signed_flux_01(a: &Analysis) -> f64 {
    let f = a.flux.get(0, a.code.i1);
    let c = a.charge.get(0, a.code.i1);
    (f * c.conj()).im / (c.norm() * a.code.omega01)
}

const NULL_LINE_SAMPLES: usize = 61;
const NULL_LINE_TOL: f64 = 1e-6;

/// Smallest `eta` in `[eta_lo, eta_hi]` at which the flux 0->1 element
/// vanishes for fixed `beta`, or `None` if it keeps one sign.
///
/// Sign changes caused by a jump of the selected `i1` (where the element does
/// not pass through zero) are skipped.
pub fn null_line_eta(
    n_arm: usize,
    m_arm: usize,
    kappa: f64,
    beta: f64,
    eta_range: (f64, f64),
    opts: &AnalysisOptions,
) -> Result<Option<f64>> {
    let (lo, hi) = eta_range;
    if !(lo < hi) || !(lo >= 0.0) {
        return Err(Error::InvalidGrid(format!("eta range ({lo}, {hi}) must satisfy 0 <= lo < hi")));
    }
    let base = CircuitSpec::from_ratios(n_arm, m_arm, beta, lo)?.with_kappa(kappa)?;
    let probe = |eta: f64| -> Result<(f64, usize)> {
        let a = Analysis::new(&CircuitSpec { ej_m: eta, ..base }, opts)?;
        Ok((signed_flux_01(&a), a.code.i1))
    };
    let grid = linspace(lo, hi, NULL_LINE_SAMPLES);
    let samples = grid.par_iter().map(|&eta| probe(eta)).collect::<Result<Vec<_>>>()?;

    for k in 0..grid.len() - 1 {
        let ((s0, i0), (s1, i1)) = (samples[k], samples[k + 1]);
        if s0 == 0.0 {
            return Ok(Some(grid[k]));
        }
        if s0.signum() == s1.signum() || i0 != i1 {
            continue;
        }
        let (mut a, mut b, mut sa) = (grid[k], grid[k + 1], s0);
        while b - a > NULL_LINE_TOL {
            let mid = 0.5 * (a + b);
            let (sm, im) = probe(mid)?;
            if im != i0 {
                break;
            }
            if sm.signum() == sa.signum() {
                a = mid;
                sa = sm;
            } else {
                b = mid;
            }
        }
        if b - a <= NULL_LINE_TOL {
            return Ok(Some(0.5 * (a + b)));
        }
    }
    Ok(None)
}
