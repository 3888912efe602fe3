//! Qubit figures of merit: code space, anharmonicity, matrix elements and
//! noise-induced transition rates.

use std::f64::consts::PI;

use crate::circuit::CircuitSpec;
use crate::error::{Error, Result};
use crate::spectral::{converged_solution, derivative_in_eigenbasis, Channel, EigenSolution, EigenbasisOperator, DEFAULT_TOL};

/// Computational levels `|0>`, `|1>` and the leakage level `|2>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodeSpace {
    pub i0: usize,
    pub i1: usize,
    pub i2: usize,
    /// `E_{i1} - E_0`, GHz.
    pub omega01: f64,
    /// `((E_{i2} - E_{i1}) - omega01) / omega01`.
    pub alpha_r: f64,
}

impl CodeSpace {
    /// Code space with explicitly chosen levels.
    pub fn from_levels(sol: &EigenSolution, i1: usize, i2: usize) -> Result<Self> {
        let n = sol.n_levels();
        if i1 == 0 || i1 >= n {
            return Err(Error::param("i1", format!("must lie in 1..{n}, got {i1}")));
        }
        if i2 == 0 || i2 == i1 || i2 >= n {
            return Err(Error::param("i2", format!("must differ from 0 and {i1} and be below {n}, got {i2}")));
        }
        let omega01 = sol.energy(i1) - sol.energy(0);
        if !(omega01 > 0.0) {
            return Err(Error::CodeSpace { selection: "i1", reason: format!("qubit frequency {omega01} is not positive") });
        }
        let omega12 = sol.energy(i2) - sol.energy(i1);
        Ok(Self { i0: 0, i1, i2, omega01, alpha_r: (omega12 - omega01) / omega01 })
    }

    /// Signed `E_{i2} - E_{i1}`.
    pub fn omega12(&self, sol: &EigenSolution) -> f64 {
        sol.energy(self.i2) - sol.energy(self.i1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodeSpaceOptions {
    /// Only levels below this index are candidates.
    pub l_max: usize,
    /// Candidates whose element (relative to the relevant frequency) does not
    /// exceed this floor are skipped.
    pub me_floor: f64,
}

impl Default for CodeSpaceOptions {
    fn default() -> Self {
        Self { l_max: 8, me_floor: 1e-6 }
    }
}

/// Picks `|1>` as the low level with the largest element to the ground state,
/// then `|2>` as the level whose transition from `|1>` is closest in frequency
/// to `omega01`.
///
/// The selecting table is normally the charge channel; passing a flux-channel
/// table selects by flux elements instead. Equidistant `|2>` candidates are
/// resolved toward the larger element.
pub fn select_code_space(sol: &EigenSolution, table: &EigenbasisOperator, opts: &CodeSpaceOptions) -> Result<CodeSpace> {
    let l_max = opts.l_max;
    if l_max < 3 || l_max > sol.n_levels() || l_max > table.n_levels() {
        return Err(Error::param(
            "l_max",
            format!("must be in 3..={}, got {l_max}", sol.n_levels().min(table.n_levels())),
        ));
    }
    let e = sol.energies();

    let mut i1 = None;
    let mut best = 0.0;
    for n in 1..l_max {
        let me = table.get(0, n).norm();
        let gap = e[n] - e[0];
        if gap > 0.0 && me > opts.me_floor * gap && me > best {
            best = me;
            i1 = Some(n);
        }
    }
    let i1 = i1.ok_or_else(|| Error::CodeSpace {
        selection: "i1",
        reason: format!("no level below {l_max} couples to the ground state above the floor {}", opts.me_floor),
    })?;
    let omega01 = e[i1] - e[0];

    let mut i2: Option<(usize, f64, f64)> = None;
    for n in (1..l_max).filter(|&n| n != i1) {
        let me = table.get(i1, n).norm();
        if me <= opts.me_floor * omega01 {
            continue;
        }
        let detune = ((e[n] - e[i1]).abs() - omega01).abs();
        let better = match i2 {
            None => true,
            Some((_, d, m)) => {
                let tie = 1e-12 * omega01;
                detune < d - tie || ((detune - d).abs() <= tie && me > m)
            }
        };
        if better {
            i2 = Some((n, detune, me));
        }
    }
    let (i2, _, _) = i2.ok_or_else(|| Error::CodeSpace {
        selection: "i2",
        reason: format!("no level below {l_max} couples to level {i1} above the floor {}", opts.me_floor),
    })?;
    CodeSpace::from_levels(sol, i1, i2)
}

/// `((E_{i2} - E_{i1}) - omega01) / omega01` with the sign preserved.
pub fn relative_anharmonicity(sol: &EigenSolution, code: &CodeSpace) -> Result<f64> {
    let omega01 = sol.energy(code.i1) - sol.energy(code.i0);
    if omega01 == 0.0 {
        return Err(Error::param("omega01", "qubit frequency is zero"));
    }
    Ok(((sol.energy(code.i2) - sol.energy(code.i1)) - omega01) / omega01)
}

/// `|<u| dH/dlambda |v>|`, optionally divided by `omega01`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixElementTable {
    pub channel: Channel,
    pub normalized: bool,
    pub omega01: f64,
    size: usize,
    values: Vec<f64>,
}

impl MatrixElementTable {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[u * self.size + v]
    }

    /// Row-major `(u, v, value)` triplets.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.size).flat_map(move |u| (0..self.size).map(move |v| (u, v, self.get(u, v))))
    }
}

pub fn matrix_element_table(op: &EigenbasisOperator, code: &CodeSpace, normalize: bool) -> MatrixElementTable {
    let size = op.n_levels();
    let scale = if normalize { 1.0 / code.omega01 } else { 1.0 };
    let mut values = Vec::with_capacity(size * size);
    for u in 0..size {
        for v in 0..size {
            values.push(op.get(u, v).norm() * scale);
        }
    }
    MatrixElementTable { channel: op.channel(), normalized: normalize, omega01: code.omega01, size, values }
}

/// Golden-rule rate `Gamma = (2 pi me)^2 S(omega)` in 1/ns.
///
/// `me` is a bare matrix element in GHz (energy over h) so `2 pi me` is the
/// coupling in rad/ns. `omega` is an angular frequency in rad/ns and `S` is
/// the two-sided density `int dtau e^{i omega tau} <dl(tau) dl(0)>` with tau
/// in ns.
pub fn transition_rate(me: f64, spectral_density: impl Fn(f64) -> f64, omega: f64) -> Result<f64> {
    if !(me >= 0.0) {
        return Err(Error::param("me", format!("must be nonnegative, got {me}")));
    }
    let s = spectral_density(omega);
    if !(s >= 0.0) {
        return Err(Error::NegativeSpectralDensity { omega, value: s });
    }
    let coupling = 2.0 * PI * me;
    Ok(coupling * coupling * s)
}

/// Scales every energy so the qubit frequency becomes `target` GHz.
pub fn rescale_to_frequency(spec: &CircuitSpec, code: &CodeSpace, target: f64) -> Result<CircuitSpec> {
    if !(target > 0.0) || !target.is_finite() {
        return Err(Error::param("target", format!("must be positive, got {target}")));
    }
    if !(code.omega01 > 0.0) {
        return Err(Error::param("omega01", "qubit frequency must be positive"));
    }
    let scaled = spec.scaled(target / code.omega01);
    scaled.validate()?;
    Ok(scaled)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    /// Tracked levels (tables are this size).
    pub levels: usize,
    pub tol: f64,
    pub code: CodeSpaceOptions,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self { levels: 8, tol: DEFAULT_TOL, code: CodeSpaceOptions::default() }
    }
}

/// Converged spectrum of one circuit together with both derivative channels
/// and its code space.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub spec: CircuitSpec,
    pub solution: EigenSolution,
    pub charge: EigenbasisOperator,
    pub flux: EigenbasisOperator,
    pub code: CodeSpace,
}

impl Analysis {
    pub fn new(spec: &CircuitSpec, opts: &AnalysisOptions) -> Result<Self> {
        let solution = converged_solution(spec, opts.levels, opts.tol)?;
        Self::from_solution(spec, solution, opts)
    }

    pub fn from_solution(spec: &CircuitSpec, solution: EigenSolution, opts: &AnalysisOptions) -> Result<Self> {
        let charge = derivative_in_eigenbasis(spec, &solution, Channel::Charge, opts.levels)?;
        let flux = derivative_in_eigenbasis(spec, &solution, Channel::Flux, opts.levels)?;
        let code = select_code_space(&solution, &charge, &opts.code)?;
        Ok(Self { spec: *spec, solution, charge, flux, code })
    }

    pub fn with_code(mut self, code: CodeSpace) -> Self {
        self.code = code;
        self
    }

    pub fn table(&self, channel: Channel, normalize: bool) -> MatrixElementTable {
        let op = match channel {
            Channel::Charge => &self.charge,
            Channel::Flux => &self.flux,
        };
        matrix_element_table(op, &self.code, normalize)
    }

    /// Normalized `|<0|dH|1>| / omega01` for a channel.
    pub fn me01(&self, channel: Channel) -> f64 {
        self.normalized(channel, self.code.i0, self.code.i1)
    }

    /// Normalized `|<1|dH|2>| / omega01` for a channel.
    pub fn me12(&self, channel: Channel) -> f64 {
        self.normalized(channel, self.code.i1, self.code.i2)
    }

    pub fn normalized(&self, channel: Channel, u: usize, v: usize) -> f64 {
        let op = match channel {
            Channel::Charge => &self.charge,
            Channel::Flux => &self.flux,
        };
        op.get(u, v).norm() / self.code.omega01
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{ChargeOperator, Preset};
    use crate::spectral::{diagonalize, to_eigenbasis};
    use faer::{c64, Mat};

    fn ladder(levels: usize, omega: f64) -> EigenSolution {
        let dim = 2 * levels + 1;
        let m = Mat::<c64>::from_fn(dim, dim, |i, j| if i == j { c64::new(omega * i as f64, 0.0) } else { c64::new(0.0, 0.0) });
        diagonalize(&ChargeOperator::from_matrix(m).unwrap(), levels).unwrap()
    }

    #[test]
    fn harmonic_ladder_has_zero_anharmonicity() {
        let sol = ladder(6, 2.5);
        let code = CodeSpace::from_levels(&sol, 1, 2).unwrap();
        assert_eq!(relative_anharmonicity(&sol, &code).unwrap(), 0.0);
        assert_eq!(code.alpha_r, 0.0);
    }

    #[test]
    fn transmon_code_space_is_ladder() {
        let spec = Preset::Transmon { ej: 113.0, ec: 1.0 }.build().unwrap();
        let a = Analysis::new(&spec, &AnalysisOptions::default()).unwrap();
        assert_eq!((a.code.i0, a.code.i1, a.code.i2), (0, 1, 2));
        assert!(a.code.alpha_r < 0.0);
    }

    #[test]
    fn free_charge_selection_starves() {
        let spec = CircuitSpec::nmon(1, 1, 0.0, 0.0, 1.0).unwrap();
        let sol = converged_solution(&spec, 8, DEFAULT_TOL).unwrap();
        let charge = derivative_in_eigenbasis(&spec, &sol, Channel::Charge, 8).unwrap();
        let err = select_code_space(&sol, &charge, &CodeSpaceOptions::default()).unwrap_err();
        assert!(matches!(err, Error::CodeSpace { selection: "i1", .. }));
    }

    #[test]
    fn forced_levels_validated() {
        let sol = ladder(4, 1.0);
        assert!(CodeSpace::from_levels(&sol, 0, 2).is_err());
        assert!(CodeSpace::from_levels(&sol, 1, 1).is_err());
        assert!(CodeSpace::from_levels(&sol, 1, 4).is_err());
    }

    #[test]
    fn transition_rate_functional_form() {
        assert_eq!(transition_rate(0.3, |_| 0.0, 1.0).unwrap(), 0.0);
        let g1 = transition_rate(0.3, |_| 2.0, 1.0).unwrap();
        let g2 = transition_rate(0.3, |_| 4.0, 1.0).unwrap();
        let g3 = transition_rate(0.6, |_| 2.0, 1.0).unwrap();
        assert!((g2 - 2.0 * g1).abs() < 1e-12 * g1);
        assert!((g3 - 4.0 * g1).abs() < 1e-12 * g1);
        assert!(matches!(transition_rate(0.3, |_| -1.0, 1.0), Err(Error::NegativeSpectralDensity { .. })));
    }

    #[test]
    fn rescale_identity_and_errors() {
        let spec = CircuitSpec::from_ratios(2, 3, 75.0, 15.0).unwrap();
        let a = Analysis::new(&spec, &AnalysisOptions::default()).unwrap();
        let same = rescale_to_frequency(&spec, &a.code, a.code.omega01).unwrap();
        assert_eq!(same, spec);
        assert!(rescale_to_frequency(&spec, &a.code, 0.0).is_err());
        assert!(rescale_to_frequency(&spec, &a.code, -1.0).is_err());
    }

    #[test]
    fn table_normalization() {
        let spec = CircuitSpec::from_ratios(2, 3, 75.0, 15.0).unwrap();
        let a = Analysis::new(&spec, &AnalysisOptions::default()).unwrap();
        let raw = a.table(Channel::Charge, false);
        let norm = a.table(Channel::Charge, true);
        for (u, v, x) in raw.triplets() {
            assert!((norm.get(u, v) - x / a.code.omega01).abs() <= 1e-15 * x.max(1.0));
            assert!((x - raw.get(v, u)).abs() < 1e-10);
        }
        let op = to_eigenbasis(&crate::circuit::build_d_ng(&spec, a.solution.cutoff()).unwrap(), &a.solution, 8, Channel::Charge).unwrap();
        assert!(op.hermiticity_deviation() < 1e-10);
    }
}
