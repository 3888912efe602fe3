//! Dense diagonalization of charge-basis operators.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::evd::{self, ComputeEigenvectors};
use faer::{c64, Mat, MatRef, Par};

use crate::circuit::{build_d_flux, build_d_ng, build_hamiltonian, ChargeOperator, CircuitSpec};
use crate::error::{Error, Result};

/// Default relative convergence tolerance for [`converged_solution`].
pub const DEFAULT_TOL: f64 = 1e-10;
/// Number of cutoff doublings attempted before giving up.
pub const MAX_DOUBLINGS: usize = 6;

const HERMITIAN_TOL: f64 = 1e-12;
const TIE_TOL: f64 = 1e-12;
const LEAD_TOL: f64 = 1e-9;

/// Lowest eigenpairs of a charge-basis operator.
///
/// Energies ascend. Each eigenvector's largest-magnitude charge component is
/// real and positive (the lowest such index wins when several magnitudes tie),
/// and exactly degenerate levels are ordered by that component's index.
#[derive(Debug, Clone)]
pub struct EigenSolution {
    energies: Vec<f64>,
    states: Mat<c64>,
    cutoff: usize,
    converged: bool,
}

impl EigenSolution {
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn energy(&self, level: usize) -> f64 {
        self.energies[level]
    }

    /// Eigenvectors as columns, `dim x n_levels`.
    pub fn states(&self) -> MatRef<'_, c64> {
        self.states.as_ref()
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn dim(&self) -> usize {
        2 * self.cutoff + 1
    }

    pub fn n_levels(&self) -> usize {
        self.energies.len()
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// `<v|P|v>` for the reflection `n -> -n`; `+-1` for states of definite
    /// parity about zero charge.
    pub fn reflection_parity(&self, level: usize) -> f64 {
        let d = self.dim();
        let col = self.states.col(level);
        let mut acc = c64::new(0.0, 0.0);
        for i in 0..d {
            acc += col[i].conj() * col[d - 1 - i];
        }
        acc.re
    }
}

/// Full dense eigendecomposition keeping the lowest `n_levels` pairs.
pub fn diagonalize(op: &ChargeOperator, n_levels: usize) -> Result<EigenSolution> {
    let dim = op.dim();
    if n_levels == 0 || n_levels > dim {
        return Err(Error::TooManyLevels { requested: n_levels, available: dim });
    }
    let scale = op.max_abs();
    let deviation = op.hermiticity_deviation();
    if deviation > HERMITIAN_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotHermitian { deviation, scale });
    }

    let (values, vectors) = if op.is_real() {
        let a = Mat::<f64>::from_fn(dim, dim, |i, j| op.entries()[(i, j)].re);
        let (s, u) = self_adjoint_evd(a.as_ref())?;
        (s, Mat::<c64>::from_fn(dim, dim, |i, j| c64::new(u[(i, j)], 0.0)))
    } else {
        let (s, u) = self_adjoint_evd(op.entries())?;
        (s, u)
    };

    // Retain a little past n_levels so a degenerate group on the boundary is
    // ordered as a whole before truncation.
    let tie = TIE_TOL * scale.max(1.0);
    let mut end = n_levels;
    while end < dim && values[end] - values[n_levels - 1] <= tie {
        end += 1;
    }

    let leads: Vec<usize> = (0..end).map(|k| lead_index(vectors.col(k))).collect();
    let mut order: Vec<usize> = (0..end).collect();
    let mut start = 0;
    while start < end {
        let mut stop = start + 1;
        while stop < end && values[stop] - values[stop - 1] <= tie {
            stop += 1;
        }
        order[start..stop].sort_by_key(|&k| leads[k]);
        start = stop;
    }
    order.truncate(n_levels);

    let mut states = Mat::<c64>::zeros(dim, n_levels);
    let mut energies = Vec::with_capacity(n_levels);
    for (col, &k) in order.iter().enumerate() {
        energies.push(values[k]);
        let lead = vectors[(leads[k], k)];
        let phase = lead.conj() / lead.norm();
        for i in 0..dim {
            states[(i, col)] = vectors[(i, k)] * phase;
        }
        states[(leads[k], col)] = c64::new(lead.norm(), 0.0);
    }
    Ok(EigenSolution { energies, states, cutoff: op.cutoff(), converged: true })
}

fn lead_index(col: faer::ColRef<'_, c64>) -> usize {
    let max = col.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    col.iter().position(|z| z.norm() >= (1.0 - LEAD_TOL) * max).unwrap_or(0)
}

trait EvdScalar: faer::traits::ComplexField {
    fn re(&self) -> f64;
}

impl EvdScalar for f64 {
    fn re(&self) -> f64 {
        *self
    }
}

impl EvdScalar for c64 {
    fn re(&self) -> f64 {
        self.re
    }
}

/// Sequential self-adjoint EVD, ascending eigenvalues.
fn self_adjoint_evd<T: EvdScalar>(a: MatRef<'_, T>) -> Result<(Vec<f64>, Mat<T>)> {
    let n = a.nrows();
    let par = Par::Seq;
    let mut s = faer::diag::Diag::<T>::zeros(n);
    let mut u = Mat::<T>::zeros(n, n);
    let scratch = evd::self_adjoint_evd_scratch::<T>(n, ComputeEigenvectors::Yes, par, Default::default());
    evd::self_adjoint_evd(
        a,
        s.as_mut(),
        Some(u.as_mut()),
        par,
        MemStack::new(&mut MemBuffer::new(scratch)),
        Default::default(),
    )
    .map_err(|e| Error::Eigensolver { dim: n, reason: format!("{e:?}") })?;
    let values = (0..n).map(|i| s.column_vector()[i].re()).collect();
    Ok((values, u))
}

/// Starting charge cutoff for [`converged_solution`].
///
/// Scales with the classical charge excursion `sqrt(depth / E_C)` and leaves
/// room for a few bands of the widest harmonic.
pub fn initial_cutoff(spec: &CircuitSpec, n_levels: usize) -> usize {
    let k = spec.max_harmonic();
    let excursion = (3.0 * (spec.potential_depth() / spec.ec).sqrt()).ceil() as usize;
    (excursion + 2 * k).max(2 * k).max(n_levels.div_ceil(2))
}

/// Diagonalizes with doubling cutoffs until the lowest `n_levels` energies
/// move by less than `tol` times their span `E_{n-1} - E_0`.
///
/// Returns the smaller cutoff of the first converged pair, or the last
/// attempt with `converged() == false` after [`MAX_DOUBLINGS`] doublings.
/// With a single level the span falls back to `E_C`.
pub fn converged_solution(spec: &CircuitSpec, n_levels: usize, tol: f64) -> Result<EigenSolution> {
    if !(tol > 0.0) {
        return Err(Error::param("tol", format!("must be positive, got {tol}")));
    }
    spec.validate()?;
    // Solving in units of E_C keeps eigenvectors independent of the overall energy scale.
    let unit = CircuitSpec { ej_n: spec.ej_n / spec.ec, ej_m: spec.ej_m / spec.ec, ec: 1.0, ..*spec };
    let solve = |cutoff: usize| -> Result<EigenSolution> {
        let mut sol = diagonalize(&build_hamiltonian(&unit, cutoff)?, n_levels)?;
        sol.energies.iter_mut().for_each(|e| *e *= spec.ec);
        Ok(sol)
    };
    let mut cutoff = initial_cutoff(spec, n_levels);
    let mut current = solve(cutoff)?;
    for _ in 0..MAX_DOUBLINGS {
        cutoff *= 2;
        let next = solve(cutoff)?;
        let e = current.energies();
        let span = if n_levels > 1 { e[n_levels - 1] - e[0] } else { 0.0 };
        let scale = if span > 0.0 { span } else { spec.ec };
        let change = e.iter().zip(next.energies()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if change <= tol * scale {
            current.converged = true;
            return Ok(current);
        }
        current = next;
    }
    current.converged = false;
    Ok(current)
}

/// Noise channel of a derivative operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    /// `dH / d n_g`.
    Charge,
    /// `dH / d phi_ext`.
    Flux,
}

impl Channel {
    pub fn name(&self) -> &'static str {
        match self {
            Channel::Charge => "charge",
            Channel::Flux => "flux",
        }
    }
}

/// `<u| dH/dlambda |v>` over the lowest `L` eigenstates.
#[derive(Debug, Clone)]
pub struct EigenbasisOperator {
    entries: Mat<c64>,
    channel: Channel,
}

impl EigenbasisOperator {
    pub fn entries(&self) -> MatRef<'_, c64> {
        self.entries.as_ref()
    }

    pub fn get(&self, u: usize, v: usize) -> c64 {
        self.entries[(u, v)]
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn n_levels(&self) -> usize {
        self.entries.nrows()
    }

    pub fn hermiticity_deviation(&self) -> f64 {
        let l = self.n_levels();
        let mut dev = 0.0f64;
        for j in 0..l {
            for i in 0..=j {
                dev = dev.max((self.entries[(i, j)] - self.entries[(j, i)].conj()).norm());
            }
        }
        dev
    }
}

/// Projects a charge-basis operator onto the lowest `n_levels` eigenstates.
pub fn to_eigenbasis(
    d_op: &ChargeOperator,
    sol: &EigenSolution,
    n_levels: usize,
    channel: Channel,
) -> Result<EigenbasisOperator> {
    if d_op.cutoff() != sol.cutoff() {
        return Err(Error::CutoffMismatch { operator: d_op.cutoff(), solution: sol.cutoff() });
    }
    if n_levels == 0 || n_levels > sol.n_levels() {
        return Err(Error::TooManyLevels { requested: n_levels, available: sol.n_levels() });
    }
    let v = sol.states().subcols(0, n_levels);
    let dv = d_op.entries() * v;
    let entries = v.adjoint() * dv;
    Ok(EigenbasisOperator { entries, channel })
}

/// Builds the derivative operator for `channel` at the solution's cutoff and
/// projects it.
pub fn derivative_in_eigenbasis(
    spec: &CircuitSpec,
    sol: &EigenSolution,
    channel: Channel,
    n_levels: usize,
) -> Result<EigenbasisOperator> {
    let op = match channel {
        Channel::Charge => build_d_ng(spec, sol.cutoff())?,
        Channel::Flux => build_d_flux(spec, sol.cutoff())?,
    };
    to_eigenbasis(&op, sol, n_levels, channel)
}
