//! Circuit parameterization and charge-basis operators.
//!
//! The two-arm Hamiltonian is
//!
//! ```text
//! H = 4 E_C (n + n_g)^2 - N E_J^N cos(M phi - kappa phi_ext / N)
//!                       - M E_J^M cos(N phi + (1 - kappa) phi_ext / M)
//! ```
//!
//! in the gauge where both harmonics are integers, so every cosine becomes a
//! pair of off-diagonal bands in the basis of integer Cooper-pair number
//! `n in [-n_cut, n_cut]`. Energies are frequencies in GHz, phases in radians.

use faer::{c64, Mat, MatRef};

use crate::error::{Error, Result};

/// Full parameterization of an NMon-family circuit.
///
/// Junctions within an arm are identical. `kappa` is the shunt-capacitance
/// ratio that splits the external flux between the two cosine terms; it
/// leaves the spectrum unchanged but moves flux-channel matrix elements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircuitSpec {
    /// Junctions in the first arm (`N`).
    pub n_arm: usize,
    /// Junctions in the second arm (`M`).
    pub m_arm: usize,
    /// Per-junction Josephson energy of the first arm, GHz.
    pub ej_n: f64,
    /// Per-junction Josephson energy of the second arm, GHz.
    pub ej_m: f64,
    /// Effective charging energy, GHz.
    pub ec: f64,
    pub kappa: f64,
    /// Offset charge in Cooper pairs.
    pub ng: f64,
    /// External flux in radians (`2 pi Phi_ext / Phi_0`).
    pub phi_ext: f64,
}

impl CircuitSpec {
    /// Generic NMon with `kappa = 0.5` and the symmetric bias point.
    pub fn nmon(n_arm: usize, m_arm: usize, ej_n: f64, ej_m: f64, ec: f64) -> Result<Self> {
        let spec = Self { n_arm, m_arm, ej_n, ej_m, ec, kappa: 0.5, ng: 0.0, phi_ext: 0.0 };
        spec.validate()?;
        Ok(spec)
    }

    /// Dimensionless form with `E_C = 1`, `beta = E_J^N / E_C`, `eta = E_J^M / E_C`.
    pub fn from_ratios(n_arm: usize, m_arm: usize, beta: f64, eta: f64) -> Result<Self> {
        Self::nmon(n_arm, m_arm, beta, eta, 1.0)
    }

    pub fn with_kappa(mut self, kappa: f64) -> Result<Self> {
        self.kappa = kappa;
        self.validate()?;
        Ok(self)
    }

    pub fn with_ng(mut self, ng: f64) -> Result<Self> {
        self.ng = ng;
        self.validate()?;
        Ok(self)
    }

    pub fn with_phi_ext(mut self, phi_ext: f64) -> Result<Self> {
        self.phi_ext = phi_ext;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_arm == 0 {
            return Err(Error::param("n_arm", "must be at least 1"));
        }
        if self.m_arm == 0 {
            return Err(Error::param("m_arm", "must be at least 1"));
        }
        for (name, value) in [("ej_n", self.ej_n), ("ej_m", self.ej_m)] {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::param(name, format!("must be finite and nonnegative, got {value}")));
            }
        }
        if !self.ec.is_finite() || self.ec <= 0.0 {
            return Err(Error::param("ec", format!("must be finite and positive, got {}", self.ec)));
        }
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(Error::param("kappa", format!("must lie in [0, 1], got {}", self.kappa)));
        }
        if !self.ng.is_finite() {
            return Err(Error::param("ng", "must be finite"));
        }
        if !self.phi_ext.is_finite() {
            return Err(Error::param("phi_ext", "must be finite"));
        }
        Ok(())
    }

    pub fn beta(&self) -> f64 {
        self.ej_n / self.ec
    }

    pub fn eta(&self) -> f64 {
        self.ej_m / self.ec
    }

    /// Largest cosine harmonic, i.e. the widest band in the charge basis.
    pub fn max_harmonic(&self) -> usize {
        self.n_arm.max(self.m_arm)
    }

    /// Multiplies every energy by `s`; `beta` and `eta` are untouched.
    pub fn scaled(&self, s: f64) -> Self {
        Self { ej_n: self.ej_n * s, ej_m: self.ej_m * s, ec: self.ec * s, ..*self }
    }

    /// Depth scale of the Josephson potential, `N E_J^N + M E_J^M`.
    pub fn potential_depth(&self) -> f64 {
        self.n_arm as f64 * self.ej_n + self.m_arm as f64 * self.ej_m
    }

    /// The two cosine terms `-E_J cos(k phi + phi_c)` of the potential.
    pub fn josephson_terms(&self) -> [JosephsonTerm; 2] {
        let n = self.n_arm as f64;
        let m = self.m_arm as f64;
        [
            JosephsonTerm {
                harmonic: self.m_arm,
                amplitude: n * self.ej_n,
                phase: -self.kappa * self.phi_ext / n,
                dphase_dflux: -self.kappa / n,
            },
            JosephsonTerm {
                harmonic: self.n_arm,
                amplitude: m * self.ej_m,
                phase: (1.0 - self.kappa) * self.phi_ext / m,
                dphase_dflux: (1.0 - self.kappa) / m,
            },
        ]
    }

    /// Josephson potential `U(phi)` at a phase value.
    pub fn potential(&self, phi: f64) -> f64 {
        self.josephson_terms()
            .iter()
            .map(|t| -t.amplitude * (t.harmonic as f64 * phi + t.phase).cos())
            .sum()
    }

    fn check_cutoff(&self, cutoff: usize) -> Result<()> {
        let required = self.max_harmonic();
        if cutoff == 0 || cutoff < required {
            return Err(Error::CutoffTooSmall { cutoff, required });
        }
        Ok(())
    }
}

/// One cosine term `-amplitude * cos(harmonic * phi + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JosephsonTerm {
    pub harmonic: usize,
    pub amplitude: f64,
    pub phase: f64,
    /// `d phase / d phi_ext`, fixed by how `kappa` allocates the flux.
    pub dphase_dflux: f64,
}

/// Named circuit families that map onto [`CircuitSpec`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Preset {
    /// Single junction: `N = M = 1`, `ej_m = 0`.
    Transmon { ej: f64, ec: f64 },
    /// Two-junction loop in terms of total energy `e_sigma` and asymmetry `d`.
    SplitTransmon { e_sigma: f64, d: f64, ec: f64 },
    /// Ten-junction array shunting one small junction, `kappa = 1`.
    Fluxonium { ej_n: f64, ej_m: f64, ec: f64 },
    NMon { n_arm: usize, m_arm: usize, ej_n: f64, ej_m: f64, ec: f64 },
}

impl Preset {
    pub const FLUXONIUM_ARRAY: usize = 10;

    pub fn build(&self) -> Result<CircuitSpec> {
        match *self {
            Preset::Transmon { ej, ec } => {
                if ej < 0.0 {
                    return Err(Error::param("ej", format!("must be nonnegative, got {ej}")));
                }
                CircuitSpec::nmon(1, 1, ej, 0.0, ec)
            }
            Preset::SplitTransmon { e_sigma, d, ec } => {
                if !(e_sigma >= 0.0) {
                    return Err(Error::param("e_sigma", format!("must be nonnegative, got {e_sigma}")));
                }
                if d.abs() > e_sigma {
                    return Err(Error::param("d", format!("|d| = {} exceeds e_sigma = {e_sigma}", d.abs())));
                }
                CircuitSpec::nmon(1, 1, 0.5 * (e_sigma + d), 0.5 * (e_sigma - d), ec)
            }
            Preset::Fluxonium { ej_n, ej_m, ec } => {
                CircuitSpec::nmon(Self::FLUXONIUM_ARRAY, 1, ej_n, ej_m, ec)?.with_kappa(1.0)
            }
            Preset::NMon { n_arm, m_arm, ej_n, ej_m, ec } => CircuitSpec::nmon(n_arm, m_arm, ej_n, ej_m, ec),
        }
    }
}

/// Dense Hermitian matrix over the truncated charge basis.
///
/// Row and column `i` correspond to charge `n = i - cutoff`.
#[derive(Debug, Clone)]
pub struct ChargeOperator {
    cutoff: usize,
    entries: Mat<c64>,
}

impl ChargeOperator {
    pub fn zeros(cutoff: usize) -> Self {
        let dim = 2 * cutoff + 1;
        Self { cutoff, entries: Mat::zeros(dim, dim) }
    }

    /// Wraps a square matrix of odd dimension.
    pub fn from_matrix(entries: Mat<c64>) -> Result<Self> {
        let dim = entries.nrows();
        if dim != entries.ncols() || dim % 2 == 0 {
            return Err(Error::param("entries", format!("expected odd square matrix, got {}x{}", dim, entries.ncols())));
        }
        Ok(Self { cutoff: (dim - 1) / 2, entries })
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn dim(&self) -> usize {
        2 * self.cutoff + 1
    }

    pub fn entries(&self) -> MatRef<'_, c64> {
        self.entries.as_ref()
    }

    pub fn into_matrix(self) -> Mat<c64> {
        self.entries
    }

    pub fn charge_of(&self, index: usize) -> i64 {
        index as i64 - self.cutoff as i64
    }

    /// Entry `<n|A|m>` addressed by charge; `None` outside the basis.
    pub fn get(&self, n: i64, m: i64) -> Option<c64> {
        let c = self.cutoff as i64;
        if n.abs() > c || m.abs() > c {
            return None;
        }
        Some(self.entries[((n + c) as usize, (m + c) as usize)])
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        let mut max = 0.0f64;
        for j in 0..self.dim() {
            for i in 0..self.dim() {
                max = max.max(self.entries[(i, j)].norm());
            }
        }
        max
    }

    /// `max |A_ij - conj(A_ji)|`.
    pub fn hermiticity_deviation(&self) -> f64 {
        let mut dev = 0.0f64;
        for j in 0..self.dim() {
            for i in 0..=j {
                dev = dev.max((self.entries[(i, j)] - self.entries[(j, i)].conj()).norm());
            }
        }
        dev
    }

    /// Hermitian to within `rel_tol` of the largest entry.
    pub fn is_hermitian(&self, rel_tol: f64) -> bool {
        self.hermiticity_deviation() <= rel_tol * self.max_abs().max(f64::MIN_POSITIVE)
    }

    /// No entry has a nonzero imaginary part.
    pub fn is_real(&self) -> bool {
        (0..self.dim()).all(|j| (0..self.dim()).all(|i| self.entries[(i, j)].im == 0.0))
    }

    fn add_band(&mut self, offset: usize, value: c64) {
        for i in 0..self.dim().saturating_sub(offset) {
            self.entries[(i, i + offset)] += value;
            self.entries[(i + offset, i)] += value.conj();
        }
    }
}

/// Hamiltonian in the charge basis `[-cutoff, cutoff]`.
pub fn build_hamiltonian(spec: &CircuitSpec, cutoff: usize) -> Result<ChargeOperator> {
    spec.validate()?;
    spec.check_cutoff(cutoff)?;
    let mut op = ChargeOperator::zeros(cutoff);
    for i in 0..op.dim() {
        let q = op.charge_of(i) as f64 + spec.ng;
        op.entries[(i, i)] = c64::new(4.0 * spec.ec * q * q, 0.0);
    }
    for term in spec.josephson_terms() {
        if term.amplitude != 0.0 {
            op.add_band(term.harmonic, c64::from_polar(-0.5 * term.amplitude, term.phase));
        }
    }
    Ok(op)
}

/// `dH / d n_g`, diagonal with entries `8 E_C (n + n_g)`.
pub fn build_d_ng(spec: &CircuitSpec, cutoff: usize) -> Result<ChargeOperator> {
    spec.validate()?;
    spec.check_cutoff(cutoff)?;
    let mut op = ChargeOperator::zeros(cutoff);
    for i in 0..op.dim() {
        let q = op.charge_of(i) as f64 + spec.ng;
        op.entries[(i, i)] = c64::new(8.0 * spec.ec * q, 0.0);
    }
    Ok(op)
}

/// `dH / d phi_ext` per radian of external flux.
pub fn build_d_flux(spec: &CircuitSpec, cutoff: usize) -> Result<ChargeOperator> {
    spec.validate()?;
    spec.check_cutoff(cutoff)?;
    let mut op = ChargeOperator::zeros(cutoff);
    for term in spec.josephson_terms() {
        if term.amplitude != 0.0 && term.dphase_dflux != 0.0 {
            let band = c64::from_polar(-0.5 * term.amplitude, term.phase);
            op.add_band(term.harmonic, band * c64::new(0.0, term.dphase_dflux));
        }
    }
    Ok(op)
}
