//! Mode-indexed quantum state algebra.
//!
//! A [`Mode`] is one occupiable slot of the single-photon field: a spatial
//! region, a path label, and a polarization. Scenes enumerate only the modes
//! a packet can actually reach, so matrices stay small (2 to 8 dimensional
//! for every shipped preset).
//!
//! States are carried either as a [`PureState`] amplitude vector or as a
//! [`DensityMatrix`]. A density matrix additionally tracks `norm_deficit`,
//! the probability absorbed by lossy elements (polarizers); trace plus
//! deficit always accounts for the whole photon.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Tolerance for algebraic identities: norms, traces, Hermiticity,
/// unitarity residuals.
pub const TOL_ALGEBRAIC: f64 = 1e-12;

/// Tolerance for spectral statements: eigenvalues may undershoot zero by
/// this much before a state counts as non-positive.
pub const TOL_SPECTRAL: f64 = 1e-9;

/// Photon polarization along the bench's transverse axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarization {
    H,
    V,
}

impl Polarization {
    /// The orthogonal axis; a half-wave rotation maps one onto the other.
    pub fn flipped(self) -> Self {
        match self {
            Polarization::H => Polarization::V,
            Polarization::V => Polarization::H,
        }
    }
}

impl fmt::Display for Polarization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Polarization::H => write!(f, "H"),
            Polarization::V => write!(f, "V"),
        }
    }
}

impl FromStr for Polarization {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "H" => Ok(Polarization::H),
            "V" => Ok(Polarization::V),
            other => Err(format!("unknown polarization `{other}` (expected H or V)")),
        }
    }
}

/// One occupiable slot of the field: (region, path, polarization).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Mode {
    pub region: String,
    pub path: String,
    pub pol: Polarization,
}

impl Mode {
    pub fn new(
        region: impl Into<String>,
        path: impl Into<String>,
        pol: Polarization,
    ) -> Self {
        Mode {
            region: region.into(),
            path: path.into(),
            pol,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.region, self.path, self.pol)
    }
}

/// Ordered list of distinct modes. The ordering is fixed when the basis is
/// built and indexes every vector and matrix that refers to it.
#[derive(Debug, PartialEq, Eq)]
pub struct ModeBasis {
    modes: Vec<Mode>,
}

impl ModeBasis {
    pub fn new(modes: Vec<Mode>) -> Result<Arc<Self>> {
        if modes.is_empty() {
            return Err(Error::Config("mode basis must not be empty".into()));
        }
        for (i, m) in modes.iter().enumerate() {
            if modes[..i].contains(m) {
                return Err(Error::Config(format!("duplicate mode `{m}` in basis")));
            }
        }
        Ok(Arc::new(ModeBasis { modes }))
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn mode(&self, index: usize) -> &Mode {
        &self.modes[index]
    }

    pub fn index_of(&self, mode: &Mode) -> Option<usize> {
        self.modes.iter().position(|m| m == mode)
    }

    /// Index lookup that reports the missing mode on failure.
    pub fn require(&self, mode: &Mode) -> Result<usize> {
        self.index_of(mode)
            .ok_or_else(|| Error::Config(format!("mode `{mode}` is not in the basis")))
    }
}

fn same_basis(a: &Arc<ModeBasis>, b: &Arc<ModeBasis>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

/// Amplitude vector over a mode basis.
///
/// `sub_normalized` marks states that intentionally carry norm below one
/// (the surviving component after a polarizer); everything else must be
/// normalized to within [`TOL_ALGEBRAIC`].
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    basis: Arc<ModeBasis>,
    amps: DVector<Complex64>,
    sub_normalized: bool,
}

impl PureState {
    pub fn new(basis: Arc<ModeBasis>, amps: Vec<Complex64>) -> Result<Self> {
        Self::build(basis, amps, false)
    }

    /// Accepts any norm in (0, 1]; used for post-loss states.
    pub fn sub_normalized(basis: Arc<ModeBasis>, amps: Vec<Complex64>) -> Result<Self> {
        Self::build(basis, amps, true)
    }

    fn build(basis: Arc<ModeBasis>, amps: Vec<Complex64>, sub: bool) -> Result<Self> {
        if amps.len() != basis.len() {
            return Err(Error::Config(format!(
                "amplitude vector has {} entries for a {}-mode basis",
                amps.len(),
                basis.len()
            )));
        }
        let amps = DVector::from_vec(amps);
        let norm_sqr: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if sub {
            if norm_sqr > 1.0 + TOL_ALGEBRAIC {
                return Err(Error::Config(format!(
                    "sub-normalized state has squared norm {norm_sqr} > 1"
                )));
            }
        } else if (norm_sqr - 1.0).abs() > TOL_ALGEBRAIC {
            return Err(Error::Config(format!(
                "state squared norm {norm_sqr} deviates from 1 beyond {TOL_ALGEBRAIC}"
            )));
        }
        Ok(PureState {
            basis,
            amps,
            sub_normalized: sub,
        })
    }

    pub fn basis(&self) -> &Arc<ModeBasis> {
        &self.basis
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        self.amps.as_slice()
    }

    pub fn is_sub_normalized(&self) -> bool {
        self.sub_normalized
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Outer product |psi><psi|. The density matrix inherits the missing
    /// norm as `norm_deficit`, so trace plus deficit stays exactly one.
    pub fn to_density(&self) -> DensityMatrix {
        let n = self.basis.len();
        let mut m = DMatrix::<Complex64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = self.amps[i] * self.amps[j].conj();
            }
        }
        let deficit = 1.0 - self.norm_sqr();
        DensityMatrix {
            basis: Arc::clone(&self.basis),
            matrix: m,
            norm_deficit: deficit,
        }
    }
}

/// Density operator over a mode basis plus the probability already lost to
/// absorbing elements.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    basis: Arc<ModeBasis>,
    matrix: DMatrix<Complex64>,
    norm_deficit: f64,
}

impl DensityMatrix {
    /// Wraps a matrix without checking the physical invariants; dimension
    /// mismatches are still rejected. Use [`DensityMatrix::validate`] to
    /// audit the result.
    pub fn new(
        basis: Arc<ModeBasis>,
        matrix: DMatrix<Complex64>,
        norm_deficit: f64,
    ) -> Result<Self> {
        if matrix.nrows() != basis.len() || matrix.ncols() != basis.len() {
            return Err(Error::Config(format!(
                "density matrix is {}x{} for a {}-mode basis",
                matrix.nrows(),
                matrix.ncols(),
                basis.len()
            )));
        }
        Ok(DensityMatrix {
            basis,
            matrix,
            norm_deficit,
        })
    }

    pub fn basis(&self) -> &Arc<ModeBasis> {
        &self.basis
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.matrix[(row, col)]
    }

    pub fn norm_deficit(&self) -> f64 {
        self.norm_deficit
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.matrix[(i, i)].re).sum()
    }

    /// Conjugation rho -> U rho U-dagger. Trace, Hermiticity, and the
    /// eigenvalue spectrum are preserved; `norm_deficit` is untouched.
    pub fn apply_unitary(&self, u: &Unitary) -> Result<DensityMatrix> {
        if !same_basis(&self.basis, &u.basis) {
            return Err(Error::Config(
                "unitary and state are indexed by different mode bases".into(),
            ));
        }
        let m = &u.matrix * &self.matrix * u.matrix.adjoint();
        Ok(DensityMatrix {
            basis: Arc::clone(&self.basis),
            matrix: m,
            norm_deficit: self.norm_deficit,
        })
    }

    /// Probability of detecting the photon in `mode`: the corresponding
    /// diagonal entry, clamped to [0, 1] against rounding dust.
    pub fn born_probability(&self, mode: &Mode) -> Result<f64> {
        let idx = self.basis.require(mode)?;
        Ok(self.matrix[(idx, idx)].re.clamp(0.0, 1.0))
    }

    /// Audits the physical invariants and reports every violation found.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let n = self.dim();

        let mut herm = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                let d = (self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm();
                herm = herm.max(d);
            }
        }
        if herm > TOL_ALGEBRAIC {
            violations.push(StateViolation::NotHermitian { magnitude: herm });
        }

        let budget = (self.trace() + self.norm_deficit - 1.0).abs();
        if budget > TOL_ALGEBRAIC {
            violations.push(StateViolation::TraceBudget { magnitude: budget });
        }

        if self.norm_deficit < -TOL_ALGEBRAIC || self.norm_deficit > 1.0 + TOL_ALGEBRAIC {
            violations.push(StateViolation::DeficitRange {
                value: self.norm_deficit,
            });
        }

        let eigs = self.eigenvalues();
        if let Some(min) = eigs.iter().copied().reduce(f64::min) {
            if min < -TOL_SPECTRAL {
                violations.push(StateViolation::NegativeEigenvalue { value: min });
            }
        }

        ValidationReport { violations }
    }

    /// Real eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut eigs: Vec<f64> = self
            .matrix
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        eigs.sort_by(f64::total_cmp);
        eigs
    }
}

/// One failed invariant, with how far off it is.
#[derive(Debug, Clone, PartialEq)]
pub enum StateViolation {
    /// Largest |rho_ij - conj(rho_ji)|.
    NotHermitian { magnitude: f64 },
    /// |trace + norm_deficit - 1|.
    TraceBudget { magnitude: f64 },
    /// Deficit outside [0, 1].
    DeficitRange { value: f64 },
    /// Most negative eigenvalue below the spectral tolerance.
    NegativeEigenvalue { value: f64 },
}

impl fmt::Display for StateViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateViolation::NotHermitian { magnitude } => {
                write!(f, "not Hermitian (max asymmetry {magnitude:e})")
            }
            StateViolation::TraceBudget { magnitude } => {
                write!(f, "trace + deficit deviates from 1 by {magnitude:e}")
            }
            StateViolation::DeficitRange { value } => {
                write!(f, "norm deficit {value} outside [0, 1]")
            }
            StateViolation::NegativeEigenvalue { value } => {
                write!(f, "negative eigenvalue {value:e}")
            }
        }
    }
}

/// Result of [`DensityMatrix::validate`]: empty means every invariant holds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<StateViolation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Unitary operator over a mode basis; `new` rejects matrices whose
/// unitarity residual exceeds [`TOL_ALGEBRAIC`].
#[derive(Debug, Clone, PartialEq)]
pub struct Unitary {
    basis: Arc<ModeBasis>,
    matrix: DMatrix<Complex64>,
}

impl Unitary {
    pub fn new(basis: Arc<ModeBasis>, matrix: DMatrix<Complex64>) -> Result<Self> {
        let n = basis.len();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::Config(format!(
                "unitary is {}x{} for a {}-mode basis",
                matrix.nrows(),
                matrix.ncols(),
                n
            )));
        }
        let residual = {
            let gram = matrix.adjoint() * &matrix;
            let mut worst = 0.0_f64;
            for i in 0..n {
                for j in 0..n {
                    let expect = if i == j {
                        Complex64::new(1.0, 0.0)
                    } else {
                        Complex64::new(0.0, 0.0)
                    };
                    worst = worst.max((gram[(i, j)] - expect).norm());
                }
            }
            worst
        };
        if residual > TOL_ALGEBRAIC {
            return Err(Error::Config(format!(
                "matrix is not unitary (residual {residual:e})"
            )));
        }
        Ok(Unitary { basis, matrix })
    }

    pub fn identity(basis: Arc<ModeBasis>) -> Self {
        let n = basis.len();
        Unitary {
            basis,
            matrix: DMatrix::identity(n, n),
        }
    }

    pub fn basis(&self) -> &Arc<ModeBasis> {
        &self.basis
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    /// Composition `self` after `earlier`.
    pub fn after(&self, earlier: &Unitary) -> Result<Unitary> {
        if !same_basis(&self.basis, &earlier.basis) {
            return Err(Error::Config(
                "cannot compose unitaries over different bases".into(),
            ));
        }
        Ok(Unitary {
            basis: Arc::clone(&self.basis),
            matrix: &self.matrix * &earlier.matrix,
        })
    }
}
