//! Truncated Fock-space states and operators for one and two bosonic modes.
//!
//! All states live on the number basis `|0>..|dim-1>` of a single mode, or on
//! the tensor product of two such spaces. The two-mode index convention is
//! idler-major: the joint basis state `|n_i, n_s>` sits at flat index
//! `n_i * dim + n_s`, so the idler index varies slowest. Every operation in
//! this crate sticks to that ordering.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Default per-mode truncation. The exact source model populates photon
/// numbers up to four, leaving five guard levels for evolution leakage.
pub const DEFAULT_DIM: usize = 10;

/// Hermiticity tolerance for density-matrix validation (elementwise).
pub const HERMITICITY_TOL: f64 = 1e-10;
/// Most negative eigenvalue tolerated in a density matrix.
pub const EIGENVALUE_TOL: f64 = -1e-9;
/// Trace-normalization tolerance for density-matrix validation.
pub const TRACE_TOL: f64 = 1e-10;

/// The two modes of the source: the heralding (idler) mode and the read-out
/// (signal) mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Idler,
    Signal,
}

/// Flat index of `|n_idler, n_signal>` in the idler-major joint basis.
#[inline]
pub(crate) fn joint_index(n_idler: usize, n_signal: usize, dim: usize) -> usize {
    n_idler * dim + n_signal
}

fn check_dim(dim: usize, min: usize) -> Result<()> {
    if dim < min {
        return Err(Error::DimensionTooSmall { got: dim, min });
    }
    Ok(())
}

// ── Pure states ─────────────────────────────────────────────────────────────

/// Normalized pure state of a single mode over number states `|0>..|dim-1>`.
#[derive(Debug, Clone, PartialEq)]
pub struct FockVector {
    amplitudes: DVector<Complex64>,
}

impl FockVector {
    /// Builds a state from raw amplitudes and normalizes it.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        check_dim(amplitudes.len(), 2)?;
        if amplitudes.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(Error::parameter("amplitudes", "non-finite entry"));
        }
        let v = DVector::from_vec(amplitudes);
        let norm = v.norm();
        if norm <= 0.0 {
            return Err(Error::parameter("amplitudes", "zero norm"));
        }
        Ok(Self {
            amplitudes: v.unscale(norm),
        })
    }

    /// The number state `|n>` embedded in a `dim`-level space.
    pub fn basis(n: usize, dim: usize) -> Result<Self> {
        check_dim(dim, 2)?;
        if n >= dim {
            return Err(Error::parameter("n", format!("{n} exceeds truncation {dim}")));
        }
        let mut v = DVector::zeros(dim);
        v[n] = Complex64::ONE;
        Ok(Self { amplitudes: v })
    }

    /// The vacuum state `|0>`.
    pub fn vacuum(dim: usize) -> Result<Self> {
        Self::basis(0, dim)
    }

    /// Coherent state `|alpha>` truncated to `dim` levels and renormalized.
    ///
    /// Amplitudes are `exp(-|alpha|^2/2) alpha^n / sqrt(n!)`. Fails with a
    /// truncation error when the discarded tail carries more than 1e-8 of
    /// the total weight.
    pub fn coherent(alpha: Complex64, dim: usize) -> Result<Self> {
        const TAIL_LIMIT: f64 = 1e-8;
        check_dim(dim, 2)?;
        if !alpha.re.is_finite() || !alpha.im.is_finite() {
            return Err(Error::parameter("alpha", "non-finite"));
        }
        let prefactor = (-alpha.norm_sqr() / 2.0).exp();
        let mut amplitudes = Vec::with_capacity(dim);
        let mut term = Complex64::new(prefactor, 0.0);
        amplitudes.push(term);
        for n in 1..dim {
            term *= alpha / (n as f64).sqrt();
            amplitudes.push(term);
        }
        let kept: f64 = amplitudes.iter().map(|c| c.norm_sqr()).sum();
        let tail = (1.0 - kept).max(0.0);
        if tail > TAIL_LIMIT {
            return Err(Error::TruncationOverflow {
                weight: tail,
                limit: TAIL_LIMIT,
            });
        }
        Self::from_amplitudes(amplitudes)
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitude(&self, n: usize) -> Complex64 {
        self.amplitudes[n]
    }

    pub fn amplitudes(&self) -> &DVector<Complex64> {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    /// Rescales the amplitudes to unit L2 norm.
    pub fn normalize(&mut self) {
        let n = self.amplitudes.norm();
        if n > 0.0 {
            self.amplitudes.unscale_mut(n);
        }
    }

    /// Inner product `<self|other>`.
    pub fn overlap(&self, other: &Self) -> Result<Complex64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    /// Embeds the state in a larger truncation by zero-padding.
    pub fn padded(&self, dim: usize) -> Result<Self> {
        if dim < self.dim() {
            return Err(Error::DimensionTooSmall {
                got: dim,
                min: self.dim(),
            });
        }
        let mut v = DVector::zeros(dim);
        v.rows_mut(0, self.dim()).copy_from(&self.amplitudes);
        Ok(Self { amplitudes: v })
    }

    pub fn mean_photon_number(&self) -> f64 {
        self.amplitudes
            .iter()
            .enumerate()
            .map(|(n, a)| n as f64 * a.norm_sqr())
            .sum()
    }

    /// The projector `|psi><psi|` as a density matrix.
    pub fn to_density(&self) -> DensityMatrix {
        let m = &self.amplitudes * self.amplitudes.adjoint();
        DensityMatrix::from_trusted(self.dim(), 1, m)
    }

    /// Kronecker product `|self> ⊗ |other>` with `self` as the idler factor.
    pub fn tensor(&self, other: &Self) -> Result<TwoModeVector> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        Ok(TwoModeVector {
            dim: self.dim(),
            amplitudes: self.amplitudes.kronecker(&other.amplitudes),
        })
    }
}

/// Pure state of the joint idler-signal space, idler-major flat layout.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoModeVector {
    dim: usize,
    amplitudes: DVector<Complex64>,
}

impl TwoModeVector {
    pub(crate) fn from_raw(dim: usize, amplitudes: DVector<Complex64>) -> Self {
        debug_assert_eq!(amplitudes.len(), dim * dim);
        Self { dim, amplitudes }
    }

    /// Per-mode truncation.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn amplitude(&self, n_idler: usize, n_signal: usize) -> Complex64 {
        self.amplitudes[joint_index(n_idler, n_signal, self.dim)]
    }

    pub fn amplitudes(&self) -> &DVector<Complex64> {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    /// Photon-number distribution of one mode, tracing out the other.
    pub fn mode_marginal(&self, mode: Mode) -> Vec<f64> {
        let mut p = vec![0.0; self.dim];
        for ni in 0..self.dim {
            for ns in 0..self.dim {
                let w = self.amplitudes[joint_index(ni, ns, self.dim)].norm_sqr();
                match mode {
                    Mode::Idler => p[ni] += w,
                    Mode::Signal => p[ns] += w,
                }
            }
        }
        p
    }

    /// The projector `|psi><psi|` as a two-mode density matrix.
    pub fn to_density(&self) -> DensityMatrix {
        let m = &self.amplitudes * self.amplitudes.adjoint();
        DensityMatrix::from_trusted(self.dim, 2, m)
    }
}

// ── Density matrices ────────────────────────────────────────────────────────

/// Hermitian, positive-semidefinite, unit-trace matrix over the Fock basis of
/// one mode or of the idler-signal pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    dim: usize,
    modes: usize,
    elements: DMatrix<Complex64>,
}

impl DensityMatrix {
    /// Validates and wraps a matrix: Hermitian within 1e-10 elementwise,
    /// eigenvalues above -1e-9, trace 1 within 1e-10.
    pub fn new(dim: usize, modes: usize, elements: DMatrix<Complex64>) -> Result<Self> {
        check_dim(dim, 2)?;
        if modes != 1 && modes != 2 {
            return Err(Error::parameter("modes", format!("must be 1 or 2, got {modes}")));
        }
        let size = dim.pow(modes as u32);
        if elements.nrows() != size || elements.ncols() != size {
            return Err(Error::InvalidDensityMatrix(format!(
                "expected {size}x{size}, got {}x{}",
                elements.nrows(),
                elements.ncols()
            )));
        }
        let mut herm_dev: f64 = 0.0;
        for i in 0..size {
            for j in i..size {
                let d = (elements[(i, j)] - elements[(j, i)].conj()).norm();
                herm_dev = herm_dev.max(d);
            }
        }
        if herm_dev > HERMITICITY_TOL {
            return Err(Error::InvalidDensityMatrix(format!(
                "Hermiticity violated by {herm_dev:.3e}"
            )));
        }
        let trace = elements.trace();
        if (trace.re - 1.0).abs() > TRACE_TOL || trace.im.abs() > TRACE_TOL {
            return Err(Error::NotNormalized(trace.re));
        }
        let out = Self {
            dim,
            modes,
            elements,
        };
        let min_eig = out.min_eigenvalue();
        if min_eig < EIGENVALUE_TOL {
            return Err(Error::InvalidDensityMatrix(format!(
                "negative eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(out)
    }

    /// Wraps a matrix known to be valid by construction.
    pub(crate) fn from_trusted(dim: usize, modes: usize, elements: DMatrix<Complex64>) -> Self {
        debug_assert_eq!(elements.nrows(), dim.pow(modes as u32));
        debug_assert_eq!(elements.ncols(), dim.pow(modes as u32));
        Self {
            dim,
            modes,
            elements,
        }
    }

    pub fn from_pure(psi: &FockVector) -> Self {
        psi.to_density()
    }

    pub fn vacuum(dim: usize) -> Result<Self> {
        Ok(FockVector::vacuum(dim)?.to_density())
    }

    pub fn maximally_mixed(dim: usize) -> Result<Self> {
        check_dim(dim, 2)?;
        let m = DMatrix::identity(dim, dim).unscale(dim as f64);
        Ok(Self::from_trusted(dim, 1, m))
    }

    /// Per-mode truncation.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.elements
    }

    pub fn element(&self, i: usize, j: usize) -> Complex64 {
        self.elements[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.elements.trace().re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let eig = self.elements.clone().symmetric_eigen();
        eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest elementwise deviation from Hermiticity.
    pub fn hermiticity_deviation(&self) -> f64 {
        let size = self.elements.nrows();
        let mut dev: f64 = 0.0;
        for i in 0..size {
            for j in i..size {
                dev = dev.max((self.elements[(i, j)] - self.elements[(j, i)].conj()).norm());
            }
        }
        dev
    }

    /// `<n>` of a single-mode state.
    pub fn mean_photon_number(&self) -> Result<f64> {
        self.require_modes(1)?;
        Ok((0..self.dim).map(|n| n as f64 * self.elements[(n, n)].re).sum())
    }

    /// Diagonal of a single-mode state.
    pub fn photon_number_distribution(&self) -> Result<Vec<f64>> {
        self.require_modes(1)?;
        Ok((0..self.dim).map(|n| self.elements[(n, n)].re).collect())
    }

    pub(crate) fn require_modes(&self, expected: usize) -> Result<()> {
        if self.modes != expected {
            return Err(Error::ModeMismatch {
                expected,
                got: self.modes,
            });
        }
        Ok(())
    }

    /// Kronecker product with `self` as the idler factor.
    pub fn tensor(&self, other: &Self) -> Result<DensityMatrix> {
        if self.modes != 1 || other.modes != 1 {
            return Err(Error::ModeMismatch {
                expected: 1,
                got: self.modes.max(other.modes),
            });
        }
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                left: self.dim,
                right: other.dim,
            });
        }
        Ok(Self::from_trusted(
            self.dim,
            2,
            self.elements.kronecker(&other.elements),
        ))
    }

    /// Traces out the discarded mode of a two-mode state.
    pub fn partial_trace(&self, keep: Mode) -> Result<DensityMatrix> {
        self.require_modes(2)?;
        let d = self.dim;
        let mut out = DMatrix::<Complex64>::zeros(d, d);
        for m in 0..d {
            for n in 0..d {
                let mut acc = Complex64::ZERO;
                for k in 0..d {
                    acc += match keep {
                        Mode::Signal => self.elements[(joint_index(k, m, d), joint_index(k, n, d))],
                        Mode::Idler => self.elements[(joint_index(m, k, d), joint_index(n, k, d))],
                    };
                }
                out[(m, n)] = acc;
            }
        }
        Ok(Self::from_trusted(d, 1, out))
    }

    /// Hermitian square root, clamping tiny negative eigenvalues to zero.
    fn sqrt_psd(&self) -> DMatrix<Complex64> {
        let eig = self.elements.clone().symmetric_eigen();
        let roots = eig.eigenvalues.map(|l| Complex64::new(l.max(0.0).sqrt(), 0.0));
        let d = DMatrix::from_diagonal(&roots);
        &eig.eigenvectors * d * eig.eigenvectors.adjoint()
    }
}

/// Uhlmann fidelity `(tr sqrt(sqrt(rho) sigma sqrt(rho)))^2`.
///
/// Reduces to `<psi|rho|psi>` when `sigma` is the pure state `|psi><psi|`.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim != sigma.dim || rho.modes != sigma.modes {
        return Err(Error::DimensionMismatch {
            left: rho.elements.nrows(),
            right: sigma.elements.nrows(),
        });
    }
    let root = rho.sqrt_psd();
    let inner = &root * &sigma.elements * &root;
    // Hermitize before the eigensolve; the product drifts at the 1e-16 level.
    let inner = (&inner + inner.adjoint()).unscale(2.0);
    let eig = inner.symmetric_eigen();
    let tr: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    Ok((tr * tr).min(1.0))
}

// ── Mode operators ──────────────────────────────────────────────────────────

/// Dense single-mode operator on the truncated number basis.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeOperator {
    dim: usize,
    elements: DMatrix<Complex64>,
}

impl ModeOperator {
    /// Annihilation operator: entries `M[n-1, n] = sqrt(n)`, top column
    /// truncated.
    pub fn annihilation(dim: usize) -> Result<Self> {
        check_dim(dim, 2)?;
        let mut m = DMatrix::<Complex64>::zeros(dim, dim);
        for n in 1..dim {
            m[(n - 1, n)] = Complex64::new((n as f64).sqrt(), 0.0);
        }
        Ok(Self { dim, elements: m })
    }

    /// Creation operator, the adjoint of [`ModeOperator::annihilation`].
    pub fn creation(dim: usize) -> Result<Self> {
        Ok(Self::annihilation(dim)?.adjoint())
    }

    pub fn from_matrix(elements: DMatrix<Complex64>) -> Result<Self> {
        if elements.nrows() != elements.ncols() {
            return Err(Error::DimensionMismatch {
                left: elements.nrows(),
                right: elements.ncols(),
            });
        }
        check_dim(elements.nrows(), 2)?;
        Ok(Self {
            dim: elements.nrows(),
            elements,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.elements
    }

    pub fn adjoint(&self) -> Self {
        Self {
            dim: self.dim,
            elements: self.elements.adjoint(),
        }
    }

    /// Applies the operator to a pure state, returning raw (generally
    /// unnormalized) amplitudes.
    pub fn apply(&self, psi: &FockVector) -> Result<DVector<Complex64>> {
        if self.dim != psi.dim() {
            return Err(Error::DimensionMismatch {
                left: self.dim,
                right: psi.dim(),
            });
        }
        Ok(&self.elements * psi.amplitudes())
    }
}

// ── Serialization ───────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct DensityMatrixRepr {
    dim: usize,
    modes: usize,
    /// Row-major nested rows of `[re, im]` pairs.
    elements: Vec<Vec<[f64; 2]>>,
}

impl Serialize for DensityMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let size = self.elements.nrows();
        let elements = (0..size)
            .map(|i| {
                (0..size)
                    .map(|j| {
                        let z = self.elements[(i, j)];
                        [z.re, z.im]
                    })
                    .collect()
            })
            .collect();
        DensityMatrixRepr {
            dim: self.dim,
            modes: self.modes,
            elements,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = DensityMatrixRepr::deserialize(deserializer)?;
        let size = repr.dim.pow(repr.modes as u32);
        if repr.elements.len() != size || repr.elements.iter().any(|row| row.len() != size) {
            return Err(D::Error::custom("density matrix shape mismatch"));
        }
        let m = DMatrix::from_fn(size, size, |i, j| {
            Complex64::new(repr.elements[i][j][0], repr.elements[i][j][1])
        });
        DensityMatrix::new(repr.dim, repr.modes, m).map_err(D::Error::custom)
    }
}
