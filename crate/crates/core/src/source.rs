//! Seeded four-wave-mixing source and photon-detection heralding.
//!
//! The source evolves a coherent seed in the idler mode and vacuum in the
//! signal mode under the two-mode squeezing interaction
//! `H t = r (a_i a_s + a_i† a_s†)` (dimensionless strength `r`), then
//! conditions the signal mode on a click of a non-number-resolving detector
//! watching the idler. Both the exact truncated-space evolution and the
//! first-order analytic qubit `alpha|0> - i r|1>` are available; first order
//! is what a weak seed and weak squeezing produce up to quadratic corrections.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, FockVector, Mode, ModeOperator, TwoModeVector};

/// Evolution leakage allowed into the top two Fock levels of either mode.
pub const LEAKAGE_LIMIT: f64 = 1e-6;

/// Herald probabilities below this are treated as "never clicks".
pub const HERALD_FLOOR: f64 = 1e-15;

/// Fitted physical parameters of the source and its detection channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Dimensionless squeezing strength (interaction gain x time).
    pub r: f64,
    /// Complex seed amplitude injected into the idler mode.
    pub alpha: Complex64,
    /// Signal-channel transmissivity.
    pub eta_signal: f64,
    /// Idler-channel transmissivity (detector efficiency folded in).
    pub eta_idler: f64,
    /// Multiplicative factor applied to the qubit coherence rho01.
    pub coherence_factor: f64,
    /// Idler count rate at zero seed, in kHz.
    pub base_count_rate_khz: f64,
}

impl ModelParams {
    pub fn new(
        r: f64,
        alpha: Complex64,
        eta_signal: f64,
        eta_idler: f64,
        coherence_factor: f64,
        base_count_rate_khz: f64,
    ) -> Result<Self> {
        let params = Self {
            r,
            alpha,
            eta_signal,
            eta_idler,
            coherence_factor,
            base_count_rate_khz,
        };
        params.validate()?;
        Ok(params)
    }

    /// The calibrated operating point of the source: squeezing strength 0.22,
    /// 51% signal loss, 90% idler loss, coherence factor 0.81, and a 335 kHz
    /// unseeded count rate.
    pub fn calibrated() -> Self {
        Self {
            r: 0.22,
            alpha: Complex64::ZERO,
            eta_signal: 0.49,
            eta_idler: 0.10,
            coherence_factor: 0.81,
            base_count_rate_khz: 335.0,
        }
    }

    pub fn with_alpha(mut self, alpha: Complex64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.r.is_finite() || self.r < 0.0 {
            return Err(Error::parameter("r", format!("must be >= 0, got {}", self.r)));
        }
        // Perturbative-regime guard; the calibrated source sits at r = 0.22.
        if self.r >= 0.5 {
            return Err(Error::parameter(
                "r",
                format!("must be < 0.5 (perturbative regime), got {}", self.r),
            ));
        }
        if !self.alpha.re.is_finite() || !self.alpha.im.is_finite() {
            return Err(Error::parameter("alpha", "non-finite"));
        }
        for (name, value) in [("eta_signal", self.eta_signal), ("eta_idler", self.eta_idler)] {
            if !(value > 0.0 && value <= 1.0) {
                return Err(Error::parameter(name, format!("must be in (0, 1], got {value}")));
            }
        }
        if !(0.0..=1.0).contains(&self.coherence_factor) {
            return Err(Error::parameter(
                "coherence_factor",
                format!("must be in [0, 1], got {}", self.coherence_factor),
            ));
        }
        if !self.base_count_rate_khz.is_finite() || self.base_count_rate_khz < 0.0 {
            return Err(Error::parameter(
                "base_count_rate_khz",
                format!("must be >= 0, got {}", self.base_count_rate_khz),
            ));
        }
        Ok(())
    }
}

/// Signal state conditioned on an idler click, plus the click probability.
#[derive(Debug, Clone)]
pub struct HeraldOutcome {
    /// Normalized single-mode signal state.
    pub signal_state: DensityMatrix,
    /// Probability of the heralding click per trial.
    pub herald_probability: f64,
}

/// First-order heralded qubit, `alpha|0> - i r|1>` normalized.
pub fn first_order_qubit(params: &ModelParams) -> Result<FockVector> {
    params.validate()?;
    if params.alpha.norm() == 0.0 && params.r == 0.0 {
        return Err(Error::UndefinedState);
    }
    FockVector::from_amplitudes(vec![params.alpha, Complex64::new(0.0, -params.r)])
}

/// First-order probability of a heralding detection event, `|alpha|^2 + r^2`.
pub fn first_order_pr_count(params: &ModelParams) -> f64 {
    params.alpha.norm_sqr() + params.r * params.r
}

/// Two-mode squeezing propagator on the truncated joint space.
///
/// The Hermitian generator `G = a_i a_s + a_i† a_s†` is diagonalized once;
/// evolution for any strength `r` is then `V exp(-i r Λ) V†`, which lets
/// curve scans and fits reuse the eigensystem across many operating points.
#[derive(Debug, Clone)]
pub struct TwoModeSqueezer {
    dim: usize,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<Complex64>,
}

impl TwoModeSqueezer {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 6 {
            return Err(Error::DimensionTooSmall { got: dim, min: 6 });
        }
        let a = ModeOperator::annihilation(dim)?;
        let id = DMatrix::<Complex64>::identity(dim, dim);
        let a_idler = a.matrix().kronecker(&id);
        let a_signal = id.kronecker(a.matrix());
        let down = &a_idler * &a_signal;
        let gen = &down + down.adjoint();
        let gen = (&gen + gen.adjoint()).unscale(2.0);
        let eig = gen.symmetric_eigen();
        Ok(Self {
            dim,
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Evolves `|alpha>_idler ⊗ |0>_signal` and reports the truncation
    /// leakage (population of the top two levels of either mode).
    pub fn evolve(&self, params: &ModelParams) -> Result<TwoModeVector> {
        params.validate()?;
        let seed = FockVector::coherent(params.alpha, self.dim)?;
        let input = seed.tensor(&FockVector::vacuum(self.dim)?)?;
        let rotated = self.eigenvectors.adjoint() * input.amplitudes();
        let phased = DVector::from_fn(rotated.len(), |k, _| {
            rotated[k] * (Complex64::new(0.0, -1.0) * params.r * self.eigenvalues[k]).exp()
        });
        let out = &self.eigenvectors * phased;
        let state = TwoModeVector::from_raw(self.dim, out);

        let leakage = edge_leakage(&state);
        if leakage >= LEAKAGE_LIMIT {
            return Err(Error::TruncationOverflow {
                weight: leakage,
                limit: LEAKAGE_LIMIT,
            });
        }
        Ok(state)
    }
}

/// Population of the top two Fock levels over both modes.
fn edge_leakage(state: &TwoModeVector) -> f64 {
    let dim = state.dim();
    let idler = state.mode_marginal(Mode::Idler);
    let signal = state.mode_marginal(Mode::Signal);
    let top = |p: &[f64]| p[dim - 1] + p[dim - 2];
    top(&idler).max(top(&signal))
}

/// Exact evolution of the seeded source on the truncated space, returned as
/// the pure-state projector of the joint idler-signal state.
pub fn evolve_two_mode(params: &ModelParams, dim: usize) -> Result<DensityMatrix> {
    Ok(TwoModeSqueezer::new(dim)?.evolve(params)?.to_density())
}

/// Conditions a two-mode state on a click of a non-number-resolving on/off
/// detector of efficiency `eta_idler` watching the idler mode.
///
/// The click POVM element is diagonal, `sum_n (1-(1-eta)^n)|n><n|`, so the
/// conditional signal state is the idler-partial trace of the POVM-weighted
/// matrix, normalized by the click probability.
pub fn herald(rho: &DensityMatrix, eta_idler: f64) -> Result<HeraldOutcome> {
    rho.require_modes(2)?;
    if !(eta_idler > 0.0 && eta_idler <= 1.0) {
        return Err(Error::parameter(
            "eta_idler",
            format!("must be in (0, 1], got {eta_idler}"),
        ));
    }
    let dim = rho.dim();
    let weights: Vec<f64> = (0..dim)
        .map(|n| 1.0 - (1.0 - eta_idler).powi(n as i32))
        .collect();

    let mut conditional = DMatrix::<Complex64>::zeros(dim, dim);
    for m in 0..dim {
        for n in 0..dim {
            let mut acc = Complex64::ZERO;
            for (k, w) in weights.iter().enumerate() {
                acc += *w * rho.element(k * dim + m, k * dim + n);
            }
            conditional[(m, n)] = acc;
        }
    }
    let probability = conditional.trace().re;
    if probability < HERALD_FLOOR {
        return Err(Error::NoHerald(probability));
    }
    conditional.unscale_mut(probability);
    let conditional = (&conditional + conditional.adjoint()).unscale(2.0);
    Ok(HeraldOutcome {
        signal_state: DensityMatrix::from_trusted(dim, 1, conditional),
        herald_probability: probability,
    })
}

/// Idler count rates implied by the seed strength, in kHz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountRates {
    /// Rate added by the seed on top of the unseeded rate.
    pub added_khz: f64,
    /// Total click rate, base plus added.
    pub total_khz: f64,
}

/// First-order rate bookkeeping: the unseeded rate scales with `r^2` and the
/// seed adds `|alpha|^2` in the same units, so
/// `added = base * |alpha|^2 / r^2`.
pub fn seed_to_count_rate(params: &ModelParams) -> Result<CountRates> {
    params.validate()?;
    if params.r == 0.0 {
        return Err(Error::ZeroSqueezing);
    }
    let added = params.base_count_rate_khz * params.alpha.norm_sqr() / (params.r * params.r);
    Ok(CountRates {
        added_khz: added,
        total_khz: params.base_count_rate_khz + added,
    })
}

/// Inverts [`seed_to_count_rate`]: the seed magnitude that produces a given
/// added rate, keeping the phase of `params.alpha` (phase zero when the
/// current seed is zero).
pub fn alpha_for_added_rate(params: &ModelParams, added_khz: f64) -> Result<Complex64> {
    params.validate()?;
    if params.r == 0.0 {
        return Err(Error::ZeroSqueezing);
    }
    if !added_khz.is_finite() || added_khz < 0.0 {
        return Err(Error::parameter(
            "added_khz",
            format!("must be >= 0, got {added_khz}"),
        ));
    }
    if params.base_count_rate_khz <= 0.0 {
        if added_khz == 0.0 {
            return Ok(Complex64::ZERO);
        }
        return Err(Error::parameter(
            "base_count_rate_khz",
            "cannot invert a rate against a zero base rate",
        ));
    }
    let mag = params.r * (added_khz / params.base_count_rate_khz).sqrt();
    let phase = if params.alpha.norm() > 0.0 {
        params.alpha.arg()
    } else {
        0.0
    };
    Ok(Complex64::from_polar(mag, phase))
}
