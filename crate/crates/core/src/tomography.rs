//! Iterative maximum-likelihood reconstruction of a density matrix from
//! homodyne quadrature records.
//!
//! Each sample contributes the projector onto the phase-rotated quadrature
//! eigenstate, `Pi_j = |x_j;theta_j><x_j;theta_j|`. The estimator iterates
//! `rho <- N[R(rho) rho R(rho)]` with
//! `R(rho) = (1/N) sum_j Pi_j / tr(Pi_j rho)`, which never decreases the
//! likelihood of the record; a decrease beyond the numerical slack is a
//! contract violation and reported as an error.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::DensityMatrix;
use crate::homodyne::{number_wavefunctions, QuadratureSample};

/// Samples per parallel reduction chunk. Chunk boundaries are fixed, so the
/// reduction order (and therefore every bit of the output) is independent of
/// the thread count.
const CHUNK: usize = 8192;

/// Tolerated log-likelihood decrease per iteration.
const MONOTONICITY_SLACK: f64 = 1e-9;

/// Minimum record length accepted by the reconstructor.
pub const MIN_SAMPLES: usize = 1000;

/// Reconstruction result with convergence diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub rho: DensityMatrix,
    /// Log-likelihood of the record under the iterate, one entry per visited
    /// state (including the final one). Non-decreasing within 1e-9.
    pub loglik_trace: Vec<f64>,
    /// Number of R-rho-R updates applied.
    pub iterations_run: usize,
    pub converged: bool,
    /// Truncation the reconstruction ran at.
    pub dim: usize,
}

/// Tuning knobs for [`maxlik_reconstruct_with`].
#[derive(Debug, Clone)]
pub struct MaxLikOptions {
    pub max_iter: usize,
    /// Relative per-iteration log-likelihood gain below which the iteration
    /// stops.
    pub tol: f64,
    /// Dilution parameter: 0 runs the plain R-rho-R update, epsilon > 0 uses
    /// `(I + eps R)/(1 + eps)` for pathological records.
    pub dilution: f64,
    /// Starting iterate; maximally mixed when absent.
    pub initial: Option<DensityMatrix>,
}

impl Default for MaxLikOptions {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            tol: 1e-8,
            dilution: 0.0,
            initial: None,
        }
    }
}

/// Compensated (Kahan) accumulator; keeps the monotonicity check meaningful
/// at records of 1e5 log terms.
#[derive(Clone, Copy, Default)]
struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    fn add(&mut self, value: f64) {
        let y = value - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum
    }
}

fn check_samples(samples: &[QuadratureSample]) -> Result<()> {
    for (index, s) in samples.iter().enumerate() {
        if !s.x.is_finite() || !s.theta.is_finite() {
            return Err(Error::NonFiniteSample { index });
        }
    }
    Ok(())
}

/// Projector amplitudes `<n|x_j;theta_j> = e^{i n theta_j} psi_n(x_j)`,
/// flattened sample-major.
fn projector_table(samples: &[QuadratureSample], dim: usize) -> Vec<Complex64> {
    let mut table = vec![Complex64::ZERO; samples.len() * dim];
    table
        .par_chunks_mut(CHUNK * dim)
        .zip(samples.par_chunks(CHUNK))
        .for_each(|(rows, chunk)| {
            let mut psi = vec![0.0; dim];
            for (row, s) in rows.chunks_mut(dim).zip(chunk) {
                number_wavefunctions(s.x, &mut psi);
                for n in 0..dim {
                    row[n] = Complex64::from_polar(psi[n], n as f64 * s.theta);
                }
            }
        });
    table
}

/// One pass over the record: log-likelihood of `rho` and the accumulated
/// R operator, both bit-reproducible across thread counts.
fn accumulate(table: &[Complex64], dim: usize, rho: &DMatrix<Complex64>) -> (f64, DMatrix<Complex64>) {
    let rho_rows: Vec<Complex64> = (0..dim * dim)
        .map(|k| rho[(k / dim, k % dim)])
        .collect();

    let partials: Vec<(KahanSum, Vec<Complex64>)> = table
        .par_chunks(CHUNK * dim)
        .map(|rows| {
            let mut loglik = KahanSum::default();
            let mut r_acc = vec![Complex64::ZERO; dim * dim];
            let mut w = vec![Complex64::ZERO; dim];
            for v in rows.chunks_exact(dim) {
                // w = rho v, p = v† w
                for m in 0..dim {
                    let mut acc = Complex64::ZERO;
                    let base = m * dim;
                    for n in 0..dim {
                        acc += rho_rows[base + n] * v[n];
                    }
                    w[m] = acc;
                }
                let mut p = 0.0;
                for m in 0..dim {
                    p += (v[m].conj() * w[m]).re;
                }
                let p = p.max(f64::MIN_POSITIVE);
                loglik.add(p.ln());
                let inv = 1.0 / p;
                for j in 0..dim {
                    let scaled = v[j].conj() * inv;
                    let base = j * dim;
                    for i in 0..dim {
                        // Column-major accumulation of v v† / p.
                        r_acc[base + i] += v[i] * scaled;
                    }
                }
            }
            (loglik, r_acc)
        })
        .collect();

    let n_samples = table.len() / dim;
    let mut loglik = KahanSum::default();
    let mut r_total = vec![Complex64::ZERO; dim * dim];
    for (partial_l, partial_r) in partials {
        loglik.add(partial_l.total());
        for (acc, term) in r_total.iter_mut().zip(&partial_r) {
            *acc += term;
        }
    }
    let scale = 1.0 / n_samples as f64;
    let r_op = DMatrix::from_fn(dim, dim, |i, j| r_total[j * dim + i] * scale);
    let r_op = (&r_op + r_op.adjoint()).unscale(2.0);
    (loglik.total(), r_op)
}

/// Log-likelihood `sum_j log p(x_j | theta_j)` of a record under `rho`.
///
/// A zero-probability sample under a rank-deficient state drives the result
/// to `-inf`; callers can detect the sentinel with `is_infinite`.
pub fn loglikelihood(rho: &DensityMatrix, samples: &[QuadratureSample]) -> Result<f64> {
    rho.require_modes(1)?;
    let trace = rho.trace();
    if (trace - 1.0).abs() > 1e-8 {
        return Err(Error::NotNormalized(trace));
    }
    check_samples(samples)?;
    let dim = rho.dim();
    let table = projector_table(samples, dim);
    let mut total = KahanSum::default();
    let mut w = vec![Complex64::ZERO; dim];
    for v in table.chunks_exact(dim) {
        for m in 0..dim {
            let mut acc = Complex64::ZERO;
            for n in 0..dim {
                acc += rho.element(m, n) * v[n];
            }
            w[m] = acc;
        }
        let p: f64 = (0..dim).map(|m| (v[m].conj() * w[m]).re).sum();
        if p <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        total.add(p.ln());
    }
    Ok(total.total())
}

/// Reconstructs a density matrix from a quadrature record by the iterative
/// maximum-likelihood fixed point, starting from the maximally mixed state.
pub fn maxlik_reconstruct(
    samples: &[QuadratureSample],
    dim: usize,
    max_iter: usize,
    tol: f64,
) -> Result<ReconstructionReport> {
    maxlik_reconstruct_with(
        samples,
        dim,
        &MaxLikOptions {
            max_iter,
            tol,
            ..MaxLikOptions::default()
        },
    )
}

/// [`maxlik_reconstruct`] with full control over dilution and the starting
/// iterate.
pub fn maxlik_reconstruct_with(
    samples: &[QuadratureSample],
    dim: usize,
    options: &MaxLikOptions,
) -> Result<ReconstructionReport> {
    if dim < 2 {
        return Err(Error::DimensionTooSmall { got: dim, min: 2 });
    }
    if samples.len() < MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            got: samples.len(),
            min: MIN_SAMPLES,
        });
    }
    check_samples(samples)?;
    if !(options.tol > 0.0) || !options.tol.is_finite() {
        return Err(Error::parameter("tol", "must be a positive finite number"));
    }
    if options.dilution < 0.0 || !options.dilution.is_finite() {
        return Err(Error::parameter("dilution", "must be >= 0"));
    }

    let mut rho = match &options.initial {
        Some(init) => {
            init.require_modes(1)?;
            if init.dim() != dim {
                return Err(Error::DimensionMismatch {
                    left: init.dim(),
                    right: dim,
                });
            }
            init.matrix().clone()
        }
        None => DMatrix::identity(dim, dim).unscale(dim as f64),
    };

    let table = projector_table(samples, dim);
    let mut trace_log = Vec::with_capacity(options.max_iter + 1);
    let mut converged = false;

    for step in 0..=options.max_iter {
        let (loglik, r_op) = accumulate(&table, dim, &rho);
        trace_log.push(loglik);
        if step > 0 {
            let gain = loglik - trace_log[step - 1];
            if gain < -MONOTONICITY_SLACK {
                return Err(Error::LikelihoodDecreased {
                    iteration: step,
                    drop: -gain,
                });
            }
            let scale = trace_log[step - 1].abs().max(1.0);
            if gain < options.tol * scale {
                converged = true;
                break;
            }
        }
        if step == options.max_iter {
            break;
        }

        rho = if options.dilution > 0.0 {
            let eps = options.dilution;
            let g = (DMatrix::identity(dim, dim) + r_op.scale(eps)).unscale(1.0 + eps);
            &g * rho * &g
        } else {
            &r_op * rho * &r_op
        };
        let tr = rho.trace().re;
        rho.unscale_mut(tr);
        rho = (&rho + rho.adjoint()).unscale(2.0);
    }

    let iterations_run = trace_log.len() - 1;
    let rho = DensityMatrix::new(dim, 1, rho)
        .map_err(|e| Error::InvalidDensityMatrix(format!("re-estimation produced {e}")))?;
    Ok(ReconstructionReport {
        rho,
        loglik_trace: trace_log,
        iterations_run,
        converged,
        dim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::apply_loss;
    use crate::fock::{fidelity, FockVector};
    use crate::homodyne::{sample_quadratures, PhaseSchedule};
    use approx::assert_abs_diff_eq;

    fn draws(rho: &DensityMatrix, n: usize, seed: u64) -> Vec<QuadratureSample> {
        sample_quadratures(rho, &PhaseSchedule::UniformScan, n, seed).unwrap()
    }

    #[test]
    fn rejects_bad_inputs() {
        let samples = vec![QuadratureSample::new(0.0, 0.1); 1200];
        assert!(matches!(
            maxlik_reconstruct(&samples[..10], 4, 10, 1e-8),
            Err(Error::TooFewSamples { .. })
        ));
        assert!(matches!(
            maxlik_reconstruct(&samples, 1, 10, 1e-8),
            Err(Error::DimensionTooSmall { .. })
        ));
        let mut broken = samples.clone();
        broken[7].x = f64::NAN;
        assert!(matches!(
            maxlik_reconstruct(&broken, 4, 10, 1e-8),
            Err(Error::NonFiniteSample { index: 7 })
        ));
    }

    #[test]
    fn vacuum_record_reconstructs_to_vacuum() {
        let vac = DensityMatrix::vacuum(6).unwrap();
        let report = maxlik_reconstruct(&draws(&vac, 100_000, 41), 6, 500, 1e-8).unwrap();
        assert!(
            report.rho.element(0, 0).re >= 0.995,
            "rho00 = {}",
            report.rho.element(0, 0).re
        );
        assert!(report.converged);
    }

    #[test]
    fn lossy_single_photon_recovers_transmitted_population() {
        let one = FockVector::basis(1, 6).unwrap().to_density();
        let lossy = apply_loss(&one, 0.49).unwrap();
        let report = maxlik_reconstruct(&draws(&lossy, 100_000, 4242), 6, 1000, 1e-8).unwrap();
        assert_abs_diff_eq!(report.rho.element(1, 1).re, 0.49, epsilon = 0.01);
    }

    #[test]
    fn diagonal_truth_reconstructs_without_coherence() {
        let one = FockVector::basis(1, 6).unwrap().to_density();
        let lossy = apply_loss(&one, 0.6).unwrap();
        let report = maxlik_reconstruct(&draws(&lossy, 100_000, 77), 6, 1000, 1e-8).unwrap();
        assert!(
            report.rho.element(0, 1).norm() <= 0.01,
            "|rho01| = {}",
            report.rho.element(0, 1).norm()
        );
    }

    #[test]
    fn loglik_trace_is_monotone() {
        let vac = DensityMatrix::vacuum(4).unwrap();
        let report = maxlik_reconstruct(&draws(&vac, 20_000, 9), 4, 200, 1e-10).unwrap();
        for pair in report.loglik_trace.windows(2) {
            assert!(pair[1] - pair[0] >= -1e-9);
        }
        assert_eq!(report.iterations_run, report.loglik_trace.len() - 1);
    }

    #[test]
    fn seeding_at_the_truth_converges_immediately() {
        let amps = vec![
            Complex64::new(0.7_f64.sqrt(), 0.0),
            Complex64::new(0.0, 0.3_f64.sqrt()),
        ];
        let truth = FockVector::from_amplitudes(amps)
            .unwrap()
            .padded(4)
            .unwrap()
            .to_density();
        // The statistical fixed point sits within sampling noise of the
        // truth, so seeded there the gain per iteration is tiny at once.
        let samples = draws(&truth, 50_000, 15);
        let options = MaxLikOptions {
            max_iter: 50,
            tol: 1e-4,
            initial: Some(truth.clone()),
            ..MaxLikOptions::default()
        };
        let report = maxlik_reconstruct_with(&samples, 4, &options).unwrap();
        assert!(report.converged);
        assert!(report.iterations_run <= 2, "ran {}", report.iterations_run);
    }

    #[test]
    fn dilution_also_climbs_the_likelihood() {
        let vac = DensityMatrix::vacuum(4).unwrap();
        let samples = draws(&vac, 20_000, 33);
        let options = MaxLikOptions {
            max_iter: 300,
            tol: 1e-8,
            dilution: 0.5,
            initial: None,
        };
        let report = maxlik_reconstruct_with(&samples, 4, &options).unwrap();
        assert!(report.rho.element(0, 0).re > 0.99);
    }

    #[test]
    fn truncation_is_robust_for_qubit_sector_states() {
        let amps = vec![
            Complex64::new(0.55_f64.sqrt(), 0.0),
            Complex64::new(0.45_f64.sqrt(), 0.0),
        ];
        let truth = FockVector::from_amplitudes(amps)
            .unwrap()
            .padded(8)
            .unwrap()
            .to_density();
        let samples = draws(&truth, 60_000, 3003);
        let a = maxlik_reconstruct(&samples, 6, 600, 1e-8).unwrap();
        let b = maxlik_reconstruct(&samples, 8, 600, 1e-8).unwrap();
        assert!((a.rho.element(0, 0).re - b.rho.element(0, 0).re).abs() < 0.01);
        assert!((a.rho.element(1, 1).re - b.rho.element(1, 1).re).abs() < 0.01);
        assert!((a.rho.element(0, 1).norm() - b.rho.element(0, 1).norm()).abs() < 0.01);
    }

    #[test]
    fn loglikelihood_examples() {
        let vac = DensityMatrix::vacuum(4).unwrap();
        // Single sample at the mode of the vacuum density.
        let single = vec![QuadratureSample::new(0.4, 0.0)];
        let l = loglikelihood(&vac, &single).unwrap();
        assert_abs_diff_eq!(l, (1.0 / std::f64::consts::PI.sqrt()).ln(), epsilon = 1e-12);

        // Reordering leaves the sum unchanged.
        let mut record = draws(&vac, 2000, 5);
        let forward = loglikelihood(&vac, &record).unwrap();
        record.reverse();
        let backward = loglikelihood(&vac, &record).unwrap();
        assert_abs_diff_eq!(forward, backward, epsilon = 1e-9);
    }

    #[test]
    fn vacuum_data_prefers_vacuum_over_single_photon() {
        let vac = DensityMatrix::vacuum(4).unwrap();
        let one = FockVector::basis(1, 4).unwrap().to_density();
        let record = draws(&vac, 5000, 21);
        let l_vac = loglikelihood(&vac, &record).unwrap();
        let l_one = loglikelihood(&one, &record).unwrap();
        assert!(l_vac > l_one);
    }

    #[test]
    fn rank_deficient_state_yields_neg_infinity_sentinel() {
        let one = FockVector::basis(1, 4).unwrap().to_density();
        // x = 0 is the node of the one-photon wavefunction.
        let record = vec![QuadratureSample::new(0.0, 0.0)];
        let l = loglikelihood(&one, &record).unwrap();
        assert!(l.is_infinite() && l < 0.0);
    }

    #[test]
    fn closed_loop_fidelity_on_a_qubit_state() {
        let amps = vec![
            Complex64::new(0.6_f64.sqrt(), 0.0),
            Complex64::from_polar(0.4_f64.sqrt(), 1.1),
        ];
        let truth = FockVector::from_amplitudes(amps)
            .unwrap()
            .padded(6)
            .unwrap()
            .to_density();
        let report = maxlik_reconstruct(&draws(&truth, 100_000, 8), 6, 1000, 1e-8).unwrap();
        let f = fidelity(&report.rho, &truth).unwrap();
        assert!(f >= 0.99, "fidelity = {f}");
    }

    #[test]
    fn report_serializes_with_row_major_pairs() {
        let vac = DensityMatrix::vacuum(4).unwrap();
        let report = maxlik_reconstruct(&draws(&vac, 5000, 2), 4, 100, 1e-7).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let back: ReconstructionReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.dim, 4);
        assert_eq!(back.loglik_trace.len(), report.loglik_trace.len());
        assert!((back.rho.matrix() - report.rho.matrix()).norm() < 1e-15);
    }
}
