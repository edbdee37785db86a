//! Calibrated decoherence channels applied to single-mode states: photon loss
//! through a beamsplitter-type channel and the empirical scaling of the qubit
//! coherence.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fock::DensityMatrix;

/// Photon-loss channel of a given transmissivity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossChannel {
    transmissivity: f64,
}

impl LossChannel {
    pub fn new(transmissivity: f64) -> Result<Self> {
        if !(transmissivity > 0.0 && transmissivity <= 1.0) {
            return Err(Error::parameter(
                "transmissivity",
                format!("must be in (0, 1], got {transmissivity}"),
            ));
        }
        Ok(Self { transmissivity })
    }

    pub fn transmissivity(&self) -> f64 {
        self.transmissivity
    }

    /// Kraus operators `A_k[n-k, n] = sqrt(C(n,k) T^(n-k) (1-T)^k)` for
    /// k photons lost. The binomial weights sum to one per column, so the
    /// channel is exactly trace preserving on the truncated space.
    fn kraus(&self, dim: usize) -> Vec<DMatrix<Complex64>> {
        let t = self.transmissivity;
        (0..dim)
            .map(|k| {
                let mut a = DMatrix::<Complex64>::zeros(dim, dim);
                for n in k..dim {
                    let w = binomial_pmf(n, k, 1.0 - t);
                    a[(n - k, n)] = Complex64::new(w.sqrt(), 0.0);
                }
                a
            })
            .collect()
    }

    /// Applies the channel to a single-mode state.
    pub fn apply(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        rho.require_modes(1)?;
        let dim = rho.dim();
        let mut out = DMatrix::<Complex64>::zeros(dim, dim);
        for a in self.kraus(dim) {
            out += &a * rho.matrix() * a.adjoint();
        }
        let out = (&out + out.adjoint()).unscale(2.0);
        Ok(DensityMatrix::from_trusted(dim, 1, out))
    }
}

/// Probability of `k` successes in `n` Bernoulli trials with success
/// probability `p`, by multiplicative recurrence.
fn binomial_pmf(n: usize, k: usize, p: f64) -> f64 {
    debug_assert!(k <= n);
    if p == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let q = 1.0 - p;
    // Start from C(n,0) q^n and walk up in k.
    let mut w = q.powi(n as i32);
    for j in 1..=k {
        w *= (n - j + 1) as f64 / j as f64 * (p / q);
    }
    w
}

/// Routes a single-mode state through a loss channel of transmissivity `t`.
pub fn apply_loss(rho: &DensityMatrix, t: f64) -> Result<DensityMatrix> {
    LossChannel::new(t)?.apply(rho)
}

/// Scales the (0,1) and (1,0) elements by `c`, leaving everything else
/// untouched. Equivalent to a Hadamard product with a PSD mask, so positivity
/// survives for any `c` in [0, 1].
pub fn apply_coherence_factor(rho: &DensityMatrix, c: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::parameter(
            "coherence_factor",
            format!("must be in [0, 1], got {c}"),
        ));
    }
    rho.require_modes(1)?;
    let mut m = rho.matrix().clone();
    m[(0, 1)] *= c;
    m[(1, 0)] *= c;
    Ok(DensityMatrix::from_trusted(rho.dim(), 1, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::FockVector;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_density(dim: usize, rng: &mut ChaCha8Rng) -> DensityMatrix {
        let g = DMatrix::from_fn(dim, dim, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let mut m = &g * g.adjoint();
        let tr = m.trace().re;
        m.unscale_mut(tr);
        let m = (&m + m.adjoint()).unscale(2.0);
        DensityMatrix::new(dim, 1, m).unwrap()
    }

    /// Oracle: loss as a beamsplitter of angle acos(sqrt(T)) mixing the state
    /// with a vacuum ancilla, followed by tracing out the ancilla. Photon
    /// number is conserved, so a per-mode truncation equal to the input
    /// dimension is exact.
    fn beamsplitter_loss_oracle(rho: &DensityMatrix, t: f64) -> DensityMatrix {
        use crate::fock::{DensityMatrix as Dm, Mode, ModeOperator};
        let dim = rho.dim();
        let a = ModeOperator::annihilation(dim).unwrap();
        let id = DMatrix::<Complex64>::identity(dim, dim);
        // System is the idler slot, ancilla the signal slot.
        let a_sys = a.matrix().kronecker(&id);
        let a_anc = id.kronecker(a.matrix());
        // Generator K = a_sys† a_anc − a_sys a_anc† is anti-Hermitian; iK is
        // Hermitian, so exponentiate through its eigensystem.
        let k = &a_sys.adjoint() * &a_anc - &a_sys * a_anc.adjoint();
        let herm = k.map(|z| z * Complex64::i());
        let herm = (&herm + herm.adjoint()).unscale(2.0);
        let eig = herm.symmetric_eigen();
        let theta = t.sqrt().acos();
        let phases = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| {
            (Complex64::new(0.0, -1.0) * theta * l).exp()
        }));
        let u = &eig.eigenvectors * phases * eig.eigenvectors.adjoint();

        let vac = Dm::vacuum(dim).unwrap();
        let joint = rho.tensor(&vac).unwrap();
        let evolved = &u * joint.matrix() * u.adjoint();
        let evolved = (&evolved + evolved.adjoint()).unscale(2.0);
        Dm::new(dim, 2, evolved)
            .unwrap()
            .partial_trace(Mode::Idler)
            .unwrap()
    }

    #[test]
    fn unit_transmissivity_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rho = random_density(6, &mut rng);
        let out = apply_loss(&rho, 1.0).unwrap();
        assert!((out.matrix() - rho.matrix()).norm() < 1e-12);
    }

    #[test]
    fn single_photon_through_calibrated_signal_loss() {
        let one = FockVector::basis(1, 4).unwrap().to_density();
        let out = apply_loss(&one, 0.49).unwrap();
        assert_abs_diff_eq!(out.element(0, 0).re, 0.51, epsilon = 1e-12);
        assert_abs_diff_eq!(out.element(1, 1).re, 0.49, epsilon = 1e-12);
        assert!(out.element(0, 1).norm() < 1e-15);
    }

    #[test]
    fn two_photon_binomial_mixing() {
        let t = 0.37;
        let two = FockVector::basis(2, 5).unwrap().to_density();
        let out = apply_loss(&two, t).unwrap();
        assert_abs_diff_eq!(out.element(0, 0).re, (1.0 - t) * (1.0 - t), epsilon = 1e-12);
        assert_abs_diff_eq!(out.element(1, 1).re, 2.0 * t * (1.0 - t), epsilon = 1e-12);
        assert_abs_diff_eq!(out.element(2, 2).re, t * t, epsilon = 1e-12);

        let oracle = beamsplitter_loss_oracle(&two, t);
        assert!((out.matrix() - oracle.matrix()).norm() < 1e-10);
    }

    #[test]
    fn kraus_sum_matches_beamsplitter_oracle_on_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dim in [3, 5, 8] {
            for t in [0.1, 0.49, 0.9] {
                let rho = random_density(dim, &mut rng);
                let fast = apply_loss(&rho, t).unwrap();
                let oracle = beamsplitter_loss_oracle(&rho, t);
                assert!(
                    (fast.matrix() - oracle.matrix()).norm() < 1e-10,
                    "dim={dim} t={t}"
                );
            }
        }
    }

    #[test]
    fn rejects_out_of_range_transmissivity() {
        let rho = DensityMatrix::vacuum(3).unwrap();
        assert!(apply_loss(&rho, 0.0).is_err());
        assert!(apply_loss(&rho, 1.2).is_err());
        assert!(apply_loss(&rho, -0.3).is_err());
    }

    #[test]
    fn coherence_factor_examples() {
        let amps = vec![
            Complex64::new(0.8_f64.sqrt(), 0.0),
            Complex64::new(0.2_f64.sqrt(), 0.0),
        ];
        let qubit = FockVector::from_amplitudes(amps).unwrap().to_density();
        let rho01 = qubit.element(0, 1);

        let same = apply_coherence_factor(&qubit, 1.0).unwrap();
        assert!((same.matrix() - qubit.matrix()).norm() < 1e-15);

        let scaled = apply_coherence_factor(&qubit, 0.81).unwrap();
        assert_abs_diff_eq!(scaled.element(0, 1).re, 0.81 * rho01.re, epsilon = 1e-15);
        assert_abs_diff_eq!(scaled.element(1, 0).re, 0.81 * rho01.re, epsilon = 1e-15);
        assert_abs_diff_eq!(scaled.element(0, 0).re, qubit.element(0, 0).re, epsilon = 1e-15);
        assert!(scaled.min_eigenvalue() >= -1e-12);

        assert!(apply_coherence_factor(&qubit, 1.5).is_err());
        assert!(apply_coherence_factor(&qubit, -0.1).is_err());
    }

    #[test]
    fn coherence_factor_leaves_diagonal_states_alone() {
        let mut m = DMatrix::<Complex64>::zeros(4, 4);
        for (n, w) in [0.4, 0.3, 0.2, 0.1].iter().enumerate() {
            m[(n, n)] = Complex64::new(*w, 0.0);
        }
        let rho = DensityMatrix::new(4, 1, m).unwrap();
        let out = apply_coherence_factor(&rho, 0.5).unwrap();
        assert!((out.matrix() - rho.matrix()).norm() < 1e-15);
    }

    #[test]
    fn coherence_factor_keeps_psd_on_qubit_with_diagonal_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..50 {
            let p1: f64 = rng.random_range(0.05..0.9);
            let tail: f64 = rng.random_range(0.0..(1.0 - p1) * 0.3);
            let p0 = 1.0 - p1 - tail;
            let mag = (p0 * p1).sqrt() * rng.random_range(0.0..1.0);
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let mut m = DMatrix::<Complex64>::zeros(5, 5);
            m[(0, 0)] = Complex64::new(p0, 0.0);
            m[(1, 1)] = Complex64::new(p1, 0.0);
            m[(2, 2)] = Complex64::new(tail, 0.0);
            m[(0, 1)] = Complex64::from_polar(mag, phase);
            m[(1, 0)] = m[(0, 1)].conj();
            let rho = DensityMatrix::new(5, 1, m).unwrap();
            let c: f64 = rng.random_range(0.0..1.0);
            let out = apply_coherence_factor(&rho, c).unwrap();
            assert!(out.min_eigenvalue() >= -1e-12);
        }
    }

    #[test]
    fn mean_photon_number_scales_with_transmissivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let rho = random_density(7, &mut rng);
        for t in [0.2, 0.49, 0.85] {
            let out = apply_loss(&rho, t).unwrap();
            assert_abs_diff_eq!(
                out.mean_photon_number().unwrap(),
                t * rho.mean_photon_number().unwrap(),
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn loss_rejects_two_mode_states() {
        let vac = DensityMatrix::vacuum(3).unwrap();
        let joint = vac.tensor(&vac).unwrap();
        assert!(apply_loss(&joint, 0.5).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_density(dim: usize) -> impl Strategy<Value = DensityMatrix> {
            proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64), dim * dim).prop_map(
                move |parts| {
                    let g = DMatrix::from_fn(dim, dim, |i, j| {
                        let (re, im) = parts[i * dim + j];
                        Complex64::new(re + if i == j { 1.5 } else { 0.0 }, im)
                    });
                    let mut m = &g * g.adjoint();
                    let tr = m.trace().re;
                    m.unscale_mut(tr);
                    let m = (&m + m.adjoint()).unscale(2.0);
                    DensityMatrix::new(dim, 1, m).unwrap()
                },
            )
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn loss_composes_as_a_semigroup(
                rho in arb_density(6),
                t1 in 0.05..1.0f64,
                t2 in 0.05..1.0f64,
            ) {
                let seq = apply_loss(&apply_loss(&rho, t1).unwrap(), t2).unwrap();
                let direct = apply_loss(&rho, t1 * t2).unwrap();
                prop_assert!((seq.matrix() - direct.matrix()).norm() < 1e-10);
            }

            #[test]
            fn loss_preserves_density_invariants(rho in arb_density(5), t in 0.05..=1.0f64) {
                let out = apply_loss(&rho, t).unwrap();
                prop_assert!((out.trace() - 1.0).abs() < 1e-12);
                prop_assert!(out.hermiticity_deviation() < 1e-12);
                prop_assert!(out.min_eigenvalue() >= -1e-10);
            }
        }
    }
}
