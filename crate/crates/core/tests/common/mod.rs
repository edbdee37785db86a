//! Shared helpers and independent oracles for the integration suites.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use singlerail::fock::{DensityMatrix, Mode, ModeOperator};

/// Random full-rank density matrix (Ginibre construction).
pub fn random_density(dim: usize, rng: &mut ChaCha8Rng) -> DensityMatrix {
    let g = DMatrix::from_fn(dim, dim, |_, _| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    let mut m = &g * g.adjoint();
    let tr = m.trace().re;
    m.unscale_mut(tr);
    let m = (&m + m.adjoint()).unscale(2.0);
    DensityMatrix::new(dim, 1, m).expect("Ginibre construction is a valid state")
}

/// Random state supported on the {|0>, |1>} sector, embedded in `dim` levels.
/// The coherence magnitude stays strictly inside the positivity disc.
pub fn random_qubit_sector_density(dim: usize, rng: &mut ChaCha8Rng) -> DensityMatrix {
    let p1: f64 = rng.random_range(0.05..0.95);
    let p0 = 1.0 - p1;
    let mag = (p0 * p1).sqrt() * rng.random_range(0.0..0.98);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let mut m = DMatrix::<Complex64>::zeros(dim, dim);
    m[(0, 0)] = Complex64::new(p0, 0.0);
    m[(1, 1)] = Complex64::new(p1, 0.0);
    m[(0, 1)] = Complex64::from_polar(mag, phase);
    m[(1, 0)] = m[(0, 1)].conj();
    DensityMatrix::new(dim, 1, m).expect("qubit-sector state is valid")
}

/// Independent loss-channel oracle: mix the state with a vacuum ancilla on a
/// beamsplitter of angle acos(sqrt(t)) and trace the ancilla out. The
/// beamsplitter conserves photon number, so matching the input truncation is
/// exact.
pub fn beamsplitter_loss_oracle(rho: &DensityMatrix, t: f64) -> DensityMatrix {
    let dim = rho.dim();
    let a = ModeOperator::annihilation(dim).expect("dim >= 2");
    let id = DMatrix::<Complex64>::identity(dim, dim);
    let a_sys = a.matrix().kronecker(&id);
    let a_anc = id.kronecker(a.matrix());
    let k = &a_sys.adjoint() * &a_anc - &a_sys * a_anc.adjoint();
    let herm = k.map(|z| z * Complex64::i());
    let herm = (&herm + herm.adjoint()).unscale(2.0);
    let eig = herm.symmetric_eigen();
    let theta = t.sqrt().acos();
    let phases = DMatrix::from_diagonal(
        &eig.eigenvalues
            .map(|l| (Complex64::new(0.0, -1.0) * theta * l).exp()),
    );
    let u = &eig.eigenvectors * phases * eig.eigenvectors.adjoint();

    let vac = DensityMatrix::vacuum(dim).expect("dim >= 2");
    let joint = rho.tensor(&vac).expect("same dims");
    let evolved = &u * joint.matrix() * u.adjoint();
    let evolved = (&evolved + evolved.adjoint()).unscale(2.0);
    DensityMatrix::new(dim, 2, evolved)
        .expect("unitary evolution preserves validity")
        .partial_trace(Mode::Idler)
        .expect("two-mode state")
}
