//! Quadrature statistics and Monte Carlo synthesis of homodyne records.
//!
//! Convention: the measured quadrature is `x = (a e^{-i theta} + a† e^{i theta}) / sqrt(2)`,
//! so the vacuum has variance 1/2 and the number-state wavefunctions are the
//! real Hermite-Gaussian functions `psi_n` with `integral psi_n^2 = 1`. The
//! phase-rotated quadrature eigenstate obeys `<n|x;theta> = e^{i n theta} psi_n(x)`,
//! giving the density
//! `p(x|theta) = sum_{m,n} rho_mn e^{i(n-m)theta} psi_m(x) psi_n(x)`.

use std::io::{BufRead, Write};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::DensityMatrix;

/// Number of grid points for inverse-CDF sampling.
const CDF_GRID: usize = 4096;

/// Trace tolerance below which a state counts as normalized for sampling.
const NORMALIZATION_TOL: f64 = 1e-8;

/// One homodyne measurement: local-oscillator phase and quadrature value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSample {
    /// Local-oscillator phase in radians, folded into [0, 2pi).
    pub theta: f64,
    /// Dimensionless quadrature value.
    pub x: f64,
}

impl QuadratureSample {
    pub fn new(theta: f64, x: f64) -> Self {
        Self {
            theta: fold_phase(theta),
            x,
        }
    }
}

pub(crate) fn fold_phase(theta: f64) -> f64 {
    if !theta.is_finite() {
        return theta;
    }
    let tau = std::f64::consts::TAU;
    let folded = theta.rem_euclid(tau);
    if folded >= tau {
        0.0
    } else {
        folded
    }
}

/// Assignment of local-oscillator phases across a measurement record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseSchedule {
    /// One uniform sweep of [0, 2pi) across the whole record, mimicking a
    /// piezo phase scan: sample `j` of `n` gets phase `2 pi j / n`.
    UniformScan,
    /// Cycles through an explicit list of phases.
    FixedList(Vec<f64>),
}

impl PhaseSchedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            PhaseSchedule::UniformScan => Ok(()),
            PhaseSchedule::FixedList(values) => {
                if values.is_empty() {
                    return Err(Error::parameter("phase schedule", "empty fixed list"));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::parameter("phase schedule", "non-finite phase"));
                }
                Ok(())
            }
        }
    }

    /// Phase of sample `index` in a record of `total` samples.
    pub fn phase(&self, index: usize, total: usize) -> f64 {
        match self {
            PhaseSchedule::UniformScan => {
                std::f64::consts::TAU * index as f64 / total.max(1) as f64
            }
            PhaseSchedule::FixedList(values) => fold_phase(values[index % values.len()]),
        }
    }
}

/// Evaluates the Hermite-Gaussian number-state wavefunctions
/// `psi_0(x) .. psi_{dim-1}(x)` into `out` via the stable three-term
/// recurrence.
pub(crate) fn number_wavefunctions(x: f64, out: &mut [f64]) {
    let dim = out.len();
    debug_assert!(dim >= 1);
    let psi0 = std::f64::consts::PI.powf(-0.25) * (-x * x / 2.0).exp();
    out[0] = psi0;
    if dim == 1 {
        return;
    }
    out[1] = std::f64::consts::SQRT_2 * x * psi0;
    for n in 2..dim {
        let nf = n as f64;
        out[n] = x * (2.0 / nf).sqrt() * out[n - 1] - ((nf - 1.0) / nf).sqrt() * out[n - 2];
    }
}

fn require_sampleable(rho: &DensityMatrix) -> Result<()> {
    rho.require_modes(1)?;
    let trace = rho.trace();
    if (trace - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::NotNormalized(trace));
    }
    Ok(())
}

/// Probability density of measuring quadrature `x` at phase `theta`.
pub fn quadrature_pdf(rho: &DensityMatrix, theta: f64, x: f64) -> Result<f64> {
    require_sampleable(rho)?;
    let dim = rho.dim();
    let mut psi = vec![0.0; dim];
    number_wavefunctions(x, &mut psi);
    let mut p = 0.0;
    for m in 0..dim {
        p += rho.element(m, m).re * psi[m] * psi[m];
        for n in (m + 1)..dim {
            // rho_mn e^{i(n-m)theta} + c.c.
            let rot = Complex64::from_polar(1.0, (n as f64 - m as f64) * theta);
            p += 2.0 * (rho.element(m, n) * rot).re * psi[m] * psi[n];
        }
    }
    Ok(p.max(0.0))
}

/// Phase-independent part of the sampling tables: the grid, the wavefunction
/// products collected by diagonal `d = n - m`, and the trapezoid weights.
struct SamplingTables {
    xs: Vec<f64>,
    dx: f64,
    /// diag_re[d][i], diag_im[d][i]: sum_m rho[m, m+d] psi_m(x_i) psi_{m+d}(x_i).
    diag_re: Vec<Vec<f64>>,
    diag_im: Vec<Vec<f64>>,
}

impl SamplingTables {
    fn build(rho: &DensityMatrix) -> Self {
        let dim = rho.dim();
        let sigma_max = (dim as f64 - 0.5).sqrt();
        let half_width = 6.0 * sigma_max;
        let dx = 2.0 * half_width / (CDF_GRID - 1) as f64;
        let xs: Vec<f64> = (0..CDF_GRID).map(|i| -half_width + i as f64 * dx).collect();

        let mut psi = vec![vec![0.0; dim]; CDF_GRID];
        for (i, x) in xs.iter().enumerate() {
            number_wavefunctions(*x, &mut psi[i]);
        }

        let mut diag_re = vec![vec![0.0; CDF_GRID]; dim];
        let mut diag_im = vec![vec![0.0; CDF_GRID]; dim];
        for d in 0..dim {
            for m in 0..dim - d {
                let rho_m = rho.element(m, m + d);
                if rho_m.norm_sqr() == 0.0 {
                    continue;
                }
                for i in 0..CDF_GRID {
                    let w = psi[i][m] * psi[i][m + d];
                    diag_re[d][i] += rho_m.re * w;
                    diag_im[d][i] += rho_m.im * w;
                }
            }
        }
        Self {
            xs,
            dx,
            diag_re,
            diag_im,
        }
    }

    /// Fills `pdf` with `p(x_i | theta)` over the grid.
    fn pdf_at_phase(&self, theta: f64, pdf: &mut [f64]) {
        let dim = self.diag_re.len();
        pdf.copy_from_slice(&self.diag_re[0]);
        for d in 1..dim {
            let (s, c) = ((d as f64) * theta).sin_cos();
            let re = &self.diag_re[d];
            let im = &self.diag_im[d];
            for i in 0..CDF_GRID {
                // 2 Re[e^{i d theta} (re + i im)]
                pdf[i] += 2.0 * (c * re[i] - s * im[i]);
            }
        }
        for v in pdf.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    /// Inverse-CDF draw by linear interpolation of the trapezoid cumulative.
    fn draw(&self, pdf: &[f64], cdf: &mut [f64], u: f64) -> f64 {
        cdf[0] = 0.0;
        for i in 1..CDF_GRID {
            cdf[i] = cdf[i - 1] + 0.5 * (pdf[i - 1] + pdf[i]) * self.dx;
        }
        let total = cdf[CDF_GRID - 1];
        let target = u * total;
        let hi = cdf.partition_point(|&c| c < target).min(CDF_GRID - 1).max(1);
        let lo = hi - 1;
        let span = cdf[hi] - cdf[lo];
        let t = if span > 0.0 { (target - cdf[lo]) / span } else { 0.0 };
        self.xs[lo] + t * self.dx
    }
}

/// Draws `n` i.i.d. quadrature samples at the scheduled phases.
///
/// The draw is reproducible: results are a pure function of
/// `(rho, schedule, n, seed)` regardless of thread count, because all
/// uniforms come from one seeded stream before the per-sample inversions run.
pub fn sample_quadratures(
    rho: &DensityMatrix,
    schedule: &PhaseSchedule,
    n: usize,
    seed: u64,
) -> Result<Vec<QuadratureSample>> {
    require_sampleable(rho)?;
    schedule.validate()?;
    if n == 0 {
        return Err(Error::parameter("n", "must be at least 1"));
    }

    let tables = SamplingTables::build(rho);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniforms: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();

    let samples: Vec<QuadratureSample> = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![0.0; CDF_GRID], vec![0.0; CDF_GRID]),
            |(pdf, cdf), j| {
                let theta = schedule.phase(j, n);
                tables.pdf_at_phase(theta, pdf);
                let x = tables.draw(pdf, cdf, uniforms[j]);
                QuadratureSample::new(theta, x)
            },
        )
        .collect();
    Ok(samples)
}

// ── Record file format ──────────────────────────────────────────────────────

/// Header of the quadrature record format.
pub const QUADRATURE_CSV_HEADER: &str = "theta,x";

/// Writes samples as CSV: header `theta,x`, one sample per line.
pub fn write_quadratures_csv<W: Write>(mut w: W, samples: &[QuadratureSample]) -> Result<()> {
    writeln!(w, "{QUADRATURE_CSV_HEADER}")?;
    for s in samples {
        writeln!(w, "{},{}", s.theta, s.x)?;
    }
    Ok(())
}

/// Reads a quadrature record written by [`write_quadratures_csv`].
pub fn read_quadratures_csv<R: BufRead>(r: R) -> Result<Vec<QuadratureSample>> {
    let mut samples = Vec::new();
    let mut lines = r.lines().enumerate();
    match lines.next() {
        Some((_, Ok(header))) if header.trim() == QUADRATURE_CSV_HEADER => {}
        Some((_, Ok(header))) => {
            return Err(Error::MalformedRecord {
                line: 1,
                reason: format!("expected header `{QUADRATURE_CSV_HEADER}`, got `{header}`"),
            })
        }
        Some((_, Err(e))) => return Err(e.into()),
        None => {
            return Err(Error::MalformedRecord {
                line: 1,
                reason: "empty file".into(),
            })
        }
    }
    for (idx, line) in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let parse = |field: Option<&str>| -> Result<f64> {
            field
                .ok_or_else(|| Error::MalformedRecord {
                    line: idx + 1,
                    reason: "missing field".into(),
                })?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::MalformedRecord {
                    line: idx + 1,
                    reason: e.to_string(),
                })
        };
        let theta = parse(fields.next())?;
        let x = parse(fields.next())?;
        if fields.next().is_some() {
            return Err(Error::MalformedRecord {
                line: idx + 1,
                reason: "too many fields".into(),
            });
        }
        samples.push(QuadratureSample::new(theta, x));
    }
    Ok(samples)
}
