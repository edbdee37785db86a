//! Figures of merit and model comparison: Wigner functions, the generalized
//! efficiency of a single-rail qubit, model curves against the idler count
//! rate, and least-squares recovery of model parameters from such curves.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channels::{apply_coherence_factor, apply_loss};
use crate::error::{Error, Result};
use crate::fock::DensityMatrix;
use crate::source::{
    alpha_for_added_rate, first_order_qubit, herald, ModelParams, TwoModeSqueezer,
};

/// Which source model generates a state: the first-order analytic qubit or
/// the exact truncated-space evolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceModel {
    FirstOrder,
    Exact,
}

// ── Wigner function ─────────────────────────────────────────────────────────

/// Rectangular phase-space grid specification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub nx: usize,
    pub np: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        // Captures > 99.9% of the mass for qubit-sector states under the
        // x = (a + a†)/sqrt(2) convention.
        Self {
            x_min: -4.0,
            x_max: 4.0,
            p_min: -4.0,
            p_max: 4.0,
            nx: 121,
            np: 121,
        }
    }
}

impl GridSpec {
    fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.np < 2 {
            return Err(Error::parameter("grid", "need at least 2 points per axis"));
        }
        if !(self.x_min < self.x_max) || !(self.p_min < self.p_max) {
            return Err(Error::parameter("grid", "empty axis range"));
        }
        Ok(())
    }
}

/// Wigner quasi-probability on a rectangular grid, `values[i][j] = W(x_i, p_j)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WignerGrid {
    pub x_axis: Vec<f64>,
    pub p_axis: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    /// Set when |W| exceeds 1e-4 somewhere on the grid boundary, i.e. the
    /// grid clips visible support.
    pub boundary_warning: bool,
}

impl WignerGrid {
    /// Trapezoid integral over the grid; 1 within 1e-3 when the grid holds
    /// the support.
    pub fn integral(&self) -> f64 {
        let nx = self.x_axis.len();
        let np = self.p_axis.len();
        let dx = (self.x_axis[nx - 1] - self.x_axis[0]) / (nx - 1) as f64;
        let dp = (self.p_axis[np - 1] - self.p_axis[0]) / (np - 1) as f64;
        let mut acc = 0.0;
        for i in 0..nx {
            let wx = if i == 0 || i == nx - 1 { 0.5 } else { 1.0 };
            for j in 0..np {
                let wp = if j == 0 || j == np - 1 { 0.5 } else { 1.0 };
                acc += wx * wp * self.values[i][j];
            }
        }
        acc * dx * dp
    }

    /// Writes `x,p,w` rows, x-major.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,p,w")?;
        for (i, x) in self.x_axis.iter().enumerate() {
            for (j, p) in self.p_axis.iter().enumerate() {
                writeln!(w, "{},{},{}", x, p, self.values[i][j])?;
            }
        }
        Ok(())
    }
}

/// Displacement matrix element `<bra|D(beta)|ket>` through the generalized
/// Laguerre closed form. `sqrt_fact[k] = sqrt(k!)`.
fn displacement_element(bra: usize, ket: usize, beta: Complex64, sqrt_fact: &[f64]) -> Complex64 {
    let b2 = beta.norm_sqr();
    let gauss = (-b2 / 2.0).exp();
    let (lo, hi, power) = if bra >= ket {
        (ket, bra, beta.powu((bra - ket) as u32))
    } else {
        (bra, ket, (-beta.conj()).powu((ket - bra) as u32))
    };
    let order = hi - lo;
    let ratio = sqrt_fact[lo] / sqrt_fact[hi];
    ratio * power * gauss * laguerre(lo, order as f64, b2)
}

/// Generalized Laguerre polynomial `L_k^{(a)}(z)` by the three-term
/// recurrence.
fn laguerre(k: usize, a: f64, z: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let mut prev = 1.0;
    let mut curr = 1.0 + a - z;
    for j in 1..k {
        let jf = j as f64;
        let next = ((2.0 * jf + 1.0 + a - z) * curr - (jf + a) * prev) / (jf + 1.0);
        prev = curr;
        curr = next;
    }
    curr
}

/// Wigner function at a single phase-space point, with `alpha = (x + i p)/sqrt(2)`.
pub fn wigner_point(rho: &DensityMatrix, x: f64, p: f64) -> Result<f64> {
    rho.require_modes(1)?;
    let dim = rho.dim();
    let sqrt_fact = sqrt_factorials(dim);
    let beta = Complex64::new(x, p) * std::f64::consts::SQRT_2;
    Ok(wigner_point_inner(rho, beta, &sqrt_fact))
}

fn sqrt_factorials(dim: usize) -> Vec<f64> {
    let mut sf = vec![1.0; dim];
    for k in 1..dim {
        sf[k] = sf[k - 1] * (k as f64).sqrt();
    }
    sf
}

/// `W = (1/pi) sum_{m,n} rho_mn (-1)^m <n|D(beta)|m>`, the displaced-parity
/// expectation with `D(alpha) P D(alpha)† = D(2 alpha) P`.
fn wigner_point_inner(rho: &DensityMatrix, beta: Complex64, sqrt_fact: &[f64]) -> f64 {
    let dim = rho.dim();
    let mut acc = 0.0;
    for m in 0..dim {
        let sign_m = if m % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign_m * rho.element(m, m).re * displacement_element(m, m, beta, sqrt_fact).re;
        for n in (m + 1)..dim {
            let sign_n = if n % 2 == 0 { 1.0 } else { -1.0 };
            let term = rho.element(m, n) * sign_m * displacement_element(n, m, beta, sqrt_fact)
                + rho.element(n, m) * sign_n * displacement_element(m, n, beta, sqrt_fact);
            acc += term.re;
        }
    }
    acc / std::f64::consts::PI
}

/// Wigner function over a grid.
pub fn wigner(rho: &DensityMatrix, grid: &GridSpec) -> Result<WignerGrid> {
    rho.require_modes(1)?;
    grid.validate()?;
    let dim = rho.dim();
    let sqrt_fact = sqrt_factorials(dim);
    let x_axis: Vec<f64> = (0..grid.nx)
        .map(|i| grid.x_min + (grid.x_max - grid.x_min) * i as f64 / (grid.nx - 1) as f64)
        .collect();
    let p_axis: Vec<f64> = (0..grid.np)
        .map(|j| grid.p_min + (grid.p_max - grid.p_min) * j as f64 / (grid.np - 1) as f64)
        .collect();
    let values: Vec<Vec<f64>> = x_axis
        .iter()
        .map(|&x| {
            p_axis
                .iter()
                .map(|&p| {
                    let beta = Complex64::new(x, p) * std::f64::consts::SQRT_2;
                    wigner_point_inner(rho, beta, &sqrt_fact)
                })
                .collect()
        })
        .collect();

    let mut boundary_max: f64 = 0.0;
    for i in 0..grid.nx {
        boundary_max = boundary_max
            .max(values[i][0].abs())
            .max(values[i][grid.np - 1].abs());
    }
    for j in 0..grid.np {
        boundary_max = boundary_max
            .max(values[0][j].abs())
            .max(values[grid.nx - 1][j].abs());
    }
    Ok(WignerGrid {
        x_axis,
        p_axis,
        values,
        boundary_warning: boundary_max > 1e-4,
    })
}

// ── Generalized efficiency ──────────────────────────────────────────────────

/// Generalized efficiency `rho11 / (1 - |rho01|^2 / rho11)` of a single-rail
/// qubit: the smallest loss-channel transmissivity that could have produced
/// the state. Photon-number terms above one are ignored. Defined as 0 for a
/// vacuum state.
pub fn generalized_efficiency(rho: &DensityMatrix) -> Result<f64> {
    rho.require_modes(1)?;
    let rho11 = rho.element(1, 1).re;
    if rho11 <= 0.0 {
        return Ok(0.0);
    }
    let coherence = rho.element(0, 1).norm_sqr();
    let denominator = 1.0 - coherence / rho11;
    if denominator <= 0.0 {
        return Err(Error::InvalidQubitState(denominator));
    }
    Ok(rho11 / denominator)
}

// ── Theory curves ───────────────────────────────────────────────────────────

/// One operating point of the model scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub added_rate_khz: f64,
    pub rho11: f64,
    pub rho01_mag: f64,
    pub efficiency: f64,
}

/// Header of the curve CSV format.
pub const CURVE_CSV_HEADER: &str = "added_rate_khz,rho11,rho01_mag,efficiency";

/// Writes curve points as CSV.
pub fn write_curves_csv<W: Write>(mut w: W, points: &[CurvePoint]) -> Result<()> {
    writeln!(w, "{CURVE_CSV_HEADER}")?;
    for p in points {
        writeln!(
            w,
            "{},{},{},{}",
            p.added_rate_khz, p.rho11, p.rho01_mag, p.efficiency
        )?;
    }
    Ok(())
}

/// The modeled signal state at one operating point: source model, heralding,
/// signal loss, and optionally the coherence factor.
pub fn model_state(
    params: &ModelParams,
    model: SourceModel,
    with_coherence_factor: bool,
    dim: usize,
    squeezer: Option<&TwoModeSqueezer>,
) -> Result<DensityMatrix> {
    let bare = match model {
        SourceModel::FirstOrder => first_order_qubit(params)?.to_density(),
        SourceModel::Exact => {
            let state = match squeezer {
                Some(sq) => {
                    if sq.dim() != dim {
                        return Err(Error::DimensionMismatch {
                            left: sq.dim(),
                            right: dim,
                        });
                    }
                    sq.evolve(params)?
                }
                None => TwoModeSqueezer::new(dim)?.evolve(params)?,
            };
            herald(&state.to_density(), params.eta_idler)?.signal_state
        }
    };
    let lossy = apply_loss(&bare, params.eta_signal)?;
    if with_coherence_factor {
        apply_coherence_factor(&lossy, params.coherence_factor)
    } else {
        Ok(lossy)
    }
}

/// Sweeps the added idler count rate and reports the matrix elements and
/// efficiency of the modeled state at each point.
pub fn theory_curves(
    params: &ModelParams,
    rate_grid_khz: &[f64],
    model: SourceModel,
    with_coherence_factor: bool,
    dim: usize,
) -> Result<Vec<CurvePoint>> {
    params.validate()?;
    if rate_grid_khz.is_empty() {
        return Err(Error::parameter("rate_grid", "empty grid"));
    }
    let squeezer = match model {
        SourceModel::Exact => Some(TwoModeSqueezer::new(dim)?),
        SourceModel::FirstOrder => None,
    };
    rate_grid_khz
        .iter()
        .map(|&rate| {
            let alpha = alpha_for_added_rate(params, rate)?;
            let point_params = params.with_alpha(alpha);
            let state = model_state(
                &point_params,
                model,
                with_coherence_factor,
                dim,
                squeezer.as_ref(),
            )?;
            Ok(CurvePoint {
                added_rate_khz: rate,
                rho11: state.element(1, 1).re,
                rho01_mag: state.element(0, 1).norm(),
                efficiency: generalized_efficiency(&state)?,
            })
        })
        .collect()
}

// ── Model fitting ───────────────────────────────────────────────────────────

/// Which model parameters a fit may vary.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitMask {
    pub r: bool,
    pub eta_signal: bool,
    pub eta_idler: bool,
    pub coherence_factor: bool,
}

impl FitMask {
    fn count(&self) -> usize {
        [self.r, self.eta_signal, self.eta_idler, self.coherence_factor]
            .iter()
            .filter(|&&b| b)
            .count()
    }
}

/// Fit result: best parameters, residual sum of squares, and bookkeeping.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub params: ModelParams,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Box constraints per free parameter, in mask order.
fn bounds(mask: &FitMask) -> Vec<(f64, f64)> {
    let mut b = Vec::new();
    if mask.r {
        b.push((1e-6, 0.499));
    }
    if mask.eta_signal {
        b.push((1e-6, 1.0));
    }
    if mask.eta_idler {
        b.push((1e-6, 1.0));
    }
    if mask.coherence_factor {
        b.push((0.0, 1.0));
    }
    b
}

fn pack(params: &ModelParams, mask: &FitMask) -> Vec<f64> {
    let mut x = Vec::new();
    if mask.r {
        x.push(params.r);
    }
    if mask.eta_signal {
        x.push(params.eta_signal);
    }
    if mask.eta_idler {
        x.push(params.eta_idler);
    }
    if mask.coherence_factor {
        x.push(params.coherence_factor);
    }
    x
}

fn unpack(base: &ModelParams, mask: &FitMask, x: &[f64]) -> ModelParams {
    let mut params = *base;
    let mut it = x.iter();
    if mask.r {
        params.r = *it.next().unwrap();
    }
    if mask.eta_signal {
        params.eta_signal = *it.next().unwrap();
    }
    if mask.eta_idler {
        params.eta_idler = *it.next().unwrap();
    }
    if mask.coherence_factor {
        params.coherence_factor = *it.next().unwrap();
    }
    params
}

/// Least-squares fit of the free model parameters to measured curve points,
/// by bounded Nelder-Mead on the summed squared residuals of
/// `(rho11, |rho01|)`.
pub fn fit_model(
    data: &[CurvePoint],
    free: &FitMask,
    init: &ModelParams,
    model: SourceModel,
    with_coherence_factor: bool,
    dim: usize,
) -> Result<FitReport> {
    if data.len() < 4 {
        return Err(Error::parameter("data", "need at least 4 curve points"));
    }
    if free.count() == 0 {
        return Err(Error::parameter("free", "empty parameter mask"));
    }
    init.validate()?;
    let rates: Vec<f64> = data.iter().map(|p| p.added_rate_khz).collect();
    let squeezer = match model {
        SourceModel::Exact => Some(TwoModeSqueezer::new(dim)?),
        SourceModel::FirstOrder => None,
    };
    let box_bounds = bounds(free);

    let objective = |x: &[f64]| -> f64 {
        for (&value, &(lo, hi)) in x.iter().zip(&box_bounds) {
            if !(value >= lo && value <= hi) {
                return f64::INFINITY;
            }
        }
        let params = unpack(init, free, x);
        if params.validate().is_err() {
            return f64::INFINITY;
        }
        let mut residual = 0.0;
        for (point, &rate) in data.iter().zip(&rates) {
            let alpha = match alpha_for_added_rate(&params, rate) {
                Ok(a) => a,
                Err(_) => return f64::INFINITY,
            };
            let state = match model_state(
                &params.with_alpha(alpha),
                model,
                with_coherence_factor,
                dim,
                squeezer.as_ref(),
            ) {
                Ok(s) => s,
                Err(_) => return f64::INFINITY,
            };
            residual += (state.element(1, 1).re - point.rho11).powi(2);
            residual += (state.element(0, 1).norm() - point.rho01_mag).powi(2);
        }
        residual
    };

    let x0 = pack(init, free);
    let result = nelder_mead(&objective, &x0, 400 * x0.len());
    Ok(FitReport {
        params: unpack(init, free, &result.x),
        residual: result.f,
        iterations: result.iterations,
        converged: result.converged,
    })
}

struct SimplexResult {
    x: Vec<f64>,
    f: f64,
    iterations: usize,
    converged: bool,
}

/// Bare-bones Nelder-Mead with standard coefficients. The best vertex never
/// worsens, so accepted steps decrease the objective monotonically.
fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], max_iter: usize) -> SimplexResult {
    const ALPHA: f64 = 1.0; // reflection
    const GAMMA: f64 = 2.0; // expansion
    const BETA: f64 = 0.5; // contraction
    const SIGMA: f64 = 0.5; // shrink
    const FTOL: f64 = 1e-14;

    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        let step = if v[i].abs() > 1e-8 { 0.1 * v[i] } else { 0.05 };
        v[i] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = (values[n] - values[0]).abs();
        if spread <= FTOL * (1.0 + values[0].abs()) {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|v| v[k]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let reflect: Vec<f64> = (0..n)
            .map(|k| centroid[k] + ALPHA * (centroid[k] - worst[k]))
            .collect();
        let f_reflect = f(&reflect);

        if f_reflect < values[0] {
            let expand: Vec<f64> = (0..n)
                .map(|k| centroid[k] + GAMMA * (reflect[k] - centroid[k]))
                .collect();
            let f_expand = f(&expand);
            if f_expand < f_reflect {
                simplex[n] = expand;
                values[n] = f_expand;
            } else {
                simplex[n] = reflect;
                values[n] = f_reflect;
            }
        } else if f_reflect < values[n - 1] {
            simplex[n] = reflect;
            values[n] = f_reflect;
        } else {
            let contract: Vec<f64> = (0..n)
                .map(|k| centroid[k] + BETA * (worst[k] - centroid[k]))
                .collect();
            let f_contract = f(&contract);
            if f_contract < values[n] {
                simplex[n] = contract;
                values[n] = f_contract;
            } else {
                for i in 1..=n {
                    for k in 0..n {
                        simplex[i][k] = simplex[0][k] + SIGMA * (simplex[i][k] - simplex[0][k]);
                    }
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }

    let best = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    SimplexResult {
        x: simplex[best].clone(),
        f: values[best],
        iterations,
        converged,
    }
}
