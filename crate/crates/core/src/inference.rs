//! Pointwise confidence intervals and uniform confidence bands.
//!
//! Band critical values are the `(1 − α)` quantile of `max_k |Z_k|` for a
//! Gaussian vector with the regularised correlation of the grid estimates,
//! simulated in fixed-size chunks. Each chunk draws from its own ChaCha
//! stream, so the result does not depend on how chunks are scheduled.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::erf::{erfc, erfc_inv};

use crate::covariance::CovarianceSurface;
use crate::error::{Error, Result};
use crate::geometry::{Point, Polyline};
use crate::locpoly::PointFit;

pub const DEFAULT_BAND_DRAWS: usize = 10_000;
pub const MIN_BAND_DRAWS: usize = 1_000;
const CHUNK: usize = 1024;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Inverse standard normal CDF.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

fn check_level(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidLevel(alpha))
    }
}

/// `Φ⁻¹(1 − α/2)`.
pub fn pointwise_quantile(alpha: f64) -> Result<f64> {
    check_level(alpha)?;
    Ok(normal_quantile(1.0 - 0.5 * alpha))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntervalResult {
    pub eval_pt: Point,
    pub theta_hat: f64,
    pub se: f64,
    pub alpha: f64,
    pub quantile: f64,
    pub lower: f64,
    pub upper: f64,
}

impl IntervalResult {
    pub fn new(eval_pt: Point, theta_hat: f64, se: f64, alpha: f64, quantile: f64) -> Self {
        Self {
            eval_pt,
            theta_hat,
            se,
            alpha,
            quantile,
            lower: theta_hat - quantile * se,
            upper: theta_hat + quantile * se,
        }
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }
}

fn fit_se(fit: &PointFit) -> Result<f64> {
    match fit.xi_hat {
        Some(v) if v > 0.0 => Ok(v.sqrt()),
        Some(v) => Err(Error::DegenerateVariance { index: 0, value: v }),
        None => Err(Error::InvalidInput(
            "point fit has no variance estimate".into(),
        )),
    }
}

pub fn pointwise_ci(fit: &PointFit, alpha: f64) -> Result<IntervalResult> {
    let q = pointwise_quantile(alpha)?;
    Ok(IntervalResult::new(fit.eval_pt, fit.theta_hat, fit_se(fit)?, alpha, q))
}

/// Square-root factor of a correlation matrix, after checking it is one.
pub fn correlation_factor(corr: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = corr.nrows();
    if m == 0 || corr.ncols() != m {
        return Err(Error::NotPsd("matrix must be square and nonempty".into()));
    }
    for k in 0..m {
        if (corr[(k, k)] - 1.0).abs() > 1e-8 {
            return Err(Error::NotPsd(format!("diagonal entry {k} is {}", corr[(k, k)])));
        }
        for l in 0..k {
            if (corr[(k, l)] - corr[(l, k)]).abs() > 1e-10 {
                return Err(Error::NotPsd("matrix is not symmetric".into()));
            }
        }
    }
    let eig = SymmetricEigen::new(corr.clone());
    let min = eig.eigenvalues.min();
    if min < -1e-8 {
        return Err(Error::NotPsd(format!("negative eigenvalue {min:e}")));
    }
    let mut factor = eig.eigenvectors;
    for (c, l) in eig.eigenvalues.iter().enumerate() {
        factor.column_mut(c).scale_mut(l.max(0.0).sqrt());
    }
    Ok(factor)
}

/// Simulated `max_k |Z_k|` for `Z = factor · N(0, I)`, one value per draw,
/// in draw order.
pub fn simulate_sup_abs(factor: &DMatrix<f64>, num_draws: usize, seed: u64) -> Vec<f64> {
    let m = factor.ncols();
    let chunks = num_draws.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = CHUNK.min(num_draws - c * CHUNK);
            let mut z = DVector::zeros(m);
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                for v in z.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                let x = factor * &z;
                out.push(x.amax());
            }
            out
        })
        .collect()
}

/// Empirical quantile using the `ceil(level · N)`-th order statistic.
pub fn upper_order_statistic(mut values: Vec<f64>, level: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let k = ((level * n as f64).ceil() as usize).clamp(1, n);
    values[k - 1]
}

pub fn uniform_quantile_from_factor(
    factor: &DMatrix<f64>,
    alpha: f64,
    num_draws: usize,
    seed: u64,
) -> Result<f64> {
    check_level(alpha)?;
    if num_draws < MIN_BAND_DRAWS {
        return Err(Error::InvalidInput(format!(
            "band simulation needs at least {MIN_BAND_DRAWS} draws, got {num_draws}"
        )));
    }
    Ok(upper_order_statistic(
        simulate_sup_abs(factor, num_draws, seed),
        1.0 - alpha,
    ))
}

/// Critical value for a uniform band over a grid with correlation `corr`.
pub fn uniform_quantile(corr: &DMatrix<f64>, alpha: f64, num_draws: usize, seed: u64) -> Result<f64> {
    let factor = correlation_factor(corr)?;
    uniform_quantile_from_factor(&factor, alpha, num_draws, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BandResult {
    pub intervals: Vec<IntervalResult>,
    pub quantile: f64,
    pub num_draws: usize,
    pub seed: u64,
}

impl BandResult {
    pub fn covers_all(&self, truth: &[f64]) -> bool {
        self.intervals
            .iter()
            .zip(truth)
            .all(|(iv, &t)| iv.contains(t))
    }
}

pub fn uniform_band(
    fits: &[PointFit],
    surface: &CovarianceSurface,
    alpha: f64,
    num_draws: usize,
    seed: u64,
) -> Result<BandResult> {
    if fits.len() != surface.len() {
        return Err(Error::InvalidInput(format!(
            "{} fits for a surface over {} points",
            fits.len(),
            surface.len()
        )));
    }
    let q = uniform_quantile_from_factor(&surface.factor, alpha, num_draws, seed)?;
    let intervals = fits
        .iter()
        .map(|f| Ok(IntervalResult::new(f.eval_pt, f.theta_hat, fit_se(f)?, alpha, q)))
        .collect::<Result<_>>()?;
    Ok(BandResult {
        intervals,
        quantile: q,
        num_draws,
        seed,
    })
}

/// Default multiple of `h` for the local boundary-length warning.
pub const DEFAULT_PERIMETER_MULTIPLE: f64 = 20.0;

/// Boundary length within the kernel support exceeded `multiple · h`; the
/// band's regularity condition may fail at this point.
#[derive(Clone, Debug, PartialEq)]
pub struct PerimeterWarning {
    pub eval_pt: Point,
    pub h: f64,
    pub local_length: f64,
}

pub fn perimeter_check(
    boundary: &Polyline,
    eval_pt: Point,
    h: f64,
    multiple: f64,
) -> Option<PerimeterWarning> {
    let local_length = boundary.length_within(eval_pt, h);
    (local_length > multiple * h).then_some(PerimeterWarning {
        eval_pt,
        h,
        local_length,
    })
}
