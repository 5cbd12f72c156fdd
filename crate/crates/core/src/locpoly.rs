//! One-sided kernel-weighted local polynomial fits in the signed distance and
//! the treatment-effect estimate at a boundary point.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::{AssignmentRule, DistanceMetric, Point, Side};
use crate::kernel::{build_distance_column, check_bandwidth, DistanceColumn, Kernel};
use crate::sample::Sample;

/// Smallest admissible gram eigenvalue.
pub const MIN_GRAM_EIGENVALUE: f64 = 1e-10;

/// `(1, u, ..., u^p)`.
pub fn basis(u: f64, p: usize) -> DVector<f64> {
    let mut r = DVector::zeros(p + 1);
    fill_basis(u, r.as_mut_slice());
    r
}

#[inline]
fn fill_basis(u: f64, out: &mut [f64]) {
    let mut v = 1.0;
    for slot in out.iter_mut() {
        *slot = v;
        v *= u;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gram {
    pub matrix: DMatrix<f64>,
    pub min_eigenvalue: f64,
}

impl Gram {
    fn from_matrix(matrix: DMatrix<f64>) -> Self {
        let min_eigenvalue = SymmetricEigen::new(matrix.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        Self {
            matrix,
            min_eigenvalue,
        }
    }
}

/// An observation with positive kernel weight in a side fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupportObs {
    pub index: usize,
    /// Scaled distance `D / h`.
    pub u: f64,
    /// `K_h(D)`.
    pub weight: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SideFit {
    pub side: Side,
    pub order: usize,
    pub h: f64,
    /// Sample size used in the empirical averages (the full sample).
    pub n: usize,
    /// Coefficients on the scaled basis `r_p(D/h)`.
    pub gamma: DVector<f64>,
    pub intercept: f64,
    pub n_eff: usize,
    pub gram: Gram,
    /// `Ψ̂⁻¹ e₁`.
    pub gram_inv_e1: DVector<f64>,
    /// Weighted observations, sorted by index.
    pub support: Vec<SupportObs>,
}

impl SideFit {
    /// Coefficients on the raw basis `r_p(D)`.
    pub fn raw_coefficients(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.gamma.len(),
            self.gamma
                .iter()
                .enumerate()
                .map(|(j, g)| g / self.h.powi(j as i32)),
        )
    }

    /// Per-observation contribution `e₁ᵀΨ̂⁻¹ r_p(u) K_h ê` of the side fit.
    pub(crate) fn influence(&self) -> Vec<(usize, f64)> {
        let p = self.order;
        let mut r = vec![0.0; p + 1];
        self.support
            .iter()
            .map(|o| {
                fill_basis(o.u, &mut r);
                let lever: f64 = r.iter().zip(self.gram_inv_e1.iter()).map(|(a, b)| a * b).sum();
                (o.index, lever * o.weight * o.residual)
            })
            .collect()
    }
}

/// Kernel-weighted gram matrix of the scaled basis on side `side`, averaged
/// over the full sample.
pub fn gram(column: &DistanceColumn, side: Side, kernel: Kernel, h: f64, p: usize) -> Result<Gram> {
    check_bandwidth(h)?;
    let (matrix, _) = weighted_moments(column, None, side, kernel, h, p);
    Ok(Gram::from_matrix(matrix))
}

fn weighted_moments(
    column: &DistanceColumn,
    y: Option<&[f64]>,
    side: Side,
    kernel: Kernel,
    h: f64,
    p: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let dim = p + 1;
    let mut psi = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    let mut r = vec![0.0; dim];
    for (i, (&d, &s)) in column.values.iter().zip(&column.sides).enumerate() {
        if s != side {
            continue;
        }
        let w = kernel.kh_unchecked(d, h);
        if w == 0.0 {
            continue;
        }
        fill_basis(d / h, &mut r);
        for j in 0..dim {
            for k in j..dim {
                psi[(j, k)] += r[j] * r[k] * w;
            }
            if let Some(y) = y {
                rhs[j] += r[j] * w * y[i];
            }
        }
    }
    let n = column.len().max(1) as f64;
    for j in 0..dim {
        for k in j..dim {
            psi[(j, k)] /= n;
            psi[(k, j)] = psi[(j, k)];
        }
    }
    rhs /= n;
    (psi, rhs)
}

pub fn fit_side(
    y: &[f64],
    column: &DistanceColumn,
    side: Side,
    kernel: Kernel,
    h: f64,
    p: usize,
) -> Result<SideFit> {
    check_bandwidth(h)?;
    if y.len() != column.len() {
        return Err(Error::InvalidInput(format!(
            "{} outcomes for a distance column of length {}",
            y.len(),
            column.len()
        )));
    }
    let support_idx: Vec<usize> = (0..column.len())
        .filter(|&i| column.sides[i] == side && kernel.kh_unchecked(column.values[i], h) > 0.0)
        .collect();
    let n_eff = support_idx.len();
    if n_eff < p + 1 {
        return Err(Error::InsufficientData {
            side,
            n_eff,
            needed: p + 1,
        });
    }

    let (psi, rhs) = weighted_moments(column, Some(y), side, kernel, h, p);
    let gram = Gram::from_matrix(psi);
    if !(gram.min_eigenvalue >= MIN_GRAM_EIGENVALUE) {
        return Err(Error::SingularGram {
            side,
            min_eigenvalue: gram.min_eigenvalue,
        });
    }
    let chol = gram
        .matrix
        .clone()
        .cholesky()
        .ok_or(Error::SingularGram {
            side,
            min_eigenvalue: gram.min_eigenvalue,
        })?;
    let gamma = chol.solve(&rhs);
    let mut e1 = DVector::zeros(p + 1);
    e1[0] = 1.0;
    let gram_inv_e1 = chol.solve(&e1);

    let mut r = vec![0.0; p + 1];
    let support = support_idx
        .into_iter()
        .map(|i| {
            let d = column.values[i];
            let u = d / h;
            fill_basis(u, &mut r);
            let fitted: f64 = r.iter().zip(gamma.iter()).map(|(a, b)| a * b).sum();
            SupportObs {
                index: i,
                u,
                weight: kernel.kh_unchecked(d, h),
                residual: y[i] - fitted,
            }
        })
        .collect();

    Ok(SideFit {
        side,
        order: p,
        h,
        n: column.len(),
        intercept: gamma[0],
        gamma,
        n_eff,
        gram,
        gram_inv_e1,
        support,
    })
}

/// Both side fits at one boundary point and the effect estimate
/// `θ̂₁(0) − θ̂₀(0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointFit {
    pub eval_pt: Point,
    pub h: f64,
    pub kernel: Kernel,
    pub order: usize,
    pub control: SideFit,
    pub treated: SideFit,
    pub theta_hat: f64,
    /// Variance estimate; set by the covariance module.
    pub xi_hat: Option<f64>,
}

impl PointFit {
    pub fn side(&self, side: Side) -> &SideFit {
        match side {
            Side::Control => &self.control,
            Side::Treated => &self.treated,
        }
    }

    pub fn n(&self) -> usize {
        self.treated.n
    }

    pub fn se(&self) -> Option<f64> {
        self.xi_hat.map(f64::sqrt)
    }
}

pub fn fit_point_from_column(
    y: &[f64],
    column: &DistanceColumn,
    kernel: Kernel,
    h: f64,
    p: usize,
) -> Result<PointFit> {
    let control = fit_side(y, column, Side::Control, kernel, h, p)?;
    let treated = fit_side(y, column, Side::Treated, kernel, h, p)?;
    Ok(PointFit {
        eval_pt: column.eval_pt,
        h,
        kernel,
        order: p,
        theta_hat: treated.intercept - control.intercept,
        control,
        treated,
        xi_hat: None,
    })
}

pub fn fit_point(
    sample: &Sample,
    eval_pt: Point,
    rule: &AssignmentRule,
    metric: &dyn DistanceMetric,
    kernel: Kernel,
    h: f64,
    p: usize,
) -> Result<PointFit> {
    let column = build_distance_column(sample, eval_pt, rule, metric)?;
    fit_point_from_column(sample.y(), &column, kernel, h, p)
}
