//! Residual-based covariance of the effect estimates across boundary points.
//!
//! For two fits at `x₁`, `x₂` on side `t`,
//!
//! ```text
//! Υ̂ = h² Eₙ[ r_p(D(x₁)/h) K_h(D(x₁)) ê(x₁) · r_p(D(x₂)/h)ᵀ K_h(D(x₂)) ê(x₂) ]
//! Ξ̂ₜ = (n h²)⁻¹ e₁ᵀ Ψ̂⁻¹(x₁) Υ̂ Ψ̂⁻¹(x₂) e₁
//! ```
//!
//! The surface over a grid is assembled from the equivalent per-observation
//! influence form `Ξ̂ₜ = n⁻² Σᵢ ψᵢ(x₁) ψᵢ(x₂)`, where
//! `ψᵢ(x) = e₁ᵀΨ̂⁻¹(x) r_p(Dᵢ/h) K_h(Dᵢ) êᵢ(x)`. The `h²` factors cancel in that
//! form, so it also covers grids whose points use different bandwidths.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Point, Side};
use crate::locpoly::{PointFit, SideFit};

/// Default eigenvalue floor for the correlation regularisation.
pub const DEFAULT_EIGEN_FLOOR: f64 = 1e-10;

fn check_pairing(a: &PointFit, b: &PointFit) -> Result<()> {
    if a.n() != b.n() {
        return Err(Error::InvalidPairing(format!(
            "sample sizes differ ({} vs {})",
            a.n(),
            b.n()
        )));
    }
    if a.h != b.h {
        return Err(Error::InvalidPairing(format!(
            "bandwidths differ ({} vs {})",
            a.h, b.h
        )));
    }
    if a.kernel != b.kernel || a.order != b.order {
        return Err(Error::InvalidPairing(
            "fits use different kernels or polynomial orders".into(),
        ));
    }
    Ok(())
}

/// Walks the observations weighted in both side fits (sorted-merge on index).
fn for_common_support(a: &SideFit, b: &SideFit, mut f: impl FnMut(usize, usize)) {
    let (mut i, mut j) = (0, 0);
    while i < a.support.len() && j < b.support.len() {
        let (ia, ib) = (a.support[i].index, b.support[j].index);
        match ia.cmp(&ib) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                f(i, j);
                i += 1;
                j += 1;
            }
        }
    }
}

/// `Υ̂ₜ(x₁, x₂)` as a `(p+1)×(p+1)` matrix.
pub fn upsilon(a: &PointFit, b: &PointFit, side: Side) -> Result<DMatrix<f64>> {
    check_pairing(a, b)?;
    let (fa, fb) = (a.side(side), b.side(side));
    let dim = a.order + 1;
    let h = a.h;
    let mut out = DMatrix::zeros(dim, dim);
    for_common_support(fa, fb, |i, j| {
        let (oa, ob) = (&fa.support[i], &fb.support[j]);
        let scale = oa.weight * ob.weight * oa.residual * ob.residual;
        let mut pa = 1.0;
        for r in 0..dim {
            let mut pb = 1.0;
            for c in 0..dim {
                out[(r, c)] += pa * pb * scale;
                pb *= ob.u;
            }
            pa *= oa.u;
        }
    });
    out *= h * h / a.n() as f64;
    Ok(out)
}

/// `Ξ̂ₜ(x₁, x₂)` via the sandwich formula.
pub fn xi_side(a: &PointFit, b: &PointFit, side: Side) -> Result<f64> {
    let ups = upsilon(a, b, side)?;
    let (ga, gb) = (&a.side(side).gram_inv_e1, &b.side(side).gram_inv_e1);
    let n = a.n() as f64;
    Ok((ga.transpose() * ups * gb)[(0, 0)] / (n * a.h * a.h))
}

/// `Ξ̂(x₁, x₂) = Ξ̂₀ + Ξ̂₁`.
pub fn xi_pair(a: &PointFit, b: &PointFit) -> Result<f64> {
    Ok(xi_side(a, b, Side::Control)? + xi_side(a, b, Side::Treated)?)
}

/// Influence values of one point fit, per side.
#[derive(Clone, Debug)]
struct Influence {
    eval_pt: Point,
    h: f64,
    sides: [Vec<(usize, f64)>; 2],
}

impl Influence {
    fn of(fit: &PointFit) -> Self {
        Self {
            eval_pt: fit.eval_pt,
            h: fit.h,
            sides: [fit.control.influence(), fit.treated.influence()],
        }
    }
}

fn influence_cross(a: &Influence, b: &Influence, n: usize) -> f64 {
    // kernel supports are discs of radius h; disjoint discs share no observation
    let gap = (a.eval_pt.x1 - b.eval_pt.x1).hypot(a.eval_pt.x2 - b.eval_pt.x2);
    if gap > a.h + b.h {
        return 0.0;
    }
    let mut total = 0.0;
    for t in 0..2 {
        let (la, lb) = (&a.sides[t], &b.sides[t]);
        let (mut i, mut j) = (0, 0);
        while i < la.len() && j < lb.len() {
            match la[i].0.cmp(&lb[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    total += la[i].1 * lb[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
    }
    let n = n as f64;
    total / (n * n)
}

/// Variance `Ξ̂(x, x)` of a single point fit.
pub fn point_variance(fit: &PointFit) -> f64 {
    let inf = Influence::of(fit);
    influence_cross(&inf, &inf, fit.n())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Regularization {
    /// Whether any eigenvalue was raised to the floor.
    pub applied: bool,
    pub eigen_floor: f64,
    /// Smallest eigenvalue of the raw correlation matrix.
    pub min_raw_eigenvalue: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceSurface {
    pub points: Vec<Point>,
    pub xi: DMatrix<f64>,
    /// Regularised correlation matrix.
    pub corr: DMatrix<f64>,
    /// Square-root factor with `factor · factorᵀ = corr`.
    pub factor: DMatrix<f64>,
    pub regularization: Regularization,
}

impl CovarianceSurface {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn se(&self, k: usize) -> f64 {
        self.xi[(k, k)].sqrt()
    }
}

/// Fills `Ξ̂` for every pair of grid fits, stores each point's variance in
/// its `xi_hat`, and regularises the implied correlation matrix.
pub fn build_surface(fits: &mut [PointFit], eigen_floor: f64) -> Result<CovarianceSurface> {
    let m = fits.len();
    if m == 0 {
        return Err(Error::InvalidInput("no grid fits".into()));
    }
    let n = fits[0].n();
    if let Some(f) = fits.iter().find(|f| f.n() != n) {
        return Err(Error::InvalidPairing(format!(
            "grid fits use samples of size {n} and {}",
            f.n()
        )));
    }
    let influence: Vec<Influence> = fits.par_iter().map(Influence::of).collect();
    let upper: Vec<(usize, usize, f64)> = (0..m)
        .into_par_iter()
        .flat_map_iter(|k| {
            let influence = &influence;
            (k..m).map(move |l| (k, l, influence_cross(&influence[k], &influence[l], n)))
        })
        .collect();
    let mut xi = DMatrix::zeros(m, m);
    for (k, l, v) in upper {
        xi[(k, l)] = v;
        xi[(l, k)] = v;
    }
    for (k, fit) in fits.iter_mut().enumerate() {
        let v = xi[(k, k)];
        if !(v > 0.0) {
            return Err(Error::DegenerateVariance { index: k, value: v });
        }
        fit.xi_hat = Some(v);
    }
    let sd: Vec<f64> = (0..m).map(|k| xi[(k, k)].sqrt()).collect();
    let raw_corr = DMatrix::from_fn(m, m, |k, l| {
        if k == l {
            1.0
        } else {
            xi[(k, l)] / (sd[k] * sd[l])
        }
    });
    let (corr, factor, regularization) = regularize(&raw_corr, eigen_floor);
    Ok(CovarianceSurface {
        points: fits.iter().map(|f| f.eval_pt).collect(),
        xi,
        corr,
        factor,
        regularization,
    })
}

/// Eigenvalue clipping at `floor` followed by re-normalisation to unit
/// diagonal. Returns the matrix, a square-root factor of it, and what was done.
pub fn regularize(
    corr: &DMatrix<f64>,
    floor: f64,
) -> (DMatrix<f64>, DMatrix<f64>, Regularization) {
    let eig = SymmetricEigen::new(corr.clone());
    let min_raw = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let applied = min_raw < floor;
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let mut factor = eig.eigenvectors.clone();
    for (c, l) in clipped.iter().enumerate() {
        factor.column_mut(c).scale_mut(l.sqrt());
    }
    let reg = Regularization {
        applied,
        eigen_floor: floor,
        min_raw_eigenvalue: min_raw,
    };
    if !applied {
        return (corr.clone(), factor, reg);
    }
    let rebuilt = &factor * factor.transpose();
    let scale: Vec<f64> = (0..corr.nrows()).map(|k| rebuilt[(k, k)].sqrt().recip()).collect();
    for (r, s) in scale.iter().enumerate() {
        factor.row_mut(r).scale_mut(*s);
    }
    let m = corr.nrows();
    let out = DMatrix::from_fn(m, m, |k, l| {
        if k == l {
            1.0
        } else {
            rebuilt[(k, l)] * scale[k] * scale[l]
        }
    });
    (out, factor, reg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::geometry::{AssignmentRule, Euclidean};
    use crate::kernel::{build_distance_column, DistanceColumn, Kernel};
    use crate::locpoly::{basis, fit_point, fit_point_from_column};
    use crate::sample::Sample;

    /// Treated observations at D = {0.2, 0.6} with Y = {1, 3}; the control
    /// side is a constant so it contributes nothing.
    fn hand_fit() -> PointFit {
        let col = DistanceColumn::from_signed(Point::new(0.0, 0.0), vec![0.2, 0.6, -0.3, -0.5]);
        fit_point_from_column(&[1.0, 3.0, 0.0, 0.0], &col, Kernel::Uniform, 1.0, 0).unwrap()
    }

    #[test]
    fn hand_computed_upsilon_and_xi() {
        let f = hand_fit();
        assert_abs_diff_eq!(f.treated.intercept, 2.0, epsilon = 1e-15);
        // n = 4 here, so the average over two unit terms is 2/4
        let ups = upsilon(&f, &f, Side::Treated).unwrap();
        assert_abs_diff_eq!(ups[(0, 0)], 0.5, epsilon = 1e-15);
        // Ψ̂ = [2/4], so Ξ̂₁ = (1/4)·2·0.5·2
        assert_abs_diff_eq!(xi_side(&f, &f, Side::Treated).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(xi_side(&f, &f, Side::Control).unwrap(), 0.0, epsilon = 1e-15);

        // the two-observation version of the same example
        let col = DistanceColumn::from_signed(Point::new(0.0, 0.0), vec![0.2, 0.6]);
        let y = [1.0, 3.0];
        let t = crate::locpoly::fit_side(&y, &col, Side::Treated, Kernel::Uniform, 1.0, 0).unwrap();
        let mut pf = f.clone();
        pf.treated = t;
        pf.control.n = 2;
        pf.control.support.clear();
        let ups = upsilon(&pf, &pf, Side::Treated).unwrap();
        assert_abs_diff_eq!(ups[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(xi_side(&pf, &pf, Side::Treated).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn exact_polynomial_data_has_zero_variance() {
        let d = [0.1, 0.3, 0.45, 0.7, -0.2, -0.4, -0.8];
        let col = DistanceColumn::from_signed(Point::new(0.0, 0.0), d.to_vec());
        let y: Vec<f64> = d.iter().map(|v| 1.0 + 2.0 * v).collect();
        let f = fit_point_from_column(&y, &col, Kernel::Triangular, 1.0, 1).unwrap();
        let ups = upsilon(&f, &f, Side::Treated).unwrap();
        assert!(ups.iter().all(|v| v.abs() < 1e-20));
        assert_abs_diff_eq!(xi_pair(&f, &f).unwrap(), 0.0, epsilon = 1e-20);
    }

    #[test]
    fn doubling_deviations_quadruples_variance() {
        let f = hand_fit();
        let col = DistanceColumn::from_signed(Point::new(0.0, 0.0), vec![0.2, 0.6, -0.3, -0.5]);
        let g = fit_point_from_column(&[0.0, 4.0, 0.0, 0.0], &col, Kernel::Uniform, 1.0, 0).unwrap();
        assert_abs_diff_eq!(
            xi_pair(&g, &g).unwrap(),
            4.0 * xi_pair(&f, &f).unwrap(),
            epsilon = 1e-14
        );
    }

    fn noisy_sample(n: usize, seed: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let p = Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let jump = if p.x1 >= 0.0 && p.x2 >= 0.0 { 1.0 } else { 0.0 };
            y.push(jump + 0.5 * p.x1 + rng.random_range(-0.5..0.5));
            x.push(p);
        }
        Sample::new(y, x).unwrap()
    }

    #[test]
    fn sandwich_and_influence_forms_agree() {
        let s = noisy_sample(800, 3);
        let rule = AssignmentRule::first_quadrant();
        let pts = [Point::new(0.0, 0.2), Point::new(0.0, 0.0), Point::new(0.3, 0.0)];
        let mut fits: Vec<PointFit> = pts
            .iter()
            .map(|&b| fit_point(&s, b, &rule, &Euclidean, Kernel::Triangular, 0.5, 1).unwrap())
            .collect();
        let surface = build_surface(&mut fits, DEFAULT_EIGEN_FLOOR).unwrap();
        for k in 0..3 {
            for l in 0..3 {
                let direct = xi_pair(&fits[k], &fits[l]).unwrap();
                assert_abs_diff_eq!(surface.xi[(k, l)], direct, epsilon = 1e-12 * direct.abs().max(1e-6));
                // sandwich symmetry
                assert_abs_diff_eq!(direct, xi_pair(&fits[l], &fits[k]).unwrap(), epsilon = 1e-14);
            }
            assert_eq!(fits[k].xi_hat, Some(surface.xi[(k, k)]));
            assert_abs_diff_eq!(point_variance(&fits[k]), surface.xi[(k, k)], epsilon = 1e-18);
        }
        assert!(surface.xi[(0, 0)] > 0.0);
    }

    #[test]
    fn second_indicator_is_redundant_on_the_boundary() {
        let s = noisy_sample(600, 9);
        let rule = AssignmentRule::first_quadrant();
        let (b1, b2) = (Point::new(0.0, 0.15), Point::new(0.1, 0.0));
        let (h, p) = (0.6, 1);
        let f1 = fit_point(&s, b1, &rule, &Euclidean, Kernel::Triangular, h, p).unwrap();
        let f2 = fit_point(&s, b2, &rule, &Euclidean, Kernel::Triangular, h, p).unwrap();
        let c1 = build_distance_column(&s, b1, &rule, &Euclidean).unwrap();
        let c2 = build_distance_column(&s, b2, &rule, &Euclidean).unwrap();
        for side in Side::BOTH {
            let (g1, g2) = (f1.side(side).gamma.clone(), f2.side(side).gamma.clone());
            let mut single = DMatrix::zeros(p + 1, p + 1);
            for i in 0..s.len() {
                if c1.sides[i] != side {
                    continue;
                }
                let (u1, u2) = (c1.values[i] / h, c2.values[i] / h);
                let (r1, r2) = (basis(u1, p), basis(u2, p));
                let e1 = s.y()[i] - r1.dot(&g1);
                let e2 = s.y()[i] - r2.dot(&g2);
                let w = Kernel::Triangular.kh(c1.values[i], h).unwrap()
                    * Kernel::Triangular.kh(c2.values[i], h).unwrap();
                single += r1 * r2.transpose() * (w * e1 * e2);
            }
            single *= h * h / s.len() as f64;
            let both = upsilon(&f1, &f2, side).unwrap();
            assert!((single - both).amax() < 1e-14);
        }
    }

    #[test]
    fn mismatched_bandwidths_are_rejected() {
        let s = noisy_sample(300, 1);
        let rule = AssignmentRule::first_quadrant();
        let b = Point::new(0.0, 0.2);
        let a = fit_point(&s, b, &rule, &Euclidean, Kernel::Triangular, 0.5, 1).unwrap();
        let c = fit_point(&s, b, &rule, &Euclidean, Kernel::Triangular, 0.6, 1).unwrap();
        assert!(matches!(upsilon(&a, &c, Side::Treated), Err(Error::InvalidPairing(_))));
    }

    #[test]
    fn surface_edge_cases() {
        let s = noisy_sample(2000, 5);
        let rule = AssignmentRule::first_quadrant();
        let fit = |b| fit_point(&s, b, &rule, &Euclidean, Kernel::Triangular, 0.3, 1).unwrap();

        let mut one = vec![fit(Point::new(0.0, 0.3))];
        let surf = build_surface(&mut one, DEFAULT_EIGEN_FLOOR).unwrap();
        assert_eq!(surf.corr, DMatrix::from_element(1, 1, 1.0));
        assert_eq!(surf.xi[(0, 0)], one[0].xi_hat.unwrap());

        let mut far = vec![fit(Point::new(0.0, 0.9)), fit(Point::new(0.9, 0.0))];
        let surf = build_surface(&mut far, DEFAULT_EIGEN_FLOOR).unwrap();
        assert_eq!(surf.corr[(0, 1)], 0.0);

        let mut dup = vec![fit(Point::new(0.0, 0.3)), fit(Point::new(0.0, 0.3))];
        let surf = build_surface(&mut dup, DEFAULT_EIGEN_FLOOR).unwrap();
        assert_abs_diff_eq!(surf.corr[(0, 1)], 1.0, epsilon = 1e-9);
        assert!(surf.regularization.applied);
        let back = &surf.factor * surf.factor.transpose();
        assert!((back - &surf.corr).amax() < 1e-12);
    }

    #[test]
    fn regularization_yields_valid_correlation() {
        let bad = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0]);
        let (c, f, reg) = regularize(&bad, 1e-6);
        assert!(reg.applied && reg.min_raw_eigenvalue < 0.0);
        for k in 0..3 {
            assert_abs_diff_eq!(c[(k, k)], 1.0, epsilon = 1e-15);
        }
        assert!(c.iter().all(|v| v.abs() <= 1.0 + 1e-8));
        let min = SymmetricEigen::new(c.clone()).eigenvalues.min();
        assert!(min > 0.0);
        assert!((&f * f.transpose() - c).amax() < 1e-12);
    }
}
