//! Ground-truth computations used to validate the estimator.
//!
//! * [`induced_theta`]: mean of `μ` over the part of a circle of radius `r`
//!   that falls in one assignment region, weighted by the score density. This
//!   is the conditional expectation given the distance that the univariate fit
//!   actually targets.
//! * [`bias_functionals`] / [`fixed_h_bias`]: exact population bias of the
//!   side-1 local polynomial fit at `(s, 0)` when `μ₁(x) = x₂`, `μ₀ = 0`, the
//!   first quadrant is treated and the scores are locally uniform. The
//!   boundary has a kink at the origin, which produces a bias linear in `h`.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{AssignmentRule, Point, Side};
use crate::kernel::{check_bandwidth, Kernel};
use crate::quadrature::{integrate_vec, integrate_vec_breaks, Tolerance};
use crate::simulation::DgpSpec;

const ARC_SAMPLES: usize = 720;
const ANGLE_TOL: f64 = 1e-12;
const ARC_TOL: Tolerance = Tolerance::new(1e-14, 1e-12);
const BIAS_TOL: Tolerance = Tolerance::new(1e-14, 1e-12);

/// A circle around a boundary point together with the population pieces
/// needed to average over it.
pub struct ArcScene<'a> {
    pub center: Point,
    pub radius: f64,
    pub rule: &'a AssignmentRule,
    pub mean: &'a dyn Fn(Point) -> f64,
    pub density: &'a dyn Fn(Point) -> f64,
}

impl ArcScene<'_> {
    fn at(&self, angle: f64) -> Point {
        Point::new(
            self.center.x1 + self.radius * angle.cos(),
            self.center.x2 + self.radius * angle.sin(),
        )
    }

    fn on_side(&self, angle: f64, side: Side) -> bool {
        self.rule.side_of(self.at(angle)) == side
    }

    /// Angular intervals `(start, end)` (with `end > start`, possibly beyond
    /// `2π`) on which the circle lies on `side`.
    pub fn admissible_arcs(&self, side: Side) -> Vec<(f64, f64)> {
        let step = TAU / ARC_SAMPLES as f64;
        let inside: Vec<bool> = (0..ARC_SAMPLES)
            .map(|k| self.on_side(k as f64 * step, side))
            .collect();
        if inside.iter().all(|&b| b) {
            return vec![(0.0, TAU)];
        }
        if !inside.iter().any(|&b| b) {
            return Vec::new();
        }
        let mut starts = Vec::new();
        let mut ends = Vec::new();
        for k in 0..ARC_SAMPLES {
            let next = (k + 1) % ARC_SAMPLES;
            if inside[k] == inside[next] {
                continue;
            }
            let (mut lo, mut hi) = (k as f64 * step, (k + 1) as f64 * step);
            while hi - lo > ANGLE_TOL {
                let mid = 0.5 * (lo + hi);
                if self.on_side(mid, side) == inside[k] {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let edge = 0.5 * (lo + hi);
            if inside[k] {
                ends.push(edge);
            } else {
                starts.push(edge);
            }
        }
        // pair every start with the first end that follows it (cyclically)
        starts
            .into_iter()
            .map(|s| {
                let e = ends
                    .iter()
                    .map(|&e| if e > s { e } else { e + TAU })
                    .fold(f64::INFINITY, f64::min);
                (s, e)
            })
            .collect()
    }
}

/// Density-weighted average of `μ` over the part of the circle on `side`.
pub fn induced_theta(scene: &ArcScene<'_>, side: Side) -> Result<f64> {
    if !(scene.radius > 0.0 && scene.radius.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "radius {} must be positive",
            scene.radius
        )));
    }
    let no_mass = || Error::NoMass {
        x1: scene.center.x1,
        x2: scene.center.x2,
        radius: scene.radius,
    };
    let arcs = scene.admissible_arcs(side);
    if arcs.is_empty() {
        return Err(no_mass());
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in arcs {
        let est = integrate_vec(
            |t, out: &mut [f64]| {
                let p = scene.at(t);
                let f = (scene.density)(p);
                out[0] = (scene.mean)(p) * f;
                out[1] = f;
            },
            2,
            a,
            b,
            ARC_TOL,
        )?;
        num += est.value[0];
        den += est.value[1];
    }
    if !(den > 0.0) {
        return Err(no_mass());
    }
    Ok(num / den)
}

/// Closed form of the induced conditional expectation for `μ₁ = x₂`, the
/// first quadrant treated, uniform scores, centre `(s, 0)` and radius `r`.
pub fn first_quadrant_theta(s: f64, r: f64) -> f64 {
    if r <= s {
        2.0 * r / PI
    } else {
        (r + s) / (PI - (s / r).acos())
    }
}

/// Angular measure of the treated part of the circle of radius `u` around
/// `(s, 0)`, and the integral of `sin θ` over it.
///
/// Negative `s` places the centre on the control side of the vertical edge,
/// which extends the functionals continuously through `s = 0`.
fn treated_angles(s: f64, u: f64) -> (f64, f64) {
    if u <= s.abs() {
        if s > 0.0 {
            (PI, 2.0)
        } else {
            (0.0, 0.0)
        }
    } else {
        let c = (s / u).clamp(-1.0, 1.0);
        (PI - c.acos(), 1.0 + c)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiasFunctionals {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub quadrature_error: f64,
}

/// Integrates `K(u) · angle-weights · basis` over `u ∈ [0, 1]`, with a
/// panel break and a square-root substitution at `u = |s|`.
fn radial_integrals(
    kernel: Kernel,
    p: usize,
    s: f64,
    scale: f64,
) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
    let dim = p + 1;
    let n_a = dim * dim;
    let total = n_a + dim;
    // u is in bandwidth units; the radius in score units is `scale · u`
    let integrand = |u: f64, jac: f64, out: &mut [f64]| {
        let radius = scale * u;
        let (len, sin_int) = treated_angles(s, radius);
        let w = kernel.eval(u) / (scale * scale) * jac;
        let mut r = vec![1.0; dim];
        for j in 1..dim {
            r[j] = r[j - 1] * u;
        }
        for j in 0..dim {
            for k in 0..dim {
                out[j * dim + k] = len * r[j] * r[k] * w * radius * scale;
            }
            out[n_a + j] = sin_int * r[j] * w * radius * radius * scale;
        }
    };
    let edge = (s.abs() / scale).min(1.0);
    let mut sum = vec![0.0; total];
    let mut err = 0.0;
    if edge > 0.0 {
        let inner = integrate_vec(|u, out: &mut [f64]| integrand(u, 1.0, out), total, 0.0, edge, BIAS_TOL)?;
        for (acc, v) in sum.iter_mut().zip(&inner.value) {
            *acc += v;
        }
        err += inner.max_error();
    }
    if edge < 1.0 {
        // u = edge + v², smoothing the arccos square-root edge
        let span = (1.0 - edge).sqrt();
        let outer = integrate_vec_breaks(
            |v, out: &mut [f64]| integrand(edge + v * v, 2.0 * v, out),
            total,
            &[0.0, 0.5 * span, span],
            BIAS_TOL,
        )?;
        for (acc, v) in sum.iter_mut().zip(&outer.value) {
            *acc += v;
        }
        err += outer.max_error();
    }
    let a = DMatrix::from_fn(dim, dim, |j, k| sum[j * dim + k]);
    let b = DVector::from_fn(dim, |j, _| sum[n_a + j]);
    Ok((a, b, err))
}

/// `A(s)` and `B(s)` at unit bandwidth.
pub fn bias_functionals(kernel: Kernel, p: usize, s: f64) -> Result<BiasFunctionals> {
    if !s.is_finite() {
        return Err(Error::InvalidInput(format!("s = {s} is not finite")));
    }
    let (a, b, quadrature_error) = radial_integrals(kernel, p, s, 1.0)?;
    Ok(BiasFunctionals {
        a,
        b,
        quadrature_error,
    })
}

fn first_of_solution(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<f64> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Degenerate("bias functional A is singular".into()))?;
    Ok(chol.solve(b)[0])
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiasOracleResult {
    /// `A(s/h)`.
    pub a: DMatrix<f64>,
    /// `B(s/h)`.
    pub b: DVector<f64>,
    /// `h · e₁ᵀA(s/h)⁻¹B(s/h)`.
    pub bias: f64,
    pub quadrature_error: f64,
}

/// Bias at `(s, 0)` for bandwidth `h`, obtained from the unit-bandwidth
/// functionals through `bias(h, s) = h · bias(1, s/h)`.
pub fn bias_oracle(kernel: Kernel, p: usize, h: f64, s: f64) -> Result<BiasOracleResult> {
    check_bandwidth(h)?;
    let f = bias_functionals(kernel, p, s / h)?;
    let bias = h * first_of_solution(&f.a, &f.b)?;
    Ok(BiasOracleResult {
        a: f.a,
        b: f.b,
        bias,
        quadrature_error: f.quadrature_error,
    })
}

/// Bias at `(s, 0)` computed directly from the bandwidth-`h` population gram
/// matrix and moment vector (no rescaling). `μ₁(s, 0) = 0`, so no offset is
/// subtracted; the control-side bias is identically zero in this design.
pub fn fixed_h_bias(kernel: Kernel, p: usize, h: f64, s: f64) -> Result<f64> {
    check_bandwidth(h)?;
    if !s.is_finite() {
        return Err(Error::InvalidInput(format!("s = {s} is not finite")));
    }
    let (a, b, _) = radial_integrals(kernel, p, s, h)?;
    first_of_solution(&a, &b)
}

/// Slope of `bias(1, ·)` at the kink for `p ≥ 1`: `2/π − 4/π²`.
pub fn kink_bias_slope() -> f64 {
    2.0 / PI - 4.0 / (PI * PI)
}

/// `τ(x)` for the linear potential-outcome model.
pub fn population_tau(dgp: &DgpSpec, x: Point) -> f64 {
    let (b0, b1) = (dgp.beta0, dgp.beta1);
    (b1[0] - b0[0]) + x.x1 * (b1[1] - b0[1]) + x.x2 * (b1[2] - b0[2])
}
