//! Bandwidth rules: fixed, rule-of-thumb `Ĉ·n^{-1/4}`, an MSE-targeting
//! pilot, the kink-adaptive combination of the two, and the rescaling of a
//! univariate RD bandwidth.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::covariance::point_variance;
use crate::error::{Error, Result};
use crate::geometry::{Boundary, DistanceMetric, EvalGrid, Point, Polyline};
use crate::kernel::{build_distance_column, check_bandwidth, DistanceColumn, Kernel};
use crate::locpoly::fit_point_from_column;
use crate::sample::Sample;

pub const DEFAULT_CANDIDATES: usize = 15;
pub const DEFAULT_EXPONENT: f64 = 0.25;

/// Source of the constant `Ĉ` in the rule of thumb `c0 · Ĉ · n^{-exponent}`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RotScale {
    /// Per point, the pilot MSE bandwidth rescaled by `n^{1/(2p+4)}`.
    #[default]
    Pilot,
    /// Sample SD of the observations' distances to the boundary.
    BoundarySd,
}

impl FromStr for RotScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pilot" => Ok(RotScale::Pilot),
            "boundary-sd" => Ok(RotScale::BoundarySd),
            other => Err(Error::InvalidInput(format!("unknown rule-of-thumb scale `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum BandwidthRule {
    Fixed { h: f64 },
    /// `c0 · Ĉ · n^{-exponent}`.
    Rot {
        c0: f64,
        exponent: f64,
        #[serde(default)]
        scale: RotScale,
    },
    /// Per-point minimiser of the pilot MSE over `candidates` log-spaced values.
    Mse { candidates: usize },
    /// Pilot MSE bandwidth capped by the distance to the nearest kink and
    /// floored by the rule of thumb.
    Kink {
        c0: f64,
        exponent: f64,
        #[serde(default)]
        scale: RotScale,
        candidates: usize,
    },
}

impl BandwidthRule {
    pub fn name(&self) -> &'static str {
        match self {
            BandwidthRule::Fixed { .. } => "fixed",
            BandwidthRule::Rot { .. } => "rot",
            BandwidthRule::Mse { .. } => "mse",
            BandwidthRule::Kink { .. } => "kink",
        }
    }

    /// Builds a rule from its CLI name and the shared parameters.
    pub fn from_parts(name: &str, h: Option<f64>, c0: f64, exponent: f64, scale: RotScale) -> Result<Self> {
        let rule = match name {
            "fixed" => BandwidthRule::Fixed {
                h: h.ok_or_else(|| Error::InvalidInput("fixed bandwidth rule needs --h".into()))?,
            },
            "rot" => BandwidthRule::Rot { c0, exponent, scale },
            "mse" => BandwidthRule::Mse {
                candidates: DEFAULT_CANDIDATES,
            },
            "kink" => BandwidthRule::Kink {
                c0,
                exponent,
                scale,
                candidates: DEFAULT_CANDIDATES,
            },
            other => return Err(Error::InvalidInput(format!("unknown bandwidth rule `{other}`"))),
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BandwidthRule::Fixed { h } => check_bandwidth(h),
            BandwidthRule::Rot { c0, exponent, .. } => check_rot(c0, exponent),
            BandwidthRule::Mse { candidates } => check_candidates(candidates),
            BandwidthRule::Kink {
                c0,
                exponent,
                candidates,
                ..
            } => {
                check_rot(c0, exponent)?;
                check_candidates(candidates)
            }
        }
    }
}

impl FromStr for BandwidthRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BandwidthRule::from_parts(s, None, 1.0, DEFAULT_EXPONENT, RotScale::default())
    }
}

fn check_rot(c0: f64, exponent: f64) -> Result<()> {
    if !(c0 > 0.0 && c0.is_finite()) {
        return Err(Error::InvalidInput(format!("multiplier c0 = {c0} must be positive")));
    }
    if !(exponent > 0.0 && exponent < 1.0) {
        return Err(Error::InvalidInput(format!("exponent {exponent} outside (0, 1)")));
    }
    Ok(())
}

fn check_candidates(count: usize) -> Result<()> {
    if count < 5 {
        return Err(Error::InvalidInput(format!(
            "pilot grid needs at least 5 candidates, got {count}"
        )));
    }
    Ok(())
}

/// `Ĉ`: sample standard deviation of each observation's distance to the
/// nearest boundary point.
pub fn rot_scale(sample: &Sample, boundary: &Polyline) -> Result<f64> {
    let n = sample.len();
    if n < 2 {
        return Err(Error::InvalidData("rule of thumb needs at least 2 observations".into()));
    }
    let d: Vec<f64> = sample.x().iter().map(|&p| boundary.distance_to(p)).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return Err(Error::InvalidData(
            "distances to the boundary have zero spread".into(),
        ));
    }
    Ok(sd)
}

/// `Ĉ` implied by a pilot MSE bandwidth: `h_mse · n^{1/(2p+4)}`, so that the
/// rule of thumb moves the pilot from its `n^{-1/(2p+4)}` rate to the kink
/// rate.
pub fn pilot_scale(h_mse: f64, p: usize, n: usize) -> f64 {
    h_mse * (n as f64).powf(1.0 / (2 * p + 4) as f64)
}

/// `c0 · Ĉ · n^{-exponent}`.
pub fn rot_bandwidth(c_hat: f64, c0: f64, n: usize, exponent: f64) -> Result<f64> {
    if !(c_hat > 0.0 && c_hat.is_finite()) {
        return Err(Error::InvalidData(format!("scale constant {c_hat} must be positive")));
    }
    check_rot(c0, exponent)?;
    Ok(c0 * c_hat * (n as f64).powf(-exponent))
}

/// `count` log-spaced candidates between the 5th percentile of the nonzero
/// `|D|` and half the data diameter.
pub fn candidate_grid(column: &DistanceColumn, diameter: f64, count: usize) -> Result<Vec<f64>> {
    check_candidates(count)?;
    let mut abs: Vec<f64> = column
        .values
        .iter()
        .map(|d| d.abs())
        .filter(|&d| d > 0.0)
        .collect();
    if abs.is_empty() {
        return Err(Error::BandwidthSelectionFailed("all distances are zero".into()));
    }
    abs.sort_by(f64::total_cmp);
    let lo = abs[((0.05 * abs.len() as f64).ceil() as usize).clamp(1, abs.len()) - 1];
    let hi = 0.5 * diameter;
    if !(hi > lo) {
        return Err(Error::BandwidthSelectionFailed(format!(
            "empty candidate range [{lo}, {hi}]"
        )));
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    Ok((0..count)
        .map(|k| (llo + (lhi - llo) * k as f64 / (count - 1) as f64).exp())
        .collect())
}

/// Pilot MSE: squared gap between the order-`p` and order-`p+1` estimates
/// plus the estimated variance of the order-`p` estimate.
pub fn mse_objective(y: &[f64], column: &DistanceColumn, kernel: Kernel, p: usize, h: f64) -> Result<f64> {
    let base = fit_point_from_column(y, column, kernel, h, p)?;
    let richer = fit_point_from_column(y, column, kernel, h, p + 1)?;
    let gap = base.theta_hat - richer.theta_hat;
    Ok(gap * gap + point_variance(&base))
}

/// Candidate with the smallest pilot MSE among those where both fits succeed.
pub fn select_by_mse(
    y: &[f64],
    column: &DistanceColumn,
    kernel: Kernel,
    p: usize,
    candidates: &[f64],
) -> Result<f64> {
    candidates
        .iter()
        .filter_map(|&h| mse_objective(y, column, kernel, p, h).ok().map(|v| (h, v)))
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(h, _)| h)
        .ok_or_else(|| {
            Error::BandwidthSelectionFailed(format!(
                "no candidate bandwidth fits at ({}, {})",
                column.eval_pt.x1, column.eval_pt.x2
            ))
        })
}

pub fn mse_pilot_bandwidth(
    sample: &Sample,
    eval_pt: Point,
    boundary: &Boundary,
    metric: &dyn DistanceMetric,
    kernel: Kernel,
    p: usize,
    candidates: usize,
) -> Result<f64> {
    let column = build_distance_column(sample, eval_pt, &boundary.rule, metric)?;
    let grid = candidate_grid(&column, sample.diameter(), candidates)?;
    select_by_mse(sample.y(), &column, kernel, p, &grid)
}

/// `min{h_mse, max{h_rot, distance to the nearest kink}}`; `h_mse` when the
/// boundary has no kinks.
pub fn kink_adaptive_bandwidth(
    eval_pt: Point,
    boundary: &Polyline,
    h_mse: f64,
    h_rot: f64,
    metric: &dyn DistanceMetric,
) -> f64 {
    match boundary.distance_to_nearest_kink(eval_pt, metric) {
        Some(d) => h_mse.min(h_rot.max(d)),
        None => h_mse,
    }
}

/// Rescales a univariate-RD bandwidth to the bivariate rate:
/// `h_1d · n^{1/(3+2p)} / n^{1/(4+2p)}`.
pub fn univariate_rescale(h_1d: f64, p: usize, n: usize) -> f64 {
    let p = p as f64;
    let n = n as f64;
    h_1d * n.powf(1.0 / ((3.0 + 2.0 * p) * (4.0 + 2.0 * p)))
}

/// Everything a rule needs to resolve per-point bandwidths.
pub struct BandwidthContext<'a> {
    pub sample: &'a Sample,
    pub boundary: &'a Boundary,
    pub metric: &'a dyn DistanceMetric,
    pub kernel: Kernel,
    pub p: usize,
}

/// Resolved bandwidth per grid point; each entry fails independently.
pub fn resolve_bandwidths(
    rule: &BandwidthRule,
    ctx: &BandwidthContext<'_>,
    grid: &EvalGrid,
) -> Result<Vec<Result<f64>>> {
    rule.validate()?;
    let n = ctx.sample.len();
    let diameter = ctx.sample.diameter();
    let cap = |h: f64| if diameter > 0.0 { h.min(diameter) } else { h };
    let mse = |b: Point, candidates| {
        mse_pilot_bandwidth(ctx.sample, b, ctx.boundary, ctx.metric, ctx.kernel, ctx.p, candidates)
    };
    // the boundary-distance scale is shared by all points
    let global_scale = |scale: RotScale| -> Result<Option<f64>> {
        match scale {
            RotScale::BoundarySd => rot_scale(ctx.sample, &ctx.boundary.polyline).map(Some),
            RotScale::Pilot => Ok(None),
        }
    };
    let rot = |c_hat: f64, c0, exponent| rot_bandwidth(c_hat, c0, n, exponent).map(cap);
    Ok(match *rule {
        BandwidthRule::Fixed { h } => grid.points.iter().map(|_| Ok(h)).collect(),
        BandwidthRule::Mse { candidates } => grid.points.iter().map(|&b| mse(b, candidates)).collect(),
        BandwidthRule::Rot { c0, exponent, scale } => {
            let global = global_scale(scale)?;
            grid.points
                .iter()
                .map(|&b| match global {
                    Some(c) => rot(c, c0, exponent),
                    None => rot(pilot_scale(mse(b, DEFAULT_CANDIDATES)?, ctx.p, n), c0, exponent),
                })
                .collect()
        }
        BandwidthRule::Kink {
            c0,
            exponent,
            scale,
            candidates,
        } => {
            let global = global_scale(scale)?;
            grid.points
                .iter()
                .map(|&b| {
                    let h_mse = mse(b, candidates)?;
                    let c_hat = global.unwrap_or_else(|| pilot_scale(h_mse, ctx.p, n));
                    let h_rot = rot(c_hat, c0, exponent)?;
                    Ok(kink_adaptive_bandwidth(b, &ctx.boundary.polyline, h_mse, h_rot, ctx.metric))
                })
                .collect()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use crate::geometry::{AssignmentRule, Euclidean};

    #[test]
    fn rot_examples() {
        assert_abs_diff_eq!(rot_bandwidth(1.0, 1.0, 10_000, 0.25).unwrap(), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(rot_bandwidth(2.0, 1.0, 10_000, 0.25).unwrap(), 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(rot_bandwidth(1.0, 1.0, 625, 0.25).unwrap(), 0.2, epsilon = 1e-15);
        assert!(rot_bandwidth(0.0, 1.0, 100, 0.25).is_err());
        let ratio = rot_bandwidth(1.3, 1.0, 16 * 777, 0.25).unwrap() / rot_bandwidth(1.3, 1.0, 777, 0.25).unwrap();
        assert_abs_diff_eq!(ratio, 0.5, epsilon = 1e-14);
    }

    #[test]
    fn pilot_scale_moves_to_kink_rate() {
        // MSE bandwidths 18.125 and 19.992 at n = 20000 map to 7.941 and 8.759
        for (h_mse, h_rot) in [(18.125, 7.941), (19.992, 8.759)] {
            let c = pilot_scale(h_mse, 1, 20_000);
            assert_abs_diff_eq!(rot_bandwidth(c, 1.0, 20_000, 0.25).unwrap(), h_rot, epsilon = 2e-3);
        }
        assert_abs_diff_eq!(pilot_scale(2.0, 0, 16), 4.0, epsilon = 1e-14);
    }

    #[test]
    fn pilot_rot_resolves_per_point() {
        let (s, b) = design(2000, 4, 0.5, |t| t * t);
        let grid = EvalGrid::from_points(vec![Point::new(0.2, 0.0), Point::new(0.7, 0.0)]);
        let ctx = BandwidthContext {
            sample: &s,
            boundary: &b,
            metric: &Euclidean,
            kernel: Kernel::Triangular,
            p: 1,
        };
        let rot = BandwidthRule::Rot {
            c0: 1.0,
            exponent: 0.25,
            scale: RotScale::Pilot,
        };
        let mse = BandwidthRule::Mse { candidates: 15 };
        let hr = resolve_bandwidths(&rot, &ctx, &grid).unwrap();
        let hm = resolve_bandwidths(&mse, &ctx, &grid).unwrap();
        for (r, m) in hr.iter().zip(&hm) {
            let (r, m) = (*r.as_ref().unwrap(), *m.as_ref().unwrap());
            assert_abs_diff_eq!(r, m * 2000f64.powf(1.0 / 6.0 - 0.25), epsilon = 1e-12);
        }
        let sd = BandwidthRule::Rot {
            c0: 2.0,
            exponent: 0.25,
            scale: RotScale::BoundarySd,
        };
        let hs = resolve_bandwidths(&sd, &ctx, &grid).unwrap();
        let expected = 2.0 * rot_scale(&s, &b.polyline).unwrap() * 2000f64.powf(-0.25);
        assert_eq!(*hs[0].as_ref().unwrap(), *hs[1].as_ref().unwrap());
        assert_abs_diff_eq!(*hs[0].as_ref().unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn rot_scale_is_distance_spread() {
        let line = Polyline::new(vec![Point::new(-10.0, 0.0), Point::new(10.0, 0.0)]).unwrap();
        let s = Sample::new(vec![0.0; 3], vec![
            Point::new(0.0, 1.0),
            Point::new(1.0, -2.0),
            Point::new(2.0, 3.0),
        ])
        .unwrap();
        assert_abs_diff_eq!(rot_scale(&s, &line).unwrap(), 1.0, epsilon = 1e-15);
        let flat = Sample::new(vec![0.0; 2], vec![Point::new(0.0, 1.0), Point::new(3.0, -1.0)]).unwrap();
        assert!(matches!(rot_scale(&flat, &line), Err(Error::InvalidData(_))));
    }

    #[test]
    fn kink_examples() {
        let line = Polyline::with_kinks(
            vec![Point::new(0.0, 2.0), Point::new(0.0, 0.0), Point::new(2.0, 0.0)],
            [1],
        )
        .unwrap();
        let at = |d| Point::new(d, 0.0);
        assert_abs_diff_eq!(kink_adaptive_bandwidth(at(0.3), &line, 0.5, 0.1, &Euclidean), 0.3);
        assert_abs_diff_eq!(kink_adaptive_bandwidth(at(0.05), &line, 0.5, 0.1, &Euclidean), 0.1);
        assert_abs_diff_eq!(kink_adaptive_bandwidth(at(0.8), &line, 0.5, 0.1, &Euclidean), 0.5);
        let smooth = Polyline::new(vec![Point::new(0.0, 0.0), Point::new(2.0, 0.0)]).unwrap();
        assert_eq!(kink_adaptive_bandwidth(at(0.05), &smooth, 0.5, 0.1, &Euclidean), 0.5);
    }

    #[test]
    fn rescale_examples() {
        assert_abs_diff_eq!(univariate_rescale(1.0, 1, 100_000), 10f64.powf(5.0 / 30.0), epsilon = 1e-12);
        assert_abs_diff_eq!(univariate_rescale(1.0, 1, 100_000), 1.4678, epsilon = 1e-4);
        assert_abs_diff_eq!(univariate_rescale(0.5, 0, 10_000), 1.0772, epsilon = 1e-4);
        assert_eq!(univariate_rescale(0.7, 2, 1), 0.7);
    }

    fn design(n: usize, seed: u64, noise: f64, curve: impl Fn(f64) -> f64) -> (Sample, Boundary) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let boundary = Boundary {
            polyline: Polyline::new(vec![Point::new(-1.0, 0.0), Point::new(1.0, 0.0)]).unwrap(),
            rule: AssignmentRule::Quadrant {
                x1_sign: crate::geometry::AxisSign::Positive,
                x2_sign: crate::geometry::AxisSign::Positive,
            },
        };
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let p = Point::new(rng.random_range(0.0..1.0), rng.random_range(-1.0..1.0));
            let eps: f64 = normal.sample(&mut rng);
            y.push(curve(p.x2) + noise * eps);
            x.push(p);
        }
        (Sample::new(y, x).unwrap(), boundary)
    }

    fn column_and_grid(s: &Sample, b: &Boundary) -> (DistanceColumn, Vec<f64>) {
        let col = build_distance_column(s, Point::new(0.5, 0.0), &b.rule, &Euclidean).unwrap();
        let grid = candidate_grid(&col, s.diameter(), 15).unwrap();
        (col, grid)
    }

    #[test]
    fn pure_noise_prefers_the_largest_bandwidth() {
        let (s, b) = design(3000, 1, 1.0, |_| 0.0);
        let (col, grid) = column_and_grid(&s, &b);
        let h = select_by_mse(s.y(), &col, Kernel::Uniform, 0, &grid).unwrap();
        assert_eq!(h, *grid.last().unwrap());
    }

    #[test]
    fn noiseless_curvature_prefers_the_smallest_bandwidth() {
        let (s, b) = design(3000, 2, 0.0, |_| 0.0);
        let col = build_distance_column(&s, Point::new(0.5, 0.0), &b.rule, &Euclidean).unwrap();
        // outcome is an exact smooth curve in the signed distance
        let y: Vec<f64> = col.values.iter().map(|&d| (3.0 * d).exp() + d * d).collect();
        let grid = candidate_grid(&col, s.diameter(), 15).unwrap();
        let h = select_by_mse(&y, &col, Kernel::Triangular, 1, &grid).unwrap();
        let first_feasible = grid
            .iter()
            .copied()
            .find(|&h| mse_objective(&y, &col, Kernel::Triangular, 1, h).is_ok())
            .unwrap();
        assert_eq!(h, first_feasible);
    }

    #[test]
    fn pilot_matches_fine_scan() {
        let (s, b) = design(4000, 3, 0.3, |t| 2.0 * t * t * t + t * t);
        let (col, grid) = column_and_grid(&s, &b);
        let pick = select_by_mse(s.y(), &col, Kernel::Triangular, 1, &grid).unwrap();
        // brute force over a 10x finer log grid spanning the same range
        let (lo, hi) = (grid[0].ln(), grid[grid.len() - 1].ln());
        let fine: Vec<(f64, f64)> = (0..141)
            .map(|k| (lo + (hi - lo) * k as f64 / 140.0).exp())
            .filter_map(|h| mse_objective(s.y(), &col, Kernel::Triangular, 1, h).ok().map(|v| (h, v)))
            .collect();
        // every coarse candidate is also on the fine grid
        let best_fine = fine.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        let best_coarse_on_fine = fine
            .iter()
            .filter(|(h, _)| grid.iter().any(|g| (g - h).abs() < 1e-9 * h))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert_abs_diff_eq!(best_coarse_on_fine.0, pick, epsilon = 1e-9 * pick);
        // the coarse pick is within one coarse step of the fine optimum
        let step = ((hi - lo) / 14.0).exp();
        assert!(pick / best_fine.0 <= step * 1.0001 && best_fine.0 / pick <= step * 1.0001);
    }

    #[test]
    fn no_feasible_candidate_fails() {
        let col = DistanceColumn::from_signed(Point::new(0.0, 0.0), vec![0.1, 0.2, -0.3]);
        let err = select_by_mse(&[1.0, 2.0, 3.0], &col, Kernel::Uniform, 1, &[0.01, 0.02, 0.03, 0.04, 0.05])
            .unwrap_err();
        assert!(matches!(err, Error::BandwidthSelectionFailed(_)));
    }

    #[test]
    fn rule_parsing() {
        assert!(matches!("rot".parse::<BandwidthRule>().unwrap(), BandwidthRule::Rot { .. }));
        assert!("fixed".parse::<BandwidthRule>().is_err());
        assert_eq!(
            BandwidthRule::from_parts("fixed", Some(0.5), 1.0, 0.25, RotScale::Pilot).unwrap(),
            BandwidthRule::Fixed { h: 0.5 }
        );
        assert!("silverman".parse::<BandwidthRule>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn kink_rule_stays_in_range(d in 0.0..3.0f64, h_mse in 0.01..2.0f64, h_rot in 0.01..2.0f64) {
            let line = Polyline::with_kinks(
                vec![Point::new(0.0, 3.0), Point::new(0.0, 0.0), Point::new(3.0, 0.0)],
                [1],
            ).unwrap();
            let h = kink_adaptive_bandwidth(Point::new(d, 0.0), &line, h_mse, h_rot, &Euclidean);
            prop_assert!(h >= h_rot.min(h_mse) && h <= h_mse);
        }

        #[test]
        fn pilot_is_affine_invariant(a in -5.0..5.0f64, b in 0.2..5.0f64, seed in 0u64..1000) {
            let (s, bd) = design(800, seed, 0.5, |t| t * t);
            let (col, grid) = column_and_grid(&s, &bd);
            let y2: Vec<f64> = s.y().iter().map(|v| a + b * v).collect();
            let h1 = select_by_mse(s.y(), &col, Kernel::Triangular, 1, &grid);
            let h2 = select_by_mse(&y2, &col, Kernel::Triangular, 1, &grid);
            prop_assert_eq!(h1.ok(), h2.ok());
        }
    }
}
