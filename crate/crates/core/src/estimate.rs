//! Grid-level pipeline: bandwidths, per-point fits, covariance surface,
//! pointwise intervals and the uniform band.

use serde::{Deserialize, Serialize};

use crate::bandwidth::{resolve_bandwidths, BandwidthContext, BandwidthRule};
use crate::covariance::{build_surface, CovarianceSurface, DEFAULT_EIGEN_FLOOR};
use crate::error::{Error, Result};
use crate::geometry::{Boundary, DistanceMetric, EvalGrid, Point, Side};
use crate::inference::{
    perimeter_check, pointwise_quantile, uniform_quantile_from_factor, IntervalResult, PerimeterWarning,
    DEFAULT_BAND_DRAWS, DEFAULT_PERIMETER_MULTIPLE,
};
use crate::kernel::Kernel;
use crate::locpoly::{fit_point, PointFit};
use crate::sample::Sample;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub kernel: Kernel,
    pub p: usize,
    pub alpha: f64,
    pub band_draws: usize,
    pub eigen_floor: f64,
    pub bandwidth: BandwidthRule,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            kernel: Kernel::Triangular,
            p: 1,
            alpha: 0.05,
            band_draws: DEFAULT_BAND_DRAWS,
            eigen_floor: DEFAULT_EIGEN_FLOOR,
            bandwidth: BandwidthRule::Rot {
                c0: 1.0,
                exponent: crate::bandwidth::DEFAULT_EXPONENT,
                scale: crate::bandwidth::RotScale::Pilot,
            },
        }
    }
}

/// Successful estimate at one grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSummary {
    pub h: f64,
    pub n_eff: [usize; 2],
    pub theta_hat: f64,
    pub se: f64,
    pub ci: IntervalResult,
    /// `(lower, upper)` of the uniform band, when the band could be formed.
    pub band: Option<(f64, f64)>,
}

#[derive(Debug)]
pub struct PointEstimate {
    pub point_id: usize,
    pub eval_pt: Point,
    /// Bandwidth, when selection succeeded.
    pub h: Option<f64>,
    pub outcome: Result<PointSummary>,
}

#[derive(Debug)]
pub struct GridEstimate {
    pub points: Vec<PointEstimate>,
    pub band_quantile: Option<f64>,
    pub surface: Option<CovarianceSurface>,
    pub warnings: Vec<PerimeterWarning>,
}

impl GridEstimate {
    pub fn failures(&self) -> usize {
        self.points.iter().filter(|p| p.outcome.is_err()).count()
    }
}

/// Runs the full pipeline over `grid`. Per-point failures are kept in the
/// output; the band is formed over the points that succeeded.
pub fn estimate_grid(
    sample: &Sample,
    boundary: &Boundary,
    grid: &EvalGrid,
    metric: &dyn DistanceMetric,
    cfg: &FitConfig,
    seed: u64,
) -> Result<GridEstimate> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("evaluation grid is empty".into()));
    }
    let q_point = pointwise_quantile(cfg.alpha)?;
    let ctx = BandwidthContext {
        sample,
        boundary,
        metric,
        kernel: cfg.kernel,
        p: cfg.p,
    };
    let bandwidths = resolve_bandwidths(&cfg.bandwidth, &ctx, grid)?;

    let mut fitted: Vec<PointFit> = Vec::new();
    let mut fitted_ids: Vec<usize> = Vec::new();
    let mut points: Vec<PointEstimate> = Vec::with_capacity(grid.len());
    let mut warnings = Vec::new();
    for (k, (&b, h)) in grid.points.iter().zip(bandwidths).enumerate() {
        let selected = h.as_ref().ok().copied();
        let fit = h.and_then(|h| {
            if let Some(w) = perimeter_check(&boundary.polyline, b, h, DEFAULT_PERIMETER_MULTIPLE) {
                warnings.push(w);
            }
            fit_point(sample, b, &boundary.rule, metric, cfg.kernel, h, cfg.p)
        });
        let h = selected;
        match fit {
            Ok(f) => {
                fitted_ids.push(k);
                fitted.push(f);
                points.push(PointEstimate {
                    point_id: k,
                    eval_pt: b,
                    h,
                    outcome: Err(Error::Degenerate("pending".into())),
                });
            }
            Err(e) => points.push(PointEstimate {
                point_id: k,
                eval_pt: b,
                h,
                outcome: Err(e),
            }),
        }
    }

    // points with a degenerate variance are dropped one at a time; the band is
    // formed over whatever remains
    let (surface, band_q) = loop {
        if fitted.is_empty() {
            break (None, None);
        }
        match build_surface(&mut fitted, cfg.eigen_floor) {
            Ok(s) => {
                let q = uniform_quantile_from_factor(&s.factor, cfg.alpha, cfg.band_draws, seed)?;
                break (Some(s), Some(q));
            }
            Err(Error::DegenerateVariance { index, value }) => {
                let id = fitted_ids.remove(index);
                fitted.remove(index);
                points[id].outcome = Err(Error::DegenerateVariance { index: id, value });
            }
            Err(e) => return Err(e),
        }
    };

    for (f, &id) in fitted.iter().zip(&fitted_ids) {
        let se = f.se().unwrap_or(f64::NAN);
        let ci = IntervalResult::new(f.eval_pt, f.theta_hat, se, cfg.alpha, q_point);
        let band = band_q.map(|q| (f.theta_hat - q * se, f.theta_hat + q * se));
        points[id].outcome = Ok(summary(f, ci, band));
    }
    Ok(GridEstimate {
        points,
        band_quantile: band_q,
        surface,
        warnings,
    })
}

fn summary(f: &PointFit, ci: IntervalResult, band: Option<(f64, f64)>) -> PointSummary {
    PointSummary {
        h: f.h,
        n_eff: [f.side(Side::Control).n_eff, f.side(Side::Treated).n_eff],
        theta_hat: f.theta_hat,
        se: ci.se,
        ci,
        band,
    }
}
