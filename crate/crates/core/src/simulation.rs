//! Calibrated data-generating process and the Monte Carlo harness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{estimate_grid, FitConfig};
use crate::geometry::{AssignmentRule, Boundary, Euclidean, EvalGrid, Point, Side};
use crate::oracle::population_tau;
use crate::sample::Sample;

/// Linear potential-outcome model with Beta-distributed scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    /// Intercept and slopes for the control outcome.
    pub beta0: [f64; 3],
    pub beta1: [f64; 3],
    pub sigma0: f64,
    pub sigma1: f64,
    pub beta_shape: [f64; 2],
    /// Scores are `scale · Beta + shift` per coordinate.
    pub score_scale: f64,
    pub score_shift: f64,
}

impl DgpSpec {
    /// Linear conditional means with Beta(3, 4) scores on [-25, 75] per coordinate.
    pub fn calibrated() -> Self {
        Self {
            beta0: [0.335, 2.52e-3, -1.72e-3],
            beta1: [0.698, 2.74e-3, -6.05e-4],
            sigma0: 0.332,
            sigma1: 0.435,
            beta_shape: [3.0, 4.0],
            score_scale: 100.0,
            score_shift: -25.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.beta0.iter().chain(&self.beta1).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("regression coefficients must be finite".into()));
        }
        if !(self.sigma0 >= 0.0 && self.sigma1 >= 0.0 && self.sigma0.is_finite() && self.sigma1.is_finite()) {
            return Err(Error::InvalidInput("noise scales must be nonnegative".into()));
        }
        if !(self.beta_shape.iter().all(|&a| a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidInput("Beta shapes must be positive".into()));
        }
        if !(self.score_scale > 0.0 && self.score_scale.is_finite() && self.score_shift.is_finite()) {
            return Err(Error::InvalidInput("score scale must be positive".into()));
        }
        Ok(())
    }

    pub fn mean(&self, side: Side, x: Point) -> f64 {
        let b = match side {
            Side::Control => self.beta0,
            Side::Treated => self.beta1,
        };
        b[0] + b[1] * x.x1 + b[2] * x.x2
    }

    pub fn tau(&self, x: Point) -> f64 {
        population_tau(self, x)
    }

    /// Mean of each score coordinate.
    pub fn score_mean(&self) -> f64 {
        let [a, b] = self.beta_shape;
        self.score_scale * a / (a + b) + self.score_shift
    }

    /// L-shaped boundary spanning the score support on the treated side.
    pub fn boundary(&self) -> Result<Boundary> {
        Boundary::l_shape(self.score_scale + self.score_shift)
    }
}

/// Marsaglia–Tsang squeeze method; shapes below one use the `U^{1/a}` boost.
pub fn gamma_draw<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    if shape < 1.0 {
        let u: f64 = rng.random();
        return gamma_draw(rng, shape + 1.0) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = StandardNormal.sample(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = rng.random();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

pub fn beta_draw<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    let x = gamma_draw(rng, a);
    let y = gamma_draw(rng, b);
    x / (x + y)
}

/// Draws `n` observations; both potential-outcome noises are drawn for every
/// observation and only the realised one is kept.
pub fn draw_sample(spec: &DgpSpec, n: usize, seed: u64) -> Result<Sample> {
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be at least 1".into()));
    }
    spec.validate()?;
    let rule = AssignmentRule::first_quadrant();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [a, b] = spec.beta_shape;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let x1 = spec.score_scale * beta_draw(&mut rng, a, b) + spec.score_shift;
        let x2 = spec.score_scale * beta_draw(&mut rng, a, b) + spec.score_shift;
        let e0: f64 = StandardNormal.sample(&mut rng);
        let e1: f64 = StandardNormal.sample(&mut rng);
        let p = Point::new(x1, x2);
        let side = rule.side_of(p);
        let noise = match side {
            Side::Control => spec.sigma0 * e0,
            Side::Treated => spec.sigma1 * e1,
        };
        y.push(spec.mean(side, p) + noise);
        x.push(p);
    }
    Sample::new(y, x)
}

/// SplitMix64 finaliser applied to `master + stream · golden`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Default grid: `m` points at equal spacing on the L-shaped boundary within
/// `extent` of the kink, centred on it when `m` is odd.
pub fn default_grid(m: usize, extent: f64) -> Result<EvalGrid> {
    let line = Boundary::l_shape(extent)?.polyline;
    crate::geometry::make_grid(&line, m)
}

pub const DEFAULT_GRID_SIZE: usize = 21;
pub const DEFAULT_GRID_EXTENT: f64 = 40.0;
/// Replication failure share above which a report is flagged invalid.
pub const MAX_FAILURE_RATE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub dgp: DgpSpec,
    pub n: usize,
    pub reps: usize,
    pub grid: Vec<Point>,
    pub fit: FitConfig,
    pub seed: u64,
}

/// One replication's per-point results.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Replication {
    pub index: usize,
    pub seed: u64,
    pub h: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub se: Vec<f64>,
    pub covered: Vec<bool>,
    pub ci_length: Vec<f64>,
    pub band_quantile: f64,
    pub band_covered: bool,
    /// Band length averaged over the grid.
    pub band_length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicationFailure {
    pub index: usize,
    pub code: &'static str,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McRow {
    pub point_id: usize,
    pub b: Point,
    pub tau: f64,
    /// Bandwidth averaged over replications.
    pub h: f64,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
    pub ec: f64,
    pub il: f64,
    pub mean_se: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct UniformRow {
    pub ec: f64,
    pub il: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McReport {
    pub rows: Vec<McRow>,
    pub uniform: UniformRow,
    pub reps_requested: usize,
    pub reps_used: usize,
    pub failures: Vec<ReplicationFailure>,
    pub invalid: bool,
    pub seed: u64,
    pub replications: Vec<Replication>,
}

impl McReport {
    pub fn failure_rate(&self) -> f64 {
        self.failures.len() as f64 / self.reps_requested as f64
    }
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.carry
    }
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let mut acc = Compensated::default();
    let mut count = 0usize;
    for v in values {
        acc.add(v);
        count += 1;
    }
    acc.total() / count as f64
}

pub fn run_replication(cfg: &McConfig, index: usize) -> Result<Replication> {
    let seed = derive_seed(cfg.seed, index as u64);
    let sample = draw_sample(&cfg.dgp, cfg.n, seed)?;
    let boundary = cfg.dgp.boundary()?;
    let grid = EvalGrid::from_points(cfg.grid.clone());
    let est = estimate_grid(&sample, &boundary, &grid, &Euclidean, &cfg.fit, derive_seed(seed, 1))?;
    let truth: Vec<f64> = cfg.grid.iter().map(|&b| cfg.dgp.tau(b)).collect();
    let band_quantile = est
        .band_quantile
        .ok_or_else(|| Error::Degenerate("no uniform band".into()))?;
    let mut out = Replication {
        index,
        seed,
        h: Vec::with_capacity(grid.len()),
        theta_hat: Vec::with_capacity(grid.len()),
        se: Vec::with_capacity(grid.len()),
        covered: Vec::with_capacity(grid.len()),
        ci_length: Vec::with_capacity(grid.len()),
        band_quantile,
        band_covered: true,
        band_length: 0.0,
    };
    let mut band_length = 0.0;
    for (pt, &t) in est.points.into_iter().zip(&truth) {
        let s = pt.outcome?;
        let (lo, hi) = s
            .band
            .ok_or_else(|| Error::Degenerate(format!("point {} has no band", pt.point_id)))?;
        out.band_covered &= lo <= t && t <= hi;
        band_length += hi - lo;
        out.h.push(s.h);
        out.theta_hat.push(s.theta_hat);
        out.se.push(s.se);
        out.covered.push(s.ci.contains(t));
        out.ci_length.push(s.ci.length());
    }
    out.band_length = band_length / grid.len() as f64;
    Ok(out)
}

/// Replications run in parallel; aggregation is in replication order, so
/// the report does not depend on scheduling.
pub fn run_monte_carlo(cfg: &McConfig) -> Result<McReport> {
    if cfg.reps == 0 {
        return Err(Error::InvalidInput("need at least one replication".into()));
    }
    if cfg.grid.is_empty() {
        return Err(Error::InvalidInput("evaluation grid is empty".into()));
    }
    cfg.dgp.validate()?;
    cfg.fit.bandwidth.validate()?;
    let outcomes: Vec<Result<Replication>> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| run_replication(cfg, r))
        .collect();
    let mut replications = Vec::with_capacity(cfg.reps);
    let mut failures = Vec::new();
    for (index, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => replications.push(r),
            Err(e) => failures.push(ReplicationFailure {
                index,
                code: e.code(),
                message: e.to_string(),
            }),
        }
    }
    let invalid = failures.len() as f64 > MAX_FAILURE_RATE * cfg.reps as f64;
    if replications.is_empty() {
        return Err(Error::Degenerate(format!(
            "all {} replications failed; first error: {}",
            cfg.reps, failures[0].message
        )));
    }
    let rows = cfg
        .grid
        .iter()
        .enumerate()
        .map(|(k, &b)| {
            let tau = cfg.dgp.tau(b);
            let theta = || replications.iter().map(|r| r.theta_hat[k]);
            let mean = mean_of(theta());
            let sd = mean_of(theta().map(|v| (v - mean) * (v - mean))).sqrt();
            let bias = mean - tau;
            McRow {
                point_id: k + 1,
                b,
                tau,
                h: mean_of(replications.iter().map(|r| r.h[k])),
                bias,
                sd,
                rmse: (bias * bias + sd * sd).sqrt(),
                ec: mean_of(replications.iter().map(|r| if r.covered[k] { 1.0 } else { 0.0 })),
                il: mean_of(replications.iter().map(|r| r.ci_length[k])),
                mean_se: mean_of(replications.iter().map(|r| r.se[k])),
            }
        })
        .collect();
    let uniform = UniformRow {
        ec: mean_of(replications.iter().map(|r| if r.band_covered { 1.0 } else { 0.0 })),
        il: mean_of(replications.iter().map(|r| r.band_length)),
    };
    Ok(McReport {
        rows,
        uniform,
        reps_requested: cfg.reps,
        reps_used: replications.len(),
        failures,
        invalid,
        seed: cfg.seed,
        replications,
    })
}
