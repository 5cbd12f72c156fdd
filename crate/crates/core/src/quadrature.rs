//! Adaptive 7/15-point Gauss–Kronrod quadrature with mandatory breakpoints.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
/// Gauss weights for nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_PANELS: usize = 4000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub const fn new(abs: f64, rel: f64) -> Self {
        Self { abs, rel }
    }

    fn met(&self, value: f64, error: f64) -> bool {
        error <= self.abs.max(self.rel * value.abs())
    }
}

/// Integral estimate of a vector-valued function with per-component error
/// bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub value: Vec<f64>,
    pub error: Vec<f64>,
}

impl Estimate {
    pub fn max_error(&self) -> f64 {
        self.error.iter().copied().fold(0.0, f64::max)
    }
}

struct Panel {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: Vec<f64>,
    worst: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.worst == other.worst
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.worst.total_cmp(&other.worst)
    }
}

fn gk15<F>(f: &F, a: f64, b: f64, dim: usize, buf: &mut [f64]) -> Panel
where
    F: Fn(f64, &mut [f64]),
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kron = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];
    let mut add = |x: f64, wk: f64, wg: f64, buf: &mut [f64]| {
        f(x, buf);
        for k in 0..dim {
            kron[k] += wk * buf[k];
            gauss[k] += wg * buf[k];
        }
    };
    add(center, WGK[7], WG[3], buf);
    for j in 0..7 {
        let wg = if j % 2 == 1 { WG[j / 2] } else { 0.0 };
        let dx = half * XGK[j];
        add(center - dx, WGK[j], wg, buf);
        add(center + dx, WGK[j], wg, buf);
    }
    let value: Vec<f64> = kron.iter().map(|v| v * half).collect();
    let error: Vec<f64> = kron
        .iter()
        .zip(&gauss)
        .map(|(k, g)| ((k - g) * half).abs())
        .collect();
    let worst = error.iter().copied().fold(0.0, f64::max);
    Panel {
        a,
        b,
        value,
        error,
        worst,
    }
}

/// Integrates `f: R -> R^dim` over `[a, b]`.
pub fn integrate_vec<F>(f: F, dim: usize, a: f64, b: f64, tol: Tolerance) -> Result<Estimate>
where
    F: Fn(f64, &mut [f64]),
{
    integrate_vec_breaks(f, dim, &[a, b], tol)
}

/// Integrates over consecutive panels `[breaks[i], breaks[i+1]]`; every
/// breakpoint is kept as a panel edge.
pub fn integrate_vec_breaks<F>(f: F, dim: usize, breaks: &[f64], tol: Tolerance) -> Result<Estimate>
where
    F: Fn(f64, &mut [f64]),
{
    let mut buf = vec![0.0; dim];
    let mut heap: BinaryHeap<Panel> = breaks
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| gk15(&f, w[0], w[1], dim, &mut buf))
        .collect();
    let totals = |heap: &BinaryHeap<Panel>| {
        let mut value = vec![0.0; dim];
        let mut error = vec![0.0; dim];
        for p in heap.iter() {
            for k in 0..dim {
                value[k] += p.value[k];
                error[k] += p.error[k];
            }
        }
        Estimate { value, error }
    };
    loop {
        let est = totals(&heap);
        let done = est
            .value
            .iter()
            .zip(&est.error)
            .all(|(&v, &e)| tol.met(v, e));
        if done {
            return Ok(est);
        }
        if heap.len() >= MAX_PANELS {
            return Err(Error::ToleranceFailed(est.max_error()));
        }
        let Some(worst) = heap.pop() else {
            return Ok(est);
        };
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // panel cannot be split further in floating point
            heap.push(worst);
            return Err(Error::ToleranceFailed(est.max_error()));
        }
        heap.push(gk15(&f, worst.a, mid, dim, &mut buf));
        heap.push(gk15(&f, mid, worst.b, dim, &mut buf));
    }
}

/// Scalar convenience wrapper; returns `(value, error)`.
pub fn integrate<F>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<(f64, f64)>
where
    F: Fn(f64) -> f64,
{
    let est = integrate_vec(|x, out: &mut [f64]| out[0] = f(x), 1, a, b, tol)?;
    Ok((est.value[0], est.error[0]))
}
