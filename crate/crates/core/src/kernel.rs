//! Kernel functions, the bivariate-normalised weight `K(u/h)/h²`, and signed
//! distance columns.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AssignmentRule, DistanceMetric, Point, Side};
use crate::sample::Sample;

/// Compactly supported kernels on `[-1, 1]`, stored unnormalised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Uniform,
    #[default]
    Triangular,
    Epanechnikov,
}

impl Kernel {
    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        let a = u.abs();
        if a > 1.0 {
            return 0.0;
        }
        match self {
            Kernel::Uniform => 1.0,
            Kernel::Triangular => 1.0 - a,
            Kernel::Epanechnikov => 0.75 * (1.0 - a * a),
        }
    }

    /// `K(u/h) / h²`.
    pub fn kh(self, u: f64, h: f64) -> Result<f64> {
        check_bandwidth(h)?;
        Ok(self.kh_unchecked(u, h))
    }

    #[inline]
    pub(crate) fn kh_unchecked(self, u: f64, h: f64) -> f64 {
        self.eval(u / h) / (h * h)
    }

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Uniform => "uniform",
            Kernel::Triangular => "triangular",
            Kernel::Epanechnikov => "epanechnikov",
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Kernel::Uniform),
            "triangular" => Ok(Kernel::Triangular),
            "epanechnikov" => Ok(Kernel::Epanechnikov),
            other => Err(Error::InvalidInput(format!("unknown kernel `{other}`"))),
        }
    }
}

pub(crate) fn check_bandwidth(h: f64) -> Result<()> {
    if h.is_finite() && h > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidBandwidth(h))
    }
}

/// Signed distances of every observation to one evaluation point.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceColumn {
    pub eval_pt: Point,
    pub values: Vec<f64>,
    pub sides: Vec<Side>,
}

impl DistanceColumn {
    /// Column from precomputed signed distances; sides follow the sign, with
    /// `+0.0` treated and `-0.0` control.
    pub fn from_signed(eval_pt: Point, values: Vec<f64>) -> Self {
        let sides = values
            .iter()
            .map(|v| {
                if v.is_sign_negative() {
                    Side::Control
                } else {
                    Side::Treated
                }
            })
            .collect();
        Self {
            eval_pt,
            values,
            sides,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn build_distance_column(
    sample: &Sample,
    eval_pt: Point,
    rule: &AssignmentRule,
    metric: &dyn DistanceMetric,
) -> Result<DistanceColumn> {
    eval_pt.check_finite()?;
    let (values, sides) = sample
        .x()
        .iter()
        .map(|&x| {
            let d = metric.distance(x, eval_pt);
            match rule.side_of(x) {
                Side::Treated => (d, Side::Treated),
                Side::Control => (-d, Side::Control),
            }
        })
        .unzip();
    Ok(DistanceColumn {
        eval_pt,
        values,
        sides,
    })
}
