use crate::error::{Error, Result};
use crate::geometry::{AssignmentRule, Point, Side};

/// Observed outcomes and bivariate scores. Treatment is never stored; it is
/// derived from an [`AssignmentRule`].
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    y: Vec<f64>,
    x: Vec<Point>,
}

impl Sample {
    pub fn new(y: Vec<f64>, x: Vec<Point>) -> Result<Self> {
        if y.len() != x.len() {
            return Err(Error::InvalidInput(format!(
                "{} outcomes but {} scores",
                y.len(),
                x.len()
            )));
        }
        if y.is_empty() {
            return Err(Error::InvalidInput("sample is empty".into()));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite outcome at row {i}")));
        }
        for p in &x {
            p.check_finite()?;
        }
        Ok(Self { y, x })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &[Point] {
        &self.x
    }

    pub fn sides(&self, rule: &AssignmentRule) -> Vec<Side> {
        self.x.iter().map(|&p| rule.side_of(p)).collect()
    }

    /// Largest pairwise distance between the corners of the bounding box.
    pub fn diameter(&self) -> f64 {
        let (mut lo1, mut hi1, mut lo2, mut hi2) =
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in &self.x {
            lo1 = lo1.min(p.x1);
            hi1 = hi1.max(p.x1);
            lo2 = lo2.min(p.x2);
            hi2 = hi2.max(p.x2);
        }
        (hi1 - lo1).hypot(hi2 - lo2)
    }
}
