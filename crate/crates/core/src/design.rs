use crate::error::{Error, Result};
use crate::family::ExponentialFamily;

/// Sorted one-dimensional design points; distances are absolute differences.
#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    points: Vec<f64>,
}

impl Design {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidDesign("design has no points".into()));
        }
        if let Some(i) = points.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidDesign(format!("point {i} is not finite")));
        }
        if let Some(i) = points.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::InvalidDesign(format!(
                "points must be sorted, but x[{}] > x[{}]",
                i,
                i + 1
            )));
        }
        if points.len() > 1 && points[0] == points[points.len() - 1] {
            return Err(Error::InvalidDesign("all points coincide".into()));
        }
        Ok(Design { points })
    }

    /// The integer grid `1, 2, ..., n`.
    pub fn regular(n: usize) -> Result<Self> {
        Design::new((1..=n).map(|x| x as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    #[inline]
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        (self.points[i] - self.points[j]).abs()
    }

    /// Smallest strictly positive gap between neighbors, `None` for `n = 1`.
    pub fn min_spacing(&self) -> Option<f64> {
        self.points
            .windows(2)
            .map(|w| w[1] - w[0])
            .filter(|&d| d > 0.0)
            .min_by(f64::total_cmp)
    }

    pub fn diameter(&self) -> f64 {
        self.points[self.points.len() - 1] - self.points[0]
    }

    /// Index range of points `j` with `|x_i − x_j| ≤ h`. Callers still apply
    /// the kernel, which zeroes the boundary `|x_i − x_j| = h`.
    #[inline]
    pub fn window(&self, i: usize, h: f64) -> std::ops::Range<usize> {
        let x = self.points[i];
        let lo = self.points.partition_point(|&p| p < x - h);
        let hi = self.points.partition_point(|&p| p <= x + h);
        lo..hi
    }

    /// Index of the interior midpoint.
    pub fn midpoint(&self) -> usize {
        (self.points.len() - 1) / 2
    }
}

/// Raw observations together with their sufficient statistics `T(Y_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Observations {
    values: Vec<f64>,
    transformed: Vec<f64>,
}

impl Observations {
    pub fn new<F: ExponentialFamily + ?Sized>(values: Vec<f64>, family: &F) -> Result<Self> {
        let transformed: Vec<f64> = values
            .iter()
            .map(|&y| family.sufficient_statistic(y))
            .collect();
        if let Some(i) = transformed.iter().position(|t| !t.is_finite()) {
            return Err(Error::InvalidDesign(format!(
                "observation {i} = {} has no finite sufficient statistic under {}",
                values[i],
                family.name()
            )));
        }
        Ok(Observations {
            values,
            transformed,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn transformed(&self) -> &[f64] {
        &self.transformed
    }
}
