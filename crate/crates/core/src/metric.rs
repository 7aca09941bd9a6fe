//! Finite-dimensional metric spaces with explicit coordinates.
//!
//! Two metrics are supported: the Euclidean one and a diagonally weighted
//! variant `d(x, y) = sqrt(sum_i w_i (x_i - y_i)^2)`. Both are complete, so
//! nothing about completeness is checked at runtime.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point with finite coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidInput("point has no coordinates".into()));
        }
        if let Some(bad) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "point coordinate {bad} is not finite"
            )));
        }
        Ok(Self(coords))
    }

    pub fn scalar(x: f64) -> Result<Self> {
        Self::new(vec![x])
    }

    pub fn zeros(dimension: usize) -> Self {
        Self(vec![0.0; dimension.max(1)])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Build a point from coordinates known to be finite. Used internally by
    /// solvers whose outputs are combinations of finite values.
    pub(crate) fn from_finite(coords: Vec<f64>) -> Self {
        debug_assert!(coords.iter().all(|c| c.is_finite()));
        Self(coords)
    }
}

impl TryFrom<Vec<f64>> for Point {
    type Error = Error;

    fn try_from(coords: Vec<f64>) -> Result<Self> {
        Self::new(coords)
    }
}

impl From<Point> for Vec<f64> {
    fn from(p: Point) -> Self {
        p.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricKind {
    Euclidean,
    DiagonalWeighted { weights: Vec<f64> },
}

#[derive(Debug, Clone, Deserialize)]
struct RawSpace {
    dimension: usize,
    #[serde(default = "default_metric")]
    metric: MetricKind,
    base_point: Option<Point>,
}

fn default_metric() -> MetricKind {
    MetricKind::Euclidean
}

/// The ambient space: dimension, metric, and the reference point `u*` used
/// by the coercivity bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpace")]
pub struct SpaceDescriptor {
    dimension: usize,
    metric: MetricKind,
    base_point: Point,
}

impl TryFrom<RawSpace> for SpaceDescriptor {
    type Error = Error;

    fn try_from(raw: RawSpace) -> Result<Self> {
        let base = raw
            .base_point
            .unwrap_or_else(|| Point::zeros(raw.dimension));
        Self::new(raw.dimension, raw.metric, base)
    }
}

impl SpaceDescriptor {
    pub fn new(dimension: usize, metric: MetricKind, base_point: Point) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidInput("space dimension must be >= 1".into()));
        }
        if let MetricKind::DiagonalWeighted { weights } = &metric {
            if weights.len() != dimension {
                return Err(Error::DimensionMismatch {
                    expected: dimension,
                    found: weights.len(),
                });
            }
            if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                return Err(Error::InvalidInput(
                    "metric weights must be finite and positive".into(),
                ));
            }
        }
        if base_point.dim() != dimension {
            return Err(Error::DimensionMismatch {
                expected: dimension,
                found: base_point.dim(),
            });
        }
        Ok(Self {
            dimension,
            metric,
            base_point,
        })
    }

    /// Euclidean space of the given dimension with `u* = 0`.
    pub fn euclidean(dimension: usize) -> Self {
        Self::new(dimension, MetricKind::Euclidean, Point::zeros(dimension))
            .expect("euclidean space with positive dimension")
    }

    pub fn weighted(weights: Vec<f64>) -> Result<Self> {
        let n = weights.len();
        Self::new(n, MetricKind::DiagonalWeighted { weights }, Point::zeros(n))
    }

    pub fn with_base_point(mut self, base_point: Point) -> Result<Self> {
        self.check(&base_point)?;
        self.base_point = base_point;
        Ok(self)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn metric(&self) -> &MetricKind {
        &self.metric
    }

    pub fn base_point(&self) -> &Point {
        &self.base_point
    }

    /// Weight of coordinate `i` in the squared distance.
    pub fn weight(&self, i: usize) -> f64 {
        match &self.metric {
            MetricKind::Euclidean => 1.0,
            MetricKind::DiagonalWeighted { weights } => weights[i],
        }
    }

    pub fn check(&self, x: &Point) -> Result<()> {
        if x.dim() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                found: x.dim(),
            });
        }
        Ok(())
    }

    pub fn squared_distance(&self, x: &Point, y: &Point) -> Result<f64> {
        self.check(x)?;
        self.check(y)?;
        Ok(self.squared_distance_unchecked(x.coords(), y.coords()))
    }

    pub fn distance(&self, x: &Point, y: &Point) -> Result<f64> {
        self.squared_distance(x, y).map(f64::sqrt)
    }

    pub(crate) fn squared_distance_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .zip(y)
            .enumerate()
            .map(|(i, (a, b))| self.weight(i) * (a - b) * (a - b))
            .sum()
    }

    pub(crate) fn distance_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        self.squared_distance_unchecked(x, y).sqrt()
    }

    /// Norm dual to the metric, `sqrt(sum_i g_i^2 / w_i)`. For a C^1 energy
    /// this turns the gradient into the descending slope.
    pub fn dual_norm(&self, g: &[f64]) -> f64 {
        g.iter()
            .enumerate()
            .map(|(i, gi)| gi * gi / self.weight(i))
            .sum::<f64>()
            .sqrt()
    }
}

pub fn distance(space: &SpaceDescriptor, x: &Point, y: &Point) -> Result<f64> {
    space.distance(x, y)
}

pub fn squared_distance(space: &SpaceDescriptor, x: &Point, y: &Point) -> Result<f64> {
    space.squared_distance(x, y)
}
