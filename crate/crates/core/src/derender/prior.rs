use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationSet;
use crate::error::{Error, Result};
use crate::geometry::ConvexPolygon;
use crate::model::RawColor;

/// Samples darker than this (sum of channels) carry no usable chromaticity.
const MIN_CHROMA_SUM: f64 = 1e-3;

/// Uniform prior over RAW colors in `[0, 1]^3` whose chromaticity
/// `(r, g) / (r + g + b)` lies in a convex polygon.
///
/// The support is a convex cone intersected with the unit cube: every hull
/// edge is a half-space through the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSupport {
    pub hull: Vec<[f64; 2]>,
    /// Homogeneous half-spaces `n . x >= 0`, one per hull edge.
    #[serde(skip)]
    planes: Vec<[f64; 3]>,
}

impl PriorSupport {
    pub fn from_hull(vertices: Vec<[f64; 2]>) -> Result<Self> {
        let poly = ConvexPolygon::hull(&vertices);
        if poly.vertices.len() < 3 || poly.area() < 1e-9 {
            return Err(Error::DegenerateHull(format!(
                "{} distinct extreme chromaticities",
                poly.vertices.len()
            )));
        }
        let n = poly.vertices.len();
        let planes = (0..n)
            .map(|i| {
                let a = poly.vertices[i];
                let b = poly.vertices[(i + 1) % n];
                // cross(a, b, p) >= 0 with p = (r, g)/s, multiplied by s = r + g + b.
                let ex = b[0] - a[0];
                let ey = b[1] - a[1];
                // ex * (g - a1 s) - ey * (r - a0 s)
                [
                    -ey + (ey * a[0] - ex * a[1]),
                    ex + (ey * a[0] - ex * a[1]),
                    ey * a[0] - ex * a[1],
                ]
            })
            .map(|p: [f64; 3]| {
                let len = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                [p[0] / len, p[1] / len, p[2] / len]
            })
            .collect();
        Ok(PriorSupport {
            hull: poly.vertices,
            planes,
        })
    }

    /// Chromaticities of every non-negative RAW color.
    pub fn full_triangle() -> Self {
        PriorSupport::from_hull(vec![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]).expect("non-degenerate")
    }

    pub fn from_chromaticities(points: &[[f64; 2]]) -> Result<Self> {
        PriorSupport::from_hull(points.to_vec())
    }

    /// Membership of a RAW color, with slack `tol` in the normalized
    /// half-space distance. Black is inside every cone.
    pub fn contains_tol(&self, x: &RawColor, tol: f64) -> bool {
        let x = &x.0;
        if x.iter().any(|v| !(-tol..=1.0 + tol).contains(v)) {
            return false;
        }
        self.planes
            .iter()
            .all(|p| p[0] * x[0] + p[1] * x[1] + p[2] * x[2] >= -tol)
    }

    pub fn contains(&self, x: &RawColor) -> bool {
        self.contains_tol(x, 1e-12)
    }

    pub(crate) fn planes(&self) -> &[[f64; 3]] {
        &self.planes
    }

    /// Rebuild the derived half-spaces after deserialization.
    pub fn rebuilt(self) -> Result<Self> {
        PriorSupport::from_hull(self.hull)
    }
}

/// Convex hull of the chromaticities of a calibration set.
pub fn build_prior(set: &CalibrationSet) -> Result<PriorSupport> {
    let pts: Vec<[f64; 2]> = set
        .samples
        .iter()
        .filter_map(|s| {
            let sum = s.x.sum();
            (sum > MIN_CHROMA_SUM).then(|| [s.x.0[0] / sum, s.x.0[1] / sum])
        })
        .collect();
    PriorSupport::from_chromaticities(&pts)
}
