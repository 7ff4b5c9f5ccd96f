use super::PointCloud;
use std::f64::consts::PI;

/// Range, azimuth and inclination of every point.
///
/// Azimuth lies in `(-π, π]`, inclination in `[-π/2, π/2]`. Points at the origin
/// map to `(0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalView {
    pub range: Vec<f64>,
    pub azimuth: Vec<f64>,
    pub inclination: Vec<f64>,
}

pub(crate) fn azimuth(x: f64, y: f64) -> f64 {
    let a = y.atan2(x);
    if a <= -PI {
        PI
    } else {
        a
    }
}

pub fn to_spherical(cloud: &PointCloud) -> SphericalView {
    let n = cloud.len();
    let mut view = SphericalView {
        range: Vec::with_capacity(n),
        azimuth: Vec::with_capacity(n),
        inclination: Vec::with_capacity(n),
    };
    for i in 0..n {
        let r = cloud.range(i);
        let (theta, phi) = if r > 0.0 {
            let (x, y, z) = (cloud.x()[i], cloud.y()[i], cloud.z()[i]);
            (azimuth(x, y), (z / r).clamp(-1.0, 1.0).asin())
        } else {
            (0.0, 0.0)
        };
        view.range.push(r);
        view.azimuth.push(theta);
        view.inclination.push(phi);
    }
    view
}

impl SphericalView {
    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }

    /// Cartesian coordinates of point `i`.
    pub fn cartesian(&self, i: usize) -> [f64; 3] {
        let (r, t, p) = (self.range[i], self.azimuth[i], self.inclination[i]);
        [r * p.cos() * t.cos(), r * p.cos() * t.sin(), r * p.sin()]
    }
}
