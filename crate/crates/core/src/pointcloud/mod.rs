//! Point clouds, labels and their on-disk formats.

mod codec;
mod scene;
mod spherical;
pub(crate) use spherical::azimuth;

pub use codec::{decode_labels, decode_scan, encode_labels, encode_scan, normalize_intensity};
pub use scene::{generate_scene, ClassIntensity, SceneSpec, NUM_SCENE_CLASSES};
pub use spherical::{to_spherical, SphericalView};

use crate::error::{Error, Result};

/// Columnar point cloud: coordinates in meters, intensity in `[0, 1]`.
///
/// Stored as `f64`; the `.bin` format narrows to `f32` on encode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    intensity: Vec<f64>,
}

impl PointCloud {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            x: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            z: Vec::with_capacity(n),
            intensity: Vec::with_capacity(n),
        }
    }

    /// Builds a cloud from columns, checking lengths and finiteness.
    pub fn from_columns(x: Vec<f64>, y: Vec<f64>, z: Vec<f64>, intensity: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if y.len() != n || z.len() != n || intensity.len() != n {
            return Err(Error::LengthMismatch(format!(
                "x={} y={} z={} intensity={}",
                n,
                y.len(),
                z.len(),
                intensity.len()
            )));
        }
        let cloud = Self { x, y, z, intensity };
        cloud.check_finite()?;
        Ok(cloud)
    }

    pub fn from_points(points: &[[f64; 4]]) -> Result<Self> {
        let mut cloud = Self::with_capacity(points.len());
        for p in points {
            cloud.push(p[0], p[1], p[2], p[3]);
        }
        cloud.check_finite()?;
        Ok(cloud)
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        for i in 0..self.len() {
            for (field, v) in [
                ("x", self.x[i]),
                ("y", self.y[i]),
                ("z", self.z[i]),
                ("intensity", self.intensity[i]),
            ] {
                if !v.is_finite() {
                    return Err(Error::CorruptValue { index: i, field });
                }
            }
        }
        Ok(())
    }

    pub fn push(&mut self, x: f64, y: f64, z: f64, intensity: f64) {
        self.x.push(x);
        self.y.push(y);
        self.z.push(z);
        self.intensity.push(intensity);
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn intensity(&self) -> &[f64] {
        &self.intensity
    }

    pub fn point(&self, i: usize) -> [f64; 4] {
        [self.x[i], self.y[i], self.z[i], self.intensity[i]]
    }

    /// Euclidean distance of point `i` from the sensor origin.
    pub fn range(&self, i: usize) -> f64 {
        (self.x[i] * self.x[i] + self.y[i] * self.y[i] + self.z[i] * self.z[i]).sqrt()
    }

    pub(crate) fn set_xyz(&mut self, i: usize, x: f64, y: f64, z: f64) {
        self.x[i] = x;
        self.y[i] = y;
        self.z[i] = z;
    }

    pub(crate) fn xyz_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64]) {
        (&mut self.x, &mut self.y, &mut self.z)
    }

    pub(crate) fn intensity_mut(&mut self) -> &mut [f64] {
        &mut self.intensity
    }

    /// Keeps the points whose mask entry is `true`, preserving order.
    pub fn retain(&self, keep: &[bool]) -> PointCloud {
        assert_eq!(keep.len(), self.len(), "mask length must equal point count");
        let n = keep.iter().filter(|k| **k).count();
        let mut out = PointCloud::with_capacity(n);
        for (i, _) in keep.iter().enumerate().filter(|(_, k)| **k) {
            out.push(self.x[i], self.y[i], self.z[i], self.intensity[i]);
        }
        out
    }

    /// Reorders points so that output row `k` is input row `order[k]`.
    pub fn permute(&self, order: &[usize]) -> PointCloud {
        let mut out = PointCloud::with_capacity(order.len());
        for &i in order {
            out.push(self.x[i], self.y[i], self.z[i], self.intensity[i]);
        }
        out
    }
}

/// Per-point semantic class and instance id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelArray {
    pub semantic: Vec<u16>,
    pub instance: Vec<u16>,
    pub ignore_label: u16,
}

impl LabelArray {
    pub fn new(semantic: Vec<u16>, ignore_label: u16) -> Self {
        let instance = vec![0; semantic.len()];
        Self {
            semantic,
            instance,
            ignore_label,
        }
    }

    pub fn len(&self) -> usize {
        self.semantic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.semantic.is_empty()
    }

    pub fn is_ignored(&self, i: usize) -> bool {
        self.semantic[i] == self.ignore_label
    }

    /// Checks that every class is below `num_classes` or is the ignore label.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.instance.len() != self.semantic.len() {
            return Err(Error::LengthMismatch(format!(
                "semantic={} instance={}",
                self.semantic.len(),
                self.instance.len()
            )));
        }
        for (index, &label) in self.semantic.iter().enumerate() {
            if label != self.ignore_label && usize::from(label) >= num_classes {
                return Err(Error::ClassOutOfRange {
                    index,
                    label,
                    num_classes,
                });
            }
        }
        Ok(())
    }

    pub fn check_paired(&self, cloud: &PointCloud) -> Result<()> {
        if self.len() != cloud.len() {
            return Err(Error::LengthMismatch(format!(
                "cloud has {} points, labels have {}",
                cloud.len(),
                self.len()
            )));
        }
        Ok(())
    }

    pub fn retain(&self, keep: &[bool]) -> LabelArray {
        assert_eq!(keep.len(), self.len(), "mask length must equal label count");
        let pick = |v: &[u16]| v.iter().zip(keep).filter(|(_, k)| **k).map(|(l, _)| *l).collect();
        LabelArray {
            semantic: pick(&self.semantic),
            instance: pick(&self.instance),
            ignore_label: self.ignore_label,
        }
    }

    pub fn permute(&self, order: &[usize]) -> LabelArray {
        LabelArray {
            semantic: order.iter().map(|&i| self.semantic[i]).collect(),
            instance: order.iter().map(|&i| self.instance[i]).collect(),
            ignore_label: self.ignore_label,
        }
    }

    /// Count of points per class in `[0, num_classes)`; ignored points are skipped.
    pub fn histogram(&self, num_classes: usize) -> Vec<usize> {
        let mut h = vec![0; num_classes];
        for &l in &self.semantic {
            if l != self.ignore_label && usize::from(l) < num_classes {
                h[usize::from(l)] += 1;
            }
        }
        h
    }
}
