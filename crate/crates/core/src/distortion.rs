//! Weather distortions: point drop (D1), occlusion (D2), geometric
//! perturbation (D3) and intensity distortion (D4).
//!
//! Each operation is a pure function of its inputs and seed.

use crate::error::{Error, Result};
use crate::pointcloud::{LabelArray, PointCloud};
use crate::rng::rng_from_seed;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Depth factor applied to occluded points.
pub const OCCLUSION_DEPTH_FACTOR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropMode {
    /// Each point removed independently with probability `ratio`.
    #[default]
    Bernoulli,
    /// Exactly `round(n * ratio)` points removed.
    Exact,
}

impl FromStr for DropMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bernoulli" => Ok(DropMode::Bernoulli),
            "exact" => Ok(DropMode::Exact),
            other => Err(Error::InvalidSpec(format!("unknown drop mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    PointDrop,
    Occlusion,
    GeomPerturb,
    IntensityDistort,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 4] = [
        CorruptionKind::PointDrop,
        CorruptionKind::Occlusion,
        CorruptionKind::GeomPerturb,
        CorruptionKind::IntensityDistort,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::PointDrop => "point_drop",
            CorruptionKind::Occlusion => "occlusion",
            CorruptionKind::GeomPerturb => "geom_perturb",
            CorruptionKind::IntensityDistort => "intensity_distort",
        }
    }

    /// `(soft, hard)` severities from the toy experiments.
    pub fn severities(self) -> (f64, f64) {
        match self {
            CorruptionKind::PointDrop | CorruptionKind::Occlusion => (0.5, 0.9),
            CorruptionKind::GeomPerturb | CorruptionKind::IntensityDistort => (0.05, 0.25),
        }
    }

    fn is_ratio(self) -> bool {
        matches!(self, CorruptionKind::PointDrop | CorruptionKind::Occlusion)
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown corruption kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Soft,
    Hard,
}

/// Declarative corruption recipe.
///
/// `severity` is the drop ratio (D1), selection ratio (D2) or noise sigma (D3, D4).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: f64,
    #[serde(default)]
    pub mode: DropMode,
    /// D4 only: subtract signed noise (`true`) or its absolute value.
    #[serde(default = "default_signed")]
    pub signed: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_signed() -> bool {
    true
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: f64, seed: u64) -> Self {
        Self {
            kind,
            severity,
            mode: DropMode::default(),
            signed: true,
            seed,
        }
    }

    pub fn preset(kind: CorruptionKind, level: Severity, seed: u64) -> Self {
        let (soft, hard) = kind.severities();
        let severity = match level {
            Severity::Soft => soft,
            Severity::Hard => hard,
        };
        Self::new(kind, severity, seed)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.severity;
        if self.kind.is_ratio() {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::InvalidSpec(format!(
                    "{} ratio must lie in [0, 1], got {s}",
                    self.kind
                )));
            }
        } else if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::InvalidSpec(format!("{} sigma must be >= 0, got {s}", self.kind)));
        }
        Ok(())
    }
}

fn check_ratio(ratio: f64) {
    assert!((0.0..=1.0).contains(&ratio), "ratio must lie in [0, 1], got {ratio}");
}

fn check_sigma(sigma: f64) {
    assert!(sigma >= 0.0 && sigma.is_finite(), "sigma must be >= 0, got {sigma}");
}

/// Indices of `round(n * ratio)` points chosen by a seeded shuffle.
pub(crate) fn exact_selection(n: usize, ratio: f64, rng: &mut impl Rng) -> Vec<bool> {
    let k = ((n as f64) * ratio).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut mask = vec![false; n];
    for &i in &order[..k.min(n)] {
        mask[i] = true;
    }
    mask
}

/// D1: removes points (and their labels) at identical indices, preserving order.
pub fn apply_point_drop(
    cloud: &PointCloud,
    labels: &LabelArray,
    ratio: f64,
    mode: DropMode,
    seed: u64,
) -> (PointCloud, LabelArray) {
    check_ratio(ratio);
    let mut rng = rng_from_seed(seed);
    let keep: Vec<bool> = match mode {
        DropMode::Bernoulli => (0..cloud.len()).map(|_| rng.random::<f64>() >= ratio).collect(),
        DropMode::Exact => exact_selection(cloud.len(), ratio, &mut rng)
            .into_iter()
            .map(|dropped| !dropped)
            .collect(),
    };
    (cloud.retain(&keep), labels.retain(&keep))
}

/// D2: pulls an exact fraction of points to a tenth of their range along the beam.
pub fn apply_occlusion(cloud: &PointCloud, ratio: f64, seed: u64) -> PointCloud {
    check_ratio(ratio);
    let mut rng = rng_from_seed(seed);
    let selected = exact_selection(cloud.len(), ratio, &mut rng);
    let mut out = cloud.clone();
    let (x, y, z) = out.xyz_mut();
    for (i, _) in selected.iter().enumerate().filter(|(_, s)| **s) {
        x[i] *= OCCLUSION_DEPTH_FACTOR;
        y[i] *= OCCLUSION_DEPTH_FACTOR;
        z[i] *= OCCLUSION_DEPTH_FACTOR;
    }
    out
}

/// Adds `noise` unless it is zero, so `-0.0` inputs survive a zero-sigma pass.
#[inline]
pub(crate) fn add_noise(v: &mut f64, noise: f64) {
    if noise != 0.0 {
        *v += noise;
    }
}

/// D3: i.i.d. `N(0, sigma²)` on x, y and z of every point.
pub fn apply_geom_perturb(cloud: &PointCloud, sigma: f64, seed: u64) -> PointCloud {
    check_sigma(sigma);
    let mut rng = rng_from_seed(seed);
    let mut out = cloud.clone();
    let (x, y, z) = out.xyz_mut();
    for i in 0..x.len() {
        for col in [&mut *x, &mut *y, &mut *z] {
            let n: f64 = rng.sample(StandardNormal);
            add_noise(&mut col[i], sigma * n);
        }
    }
    out
}

/// The raw `N(0, sigma²)` draws used by [`apply_intensity_distort`], before
/// sign handling and clamping.
pub fn intensity_noise(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
    check_sigma(sigma);
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// D4: `intensity := clamp(intensity - noise, 0, 1)`; with `signed = false`
/// the absolute value of the noise is subtracted (attenuation only).
pub fn apply_intensity_distort(cloud: &PointCloud, sigma: f64, signed: bool, seed: u64) -> PointCloud {
    let noise = intensity_noise(cloud.len(), sigma, seed);
    let mut out = cloud.clone();
    for (v, n) in out.intensity_mut().iter_mut().zip(noise) {
        let n = if signed { n } else { n.abs() };
        if n != 0.0 {
            *v = (*v - n).clamp(0.0, 1.0);
        }
    }
    out
}

/// Dispatches a [`CorruptionSpec`]; kinds that do not drop points return the labels unchanged.
pub fn apply_corruption(
    cloud: &PointCloud,
    labels: &LabelArray,
    spec: &CorruptionSpec,
) -> Result<(PointCloud, LabelArray)> {
    spec.validate()?;
    labels.check_paired(cloud)?;
    Ok(match spec.kind {
        CorruptionKind::PointDrop => apply_point_drop(cloud, labels, spec.severity, spec.mode, spec.seed),
        CorruptionKind::Occlusion => (apply_occlusion(cloud, spec.severity, spec.seed), labels.clone()),
        CorruptionKind::GeomPerturb => (apply_geom_perturb(cloud, spec.severity, spec.seed), labels.clone()),
        CorruptionKind::IntensityDistort => (
            apply_intensity_distort(cloud, spec.severity, spec.signed, spec.seed),
            labels.clone(),
        ),
    })
}
