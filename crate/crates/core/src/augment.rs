//! Selective jittering: Gaussian noise applied only inside a sampled depth
//! window (DSJ) or azimuth arc (ASJ), plus range-only jitter (RJ) for the
//! points neither selector picked.

use crate::distortion::add_noise;
use crate::error::{Error, Result};
use crate::pointcloud::azimuth;
use crate::pointcloud::PointCloud;
use crate::rng::{rng_from_seed, SeededRng};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DsjSpec {
    pub enabled: bool,
    /// The depth threshold is drawn uniformly from `[min, max]` meters.
    pub depth_interval: [f64; 2],
}

impl Default for DsjSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            depth_interval: [10.0, 60.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AsjSpec {
    pub enabled: bool,
    /// Arc width drawn uniformly from `[min, max]` radians.
    pub width_interval: [f64; 2],
}

impl Default for AsjSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            width_interval: [PI / 6.0, PI],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RjSpec {
    pub enabled: bool,
    pub sigma: f64,
}

impl Default for RjSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            sigma: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSpec {
    pub noise_mean: f64,
    pub noise_sigma: f64,
    pub dsj: DsjSpec,
    pub asj: AsjSpec,
    pub rj: RjSpec,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            noise_mean: 0.0,
            noise_sigma: 0.01,
            dsj: DsjSpec::default(),
            asj: AsjSpec::default(),
            rj: RjSpec::default(),
            seed: 0,
        }
    }
}

impl AugmentSpec {
    /// Every stage switched off.
    pub fn disabled() -> Self {
        let mut spec = Self::default();
        spec.dsj.enabled = false;
        spec.asj.enabled = false;
        spec.rj.enabled = false;
        spec
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn is_identity(&self) -> bool {
        !(self.dsj.enabled || self.asj.enabled || self.rj.enabled)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) || !self.noise_mean.is_finite() {
            return bad("jitter sigma must be >= 0 and mean finite");
        }
        if !(self.rj.sigma >= 0.0 && self.rj.sigma.is_finite()) {
            return bad("range-jitter sigma must be >= 0");
        }
        let [dmin, dmax] = self.dsj.depth_interval;
        if !(dmin >= 0.0 && dmin <= dmax && dmax.is_finite()) {
            return bad("depth interval must satisfy 0 <= min <= max");
        }
        let [wmin, wmax] = self.asj.width_interval;
        if !(wmin >= 0.0 && wmin <= wmax && wmax <= TAU) {
            return bad("width interval must satisfy 0 <= min <= max <= 2π");
        }
        Ok(())
    }
}

/// Which points a selector picked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionMask(pub Vec<bool>);

impl SelectionMask {
    pub fn none(n: usize) -> Self {
        Self(vec![false; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|s| **s).count()
    }

    pub fn union(&self, other: &SelectionMask) -> SelectionMask {
        assert_eq!(self.len(), other.len());
        SelectionMask(self.0.iter().zip(&other.0).map(|(a, b)| *a || *b).collect())
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }
}

fn uniform_in(rng: &mut SeededRng, [lo, hi]: [f64; 2]) -> f64 {
    let u: f64 = rng.random();
    lo + (hi - lo) * u
}

fn depth_mask(cloud: &PointCloud, threshold: f64) -> SelectionMask {
    SelectionMask((0..cloud.len()).map(|i| cloud.range(i) < threshold).collect())
}

/// Points whose azimuth lies in the wrapped arc `[start, start + width)`.
fn arc_mask(cloud: &PointCloud, start: f64, width: f64) -> SelectionMask {
    SelectionMask(
        (0..cloud.len())
            .map(|i| {
                if width >= TAU {
                    return true;
                }
                let theta = if cloud.range(i) > 0.0 {
                    azimuth(cloud.x()[i], cloud.y()[i])
                } else {
                    0.0
                };
                (theta - start).rem_euclid(TAU) < width
            })
            .collect(),
    )
}

/// Adds `N(mean, sigma²)` to x, y, z and intensity of every selected point,
/// in index order; intensity is clamped to `[0, 1]`.
fn jitter_selected(cloud: &PointCloud, mask: &SelectionMask, mean: f64, sigma: f64, rng: &mut SeededRng) -> PointCloud {
    let mut out = cloud.clone();
    for i in (0..cloud.len()).filter(|&i| mask.get(i)) {
        let mut d = [0.0; 4];
        for v in &mut d {
            *v = mean + sigma * rng.sample::<f64, _>(StandardNormal);
        }
        let (mut x, mut y, mut z) = (cloud.x()[i], cloud.y()[i], cloud.z()[i]);
        add_noise(&mut x, d[0]);
        add_noise(&mut y, d[1]);
        add_noise(&mut z, d[2]);
        out.set_xyz(i, x, y, z);
        let mut inten = cloud.intensity()[i];
        if d[3] != 0.0 {
            inten = (inten + d[3]).clamp(0.0, 1.0);
        }
        out.intensity_mut()[i] = inten;
    }
    out
}

/// Depth-selective jittering: every point closer than a threshold drawn from
/// `depth_interval` is jittered.
pub fn dsj(cloud: &PointCloud, sigma: f64, depth_interval: [f64; 2], seed: u64) -> (PointCloud, SelectionMask) {
    let mut rng = rng_from_seed(seed);
    let threshold = uniform_in(&mut rng, depth_interval);
    let mask = depth_mask(cloud, threshold);
    (jitter_selected(cloud, &mask, 0.0, sigma, &mut rng), mask)
}

/// Angle-selective jittering: every point inside an azimuth arc with a
/// uniform start in `(-π, π]` and width from `width_interval` is jittered.
pub fn asj(cloud: &PointCloud, sigma: f64, width_interval: [f64; 2], seed: u64) -> (PointCloud, SelectionMask) {
    let mut rng = rng_from_seed(seed);
    let mask = sample_arc(cloud, width_interval, &mut rng);
    (jitter_selected(cloud, &mask, 0.0, sigma, &mut rng), mask)
}

fn sample_arc(cloud: &PointCloud, width_interval: [f64; 2], rng: &mut SeededRng) -> SelectionMask {
    let u: f64 = rng.random();
    let start = PI - TAU * u;
    let width = uniform_in(rng, width_interval);
    arc_mask(cloud, start, width)
}

fn range_jitter(cloud: &PointCloud, sigma_r: f64, mask: &SelectionMask, rng: &mut SeededRng) -> PointCloud {
    assert_eq!(mask.len(), cloud.len(), "mask length must equal point count");
    let mut out = cloud.clone();
    for i in (0..cloud.len()).filter(|&i| !mask.get(i)) {
        let n: f64 = rng.sample(StandardNormal);
        let r = cloud.range(i);
        if r == 0.0 {
            continue;
        }
        let r_new = (r + sigma_r * n).max(0.0);
        let s = r_new / r;
        out.set_xyz(i, cloud.x()[i] * s, cloud.y()[i] * s, cloud.z()[i] * s);
    }
    out
}

/// Range jittering: moves every point *outside* `mask` along its beam by
/// `N(0, sigma_r²)`, clamping the range at zero. Intensity is unchanged.
pub fn rj(cloud: &PointCloud, sigma_r: f64, mask: &SelectionMask, seed: u64) -> PointCloud {
    range_jitter(cloud, sigma_r, mask, &mut rng_from_seed(seed))
}

/// Result of [`compose_sj_with_mask`].
#[derive(Debug, Clone)]
pub struct SjOutput {
    pub cloud: PointCloud,
    /// Union of the DSJ and ASJ selections.
    pub selected: SelectionMask,
}

/// Full selective-jitter stage; see [`compose_sj_with_mask`].
pub fn compose_sj(cloud: &PointCloud, spec: &AugmentSpec) -> PointCloud {
    compose_sj_with_mask(cloud, spec).cloud
}

/// Computes the DSJ and ASJ selections on the input geometry, jitters their
/// union once, then range-jitters the complement when RJ is enabled.
pub fn compose_sj_with_mask(cloud: &PointCloud, spec: &AugmentSpec) -> SjOutput {
    let mut rng = rng_from_seed(spec.seed);
    let mut selected = SelectionMask::none(cloud.len());
    if spec.dsj.enabled {
        let threshold = uniform_in(&mut rng, spec.dsj.depth_interval);
        selected = selected.union(&depth_mask(cloud, threshold));
    }
    if spec.asj.enabled {
        selected = selected.union(&sample_arc(cloud, spec.asj.width_interval, &mut rng));
    }
    let mut out = if spec.dsj.enabled || spec.asj.enabled {
        jitter_selected(cloud, &selected, spec.noise_mean, spec.noise_sigma, &mut rng)
    } else {
        cloud.clone()
    };
    if spec.rj.enabled {
        out = range_jitter(&out, spec.rj.sigma, &selected, &mut rng);
    }
    SjOutput { cloud: out, selected }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::{generate_scene, SceneSpec};

    fn scene() -> PointCloud {
        generate_scene(&SceneSpec::default().with_seed(21)).unwrap().0
    }

    #[test]
    fn dsj_threshold_behaviour() {
        let two = PointCloud::from_points(&[[5.0, 0.0, 0.0, 0.5], [50.0, 0.0, 0.0, 0.5]]).unwrap();
        let (out, mask) = dsj(&two, 0.01, [20.0, 20.0], 1);
        assert_eq!(mask.0, vec![true, false]);
        assert_eq!(out.point(1), two.point(1));
        assert_ne!(out.point(0), two.point(0));

        let c = scene();
        let (out, mask) = dsj(&c, 0.0, [10.0, 60.0], 3);
        assert_eq!(out, c);
        assert!(mask.count() > 0);
        let (out, mask) = dsj(&c, 0.05, [0.0, 0.0], 3);
        assert_eq!(out, c);
        assert_eq!(mask.count(), 0);
    }

    #[test]
    fn asj_full_and_empty_arcs() {
        let c = scene();
        let (_, mask) = asj(&c, 0.01, [TAU, TAU], 5);
        assert_eq!(mask.count(), c.len());
        let (out, mask) = asj(&c, 0.01, [0.0, 0.0], 5);
        assert_eq!(mask.count(), 0);
        assert_eq!(out, c);
    }

    #[test]
    fn arc_wraps_across_seam() {
        let pts: Vec<[f64; 4]> = [-3.0f64, -1.0, 1.0, 3.0]
            .iter()
            .map(|t| [t.cos() * 10.0, t.sin() * 10.0, 0.0, 0.5])
            .collect();
        let c = PointCloud::from_points(&pts).unwrap();
        // Arc from 2.5 rad, 1.5 rad wide ends at 4.0 ≡ -2.283 rad.
        let mask = arc_mask(&c, 2.5, 1.5);
        assert_eq!(mask.0, vec![true, false, false, true]);
    }

    #[test]
    fn rj_moves_only_unmasked_along_beam() {
        let c = scene();
        let none = SelectionMask::none(c.len());
        assert_eq!(rj(&c, 0.0, &none, 4), c);
        let all = SelectionMask(vec![true; c.len()]);
        assert_eq!(rj(&c, 0.5, &all, 4), c);

        let out = rj(&c, 0.5, &none, 4);
        let mut moved = 0;
        for i in 0..c.len() {
            let (r0, r1) = (c.range(i), out.range(i));
            if r0 != r1 {
                moved += 1;
            }
            assert_eq!(out.intensity()[i], c.intensity()[i]);
            for (a, b) in [(c.x()[i], out.x()[i]), (c.y()[i], out.y()[i]), (c.z()[i], out.z()[i])] {
                assert!((a / r0 - b / r1).abs() <= 1e-9, "direction changed at {i}");
            }
        }
        assert!(moved > c.len() / 2);
    }

    #[test]
    fn compose_disabled_is_identity() {
        let c = scene();
        assert_eq!(compose_sj(&c, &AugmentSpec::disabled().with_seed(8)), c);
    }

    #[test]
    fn compose_dsj_only_matches_dsj() {
        let c = scene();
        let mut spec = AugmentSpec::disabled().with_seed(13);
        spec.dsj.enabled = true;
        let (expected, mask) = dsj(&c, spec.noise_sigma, spec.dsj.depth_interval, 13);
        let out = compose_sj_with_mask(&c, &spec);
        assert_eq!(out.cloud, expected);
        assert_eq!(out.selected, mask);

        let mut spec = AugmentSpec::disabled().with_seed(13);
        spec.asj.enabled = true;
        let (expected, _) = asj(&c, spec.noise_sigma, spec.asj.width_interval, 13);
        assert_eq!(compose_sj(&c, &spec), expected);
    }

    #[test]
    fn compose_partition() {
        let c = scene();
        let spec = AugmentSpec::default().with_seed(77);
        let out = compose_sj_with_mask(&c, &spec);
        assert_eq!(out.cloud.len(), c.len());
        for i in 0..c.len() {
            let (p, q) = (c.point(i), out.cloud.point(i));
            if out.selected.get(i) {
                assert_ne!(p, q);
            } else {
                assert_eq!(p[3], q[3]);
                let (r0, r1) = (c.range(i), out.cloud.range(i));
                for k in 0..3 {
                    assert!((p[k] / r0 - q[k] / r1).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn validation() {
        let mut spec = AugmentSpec::default();
        assert!(spec.validate().is_ok());
        spec.asj.width_interval = [0.0, 7.0];
        assert!(spec.validate().is_err());
        let mut spec = AugmentSpec::default();
        spec.dsj.depth_interval = [5.0, 1.0];
        assert!(spec.validate().is_err());
    }
}
