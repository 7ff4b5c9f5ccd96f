//! Deterministic synthetic street scenes with five classes:
//! 0 ground, 1 wall, 2 pole, 3 vehicle, 4 clutter.

use super::{LabelArray, PointCloud};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const NUM_SCENE_CLASSES: usize = 5;

pub const GROUND: u16 = 0;
pub const WALL: u16 = 1;
pub const POLE: u16 = 2;
pub const VEHICLE: u16 = 3;
pub const CLUTTER: u16 = 4;

/// Intensity drawn uniformly from `mean ± spread`, clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassIntensity {
    pub mean: f64,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub ground_points: usize,
    /// Ground is a disk around the sensor between these radii.
    pub ground_min_radius: f64,
    pub ground_radius: f64,
    /// Ground height is uniform in `[-ground_noise, ground_noise]`.
    pub ground_noise: f64,
    pub walls: usize,
    pub points_per_wall: usize,
    pub wall_length: f64,
    pub wall_height: f64,
    pub poles: usize,
    pub points_per_pole: usize,
    pub pole_height: f64,
    pub pole_radius: f64,
    pub vehicles: usize,
    pub points_per_vehicle: usize,
    /// Length, width, height of a vehicle box.
    pub vehicle_size: [f64; 3],
    pub vehicle_clearance: f64,
    pub clutter_points: usize,
    pub clutter_height: [f64; 2],
    /// Horizontal distance band where objects and clutter are placed.
    pub object_min_range: f64,
    pub object_max_range: f64,
    /// Indexed by class id.
    pub intensity: [ClassIntensity; NUM_SCENE_CLASSES],
}

impl Default for SceneSpec {
    fn default() -> Self {
        let ci = |mean, spread| ClassIntensity { mean, spread };
        Self {
            seed: 0,
            ground_points: 2500,
            ground_min_radius: 2.0,
            ground_radius: 40.0,
            ground_noise: 0.05,
            walls: 3,
            points_per_wall: 300,
            wall_length: 12.0,
            wall_height: 4.0,
            poles: 6,
            points_per_pole: 30,
            pole_height: 6.0,
            pole_radius: 0.1,
            vehicles: 4,
            points_per_vehicle: 300,
            vehicle_size: [4.5, 1.8, 1.4],
            vehicle_clearance: 0.3,
            clutter_points: 300,
            clutter_height: [0.3, 3.0],
            object_min_range: 4.0,
            object_max_range: 35.0,
            intensity: [
                ci(0.30, 0.15),
                ci(0.50, 0.15),
                ci(0.90, 0.10),
                ci(0.80, 0.15),
                ci(0.40, 0.20),
            ],
        }
    }
}

impl SceneSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// A scene containing nothing but `n` ground points.
    pub fn ground_only(n: usize) -> Self {
        Self {
            ground_points: n,
            walls: 0,
            poles: 0,
            vehicles: 0,
            clutter_points: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("ground_radius", self.ground_radius),
            ("wall_length", self.wall_length),
            ("wall_height", self.wall_height),
            ("pole_height", self.pole_height),
            ("pole_radius", self.pole_radius),
            ("vehicle_size[0]", self.vehicle_size[0]),
            ("vehicle_size[1]", self.vehicle_size[1]),
            ("vehicle_size[2]", self.vehicle_size[2]),
            ("object_max_range", self.object_max_range),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidSpec(format!("scene {name} must be > 0, got {v}")));
            }
        }
        let ordered = [
            ("ground radii", self.ground_min_radius, self.ground_radius),
            ("object ranges", self.object_min_range, self.object_max_range),
            ("clutter heights", self.clutter_height[0], self.clutter_height[1]),
        ];
        for (name, lo, hi) in ordered {
            if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
                return Err(Error::InvalidSpec(format!("scene {name} must satisfy 0 <= min <= max")));
            }
        }
        if !(self.ground_noise >= 0.0 && self.vehicle_clearance >= 0.0) {
            return Err(Error::InvalidSpec("scene noise and clearance must be >= 0".into()));
        }
        for c in &self.intensity {
            if !(c.spread >= 0.0 && (0.0..=1.0).contains(&c.mean)) {
                return Err(Error::InvalidSpec(
                    "class intensity mean must lie in [0, 1], spread >= 0".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn class_counts(&self) -> [usize; NUM_SCENE_CLASSES] {
        [
            self.ground_points,
            self.walls * self.points_per_wall,
            self.poles * self.points_per_pole,
            self.vehicles * self.points_per_vehicle,
            self.clutter_points,
        ]
    }
}

struct Builder<R> {
    rng: R,
    cloud: PointCloud,
    semantic: Vec<u16>,
    instance: Vec<u16>,
    intensity: [ClassIntensity; NUM_SCENE_CLASSES],
}

impl<R: Rng> Builder<R> {
    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi > lo {
            self.rng.random_range(lo..hi)
        } else {
            lo
        }
    }

    fn emit(&mut self, class: u16, instance: u16, p: [f64; 3]) {
        let c = self.intensity[usize::from(class)];
        let i = self.uniform(c.mean - c.spread, c.mean + c.spread).clamp(0.0, 1.0);
        self.cloud.push(p[0], p[1], p[2], i);
        self.semantic.push(class);
        self.instance.push(instance);
    }

    /// Horizontal anchor at a uniform range and azimuth.
    fn anchor(&mut self, lo: f64, hi: f64) -> (f64, f64) {
        let rho = self.uniform(lo, hi);
        let alpha = self.uniform(-PI, PI);
        (rho * alpha.cos(), rho * alpha.sin())
    }
}

/// Generates a labeled scene. Pure function of `spec` (seed included).
pub fn generate_scene(spec: &SceneSpec) -> Result<(PointCloud, LabelArray)> {
    spec.validate()?;
    let total: usize = spec.class_counts().iter().sum();
    let mut b = Builder {
        rng: rng_from_seed(spec.seed),
        cloud: PointCloud::with_capacity(total),
        semantic: Vec::with_capacity(total),
        instance: Vec::with_capacity(total),
        intensity: spec.intensity,
    };

    for _ in 0..spec.ground_points {
        let rho = b.uniform(spec.ground_min_radius, spec.ground_radius);
        let alpha = b.uniform(-PI, PI);
        let z = b.uniform(-spec.ground_noise, spec.ground_noise);
        b.emit(GROUND, 0, [rho * alpha.cos(), rho * alpha.sin(), z]);
    }

    let mut next_instance: u16 = 1;
    for _ in 0..spec.walls {
        let (cx, cy) = b.anchor(spec.object_min_range, spec.object_max_range);
        let yaw = b.uniform(-PI, PI);
        for _ in 0..spec.points_per_wall {
            let u = b.uniform(-spec.wall_length / 2.0, spec.wall_length / 2.0);
            let h = b.uniform(0.0, spec.wall_height);
            b.emit(WALL, next_instance, [cx + u * yaw.cos(), cy + u * yaw.sin(), h]);
        }
        next_instance = next_instance.wrapping_add(1);
    }

    for _ in 0..spec.poles {
        let (cx, cy) = b.anchor(spec.object_min_range, spec.object_max_range);
        for _ in 0..spec.points_per_pole {
            let a = b.uniform(-PI, PI);
            let h = b.uniform(0.0, spec.pole_height);
            b.emit(
                POLE,
                next_instance,
                [cx + spec.pole_radius * a.cos(), cy + spec.pole_radius * a.sin(), h],
            );
        }
        next_instance = next_instance.wrapping_add(1);
    }

    let [len, wid, hgt] = spec.vehicle_size;
    // Top and four sides; the underside is never observed.
    let faces = [len * wid, len * hgt, len * hgt, wid * hgt, wid * hgt];
    let face_total: f64 = faces.iter().sum();
    for _ in 0..spec.vehicles {
        let (cx, cy) = b.anchor(spec.object_min_range, spec.object_max_range);
        let yaw = b.uniform(-PI, PI);
        let (c, s) = (yaw.cos(), yaw.sin());
        for _ in 0..spec.points_per_vehicle {
            let mut pick = b.uniform(0.0, face_total);
            let mut face = 0;
            while face < faces.len() - 1 && pick >= faces[face] {
                pick -= faces[face];
                face += 1;
            }
            let (u, v, w) = match face {
                0 => (b.uniform(-len / 2.0, len / 2.0), b.uniform(-wid / 2.0, wid / 2.0), hgt),
                1 | 2 => {
                    let side = if face == 1 { -wid / 2.0 } else { wid / 2.0 };
                    (b.uniform(-len / 2.0, len / 2.0), side, b.uniform(0.0, hgt))
                }
                _ => {
                    let side = if face == 3 { -len / 2.0 } else { len / 2.0 };
                    (side, b.uniform(-wid / 2.0, wid / 2.0), b.uniform(0.0, hgt))
                }
            };
            b.emit(
                VEHICLE,
                next_instance,
                [cx + u * c - v * s, cy + u * s + v * c, spec.vehicle_clearance + w],
            );
        }
        next_instance = next_instance.wrapping_add(1);
    }

    for _ in 0..spec.clutter_points {
        let (x, y) = b.anchor(spec.object_min_range, spec.object_max_range);
        let z = b.uniform(spec.clutter_height[0], spec.clutter_height[1]);
        b.emit(CLUTTER, 0, [x, y, z]);
    }

    let labels = LabelArray {
        semantic: b.semantic,
        instance: b.instance,
        ignore_label: crate::config::DEFAULT_IGNORE_LABEL,
    };
    Ok((b.cloud, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ground_only_scene() {
        let spec = SceneSpec::ground_only(5000).with_seed(3);
        let (cloud, labels) = generate_scene(&spec).unwrap();
        assert_eq!(cloud.len(), 5000);
        assert!(labels.semantic.iter().all(|&l| l == GROUND));
        assert!(cloud.z().iter().all(|z| z.abs() < spec.ground_noise));
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SceneSpec::default().with_seed(42);
        let a = generate_scene(&spec).unwrap();
        let b = generate_scene(&spec).unwrap();
        assert_eq!(
            crate::pointcloud::encode_scan(&a.0),
            crate::pointcloud::encode_scan(&b.0)
        );
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let c = generate_scene(&spec.clone().with_seed(43)).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn histogram_matches_counts() {
        let spec = SceneSpec {
            walls: 2,
            points_per_wall: 17,
            poles: 3,
            points_per_pole: 5,
            vehicles: 1,
            points_per_vehicle: 40,
            clutter_points: 11,
            ground_points: 123,
            ..SceneSpec::default()
        };
        let (cloud, labels) = generate_scene(&spec).unwrap();
        let mut counted = [0usize; NUM_SCENE_CLASSES];
        for &l in &labels.semantic {
            counted[usize::from(l)] += 1;
        }
        assert_eq!(counted, [123, 34, 15, 40, 11]);
        assert_eq!(cloud.len(), 223);
    }

    #[test]
    fn points_respect_extents() {
        let spec = SceneSpec::default().with_seed(9);
        let (cloud, labels) = generate_scene(&spec).unwrap();
        let reach = spec.object_max_range + spec.wall_length.max(spec.vehicle_size[0]);
        for i in 0..cloud.len() {
            let rho = cloud.x()[i].hypot(cloud.y()[i]);
            if labels.semantic[i] == GROUND {
                assert!(rho >= spec.ground_min_radius - 1e-9 && rho <= spec.ground_radius + 1e-9);
            } else {
                assert!(rho <= reach);
            }
            assert!((0.0..=1.0).contains(&cloud.intensity()[i]));
        }
    }

    #[test]
    fn rejects_bad_extents() {
        let spec = SceneSpec {
            wall_height: 0.0,
            ..SceneSpec::default()
        };
        assert!(matches!(generate_scene(&spec), Err(Error::InvalidSpec(_))));
    }
}
