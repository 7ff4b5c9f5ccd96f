use crate::error::{Error, Result};
use crate::pointcloud::{azimuth, LabelArray, PointCloud};
use crate::rng::rng_from_seed;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// Region × ratio drop actions plus a trailing no-op.
///
/// Action `id < num_actions - 1` decodes as
/// `id = (band * sectors + sector) * ratios.len() + ratio_index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActionSpace {
    /// Lower edges of the depth bands in meters; the last band is unbounded.
    pub depth_bounds: Vec<f64>,
    /// Number of equal azimuth sectors covering `(-π, π]`.
    pub sectors: usize,
    pub ratios: Vec<f64>,
}

impl Default for ActionSpace {
    fn default() -> Self {
        Self {
            depth_bounds: vec![0.0, 10.0, 25.0, 50.0],
            sectors: 8,
            ratios: vec![0.25, 0.5, 0.75, 0.9],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    NoOp,
    Drop {
        cell: usize,
        band: usize,
        sector: usize,
        ratio: f64,
    },
}

impl ActionSpace {
    pub fn validate(&self) -> Result<()> {
        let b = &self.depth_bounds;
        if b.first() != Some(&0.0) || b.iter().any(|v| !v.is_finite()) || b.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSpec(
                "depth bounds must start at 0 and increase strictly".into(),
            ));
        }
        if self.sectors == 0 || self.ratios.is_empty() {
            return Err(Error::InvalidSpec("need at least one sector and one ratio".into()));
        }
        if self.ratios.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
            return Err(Error::InvalidSpec("drop ratios must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn num_bands(&self) -> usize {
        self.depth_bounds.len()
    }

    pub fn num_cells(&self) -> usize {
        self.num_bands() * self.sectors
    }

    pub fn num_actions(&self) -> usize {
        self.num_cells() * self.ratios.len() + 1
    }

    pub fn noop(&self) -> usize {
        self.num_actions() - 1
    }

    /// Width of the state vector built over this space.
    pub fn state_width(&self) -> usize {
        2 + 3 * self.num_cells()
    }

    /// Scale used to normalize mean ranges in the state.
    pub fn range_norm(&self) -> f64 {
        let last = *self.depth_bounds.last().unwrap_or(&0.0);
        if last > 0.0 {
            last
        } else {
            1.0
        }
    }

    pub fn decode(&self, id: usize) -> Result<Action> {
        if id >= self.num_actions() {
            return Err(Error::InvalidSpec(format!(
                "action {id} outside [0, {})",
                self.num_actions()
            )));
        }
        if id == self.noop() {
            return Ok(Action::NoOp);
        }
        let k = self.ratios.len();
        let cell = id / k;
        Ok(Action::Drop {
            cell,
            band: cell / self.sectors,
            sector: cell % self.sectors,
            ratio: self.ratios[id % k],
        })
    }

    pub fn band_of(&self, range: f64) -> usize {
        self.depth_bounds.partition_point(|&b| b <= range).saturating_sub(1)
    }

    pub fn sector_of(&self, azimuth: f64) -> usize {
        let width = TAU / self.sectors as f64;
        (((azimuth + PI) / width).floor() as usize).min(self.sectors - 1)
    }

    pub fn cell_of(&self, range: f64, azimuth: f64) -> usize {
        self.band_of(range) * self.sectors + self.sector_of(azimuth)
    }

    /// Cell index of every point in the cloud.
    pub fn cells(&self, cloud: &PointCloud) -> Vec<usize> {
        (0..cloud.len())
            .map(|i| {
                let r = cloud.range(i);
                let theta = if r > 0.0 {
                    azimuth(cloud.x()[i], cloud.y()[i])
                } else {
                    0.0
                };
                self.cell_of(r, theta)
            })
            .collect()
    }
}

/// Drops `round(m * ratio)` of the `m` points inside the action's cell.
/// Points outside the cell are untouched; the no-op returns the input.
pub fn apply_drop_action(
    cloud: &PointCloud,
    labels: &LabelArray,
    action: usize,
    space: &ActionSpace,
    seed: u64,
) -> Result<(PointCloud, LabelArray)> {
    labels.check_paired(cloud)?;
    let Action::Drop { cell, ratio, .. } = space.decode(action)? else {
        return Ok((cloud.clone(), labels.clone()));
    };
    let mut members: Vec<usize> = space
        .cells(cloud)
        .into_iter()
        .enumerate()
        .filter(|(_, c)| *c == cell)
        .map(|(i, _)| i)
        .collect();
    if members.is_empty() {
        return Ok((cloud.clone(), labels.clone()));
    }
    let k = (members.len() as f64 * ratio).round() as usize;
    members.shuffle(&mut rng_from_seed(seed));
    let mut keep = vec![true; cloud.len()];
    for &i in &members[..k] {
        keep[i] = false;
    }
    Ok((cloud.retain(&keep), labels.retain(&keep)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::{generate_scene, SceneSpec};
    use proptest::prelude::*;

    #[test]
    fn default_sizes() {
        let s = ActionSpace::default();
        assert_eq!(s.num_cells(), 32);
        assert_eq!(s.num_actions(), 129);
        assert_eq!(s.state_width(), 98);
        assert_eq!(s.decode(128).unwrap(), Action::NoOp);
        assert_eq!(
            s.decode(4 * 9 + 3).unwrap(),
            Action::Drop {
                cell: 9,
                band: 1,
                sector: 1,
                ratio: 0.9
            }
        );
        assert!(s.decode(129).is_err());
    }

    #[test]
    fn band_and_sector_edges() {
        let s = ActionSpace::default();
        assert_eq!(s.band_of(0.0), 0);
        assert_eq!(s.band_of(9.999), 0);
        assert_eq!(s.band_of(10.0), 1);
        assert_eq!(s.band_of(50.0), 3);
        assert_eq!(s.band_of(1e6), 3);
        assert_eq!(s.sector_of(PI), 7);
        assert_eq!(s.sector_of(-PI + 1e-12), 0);
        assert_eq!(s.sector_of(0.0), 4);
    }

    proptest! {
        #[test]
        fn cells_partition_space(r in 0.0..200.0f64, theta in -PI..=PI) {
            let s = ActionSpace::default();
            let theta = if theta == -PI { PI } else { theta };
            let c = s.cell_of(r, theta);
            prop_assert!(c < s.num_cells());
            let band = c / s.sectors;
            let lo = s.depth_bounds[band];
            let hi = s.depth_bounds.get(band + 1).copied().unwrap_or(f64::INFINITY);
            prop_assert!(lo <= r && r < hi);
        }
    }

    #[test]
    fn noop_and_empty_cell_are_identity() {
        let (c, l) = generate_scene(&SceneSpec::default().with_seed(1)).unwrap();
        let s = ActionSpace::default();
        assert_eq!(
            apply_drop_action(&c, &l, s.noop(), &s, 3).unwrap(),
            (c.clone(), l.clone())
        );
        // Ground radius 40 and objects within 35 m + extent: band [50, ∞) is empty.
        let far = s.num_actions() - 2;
        assert!(matches!(s.decode(far).unwrap(), Action::Drop { band: 3, .. }));
        assert_eq!(apply_drop_action(&c, &l, far, &s, 3).unwrap(), (c, l));
    }

    #[test]
    fn drops_exact_share_of_cell() {
        let s = ActionSpace::default();
        // 100 points in band 0 / sector 4 (azimuth ≈ 0.2), 50 points elsewhere.
        let mut pts = Vec::new();
        for i in 0..100 {
            pts.push([5.0 + 0.01 * i as f64, 1.0, 0.0, 0.5]);
        }
        for i in 0..50 {
            pts.push([-20.0 - 0.01 * i as f64, -3.0, 0.0, 0.5]);
        }
        let c = PointCloud::from_points(&pts).unwrap();
        let l = LabelArray::new((0..150).map(|i| if i < 100 { 1 } else { 2 }).collect(), 255);
        let cell = s.cell_of(5.0f64.hypot(1.0), 0.2);
        let ratio_idx = 2; // 0.75
        let action = cell * s.ratios.len() + ratio_idx;
        let (c2, l2) = apply_drop_action(&c, &l, action, &s, 7).unwrap();
        assert_eq!(l2.semantic.iter().filter(|&&v| v == 1).count(), 25);
        assert_eq!(l2.semantic.iter().filter(|&&v| v == 2).count(), 50);
        assert_eq!(c2.len(), 75);
        // Survivors outside the cell are bit-identical and in order.
        let outside: Vec<[f64; 4]> = (0..c2.len()).map(|i| c2.point(i)).filter(|p| p[0] < 0.0).collect();
        assert_eq!(outside, pts[100..].to_vec());
    }
}
