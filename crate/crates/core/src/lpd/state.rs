use super::ActionSpace;
use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;

/// `[L, H]` followed by `(count fraction, mean range / range_norm, mean entropy)`
/// for every depth-band × sector cell. Empty cells contribute zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct LpdState(pub Vec<f64>);

impl LpdState {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn build_state(
    loss: f64,
    entropy: f64,
    cloud: &PointCloud,
    point_entropy: &[f64],
    space: &ActionSpace,
) -> Result<LpdState> {
    if point_entropy.len() != cloud.len() {
        return Err(Error::LengthMismatch(format!(
            "{} entropies for {} points",
            point_entropy.len(),
            cloud.len()
        )));
    }
    if !(loss.is_finite() && entropy.is_finite()) {
        return Err(Error::NonFinite("state scalars".into()));
    }
    let cells = space.num_cells();
    let mut count = vec![0usize; cells];
    let mut range_sum = vec![0.0; cells];
    let mut entropy_sum = vec![0.0; cells];
    for (i, c) in space.cells(cloud).into_iter().enumerate() {
        count[c] += 1;
        range_sum[c] += cloud.range(i);
        entropy_sum[c] += point_entropy[i];
    }
    let n = cloud.len() as f64;
    let norm = space.range_norm();
    let mut v = Vec::with_capacity(space.state_width());
    v.push(loss);
    v.push(entropy);
    for c in 0..cells {
        if count[c] == 0 {
            v.extend([0.0, 0.0, 0.0]);
        } else {
            let m = count[c] as f64;
            v.push(m / n);
            v.push(range_sum[c] / m / norm);
            v.push(entropy_sum[c] / m);
        }
    }
    Ok(LpdState(v))
}
