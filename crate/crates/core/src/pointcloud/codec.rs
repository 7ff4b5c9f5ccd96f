//! `.bin` scans (little-endian `f32` x, y, z, intensity) and `.label` files
//! (little-endian `u32`, semantic class in the low 16 bits, instance in the high 16).

use super::{LabelArray, PointCloud};
use crate::error::{Error, Result};

const POINT_BYTES: usize = 16;

pub fn decode_scan(bytes: &[u8]) -> Result<PointCloud> {
    if !bytes.len().is_multiple_of(POINT_BYTES) {
        return Err(Error::MalformedScan { len: bytes.len() });
    }
    let n = bytes.len() / POINT_BYTES;
    let mut cloud = PointCloud::with_capacity(n);
    for (index, rec) in bytes.chunks_exact(POINT_BYTES).enumerate() {
        let mut v = [0f32; 4];
        for (k, field) in ["x", "y", "z", "intensity"].into_iter().enumerate() {
            let f = f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
            if !f.is_finite() {
                return Err(Error::CorruptValue { index, field });
            }
            v[k] = f;
        }
        cloud.push(v[0].into(), v[1].into(), v[2].into(), v[3].into());
    }
    Ok(cloud)
}

/// Narrows each value to `f32`. Exact inverse of [`decode_scan`].
pub fn encode_scan(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * POINT_BYTES);
    for i in 0..cloud.len() {
        for v in cloud.point(i) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_labels(bytes: &[u8], ignore_label: u16) -> Result<LabelArray> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::MalformedLabels { len: bytes.len() });
    }
    let n = bytes.len() / 4;
    let mut semantic = Vec::with_capacity(n);
    let mut instance = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(4) {
        let v = u32::from_le_bytes(rec.try_into().unwrap());
        semantic.push((v & 0xFFFF) as u16);
        instance.push((v >> 16) as u16);
    }
    Ok(LabelArray {
        semantic,
        instance,
        ignore_label,
    })
}

pub fn encode_labels(labels: &LabelArray) -> Vec<u8> {
    let mut out = Vec::with_capacity(labels.len() * 4);
    for (&s, &inst) in labels.semantic.iter().zip(&labels.instance) {
        let v = u32::from(s) | (u32::from(inst) << 16);
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Rescales intensity into `[0, 1]` when any value exceeds 1.
///
/// Returns the divisor applied (`None` when the cloud was already normalized).
/// Values up to 255 are treated as 8-bit reflectance, larger maxima divide by the maximum.
pub fn normalize_intensity(cloud: &mut PointCloud) -> Option<f64> {
    let max = cloud.intensity().iter().copied().fold(0.0, f64::max);
    if max <= 1.0 {
        return None;
    }
    let scale = if max <= 255.0 { 255.0 } else { max };
    for v in cloud.intensity_mut() {
        *v = (*v / scale).clamp(0.0, 1.0);
    }
    Some(scale)
}
