use crate::error::{Error, Result};
use ndarray::Array2;

/// Shannon entropy (natural log) of the softmax of each row, clamped to `[0, ln C]`.
pub fn point_entropies(logits: &Array2<f64>) -> Vec<f64> {
    let max_h = (logits.ncols() as f64).ln();
    logits
        .outer_iter()
        .map(|row| {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            let h: f64 = -row
                .iter()
                .map(|v| {
                    let log_p = v - lse;
                    log_p.exp() * log_p
                })
                .sum::<f64>();
            h.clamp(0.0, max_h)
        })
        .collect()
}

/// `H = -(1/N) Σ_i Σ_c p_ic ln p_ic` with `p_i = softmax(logits_i)`.
pub fn mean_entropy(logits: &Array2<f64>) -> Result<f64> {
    if logits.nrows() == 0 {
        return Err(Error::EmptyInput("entropy of zero points"));
    }
    let h = point_entropies(logits);
    Ok(h.iter().sum::<f64>() / h.len() as f64)
}
