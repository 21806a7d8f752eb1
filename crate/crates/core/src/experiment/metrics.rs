use crate::error::{Error, Result};

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: b.len(),
            got: a.len(),
        });
    }
    Ok(())
}

/// `100 |est - truth|^2 / |truth|^2` over flattened entries (Frobenius
/// norm for matrices).
pub fn rel_error_pct(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(estimate, truth)?;
    let denom: f64 = truth.iter().map(|t| t * t).sum();
    if !(denom > 0.0) {
        return Err(Error::ZeroTruth);
    }
    let num: f64 = estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| (e - t) * (e - t))
        .sum();
    Ok(100.0 * num / denom)
}

/// Inner product over the product of norms; for symmetric matrices this
/// is `tr(A B) / (|A|_F |B|_F)`.
pub fn cosine_sim(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(estimate, truth)?;
    let ne = estimate.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nt = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(ne > 0.0 && nt > 0.0) {
        return Err(Error::ZeroInput);
    }
    let dot: f64 = estimate.iter().zip(truth).map(|(a, b)| a * b).sum();
    Ok((dot / (ne * nt)).clamp(-1.0, 1.0))
}
