use crate::error::{Error, Result};

/// Mean squared error over a batch.
pub fn mse_loss(targets: &[f64], predictions: &[f64]) -> Result<f64> {
    if targets.len() != predictions.len() {
        return Err(Error::Domain(format!(
            "{} targets vs {} predictions",
            targets.len(),
            predictions.len()
        )));
    }
    if targets.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = targets.iter().zip(predictions).map(|(y, p)| (y - p) * (y - p)).sum();
    Ok(sum / targets.len() as f64)
}
