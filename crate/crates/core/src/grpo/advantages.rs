use super::{GrpoConfig, GrpoError};

/// Group-relative advantages: `(r_i - mean) / max(std, floor)` with the
/// population standard deviation. A group whose rewards are all identical
/// carries no signal and gets exact zeros.
pub fn compute_advantages(rewards: &[f64], cfg: &GrpoConfig) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(GrpoError::Validation("non-finite reward".into()));
    }
    if rewards.iter().all(|r| r.to_bits() == rewards[0].to_bits()) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 {
        return Ok(vec![0.0; rewards.len()]);
    }
    let scale = std.max(cfg.advantage_std_floor);
    Ok(rewards.iter().map(|r| (r - mean) / scale).collect())
}
