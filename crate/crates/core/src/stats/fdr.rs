use super::StatsError;

/// Benjamini–Hochberg step-up adjusted p-values, in input order.
pub fn benjamini_hochberg(p_values: &[f64]) -> Result<Vec<f64>, StatsError> {
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(StatsError::OutOfRange(*p));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &idx) in order.iter().enumerate().rev() {
        let q = p_values[idx] * m as f64 / (rank + 1) as f64;
        running = running.min(q);
        adjusted[idx] = running.min(1.0);
    }
    Ok(adjusted)
}

/// Rejections at level `alpha` on adjusted values.
pub fn significant(adjusted: &[f64], alpha: f64) -> Vec<bool> {
    adjusted.iter().map(|q| *q < alpha).collect()
}
