use crate::data::TokenShard;
use crate::error::{Error, Result};
use crate::model::ModelState;

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Token-count weights `p_k = |D_k| / sum_j |D_j|` over the participants.
pub fn client_weights(shards: &[&TokenShard]) -> Result<Vec<f64>> {
    if shards.is_empty() {
        return Err(Error::EmptyParticipants);
    }
    let total: usize = shards.iter().map(|s| s.len()).sum();
    if total == 0 {
        return Err(Error::InvalidArgument("participants hold no tokens".to_string()));
    }
    Ok(shards.iter().map(|s| s.len() as f64 / total as f64).collect())
}

/// Entry-wise convex combination of client models. Contributions are summed
/// in slice order.
pub fn aggregate(models: &[ModelState], weights: &[f64]) -> Result<ModelState> {
    let first = models.first().ok_or(Error::EmptyParticipants)?;
    if weights.len() != models.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {} models",
            weights.len(),
            models.len()
        )));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::WeightSum(sum));
    }
    for m in &models[1..] {
        first.check_congruent(m)?;
    }

    let mut out = first.clone();
    for (i, p) in out.params.iter_mut().enumerate() {
        p.values.fill(0.0);
        for (m, &w) in models.iter().zip(weights) {
            for (acc, &v) in p.values.iter_mut().zip(&m.params[i].values) {
                *acc += w * v;
            }
        }
    }
    Ok(out)
}
