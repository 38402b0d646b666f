//! Plateau-driven decay of the update portion.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Portion levels, visited in order.
pub const PORTION_LEVELS: [f64; 3] = [0.75, 0.50, 0.25];
/// Consecutive rounds without a 1% improvement that trigger a decay step.
pub const PLATEAU_ROUNDS: usize = 10;
const IMPROVEMENT: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct PortionScheduleState {
    pub current_portion: f64,
    /// The last [`PLATEAU_ROUNDS`] observed metrics, oldest first.
    pub recent_metrics: VecDeque<f64>,
    pub rounds_since_improvement: usize,
    /// Lowest metric seen so far.
    pub best: Option<f64>,
}

impl Default for PortionScheduleState {
    fn default() -> Self {
        Self::new(PORTION_LEVELS[0])
    }
}

impl PortionScheduleState {
    pub fn new(initial_portion: f64) -> Self {
        Self {
            current_portion: initial_portion,
            recent_metrics: VecDeque::with_capacity(PLATEAU_ROUNDS),
            rounds_since_improvement: 0,
            best: None,
        }
    }
}

fn step_down(p: f64) -> f64 {
    PORTION_LEVELS
        .iter()
        .copied()
        .find(|&level| level < p)
        .unwrap_or(PORTION_LEVELS[PORTION_LEVELS.len() - 1])
}

/// Folds one global evaluation metric into the schedule. A round counts
/// as an improvement when the metric drops below 99% of the best so far.
pub fn advance_portion(state: &PortionScheduleState, metric: f64) -> Result<PortionScheduleState> {
    if !metric.is_finite() {
        return Err(Error::NonFinite(metric));
    }
    let mut next = state.clone();
    if next.recent_metrics.len() == PLATEAU_ROUNDS {
        next.recent_metrics.pop_front();
    }
    next.recent_metrics.push_back(metric);

    match next.best {
        Some(best) if metric >= IMPROVEMENT * best => next.rounds_since_improvement += 1,
        _ => {
            next.best = Some(metric);
            next.rounds_since_improvement = 0;
        }
    }
    if next.rounds_since_improvement >= PLATEAU_ROUNDS {
        next.current_portion = step_down(next.current_portion);
        next.rounds_since_improvement = 0;
    }
    Ok(next)
}
