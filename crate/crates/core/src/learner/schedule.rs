use serde::{Deserialize, Serialize};

/// Exponentially decaying exploration rate with a floor:
/// `max(floor, eps0 · exp(-episode / tau))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSchedule {
    pub eps0: f64,
    pub tau: f64,
    pub floor: f64,
}

impl ExplorationSchedule {
    pub const DEFAULT_FLOOR: f64 = 0.05;
    /// Level reached at [`BUDGET_FRACTION`](Self::BUDGET_FRACTION) of training.
    pub const TARGET_EPSILON: f64 = 0.06;
    pub const BUDGET_FRACTION: f64 = 0.8;

    /// Decay tuned so that epsilon reaches 0.06 after 80% of `episodes`.
    pub fn for_budget(eps0: f64, episodes: usize) -> Self {
        let tau = if eps0 > Self::TARGET_EPSILON && episodes > 0 {
            Self::BUDGET_FRACTION * episodes as f64 / (eps0 / Self::TARGET_EPSILON).ln()
        } else {
            1.0
        };
        ExplorationSchedule { eps0, tau, floor: Self::DEFAULT_FLOOR }
    }

    pub fn epsilon(&self, episode: usize) -> f64 {
        (self.eps0 * (-(episode as f64) / self.tau).exp()).max(self.floor)
    }
}
