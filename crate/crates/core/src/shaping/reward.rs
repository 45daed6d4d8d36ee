use serde::{Deserialize, Serialize};

use super::ShapingError;

/// Coefficients of the shaped actor reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapingWeights {
    /// Event horizon for follow-up labels.
    pub k: usize,
    pub lambda_inf: f64,
    pub lambda_div: f64,
    /// Probability floor inside the diversity logarithm.
    pub epsilon: f64,
    pub diversity_active: bool,
}

impl Default for ShapingWeights {
    fn default() -> Self {
        ShapingWeights {
            k: 4,
            lambda_inf: 5.0,
            lambda_div: 0.01,
            epsilon: 1e-8,
            diversity_active: false,
        }
    }
}

impl ShapingWeights {
    /// All intrinsic terms off.
    pub fn off() -> Self {
        ShapingWeights {
            lambda_inf: 0.0,
            lambda_div: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ShapingError> {
        let bad = |m: &str| Err(ShapingError::InvalidWeights(m.into()));
        if self.k < 1 {
            return bad("k must be at least 1");
        }
        if !(self.lambda_inf >= 0.0 && self.lambda_div >= 0.0) {
            return bad("coefficients must be non-negative");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_env: f64,
    pub r_inf: f64,
    pub r_div: f64,
    pub total: f64,
}

/// `r_env + lambda_inf * r_inf + lambda_div * r_div`; the diversity term is
/// dropped while inactive.
pub fn combined_reward(r_env: f64, r_inf: f64, r_div: f64, w: &ShapingWeights) -> RewardBreakdown {
    let mut total = r_env + w.lambda_inf * r_inf;
    if w.diversity_active {
        total += w.lambda_div * r_div;
    }
    RewardBreakdown {
        r_env,
        r_inf,
        r_div,
        total,
    }
}
