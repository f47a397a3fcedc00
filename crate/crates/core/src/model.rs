use serde::{Deserialize, Serialize};

use crate::market::{EndowmentSpec, MarketParams};
use crate::utility::UtilitySpec;

/// Preferences, market and endowment of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub utility: UtilitySpec,
    pub market: MarketParams,
    pub endowment: EndowmentSpec,
}

impl Model {
    pub fn new(utility: UtilitySpec, market: MarketParams, endowment: EndowmentSpec) -> Self {
        Self {
            utility,
            market,
            endowment,
        }
    }

    /// `V(z) + zφ(η₀)`, the terminal condition taken at face value.
    pub fn naive_value(&self, z: f64) -> f64 {
        self.utility.v_unchecked(z) + z * self.endowment.phi0()
    }
}
