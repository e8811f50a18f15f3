//! Load and contingency scenarios.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::network::Network;
use super::OpfError;

/// Lower and upper truncation of the load multipliers.
pub const MULTIPLIER_RANGE: (f64, f64) = (0.5, 1.5);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub seed: u64,
    pub sigma: f64,
    /// One load multiplier per bus, per scenario.
    pub multipliers: Vec<Vec<f64>>,
    /// Outaged rows of the case's branch table, per scenario.
    pub outages: Vec<Vec<usize>>,
}

impl ScenarioSet {
    pub fn len(&self) -> usize {
        self.multipliers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multipliers.is_empty()
    }

    /// `N` copies of the base case.
    pub fn nominal(n_bus: usize, n: usize) -> Self {
        Self {
            seed: 0,
            sigma: 0.0,
            multipliers: vec![vec![1.0; n_bus]; n],
            outages: vec![Vec::new(); n],
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario sets serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, OpfError> {
        serde_json::from_str(text).map_err(|e| OpfError::InvalidScenario(e.to_string()))
    }

    /// Checks multipliers and that each scenario leaves the network connected.
    pub fn validate(&self, net: &Network) -> Result<(), OpfError> {
        if self.is_empty() {
            return Err(OpfError::InvalidScenario(
                "at least one scenario is required".into(),
            ));
        }
        if self.outages.len() != self.len() {
            return Err(OpfError::InvalidScenario(
                "outage list count differs from scenario count".into(),
            ));
        }
        for (i, (m, out)) in self.multipliers.iter().zip(&self.outages).enumerate() {
            if m.len() != net.n_bus() {
                return Err(OpfError::InvalidScenario(format!(
                    "scenario {i} has {} multipliers",
                    m.len()
                )));
            }
            if m.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(OpfError::InvalidScenario(format!(
                    "scenario {i} has a non-positive multiplier"
                )));
            }
            let lines = line_indices(net, out).map_err(|row| {
                OpfError::InvalidScenario(format!("scenario {i}: branch {row} is not in service"))
            })?;
            if !net.is_connected_without(&lines) {
                return Err(OpfError::Disconnected { scenario: i });
            }
        }
        Ok(())
    }
}

/// Maps branch-table rows to in-service line indices.
pub(crate) fn line_indices(net: &Network, rows: &[usize]) -> Result<Vec<usize>, usize> {
    rows.iter()
        .map(|&r| net.lines.iter().position(|l| l.source == r).ok_or(r))
        .collect()
}

/// Multipliers from `N(1, σ²)` truncated to [`MULTIPLIER_RANGE`] by
/// resampling; scenario `i` carries contingency `i mod (K+1)`, where slot 0
/// is the intact network.
pub fn generate_scenarios(
    net: &Network,
    n: usize,
    sigma: f64,
    contingencies: &[usize],
    seed: u64,
) -> Result<ScenarioSet, OpfError> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(OpfError::InvalidScenario(
            "sigma must be non-negative".into(),
        ));
    }
    if n == 0 {
        return Err(OpfError::InvalidScenario(
            "at least one scenario is required".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = MULTIPLIER_RANGE;
    let normal = Normal::new(1.0, sigma).map_err(|e| OpfError::InvalidScenario(e.to_string()))?;
    let multipliers = (0..n)
        .map(|_| {
            (0..net.n_bus())
                .map(|_| loop {
                    let v = normal.sample(&mut rng);
                    if (lo..=hi).contains(&v) {
                        break v;
                    }
                })
                .collect()
        })
        .collect();
    let outages = (0..n)
        .map(|i| match i % (contingencies.len() + 1) {
            0 => Vec::new(),
            k => vec![contingencies[k - 1]],
        })
        .collect();
    let set = ScenarioSet {
        seed,
        sigma,
        multipliers,
        outages,
    };
    set.validate(net)?;
    Ok(set)
}
