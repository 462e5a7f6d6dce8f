//! Machine fleets and per-unit mining rewards.
//!
//! All quantities are per one-hour slot, so MW of capacity and MWh of energy
//! are numerically interchangeable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coin revenue per MWh of electricity for a machine with the given energy
/// intensity (MWh consumed per coin mined).
pub fn mining_revenue_rate(coin_price: f64, energy_intensity: f64) -> Result<f64> {
    if !(energy_intensity > 0.0) || !energy_intensity.is_finite() {
        return Err(Error::invalid(format!(
            "energy intensity must be positive, got {energy_intensity}"
        )));
    }
    if !(coin_price >= 0.0) || !coin_price.is_finite() {
        return Err(Error::invalid(format!(
            "coin price must be nonnegative, got {coin_price}"
        )));
    }
    Ok(coin_price / energy_intensity)
}

/// Mining revenue minus the electricity price. May be negative; callers
/// decide whether that is admissible.
pub fn net_reward(revenue_rate: f64, electricity_price: f64) -> f64 {
    revenue_rate - electricity_price
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineType {
    pub id: String,
    pub capacity_mw: f64,
    /// MWh per coin. `None` when the reward was supplied directly.
    pub energy_intensity: Option<f64>,
    /// Net reward in $/MWh.
    pub reward: f64,
}

impl MachineType {
    pub fn new(id: impl Into<String>, capacity_mw: f64, reward: f64) -> Self {
        Self {
            id: id.into(),
            capacity_mw,
            energy_intensity: None,
            reward,
        }
    }

    /// Builds a machine type whose reward comes from coin economics.
    pub fn from_economics(
        id: impl Into<String>,
        capacity_mw: f64,
        energy_intensity: f64,
        coin_price: f64,
        electricity_price: f64,
    ) -> Result<Self> {
        let revenue = mining_revenue_rate(coin_price, energy_intensity)?;
        Ok(Self {
            id: id.into(),
            capacity_mw,
            energy_intensity: Some(energy_intensity),
            reward: net_reward(revenue, electricity_price),
        })
    }
}

/// A canonical fleet: machine types sorted by strictly increasing reward.
///
/// Only constructible through [`canonicalize`], so the ordering and the
/// capacity total always hold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FleetSpec {
    machines: Vec<MachineType>,
    total_capacity_mw: f64,
}

/// Sorts machines by ascending reward, merging equal-reward types into one
/// type with summed capacity.
pub fn canonicalize(machines: Vec<MachineType>) -> Result<FleetSpec> {
    if machines.is_empty() {
        return Err(Error::invalid("fleet has no machines"));
    }
    for m in &machines {
        if !(m.capacity_mw >= 0.0) || !m.capacity_mw.is_finite() {
            return Err(Error::invalid(format!(
                "machine {}: capacity must be a nonnegative number, got {}",
                m.id, m.capacity_mw
            )));
        }
        if !m.reward.is_finite() {
            return Err(Error::invalid(format!(
                "machine {}: reward is not finite",
                m.id
            )));
        }
        if m.reward < 0.0 {
            return Err(Error::ModelViolation(format!(
                "machine {}: negative net mining reward {}",
                m.id, m.reward
            )));
        }
    }

    let mut sorted = machines;
    sorted.sort_by(|a, b| a.reward.total_cmp(&b.reward));

    let mut merged: Vec<MachineType> = Vec::with_capacity(sorted.len());
    for m in sorted {
        match merged.last_mut() {
            Some(last) if last.reward == m.reward => {
                last.capacity_mw += m.capacity_mw;
                last.id = format!("{}+{}", last.id, m.id);
                if last.energy_intensity != m.energy_intensity {
                    last.energy_intensity = None;
                }
            }
            _ => merged.push(m),
        }
    }

    let total_capacity_mw = merged.iter().map(|m| m.capacity_mw).sum();
    Ok(FleetSpec {
        machines: merged,
        total_capacity_mw,
    })
}

/// Replaces negative rewards by zero and returns how many were clamped.
pub fn clamp_negative_rewards(machines: &mut [MachineType]) -> usize {
    let mut clamped = 0;
    for m in machines.iter_mut() {
        if m.reward < 0.0 {
            m.reward = 0.0;
            clamped += 1;
        }
    }
    clamped
}

impl FleetSpec {
    /// Convenience constructor from `(capacity, reward)` pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        canonicalize(
            pairs
                .iter()
                .enumerate()
                .map(|(k, &(cap, r))| MachineType::new(format!("m{k}"), cap, r))
                .collect(),
        )
    }

    pub fn machines(&self) -> &[MachineType] {
        &self.machines
    }

    pub fn len(&self) -> usize {
        self.machines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.machines.is_empty()
    }

    /// C^M, the aggregate capacity.
    pub fn total_capacity(&self) -> f64 {
        self.total_capacity_mw
    }

    pub fn capacity(&self, k: usize) -> f64 {
        self.machines[k].capacity_mw
    }

    pub fn reward(&self, k: usize) -> f64 {
        self.machines[k].reward
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.machines.iter().map(|m| m.capacity_mw).collect()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.machines.iter().map(|m| m.reward).collect()
    }

    /// Reward of the most profitable type (r_K).
    pub fn max_reward(&self) -> f64 {
        self.machines.last().map_or(0.0, |m| m.reward)
    }
}

/// On-disk fleet description: rewards are filled in per slot from prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetConfig {
    pub machines: Vec<MachineConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineConfig {
    pub id: String,
    pub capacity_mw: f64,
    pub energy_intensity_mwh_per_coin: f64,
}

impl FleetConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: FleetConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.machines.is_empty() {
            return Err(Error::invalid("fleet config has no machines"));
        }
        for m in &self.machines {
            if !(m.capacity_mw >= 0.0) || !m.capacity_mw.is_finite() {
                return Err(Error::invalid(format!(
                    "machine {}: capacity_mw must be nonnegative",
                    m.id
                )));
            }
            if !(m.energy_intensity_mwh_per_coin > 0.0) {
                return Err(Error::invalid(format!(
                    "machine {}: energy_intensity_mwh_per_coin must be positive",
                    m.id
                )));
            }
        }
        Ok(())
    }

    pub fn total_capacity(&self) -> f64 {
        self.machines.iter().map(|m| m.capacity_mw).sum()
    }

    /// Machine types with rewards at the given coin and electricity prices,
    /// before canonicalization.
    pub fn machines_at(&self, coin_price: f64, electricity_price: f64) -> Result<Vec<MachineType>> {
        self.machines
            .iter()
            .map(|m| {
                MachineType::from_economics(
                    m.id.clone(),
                    m.capacity_mw,
                    m.energy_intensity_mwh_per_coin,
                    coin_price,
                    electricity_price,
                )
            })
            .collect()
    }

    /// Canonical fleet at the given prices. With `clamp_negative`, negative
    /// rewards become zero (with a warning) instead of an error.
    pub fn fleet_at(
        &self,
        coin_price: f64,
        electricity_price: f64,
        clamp_negative: bool,
    ) -> Result<FleetSpec> {
        let mut machines = self.machines_at(coin_price, electricity_price)?;
        if clamp_negative {
            let n = clamp_negative_rewards(&mut machines);
            if n > 0 {
                log::warn!(
                    "clamped {n} negative mining reward(s) to zero (coin {coin_price}, electricity {electricity_price})"
                );
            }
        }
        canonicalize(machines)
    }
}
