//! Malicious clients: poisoned local training, model-replacement scaling and
//! the three participation schedules.

use serde::{Deserialize, Serialize};

use crate::backdoor::TriggerSpec;
use crate::error::{Error, Result};
use crate::federation::{sgd_epochs, ClientContext, Poison};
use crate::nn::ParamVector;

/// Scale that lets one submission overwrite the global model under the
/// default `n / eta = 10 / 0.1`.
pub const REPLACEMENT_GAMMA: f32 = 100.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversaryConfig {
    pub trigger: TriggerSpec,
    pub poison_lr: f32,
    pub poison_epochs: usize,
    pub poison_fraction: f64,
}

impl AdversaryConfig {
    pub fn new(trigger: TriggerSpec) -> Self {
        AdversaryConfig {
            trigger,
            poison_lr: 0.05,
            poison_epochs: 6,
            poison_fraction: 0.3125,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Each attacker acts once, `gap` rounds after the previous one.
    SingleShot,
    /// Every attacker acts in every round from the start, unscaled.
    MultipleShot,
    /// Every attacker acts for `attack_rounds` rounds with `gamma = 100 / #attackers`.
    SemiMultipleShot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSchedule {
    pub scenario: Scenario,
    /// Client id of each attacker, in attacker order.
    pub attacker_ids: Vec<usize>,
    pub gap: usize,
    pub attack_start_round: usize,
    pub attack_rounds: usize,
    /// Replaces the scenario's default scale when set.
    pub gamma_override: Option<f32>,
}

impl AttackSchedule {
    pub fn new(scenario: Scenario, attacker_ids: Vec<usize>, attack_start_round: usize) -> Self {
        AttackSchedule {
            scenario,
            attacker_ids,
            gap: 10,
            attack_start_round,
            attack_rounds: 100,
            gamma_override: None,
        }
    }

    pub fn num_attackers(&self) -> usize {
        self.attacker_ids.len()
    }

    pub fn gamma(&self) -> f32 {
        if let Some(g) = self.gamma_override {
            return g;
        }
        match self.scenario {
            Scenario::SingleShot => REPLACEMENT_GAMMA,
            Scenario::MultipleShot => 1.0,
            Scenario::SemiMultipleShot => REPLACEMENT_GAMMA / self.num_attackers().max(1) as f32,
        }
    }

    /// Whether attacker `attacker_index` injects in `round`, and its scale.
    pub fn query(&self, attacker_index: usize, round: usize) -> Result<(bool, f32)> {
        if attacker_index >= self.num_attackers() {
            return Err(Error::Schedule(format!(
                "attacker index {attacker_index} out of range (have {})",
                self.num_attackers()
            )));
        }
        let start = self.attack_start_round;
        let active = match self.scenario {
            Scenario::SingleShot => round == start + self.gap * attacker_index,
            Scenario::MultipleShot => round >= start,
            Scenario::SemiMultipleShot => round >= start && round < start + self.attack_rounds,
        };
        Ok((active, self.gamma()))
    }

    /// Client ids of attackers injecting in `round`, in attacker order.
    pub fn active_clients(&self, round: usize) -> Vec<usize> {
        (0..self.num_attackers())
            .filter(|&i| self.query(i, round).map(|(a, _)| a).unwrap_or(false))
            .map(|i| self.attacker_ids[i])
            .collect()
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut ids = self.attacker_ids.clone();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.attacker_ids.len() {
            out.push("schedule: attacker ids must be distinct".into());
        }
        if self.attack_start_round == 0 {
            out.push("schedule.attack_start must be >= 1".into());
        }
        if self.scenario == Scenario::SemiMultipleShot && self.attack_rounds == 0 {
            out.push("schedule.attack_rounds must be >= 1 for semi_multiple_shot".into());
        }
        if let Some(g) = self.gamma_override {
            if !(g >= 0.0 && g.is_finite()) {
                out.push(format!("schedule.gamma must be >= 0, got {g}"));
            }
        }
        out
    }
}

/// Attacker-trained model `X`: poisoned SGD starting from the global model,
/// each batch passing through the trigger injection before its step.
pub fn adversarial_train(ctx: &ClientContext, global: &ParamVector, adv: &AdversaryConfig) -> Result<ParamVector> {
    if ctx.shard.is_empty() {
        return Err(Error::Input(format!("adversary {} has no data", ctx.client_id)));
    }
    let poison = Poison {
        trigger: &adv.trigger,
        fraction: adv.poison_fraction,
    };
    sgd_epochs(ctx, global, adv.poison_lr, adv.poison_epochs, Some(poison))
}

/// Submission `gamma * (x - global) + global`.
pub fn scale_update(x: &ParamVector, global: &ParamVector, gamma: f32) -> Result<ParamVector> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::Parameter(format!("gamma must be >= 0, got {gamma}")));
    }
    if x.len() != global.len() {
        return Err(Error::Dimension(format!(
            "attacker model has {} params, global has {}",
            x.len(),
            global.len()
        )));
    }
    let g = gamma as f64;
    Ok(ParamVector::new(
        x.as_slice()
            .iter()
            .zip(global.as_slice())
            .map(|(&xi, &gi)| (gi as f64 + g * (xi as f64 - gi as f64)) as f32)
            .collect(),
    ))
}
