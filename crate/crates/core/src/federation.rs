//! FedAvg control loop: client selection, local SGD, aggregation.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::adversary::AttackSchedule;
use crate::backdoor::{self, TriggerSpec};
use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::nn::{sgd_step_in_place, Network, NetworkSpec, ParamVector};
use crate::seeds::SeedPlan;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FedConfig {
    pub n_clients: usize,
    /// Participants per round; also the `n` of the averaging rule.
    pub clients_per_round: usize,
    pub global_lr: f32,
    pub benign_lr: f32,
    pub benign_epochs: usize,
    pub batch_size: usize,
    /// Total rounds, pretraining included.
    pub rounds: usize,
    /// Attack-free rounds run before any adversary may act.
    pub pretrain_rounds: usize,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            n_clients: 100,
            clients_per_round: 10,
            global_lr: 0.1,
            benign_lr: 0.1,
            benign_epochs: 2,
            batch_size: 128,
            rounds: 100,
            pretrain_rounds: 50,
        }
    }
}

impl FedConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.n_clients == 0 {
            out.push("federation.n_clients must be >= 1".into());
        }
        if self.clients_per_round == 0 || self.clients_per_round > self.n_clients {
            out.push(format!(
                "federation.clients_per_round must be in 1..={}, got {}",
                self.n_clients, self.clients_per_round
            ));
        }
        if !(self.global_lr > 0.0 && self.global_lr.is_finite()) {
            out.push(format!("federation.global_lr must be > 0, got {}", self.global_lr));
        }
        if !(self.benign_lr >= 0.0 && self.benign_lr.is_finite()) {
            out.push(format!("federation.benign_lr must be >= 0, got {}", self.benign_lr));
        }
        if self.batch_size == 0 {
            out.push("federation.batch_size must be >= 1".into());
        }
        if self.pretrain_rounds > self.rounds {
            out.push(format!(
                "federation.pretrain_rounds ({}) exceeds rounds ({})",
                self.pretrain_rounds, self.rounds
            ));
        }
        out
    }
}

/// One submitted local model.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub params: ParamVector,
    pub is_adversary: bool,
    pub gamma_applied: f32,
}

/// Everything a client needs to train in one round.
#[derive(Clone, Copy)]
pub struct ClientContext<'a> {
    pub spec: &'a NetworkSpec,
    pub data: &'a Dataset,
    pub shard: &'a [usize],
    pub client_id: usize,
    pub round: usize,
    pub batch_size: usize,
    pub seeds: &'a SeedPlan,
}

/// Backdoor injection applied to each batch before the gradient step.
pub(crate) struct Poison<'a> {
    pub trigger: &'a TriggerSpec,
    pub fraction: f64,
}

/// `epochs` passes of minibatch SGD over the client's shard starting from
/// `start`. Batch order comes from the `(client, round, epoch)` stream.
pub(crate) fn sgd_epochs(
    ctx: &ClientContext,
    start: &ParamVector,
    lr: f32,
    epochs: usize,
    poison: Option<Poison>,
) -> Result<ParamVector> {
    let mut net = Network::from_params(ctx.spec.clone(), start.clone())?;
    let mut params = start.clone();
    let mut poison_rng = ctx.seeds.poison_rng(ctx.client_id, ctx.round);
    for epoch in 0..epochs {
        let seed = ctx.seeds.batch_seed(ctx.client_id, ctx.round, epoch);
        for idx in batches(ctx.shard, ctx.batch_size, seed)? {
            let (mut images, mut labels) = ctx.data.batch(&idx);
            if let Some(p) = &poison {
                backdoor::poison_in_place(&mut images, &mut labels, p.trigger, p.fraction, &mut poison_rng)?;
            }
            let (_, grad) = net.loss_and_grad(&images, &labels)?;
            sgd_step_in_place(&mut params, &grad, lr)?;
            net.set_params(params.clone())?;
        }
    }
    Ok(params)
}

/// Benign local training: `benign_epochs` of SGD at `benign_lr`.
pub fn local_train(ctx: &ClientContext, global: &ParamVector, cfg: &FedConfig) -> Result<ClientUpdate> {
    if ctx.shard.is_empty() {
        return Err(Error::Input(format!("client {} has no data", ctx.client_id)));
    }
    let params = sgd_epochs(ctx, global, cfg.benign_lr, cfg.benign_epochs, None)?;
    Ok(ClientUpdate {
        client_id: ctx.client_id,
        params,
        is_adversary: false,
        gamma_applied: 1.0,
    })
}

/// Picks the round's `clients_per_round` participants. Adversaries active in
/// this round come first (in attacker order); the remaining slots are drawn
/// uniformly without replacement from all other clients and listed in
/// ascending id order.
pub fn select_clients(
    round: usize,
    cfg: &FedConfig,
    schedule: Option<&AttackSchedule>,
    seeds: &SeedPlan,
) -> Result<Vec<usize>> {
    if round == 0 {
        return Err(Error::Schedule("rounds are numbered from 1".into()));
    }
    let k = cfg.clients_per_round;
    let active: Vec<usize> = match schedule {
        Some(s) => s.active_clients(round),
        None => Vec::new(),
    };
    if active.len() > k {
        return Err(Error::Schedule(format!(
            "{} adversaries active in round {round} but only {k} slots",
            active.len()
        )));
    }
    if let Some(&bad) = active.iter().find(|&&id| id >= cfg.n_clients) {
        return Err(Error::Schedule(format!("adversary id {bad} >= n_clients {}", cfg.n_clients)));
    }
    let pool: Vec<usize> = (0..cfg.n_clients).filter(|id| !active.contains(id)).collect();
    let mut rng = seeds.selection_rng(round);
    let mut rest: Vec<usize> = sample(&mut rng, pool.len(), k - active.len())
        .into_iter()
        .map(|i| pool[i])
        .collect();
    rest.sort_unstable();
    let mut out = active;
    out.extend(rest);
    Ok(out)
}

/// `global + (eta / n) * sum(params_i - global)`, summed per coordinate in
/// `f64` in ascending client-id order.
pub fn aggregate(global: &ParamVector, updates: &[ClientUpdate], eta: f32, n: usize) -> Result<ParamVector> {
    if n != updates.len() {
        return Err(Error::Input(format!("n = {n} but {} updates supplied", updates.len())));
    }
    if n == 0 {
        return Err(Error::Input("no updates to aggregate".into()));
    }
    let mut order: Vec<&ClientUpdate> = updates.iter().collect();
    order.sort_by_key(|u| u.client_id);
    for u in &order {
        if u.params.len() != global.len() {
            return Err(Error::dim(format!(
                "update from client {} has {} params, global has {}",
                u.client_id,
                u.params.len(),
                global.len()
            )));
        }
    }
    let g = global.as_slice();
    let mut acc = vec![0.0f64; g.len()];
    for u in &order {
        for ((a, &p), &gi) in acc.iter_mut().zip(u.params.as_slice()).zip(g) {
            *a += p as f64 - gi as f64;
        }
    }
    let step = eta as f64 / n as f64;
    Ok(ParamVector::new(
        g.iter()
            .zip(&acc)
            .map(|(&gi, &a)| (gi as f64 + step * a) as f32)
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::{AttackSchedule, Scenario};

    fn update(id: usize, v: Vec<f32>) -> ClientUpdate {
        ClientUpdate { client_id: id, params: ParamVector::new(v), is_adversary: false, gamma_applied: 1.0 }
    }

    #[test]
    fn fixed_point_when_all_updates_equal_global() {
        let g = ParamVector::new(vec![0.3, -1.7, 2.0]);
        let ups: Vec<_> = (0..10).map(|i| update(i, g.as_slice().to_vec())).collect();
        assert_eq!(aggregate(&g, &ups, 0.1, 10).unwrap(), g);
    }

    #[test]
    fn single_deviation_moves_by_eta_over_n() {
        let g = ParamVector::new(vec![1.0, 2.0]);
        let mut ups: Vec<_> = (1..10).map(|i| update(i, g.as_slice().to_vec())).collect();
        ups.push(update(0, vec![1.5, 1.0])); // delta = (0.5, -1.0)
        let out = aggregate(&g, &ups, 0.1, 10).unwrap();
        assert!((out.as_slice()[0] - 1.005).abs() < 1e-7);
        assert!((out.as_slice()[1] - 1.99).abs() < 1e-7);
    }

    #[test]
    fn aggregate_errors() {
        let g = ParamVector::zeros(2);
        assert!(matches!(aggregate(&g, &[update(0, vec![0.0; 3])], 0.1, 1), Err(Error::Dimension(_))));
        assert!(matches!(aggregate(&g, &[update(0, vec![0.0; 2])], 0.1, 2), Err(Error::Input(_))));
    }

    #[test]
    fn aggregation_ignores_submission_order() {
        let g = ParamVector::new(vec![0.1, 0.2, 0.3]);
        let ups: Vec<_> = (0..5)
            .map(|i| update(i, vec![0.1 * i as f32, -0.37 * i as f32, 1e-3 * i as f32]))
            .collect();
        let mut rev = ups.clone();
        rev.reverse();
        assert_eq!(aggregate(&g, &ups, 0.1, 5).unwrap(), aggregate(&g, &rev, 0.1, 5).unwrap());
    }

    #[test]
    fn selection_covers_everyone_when_k_equals_n() {
        let cfg = FedConfig { n_clients: 10, clients_per_round: 10, ..FedConfig::default() };
        let seeds = SeedPlan::from_master(0);
        let mut s = select_clients(3, &cfg, None, &seeds).unwrap();
        s.sort_unstable();
        assert_eq!(s, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn selection_is_reproducible_and_distinct() {
        let cfg = FedConfig::default();
        let seeds = SeedPlan::from_master(5);
        let a = select_clients(7, &cfg, None, &seeds).unwrap();
        assert_eq!(a, select_clients(7, &cfg, None, &seeds).unwrap());
        assert_eq!(a.len(), 10);
        let mut d = a.clone();
        d.dedup();
        assert_eq!(d.len(), 10);
        assert_ne!(a, select_clients(8, &cfg, None, &seeds).unwrap());
    }

    #[test]
    fn active_adversaries_take_first_slots() {
        let cfg = FedConfig::default();
        let seeds = SeedPlan::from_master(5);
        let sched = AttackSchedule::new(Scenario::MultipleShot, (0..8).collect(), 51);
        for round in [1, 50, 51, 52, 300] {
            let sel = select_clients(round, &cfg, Some(&sched), &seeds).unwrap();
            assert_eq!(sel.len(), 10);
            if round >= 51 {
                assert_eq!(&sel[..8], &[0, 1, 2, 3, 4, 5, 6, 7]);
                assert!(sel[8..].iter().all(|&id| id >= 8));
            }
        }
        let too_many = AttackSchedule::new(Scenario::MultipleShot, (0..11).collect(), 1);
        let cfg = FedConfig { n_clients: 20, ..FedConfig::default() };
        assert!(matches!(select_clients(1, &cfg, Some(&too_many), &seeds), Err(Error::Schedule(_))));
    }
}
