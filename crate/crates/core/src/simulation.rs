//! Round orchestration: selection, benign and adversarial training, defense
//! transforms, aggregation and evaluation.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::adversary::{adversarial_train, scale_update, AdversaryConfig, AttackSchedule};
use crate::backdoor::backdoor_testset;
use crate::data::{Dataset, PartitionMap};
use crate::defenses::DefenseConfig;
use crate::error::{Error, Result};
use crate::federation::{aggregate, local_train, select_clients, ClientContext, ClientUpdate, FedConfig};
use crate::metrics::{backdoor_accuracy, main_accuracy, RoundRecord};
use crate::nn::{Network, NetworkSpec, ParamVector};
use crate::seeds::SeedPlan;

/// Inputs needed to start a simulation.
pub struct SimulationSetup {
    pub spec: NetworkSpec,
    pub fed: FedConfig,
    pub train: Arc<Dataset>,
    pub test: Arc<Dataset>,
    pub partition: Arc<PartitionMap>,
    /// Attacker `i` is client `schedule.attacker_ids[i]`.
    pub adversaries: Vec<AdversaryConfig>,
    pub schedule: Option<AttackSchedule>,
    pub defense: DefenseConfig,
    pub seeds: SeedPlan,
    /// Worker threads for client training and evaluation (0 = all cores).
    pub threads: usize,
    pub record_wall_time: bool,
}

#[derive(Clone)]
pub struct Simulation {
    spec: NetworkSpec,
    fed: FedConfig,
    train: Arc<Dataset>,
    test: Arc<Dataset>,
    bd_tests: Arc<Vec<Dataset>>,
    partition: Arc<PartitionMap>,
    adversaries: Vec<AdversaryConfig>,
    schedule: Option<AttackSchedule>,
    defense: DefenseConfig,
    seeds: SeedPlan,
    global: Network,
    round: usize,
    pool: Arc<ThreadPool>,
    record_wall_time: bool,
}

fn build_pool(threads: usize) -> Result<Arc<ThreadPool>> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map(Arc::new)
        .map_err(|e| Error::Parameter(format!("thread pool: {e}")))
}

impl Simulation {
    pub fn new(setup: SimulationSetup) -> Result<Simulation> {
        let SimulationSetup {
            spec,
            fed,
            train,
            test,
            partition,
            adversaries,
            schedule,
            defense,
            seeds,
            threads,
            record_wall_time,
        } = setup;
        let n_attackers = schedule.as_ref().map_or(0, AttackSchedule::num_attackers);
        if n_attackers != adversaries.len() {
            return Err(Error::Schedule(format!(
                "{} adversary configs but the schedule lists {n_attackers} attackers",
                adversaries.len()
            )));
        }
        if partition.n_clients() != fed.n_clients {
            return Err(Error::Parameter(format!(
                "partition has {} clients, federation expects {}",
                partition.n_clients(),
                fed.n_clients
            )));
        }
        let global = Network::init(spec.clone(), seeds.init)?;
        let bd_tests = adversaries
            .iter()
            .map(|a| backdoor_testset(&test, &a.trigger))
            .collect::<Result<Vec<_>>>()?;
        Ok(Simulation {
            spec,
            fed,
            train,
            test,
            bd_tests: Arc::new(bd_tests),
            partition,
            adversaries,
            schedule,
            defense,
            seeds,
            global,
            round: 0,
            pool: build_pool(threads)?,
            record_wall_time,
        })
    }

    /// Last completed round (0 before the first).
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn global(&self) -> &Network {
        &self.global
    }

    pub fn fed(&self) -> &FedConfig {
        &self.fed
    }

    pub fn backdoor_tests(&self) -> &[Dataset] {
        &self.bd_tests
    }

    /// Resumes from a saved global model after `round` completed rounds.
    pub fn restore(&mut self, params: ParamVector, round: usize) -> Result<()> {
        self.global.set_params(params)?;
        self.round = round;
        Ok(())
    }

    pub fn set_threads(&mut self, threads: usize) -> Result<()> {
        self.pool = build_pool(threads)?;
        Ok(())
    }

    /// Swaps the attack and defense setup while keeping the current global
    /// model, e.g. to branch several attacks off one pretrained state.
    pub fn reconfigure(
        &mut self,
        adversaries: Vec<AdversaryConfig>,
        schedule: Option<AttackSchedule>,
        defense: DefenseConfig,
    ) -> Result<()> {
        let n_attackers = schedule.as_ref().map_or(0, AttackSchedule::num_attackers);
        if n_attackers != adversaries.len() {
            return Err(Error::Schedule(format!(
                "{} adversary configs but the schedule lists {n_attackers} attackers",
                adversaries.len()
            )));
        }
        self.bd_tests = Arc::new(
            adversaries
                .iter()
                .map(|a| backdoor_testset(&self.test, &a.trigger))
                .collect::<Result<Vec<_>>>()?,
        );
        self.adversaries = adversaries;
        self.schedule = schedule;
        self.defense = defense;
        Ok(())
    }

    /// MA and every BA of the current global model.
    pub fn evaluate(&self) -> Result<(f64, Vec<f64>)> {
        self.pool.install(|| {
            let ma = main_accuracy(&self.global, &self.test)?;
            let ba = self
                .adversaries
                .iter()
                .zip(self.bd_tests.iter())
                .map(|(a, bd)| backdoor_accuracy(&self.global, bd, a.trigger.target_class))
                .collect::<Result<Vec<_>>>()?;
            Ok((ma, ba))
        })
    }

    fn train_client(&self, client: usize, round: usize, global: &ParamVector) -> Result<ClientUpdate> {
        let ctx = ClientContext {
            spec: &self.spec,
            data: &self.train,
            shard: self.partition.shard(client),
            client_id: client,
            round,
            batch_size: self.fed.batch_size,
            seeds: &self.seeds,
        };
        let attacker = self.schedule.as_ref().and_then(|s| {
            let i = s.attacker_ids.iter().position(|&id| id == client)?;
            match s.query(i, round) {
                Ok((true, gamma)) => Some((i, gamma)),
                _ => None,
            }
        });
        let update = match attacker {
            Some((i, gamma)) => {
                let x = adversarial_train(&ctx, global, &self.adversaries[i])?;
                ClientUpdate {
                    client_id: client,
                    params: scale_update(&x, global, gamma)?,
                    is_adversary: true,
                    gamma_applied: gamma,
                }
            }
            None => local_train(&ctx, global, &self.fed)?,
        };
        let mut rng = self.seeds.noise_rng(round, client);
        let params = self.defense.apply(update.params, global, &mut rng)?;
        Ok(ClientUpdate { params, ..update })
    }

    /// Trains, defends and aggregates the next round without evaluating.
    /// Returns the round's updates (after defenses).
    pub fn advance(&mut self) -> Result<Vec<ClientUpdate>> {
        let round = self.round + 1;
        let selected = select_clients(round, &self.fed, self.schedule.as_ref(), &self.seeds)?;
        let global = self.global.params().clone();
        let updates: Vec<ClientUpdate> = self.pool.install(|| {
            selected
                .par_iter()
                .map(|&c| self.train_client(c, round, &global))
                .collect::<Result<_>>()
        })?;
        let next = aggregate(&global, &updates, self.fed.global_lr, updates.len())?;
        if !next.is_finite() {
            return Err(Error::Input(format!("global model diverged in round {round}")));
        }
        self.global.set_params(next)?;
        self.round = round;
        Ok(updates)
    }

    /// Runs the next round and returns its record.
    pub fn run_round(&mut self) -> Result<RoundRecord> {
        let started = Instant::now();
        let updates = self.advance()?;
        let (ma, ba) = self.evaluate()?;
        let active: Vec<usize> = updates.iter().filter(|u| u.is_adversary).map(|u| u.client_id).collect();
        let gamma = updates
            .iter()
            .find(|u| u.is_adversary)
            .map_or(0.0, |u| u.gamma_applied);
        Ok(RoundRecord {
            round: self.round,
            ma,
            ba,
            active_attackers: active,
            gamma,
            defense: self.defense.label(),
            wall_ms: if self.record_wall_time {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        })
    }
}
