//! Experiment configuration: a strict TOML schema, defaults, validation that
//! reports every problem at once, and the shipped presets.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversary::{AdversaryConfig, AttackSchedule, Scenario};
use crate::backdoor::TriggerSpec;
use crate::defenses::DefenseConfig;
use crate::error::{Error, Result};
use crate::federation::FedConfig;
use crate::nn::NetworkSpec;
use crate::seeds::SeedPlan;

/// Environment variable naming the directory that holds one sub-directory
/// per dataset (e.g. `$NBSIM_DATA_DIR/mnist`).
pub const DATA_DIR_ENV: &str = "NBSIM_DATA_DIR";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Mlp,
    Cnn,
}

impl Profile {
    pub fn spec(self) -> NetworkSpec {
        match self {
            Profile::Mlp => NetworkSpec::mnist_mlp(),
            Profile::Cnn => NetworkSpec::mnist_cnn(),
        }
    }

    pub fn default_pretrain_rounds(self) -> usize {
        match self {
            Profile::Mlp => 50,
            Profile::Cnn => 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub name: String,
    /// Directory with the four IDX files; falls back to
    /// `$NBSIM_DATA_DIR/<name>` and then `data/<name>`.
    pub dir: Option<PathBuf>,
    pub train_images: String,
    pub train_labels: String,
    pub test_images: String,
    pub test_labels: String,
    pub num_classes: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            name: "mnist".into(),
            dir: None,
            train_images: "train-images-idx3-ubyte".into(),
            train_labels: "train-labels-idx1-ubyte".into(),
            test_images: "t10k-images-idx3-ubyte".into(),
            test_labels: "t10k-labels-idx1-ubyte".into(),
            num_classes: 10,
        }
    }
}

impl DatasetConfig {
    pub fn resolved_dir(&self) -> PathBuf {
        match &self.dir {
            Some(d) => d.clone(),
            None => match std::env::var_os(DATA_DIR_ENV) {
                Some(root) => PathBuf::from(root).join(&self.name),
                None => PathBuf::from("data").join(&self.name),
            },
        }
    }

    /// `(train images, train labels, test images, test labels)`
    pub fn files(&self) -> [PathBuf; 4] {
        let d = self.resolved_dir();
        [
            d.join(&self.train_images),
            d.join(&self.train_labels),
            d.join(&self.test_images),
            d.join(&self.test_labels),
        ]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub profile: Profile,
}

/// Federation block; `pretrain_rounds` defaults per model profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationBlock {
    pub n_clients: usize,
    pub clients_per_round: usize,
    pub global_lr: f32,
    pub benign_lr: f32,
    pub benign_epochs: usize,
    pub batch_size: usize,
    pub rounds: usize,
    pub pretrain_rounds: Option<usize>,
}

impl Default for FederationBlock {
    fn default() -> Self {
        let f = FedConfig::default();
        FederationBlock {
            n_clients: f.n_clients,
            clients_per_round: f.clients_per_round,
            global_lr: f.global_lr,
            benign_lr: f.benign_lr,
            benign_epochs: f.benign_epochs,
            batch_size: f.batch_size,
            rounds: f.rounds,
            pretrain_rounds: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub alpha: f64,
    /// Overrides the partition stream seed.
    pub seed: Option<u64>,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig { alpha: 0.5, seed: None }
    }
}

/// Optional per-stream seed overrides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedOverrides {
    pub init: Option<u64>,
    pub selection: Option<u64>,
    pub batch: Option<u64>,
    pub poison: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryBlock {
    /// Built-in trigger id, 1..=8.
    pub trigger: usize,
    /// Defaults to `trigger - 1`.
    #[serde(default)]
    pub target_class: Option<usize>,
    #[serde(default = "default_poison_lr")]
    pub poison_lr: f32,
    #[serde(default = "default_poison_epochs")]
    pub poison_epochs: usize,
    #[serde(default = "default_poison_fraction")]
    pub poison_fraction: f64,
}

fn default_poison_lr() -> f32 {
    0.05
}

fn default_poison_epochs() -> usize {
    6
}

fn default_poison_fraction() -> f64 {
    0.3125
}

impl AdversaryBlock {
    pub fn new(trigger: usize) -> Self {
        AdversaryBlock {
            trigger,
            target_class: None,
            poison_lr: default_poison_lr(),
            poison_epochs: default_poison_epochs(),
            poison_fraction: default_poison_fraction(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleBlock {
    pub scenario: Scenario,
    pub gap: usize,
    /// First attack round; defaults to `pretrain_rounds + 1`.
    pub attack_start: Option<usize>,
    pub attack_rounds: usize,
    /// Overrides the scenario's scale.
    pub gamma: Option<f32>,
}

impl Default for ScheduleBlock {
    fn default() -> Self {
        ScheduleBlock {
            scenario: Scenario::MultipleShot,
            gap: 10,
            attack_start: None,
            attack_rounds: 100,
            gamma: None,
        }
    }
}

fn default_master_seed() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_master_seed")]
    pub master_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Write real per-round timings into `wall_ms` (otherwise 0, which keeps
    /// the CSV byte-reproducible).
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub federation: FederationBlock,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default)]
    pub seeds: SeedOverrides,
    #[serde(default, rename = "adversary")]
    pub adversaries: Vec<AdversaryBlock>,
    #[serde(default)]
    pub schedule: ScheduleBlock,
    #[serde(default)]
    pub defense: DefenseConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
        Ok(cfg)
    }

    /// JSON rather than TOML because derived seeds use the full u64 range,
    /// which TOML integers cannot hold.
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn pretrain_rounds(&self) -> usize {
        self.federation
            .pretrain_rounds
            .unwrap_or_else(|| self.model.profile.default_pretrain_rounds())
    }

    pub fn attack_start(&self) -> usize {
        self.schedule.attack_start.unwrap_or(self.pretrain_rounds() + 1)
    }

    pub fn fed_config(&self) -> FedConfig {
        let f = &self.federation;
        FedConfig {
            n_clients: f.n_clients,
            clients_per_round: f.clients_per_round,
            global_lr: f.global_lr,
            benign_lr: f.benign_lr,
            benign_epochs: f.benign_epochs,
            batch_size: f.batch_size,
            rounds: f.rounds,
            pretrain_rounds: self.pretrain_rounds(),
        }
    }

    /// Base seeds after applying overrides (the partition seed lives in
    /// `partition.seed`, the noise seed in `defense.noise_seed`).
    pub fn seed_plan(&self) -> SeedPlan {
        let mut p = SeedPlan::from_master(self.master_seed);
        let s = &self.seeds;
        p.init = s.init.unwrap_or(p.init);
        p.selection = s.selection.unwrap_or(p.selection);
        p.batch = s.batch.unwrap_or(p.batch);
        p.poison = s.poison.unwrap_or(p.poison);
        p.partition = self.partition.seed.unwrap_or(p.partition);
        p.noise = self.defense.noise_seed.unwrap_or(p.noise);
        p
    }

    pub fn adversary_configs(&self) -> Result<Vec<AdversaryConfig>> {
        self.adversaries
            .iter()
            .map(|a| {
                let t = TriggerSpec::builtin(a.trigger)?;
                let target = a.target_class.unwrap_or(t.target_class);
                Ok(AdversaryConfig {
                    trigger: t.with_target(target),
                    poison_lr: a.poison_lr,
                    poison_epochs: a.poison_epochs,
                    poison_fraction: a.poison_fraction,
                })
            })
            .collect()
    }

    /// Attackers are clients `0..#adversaries`; `None` for a clean run.
    pub fn attack_schedule(&self) -> Option<AttackSchedule> {
        if self.adversaries.is_empty() {
            return None;
        }
        let s = &self.schedule;
        Some(AttackSchedule {
            scenario: s.scenario,
            attacker_ids: (0..self.adversaries.len()).collect(),
            gap: s.gap,
            attack_start_round: self.attack_start(),
            attack_rounds: s.attack_rounds,
            gamma_override: s.gamma,
        })
    }

    /// Copy with every defaulted or derived value written out explicitly,
    /// so that it reproduces the run without relying on defaults or the
    /// environment.
    pub fn resolved(&self) -> ExperimentConfig {
        let mut c = self.clone();
        let plan = self.seed_plan();
        let dir = self.dataset.resolved_dir();
        c.dataset.dir = Some(std::path::absolute(&dir).unwrap_or(dir));
        c.federation.pretrain_rounds = Some(self.pretrain_rounds());
        c.schedule.attack_start = Some(self.attack_start());
        c.partition.seed = Some(plan.partition);
        c.defense.noise_seed = Some(plan.noise);
        c.seeds = SeedOverrides {
            init: Some(plan.init),
            selection: Some(plan.selection),
            batch: Some(plan.batch),
            poison: Some(plan.poison),
        };
        for a in &mut c.adversaries {
            if a.target_class.is_none() && (1..=8).contains(&a.trigger) {
                a.target_class = Some(a.trigger - 1);
            }
        }
        c
    }

    /// Every violated invariant, not just the first.
    pub fn problems(&self, check_files: bool) -> Vec<String> {
        let mut out = self.fed_config().problems();
        out.extend(self.defense.problems());
        if let Some(s) = self.attack_schedule() {
            out.extend(s.problems());
        }
        let f = &self.federation;
        if !(self.partition.alpha > 0.0 && self.partition.alpha.is_finite()) {
            out.push(format!("partition.alpha must be > 0, got {}", self.partition.alpha));
        }
        if self.dataset.num_classes == 0 {
            out.push("dataset.num_classes must be >= 1".into());
        }
        let mut seen = BTreeSet::new();
        for (i, a) in self.adversaries.iter().enumerate() {
            let tag = format!("adversary[{i}]");
            if !(1..=8).contains(&a.trigger) {
                out.push(format!("{tag}.trigger must be in 1..=8, got {}", a.trigger));
            } else if !seen.insert(a.trigger) {
                out.push(format!("{tag}.trigger {} is already used; trigger ids must be unique", a.trigger));
            }
            let target = a.target_class.unwrap_or(a.trigger.saturating_sub(1));
            if target >= self.dataset.num_classes {
                out.push(format!(
                    "{tag}.target_class {target} outside [0, {})",
                    self.dataset.num_classes
                ));
            }
            if !(a.poison_lr > 0.0 && a.poison_lr.is_finite()) {
                out.push(format!("{tag}.poison_lr must be > 0, got {}", a.poison_lr));
            }
            if !(a.poison_fraction > 0.0 && a.poison_fraction <= 1.0) {
                out.push(format!("{tag}.poison_fraction must be in (0, 1], got {}", a.poison_fraction));
            }
        }
        if !self.adversaries.is_empty() {
            let n = self.adversaries.len();
            if n > f.n_clients {
                out.push(format!("{n} adversaries but only {} clients", f.n_clients));
            }
            let concurrent = match self.schedule.scenario {
                Scenario::SingleShot if self.schedule.gap > 0 => 1,
                _ => n,
            };
            if concurrent > f.clients_per_round {
                out.push(format!(
                    "{concurrent} adversaries act together but only {} clients are selected per round",
                    f.clients_per_round
                ));
            }
            if self.attack_start() <= self.pretrain_rounds() {
                out.push(format!(
                    "schedule.attack_start ({}) must come after the {} pretraining rounds",
                    self.attack_start(),
                    self.pretrain_rounds()
                ));
            }
        }
        if check_files {
            for p in self.dataset.files() {
                if !p.is_file() {
                    out.push(format!("dataset file not found: {}", p.display()));
                }
            }
        }
        out
    }

    pub fn validate(&self, check_files: bool) -> Result<()> {
        let p = self.problems(check_files);
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }
}

/// Reads, parses and validates a config file (dataset files must exist).
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg = ExperimentConfig::from_toml(&text).map_err(|e| match e {
        Error::Config(msgs) => Error::Config(msgs.into_iter().map(|m| format!("{}: {m}", path.display())).collect()),
        other => other,
    })?;
    cfg.validate(true)?;
    Ok(cfg)
}

pub mod presets {
    //! Configurations mirroring the studied attack scenarios on MNIST.

    use super::ExperimentConfig;
    use crate::error::{Error, Result};

    pub const ALL: &[(&str, &str)] = &[
        ("clean_mnist", include_str!("../presets/clean_mnist.toml")),
        ("single_shot_mnist_1atk", include_str!("../presets/single_shot_mnist_1atk.toml")),
        ("single_shot_mnist_1atk_gamma1", include_str!("../presets/single_shot_mnist_1atk_gamma1.toml")),
        ("multi_shot_mnist_1atk", include_str!("../presets/multi_shot_mnist_1atk.toml")),
        ("nba_single_shot_mnist_8atk", include_str!("../presets/nba_single_shot_mnist_8atk.toml")),
        ("nba_multishot_mnist_8atk", include_str!("../presets/nba_multishot_mnist_8atk.toml")),
        ("nba_multishot_mnist_8atk_clip", include_str!("../presets/nba_multishot_mnist_8atk_clip.toml")),
        ("nba_multishot_mnist_8atk_dp", include_str!("../presets/nba_multishot_mnist_8atk_dp.toml")),
        ("nba_semi_multishot_mnist_8atk", include_str!("../presets/nba_semi_multishot_mnist_8atk.toml")),
        ("nba_multishot_mnist_8atk_cnn", include_str!("../presets/nba_multishot_mnist_8atk_cnn.toml")),
        ("nba_multishot_fmnist_8atk", include_str!("../presets/nba_multishot_fmnist_8atk.toml")),
        ("smoke", include_str!("../presets/smoke.toml")),
    ];

    pub fn names() -> impl Iterator<Item = &'static str> {
        ALL.iter().map(|(n, _)| *n)
    }

    pub fn source(name: &str) -> Option<&'static str> {
        ALL.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
    }

    /// Parsed preset (not validated against the filesystem).
    pub fn load(name: &str) -> Result<ExperimentConfig> {
        let src = source(name).ok_or_else(|| {
            Error::Config(vec![format!(
                "unknown preset {name:?}; available: {}",
                names().collect::<Vec<_>>().join(", ")
            )])
        })?;
        ExperimentConfig::from_toml(src)
    }
}
