//! Running a configured experiment end to end: data loading, the round loop,
//! the round CSV, the run manifest and the final checkpoint.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::data::{dirichlet_partition, load_idx, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{RoundCsvWriter, RoundRecord};
use crate::nn::{Network, NetworkSpec, ParamVector};
use crate::seeds::SeedPlan;
use crate::simulation::{Simulation, SimulationSetup};

pub const CSV_FILE: &str = "rounds.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
const CHECKPOINT_FORMAT: &str = "nbsim-checkpoint-v1";

pub fn code_version() -> String {
    format!("nbsim {}", env!("CARGO_PKG_VERSION"))
}

/// Everything needed to reproduce and audit a run. Field order is the JSON
/// key order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_version: String,
    pub config: ExperimentConfig,
    pub seeds: SeedPlan,
    /// File name → SHA-256 (hex) of the dataset files actually read.
    pub dataset_checksums: BTreeMap<String, String>,
    pub started_at: String,
    pub finished_at: String,
    pub rounds_completed: usize,
    pub csv: String,
    pub checkpoint: String,
}

pub fn write_manifest(manifest: &RunManifest, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Serde(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    round: usize,
    param_count: usize,
    spec: NetworkSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub round: usize,
    pub params: ParamVector,
}

impl Checkpoint {
    pub fn network(&self) -> Result<Network> {
        Network::from_params(self.spec.clone(), self.params.clone())
    }
}

/// One JSON header line, `\n`, then the parameters as little-endian f32.
pub fn save_checkpoint(model: &Network, round: usize, path: &Path) -> Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        round,
        param_count: model.param_count(),
        spec: model.spec().clone(),
    };
    let mut bytes = serde_json::to_vec(&header).map_err(|e| Error::Serde(e.to_string()))?;
    bytes.push(b'\n');
    bytes.reserve(4 * header.param_count);
    for v in model.params().as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let fmt = |reason: String| Error::Format { path: path.to_path_buf(), reason };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line).map_err(|e| Error::io(path, e))?;
    let header: CheckpointHeader =
        serde_json::from_slice(line.strip_suffix(b"\n").unwrap_or(&line)).map_err(|e| fmt(format!("header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(fmt(format!("unknown checkpoint format {:?}", header.format)));
    }
    header.spec.validate()?;
    if header.spec.param_count() != header.param_count {
        return Err(fmt(format!(
            "header says {} params but the spec has {}",
            header.param_count,
            header.spec.param_count()
        )));
    }
    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
    if body.len() != 4 * header.param_count {
        return Err(fmt(format!(
            "expected {} parameter bytes, found {}",
            4 * header.param_count,
            body.len()
        )));
    }
    let params = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(Checkpoint {
        spec: header.spec,
        round: header.round,
        params: ParamVector::new(params),
    })
}

/// Train/test sets plus the checksums of the files they came from.
pub struct LoadedData {
    pub train: Arc<Dataset>,
    pub test: Arc<Dataset>,
    pub checksums: BTreeMap<String, String>,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<LoadedData> {
    let d = &cfg.dataset;
    let [tri, trl, tei, tel] = d.files();
    let train = load_idx(&tri, &trl, &d.name, d.num_classes)?;
    let test = load_idx(&tei, &tel, &d.name, d.num_classes)?;
    let mut checksums = BTreeMap::new();
    for p in [&tri, &trl, &tei, &tel] {
        let key = p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
        checksums.insert(key, sha256_file(p)?);
    }
    Ok(LoadedData {
        train: Arc::new(train),
        test: Arc::new(test),
        checksums,
    })
}

/// Builds a ready-to-run simulation (round 0) from a validated config.
pub fn build_simulation(cfg: &ExperimentConfig, data: &LoadedData, threads: usize) -> Result<Simulation> {
    let seeds = cfg.seed_plan();
    let fed = cfg.fed_config();
    let spec = cfg.model.profile.spec();
    if spec.input != data.train.image_dims() {
        return Err(Error::Config(vec![format!(
            "model expects inputs {:?} but the dataset has {:?}",
            spec.input,
            data.train.image_dims()
        )]));
    }
    let partition = dirichlet_partition(&data.train, fed.n_clients, cfg.partition.alpha, seeds.partition)?;
    Simulation::new(SimulationSetup {
        spec,
        fed,
        train: data.train.clone(),
        test: data.test.clone(),
        partition: Arc::new(partition),
        adversaries: cfg.adversary_configs()?,
        schedule: cfg.attack_schedule(),
        defense: cfg.defense.clone(),
        seeds,
        threads,
        record_wall_time: cfg.record_wall_time,
    })
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Overrides `cfg.output_dir`; the default is `runs/<name>`.
    pub out_dir: Option<PathBuf>,
    pub threads: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            out_dir: None,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub last: Option<RoundRecord>,
    pub rounds: usize,
}

impl RunSummary {
    pub fn line(&self) -> String {
        match &self.last {
            Some(r) => format!(
                "{} rounds, final MA {:.2}%, BA_Avg {:.2}% -> {}",
                self.rounds,
                r.ma,
                r.ba_avg(),
                self.out_dir.display()
            ),
            None => format!("0 rounds -> {}", self.out_dir.display()),
        }
    }
}

pub fn output_dir(cfg: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    opts.out_dir
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| {
            let name = if cfg.name.is_empty() { "run" } else { &cfg.name };
            PathBuf::from("runs").join(name)
        })
}

/// Runs the whole experiment, calling `on_round` after every round.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    mut on_round: impl FnMut(&RoundRecord),
) -> Result<RunSummary> {
    cfg.validate(true)?;
    let started_at = chrono::Utc::now().to_rfc3339();
    let out = output_dir(cfg, opts);
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let data = load_data(cfg)?;
    let mut sim = build_simulation(cfg, &data, opts.threads)?;
    let mut manifest = RunManifest {
        code_version: code_version(),
        config: cfg.resolved(),
        seeds: cfg.seed_plan(),
        dataset_checksums: data.checksums.clone(),
        started_at,
        finished_at: String::new(),
        rounds_completed: 0,
        csv: CSV_FILE.into(),
        checkpoint: CHECKPOINT_FILE.into(),
    };
    // Written up front so an interrupted run still says what it was.
    write_manifest(&manifest, &out.join(MANIFEST_FILE))?;
    let mut csv = RoundCsvWriter::create(&out.join(CSV_FILE), cfg.adversaries.len())?;
    let mut last = None;
    for _ in 0..cfg.federation.rounds {
        let rec = sim.run_round()?;
        csv.append(&rec)?;
        on_round(&rec);
        last = Some(rec);
    }
    save_checkpoint(sim.global(), sim.round(), &out.join(CHECKPOINT_FILE))?;
    manifest.rounds_completed = sim.round();
    manifest.finished_at = chrono::Utc::now().to_rfc3339();
    write_manifest(&manifest, &out.join(MANIFEST_FILE))?;
    Ok(RunSummary {
        out_dir: out,
        last,
        rounds: sim.round(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub rows_compared: usize,
    /// 1-based line number with the expected and the regenerated line.
    pub first_mismatch: Option<(usize, String, String)>,
}

impl VerifyReport {
    pub fn matches(&self) -> bool {
        self.first_mismatch.is_none()
    }
}

/// Line-by-line comparison of two CSV files.
pub fn diff_csv(expected: &Path, actual: &Path) -> Result<VerifyReport> {
    let a = std::fs::read_to_string(expected).map_err(|e| Error::io(expected, e))?;
    let b = std::fs::read_to_string(actual).map_err(|e| Error::io(actual, e))?;
    let (la, lb): (Vec<&str>, Vec<&str>) = (a.lines().collect(), b.lines().collect());
    let n = la.len().max(lb.len());
    let first_mismatch = (0..n).find_map(|i| {
        let (x, y) = (la.get(i).copied().unwrap_or(""), lb.get(i).copied().unwrap_or(""));
        (x != y).then(|| (i + 1, x.to_string(), y.to_string()))
    });
    Ok(VerifyReport {
        rows_compared: n.saturating_sub(1),
        first_mismatch,
    })
}

/// Re-runs the manifest's resolved config into `out_dir` and diffs the new
/// round CSV against the recorded one.
pub fn verify(manifest_path: &Path, out_dir: &Path, threads: usize) -> Result<VerifyReport> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let data = load_data(&manifest.config)?;
    for (file, sum) in &manifest.dataset_checksums {
        if data.checksums.get(file) != Some(sum) {
            return Err(Error::Input(format!("dataset file {file} does not match the recorded checksum")));
        }
    }
    let opts = RunOptions {
        out_dir: Some(out_dir.to_path_buf()),
        threads,
    };
    run_experiment(&manifest.config, &opts, |_| {})?;
    diff_csv(&base.join(&manifest.csv), &out_dir.join(CSV_FILE))
}
