//! Small learnable IDX datasets written to a temp dir, plus a matching
//! experiment config, so end-to-end tests don't need MNIST.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nbsim::config::{AdversaryBlock, ExperimentConfig};
use nbsim::data::idx::{encode_images, encode_labels};

/// Class `c` lights a 5x5 block at a class-specific spot below row 10, so the
/// corner triggers never overlap the class signal.
fn image(class: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut px: Vec<u8> = (0..28 * 28).map(|_| rng.random_range(0..60)).collect();
    let (r0, c0) = (10 + (class / 5) * 8, 2 + (class % 5) * 5);
    for r in r0..r0 + 5 {
        for c in c0..c0 + 5 {
            px[r * 28 + c] = rng.random_range(180..=255);
        }
    }
    px
}

fn write_pair(dir: &Path, stem: &str, n: usize, rng: &mut ChaCha8Rng) {
    let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    let pixels: Vec<u8> = labels.iter().flat_map(|&l| image(l as usize, rng)).collect();
    std::fs::write(dir.join(format!("{stem}-images-idx3-ubyte")), encode_images(28, 28, &pixels)).unwrap();
    std::fs::write(dir.join(format!("{stem}-labels-idx1-ubyte")), encode_labels(&labels)).unwrap();
}

pub fn write_dataset(dir: &Path, n_train: usize, n_test: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    write_pair(dir, "train", n_train, &mut rng);
    write_pair(dir, "t10k", n_test, &mut rng);
}

/// A quick config over the synthetic data: 10 clients, 4 per round, two
/// attackers from round 3.
pub fn config(dir: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        name: "synthetic".into(),
        ..ExperimentConfig::default()
    };
    c.dataset.name = "synthetic".into();
    c.dataset.dir = Some(dir.to_path_buf());
    c.federation.n_clients = 10;
    c.federation.clients_per_round = 4;
    c.federation.batch_size = 32;
    c.federation.rounds = 6;
    c.federation.pretrain_rounds = Some(2);
    c.federation.benign_epochs = 1;
    c.adversaries = vec![AdversaryBlock::new(1), AdversaryBlock::new(2)];
    for a in &mut c.adversaries {
        a.poison_epochs = 2;
    }
    c.schedule.scenario = nbsim::adversary::Scenario::SemiMultipleShot;
    c.schedule.attack_rounds = 3;
    c
}

pub fn setup(n_train: usize) -> (tempfile::TempDir, ExperimentConfig) {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    std::fs::create_dir_all(&data).unwrap();
    write_dataset(&data, n_train, 200, 99);
    let cfg = config(&data);
    (tmp, cfg)
}
