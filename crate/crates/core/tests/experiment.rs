mod support;

use std::path::Path;

use nbsim::config::{parse_config, AdversaryBlock};
use nbsim::experiment::*;
use nbsim::metrics::read_round_csv;
use nbsim::Error;
use support::synthetic;

fn run(cfg: &nbsim::config::ExperimentConfig, out: &Path, threads: usize) -> RunSummary {
    let opts = RunOptions {
        out_dir: Some(out.to_path_buf()),
        threads,
    };
    run_experiment(cfg, &opts, |_| {}).unwrap()
}

#[test]
fn same_config_gives_identical_csv_bytes_for_any_thread_count() {
    let (tmp, cfg) = synthetic::setup(600);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run(&cfg, &a, 1);
    run(&cfg, &b, 3);
    let x = std::fs::read(a.join(CSV_FILE)).unwrap();
    let y = std::fs::read(b.join(CSV_FILE)).unwrap();
    assert_eq!(x, y);
    assert_eq!(std::fs::read(a.join(CHECKPOINT_FILE)).unwrap(), std::fs::read(b.join(CHECKPOINT_FILE)).unwrap());
}

#[test]
fn run_writes_every_round_and_marks_attack_rounds() {
    let (tmp, cfg) = synthetic::setup(600);
    let out = tmp.path().join("run");
    let s = run(&cfg, &out, 2);
    assert_eq!(s.rounds, 6);
    let recs = read_round_csv(&out.join(CSV_FILE)).unwrap();
    assert_eq!(recs.len(), 6);
    let attacked: Vec<usize> = recs.iter().filter(|r| !r.active_attackers.is_empty()).map(|r| r.round).collect();
    assert_eq!(attacked, vec![3, 4, 5]);
    for r in &recs {
        assert_eq!(r.ba.len(), 2);
        assert_eq!(r.wall_ms, 0);
        let expected_gamma = if r.active_attackers.is_empty() { 0.0 } else { 50.0 };
        assert_eq!(r.gamma, expected_gamma);
    }
    assert!(s.line().contains("final MA"));
}

#[test]
fn csv_is_flushed_after_each_round() {
    let (tmp, cfg) = synthetic::setup(600);
    let out = tmp.path().join("run");
    let csv = out.join(CSV_FILE);
    let opts = RunOptions {
        out_dir: Some(out.clone()),
        threads: 1,
    };
    let mut seen = Vec::new();
    run_experiment(&cfg, &opts, |r| {
        let on_disk = read_round_csv(&csv).unwrap();
        seen.push((r.round, on_disk.len()));
    })
    .unwrap();
    assert_eq!(seen, (1..=6).map(|r| (r, r)).collect::<Vec<_>>());
}

#[test]
fn checkpoint_round_trip_reproduces_metrics() {
    let (tmp, cfg) = synthetic::setup(600);
    let out = tmp.path().join("run");
    let s = run(&cfg, &out, 1);
    let ck = load_checkpoint(&out.join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ck.round, 6);
    assert_eq!(ck.spec, cfg.model.profile.spec());
    let data = load_data(&cfg).unwrap();
    let mut sim = build_simulation(&cfg, &data, 1).unwrap();
    sim.restore(ck.params.clone(), ck.round).unwrap();
    let (ma, ba) = sim.evaluate().unwrap();
    let last = s.last.unwrap();
    assert_eq!(ma, last.ma);
    assert_eq!(ba, last.ba);
    assert_eq!(ck.network().unwrap().params(), sim.global().params());
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let (tmp, cfg) = synthetic::setup(300);
    let mut small = cfg.clone();
    small.federation.rounds = 1;
    small.federation.pretrain_rounds = Some(1);
    let out = tmp.path().join("run");
    run(&small, &out, 1);
    let path = out.join(CHECKPOINT_FILE);
    let bytes = std::fs::read(&path).unwrap();
    let cut = tmp.path().join("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_checkpoint(&cut), Err(Error::Format { .. })));
    let garbage = tmp.path().join("garbage.ckpt");
    std::fs::write(&garbage, b"not json\n\0\0\0\0").unwrap();
    assert!(matches!(load_checkpoint(&garbage), Err(Error::Format { .. })));
}

#[test]
fn manifest_records_everything_and_reruns_identically() {
    let (tmp, cfg) = synthetic::setup(600);
    let out = tmp.path().join("run");
    run(&cfg, &out, 1);
    let m = read_manifest(&out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.rounds_completed, 6);
    assert_eq!(m.seeds, cfg.seed_plan());
    assert_eq!(m.config, cfg.resolved());
    assert_eq!(m.dataset_checksums.len(), 4);
    assert!(m.dataset_checksums.values().all(|h| h.len() == 64));
    assert!(!m.started_at.is_empty() && !m.finished_at.is_empty());
    assert!(m.code_version.starts_with("nbsim "));

    let report = verify(&out.join(MANIFEST_FILE), &tmp.path().join("again"), 2).unwrap();
    assert!(report.matches(), "{report:?}");
    assert_eq!(report.rows_compared, 6);
}

#[test]
fn verify_reports_the_first_differing_line() {
    let (tmp, cfg) = synthetic::setup(300);
    let out = tmp.path().join("run");
    run(&cfg, &out, 1);
    let csv = out.join(CSV_FILE);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[4] = lines[4].replacen(',', ",1", 1);
    std::fs::write(&csv, lines.join("\n") + "\n").unwrap();
    let report = verify(&out.join(MANIFEST_FILE), &tmp.path().join("again"), 1).unwrap();
    assert_eq!(report.first_mismatch.map(|m| m.0), Some(5));
}

#[test]
fn changed_dataset_fails_verification() {
    let (tmp, cfg) = synthetic::setup(300);
    let out = tmp.path().join("run");
    run(&cfg, &out, 1);
    let dir = cfg.dataset.dir.clone().unwrap();
    synthetic::write_dataset(&dir, 300, 200, 12345);
    let err = verify(&out.join(MANIFEST_FILE), &tmp.path().join("again"), 1).unwrap_err();
    assert!(matches!(err, Error::Input(_)), "{err}");
}

#[test]
fn forking_after_pretraining_matches_the_full_run() {
    let (tmp, cfg) = synthetic::setup(600);
    let full = run(&cfg, &tmp.path().join("full"), 1);
    let full_recs = read_round_csv(&full.out_dir.join(CSV_FILE)).unwrap();

    let mut clean = cfg.clone();
    clean.adversaries.clear();
    clean.federation.rounds = 2;
    let pre = run(&clean, &tmp.path().join("pre"), 1);
    let ck = load_checkpoint(&pre.out_dir.join(CHECKPOINT_FILE)).unwrap();

    let data = load_data(&cfg).unwrap();
    let mut sim = build_simulation(&cfg, &data, 1).unwrap();
    sim.restore(ck.params, ck.round).unwrap();
    for expected in &full_recs[2..] {
        assert_eq!(sim.run_round().unwrap().csv_row(), expected.csv_row());
    }
}

#[test]
fn missing_dataset_files_are_all_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = synthetic::config(&tmp.path().join("nowhere"));
    cfg.adversaries.push(AdversaryBlock::new(2));
    let Err(Error::Config(problems)) = cfg.validate(true) else {
        panic!("expected config error");
    };
    assert_eq!(problems.iter().filter(|p| p.contains("not found")).count(), 4);
    assert!(problems.iter().any(|p| p.contains("unique")));
    let out = RunOptions {
        out_dir: Some(tmp.path().join("out")),
        threads: 1,
    };
    assert!(run_experiment(&cfg, &out, |_| {}).is_err());
}

#[test]
fn toml_file_round_trip() {
    let (tmp, cfg) = synthetic::setup(300);
    let path = tmp.path().join("exp.toml");
    let text = format!(
        "name = \"t\"\n[dataset]\nname = \"synthetic\"\ndir = {:?}\n[federation]\nn_clients = 10\nclients_per_round = 4\n\n[[adversary]]\ntrigger = 4\ntarget_class = 9\n",
        cfg.dataset.dir.as_ref().unwrap()
    );
    std::fs::write(&path, text).unwrap();
    let parsed = parse_config(&path).unwrap();
    assert_eq!(parsed.adversaries[0].target_class, Some(9));
    assert_eq!(parsed.adversary_configs().unwrap()[0].trigger.target_class, 9);
    std::fs::write(&path, "name = \"t\"\nbogus = 1\n").unwrap();
    let err = parse_config(&path).unwrap_err().to_string();
    assert!(err.contains("bogus"), "{err}");
}

#[test]
fn advancing_without_evaluation_reaches_the_same_state() {
    let (_tmp, cfg) = synthetic::setup(400);
    let data = load_data(&cfg).unwrap();
    let mut a = build_simulation(&cfg, &data, 1).unwrap();
    let mut b = build_simulation(&cfg, &data, 2).unwrap();
    let mut last = None;
    for _ in 0..4 {
        last = Some(a.run_round().unwrap());
    }
    for _ in 0..3 {
        b.advance().unwrap();
    }
    assert_eq!(b.run_round().unwrap().csv_row(), last.unwrap().csv_row());
    assert_eq!(a.global().params(), b.global().params());
}
