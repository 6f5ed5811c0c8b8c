//! Main-task and backdoor accuracy, plus the per-round CSV log.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{argmax, Network};

const EVAL_CHUNK: usize = 500;

/// Argmax predictions (ties to the lowest class) for every sample.
pub fn predict(model: &Network, ds: &Dataset) -> Result<Vec<usize>> {
    let n = ds.len();
    let chunks: Vec<(usize, usize)> = (0..n).step_by(EVAL_CHUNK).map(|s| (s, (s + EVAL_CHUNK).min(n))).collect();
    let parts: Vec<Vec<usize>> = chunks
        .par_iter()
        .map(|&(start, end)| {
            let idx: Vec<usize> = (start..end).collect();
            let logits = model.forward(&ds.images.gather(&idx))?;
            Ok((0..idx.len()).map(|i| argmax(logits.sample(i))).collect())
        })
        .collect::<Result<_>>()?;
    Ok(parts.concat())
}

fn percent(hits: usize, total: usize) -> f64 {
    100.0 * hits as f64 / total as f64
}

/// Percentage of samples whose argmax equals the true label.
pub fn main_accuracy(model: &Network, test: &Dataset) -> Result<f64> {
    let preds = predict(model, test)?;
    let hits = preds.iter().zip(&test.labels).filter(|(p, l)| p == l).count();
    Ok(percent(hits, test.len()))
}

/// Percentage of triggered samples classified as `target`.
pub fn backdoor_accuracy(model: &Network, bd_test: &Dataset, target: usize) -> Result<f64> {
    let preds = predict(model, bd_test)?;
    let hits = preds.iter().filter(|&&p| p == target).count();
    Ok(percent(hits, bd_test.len()))
}

/// Metrics of one federated round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub ma: f64,
    /// One entry per adversary trigger, in adversary order.
    pub ba: Vec<f64>,
    pub active_attackers: Vec<usize>,
    /// Scale applied by this round's active attackers; 0 when none acted.
    pub gamma: f32,
    pub defense: String,
    pub wall_ms: u64,
}

impl RoundRecord {
    /// Mean of `ba`; 0 when no triggers are tracked.
    pub fn ba_avg(&self) -> f64 {
        if self.ba.is_empty() {
            0.0
        } else {
            self.ba.iter().sum::<f64>() / self.ba.len() as f64
        }
    }

    pub fn csv_header(num_triggers: usize) -> String {
        let mut cols = vec!["round".to_string(), "ma".to_string()];
        cols.extend((1..=num_triggers).map(|k| format!("ba_{k}")));
        cols.extend(["ba_avg", "attackers", "gamma", "defense", "wall_ms"].map(String::from));
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![self.round.to_string(), format!("{:.4}", self.ma)];
        cols.extend(self.ba.iter().map(|b| format!("{b:.4}")));
        cols.push(format!("{:.4}", self.ba_avg()));
        cols.push(
            self.active_attackers
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(";"),
        );
        cols.push(format!("{:.4}", self.gamma));
        cols.push(self.defense.clone());
        cols.push(self.wall_ms.to_string());
        cols.join(",")
    }
}

/// Appends rows to a round CSV, flushing after each so a crash keeps every
/// completed round.
pub struct RoundCsvWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl RoundCsvWriter {
    pub fn create(path: &Path, num_triggers: usize) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = RoundCsvWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        w.line(&RoundRecord::csv_header(num_triggers))?;
        Ok(w)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn append(&mut self, rec: &RoundRecord) -> Result<()> {
        self.line(&rec.csv_row())
    }
}

pub fn write_round_csv(records: &[RoundRecord], path: &Path) -> Result<()> {
    let m = records.first().map_or(0, |r| r.ba.len());
    let mut w = RoundCsvWriter::create(path, m)?;
    for r in records {
        w.append(r)?;
    }
    Ok(())
}

/// Parses a round CSV produced by [`write_round_csv`].
pub fn read_round_csv(path: &Path) -> Result<Vec<RoundRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let fmt = |reason: String| Error::Format { path: path.to_path_buf(), reason };
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| fmt("empty file".into()))?.split(',').collect();
    if header.len() < 7 || header[0] != "round" {
        return Err(fmt("unexpected header".into()));
    }
    let m = header.len() - 7;
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != header.len() {
                return Err(fmt(format!("row {} has {} fields", i + 1, f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| fmt(format!("row {}: {e}", i + 1)));
            let int = |s: &str| s.parse::<u64>().map_err(|e| fmt(format!("row {}: {e}", i + 1)));
            let attackers = if f[m + 3].is_empty() {
                Vec::new()
            } else {
                f[m + 3].split(';').map(|s| int(s).map(|v| v as usize)).collect::<Result<_>>()?
            };
            Ok(RoundRecord {
                round: int(f[0])? as usize,
                ma: num(f[1])?,
                ba: f[2..2 + m].iter().map(|s| num(s)).collect::<Result<_>>()?,
                active_attackers: attackers,
                gamma: num(f[m + 4])? as f32,
                defense: f[m + 5].to_string(),
                wall_ms: int(f[m + 6])?,
            })
        })
        .collect()
}
