//! Per-episode training log: one record per episode plus run metadata,
//! serialized as tab-separated text with `# key=value` header lines.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{CoreError, Result};

/// One finished episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: u64,
    /// Cumulative environment frames consumed when the episode ended.
    pub end_frame: u64,
    /// Sum of raw environmental rewards (never shaped).
    pub return_raw: f32,
    /// Sum of shaped rewards actually used for TD targets.
    pub return_shaped: f32,
    pub epsilon: f32,
    /// Mean potential-regression loss of this episode's update (0 when none ran).
    pub apf_loss: f32,
    /// Mean TD loss across this episode's updates (0 when none ran).
    pub td_loss: f32,
}

/// Full log of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub env: String,
    pub variant: String,
    pub seed: u64,
    pub total_frames: u64,
    pub config_hash: String,
    pub episodes: Vec<EpisodeRecord>,
}

impl TrainLog {
    pub fn raw_returns(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.return_raw as f64).collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        out.push_str("# apfrl-trainlog v1\n");
        out.push_str(&format!("# env={}\n", self.env));
        out.push_str(&format!("# variant={}\n", self.variant));
        out.push_str(&format!("# seed={}\n", self.seed));
        out.push_str(&format!("# total_frames={}\n", self.total_frames));
        out.push_str(&format!("# config_hash={}\n", self.config_hash));
        out.push_str("episode\tend_frame\treturn_raw\treturn_shaped\tepsilon\tapf_loss\ttd_loss\n");
        for e in &self.episodes {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                e.episode, e.end_frame, e.return_raw, e.return_shaped, e.epsilon, e.apf_loss,
                e.td_loss
            ));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(self.to_tsv().as_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        let mut env = None;
        let mut variant = None;
        let mut seed = None;
        let mut total_frames = None;
        let mut config_hash = String::new();
        let mut episodes = Vec::new();
        let mut saw_header = false;
        for line in r.lines() {
            let line = line?;
            if let Some(rest) = line.strip_prefix("# ") {
                if let Some((k, v)) = rest.split_once('=') {
                    match k {
                        "env" => env = Some(v.to_string()),
                        "variant" => variant = Some(v.to_string()),
                        "seed" => seed = v.parse().ok(),
                        "total_frames" => total_frames = v.parse().ok(),
                        "config_hash" => config_hash = v.to_string(),
                        _ => {}
                    }
                }
                continue;
            }
            if line.starts_with("episode\t") {
                saw_header = true;
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split('\t').collect();
            if cells.len() != 7 {
                return Err(CoreError::Data(format!(
                    "{}: bad log row: {line}",
                    path.display()
                )));
            }
            let parse_f = |s: &str| -> Result<f32> {
                s.parse().map_err(|_| CoreError::Data(format!("bad cell {s}")))
            };
            episodes.push(EpisodeRecord {
                episode: cells[0].parse().map_err(|_| CoreError::Data("bad episode".into()))?,
                end_frame: cells[1].parse().map_err(|_| CoreError::Data("bad end_frame".into()))?,
                return_raw: parse_f(cells[2])?,
                return_shaped: parse_f(cells[3])?,
                epsilon: parse_f(cells[4])?,
                apf_loss: parse_f(cells[5])?,
                td_loss: parse_f(cells[6])?,
            });
        }
        if !saw_header {
            return Err(CoreError::Data(format!(
                "{}: not a training log",
                path.display()
            )));
        }
        match (env, variant, seed, total_frames) {
            (Some(env), Some(variant), Some(seed), Some(total_frames)) => Ok(Self {
                env,
                variant,
                seed,
                total_frames,
                config_hash,
                episodes,
            }),
            _ => Err(CoreError::Data(format!(
                "{}: log is missing run metadata",
                path.display()
            ))),
        }
    }
}
