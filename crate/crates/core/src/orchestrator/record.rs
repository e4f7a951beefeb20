use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STEP_HEADER: [&str; 9] = [
    "episode",
    "step",
    "slice",
    "action",
    "message",
    "reward",
    "conflict",
    "latency",
    "utilization",
];

pub const EPISODE_HEADER: [&str; 7] = [
    "episode",
    "mean_reward",
    "conflict_rate",
    "mean_utilization",
    "mean_latency",
    "epsilon",
    "steps",
];

/// One slice at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub episode: u64,
    pub step: u64,
    pub slice: usize,
    /// Requested allocation in Gcycle/s.
    pub action: f64,
    /// Symbol sent, 0 when the variant does not communicate.
    pub message: u8,
    pub reward: f64,
    pub conflict: u8,
    /// Long-term latency `L` in seconds.
    pub latency: f64,
    /// Per-slice utilization `Z`.
    pub utilization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: u64,
    pub mean_reward: f64,
    pub conflict_rate: f64,
    /// Mean over steps of `sum(phi) / (U * sum(a_eff))`.
    pub mean_utilization: f64,
    pub mean_latency: f64,
    pub epsilon: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: u64,
    pub epsilon: f64,
    pub rows: Vec<StepRow>,
    /// Per-step conflict flags.
    pub conflicts: Vec<bool>,
    /// Per-step system utilization.
    pub system_utilization: Vec<f64>,
}

impl EpisodeRecord {
    pub fn new(episode: u64, epsilon: f64) -> Self {
        Self {
            episode,
            epsilon,
            rows: Vec::new(),
            conflicts: Vec::new(),
            system_utilization: Vec::new(),
        }
    }

    pub fn steps(&self) -> usize {
        self.conflicts.len()
    }

    pub fn summary(&self) -> EpisodeSummary {
        let n = self.steps().max(1) as f64;
        let rows = self.rows.len().max(1) as f64;
        EpisodeSummary {
            episode: self.episode,
            mean_reward: self.rows.iter().map(|r| r.reward).sum::<f64>() / rows,
            conflict_rate: self.conflicts.iter().filter(|c| **c).count() as f64 / n,
            mean_utilization: self.system_utilization.iter().sum::<f64>() / n,
            mean_latency: self.rows.iter().map(|r| r.latency).sum::<f64>() / rows,
            epsilon: self.epsilon,
            steps: self.steps() as u64,
        }
    }

    /// Latencies of every row.
    pub fn latencies(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|r| r.latency)
    }
}

pub fn write_step_header<W: Write>(w: &mut csv::Writer<W>) -> Result<()> {
    w.write_record(STEP_HEADER)?;
    Ok(())
}

pub fn write_step_rows<W: Write>(w: &mut csv::Writer<W>, record: &EpisodeRecord) -> Result<()> {
    for r in &record.rows {
        w.write_record([
            r.episode.to_string(),
            r.step.to_string(),
            r.slice.to_string(),
            r.action.to_string(),
            r.message.to_string(),
            r.reward.to_string(),
            r.conflict.to_string(),
            r.latency.to_string(),
            r.utilization.to_string(),
        ])?;
    }
    Ok(())
}

/// Step-level CSV of a whole run as a string.
pub fn step_csv(records: &[EpisodeRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    write_step_header(&mut w)?;
    for r in records {
        write_step_rows(&mut w, r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn write_episode_csv<W: Write>(w: W, summaries: &[EpisodeSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(EPISODE_HEADER)?;
    for s in summaries {
        w.write_record([
            s.episode.to_string(),
            s.mean_reward.to_string(),
            s.conflict_rate.to_string(),
            s.mean_utilization.to_string(),
            s.mean_latency.to_string(),
            s.epsilon.to_string(),
            s.steps.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_episode_csv<R: Read>(r: R, path: &Path) -> Result<Vec<EpisodeSummary>> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(|s| s.to_string()).collect();
    if header != EPISODE_HEADER {
        return Err(Error::artifact(path, format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for row in rd.deserialize() {
        out.push(row.map_err(|e| Error::artifact(path, e.to_string()))?);
    }
    Ok(out)
}

pub fn read_step_csv<R: Read>(r: R, path: &Path) -> Result<Vec<StepRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(|s| s.to_string()).collect();
    if header != STEP_HEADER {
        return Err(Error::artifact(path, format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for row in rd.deserialize() {
        out.push(row.map_err(|e| Error::artifact(path, e.to_string()))?);
    }
    Ok(out)
}

/// Rebuilds per-episode summaries from step rows. System utilization is not
/// recoverable from rows, so it is taken as the mean per-slice value.
pub fn summaries_from_rows(rows: &[StepRow]) -> Vec<EpisodeSummary> {
    let mut out: Vec<EpisodeSummary> = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        let ep = rows[i].episode;
        let j = i + rows[i..].iter().take_while(|r| r.episode == ep).count();
        let chunk = &rows[i..j];
        let mut steps: Vec<u64> = chunk.iter().map(|r| r.step).collect();
        steps.dedup();
        let conflict_steps = {
            let mut c: Vec<u64> = chunk.iter().filter(|r| r.conflict == 1).map(|r| r.step).collect();
            c.dedup();
            c.len()
        };
        let n = chunk.len() as f64;
        out.push(EpisodeSummary {
            episode: ep,
            mean_reward: chunk.iter().map(|r| r.reward).sum::<f64>() / n,
            conflict_rate: conflict_steps as f64 / steps.len() as f64,
            mean_utilization: chunk.iter().map(|r| r.utilization).sum::<f64>() / n,
            mean_latency: chunk.iter().map(|r| r.latency).sum::<f64>() / n,
            epsilon: f64::NAN,
            steps: steps.len() as u64,
        });
        i = j;
    }
    out
}
