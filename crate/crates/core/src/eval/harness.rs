use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::env::{shipped_layout, ReplayLog};
use crate::par;
use crate::trainer::mix_seed;

use super::table::{ScoreCell, ScoreRow, SCORES_FILE};
use super::{run_episode, Controller, EvalError};

/// Replays are written under `<out>/replays/<method>/`.
pub const REPLAY_DIR: &str = "replays";

/// The ego controller in `ego_slots`, partners filling the other slots in order.
#[derive(Debug, Clone)]
pub struct EvalSpec {
    pub layout: String,
    pub n: usize,
    pub method: String,
    pub ego: Controller,
    pub ego_slots: Vec<usize>,
    pub partners: Vec<Controller>,
    pub seeds: Vec<u64>,
    pub episodes_per_seed: usize,
}

impl EvalSpec {
    /// The per-slot controllers.
    pub fn roster(&self) -> Result<Vec<Controller>, EvalError> {
        let mut slots = self.ego_slots.clone();
        slots.sort_unstable();
        slots.dedup();
        if slots.len() != self.ego_slots.len() || slots.iter().any(|&s| s >= self.n) {
            return Err(EvalError::Config(format!("ego slots {:?} invalid for {} agents", self.ego_slots, self.n)));
        }
        let expected = self.n - slots.len();
        if self.partners.len() != expected {
            return Err(EvalError::RosterMismatch {
                expected,
                found: self.partners.len(),
            });
        }
        let mut partners = self.partners.iter();
        Ok((0..self.n)
            .map(|i| {
                if slots.contains(&i) {
                    self.ego.clone()
                } else {
                    partners.next().expect("counted above").clone()
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeScore {
    pub seed: u64,
    pub episode: usize,
    /// World seed handed to `reset`.
    pub env_seed: u64,
    pub score: u32,
}

#[derive(Debug, Clone)]
pub struct EvalRun {
    pub row: ScoreRow,
    pub episodes: Vec<EpisodeScore>,
    pub replays: Vec<ReplayLog>,
}

fn file_stem(method: &str) -> String {
    method
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Play `episodes_per_seed` episodes per seed in parallel; the table cell
/// aggregates per-seed means. With `out`, every replay and the score row are
/// written below it.
pub fn run_eval(spec: &EvalSpec, out: Option<&Path>) -> Result<EvalRun, EvalError> {
    let layout = shipped_layout(&spec.layout).ok_or_else(|| EvalError::UnknownLayout(spec.layout.clone()))?;
    if spec.seeds.is_empty() || spec.episodes_per_seed == 0 {
        return Err(EvalError::Config("need at least one seed and one episode".into()));
    }
    let roster = spec.roster()?;
    for (slot, c) in roster.iter().enumerate() {
        c.check(&layout, spec.n, slot)?;
    }
    let k = spec.episodes_per_seed;
    let jobs: Vec<(u64, usize)> = spec.seeds.iter().flat_map(|&s| (0..k).map(move |e| (s, e))).collect();
    let logs = par::map_slice(&jobs, |&(seed, e)| run_episode(&layout, &roster, mix_seed(seed, e as u64)))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let episodes: Vec<EpisodeScore> = jobs
        .iter()
        .zip(&logs)
        .map(|(&(seed, episode), log)| EpisodeScore {
            seed,
            episode,
            env_seed: log.seed,
            score: log.recorded_score(),
        })
        .collect();
    let per_seed: Vec<f64> = episodes
        .chunks(k)
        .map(|c| c.iter().map(|e| e.score as f64).sum::<f64>() / k as f64)
        .collect();
    let row = ScoreRow {
        layout: spec.layout.clone(),
        n: spec.n,
        method: spec.method.clone(),
        cell: ScoreCell::from_values(&per_seed).expect("at least one seed"),
        per_seed,
        normalized: None,
        meta: BTreeMap::new(),
    };
    if let Some(out) = out {
        let dir = out.join(REPLAY_DIR).join(file_stem(&spec.method));
        std::fs::create_dir_all(&dir).map_err(|e| EvalError::io(&dir, e))?;
        for (ep, log) in episodes.iter().zip(&logs) {
            let path = dir.join(format!("seed{}_ep{:03}.jsonl", ep.seed, ep.episode));
            std::fs::write(&path, log.to_jsonl()).map_err(|e| EvalError::io(&path, e))?;
        }
        append_row(out, &row)?;
    }
    Ok(EvalRun {
        row,
        episodes,
        replays: logs,
    })
}

pub(crate) fn append_row(out: &Path, row: &ScoreRow) -> Result<(), EvalError> {
    use std::io::Write;
    std::fs::create_dir_all(out).map_err(|e| EvalError::io(out, e))?;
    let path = out.join(SCORES_FILE);
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| EvalError::io(&path, e))?;
    writeln!(f, "{}", serde_json::to_string(row).expect("rows serialize")).map_err(|e| EvalError::io(&path, e))
}
