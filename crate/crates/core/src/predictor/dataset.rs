use std::io::{Cursor, Read};
use std::path::Path;
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{shipped_layout, Action, Layout, WorldState};
use crate::par;
use crate::trainer::{mix_seed, play_episode, sample_team_actions, Team, TeamPool};

use super::window::{build_window, step_width, StepRecord, TrajectoryWindow, WINDOW_LEN};
use super::PredictorError;

/// Anything that can drive a whole team for one step.
pub trait TeamBehavior: Sync {
    fn joint_actions(&self, state: &WorldState, rng: &mut ChaCha8Rng) -> Vec<Action>;
}

impl TeamBehavior for Team {
    fn joint_actions(&self, state: &WorldState, rng: &mut ChaCha8Rng) -> Vec<Action> {
        sample_team_actions(&self.actor_refs(), state, rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    fn from_code(c: u8) -> Option<Split> {
        [Split::Train, Split::Val, Split::Test].get(c as usize).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub window: TrajectoryWindow,
    pub label: usize,
    pub episode: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub team: usize,
    pub seed: u64,
    pub split: Split,
}

/// Labeled windows from self-play of every pool team, split by episode.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorDataset {
    pub layout: String,
    pub n: usize,
    pub n_teams: usize,
    pub stride: usize,
    pub seed: u64,
    pub episodes: Vec<EpisodeMeta>,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    layout: String,
    n: usize,
    n_teams: usize,
    stride: usize,
    seed: u64,
    samples: usize,
    /// `counts[split][label]`.
    counts: Vec<Vec<usize>>,
    episodes: Vec<EpisodeMeta>,
    sha256: String,
}

const MAGIC: &[u8; 4] = b"TCDS";
const VERSION: u32 = 1;
pub const DATASET_FILE: &str = "dataset.bin";
pub const DATASET_MANIFEST: &str = "manifest.json";
/// Steps between consecutive windows taken from one episode.
pub const DEFAULT_STRIDE: usize = 5;

/// Episode counts for the train / val / test split of one team.
fn split_sizes(episodes: usize) -> (usize, usize, usize) {
    let val = ((episodes as f64 * 0.1).round() as usize).max(1);
    let test = val;
    (episodes - val - test, val, test)
}

/// Roll out each team for `episodes_per_team` episodes on shared seeds and cut
/// windows every `stride` steps. Episodes are split 0.8/0.1/0.1 within each team.
pub fn generate_dataset(
    layout: &Arc<Layout>,
    n: usize,
    teams: &[&dyn TeamBehavior],
    episodes_per_team: usize,
    stride: usize,
    seed: u64,
) -> Result<PredictorDataset, PredictorError> {
    if teams.is_empty() {
        return Err(PredictorError::EmptyPool);
    }
    if episodes_per_team < 3 {
        return Err(PredictorError::Config("need at least 3 episodes per team to split".into()));
    }
    if stride == 0 {
        return Err(PredictorError::Config("stride must be positive".into()));
    }
    let (train, val, _) = split_sizes(episodes_per_team);
    let mut episodes = Vec::with_capacity(teams.len() * episodes_per_team);
    for team in 0..teams.len() {
        let mut order: Vec<usize> = (0..episodes_per_team).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5_0000 + team as u64)));
        let mut splits = vec![Split::Test; episodes_per_team];
        for (rank, &e) in order.iter().enumerate() {
            splits[e] = if rank < train {
                Split::Train
            } else if rank < train + val {
                Split::Val
            } else {
                Split::Test
            };
        }
        for (e, split) in splits.into_iter().enumerate() {
            episodes.push(EpisodeMeta {
                team,
                seed: mix_seed(seed, e as u64),
                split,
            });
        }
    }
    let per_episode = par::map_slice(&episodes, |meta| {
        let rec = play_episode(layout, n, meta.seed, |s, rng| teams[meta.team].joint_actions(s, rng))?;
        let history: Vec<StepRecord> = rec
            .poses
            .into_iter()
            .zip(rec.actions)
            .map(|(agents, actions)| StepRecord { agents, actions })
            .collect();
        (stride..=history.len())
            .step_by(stride)
            .map(|end| build_window(layout, &history[..end]))
            .collect::<Result<Vec<_>, _>>()
    });
    let mut samples = Vec::new();
    for (idx, (meta, windows)) in episodes.iter().zip(per_episode).enumerate() {
        for window in windows? {
            samples.push(Sample {
                window,
                label: meta.team,
                episode: idx,
                split: meta.split,
            });
        }
    }
    Ok(PredictorDataset {
        layout: layout.name.clone(),
        n,
        n_teams: teams.len(),
        stride,
        seed,
        episodes,
        samples,
    })
}

/// Dataset from a trained pool.
pub fn generate_predictor_dataset(
    pool: &TeamPool,
    episodes_per_team: usize,
    seed: u64,
) -> Result<PredictorDataset, PredictorError> {
    let layout = pool.layout()?;
    let teams: Vec<&dyn TeamBehavior> = pool.teams.iter().map(|t| t as &dyn TeamBehavior).collect();
    generate_dataset(&layout, pool.n, &teams, episodes_per_team, DEFAULT_STRIDE, seed)
}

impl PredictorDataset {
    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    /// `counts[split][label]` with splits in train, val, test order.
    pub fn counts(&self) -> Vec<Vec<usize>> {
        let mut c = vec![vec![0; self.n_teams]; 3];
        for s in &self.samples {
            c[s.split.code() as usize][s.label] += 1;
        }
        c
    }

    pub fn layout(&self) -> Result<Arc<Layout>, PredictorError> {
        shipped_layout(&self.layout).ok_or_else(|| PredictorError::Config(format!("unknown layout {:?}", self.layout)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let w = step_width(self.n);
        let mut out = Vec::with_capacity(24 + self.samples.len() * (13 + WINDOW_LEN * w * 8));
        out.extend_from_slice(MAGIC);
        out.write_u32::<LittleEndian>(VERSION).expect("vec write");
        out.write_u32::<LittleEndian>(self.n as u32).expect("vec write");
        out.write_u32::<LittleEndian>(WINDOW_LEN as u32).expect("vec write");
        out.write_u64::<LittleEndian>(self.samples.len() as u64).expect("vec write");
        for s in &self.samples {
            out.write_u32::<LittleEndian>(s.label as u32).expect("vec write");
            out.write_u32::<LittleEndian>(s.episode as u32).expect("vec write");
            out.push(s.split.code());
            let bits = s.window.mask.iter().enumerate().fold(0u32, |b, (i, &m)| b | ((m as u32) << i));
            out.write_u32::<LittleEndian>(bits).expect("vec write");
            for &v in &s.window.features {
                out.write_f64::<LittleEndian>(v).expect("vec write");
            }
        }
        out
    }

    pub fn hash_hex(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn save(&self, dir: &Path) -> Result<(), PredictorError> {
        std::fs::create_dir_all(dir).map_err(|e| PredictorError::io(dir, e))?;
        let bytes = self.to_bytes();
        let bin = dir.join(DATASET_FILE);
        std::fs::write(&bin, &bytes).map_err(|e| PredictorError::io(&bin, e))?;
        let manifest = DatasetManifest {
            layout: self.layout.clone(),
            n: self.n,
            n_teams: self.n_teams,
            stride: self.stride,
            seed: self.seed,
            samples: self.samples.len(),
            counts: self.counts(),
            episodes: self.episodes.clone(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        };
        let path = dir.join(DATASET_MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).expect("serializable");
        std::fs::write(&path, text + "\n").map_err(|e| PredictorError::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self, PredictorError> {
        let path = dir.join(DATASET_MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| PredictorError::io(&path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| PredictorError::format(&path, e))?;
        let bin = dir.join(DATASET_FILE);
        let bytes = std::fs::read(&bin).map_err(|e| PredictorError::io(&bin, e))?;
        if hex::encode(Sha256::digest(&bytes)) != m.sha256 {
            return Err(PredictorError::format(&bin, "checksum does not match the manifest"));
        }
        let samples = parse_samples(&bytes, m.n).map_err(|e| PredictorError::format(&bin, e))?;
        if samples.len() != m.samples || samples.iter().any(|s| s.label >= m.n_teams || s.episode >= m.episodes.len()) {
            return Err(PredictorError::format(&bin, "records disagree with the manifest"));
        }
        Ok(PredictorDataset {
            layout: m.layout,
            n: m.n,
            n_teams: m.n_teams,
            stride: m.stride,
            seed: m.seed,
            episodes: m.episodes,
            samples,
        })
    }
}

fn parse_samples(bytes: &[u8], n: usize) -> Result<Vec<Sample>, String> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| e.to_string())?;
    if &magic != MAGIC {
        return Err("bad magic".into());
    }
    let io = |e: std::io::Error| e.to_string();
    let version = r.read_u32::<LittleEndian>().map_err(io)?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let file_n = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let window = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    if file_n != n || window != WINDOW_LEN {
        return Err(format!("file has n={file_n}, window={window}"));
    }
    let count = r.read_u64::<LittleEndian>().map_err(io)? as usize;
    let w = step_width(n);
    let mut samples = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let label = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let episode = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let split = Split::from_code(r.read_u8().map_err(io)?).ok_or("bad split code")?;
        let bits = r.read_u32::<LittleEndian>().map_err(io)?;
        let mut mask = [false; WINDOW_LEN];
        for (i, m) in mask.iter_mut().enumerate() {
            *m = bits >> i & 1 == 1;
        }
        let mut features = vec![0.0; WINDOW_LEN * w];
        r.read_f64_into::<LittleEndian>(&mut features).map_err(io)?;
        samples.push(Sample {
            window: TrajectoryWindow { n, features, mask },
            label,
            episode,
            split,
        });
    }
    if (r.position() as usize) != bytes.len() {
        return Err("trailing bytes".into());
    }
    Ok(samples)
}
