use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{observation_width, Action, NUM_ACTIONS};
use crate::nn::{rows_to_matrix, Adam, Grads, Tape};
use crate::par;
use crate::trainer::{argmax, mix_seed, PolicyNet};

use super::teacher::{steered_episode, PartnerSampler, SteeringContext};
use super::SteeringError;

/// One ego-centric teacher sample. `teacher` is metadata and never a student input.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillRecord {
    pub obs: Vec<f64>,
    pub embedding: Vec<f64>,
    pub action: Action,
    pub teacher: usize,
    pub episode: usize,
}

impl DistillRecord {
    pub fn input(&self) -> Vec<f64> {
        let mut x = self.obs.clone();
        x.extend_from_slice(&self.embedding);
        x
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistillEpisode {
    pub teacher: usize,
    pub partner_team: usize,
    pub seed: u64,
    pub held_out: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillDataset {
    pub layout: String,
    pub n: usize,
    pub obs_width: usize,
    pub embedding_width: usize,
    pub seed: u64,
    pub episodes: Vec<DistillEpisode>,
    pub records: Vec<DistillRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DistillManifest {
    layout: String,
    n: usize,
    obs_width: usize,
    embedding_width: usize,
    seed: u64,
    records: usize,
    per_teacher: Vec<usize>,
    held_out_records: usize,
    episodes: Vec<DistillEpisode>,
    sha256: String,
}

const MAGIC: &[u8; 4] = b"TCBC";
const VERSION: u32 = 1;
pub const DISTILL_FILE: &str = "distill.bin";
pub const DISTILL_MANIFEST: &str = "manifest.json";

/// Roll out each teacher at its own index with uniformly drawn partner teams
/// and keep only the teacher's `(o, c, a)`. The last tenth of each teacher's
/// episodes (at least one) is held out.
pub fn export_distill_dataset(
    ctx: &SteeringContext,
    teachers: &[PolicyNet],
    episodes_per_teacher: usize,
    seed: u64,
) -> Result<DistillDataset, SteeringError> {
    let n = ctx.pool.n;
    if teachers.len() < n {
        return Err(SteeringError::MissingTeacher(teachers.len()));
    }
    if episodes_per_teacher < 2 {
        return Err(SteeringError::Config("need at least 2 episodes per teacher".into()));
    }
    let held = ((episodes_per_teacher as f64 * 0.1).round() as usize).max(1);
    let mut episodes = Vec::new();
    for i in 0..n {
        let mut sampler = PartnerSampler::new(ctx.pool.len(), mix_seed(seed, 0xD157 + i as u64));
        let mut seeds = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xD1570000 + i as u64));
        for e in 0..episodes_per_teacher {
            episodes.push(DistillEpisode {
                teacher: i,
                partner_team: sampler.sample(),
                seed: seeds.next_u64(),
                held_out: e >= episodes_per_teacher - held,
            });
        }
    }
    let played = par::map_slice(&episodes, |ep| {
        steered_episode(ctx, &teachers[ep.teacher], ep.teacher, ep.partner_team, ep.seed)
    });
    let obs_width = observation_width(&*ctx.layout()?, n);
    let mut records = Vec::new();
    for (idx, ep) in played.into_iter().enumerate() {
        let ep = ep?;
        for (x, &a) in ep.actor_in.iter().zip(&ep.actions) {
            records.push(DistillRecord {
                obs: x[..obs_width].to_vec(),
                embedding: x[obs_width..].to_vec(),
                action: a,
                teacher: ep.agent,
                episode: idx,
            });
        }
    }
    Ok(DistillDataset {
        layout: ctx.pool.layout.clone(),
        n,
        obs_width,
        embedding_width: ctx.predictor.embedding_width(),
        seed,
        episodes,
        records,
    })
}

impl DistillDataset {
    pub fn input_width(&self) -> usize {
        self.obs_width + self.embedding_width
    }

    pub fn split(&self) -> (Vec<&DistillRecord>, Vec<&DistillRecord>) {
        self.records.iter().partition(|r| !self.episodes[r.episode].held_out)
    }

    pub fn per_teacher(&self) -> Vec<usize> {
        let mut c = vec![0; self.n];
        for r in &self.records {
            c[r.teacher] += 1;
        }
        c
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for v in [VERSION, self.obs_width as u32, self.embedding_width as u32] {
            out.write_u32::<LittleEndian>(v).expect("vec write");
        }
        out.write_u64::<LittleEndian>(self.records.len() as u64).expect("vec write");
        for r in &self.records {
            out.write_u32::<LittleEndian>(r.teacher as u32).expect("vec write");
            out.write_u32::<LittleEndian>(r.episode as u32).expect("vec write");
            out.push(r.action.index() as u8);
            for &v in r.obs.iter().chain(&r.embedding) {
                out.write_f64::<LittleEndian>(v).expect("vec write");
            }
        }
        out
    }

    pub fn hash_hex(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn save(&self, dir: &Path) -> Result<(), SteeringError> {
        std::fs::create_dir_all(dir).map_err(|e| SteeringError::io(dir, e))?;
        let bytes = self.to_bytes();
        let bin = dir.join(DISTILL_FILE);
        std::fs::write(&bin, &bytes).map_err(|e| SteeringError::io(&bin, e))?;
        let manifest = DistillManifest {
            layout: self.layout.clone(),
            n: self.n,
            obs_width: self.obs_width,
            embedding_width: self.embedding_width,
            seed: self.seed,
            records: self.records.len(),
            per_teacher: self.per_teacher(),
            held_out_records: self.split().1.len(),
            episodes: self.episodes.clone(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        };
        let path = dir.join(DISTILL_MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).expect("serializable");
        std::fs::write(&path, text + "\n").map_err(|e| SteeringError::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self, SteeringError> {
        let path = dir.join(DISTILL_MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| SteeringError::io(&path, e))?;
        let m: DistillManifest = serde_json::from_str(&text).map_err(|e| SteeringError::format(&path, e))?;
        let bin = dir.join(DISTILL_FILE);
        let bytes = std::fs::read(&bin).map_err(|e| SteeringError::io(&bin, e))?;
        if hex::encode(Sha256::digest(&bytes)) != m.sha256 {
            return Err(SteeringError::format(&bin, "checksum does not match the manifest"));
        }
        let records = parse_records(&bytes, m.obs_width, m.embedding_width).map_err(|e| SteeringError::format(&bin, e))?;
        if records.len() != m.records || records.iter().any(|r| r.episode >= m.episodes.len() || r.teacher >= m.n) {
            return Err(SteeringError::format(&bin, "records disagree with the manifest"));
        }
        Ok(DistillDataset {
            layout: m.layout,
            n: m.n,
            obs_width: m.obs_width,
            embedding_width: m.embedding_width,
            seed: m.seed,
            episodes: m.episodes,
            records,
        })
    }
}

fn parse_records(bytes: &[u8], obs_w: usize, emb_w: usize) -> Result<Vec<DistillRecord>, String> {
    let io = |e: std::io::Error| e.to_string();
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err("bad magic".into());
    }
    let version = r.read_u32::<LittleEndian>().map_err(io)?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let (fo, fe) = (r.read_u32::<LittleEndian>().map_err(io)?, r.read_u32::<LittleEndian>().map_err(io)?);
    if (fo as usize, fe as usize) != (obs_w, emb_w) {
        return Err(format!("file widths {fo}+{fe} differ from the manifest"));
    }
    let count = r.read_u64::<LittleEndian>().map_err(io)? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let teacher = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let episode = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let action = Action::from_index(r.read_u8().map_err(io)? as usize).ok_or("bad action code")?;
        let mut obs = vec![0.0; obs_w];
        r.read_f64_into::<LittleEndian>(&mut obs).map_err(io)?;
        let mut embedding = vec![0.0; emb_w];
        r.read_f64_into::<LittleEndian>(&mut embedding).map_err(io)?;
        out.push(DistillRecord {
            obs,
            embedding,
            action,
            teacher,
            episode,
        });
    }
    if r.position() as usize != bytes.len() {
        return Err("trailing bytes".into());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            epochs: 20,
            lr: 1e-3,
            batch_size: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DistillReport {
    pub student: PolicyNet,
    /// Fraction of held-out records where the student's argmax equals the teacher action.
    pub held_out_agreement: f64,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mean `-log pi(a | o, c)` and its gradients.
pub fn bc_loss(student: &PolicyNet, x: ndarray::Array2<f64>, actions: &[usize]) -> (f64, Grads) {
    let mut t = Tape::new(&student.params);
    let xv = t.constant(x);
    let logits = student.forward(&mut t, xv);
    let logp = t.log_softmax(logits);
    let picked = t.pick(logp, actions);
    let mean = t.mean(picked);
    let loss = t.scale(mean, -1.0);
    (t.scalar(loss), t.backward(loss))
}

pub fn agreement(student: &PolicyNet, records: &[&DistillRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let x = rows_to_matrix(&records.iter().map(|r| r.input()).collect::<Vec<_>>());
    let logits = student.logits(x);
    let hits = records
        .iter()
        .zip(logits.rows())
        .filter(|(r, l)| argmax(l.as_slice().expect("contiguous")) == r.action.index())
        .count();
    hits as f64 / records.len() as f64
}

/// Behavior cloning of one shared student on the pooled teacher samples.
pub fn distill_student(dataset: &DistillDataset, cfg: &DistillConfig) -> Result<DistillReport, SteeringError> {
    let (train, held) = dataset.split();
    if train.is_empty() || held.is_empty() {
        return Err(SteeringError::EmptyDataset);
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(SteeringError::Config("batch_size and lr must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut student = PolicyNet::new(dataset.input_width(), &mut rng);
    let mut opt = Adam::new(&student.params, cfg.lr);
    let x = rows_to_matrix(&train.iter().map(|r| r.input()).collect::<Vec<_>>());
    let y: Vec<usize> = train.iter().map(|r| r.action.index()).collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let labels: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let (loss, grads) = bc_loss(&student, x.select(Axis(0), chunk), &labels);
            if !loss.is_finite() || !grads.all_finite() {
                return Err(SteeringError::NonFinite);
            }
            opt.step(&mut student.params, &grads);
            total += loss * chunk.len() as f64;
        }
        epoch_losses.push(total / train.len() as f64);
    }
    Ok(DistillReport {
        held_out_agreement: agreement(&student, &held),
        student,
        epoch_losses,
    })
}

/// Empirical action frequencies, used to check what a student should converge to.
pub fn action_histogram(records: &[&DistillRecord]) -> [f64; NUM_ACTIONS] {
    let mut h = [0.0; NUM_ACTIONS];
    for r in records {
        h[r.action.index()] += 1.0;
    }
    let total = records.len().max(1) as f64;
    h.map(|c| c / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::steering::teacher::tests::fixture;

    fn synthetic(actions: &[Action], held_out_every: usize) -> DistillDataset {
        let records: Vec<DistillRecord> = actions
            .iter()
            .enumerate()
            .map(|(i, &a)| DistillRecord {
                obs: vec![1.0, 0.0, 0.5],
                embedding: vec![0.25],
                action: a,
                teacher: i % 2,
                episode: usize::from(i % held_out_every == 0),
            })
            .collect();
        DistillDataset {
            layout: "fc-2".into(),
            n: 2,
            obs_width: 3,
            embedding_width: 1,
            seed: 0,
            episodes: vec![
                DistillEpisode {
                    teacher: 0,
                    partner_team: 0,
                    seed: 0,
                    held_out: false,
                },
                DistillEpisode {
                    teacher: 1,
                    partner_team: 0,
                    seed: 1,
                    held_out: true,
                },
            ],
            records,
        }
    }

    #[test]
    fn single_mode_is_fitted() {
        let ds = synthetic(&[Action::East; 50], 5);
        let cfg = DistillConfig {
            epochs: 200,
            batch_size: 64,
            ..Default::default()
        };
        let report = distill_student(&ds, &cfg).unwrap();
        assert_eq!(report.held_out_agreement, 1.0);
    }

    #[test]
    fn full_batch_loss_does_not_increase() {
        let acts: Vec<Action> = (0..40).map(|i| if i % 4 == 0 { Action::West } else { Action::North }).collect();
        let ds = synthetic(&acts, 7);
        let cfg = DistillConfig {
            epochs: 50,
            lr: 1e-3,
            batch_size: 1000,
            seed: 1,
        };
        let losses = distill_student(&ds, &cfg).unwrap().epoch_losses;
        assert!(losses.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{losses:?}");
    }

    #[test]
    fn teacher_index_is_not_an_input() {
        let acts: Vec<Action> = (0..60).map(|i| Action::ALL[i % 3]).collect();
        let ds = synthetic(&acts, 6);
        let mut permuted = ds.clone();
        permuted.records.iter_mut().for_each(|r| r.teacher = 1 - r.teacher);
        let cfg = DistillConfig {
            epochs: 3,
            ..Default::default()
        };
        let a = distill_student(&ds, &cfg).unwrap().student;
        let b = distill_student(&permuted, &cfg).unwrap().student;
        assert_eq!(a.params.hash_hex(), b.params.hash_hex());
    }

    #[test]
    fn export_counts_and_round_trip() {
        let (pool, predictor) = fixture(5);
        let ctx = SteeringContext::new(&pool, &predictor).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let teachers: Vec<PolicyNet> = (0..2).map(|_| PolicyNet::new(ctx.actor_width().unwrap(), &mut rng)).collect();
        let ds = export_distill_dataset(&ctx, &teachers, 2, 7).unwrap();
        assert!(ds.records.len() <= 2 * 2 * 400);
        assert_eq!(ds.per_teacher(), vec![800, 800]);
        assert_eq!(ds.hash_hex(), export_distill_dataset(&ctx, &teachers, 2, 7).unwrap().hash_hex());
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        assert_eq!(DistillDataset::load(dir.path()).unwrap(), ds);
        assert!(matches!(
            export_distill_dataset(&ctx, &teachers[..1], 2, 7),
            Err(SteeringError::MissingTeacher(1))
        ));
    }
}
