use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::json;
use teamcook::env::{replay, shipped_layout, ReplayLog};
use teamcook::eval::{
    k_sensitivity_sweep, reward_hacking_baseline, run_eval, Controller, EvalSpec, KSweepConfig, RewardHackingConfig,
    ScoreTable,
};
use teamcook::predictor::{generate_predictor_dataset, train_predictor, PredictorDataset, TrajectoryPredictor};
use teamcook::steering::{
    distill_student, export_distill_dataset, save_teacher, train_teacher, DistillDataset, SteeringContext,
};
use teamcook::trainer::{save_chunk, score_team_pool, PolicyNet, PoolTrainer, TeamPool, POOL_MANIFEST};
use teamcook_server::{CheckpointStore, SlotBinding};

use crate::error::{require, CliError};
use crate::run::*;

#[derive(serde::Serialize, serde::Deserialize)]
struct Progress {
    next_chunk: usize,
}

fn load_pool(run: &Run) -> Result<TeamPool, CliError> {
    let dir = run.path(POOL_DIR);
    require(&dir.join(POOL_MANIFEST))?;
    Ok(TeamPool::load(&dir)?)
}

fn load_predictor(run: &Run) -> Result<TrajectoryPredictor, CliError> {
    Ok(TrajectoryPredictor::load(require(&run.path(PREDICTOR_FILE))?)?.0)
}

pub fn train_pool(mut run: Run, resume: bool) -> Result<(), CliError> {
    let pool_dir = run.path(POOL_DIR);
    let progress = pool_dir.join(PROGRESS_FILE);
    let mut trainer = if resume {
        let text = std::fs::read_to_string(require(&progress)?).map_err(|e| CliError::io(&progress, e))?;
        let p: Progress = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", progress.display())))?;
        PoolTrainer::resume(run.cfg.pool.clone(), load_pool(&run)?, p.next_chunk)?
    } else {
        PoolTrainer::new(run.cfg.pool.clone())?
    };
    let out = run.cfg.out.clone();
    let mut iter_lines = Vec::new();
    let mut chunk_files = Vec::new();
    trainer.run(&mut |m| iter_lines.push(serde_json::to_value(m).expect("metrics serialize")), &mut |report, pool| {
        chunk_files.push(save_chunk(&out, report, pool)?);
        pool.save(&pool_dir)?;
        let p = serde_json::to_string(&Progress { next_chunk: report.chunk + 1 }).expect("serializes");
        std::fs::write(&progress, p).map_err(|e| teamcook::trainer::TrainError::Io { path: progress.clone(), source: e })?;
        Ok(())
    })?;
    for line in &iter_lines {
        run.emit("iteration", line);
    }
    run.output(POOL_DIR);
    for f in chunk_files {
        run.output(f);
    }
    let pool = trainer.into_pool();
    run.finish(json!({ "teams": pool.len(), "hashes": pool.hashes() }))
}

pub fn score_pool(mut run: Run) -> Result<(), CliError> {
    let mut pool = load_pool(&run)?;
    let scores = score_team_pool(&pool, run.cfg.score.episodes, run.cfg.seed)?;
    run.emit("scores", &scores);
    pool.scores = Some(scores.clone());
    pool.save(&run.path(POOL_DIR))?;
    run.output(POOL_DIR);
    run.finish(json!({ "raw_mean": scores.raw_mean, "normalized": scores.normalized }))
}

pub fn gen_predictor_data(mut run: Run) -> Result<(), CliError> {
    let pool = load_pool(&run)?;
    let ds = generate_predictor_dataset(&pool, run.cfg.data.episodes_per_team, run.cfg.seed)?;
    ds.save(&run.path(DATA_DIR))?;
    run.output(DATA_DIR);
    run.finish(json!({ "samples": ds.samples.len(), "sha256": ds.hash_hex(), "counts": ds.counts() }))
}

pub fn train_predictor_cmd(mut run: Run) -> Result<(), CliError> {
    require(&run.path(DATA_DIR).join(teamcook::predictor::DATASET_MANIFEST))?;
    let ds = PredictorDataset::load(&run.path(DATA_DIR))?;
    let mut cfg = run.cfg.predictor;
    cfg.seed = run.cfg.seed;
    let mut epochs = Vec::new();
    let trained = train_predictor(&ds, &cfg, &mut |e| epochs.push(*e))?;
    for e in &epochs {
        run.emit("epoch", e);
    }
    let summary = json!({
        "best_epoch": trained.best_epoch,
        "best_val_loss": trained.best_val_loss,
        "test_loss": trained.test_loss,
        "test_accuracy": trained.test_accuracy,
        "dataset_sha256": ds.hash_hex(),
    });
    trained.model.save(&run.path(PREDICTOR_FILE), summary.clone())?;
    run.output(PREDICTOR_FILE);
    run.finish(summary)
}

pub fn train_teacher_cmd(mut run: Run, agent: Option<usize>) -> Result<(), CliError> {
    let pool = load_pool(&run)?;
    let predictor = load_predictor(&run)?;
    let ctx = SteeringContext::new(&pool, &predictor)?;
    let agents: Vec<usize> = match agent {
        Some(a) => vec![a],
        None => (0..pool.n).collect(),
    };
    let mut cfg = run.cfg.teacher;
    for &i in &agents {
        cfg.seed = teamcook::trainer::mix_seed(run.cfg.seed, i as u64);
        let mut lines = Vec::new();
        let teacher = train_teacher(ctx, i, cfg, &mut |m| lines.push(serde_json::to_value(m).expect("serializes")))?;
        for l in &lines {
            run.emit("teacher_iteration", l);
        }
        let path = run.path(teacher_file(i));
        std::fs::create_dir_all(run.path(TEACHER_DIR)).map_err(|e| CliError::io(&run.path(TEACHER_DIR), e))?;
        save_teacher(&path, &teacher, i, &ctx)?;
        run.output(teacher_file(i));
    }
    run.finish(json!({ "agents": agents }))
}

pub fn distill(mut run: Run) -> Result<(), CliError> {
    let pool = load_pool(&run)?;
    let predictor = load_predictor(&run)?;
    let ctx = SteeringContext::new(&pool, &predictor)?;
    let teachers = (0..pool.n)
        .map(|i| Ok(PolicyNet::load(require(&run.path(teacher_file(i)))?)?.0))
        .collect::<Result<Vec<_>, CliError>>()?;
    let ds = export_distill_dataset(&ctx, &teachers, run.cfg.distill.episodes_per_teacher, run.cfg.seed)?;
    ds.save(&run.path(DISTILL_DIR))?;
    let reloaded = DistillDataset::load(&run.path(DISTILL_DIR))?;
    let mut cfg = run.cfg.distill.train;
    cfg.seed = run.cfg.seed;
    let report = distill_student(&reloaded, &cfg)?;
    for (epoch, loss) in report.epoch_losses.iter().enumerate() {
        run.emit("distill_epoch", &json!({ "epoch": epoch, "loss": loss }));
    }
    let summary = json!({
        "records": reloaded.records.len(),
        "dataset_sha256": reloaded.hash_hex(),
        "held_out_agreement": report.held_out_agreement,
    });
    report.student.save(&run.path(STUDENT_FILE), json!({ "kind": "student", "distill": summary }))?;
    run.output(DISTILL_DIR);
    run.output(STUDENT_FILE);
    run.finish(summary)
}

/// Partner controllers for the non-ego slots. `pool:<m>` needs the pool.
fn partner_controllers(run: &Run, specs: &[String], partner_slots: &[usize]) -> Result<Vec<Controller>, CliError> {
    let layout = shipped_layout(&run.cfg.layout).ok_or_else(|| CliError::Config(format!("unknown layout {}", run.cfg.layout)))?;
    let store = CheckpointStore::new(&run.cfg.out);
    let mut pool: Option<TeamPool> = None;
    specs
        .iter()
        .zip(partner_slots)
        .map(|(spec, &slot)| {
            if let Some(m) = spec.strip_prefix("pool:") {
                let m: usize = m.parse().map_err(|_| CliError::Config(format!("bad partner {spec:?}")))?;
                if pool.is_none() {
                    pool = Some(load_pool(run)?);
                }
                let team = pool
                    .as_ref()
                    .expect("loaded above")
                    .teams
                    .get(m)
                    .ok_or_else(|| CliError::Config(format!("no pool team {m}")))?;
                return Ok(Controller::Policy {
                    label: format!("pool/team{m}/agent{slot}"),
                    net: Arc::new(team.actors[slot].clone()),
                });
            }
            match store.binding(spec, &layout, run.cfg.n)? {
                SlotBinding::Machine(c) => Ok(c),
                SlotBinding::Human => Err(CliError::Config("human partners need the session server".into())),
            }
        })
        .collect()
}

pub fn eval(mut run: Run) -> Result<(), CliError> {
    let e = run.cfg.eval.clone();
    let layout = shipped_layout(&run.cfg.layout).ok_or_else(|| CliError::Config(format!("unknown layout {}", run.cfg.layout)))?;
    let ego = match CheckpointStore::new(&run.cfg.out).binding(&e.ego, &layout, run.cfg.n)? {
        SlotBinding::Machine(c) => c,
        SlotBinding::Human => return Err(CliError::Config("the ego must be a machine controller".into())),
    };
    let partner_slots: Vec<usize> = (0..run.cfg.n).filter(|s| !e.ego_slots.contains(s)).collect();
    let rosters: Vec<(String, Vec<String>)> = if e.partners.is_empty() {
        let teams = load_pool(&run)?.len();
        (0..teams)
            .map(|m| (format!("{}+team{m}", e.method), vec![format!("pool:{m}"); partner_slots.len()]))
            .collect()
    } else {
        vec![(e.method.clone(), e.partners.clone())]
    };
    let out = run.path(EVAL_DIR);
    let mut table = ScoreTable::default();
    for (method, partners) in rosters {
        let spec = EvalSpec {
            layout: run.cfg.layout.clone(),
            n: run.cfg.n,
            method,
            ego: ego.clone(),
            ego_slots: e.ego_slots.clone(),
            partners: partner_controllers(&run, &partners, &partner_slots)?,
            seeds: e.seeds.clone(),
            episodes_per_seed: e.episodes,
        };
        let result = run_eval(&spec, Some(&out))?;
        for ep in &result.episodes {
            run.emit("episode", ep);
        }
        run.emit("row", &result.row);
        table.push(result.row);
    }
    let table = table.finalize();
    run.output(EVAL_DIR);
    run.finish(json!({ "rows": table.rows.iter().map(|r| json!({ "method": r.method, "score": r.cell.to_string() })).collect::<Vec<_>>() }))
}

pub fn sweep_k(mut run: Run) -> Result<(), CliError> {
    let train = run.cfg.pool.clone();
    let cfg = KSweepConfig {
        ks: run.cfg.sweep.ks.clone(),
        seeds: run.cfg.sweep.seeds.clone(),
        train,
        eval_episodes: run.cfg.sweep.eval_episodes,
    };
    let mut lines = Vec::new();
    let report = k_sensitivity_sweep(&cfg, &mut |k, m| {
        let mut v = serde_json::to_value(m).expect("serializes");
        v["k"] = k.into();
        lines.push(v);
    })?;
    for l in &lines {
        run.emit("iteration", l);
    }
    let table = report.table.finalize();
    let dir = run.path(SWEEP_DIR);
    write_table(&dir, &table)?;
    run.output(SWEEP_DIR);
    run.finish(json!({ "rows": table.rows.iter().map(|r| json!({ "method": r.method, "score": r.cell.to_string() })).collect::<Vec<_>>() }))
}

pub fn baseline_hack(mut run: Run) -> Result<(), CliError> {
    let train = run.cfg.pool.clone();
    let cfg = RewardHackingConfig {
        train,
        bonus: run.cfg.baseline.bonus,
        eval_seeds: run.cfg.baseline.eval_seeds.clone(),
        eval_episodes: run.cfg.baseline.eval_episodes,
    };
    let dir = run.path(BASELINE_DIR);
    let mut lines = Vec::new();
    let report = reward_hacking_baseline(&cfg, &mut |m| lines.push(serde_json::to_value(m).expect("serializes")), Some(&dir))?;
    for l in &lines {
        run.emit("iteration", l);
    }
    let ckpt = dir.join("team.ckpt");
    teamcook::nn::write_checkpoint(&ckpt, &report.team.bundle(), &json!({ "kind": "team", "method": "reward-hacking" }))?;
    run.output(BASELINE_DIR);
    run.finish(json!({ "score": report.row.cell.to_string(), "handoffs": report.handoffs, "meta": report.row.meta }))
}

pub fn replay_cmd(path: &Path) -> Result<serde_json::Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let log = ReplayLog::from_jsonl(&text)?;
    let (score, _) = replay(&log)?;
    Ok(json!({
        "score": score,
        "stored_score": log.final_score,
        "steps": log.steps.len(),
        "truncated": log.truncated,
        "roster": log.roster,
    }))
}

fn write_table(dir: &Path, table: &ScoreTable) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let jsonl = dir.join(teamcook::eval::SCORES_FILE);
    std::fs::write(&jsonl, table.to_jsonl()).map_err(|e| CliError::io(&jsonl, e))?;
    let md = dir.join(TABLE_FILE);
    std::fs::write(&md, table.to_markdown()).map_err(|e| CliError::io(&md, e))?;
    Ok(md)
}

/// Merge every score file under `dir` into `<dir>/table.md` (or `to`).
pub fn export_table(dir: &Path, to: Option<&Path>) -> Result<serde_json::Value, CliError> {
    if !dir.is_dir() {
        return Err(CliError::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "run directory not found")));
    }
    let table = ScoreTable::collect(dir)?;
    let path = to.map_or_else(|| dir.join(TABLE_FILE), Path::to_path_buf);
    std::fs::write(&path, table.to_markdown()).map_err(|e| CliError::io(&path, e))?;
    Ok(json!({ "table": path, "rows": table.rows.len() }))
}
