use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use teamcook::predictor::PredictorTrainConfig;
use teamcook::shaping::HandoffBonus;
use teamcook::steering::{DistillConfig, TeacherConfig};
use teamcook::trainer::PoolConfig;

use crate::error::CliError;

/// One run's configuration. Top-level `layout`, `n` and `seed` override the
/// same fields inside `pool`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub layout: String,
    pub n: usize,
    pub seed: u64,
    /// Run directory; every artifact lives below it.
    pub out: PathBuf,
    pub pool: PoolConfig,
    pub score: ScoreSection,
    pub data: DataSection,
    pub predictor: PredictorTrainConfig,
    pub teacher: TeacherConfig,
    pub distill: DistillSection,
    pub eval: EvalSection,
    pub sweep: SweepSection,
    pub baseline: BaselineSection,
    pub serve: ServeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            layout: "pl-3".into(),
            n: 3,
            seed: 0,
            out: PathBuf::from("runs/default"),
            pool: PoolConfig::default(),
            score: ScoreSection::default(),
            data: DataSection::default(),
            predictor: PredictorTrainConfig::default(),
            teacher: TeacherConfig::default(),
            distill: DistillSection::default(),
            eval: EvalSection::default(),
            sweep: SweepSection::default(),
            baseline: BaselineSection::default(),
            serve: ServeSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSection {
    pub episodes: usize,
}

impl Default for ScoreSection {
    fn default() -> Self {
        ScoreSection { episodes: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub episodes_per_team: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection { episodes_per_team: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillSection {
    pub episodes_per_teacher: usize,
    pub train: DistillConfig,
}

impl Default for DistillSection {
    fn default() -> Self {
        DistillSection {
            episodes_per_teacher: 20,
            train: DistillConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub method: String,
    /// Slot binding, with checkpoint paths relative to the run directory.
    pub ego: String,
    pub ego_slots: Vec<usize>,
    /// Partner bindings for the remaining slots; `pool:<m>` picks team `m`'s
    /// actor for that slot. Empty plays against every pool team in turn.
    pub partners: Vec<String>,
    pub seeds: Vec<u64>,
    pub episodes: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            method: "student".into(),
            ego: "conditioned:student.ckpt@predictor.ckpt".into(),
            ego_slots: vec![0],
            partners: Vec::new(),
            seeds: vec![0, 1, 2],
            episodes: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub ks: Vec<usize>,
    pub seeds: Vec<u64>,
    pub eval_episodes: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            ks: vec![1, 4, 7],
            seeds: vec![0, 1, 2],
            eval_episodes: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub bonus: HandoffBonus,
    pub eval_seeds: Vec<u64>,
    pub eval_episodes: usize,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection {
            bonus: HandoffBonus::default(),
            eval_seeds: (0..12).collect(),
            eval_episodes: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub port: u16,
    /// Defaults to the run directory.
    pub checkpoint_dir: Option<PathBuf>,
    /// Defaults to `<out>/sessions`.
    pub replay_dir: Option<PathBuf>,
    /// No timeout when absent.
    pub step_timeout_ms: Option<u64>,
}

impl Default for ServeSection {
    fn default() -> Self {
        ServeSection {
            port: 8080,
            checkpoint_dir: None,
            replay_dir: None,
            step_timeout_ms: None,
        }
    }
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub layout: Option<String>,
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Training budget of the subcommand, in environment steps.
    #[arg(long, global = true)]
    pub steps: Option<u64>,
    /// Episode count of the subcommand.
    #[arg(long, global = true)]
    pub episodes: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Config file (or defaults) with the common flags applied.
    pub fn resolve(flags: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match &flags.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &flags.layout {
            cfg.layout = v.clone();
        }
        if let Some(v) = flags.n {
            cfg.n = v;
        }
        if let Some(v) = flags.seed {
            cfg.seed = v;
        }
        if let Some(v) = &flags.out {
            cfg.out = v.clone();
        }
        cfg.pool.layout = cfg.layout.clone();
        cfg.pool.n = cfg.n;
        cfg.pool.seed = cfg.seed;
        Ok(cfg)
    }
}
