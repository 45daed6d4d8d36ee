//! Run-directory conventions: metrics streams and per-command manifests.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::CliError;

pub const POOL_DIR: &str = "pool";
pub const PROGRESS_FILE: &str = "progress.json";
pub const DATA_DIR: &str = "predictor_data";
pub const PREDICTOR_FILE: &str = "predictor.ckpt";
pub const TEACHER_DIR: &str = "teachers";
pub const DISTILL_DIR: &str = "distill_data";
pub const STUDENT_FILE: &str = "student.ckpt";
pub const EVAL_DIR: &str = "eval";
pub const SWEEP_DIR: &str = "sweep_k";
pub const BASELINE_DIR: &str = "baseline_hack";
pub const TABLE_FILE: &str = "table.md";

pub fn teacher_file(agent: usize) -> PathBuf {
    Path::new(TEACHER_DIR).join(format!("teacher{agent}.ckpt"))
}

/// One subcommand invocation: streams metrics to stdout and
/// `<out>/metrics/<command>.jsonl`, then writes `<out>/manifests/<command>.json`.
pub struct Run {
    pub cfg: RunConfig,
    command: &'static str,
    metrics: BufWriter<File>,
    outputs: Vec<PathBuf>,
}

impl Run {
    pub fn start(cfg: RunConfig, command: &'static str) -> Result<Self, CliError> {
        let dir = cfg.out.join("metrics");
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let path = dir.join(format!("{command}.jsonl"));
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(Run {
            cfg,
            command,
            metrics: BufWriter::new(file),
            outputs: Vec::new(),
        })
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.cfg.out.join(rel)
    }

    /// A metrics record, tagged with its kind.
    pub fn emit(&mut self, kind: &str, record: &impl Serialize) {
        let mut v = serde_json::to_value(record).expect("metrics serialize");
        if let serde_json::Value::Object(m) = &mut v {
            m.insert("record".into(), kind.into());
        }
        let line = v.to_string();
        println!("{line}");
        // Metrics are advisory; a full disk surfaces when the manifest is written.
        let _ = writeln!(self.metrics, "{line}");
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    pub fn finish(mut self, summary: serde_json::Value) -> Result<(), CliError> {
        self.metrics.flush().map_err(|e| CliError::io(&self.cfg.out, e))?;
        let dir = self.cfg.out.join("manifests");
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let manifest = json!({
            "command": self.command,
            "version": env!("TEAMCOOK_VERSION"),
            "config_hash": teamcook::trainer::config_hash(&self.cfg),
            "seed": self.cfg.seed,
            "args": std::env::args().collect::<Vec<_>>(),
            "config": self.cfg,
            "outputs": self.outputs,
            "summary": summary,
        });
        let path = dir.join(format!("{}.json", self.command));
        std::fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
            .map_err(|e| CliError::io(&path, e))?;
        println!("{}", json!({ "record": "done", "command": self.command, "manifest": path, "summary": summary }));
        Ok(())
    }
}
