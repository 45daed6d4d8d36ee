//! Synchronous-stepping session: a single-writer state machine. The world
//! advances exactly once per complete set of slot actions.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use teamcook::env::{reset, shipped_layout, step, Action, ReplayLog, WorldState};
use teamcook::eval::{Controller, MachineAgents};

use crate::wire::{ErrorCode, ServerMessage};
use crate::SessionError;

pub type ClientId = u64;

#[derive(Debug, Clone)]
pub enum SlotBinding {
    Human,
    Machine(Controller),
}

impl SlotBinding {
    pub fn label(&self) -> String {
        match self {
            SlotBinding::Human => "human".into(),
            SlotBinding::Machine(c) => c.label(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Lobby,
    Running,
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipient {
    All,
    Client(ClientId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outbound {
    pub to: Recipient,
    pub msg: ServerMessage,
}

/// A rejected client message; sent back to that client only.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{code:?}: {message}")]
pub struct Rejection {
    pub code: ErrorCode,
    pub message: String,
    pub current_step: Option<u32>,
}

impl Rejection {
    fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Rejection {
            code,
            message: message.into(),
            current_step: None,
        }
    }

    pub fn into_message(self) -> ServerMessage {
        ServerMessage::Error {
            code: self.code,
            message: self.message,
            current_step: self.current_step,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub layout: String,
    pub n: usize,
    pub seed: u64,
    pub bindings: Vec<SlotBinding>,
    /// Directory for `<session>.jsonl`; no persistence when absent.
    pub replay_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub struct Session {
    id: String,
    bindings: Vec<SlotBinding>,
    state: WorldState,
    pending: Vec<Option<Action>>,
    /// The client holding each human slot.
    seats: Vec<Option<ClientId>>,
    spectators: Vec<ClientId>,
    status: SessionStatus,
    machines: MachineAgents,
    log: ReplayLog,
    writer: Option<(PathBuf, BufWriter<File>)>,
    overwrites: u64,
}

impl Session {
    /// A session in the lobby; with no human slots it starts (and plays out) at once.
    pub fn create(id: impl Into<String>, cfg: SessionConfig) -> Result<Self, SessionError> {
        let id = id.into();
        let layout = shipped_layout(&cfg.layout).ok_or_else(|| SessionError::UnknownLayout(cfg.layout.clone()))?;
        if cfg.bindings.len() != cfg.n {
            return Err(SessionError::BindingCount {
                expected: cfg.n,
                found: cfg.bindings.len(),
            });
        }
        let state = reset(&layout, cfg.n, cfg.seed).map_err(|e| SessionError::Config(e.to_string()))?;
        let machines = MachineAgents::new(
            cfg.bindings
                .iter()
                .map(|b| match b {
                    SlotBinding::Human => None,
                    SlotBinding::Machine(c) => Some(c.clone()),
                })
                .collect(),
            cfg.seed,
        );
        machines.check(&layout)?;
        let log = ReplayLog::new(layout.name.clone(), cfg.seed, cfg.bindings.iter().map(SlotBinding::label).collect());
        let writer = match &cfg.replay_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| SessionError::io(dir, e))?;
                let path = dir.join(format!("{id}.jsonl"));
                let file = File::create(&path).map_err(|e| SessionError::io(&path, e))?;
                let mut w = BufWriter::new(file);
                writeln!(w, "{}", log.header_line())
                    .and_then(|_| w.flush())
                    .map_err(|e| SessionError::io(&path, e))?;
                Some((path, w))
            }
            None => None,
        };
        let mut session = Session {
            id,
            pending: vec![None; cfg.n],
            seats: vec![None; cfg.n],
            spectators: Vec::new(),
            status: SessionStatus::Lobby,
            bindings: cfg.bindings,
            state,
            machines,
            log,
            writer,
            overwrites: 0,
        };
        if session.human_slots().next().is_none() {
            session.start(&mut Vec::new()).map_err(|r| SessionError::Config(r.message))?;
        }
        Ok(session)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    /// Current step index (steps executed so far).
    pub fn step_index(&self) -> u32 {
        self.state.t
    }

    pub fn log(&self) -> &ReplayLog {
        &self.log
    }

    pub fn replay_path(&self) -> Option<&Path> {
        self.writer.as_ref().map(|(p, _)| p.as_path())
    }

    /// Duplicate submissions that replaced an earlier action for the same step.
    pub fn overwrites(&self) -> u64 {
        self.overwrites
    }

    pub fn pending_count(&self) -> usize {
        self.pending.iter().flatten().count()
    }

    /// Human slots without a buffered action for the current step.
    pub fn waiting_on(&self) -> Vec<usize> {
        self.human_slots().filter(|&s| self.pending[s].is_none()).collect()
    }

    fn human_slots(&self) -> impl Iterator<Item = usize> + '_ {
        self.bindings
            .iter()
            .enumerate()
            .filter(|(_, b)| matches!(b, SlotBinding::Human))
            .map(|(i, _)| i)
    }

    /// Take a free human slot (`Some`) or watch (`None`). Vacated slots of a
    /// running game can be reclaimed.
    pub fn join(&mut self, client: ClientId, slot: Option<usize>) -> Result<Vec<Outbound>, Rejection> {
        let mut out = Vec::new();
        let Some(slot) = slot else {
            self.spectators.push(client);
            out.push(Outbound {
                to: Recipient::Client(client),
                msg: self.snapshot(),
            });
            return Ok(out);
        };
        if self.status == SessionStatus::Finished {
            return Err(Rejection::new(ErrorCode::NotRunning, "session finished; join without a slot to watch"));
        }
        match self.bindings.get(slot) {
            None => return Err(Rejection::new(ErrorCode::NotHumanSlot, format!("no slot {slot}"))),
            Some(SlotBinding::Machine(_)) => {
                return Err(Rejection::new(ErrorCode::NotHumanSlot, format!("slot {slot} is a machine slot")))
            }
            Some(SlotBinding::Human) => {}
        }
        if self.seats.contains(&Some(client)) {
            return Err(Rejection::new(ErrorCode::SlotTaken, "client already holds a slot"));
        }
        if self.seats[slot].is_some() {
            return Err(Rejection::new(ErrorCode::SlotTaken, format!("slot {slot} is taken")));
        }
        self.seats[slot] = Some(client);
        if self.status == SessionStatus::Lobby && self.human_slots().all(|s| self.seats[s].is_some()) {
            self.start(&mut out)?;
        } else {
            out.push(Outbound {
                to: Recipient::Client(client),
                msg: self.snapshot(),
            });
        }
        Ok(out)
    }

    /// Free whatever `client` held. A running game waits until someone rejoins
    /// a vacated slot (or the step timeout, if any, fills it).
    pub fn leave(&mut self, client: ClientId) {
        self.spectators.retain(|&c| c != client);
        for seat in &mut self.seats {
            if *seat == Some(client) {
                *seat = None;
            }
        }
    }

    /// Buffer `action` for `slot` at step `step`. Steps once when the set completes.
    pub fn submit(&mut self, client: ClientId, step_index: u32, slot: usize, action: Action) -> Result<Vec<Outbound>, Rejection> {
        if self.status != SessionStatus::Running {
            return Err(Rejection::new(ErrorCode::NotRunning, format!("session is {:?}", self.status)));
        }
        if self.seats.get(slot).copied().flatten() != Some(client) {
            return Err(Rejection::new(ErrorCode::NotYourSlot, format!("slot {slot} is not held by this client")));
        }
        if step_index != self.state.t {
            return Err(Rejection {
                code: ErrorCode::StaleStep,
                message: format!("action for step {step_index}, current step is {}", self.state.t),
                current_step: Some(self.state.t),
            });
        }
        if self.pending[slot].replace(action).is_some() {
            self.overwrites += 1;
            tracing::info!(session = %self.id, slot, step = step_index, "duplicate action, last write wins");
        }
        let mut out = Vec::new();
        self.advance(&mut out)?;
        Ok(out)
    }

    /// Fill absent human actions with `stay` and step. Ignored unless the
    /// session is running at `step_index`.
    pub fn timeout(&mut self, step_index: u32) -> Result<Vec<Outbound>, Rejection> {
        let mut out = Vec::new();
        if self.status != SessionStatus::Running || step_index != self.state.t {
            return Ok(out);
        }
        for s in self.waiting_on() {
            self.pending[s] = Some(Action::Stay);
        }
        self.advance(&mut out)?;
        Ok(out)
    }

    /// Administrative stop: close the log as truncated at the current step.
    pub fn stop(&mut self) -> Result<Vec<Outbound>, Rejection> {
        let mut out = Vec::new();
        if self.status != SessionStatus::Finished {
            self.finish(&mut out)?;
        }
        Ok(out)
    }

    fn snapshot(&self) -> ServerMessage {
        ServerMessage::state(&self.state)
    }

    fn start(&mut self, out: &mut Vec<Outbound>) -> Result<(), Rejection> {
        self.status = SessionStatus::Running;
        out.push(Outbound {
            to: Recipient::All,
            msg: self.snapshot(),
        });
        self.fill_machines()?;
        self.advance(out)
    }

    fn fill_machines(&mut self) -> Result<(), Rejection> {
        let actions = self.machines.act(&self.state).map_err(internal)?;
        for (slot, a) in actions.into_iter().enumerate() {
            if a.is_some() {
                self.pending[slot] = a;
            }
        }
        Ok(())
    }

    /// Step while the buffer holds a complete action set.
    fn advance(&mut self, out: &mut Vec<Outbound>) -> Result<(), Rejection> {
        while self.status == SessionStatus::Running && self.pending.iter().all(Option::is_some) {
            let joint: Vec<Action> = self.pending.iter_mut().map(|a| a.take().expect("checked")).collect();
            let (next, events) = step(&self.state, &joint).map_err(internal)?;
            self.machines.observe(&self.state, &joint);
            let t = self.state.t;
            self.log.push(joint, events.clone());
            self.state = next;
            let line = self.log.step_line(t as usize);
            self.write_line(&line)?;
            out.push(Outbound {
                to: Recipient::All,
                msg: ServerMessage::StepResult { step: t, events },
            });
            if self.state.is_done() {
                return self.finish(out);
            }
            out.push(Outbound {
                to: Recipient::All,
                msg: self.snapshot(),
            });
            self.fill_machines()?;
        }
        Ok(())
    }

    fn finish(&mut self, out: &mut Vec<Outbound>) -> Result<(), Rejection> {
        self.status = SessionStatus::Finished;
        self.pending.iter_mut().for_each(|a| *a = None);
        self.log.close(self.state.score);
        if let Some(end) = self.log.end_line() {
            self.write_line(&end)?;
        }
        out.push(Outbound {
            to: Recipient::All,
            msg: ServerMessage::GameOver {
                score: self.state.score,
                replay_id: self.id.clone(),
                truncated: self.log.truncated,
            },
        });
        Ok(())
    }

    fn write_line(&mut self, line: &str) -> Result<(), Rejection> {
        if let Some((path, w)) = &mut self.writer {
            // Flushed per line so an interrupted session leaves a replayable prefix.
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|e| internal(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }

    /// Everyone who receives broadcasts.
    pub fn audience(&self) -> Vec<ClientId> {
        self.seats.iter().flatten().copied().chain(self.spectators.iter().copied()).collect()
    }
}

fn internal(e: impl std::fmt::Display) -> Rejection {
    Rejection::new(ErrorCode::Internal, e.to_string())
}
