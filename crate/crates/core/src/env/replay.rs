//! Replay logs: a line-delimited JSON record of one episode that can be
//! re-simulated to reproduce every reward event and the final score.
//!
//! ```text
//! {"type":"header","version":1,"layout":"pl-3","seed":7,"roster":["policy:a","human","scripted:cook"]}
//! {"type":"step","t":0,"actions":["north","stay","interact"],"events":{"interactions":[]}}
//! ...
//! {"type":"end","steps":400,"final_score":46,"truncated":false}
//! ```
//!
//! The `end` record is optional: a log cut short by a crash is a valid prefix.

use serde::{Deserialize, Serialize};

use super::{reset, shipped_layout, step, Action, RewardEvents, StepError, HORIZON};

pub const REPLAY_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayStep {
    pub actions: Vec<Action>,
    pub events: RewardEvents,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayLog {
    pub version: u32,
    pub layout: String,
    pub seed: u64,
    /// One controller label per agent slot, e.g. `policy:pool/team2`, `human`.
    pub roster: Vec<String>,
    pub steps: Vec<ReplayStep>,
    /// Present once the episode was closed.
    pub final_score: Option<u32>,
    /// Closed before the horizon (administrative stop).
    pub truncated: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Record {
    Header {
        version: u32,
        layout: String,
        seed: u64,
        roster: Vec<String>,
    },
    Step {
        t: u32,
        actions: Vec<Action>,
        events: RewardEvents,
    },
    End {
        steps: u32,
        final_score: u32,
        truncated: bool,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("unknown layout {0:?}")]
    UnknownLayout(String),
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("{0} actions exceed the horizon {HORIZON}")]
    TooLong(usize),
    #[error("step {step}: recorded events differ from re-simulation")]
    EventMismatch { step: usize },
    #[error("final score {recorded} recorded, {simulated} re-simulated")]
    ScoreMismatch { recorded: u32, simulated: u32 },
    #[error("step {step}: {source}")]
    Step { step: usize, source: StepError },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("unsupported replay version {0}")]
    Version(u32),
}

impl ReplayLog {
    pub fn new(layout: impl Into<String>, seed: u64, roster: Vec<String>) -> Self {
        ReplayLog {
            version: REPLAY_VERSION,
            layout: layout.into(),
            seed,
            roster,
            steps: Vec::new(),
            final_score: None,
            truncated: false,
        }
    }

    pub fn push(&mut self, actions: Vec<Action>, events: RewardEvents) {
        self.steps.push(ReplayStep { actions, events });
    }

    pub fn close(&mut self, final_score: u32) {
        self.truncated = self.steps.len() < HORIZON as usize;
        self.final_score = Some(final_score);
    }

    pub fn header_line(&self) -> String {
        serde_json::to_string(&Record::Header {
            version: self.version,
            layout: self.layout.clone(),
            seed: self.seed,
            roster: self.roster.clone(),
        })
        .expect("serializable")
    }

    pub fn step_line(&self, t: usize) -> String {
        let s = &self.steps[t];
        serde_json::to_string(&Record::Step {
            t: t as u32,
            actions: s.actions.clone(),
            events: s.events.clone(),
        })
        .expect("serializable")
    }

    pub fn end_line(&self) -> Option<String> {
        self.final_score.map(|final_score| {
            serde_json::to_string(&Record::End {
                steps: self.steps.len() as u32,
                final_score,
                truncated: self.truncated,
            })
            .expect("serializable")
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = self.header_line();
        out.push('\n');
        for t in 0..self.steps.len() {
            out.push_str(&self.step_line(t));
            out.push('\n');
        }
        if let Some(end) = self.end_line() {
            out.push_str(&end);
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, ReplayError> {
        let mut log: Option<ReplayLog> = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |reason: String| ReplayError::Parse { line: i + 1, reason };
            let record: Record = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
            match (record, log.as_mut()) {
                (
                    Record::Header {
                        version,
                        layout,
                        seed,
                        roster,
                    },
                    None,
                ) => {
                    if version != REPLAY_VERSION {
                        return Err(ReplayError::Version(version));
                    }
                    log = Some(ReplayLog::new(layout, seed, roster));
                }
                (Record::Header { .. }, Some(_)) => return Err(parse_err("second header".into())),
                (_, None) => return Err(parse_err("record before header".into())),
                (Record::Step { t, actions, events }, Some(log)) => {
                    if log.final_score.is_some() {
                        return Err(parse_err("step after end record".into()));
                    }
                    if t as usize != log.steps.len() {
                        return Err(parse_err(format!("expected step {}, found {t}", log.steps.len())));
                    }
                    log.push(actions, events);
                }
                (
                    Record::End {
                        steps,
                        final_score,
                        truncated,
                    },
                    Some(log),
                ) => {
                    if steps as usize != log.steps.len() {
                        return Err(parse_err(format!(
                            "end record claims {steps} steps, log has {}",
                            log.steps.len()
                        )));
                    }
                    log.final_score = Some(final_score);
                    log.truncated = truncated;
                }
            }
        }
        log.ok_or(ReplayError::Parse {
            line: 0,
            reason: "empty log".into(),
        })
    }

    /// Score implied by the recorded events.
    pub fn recorded_score(&self) -> u32 {
        self.steps.iter().map(|s| s.events.env_reward()).sum()
    }
}

/// Re-simulate a log from `(layout, seed, actions)` and check every step's
/// events and the final score against the record.
pub fn replay(log: &ReplayLog) -> Result<(u32, Vec<RewardEvents>), ReplayError> {
    let layout = shipped_layout(&log.layout).ok_or_else(|| ReplayError::UnknownLayout(log.layout.clone()))?;
    if log.steps.len() > HORIZON as usize {
        return Err(ReplayError::TooLong(log.steps.len()));
    }
    let mut state = reset(&layout, log.roster.len(), log.seed)
        .map_err(|e| ReplayError::LayoutMismatch(e.to_string()))?;
    let mut events = Vec::with_capacity(log.steps.len());
    for (t, recorded) in log.steps.iter().enumerate() {
        if recorded.actions.len() != state.n_agents() {
            return Err(ReplayError::LayoutMismatch(format!(
                "step {t} has {} actions for {} agents",
                recorded.actions.len(),
                state.n_agents()
            )));
        }
        let (next, ev) = step(&state, &recorded.actions).map_err(|source| ReplayError::Step { step: t, source })?;
        if ev != recorded.events {
            return Err(ReplayError::EventMismatch { step: t });
        }
        state = next;
        events.push(ev);
    }
    if let Some(recorded) = log.final_score {
        if recorded != state.score {
            return Err(ReplayError::ScoreMismatch {
                recorded,
                simulated: state.score,
            });
        }
    }
    Ok((state.score, events))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{reset, shipped_layout, step};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_log(layout: &str, n: usize, seed: u64, len: usize) -> ReplayLog {
        let l = shipped_layout(layout).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = reset(&l, n, seed).unwrap();
        let mut log = ReplayLog::new(layout, seed, (0..n).map(|i| format!("random:{i}")).collect());
        for _ in 0..len {
            let acts: Vec<Action> = (0..n).map(|_| Action::ALL[rng.random_range(0..6)]).collect();
            let (next, ev) = step(&s, &acts).unwrap();
            log.push(acts, ev);
            s = next;
        }
        log.close(s.score);
        log
    }

    #[test]
    fn replay_reproduces_score() {
        let log = random_log("cramped-2", 2, 3, 400);
        let (score, events) = replay(&log).unwrap();
        assert_eq!(Some(score), log.final_score);
        assert_eq!(events.len(), 400);
        assert!(!log.truncated);
    }

    #[test]
    fn mutated_action_is_flagged() {
        // Find a step whose action change alters the events.
        let log = random_log("cramped-2", 2, 11, 400);
        let mut flagged = false;
        for t in 0..log.steps.len() {
            let mut bad = log.clone();
            let a = &mut bad.steps[t].actions[0];
            *a = if *a == Action::Interact { Action::Stay } else { Action::Interact };
            if replay(&bad).is_err() {
                flagged = true;
                break;
            }
        }
        assert!(flagged);
    }

    #[test]
    fn empty_log_replays_to_zero() {
        let mut log = ReplayLog::new("fc-2", 0, vec!["a".into(), "b".into()]);
        assert_eq!(replay(&log).unwrap(), (0, vec![]));
        log.close(0);
        assert!(log.truncated);
        assert_eq!(replay(&log).unwrap().0, 0);
    }

    #[test]
    fn rejects_unknown_layout_and_long_logs() {
        let log = ReplayLog::new("nowhere", 0, vec!["a".into(), "b".into()]);
        assert!(matches!(replay(&log), Err(ReplayError::UnknownLayout(_))));
        let mut long = ReplayLog::new("fc-2", 0, vec!["a".into(), "b".into()]);
        for _ in 0..=HORIZON {
            long.push(vec![Action::Stay, Action::Stay], RewardEvents::default());
        }
        assert!(matches!(replay(&long), Err(ReplayError::TooLong(401))));
        let three = ReplayLog::new("fc-2", 0, vec!["a".into(), "b".into(), "c".into()]);
        assert!(matches!(replay(&three), Err(ReplayError::LayoutMismatch(_))));
    }

    #[test]
    fn prefix_without_end_record_parses() {
        let log = random_log("pl-2", 2, 5, 30);
        let text = log.to_jsonl();
        let prefix: String = text.lines().take(11).map(|l| format!("{l}\n")).collect();
        let parsed = ReplayLog::from_jsonl(&prefix).unwrap();
        assert_eq!(parsed.steps.len(), 10);
        assert_eq!(parsed.final_score, None);
        assert!(replay(&parsed).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn jsonl_round_trip_is_bit_exact(seed in 0u64..1000, len in 0usize..120, layout in 0usize..3) {
            let (name, n) = [("cramped-3", 3), ("fc-2", 2), ("aa-4", 4)][layout];
            let log = random_log(name, n, seed, len);
            let text = log.to_jsonl();
            let parsed = ReplayLog::from_jsonl(&text).unwrap();
            prop_assert_eq!(&parsed, &log);
            prop_assert_eq!(parsed.to_jsonl(), text);
        }
    }
}
