//! Session state as a fold over its event log.

use std::collections::HashMap;
use std::sync::Arc;

use banditlab_core::envgen::{gen_reward_group, gen_stationary_games, EnvInstance};
use banditlab_core::rng::{self, tags};
use banditlab_core::{Dataset, EnvRef, EnvSpec, Step, Trajectory, Variant};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("{0}")]
    BadRequest(String),
    #[error("cursor is at game {game}, round {round}")]
    Stale { game: usize, round: usize },
    #[error("session is {0}")]
    Gone(Status),
    #[error("session is still active")]
    Active,
    #[error("corrupt event log: {0}")]
    Corrupt(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Active,
    Complete,
    Abandoned,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Active => "active",
            Status::Complete => "complete",
            Status::Abandoned => "abandoned",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Created {
        session_id: String,
        ts_ms: u64,
        env_spec: EnvSpec,
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        group_id: Option<u32>,
    },
    Choice {
        ts_ms: u64,
        game: usize,
        round: usize,
        /// Machine label as shown to the participant.
        choice: i64,
        reward: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        idempotency_key: Option<String>,
    },
    Abandoned {
        ts_ms: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cursor {
    pub game: usize,
    pub round: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChoiceReply {
    pub game: usize,
    pub round: usize,
    pub choice: i64,
    pub reward: f64,
    pub total_points: f64,
    pub next: Option<Cursor>,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryItem {
    pub game: usize,
    pub round: usize,
    pub choice: i64,
    pub reward: f64,
}

/// What the participant may see. Never includes latent means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    pub session_id: String,
    pub env: Variant,
    pub status: Status,
    pub cursor: Option<Cursor>,
    pub games: usize,
    pub rounds_per_game: usize,
    pub arm_labels: Vec<i64>,
    pub total_points: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group_id: Option<u32>,
    pub history: Vec<HistoryItem>,
}

pub fn describe(spec: &EnvSpec) -> String {
    match spec.variant {
        Variant::Stationary2 => format!(
            "You will play {} games, each with a different pair of slot machines labeled 1 and 2. \
             Each game consists of {} rounds. In each round, choose one machine to play. \
             Rewards are uncertain, and you will win or lose points based on your choice. \
             Your objective is to maximize your total number of points.",
            spec.games_per_session, spec.horizon
        ),
        Variant::Restless4 => format!(
            "You will play a single game of {} rounds with four slot machines labeled 0, 1, 2 and 3. \
             In each round, choose one machine and you will receive the points it pays. \
             The payout of each machine drifts randomly over time. \
             Your objective is to maximize your total number of points.",
            spec.horizon
        ),
    }
}

#[derive(Clone, Debug)]
pub struct Session {
    pub id: String,
    pub spec: EnvSpec,
    pub seed: u64,
    pub group_id: Option<u32>,
    pub created_ms: u64,
    envs: Vec<EnvInstance>,
    steps: Vec<Vec<Step>>,
    cursor: Cursor,
    total_points: f64,
    status: Status,
    replies: HashMap<String, ChoiceReply>,
}

/// Restless sessions without an explicit group rotate over the default groups.
fn default_group(seed: u64) -> u32 {
    (seed % 3) as u32 + 1
}

impl Session {
    /// Creation event for a new session; the caller appends it and then folds.
    pub fn create_event(
        id: &str,
        variant: Variant,
        seed: u64,
        group_id: Option<u32>,
        ts_ms: u64,
    ) -> Result<Event, SessionError> {
        let spec = EnvSpec::preset(variant);
        let group_id = match variant {
            Variant::Stationary2 if group_id.is_some() => {
                return Err(SessionError::BadRequest("group_id applies to restless4 only".into()))
            }
            Variant::Stationary2 => None,
            Variant::Restless4 => match group_id {
                Some(0) => return Err(SessionError::BadRequest("group_id must be positive".into())),
                Some(g) => Some(g),
                None => Some(default_group(seed)),
            },
        };
        Ok(Event::Created { session_id: id.to_string(), ts_ms, env_spec: spec, seed, group_id })
    }

    fn from_created(ev: &Event) -> Result<Self, SessionError> {
        let Event::Created { session_id, ts_ms, env_spec, seed, group_id } = ev else {
            return Err(SessionError::Corrupt("log does not start with a creation event".into()));
        };
        env_spec.validate().map_err(|e| SessionError::Corrupt(e.to_string()))?;
        let envs = match (env_spec.variant, group_id) {
            (Variant::Stationary2, None) => {
                let base = rng::derive(*seed, &[tags::SESSION]);
                gen_stationary_games(env_spec, env_spec.games_per_session, base)
                    .map_err(|e| SessionError::Corrupt(e.to_string()))?
                    .into_iter()
                    .map(|g| EnvInstance::stationary(env_spec, g))
                    .collect()
            }
            (Variant::Restless4, Some(g)) => {
                let group = gen_reward_group(env_spec, *g, *g as u64).map_err(|e| SessionError::Corrupt(e.to_string()))?;
                vec![EnvInstance::Restless(Arc::new(group))]
            }
            _ => return Err(SessionError::Corrupt("group_id does not match the environment".into())),
        };
        Ok(Self {
            id: session_id.clone(),
            spec: env_spec.clone(),
            seed: *seed,
            group_id: *group_id,
            created_ms: *ts_ms,
            steps: vec![Vec::new(); envs.len()],
            envs,
            cursor: Cursor { game: 1, round: 1 },
            total_points: 0.0,
            status: Status::Active,
            replies: HashMap::new(),
        })
    }

    /// Rebuild a session from its complete event log.
    pub fn fold<'a>(events: impl IntoIterator<Item = &'a Event>) -> Result<Self, SessionError> {
        let mut it = events.into_iter();
        let first = it.next().ok_or_else(|| SessionError::Corrupt("empty log".into()))?;
        let mut s = Self::from_created(first)?;
        for ev in it {
            s.apply(ev)?;
        }
        Ok(s)
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn cursor(&self) -> Option<Cursor> {
        (self.status == Status::Active).then_some(self.cursor)
    }

    pub fn total_points(&self) -> f64 {
        self.total_points
    }

    pub fn games(&self) -> usize {
        self.envs.len()
    }

    pub fn reply_for(&self, key: &str) -> Option<&ChoiceReply> {
        self.replies.get(key)
    }

    /// The event a choice would append. Does not change the session.
    pub fn choose(
        &self,
        label: i64,
        expected: Option<Cursor>,
        key: Option<String>,
        ts_ms: u64,
    ) -> Result<Event, SessionError> {
        if self.status != Status::Active {
            return Err(SessionError::Gone(self.status));
        }
        if let Some(c) = expected {
            if c != self.cursor {
                return Err(SessionError::Stale { game: self.cursor.game, round: self.cursor.round });
            }
        }
        let arm = self
            .spec
            .arm_from_label(label)
            .ok_or_else(|| SessionError::BadRequest(format!("arm {label} is not one of {:?}", self.spec.arm_labels())))?;
        let Cursor { game, round } = self.cursor;
        let reward = self.envs[game - 1].reward_at(arm, round).map_err(|e| SessionError::BadRequest(e.to_string()))?;
        Ok(Event::Choice { ts_ms, game, round, choice: label, reward, idempotency_key: key })
    }

    pub fn abandon(&self, ts_ms: u64) -> Result<Event, SessionError> {
        match self.status {
            Status::Active => Ok(Event::Abandoned { ts_ms }),
            s => Err(SessionError::Gone(s)),
        }
    }

    pub fn apply(&mut self, ev: &Event) -> Result<Option<ChoiceReply>, SessionError> {
        match ev {
            Event::Created { .. } => Err(SessionError::Corrupt("second creation event".into())),
            Event::Abandoned { .. } => {
                if self.status != Status::Active {
                    return Err(SessionError::Corrupt(format!("abandon on a {} session", self.status)));
                }
                self.status = Status::Abandoned;
                Ok(None)
            }
            Event::Choice { game, round, choice, reward, idempotency_key, .. } => {
                if self.status != Status::Active || (*game, *round) != (self.cursor.game, self.cursor.round) {
                    return Err(SessionError::Corrupt(format!("choice at game {game}, round {round} out of order")));
                }
                let arm = self
                    .spec
                    .arm_from_label(*choice)
                    .ok_or_else(|| SessionError::Corrupt(format!("choice {choice} is not an arm")))?;
                self.steps[game - 1].push(Step { round: *round, choice: arm, reward: *reward });
                self.total_points += reward;
                if *round < self.spec.horizon {
                    self.cursor.round += 1;
                } else if *game < self.envs.len() {
                    self.cursor = Cursor { game: game + 1, round: 1 };
                } else {
                    self.status = Status::Complete;
                }
                let reply = ChoiceReply {
                    game: *game,
                    round: *round,
                    choice: *choice,
                    reward: *reward,
                    total_points: self.total_points,
                    next: self.cursor(),
                    done: self.status == Status::Complete,
                };
                if let Some(k) = idempotency_key {
                    self.replies.insert(k.clone(), reply.clone());
                }
                Ok(Some(reply))
            }
        }
    }

    pub fn view(&self) -> StateView {
        let history = self
            .steps
            .iter()
            .enumerate()
            .flat_map(|(g, steps)| {
                steps.iter().map(move |s| HistoryItem {
                    game: g + 1,
                    round: s.round,
                    choice: self.spec.arm_label(s.choice),
                    reward: s.reward,
                })
            })
            .collect();
        StateView {
            session_id: self.id.clone(),
            env: self.spec.variant,
            status: self.status,
            cursor: self.cursor(),
            games: self.envs.len(),
            rounds_per_game: self.spec.horizon,
            arm_labels: self.spec.arm_labels(),
            total_points: self.total_points,
            group_id: self.group_id,
            history,
        }
    }

    /// Completed games as a dataset with one subject. Refused while active.
    pub fn export(&self) -> Result<Dataset, SessionError> {
        if self.status == Status::Active {
            return Err(SessionError::Active);
        }
        let trajectories = self
            .steps
            .iter()
            .zip(&self.envs)
            .enumerate()
            .filter(|(_, (steps, _))| steps.len() == self.spec.horizon)
            .map(|(g, (steps, env))| Trajectory {
                subject_id: self.id.clone(),
                trial_index: g,
                env: match env {
                    EnvInstance::Stationary { game, .. } => EnvRef::TrueMeans(game.true_means.clone()),
                    EnvInstance::Restless(grp) => EnvRef::Group(grp.group_id),
                },
                steps: steps.clone(),
            })
            .collect();
        Ok(Dataset::new(self.spec.clone(), "human", trajectories))
    }
}
