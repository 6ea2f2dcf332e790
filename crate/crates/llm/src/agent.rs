use std::sync::Arc;

use banditlab_core::agents::{Agent, AgentError, TrialContext};
use banditlab_core::runner::AgentFactory;
use banditlab_core::{EnvSpec, SimRng};

use crate::client::{ExchangeKey, LlmClient};
use crate::prompt::{build_prompt, HistoryEntry};

/// Plays one trial by asking the model every round. History covers the current
/// trial only, which is one game for the two-armed task and the whole session
/// for the restless task.
pub struct LlmAgent {
    client: Arc<LlmClient>,
    spec: Option<EnvSpec>,
    subject_id: String,
    trial_index: usize,
    game: usize,
    history: Vec<HistoryEntry>,
    retries: u32,
}

impl LlmAgent {
    pub fn new(client: Arc<LlmClient>) -> Self {
        Self { client, spec: None, subject_id: String::new(), trial_index: 0, game: 1, history: Vec::new(), retries: 0 }
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    /// Retries used so far in this trial.
    pub fn retries(&self) -> u32 {
        self.retries
    }
}

impl Agent for LlmAgent {
    fn label(&self) -> String {
        format!("llm:{}", self.client.cfg.model)
    }

    fn begin_trial(&mut self, ctx: &TrialContext<'_>) -> Result<(), AgentError> {
        self.spec = Some(ctx.spec.clone());
        self.subject_id = ctx.subject_id.to_string();
        self.trial_index = ctx.trial_index;
        self.game = ctx.game;
        self.history.clear();
        self.retries = 0;
        Ok(())
    }

    fn act(&mut self, round: usize, _rng: &mut SimRng) -> Result<usize, AgentError> {
        let spec = self.spec.as_ref().ok_or_else(|| AgentError::Config("act before begin_trial".into()))?;
        let messages = build_prompt(spec, self.game, round, &self.history, self.client.cfg.variant);
        let key = ExchangeKey {
            subject_id: self.subject_id.clone(),
            trial_index: self.trial_index,
            game: self.game,
            round,
            attempt: 0,
        };
        let d = self
            .client
            .decide(key, &messages, &spec.arm_labels())
            .map_err(|e| AgentError::Failed(e.to_string()))?;
        self.retries += d.retries;
        spec.arm_from_label(d.label)
            .ok_or_else(|| AgentError::Failed(format!("label {} has no arm", d.label)))
    }

    fn observe(&mut self, round: usize, arm: usize, reward: f64) -> Result<(), AgentError> {
        let spec = self.spec.as_ref().ok_or_else(|| AgentError::Config("observe before begin_trial".into()))?;
        self.history.push(HistoryEntry { round, choice: spec.arm_label(arm), reward: reward.round() as i64 });
        Ok(())
    }
}

pub struct LlmFactory {
    pub client: Arc<LlmClient>,
}

impl AgentFactory for LlmFactory {
    fn label(&self) -> String {
        format!("llm:{}", self.client.cfg.model)
    }

    fn build(&self, _spec: &EnvSpec, _subject: usize, _trial: usize) -> Result<Box<dyn Agent>, AgentError> {
        Ok(Box::new(LlmAgent::new(self.client.clone())))
    }
}
