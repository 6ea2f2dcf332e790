//! Prompt construction for the two bandit tasks.

use banditlab_core::{EnvSpec, Variant};
use serde::{Deserialize, Serialize};

/// Final-instruction variant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    /// V1: "You can think out loud and answer the number."
    #[default]
    #[serde(alias = "v1")]
    ThinkOutLoud,
    /// V2: "Do not explain, answer the number."
    #[serde(alias = "v2")]
    NoExplain,
}

impl PromptVariant {
    fn instruction(self) -> &'static str {
        match self {
            PromptVariant::ThinkOutLoud => "You can think out loud and answer the number.",
            PromptVariant::NoExplain => "Do not explain, answer the number.",
        }
    }
}

impl std::str::FromStr for PromptVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "v1" | "think_out_loud" | "think-out-loud" => Ok(PromptVariant::ThinkOutLoud),
            "v2" | "no_explain" | "no-explain" => Ok(PromptVariant::NoExplain),
            other => Err(format!("unknown prompt variant `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn system(content: String) -> Self {
        Self { role: "system".into(), content }
    }

    pub fn user(content: String) -> Self {
        Self { role: "user".into(), content }
    }
}

/// One prior round as shown to the model. `choice` is the external label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub round: usize,
    pub choice: i64,
    pub reward: i64,
}

pub fn system_prompt(spec: &EnvSpec) -> String {
    match spec.variant {
        Variant::Stationary2 => format!(
            "You are a real human agent playing with two slot machines, labeled 1 and 2, which provide uncertain rewards over time. \
             You will play {} games, each with a different pair of slot machines. Each game consists of {} rounds. \
             In each round, you are asked to choose one machine to play, and you will win or lose points based on your choice. \
             Your objective is to maximize your total reward.",
            spec.games_per_session, spec.horizon
        ),
        Variant::Restless4 => format!(
            "You are a real human agent playing with four slot machines, labeled 0, 1, 2, and 3, which provide uncertain rewards over time. \
             You will play a single game consisting of {} rounds. \
             In each round, you choose one machine to play and receive points based on your choice. \
             Your objective is to maximize your total reward throughout the experiment.",
            spec.horizon
        ),
    }
}

/// Pretty-printed history array with two-space indentation.
pub fn history_json(history: &[HistoryEntry]) -> String {
    serde_json::to_string_pretty(history).expect("history serialises")
}

pub fn user_prompt(spec: &EnvSpec, game: usize, round: usize, history: &[HistoryEntry], variant: PromptVariant) -> String {
    let (body, question) = match spec.variant {
        Variant::Stationary2 => {
            let body = if round == 1 {
                format!("You are now performing game: {game}, round 1.")
            } else {
                format!(
                    "You are now performing game: {game}, round: {round}.\n\
                     Your history is provided below, which includes the \u{201c}choice\u{201d} you made and the corresponding \
                     \u{201c}reward\u{201d} you received in each round. Negative reward means losing points, and positive means \
                     winning points. {}",
                    history_json(history)
                )
            };
            (body, "Which machine do you choose between machines 1 and 2?")
        }
        Variant::Restless4 => {
            let body = if round == 1 {
                "You are now performing round 1.".to_string()
            } else {
                format!(
                    "You are now performing round: {round}.\n\
                     Your history is provided below, which contains the \u{201c}choice\u{201d} you made and the corresponding \
                     \u{201c}reward\u{201d} you received in each \u{201c}round.\u{201d}\n{}",
                    history_json(history)
                )
            };
            (body, "Which machine do you choose between machines 0, 1, 2 and 3?")
        }
    };
    format!("{body}\n\n{question}\n{}", variant.instruction())
}

/// System and user messages for one decision.
pub fn build_prompt(spec: &EnvSpec, game: usize, round: usize, history: &[HistoryEntry], variant: PromptVariant) -> Vec<Message> {
    vec![Message::system(system_prompt(spec)), Message::user(user_prompt(spec, game, round, history, variant))]
}
