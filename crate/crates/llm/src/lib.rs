//! Agent that plays the bandit tasks through a chat-completion endpoint.

mod agent;
mod client;
mod parse;
mod prompt;

pub use agent::{LlmAgent, LlmFactory};
pub use client::{
    read_jsonl, Decision, ExchangeKey, ExchangeLog, ExchangeSink, HttpTransport, JsonlSink, LlmClient, LlmConfig,
    LlmError, MemorySink, ReplayTransport, Transport,
};
pub use parse::{parse_choice, ParseError};
pub use prompt::{build_prompt, history_json, system_prompt, user_prompt, HistoryEntry, Message, PromptVariant};
