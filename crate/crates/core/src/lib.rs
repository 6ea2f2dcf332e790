//! Core library for running and analysing exploration–exploitation experiments
//! on multi-armed bandits.
//!
//! The crate is organised around [`domain::Trajectory`] records: environments
//! ([`envgen`]) produce rewards, agents ([`agents`]) produce choices, the
//! [`runner`] assembles them into a [`domain::Dataset`], and the analysis side
//! ([`learner`], [`choice`], [`estim`], [`ident`], [`metrics`]) consumes them.

pub mod agents;
pub mod choice;
pub mod domain;
pub mod envgen;
pub mod estim;
pub mod ident;
pub mod learner;
pub mod metrics;
pub mod rng;
pub mod runner;
pub mod special;
pub mod store;

pub use domain::{Dataset, EnvRef, EnvSpec, RewardGroup, Step, Trajectory, Variant};
pub use learner::{BeliefState, LearnerConfig};
pub use rng::SimRng;
