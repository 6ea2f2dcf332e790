//! gen-env, run and sweep.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use banditlab_core::agents::AgentSpec;
use banditlab_core::choice::Model;
use banditlab_core::envgen::{gen_reward_group, gen_stationary_games};
use banditlab_core::estim::{fit_hier, HierPrior, McmcConfig, ParamSummary};
use banditlab_core::rng;
use banditlab_core::runner::{self, AgentFactory, IncompleteTrial, RunPlan, RunResult};
use banditlab_core::store::{self, dataset_to_jsonl, Provenance};
use banditlab_core::{Dataset, EnvSpec, LearnerConfig, Variant};
use banditlab_llm::{JsonlSink, LlmClient, LlmConfig, LlmFactory};
use clap::Args;
use serde::{Deserialize, Serialize};

use super::{load_groups, write, write_json};
use crate::error::{runtime, usage, Result};

fn spec_for(env: Variant, horizon: Option<usize>) -> Result<EnvSpec> {
    let mut spec = EnvSpec::preset(env);
    if let Some(h) = horizon {
        spec = spec.with_horizon(h);
    }
    spec.validate().map_err(usage)?;
    Ok(spec)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenEnvConfig {
    pub env: Variant,
    /// Master seed. Without it, restless group g uses seed g.
    pub seed: Option<u64>,
    pub group_ids: Vec<u32>,
    /// Stationary games to draw.
    pub games: usize,
    pub horizon: Option<usize>,
}

impl Default for GenEnvConfig {
    fn default() -> Self {
        Self { env: Variant::Restless4, seed: None, group_ids: vec![1, 2, 3], games: 20, horizon: None }
    }
}

#[derive(Args, Debug, Default, Serialize)]
pub struct GenEnvArgs {
    /// Task variant
    #[arg(long, value_parser = ["stationary2", "restless4"])]
    pub env: Option<String>,
    /// Master seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Restless group ids to generate
    #[arg(long, value_delimiter = ',')]
    pub group_ids: Option<Vec<u32>>,
    /// Number of stationary games
    #[arg(long)]
    pub games: Option<usize>,
    /// Rounds per game
    #[arg(long)]
    pub horizon: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct GenEnvReport {
    pub files: Vec<PathBuf>,
    pub groups: Vec<(u32, u64)>,
    pub games: usize,
}

pub fn gen_env(cfg: &GenEnvConfig, out: &Path) -> Result<GenEnvReport> {
    let spec = spec_for(cfg.env, cfg.horizon)?;
    let mut files = Vec::new();
    let mut groups = Vec::new();
    match cfg.env {
        Variant::Restless4 => {
            if cfg.group_ids.is_empty() || cfg.group_ids.contains(&0) {
                return Err(usage("group_ids must be positive and non-empty"));
            }
            std::fs::create_dir_all(out).map_err(runtime)?;
            for &g in &cfg.group_ids {
                let seed = cfg.seed.map_or(g as u64, |s| rng::derive(s, &[g as u64]));
                let group = gen_reward_group(&spec, g, seed).map_err(usage)?;
                let stem = out.join(format!("group{g}"));
                store::export_group(&group, &spec, &stem)?;
                let (m, r, j) = store::group_paths(&stem);
                files.extend([m, r, j]);
                groups.push((g, seed));
            }
        }
        Variant::Stationary2 => {
            let games = gen_stationary_games(&spec, cfg.games, cfg.seed.unwrap_or(1)).map_err(usage)?;
            files.push(write_json(out, "games.json", &serde_json::json!({ "env_spec": spec, "games": games }))?);
        }
    }
    Ok(GenEnvReport { files, groups, games: if cfg.env == Variant::Stationary2 { cfg.games } else { 0 } })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: Variant,
    /// ucb, ts, eps-greedy, simulated or llm.
    pub agent: String,
    pub c: Option<f64>,
    pub epsilon: Option<f64>,
    /// Choice model and parameters of a simulated agent.
    pub model: Option<Model>,
    pub params: Option<Vec<f64>>,
    pub trials: usize,
    pub seed: u64,
    pub horizon: Option<usize>,
    pub trials_per_subject: Option<usize>,
    /// Directory of reward groups written by gen-env.
    pub groups_dir: Option<PathBuf>,
    pub llm: Option<LlmConfig>,
    pub output: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: Variant::Stationary2,
            agent: "ucb".into(),
            c: None,
            epsilon: None,
            model: None,
            params: None,
            trials: 300,
            seed: 1,
            horizon: None,
            trials_per_subject: None,
            groups_dir: None,
            llm: None,
            output: "dataset.jsonl".into(),
        }
    }
}

#[derive(Args, Debug, Default, Serialize)]
pub struct RunArgs {
    /// Task variant
    #[arg(long, value_parser = ["stationary2", "restless4"])]
    pub env: Option<String>,
    /// Agent: ucb, ts, eps-greedy, simulated or llm
    #[arg(long, value_parser = ["ucb", "ts", "eps-greedy", "simulated", "llm"])]
    pub agent: Option<String>,
    /// UCB exploration constant
    #[arg(long)]
    pub c: Option<f64>,
    /// Exploration probability of eps-greedy
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Choice model of a simulated agent
    #[arg(long, value_parser = ["sm1", "sm2", "sm3", "probit", "qcare"])]
    pub model: Option<String>,
    /// Parameters of a simulated agent, comma separated
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub params: Option<Vec<f64>>,
    /// Number of trials
    #[arg(long)]
    pub trials: Option<usize>,
    /// Master seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Rounds per trial
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Consecutive trials sharing one subject id
    #[arg(long)]
    pub trials_per_subject: Option<usize>,
    /// Directory of reward groups written by gen-env
    #[arg(long)]
    pub groups_dir: Option<PathBuf>,
    /// Dataset file name inside the output directory
    #[arg(long)]
    pub output: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub agent: String,
    pub env: Variant,
    pub trials: usize,
    pub completed: usize,
    pub completion_rate: f64,
    pub incomplete: Vec<IncompleteTrial>,
    pub dataset: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exchanges: Option<PathBuf>,
}

pub fn agent_spec(cfg: &RunConfig) -> Result<AgentSpec> {
    Ok(match cfg.agent.as_str() {
        "ucb" => AgentSpec::Ucb { c: cfg.c, prior_sd: None },
        "ts" => AgentSpec::ts(),
        "eps-greedy" | "eps" => AgentSpec::eps(cfg.epsilon.unwrap_or(0.1)),
        "simulated" => {
            let model = cfg.model.ok_or_else(|| usage("simulated agent needs `model`"))?;
            let x = cfg.params.as_deref().ok_or_else(|| usage("simulated agent needs `params`"))?;
            AgentSpec::Simulated { params: model.params(x).map_err(usage)?, learner: None }
        }
        other => return Err(usage(format!("unknown agent `{other}`"))),
    })
}

pub fn run(cfg: &RunConfig, out: &Path) -> Result<RunReport> {
    let spec = spec_for(cfg.env, cfg.horizon)?;
    if cfg.trials == 0 {
        return Err(usage("trials must be positive"));
    }
    let mut plan = RunPlan::new(spec.clone(), cfg.trials, cfg.seed);
    if let Some(n) = cfg.trials_per_subject {
        if n == 0 {
            return Err(usage("trials_per_subject must be positive"));
        }
        plan.trials_per_subject = n;
    }
    let groups = load_groups(&spec, cfg.groups_dir.as_deref())?;
    let mut exchanges = None;
    let res = if cfg.agent == "llm" {
        let llm = cfg.llm.clone().ok_or_else(|| usage("llm agent needs an `llm` config section"))?;
        std::fs::create_dir_all(out).map_err(runtime)?;
        let log = out.join("exchanges.jsonl");
        let sink = Arc::new(JsonlSink::create(&log).map_err(runtime)?);
        let client = LlmClient::http(llm).map_err(usage)?.with_sink(sink);
        exchanges = Some(log);
        runner::run(&plan, &LlmFactory { client: Arc::new(client) }, &groups)?
    } else {
        let a = agent_spec(cfg)?;
        runner::run(&plan, &a as &dyn AgentFactory, &groups)?
    };
    let path = write(out, &cfg.output, dataset_to_jsonl(&res.dataset, &Provenance { learner: None, seeds: vec![cfg.seed] }).as_bytes())?;
    if !res.incomplete.is_empty() {
        let lines: Vec<String> = res.incomplete.iter().map(|i| serde_json::to_string(i).expect("serialises")).collect();
        write(out, "incomplete.jsonl", (lines.join("\n") + "\n").as_bytes())?;
    }
    Ok(RunReport {
        agent: res.dataset.agent_label.clone(),
        env: cfg.env,
        trials: cfg.trials,
        completed: res.dataset.trajectories.len(),
        completion_rate: res.completion_rate(),
        incomplete: res.incomplete,
        dataset: path,
        exchanges,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    #[default]
    Eps,
    UcbC,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub kind: SweepKind,
    /// Defaults: ε ∈ {0.0, …, 0.9}, c ∈ {1, 2, 4, 8}.
    pub grid: Option<Vec<f64>>,
    pub seed: u64,
    pub trials: usize,
    pub horizon: usize,
    /// Fit a hierarchical model to every dataset.
    pub fit: bool,
    pub model: Model,
    pub mcmc: McmcConfig,
    pub save_datasets: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            kind: SweepKind::Eps,
            grid: None,
            seed: 1,
            trials: 300,
            horizon: 300,
            fit: true,
            model: Model::Sm3,
            mcmc: McmcConfig::with_seed(5),
            save_datasets: true,
        }
    }
}

#[derive(Args, Debug, Default, Serialize)]
pub struct SweepArgs {
    /// Swept parameter
    #[arg(long, value_parser = ["eps", "ucb_c"])]
    pub kind: Option<String>,
    /// Grid values, comma separated
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// Master seed of the environments
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trials per grid value
    #[arg(long)]
    pub trials: Option<usize>,
    /// Rounds per trial
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Fit the choice model to every dataset
    #[arg(long)]
    pub fit: Option<bool>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub x: f64,
    pub agent: String,
    pub completed: usize,
    pub final_bayes_regret: f64,
    pub dataset: Option<PathBuf>,
    pub converged: Option<bool>,
    pub group: Vec<ParamSummary>,
}

impl SweepRow {
    pub fn mean_of(&self, name: &str) -> Option<f64> {
        self.group.iter().find(|p| p.name == name).map(|p| p.mean)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    pub kind: SweepKind,
    pub model: Model,
    pub rows: Vec<SweepRow>,
    /// μ_β strictly decreasing along the grid.
    pub mu_beta_decreasing: Option<bool>,
}

pub fn sweep(cfg: &SweepConfig, out: &Path) -> Result<SweepReport> {
    let spec = spec_for(Variant::Stationary2, Some(cfg.horizon))?;
    let plan = RunPlan::new(spec, cfg.trials, cfg.seed);
    let grid = cfg.grid.clone().unwrap_or_else(|| match cfg.kind {
        SweepKind::Eps => runner::default_eps_grid(),
        SweepKind::UcbC => runner::default_c_grid(),
    });
    let results: Vec<(f64, RunResult)> = match cfg.kind {
        SweepKind::Eps => runner::sweep_eps(&plan, &grid)?,
        SweepKind::UcbC => runner::sweep_ucb_c(&plan, &grid)?,
    };
    let learner = LearnerConfig::for_spec(&plan.env);
    let prior = HierPrior::preset(cfg.model);
    let mut rows = Vec::new();
    for (x, res) in results {
        let d: &Dataset = &res.dataset;
        let regret = banditlab_core::metrics::bayes_regret(d).map_err(runtime)?;
        let dataset = if cfg.save_datasets {
            let name = format!("{}_{x}.jsonl", match cfg.kind {
                SweepKind::Eps => "eps",
                SweepKind::UcbC => "ucb_c",
            });
            let prov = Provenance { learner: Some(learner.clone()), seeds: vec![cfg.seed] };
            Some(write(out, &name, dataset_to_jsonl(d, &prov).as_bytes())?)
        } else {
            None
        };
        let (converged, group) = if cfg.fit {
            tracing::info!(x, "fitting sweep dataset");
            let post = fit_hier(cfg.model, d, &prior, &learner, &cfg.mcmc)?;
            (Some(post.converged), post.group_summary())
        } else {
            (None, Vec::new())
        };
        rows.push(SweepRow {
            x,
            agent: d.agent_label.clone(),
            completed: d.trajectories.len(),
            final_bayes_regret: regret.final_point().map_or(f64::NAN, |p| p.mean),
            dataset,
            converged,
            group,
        });
    }
    let betas: Option<Vec<f64>> = cfg.fit.then(|| rows.iter().filter_map(|r| r.mean_of("mu_beta")).collect());
    let mu_beta_decreasing = betas.map(|b| b.windows(2).all(|w| w[1] < w[0]));
    Ok(SweepReport { kind: cfg.kind, model: cfg.model, rows, mu_beta_decreasing })
}
