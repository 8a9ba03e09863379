//! Subcommand definitions and their implementations.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use oppchain::agent::Algorithm;
use oppchain::counterfactual::MoveConfig;
use oppchain::distal::DistalConfig;
use oppchain::envs::EnvKind;
use oppchain::equations::fit_equations;
use oppchain::explain::QuestionType;
use oppchain::fidelity;
use oppchain::graph::ActionInfluenceGraph;
use oppchain::mdp::{MdpSpec, ReplayDataset, StateVector};
use oppchain::pipeline::{self, Artifacts, Ask, BuildOptions, Manifest};
use oppchain::regress::RegressorKind;
use oppchain::tree::DecisionTreePolicy;

use crate::{service, CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "oppchain", version, about = "Causal and distal explanations for tabular RL agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an agent and record greedy replay.
    Train(TrainArgs),
    /// Fit structural equations for a causal graph.
    FitCausal(FitCausalArgs),
    /// Fit a surrogate decision tree on replay.
    FitTree(FitTreeArgs),
    /// Train the distal action predictor.
    FitDistal(FitDistalArgs),
    /// Train, record and fit everything into one directory.
    Build(BuildArgs),
    /// Explain an action in a given state.
    Explain(ExplainArgs),
    /// Score surrogate task-prediction fidelity.
    Evaluate(EvaluateArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub env: EnvKind,
    #[arg(long)]
    pub algo: Option<Algorithm>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Maximum training episodes.
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub replay_episodes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitCausalArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub replay: PathBuf,
    #[arg(long, default_value = "lr")]
    pub regressor: RegressorKind,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to spec.json next to the replay file.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct FitTreeArgs {
    #[arg(long)]
    pub replay: PathBuf,
    /// `auto` (one leaf per action) or a number; unbounded when omitted.
    #[arg(long)]
    pub max_leaves: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitDistalArgs {
    #[arg(long)]
    pub replay: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub env: EnvKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub algo: Option<Algorithm>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub replay_episodes: Option<usize>,
    #[arg(long, default_value = "lr")]
    pub regressor: RegressorKind,
    #[arg(long)]
    pub no_distal: bool,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    /// Taken from the manifest when omitted.
    #[arg(long)]
    pub env: Option<EnvKind>,
    #[arg(long)]
    pub artifacts: PathBuf,
    /// Comma-separated state values.
    #[arg(long, allow_hyphen_values = true)]
    pub state: String,
    #[arg(long)]
    pub question: QuestionType,
    #[arg(long)]
    pub action: String,
    #[arg(long)]
    pub distal: bool,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Answer "why" from the causal graph only.
    #[arg(long)]
    pub graph_only: bool,
    /// Print only the rendered sentence.
    #[arg(long)]
    pub text: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_delimiter = ',', default_value = "taxi,cartpole,mountaincar,craft")]
    pub envs: Vec<EnvKind>,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    /// Number of seeds (0..N).
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    /// CSV report path.
    #[arg(long)]
    pub out: PathBuf,
    /// Directory with `<env>/seed-<k>` or `<env>` artifact folders;
    /// artifacts are built in memory when omitted.
    #[arg(long)]
    pub artifacts: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub artifacts: PathBuf,
    #[arg(long)]
    pub env: Option<EnvKind>,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::FitCausal(a) => fit_causal(a),
        Command::FitTree(a) => fit_tree(a),
        Command::FitDistal(a) => fit_distal(a),
        Command::Build(a) => build(a),
        Command::Explain(a) => explain(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Serve(a) => serve(a),
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let plan = pipeline::training_plan(a.env);
    let outcome = pipeline::train_agent(a.env, a.algo, a.episodes, a.seed)?;
    let replay = pipeline::greedy_replay(a.env, &outcome.policy, a.replay_episodes.unwrap_or(plan.replay_episodes), a.seed);
    let spec = outcome.policy.spec.clone();
    let artifacts = Artifacts {
        env: a.env,
        manifest: Some(Manifest {
            env: a.env.name().into(),
            seed: a.seed,
            algorithm: outcome.policy.config.algorithm,
            episodes: outcome.curve.len(),
            converged: outcome.converged,
            rolling_mean: outcome.rolling_mean(),
        }),
        graph: pipeline::load_graph(a.env)?,
        lexicon: pipeline::lexicon(a.env)?,
        policy: Some(outcome.policy),
        replay: Some(replay),
        equations: None,
        tree: None,
        tree_n: None,
        distal: None,
        spec,
    };
    artifacts.save(&a.out)?;
    info!("trained {} for {} episodes into {}", a.env, outcome.curve.len(), a.out.display());
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| oppchain::Error::MissingArtifact(format!("{}: {e}", path.display())).into())
}

fn load_replay(path: &Path) -> Result<ReplayDataset> {
    Ok(ReplayDataset::from_jsonl(&read(path)?)?)
}

fn load_spec(spec: Option<&Path>, replay: &Path) -> Result<MdpSpec> {
    let path = match spec {
        Some(p) => p.to_path_buf(),
        None => replay.with_file_name(pipeline::SPEC_FILE),
    };
    Ok(MdpSpec::from_json(&read(&path)?)?)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn fit_causal(a: FitCausalArgs) -> Result<()> {
    let spec = load_spec(a.spec.as_deref(), &a.replay)?;
    let graph = ActionInfluenceGraph::load_for(&read(&a.graph)?, &spec)?;
    let replay = load_replay(&a.replay)?;
    let fitted = fit_equations(&graph, &replay, a.regressor, a.seed)?;
    write(&a.out, &fitted.to_json())
}

fn parse_max_leaves(value: Option<&str>, spec: &MdpSpec) -> Result<Option<usize>> {
    match value {
        None => Ok(None),
        Some("auto") => Ok(Some(spec.actions.len())),
        Some(v) => match v.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!("--max-leaves must be `auto` or a positive integer, got `{v}`"))),
        },
    }
}

fn fit_tree(a: FitTreeArgs) -> Result<()> {
    let spec = load_spec(a.spec.as_deref(), &a.replay)?;
    let replay = load_replay(&a.replay)?;
    let max_leaves = parse_max_leaves(a.max_leaves.as_deref(), &spec)?;
    let tree = DecisionTreePolicy::fit_replay(&replay, &spec, max_leaves)?;
    write(&a.out, &tree.to_json())
}

fn fit_distal(a: FitDistalArgs) -> Result<()> {
    let spec = load_spec(a.spec.as_deref(), &a.replay)?;
    let graph = ActionInfluenceGraph::load_for(&read(&a.graph)?, &spec)?;
    let replay = load_replay(&a.replay)?;
    let mut config = DistalConfig { seed: a.seed, ..DistalConfig::default() };
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    let predictor = pipeline::fit_distal(&replay, &graph, &spec, config)?;
    write(&a.out, &predictor.to_json())
}

fn build(a: BuildArgs) -> Result<()> {
    let mut options = BuildOptions::new(a.seed);
    options.algorithm = a.algo;
    options.max_episodes = a.episodes;
    options.replay_episodes = a.replay_episodes;
    options.regressor = a.regressor;
    if a.no_distal {
        options.distal = None;
    }
    let artifacts = pipeline::build(a.env, &options)?;
    artifacts.save(&a.out)?;
    Ok(())
}

fn explain(a: ExplainArgs) -> Result<()> {
    let artifacts = Artifacts::load(&a.artifacts, a.env)?;
    let state = StateVector::parse_csv(&a.state)?;
    let mut ask = Ask::new(a.question, artifacts.resolve_action(&a.action)?);
    ask.distal = a.distal;
    ask.graph_only = a.graph_only;
    if let Some(d) = a.delta {
        if !(d > 0.0 && d.is_finite()) {
            return Err(CliError::Usage(format!("--delta must be positive, got {d}")));
        }
        ask.moves = MoveConfig::with_delta(d);
    }
    let explanation = artifacts.explain(&state, &ask, &[])?;
    if a.text {
        println!("{}", explanation.rendered_text);
    } else {
        println!("{}", explanation.to_json());
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    if a.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let root = a.artifacts.clone();
    let report = fidelity::report(&a.envs, &seeds, a.episodes, |env, seed| match &root {
        Some(dir) => {
            let per_seed = dir.join(env.name()).join(format!("seed-{seed}"));
            let dir = if per_seed.is_dir() { per_seed } else { dir.join(env.name()) };
            Artifacts::load(&dir, Some(env))
        }
        None => pipeline::build(env, &BuildOptions { distal: None, ..BuildOptions::new(seed) }),
    })?;
    write(&a.out, &report.to_csv())?;
    print!("{}", report.to_table());
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let artifacts = Artifacts::load(&a.artifacts, a.env)?;
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| CliError::Usage(format!("invalid address {}:{}: {e}", a.host, a.port)))?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(service::serve(artifacts, addr))?;
    Ok(())
}
