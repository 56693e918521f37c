use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use cfpersuade::cfengine::{
    build_database, engine_samples, fit_engine, ActionMode, BuildConfig, CfContext, CfDatabase, EngineKind,
};
use cfpersuade::corpus::load_corpus;
use cfpersuade::grasp::{bootstrap_stability, build_strategy_matrix, orient_filter, search, CausalGraph};
use cfpersuade::personality::{train_tp3m, Tp3m};
use cfpersuade::pipeline::{self, ExperimentConfig};
use cfpersuade::policy::{self, TrainedPolicy};
use cfpersuade::retrieval::build_index;
use cfpersuade::reward::{self, DdpModel};
use cfpersuade::strategy::{annotate, crossval, labeled_turns, train_classifier};
use cfpersuade::synthworld::{generate, WorldParams, WorldSpec};
use cfpersuade::{Corpus, Error, ErrorKind, Result, Role, StrategyClassifier};

#[derive(Parser)]
#[command(name = "cfpersuade", version, about = "Counterfactual persuasion-dialogue laboratory")]
struct Cli {
    /// Caps worker threads; results do not depend on it.
    #[arg(long, global = true, env = "CFPERSUADE_WORKERS")]
    workers: Option<usize>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    #[value(name = "EE", alias = "ee")]
    Ee,
    #[value(name = "ER", alias = "er")]
    Er,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Scm,
    Kqr,
}

#[derive(Clone, Copy, ValueEnum)]
enum ActionsArg {
    Causal,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment configuration (JSON); defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a JSONL corpus, clip donations, and write it back out.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a corpus from a synthetic world.
    Synth {
        /// World parameters or a full world spec (JSON).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        m: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Fill missing strategy labels with classifier predictions.
    Annotate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        ee: PathBuf,
        #[arg(long)]
        er: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    TrainStrategy {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum)]
        role: RoleArg,
        #[arg(long)]
        out: PathBuf,
        /// Also report k-fold cross-validated accuracy.
        #[arg(long)]
        folds: Option<usize>,
        #[command(flatten)]
        config: ConfigArg,
    },
    TrainPersonality {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Strategy-level causal discovery.
    Discover {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        bootstrap: Option<usize>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Build counterfactual databases, one JSONL file each.
    BuildCf {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, value_enum, default_value = "scm")]
        engine: EngineArg,
        #[arg(long, value_enum, default_value = "causal")]
        actions: ActionsArg,
        #[arg(long, value_enum, default_value = "on")]
        latent: Switch,
        /// Required with `--latent on`.
        #[arg(long)]
        tp3m: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    TrainReward {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    TrainPolicy {
        #[arg(long)]
        db_glob: String,
        /// Factual corpus the databases were built from.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        ddp: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also roll the policy out and write D* here.
        #[arg(long)]
        rollout: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Cumulative predicted-donation curve of a dialogue set.
    Evaluate {
        #[arg(long)]
        ddp: PathBuf,
        #[arg(long)]
        dialogues: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline into a report bundle.
    Run {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Summary table of a bundle; optionally the merged curve CSV.
    Report {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { line: 0, msg: format!("{}: {e}", path.display()) })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    write_text(path, &text)
}

fn load_config(arg: &ConfigArg, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match &arg.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn role_of(r: RoleArg) -> Role {
    match r {
        RoleArg::Ee => Role::EE,
        RoleArg::Er => Role::ER,
    }
}

fn world_spec(path: Option<&Path>, seed: Option<u64>) -> Result<WorldSpec> {
    let Some(p) = path else {
        return Ok(WorldSpec::default_world(seed.unwrap_or(0)));
    };
    let value: serde_json::Value = read_json(p)?;
    if let Ok(mut spec) = serde_json::from_value::<WorldSpec>(value.clone()) {
        if let Some(s) = seed {
            spec.seed = s;
        }
        spec.validate()?;
        return Ok(spec);
    }
    let mut params: WorldParams =
        serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
    if let Some(s) = seed {
        params.seed = s;
    }
    WorldSpec::from_params(&params)
}

fn load_databases(pattern: &str) -> Result<Vec<CfDatabase>> {
    let paths = glob::glob(pattern).map_err(|e| Error::Config(format!("bad glob {pattern:?}: {e}")))?;
    let mut dbs = Vec::new();
    for p in paths {
        let p = p.map_err(|e| Error::InvalidInput(e.to_string()))?;
        dbs.push(CfDatabase::from_corpus(&load_corpus(&p)?)?);
    }
    if dbs.is_empty() {
        return Err(Error::InsufficientData(format!("no databases match {pattern:?}")));
    }
    dbs.sort_by_key(|db| db.index);
    Ok(dbs)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { input, out } => {
            let corpus = load_corpus(&input)?;
            corpus.write(&out)?;
            let summary = serde_json::json!({
                "dialogues": corpus.dialogues.len(),
                "embedding_dim": corpus.embedding_dim,
                "turns": corpus.dialogues.iter().map(|d| d.turns.len()).sum::<usize>(),
            });
            println!("{summary}");
        }
        Command::Synth { spec, m, out, truth } => {
            let spec = world_spec(spec.as_deref(), cli.seed)?;
            let (corpus, gt) = generate(&spec, m)?;
            corpus.write(&out)?;
            if let Some(t) = truth {
                gt.write(&t)?;
            }
            println!("{}", serde_json::json!({"dialogues": m, "optimal_policy_value": gt.optimal_policy_value}));
        }
        Command::Annotate { corpus, ee, er, out } => {
            let corpus = load_corpus(&corpus)?;
            let ee: StrategyClassifier = read_json(&ee)?;
            let er: StrategyClassifier = read_json(&er)?;
            annotate(&corpus, &ee, &er)?.write(&out)?;
        }
        Command::TrainStrategy { corpus, role, out, folds, config } => {
            let cfg = load_config(&config, cli.seed)?.resolved();
            let corpus = load_corpus(&corpus)?;
            let role = role_of(role);
            let (x, y) = labeled_turns(&corpus, role);
            let vocab = if role == Role::EE { &corpus.ee_vocab } else { &corpus.er_vocab };
            let clf = train_classifier(&x, &y, vocab, &cfg.strategy)?;
            write_json(&out, &clf)?;
            if let Some(k) = folds {
                let cv = crossval(&x, &y, vocab, &cfg.strategy, k, cfg.strategy.seed)?;
                println!("{}", serde_json::json!({"mean_accuracy": cv.mean_accuracy, "std_accuracy": cv.std_accuracy}));
            }
        }
        Command::TrainPersonality { corpus, out, config } => {
            let cfg = load_config(&config, cli.seed)?.resolved();
            write_json(&out, &train_tp3m(&load_corpus(&corpus)?, &cfg.tp3m)?)?;
        }
        Command::Discover { corpus, out, bootstrap, config } => {
            let cfg = load_config(&config, cli.seed)?.resolved();
            let corpus = load_corpus(&corpus)?;
            let matrix = build_strategy_matrix(&corpus)?;
            let (graph, dropped) = orient_filter(&search(&matrix, &cfg.grasp)?, &corpus.ee_vocab, &corpus.er_vocab);
            write_text(&out, &graph.to_json())?;
            let mut summary = serde_json::json!({"edges": graph.edges.len(), "dropped": dropped});
            if let Some(b) = bootstrap.filter(|&b| b > 0) {
                let freq = bootstrap_stability(&matrix, &corpus.ee_vocab, &corpus.er_vocab, &cfg.grasp, b)?;
                summary["bootstrap"] = serde_json::to_value(freq).map_err(|e| Error::InvalidInput(e.to_string()))?;
            }
            println!("{summary}");
        }
        Command::BuildCf { corpus, graph, engine, actions, latent, tp3m, n, out_dir, config } => {
            let cfg = load_config(&config, cli.seed)?.resolved();
            let corpus = load_corpus(&corpus)?;
            let graph = CausalGraph::load(&graph)?;
            let tp3m: Option<Tp3m> = match (latent, tp3m) {
                (Switch::On, Some(p)) => Some(read_json(&p)?),
                (Switch::On, None) => return Err(Error::Config("--latent on needs --tp3m".into())),
                (Switch::Off, _) => None,
            };
            let kind = match engine {
                EngineArg::Scm => EngineKind::Scm,
                EngineArg::Kqr => EngineKind::Kqr,
            };
            let samples = engine_samples(&corpus, tp3m.as_ref())?;
            let engine = fit_engine(kind, &samples, &cfg.scm, &cfg.kqr)?;
            let index = build_index(&corpus)?;
            let ctx = CfContext { engine: &engine, graph: &graph, index: &index, tp3m: tp3m.as_ref(), ee_classifier: None };
            let build = BuildConfig {
                n_databases: n.unwrap_or(cfg.n_databases),
                actions: match actions {
                    ActionsArg::Causal => ActionMode::Causal,
                    ActionsArg::Random => ActionMode::Random,
                },
                seed: cfg.seed,
            };
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::Io { path: out_dir.display().to_string(), source: e })?;
            for db in build_database(&corpus, &ctx, &build)? {
                db.to_corpus(&corpus).write(out_dir.join(format!("cf_{:03}.jsonl", db.index)))?;
            }
        }
        Command::TrainReward { corpus, out, config } => {
            let cfg = load_config(&config, cli.seed)?;
            write_json(&out, &reward::train_ddp(&load_corpus(&corpus)?, cfg.ddp_ridge, cfg.seed)?)?;
        }
        Command::TrainPolicy { db_glob, corpus, ddp, out, rollout, config } => {
            let cfg = load_config(&config, cli.seed)?.resolved();
            let dbs = load_databases(&db_glob)?;
            let ddp: DdpModel = read_json(&ddp)?;
            let factual = load_corpus(&corpus)?;
            let trained: TrainedPolicy = policy::train(&dbs, &factual, &ddp, &cfg.policy)?;
            write_json(&out, &trained)?;
            if let Some(p) = rollout {
                let best = policy::rollout(&trained.net, &dbs)?;
                factual.with_dialogues(best).write(&p)?;
            }
        }
        Command::Evaluate { ddp, dialogues, out } => {
            let ddp: DdpModel = read_json(&ddp)?;
            let corpus: Corpus = load_corpus(&dialogues)?;
            let series = reward::evaluate(&ddp, &corpus.dialogues)?;
            write_text(&out, &series.to_csv())?;
            println!("{}", serde_json::json!({"total": series.total()}));
        }
        Command::Run { out, config } => {
            let cfg = load_config(&config, cli.seed)?;
            let report = pipeline::run_pipeline(&cfg, &out)?;
            println!("{}", serde_json::json!({"config_hash": report.config_hash, "status": report.status}));
        }
        Command::Report { bundle, csv } => {
            let (table, merged) = pipeline::report(&bundle)?;
            print!("{table}");
            if let Some(p) = csv {
                write_text(&p, &merged)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        if w == 0 {
            eprintln!("error: --workers must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            log::warn!("worker pool already initialised: {e}");
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            })
        }
    }
}
