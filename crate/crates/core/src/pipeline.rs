//! End-to-end experiment runner: configuration, stage orchestration, the
//! variant grid, and the on-disk report bundle.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cfengine::{
    build_database, engine_samples, fit_engine, ActionMode, BuildConfig, CfContext, CfDatabase, Engine,
    EngineKind, KqrConfig, ScmConfig,
};
use crate::corpus::{load_corpus, split, Corpus, Role};
use crate::error::{Error, Result};
use crate::grasp::{bootstrap_stability, build_strategy_matrix, f1, orient_filter, search, CausalGraph, EdgeFrequency, GraspConfig};
use crate::numcore::{regression_metrics, RegressionMetrics, TrainConfig};
use crate::personality::{self, train_tp3m, Tp3m, Tp3mConfig};
use crate::policy::{self, PolicyConfig, TrainedPolicy};
use crate::retrieval::build_index;
use crate::reward::{self, train_ddp, CumulativeRewardSeries, DdpModel};
use crate::rng;
use crate::strategy::{annotate, default_classifier_config, labeled_turns, train_classifier, StrategyClassifier};
use crate::synthworld::{generate, WorldParams, WorldSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Variant {
    pub engine: EngineKind,
    pub actions: ActionMode,
    pub latent: bool,
}

impl Variant {
    fn engine_name(&self) -> &'static str {
        match self.engine {
            EngineKind::Scm => "scm",
            EngineKind::Kqr => "kqr",
        }
    }

    pub fn name(&self) -> String {
        let engine = self.engine_name();
        let actions = match self.actions {
            ActionMode::Causal => "causal",
            ActionMode::Random => "random",
            ActionMode::Factual => "factual",
        };
        format!("{engine}-{actions}-{}", if self.latent { "latent" } else { "nolatent" })
    }

    /// The full engine × actions × latent grid.
    pub fn grid() -> Vec<Variant> {
        let mut out = Vec::new();
        for engine in [EngineKind::Scm, EngineKind::Kqr] {
            for actions in [ActionMode::Causal, ActionMode::Random] {
                for latent in [true, false] {
                    out.push(Variant { engine, actions, latent });
                }
            }
        }
        out
    }
}

impl Default for Variant {
    fn default() -> Self {
        Variant { engine: EngineKind::Scm, actions: ActionMode::Causal, latent: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// JSONL corpus; a synthetic world is drawn when absent.
    pub corpus: Option<PathBuf>,
    pub world: WorldParams,
    pub synthetic_dialogues: usize,
    pub variants: Vec<Variant>,
    pub n_databases: usize,
    pub seed: u64,
    pub train_fraction: f64,
    pub strategy: TrainConfig,
    pub tp3m: Tp3mConfig,
    pub grasp: GraspConfig,
    /// Bootstrap replicates for edge stability; 0 skips.
    pub bootstrap: usize,
    pub scm: ScmConfig,
    pub kqr: KqrConfig,
    pub ddp_ridge: f64,
    /// `updates = 0` skips policy learning.
    pub policy: PolicyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus: None,
            world: WorldParams::default(),
            synthetic_dialogues: 500,
            variants: vec![Variant::default()],
            n_databases: 50,
            seed: 0,
            train_fraction: 0.8,
            strategy: default_classifier_config(0),
            tp3m: Tp3mConfig::default(),
            grasp: GraspConfig::default(),
            bootstrap: 0,
            scm: ScmConfig::default(),
            kqr: KqrConfig::default(),
            ddp_ridge: 1.0,
            policy: PolicyConfig::default(),
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::InvalidInput(format!("serialization: {e}")))
}

fn key_of<T: Serialize>(parts: &T) -> Result<String> {
    let text = serde_json::to_string(parts).map_err(|e| Error::InvalidInput(format!("serialization: {e}")))?;
    Ok(sha256_hex(text.as_bytes())[..16].to_string())
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Copy with every stage seed derived from the master seed.
    pub fn resolved(&self) -> ExperimentConfig {
        let s = |tag: u64| rng::derive_seed(&[self.seed, tag]);
        let mut c = self.clone();
        c.world.seed = self.seed;
        c.strategy.seed = s(0x57A7);
        c.tp3m.train.seed = s(0x7B3);
        c.grasp.seed = s(0x6A5B);
        c.scm.train.seed = s(0x5C3);
        c.kqr.seed = s(0x4B1);
        c.policy.seed = s(0xD3);
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::Config("no variants requested".into()));
        }
        if self.n_databases == 0 {
            return Err(Error::Config("n_databases must be positive".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train fraction {} outside (0, 1)", self.train_fraction)));
        }
        if !(self.ddp_ridge > 0.0) {
            return Err(Error::Config("ddp ridge must be positive".into()));
        }
        if self.variants.iter().any(|v| v.actions == ActionMode::Factual) {
            return Err(Error::Config("variants take causal or random actions".into()));
        }
        self.grasp.validate()?;
        self.strategy.validate()?;
        self.tp3m.train.validate()?;
        self.scm.train.validate()?;
        if self.policy.updates > 0 {
            self.policy.validate()?;
        }
        Ok(())
    }

    /// Hash of the resolved configuration; covers every output-affecting knob.
    pub fn hash(&self) -> Result<String> {
        key_of(&self.resolved())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub synthetic: bool,
    pub checksum: String,
    pub dialogues: usize,
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub ee_test_accuracy: f64,
    pub er_test_accuracy: f64,
    pub annotated_turns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoverySummary {
    pub edges: Vec<(String, String)>,
    pub dropped_edges: usize,
    pub graph_checksum: String,
    /// Against the generating graph, synthetic corpora only.
    pub f1: Option<f64>,
    pub bootstrap: Option<Vec<EdgeFrequency>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSummary {
    pub test: RegressionMetrics,
    pub factual_total: f64,
    pub factual_predicted_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub total: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub name: String,
    pub variant: Variant,
    /// Mean over databases of the total predicted donation.
    pub total: f64,
    pub database_totals: Vec<f64>,
    pub policy: Option<PolicySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub seed: u64,
    pub status: String,
    pub error: Option<StageError>,
    pub corpus: Option<CorpusSummary>,
    pub strategy: Option<StrategySummary>,
    pub personality: Option<personality::Tp3mReport>,
    pub discovery: Option<DiscoverySummary>,
    pub reward: Option<RewardSummary>,
    pub variants: Vec<VariantReport>,
    /// Expected donation total of the world's optimal persuader.
    pub oracle_optimal_total: Option<f64>,
}

impl Report {
    fn new(config_hash: String, seed: u64) -> Self {
        Report {
            config_hash,
            seed,
            status: "running".into(),
            error: None,
            corpus: None,
            strategy: None,
            personality: None,
            discovery: None,
            reward: None,
            variants: Vec::new(),
            oracle_optimal_total: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Report> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse { line: 0, msg: e.to_string() })
    }

    pub fn variant(&self, name: &str) -> Option<&VariantReport> {
        self.variants.iter().find(|v| v.name == name)
    }
}

#[derive(Serialize, Deserialize)]
struct Stamped<T> {
    config_hash: String,
    seed: u64,
    stage_key: String,
    model: T,
}

/// Output directory plus a manifest of everything written into it.
struct Bundle {
    dir: PathBuf,
    config_hash: String,
    seed: u64,
    manifest: BTreeMap<String, String>,
}

impl Bundle {
    fn create(dir: &Path, config_hash: String, seed: u64) -> Result<Bundle> {
        for sub in ["", "curves", "models"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        Ok(Bundle { dir: dir.to_path_buf(), config_hash, seed, manifest: BTreeMap::new() })
    }

    fn write(&mut self, rel: &str, text: &str) -> Result<()> {
        let p = self.dir.join(rel);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        self.manifest.insert(rel.to_string(), sha256_hex(text.as_bytes()));
        Ok(())
    }

    /// Loads `models/<name>.json` when its stage key matches, otherwise
    /// runs `fit`. The artifact is rewritten with the current stamp.
    fn stage<T, F>(&mut self, name: &str, stage_key: &str, fit: F) -> Result<T>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T>,
    {
        let rel = format!("models/{name}.json");
        let cached = std::fs::read_to_string(self.dir.join(&rel))
            .ok()
            .and_then(|text| serde_json::from_str::<Stamped<T>>(&text).ok())
            .filter(|s| s.stage_key == stage_key);
        let model = match cached {
            Some(s) => {
                log::info!("stage {name}: reusing cached artifact");
                s.model
            }
            None => fit()?,
        };
        let stamped = Stamped {
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            stage_key: stage_key.to_string(),
            model,
        };
        self.write(&rel, &to_json(&stamped)?)?;
        Ok(stamped.model)
    }

    fn finish(&mut self, report: &Report) -> Result<()> {
        self.write("report.json", &to_json(report)?)?;
        let manifest = serde_json::json!({
            "config_hash": self.config_hash,
            "seed": self.seed,
            "artifacts": self.manifest,
        });
        let p = self.dir.join("manifest.json");
        std::fs::write(&p, to_json(&manifest)?).map_err(|e| Error::io(&p, e))
    }
}

/// Everything the variant runs share.
struct Shared {
    corpus: Corpus,
    train: Corpus,
    tp3m: Option<Tp3m>,
    ee_classifier: StrategyClassifier,
    graph: CausalGraph,
    ddp: DdpModel,
    corpus_key: String,
    strategy_key: String,
    tp3m_key: String,
}

fn corpus_stage(cfg: &ExperimentConfig, report: &mut Report) -> Result<(Corpus, Option<WorldSpec>, String)> {
    let (corpus, spec) = match &cfg.corpus {
        Some(p) => (load_corpus(p)?, None),
        None => {
            let spec = WorldSpec::from_params(&cfg.world)?;
            let (corpus, truth) = generate(&spec, cfg.synthetic_dialogues)?;
            report.oracle_optimal_total = Some(truth.optimal_policy_value * corpus.dialogues.len() as f64);
            (corpus, Some(spec))
        }
    };
    let checksum = sha256_hex(corpus.to_jsonl().as_bytes());
    Ok((corpus, spec, checksum))
}

fn classifier_for(train: &Corpus, role: Role, cfg: &TrainConfig) -> Result<StrategyClassifier> {
    let (x, y) = labeled_turns(train, role);
    let vocab = if role == Role::EE { &train.ee_vocab } else { &train.er_vocab };
    train_classifier(&x, &y, vocab, cfg)
}

fn shared_stages(
    cfg: &ExperimentConfig,
    bundle: &mut Bundle,
    report: &mut Report,
    stage: &mut &'static str,
) -> Result<Shared> {
    *stage = "ingest";
    let (raw, spec, checksum) = corpus_stage(cfg, report)?;
    let (train_raw, test_raw) = split(&raw, cfg.train_fraction, rng::derive_seed(&[cfg.seed, 0x5917]))?;
    report.corpus = Some(CorpusSummary {
        synthetic: spec.is_some(),
        checksum: checksum.clone(),
        dialogues: raw.dialogues.len(),
        train: train_raw.dialogues.len(),
        test: test_raw.dialogues.len(),
    });
    let corpus_key = key_of(&(&checksum, cfg.train_fraction, cfg.seed))?;

    *stage = "annotate";
    let strat_key = key_of(&("strategy", &corpus_key, &cfg.strategy))?;
    let (ee, er): (StrategyClassifier, StrategyClassifier) = bundle.stage("strategy", &strat_key, || {
        Ok((
            classifier_for(&train_raw, Role::EE, &cfg.strategy)?,
            classifier_for(&train_raw, Role::ER, &cfg.strategy)?,
        ))
    })?;
    let missing = raw.dialogues.iter().flat_map(|d| &d.turns).filter(|t| t.strategy.is_none()).count();
    let corpus = annotate(&raw, &ee, &er)?;
    let (train, test) = split(&corpus, cfg.train_fraction, rng::derive_seed(&[cfg.seed, 0x5917]))?;
    let acc = |clf: &StrategyClassifier, role| {
        let (x, y) = labeled_turns(&test_raw, role);
        if x.is_empty() { Ok(f64::NAN) } else { clf.accuracy(&x, &y) }
    };
    report.strategy = Some(StrategySummary {
        ee_test_accuracy: acc(&ee, Role::EE)?,
        er_test_accuracy: acc(&er, Role::ER)?,
        annotated_turns: missing,
    });

    *stage = "tp3m";
    let has_ocean = train.dialogues.iter().any(|d| d.ocean.is_some());
    let needs_latent = cfg.variants.iter().any(|v| v.latent);
    let tp3m_key = key_of(&("tp3m", &corpus_key, &cfg.tp3m))?;
    let tp3m = if has_ocean {
        let m: Tp3m = bundle.stage("tp3m", &tp3m_key, || train_tp3m(&train, &cfg.tp3m))?;
        if test.dialogues.iter().filter(|d| d.ocean.is_some()).count() >= personality::MIN_CCA_DIALOGUES {
            report.personality = Some(personality::evaluate(&m, &test, 4)?);
        }
        Some(m)
    } else if needs_latent {
        return Err(Error::Config("latent variants need OCEAN labels in the corpus".into()));
    } else {
        None
    };

    *stage = "discover";
    let matrix = build_strategy_matrix(&corpus)?;
    let graph_key = key_of(&("graph", &corpus_key, &strat_key, &cfg.grasp))?;
    let (graph, dropped): (CausalGraph, usize) = bundle.stage("graph", &graph_key, || {
        let g = search(&matrix, &cfg.grasp)?;
        Ok(orient_filter(&g, &corpus.ee_vocab, &corpus.er_vocab))
    })?;
    bundle.write("graph.json", &graph.to_json())?;
    let found = graph.edge_pairs();
    let f1_score = spec.as_ref().map(|s| f1(&found, &s.named_edges().into_iter().collect()).2);
    let bootstrap = if cfg.bootstrap > 0 {
        Some(bootstrap_stability(&matrix, &corpus.ee_vocab, &corpus.er_vocab, &cfg.grasp, cfg.bootstrap)?)
    } else {
        None
    };
    report.discovery = Some(DiscoverySummary {
        edges: found.into_iter().collect(),
        dropped_edges: dropped,
        graph_checksum: graph.checksum(),
        f1: f1_score,
        bootstrap,
    });

    *stage = "train-reward";
    let ddp_key = key_of(&("ddp", &corpus_key, cfg.ddp_ridge))?;
    let ddp: DdpModel = bundle.stage("ddp", &ddp_key, || train_ddp(&train, cfg.ddp_ridge, cfg.seed))?;
    let pred: Vec<f64> = test.dialogues.iter().map(|d| ddp.predict(d)).collect();
    let truth: Vec<f64> = test.dialogues.iter().map(|d| d.donation_ee).collect();
    let factual = reward::factual_series(&corpus.dialogues)?;
    let predicted = reward::evaluate(&ddp, &corpus.dialogues)?;
    bundle.write("curves/factual-actual.csv", &factual.to_csv())?;
    bundle.write("curves/factual-ddp.csv", &predicted.to_csv())?;
    report.reward = Some(RewardSummary {
        test: regression_metrics(&pred, &truth)?,
        factual_total: factual.total(),
        factual_predicted_total: predicted.total(),
    });

    Ok(Shared { corpus, train, tp3m, ee_classifier: ee, graph, ddp, corpus_key, strategy_key: strat_key, tp3m_key })
}

fn run_variant(
    cfg: &ExperimentConfig,
    shared: &Shared,
    engines: &mut BTreeMap<(EngineKind, bool), Engine>,
    bundle: &mut Bundle,
    variant: Variant,
) -> Result<VariantReport> {
    let tp3m = if variant.latent { shared.tp3m.as_ref() } else { None };
    let ekey = (variant.engine, variant.latent);
    let latent_key = if variant.latent { shared.tp3m_key.as_str() } else { "" };
    let engine_key = key_of(&("engine", &shared.corpus_key, latent_key, variant.engine, &cfg.scm, &cfg.kqr))?;
    if !engines.contains_key(&ekey) {
        let key = &engine_key;
        let name = format!("engine-{}-{}", variant.engine_name(), if variant.latent { "latent" } else { "nolatent" });
        let engine: Engine = bundle.stage(&name, key, || {
            let samples = engine_samples(&shared.train, tp3m)?;
            fit_engine(variant.engine, &samples, &cfg.scm, &cfg.kqr)
        })?;
        engines.insert(ekey, engine);
    }
    let index = build_index(&shared.corpus)?;
    let ctx = CfContext {
        engine: &engines[&ekey],
        graph: &shared.graph,
        index: &index,
        tp3m,
        ee_classifier: Some(&shared.ee_classifier),
    };
    let build = BuildConfig {
        n_databases: cfg.n_databases,
        actions: variant.actions,
        seed: rng::derive_seed(&[cfg.seed, 0xCFDB, variant.actions as u64]),
    };
    let databases = build_database(&shared.corpus, &ctx, &build)?;
    let variant_key = key_of(&(&engine_key, &shared.strategy_key, shared.graph.checksum(), &build))?;
    let sets: Vec<&[crate::Dialogue]> = databases.iter().map(|db| db.dialogues.as_slice()).collect();
    let mean_curve = reward::evaluate_mean(&shared.ddp, &sets)?;
    let database_totals: Vec<f64> = databases
        .iter()
        .map(|db| reward::evaluate(&shared.ddp, &db.dialogues).map(|s| s.total()))
        .collect::<Result<_>>()?;
    let name = variant.name();
    bundle.write(&format!("curves/{name}.csv"), &mean_curve.to_csv())?;
    let policy = if cfg.policy.updates > 0 {
        let (curve, trained) = policy_stage(cfg, shared, &databases, bundle, &name, &variant_key)?;
        bundle.write(&format!("curves/{name}-policy.csv"), &curve.to_csv())?;
        Some(PolicySummary {
            total: curve.total(),
            final_loss: trained.loss_trace.last().copied().unwrap_or(f64::NAN),
        })
    } else {
        None
    };
    Ok(VariantReport { name, variant, total: mean_curve.total(), database_totals, policy })
}

fn policy_stage(
    cfg: &ExperimentConfig,
    shared: &Shared,
    databases: &[CfDatabase],
    bundle: &mut Bundle,
    name: &str,
    variant_key: &str,
) -> Result<(CumulativeRewardSeries, TrainedPolicy)> {
    let key = key_of(&("policy", variant_key, &cfg.policy, &shared.ddp))?;
    let trained: TrainedPolicy = bundle.stage(&format!("policy-{name}"), &key, || {
        policy::train(databases, &shared.corpus, &shared.ddp, &cfg.policy)
    })?;
    let best = policy::rollout(&trained.net, databases)?;
    Ok((reward::evaluate(&shared.ddp, &best)?, trained))
}

fn run_stages(cfg: &ExperimentConfig, bundle: &mut Bundle, report: &mut Report, stage: &mut &'static str) -> Result<()> {
    let shared = shared_stages(cfg, bundle, report, stage)?;
    let mut engines = BTreeMap::new();
    *stage = "build-cf";
    for &variant in &cfg.variants {
        let r = run_variant(cfg, &shared, &mut engines, bundle, variant)?;
        report.variants.push(r);
    }
    Ok(())
}

/// Runs every stage and writes the bundle into `out`. On failure the report
/// is still written, with the failing stage recorded.
pub fn run_pipeline(config: &ExperimentConfig, out: impl AsRef<Path>) -> Result<Report> {
    config.validate()?;
    let cfg = config.resolved();
    let hash = config.hash()?;
    let mut bundle = Bundle::create(out.as_ref(), hash.clone(), cfg.seed)?;
    let mut report = Report::new(hash, cfg.seed);
    let mut stage = "config";
    bundle.write("config.json", &to_json(&cfg)?)?;
    match run_stages(&cfg, &mut bundle, &mut report, &mut stage) {
        Ok(()) => {
            report.status = "ok".into();
            bundle.finish(&report)?;
            Ok(report)
        }
        Err(e) => {
            report.status = "failed".into();
            report.error = Some(StageError { stage: stage.to_string(), message: e.to_string() });
            bundle.finish(&report)?;
            Err(e.in_stage(stage))
        }
    }
}

/// Per-variant totals as a text table plus plot-ready CSV with one
/// cumulative-reward column per curve.
pub fn report(bundle_dir: impl AsRef<Path>) -> Result<(String, String)> {
    let dir = bundle_dir.as_ref();
    let rep = Report::load(dir.join("report.json"))?;
    let mut curves: Vec<(String, Vec<f64>)> = Vec::new();
    let mut read_curve = |name: &str| -> Result<Vec<f64>> {
        let p = dir.join("curves").join(format!("{name}.csv"));
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let values = text
            .lines()
            .skip(1)
            .map(|l| {
                l.rsplit(',')
                    .next()
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::Parse { line: 0, msg: format!("bad curve row in {}", p.display()) })
            })
            .collect::<Result<Vec<f64>>>()?;
        curves.push((name.to_string(), values.clone()));
        Ok(values)
    };
    let mut table = format!("{:<28} {:>12} {:>12}\n", "variant", "total", "policy");
    if rep.reward.is_some() {
        for name in ["factual-actual", "factual-ddp"] {
            let c = read_curve(name)?;
            table.push_str(&format!("{name:<28} {:>12.2} {:>12}\n", c.last().copied().unwrap_or(0.0), "-"));
        }
    }
    for v in &rep.variants {
        let c = read_curve(&v.name)?;
        let policy = match &v.policy {
            Some(_) => format!("{:.2}", read_curve(&format!("{}-policy", v.name))?.last().copied().unwrap_or(0.0)),
            None => "-".into(),
        };
        table.push_str(&format!("{:<28} {:>12.2} {:>12}\n", v.name, c.last().copied().unwrap_or(0.0), policy));
    }
    let rows = curves.iter().map(|(_, c)| c.len()).max().unwrap_or(0);
    let mut csv = String::from("k");
    for (name, _) in &curves {
        csv.push(',');
        csv.push_str(name);
    }
    csv.push('\n');
    for k in 0..rows {
        csv.push_str(&k.to_string());
        for (_, c) in &curves {
            csv.push(',');
            if let Some(v) = c.get(k) {
                csv.push_str(&v.to_string());
            }
        }
        csv.push('\n');
    }
    Ok((table, csv))
}
