//! Counterfactual databases: corpus-shaped collections of alternative
//! state-action sequences, one per factual dialogue.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kqr::{context, KqrConfig, KqrEngine};
use super::scm::{fit_scm, ScmConfig, ScmModel, ScmSample};
use crate::corpus::{transition_windows, Corpus, Dialogue, Role, Turn, TurnSource, OCEAN_DIM};
use crate::error::{Error, Result};
use crate::grasp::CausalGraph;
use crate::personality::Tp3m;
use crate::retrieval::{position_seed, ActionSelector, TfidfIndex, Utterance};
use crate::rng;
use crate::strategy::StrategyClassifier;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    Scm,
    Kqr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionMode {
    Causal,
    Random,
    /// Replays the factual persuader turns.
    Factual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Engine {
    Scm(ScmModel),
    Kqr(KqrEngine),
}

impl Engine {
    pub fn kind(&self) -> EngineKind {
        match self {
            Engine::Scm(_) => EngineKind::Scm,
            Engine::Kqr(_) => EngineKind::Kqr,
        }
    }

    /// Residual (scm) or quantile level (kqr) of a factual step.
    pub fn abduct(&self, s: &[f64], a: &[f64], l: &[f64], s_next: &[f64]) -> Result<Vec<f64>> {
        match self {
            Engine::Scm(m) => m.abduct(s, a, l, s_next),
            Engine::Kqr(k) => k.tau(&context(s, a, l), s_next),
        }
    }

    pub fn counterfactual(&self, s: &[f64], a_prime: &[f64], l: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
        match self {
            Engine::Scm(m) => m.counterfactual(s, a_prime, l, noise),
            Engine::Kqr(k) => k.quantile(&context(s, a_prime, l), noise),
        }
    }
}

/// Trait estimate for the factual pair `(a_{t−1}, s_t)`; zeros without a model.
pub fn latent(tp3m: Option<&Tp3m>, a_prev: &[f64], s: &[f64]) -> Result<Vec<f64>> {
    match tp3m {
        Some(m) => Ok(m.predict_ocean(a_prev, s)?.0.to_vec()),
        None => Ok(vec![0.0; OCEAN_DIM]),
    }
}

fn previous_action(d: &Dialogue, ee_turn: usize) -> Vec<f64> {
    match ee_turn.checked_sub(1).map(|j| &d.turns[j]) {
        Some(p) if p.role == Role::ER => p.embedding.clone(),
        _ => vec![0.0; d.turns[ee_turn].embedding.len()],
    }
}

/// Factual steps of `corpus` with their trait estimates.
pub fn engine_samples(corpus: &Corpus, tp3m: Option<&Tp3m>) -> Result<Vec<ScmSample>> {
    let per_dialogue: Vec<Vec<ScmSample>> = corpus
        .dialogues
        .par_iter()
        .map(|d| {
            transition_windows(d)?
                .into_iter()
                .map(|(i, j, k)| {
                    Ok(ScmSample {
                        s: d.turns[i].embedding.clone(),
                        a: d.turns[j].embedding.clone(),
                        l: latent(tp3m, &previous_action(d, i), &d.turns[i].embedding)?,
                        s_next: d.turns[k].embedding.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(per_dialogue.into_iter().flatten().collect())
}

pub fn fit_engine(kind: EngineKind, samples: &[ScmSample], scm: &ScmConfig, kqr: &KqrConfig) -> Result<Engine> {
    match kind {
        EngineKind::Scm => Ok(Engine::Scm(fit_scm(samples, scm)?)),
        EngineKind::Kqr => {
            let ctx: Vec<Vec<f64>> = samples.iter().map(|x| context(&x.s, &x.a, &x.l)).collect();
            let y: Vec<Vec<f64>> = samples.iter().map(|x| x.s_next.clone()).collect();
            Ok(Engine::Kqr(KqrEngine::fit(&ctx, &y, kqr)?))
        }
    }
}

/// Trained components consulted while building databases.
pub struct CfContext<'a> {
    pub engine: &'a Engine,
    pub graph: &'a CausalGraph,
    pub index: &'a TfidfIndex,
    /// `None` feeds a zero trait vector (latent off).
    pub tp3m: Option<&'a Tp3m>,
    pub ee_classifier: Option<&'a StrategyClassifier>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub n_databases: usize,
    pub actions: ActionMode,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfDatabase {
    pub index: usize,
    pub engine: EngineKind,
    pub actions: ActionMode,
    pub latent: bool,
    pub graph_checksum: String,
    pub seed: u64,
    pub dialogues: Vec<Dialogue>,
}

impl CfDatabase {
    /// Corpus form, with the provenance block in the header.
    pub fn to_corpus(&self, template: &Corpus) -> Corpus {
        let mut c = template.with_dialogues(self.dialogues.clone());
        let mut prov = BTreeMap::new();
        prov.insert("database".to_string(), serde_json::json!(self.index));
        prov.insert("engine".to_string(), serde_json::json!(self.engine));
        prov.insert("actions".to_string(), serde_json::json!(self.actions));
        prov.insert("latent".to_string(), serde_json::json!(self.latent));
        prov.insert("graph_checksum".to_string(), serde_json::json!(self.graph_checksum));
        prov.insert("seed".to_string(), serde_json::json!(self.seed));
        c.provenance = Some(prov);
        c
    }

    /// Inverse of [`CfDatabase::to_corpus`].
    pub fn from_corpus(corpus: &Corpus) -> Result<CfDatabase> {
        let prov = corpus
            .provenance
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("corpus carries no counterfactual provenance".into()))?;
        fn field<T: serde::de::DeserializeOwned>(prov: &BTreeMap<String, serde_json::Value>, key: &str) -> Result<T> {
            let v = prov.get(key).ok_or_else(|| Error::InvalidInput(format!("provenance lacks {key:?}")))?;
            serde_json::from_value(v.clone()).map_err(|e| Error::InvalidInput(format!("provenance {key:?}: {e}")))
        }
        Ok(CfDatabase {
            index: field(prov, "database")?,
            engine: field(prov, "engine")?,
            actions: field(prov, "actions")?,
            latent: field(prov, "latent")?,
            graph_checksum: field(prov, "graph_checksum")?,
            seed: field(prov, "seed")?,
            dialogues: corpus.dialogues.clone(),
        })
    }
}

/// Factual step data shared by every database.
struct Abducted {
    windows: Vec<(usize, usize, usize)>,
    latents: Vec<Vec<f64>>,
    noise: Vec<Vec<f64>>,
}

fn abduct_dialogue(d: &Dialogue, ctx: &CfContext) -> Result<Abducted> {
    let windows = transition_windows(d)?;
    let mut latents = Vec::with_capacity(windows.len());
    let mut noise = Vec::with_capacity(windows.len());
    for &(i, j, k) in &windows {
        let s = &d.turns[i].embedding;
        let l = latent(ctx.tp3m, &previous_action(d, i), s)?;
        noise.push(ctx.engine.abduct(s, &d.turns[j].embedding, &l, &d.turns[k].embedding)?);
        latents.push(l);
    }
    Ok(Abducted { windows, latents, noise })
}

fn ee_label(ctx: &CfContext, embedding: &[f64], factual: &Turn) -> Result<Option<String>> {
    match ctx.ee_classifier {
        Some(c) => Ok(Some(c.predict_name(embedding)?.to_string())),
        None => Ok(factual.strategy.clone()),
    }
}

fn choose_action(
    ctx: &CfContext,
    sel: &ActionSelector,
    mode: ActionMode,
    d: &Dialogue,
    (ee, er): (usize, usize),
    cause: Option<&str>,
    seed: u64,
) -> Result<Utterance> {
    match mode {
        ActionMode::Factual => {
            let t = &d.turns[er];
            Ok(Utterance {
                dialogue_id: d.id.clone(),
                turn: t.index,
                text: t.text.clone(),
                embedding: t.embedding.clone(),
                strategy: t.strategy.clone(),
            })
        }
        ActionMode::Random => sel.random_action(seed),
        ActionMode::Causal => {
            let cause = cause.unwrap_or("");
            let effect = sel.select_effect(ctx.graph, cause, &d.turns[ee].text, seed)?;
            sel.pick_action(&effect, cause, rng::derive_seed(&[seed, 1]))
        }
    }
}

fn counterfactual_dialogue(
    d: &Dialogue,
    ab: &Abducted,
    ctx: &CfContext,
    sel: &ActionSelector,
    mode: ActionMode,
    db_seed: u64,
) -> Result<Dialogue> {
    let mut turns: Vec<Turn> = d.turns[..ab.windows.first().map_or(d.turns.len(), |w| w.0 + 1)].to_vec();
    for t in &mut turns {
        t.source = Some(TurnSource::Factual);
    }
    let Some(&(first, _, _)) = ab.windows.first() else {
        return Ok(Dialogue { counterfactual: true, turns, ..d.clone() });
    };
    let mut s = d.turns[first].embedding.clone();
    let mut cause = ee_label(ctx, &s, &d.turns[first])?;
    let mut last = first;
    for (t, &(i, j, k)) in ab.windows.iter().enumerate() {
        let seed = position_seed(db_seed, &d.id, t);
        let act = choose_action(ctx, sel, mode, d, (i, j), cause.as_deref(), seed)?;
        let s_next = ctx.engine.counterfactual(&s, &act.embedding, &ab.latents[t], &ab.noise[t])?;
        let next_label = ee_label(ctx, &s_next, &d.turns[k])?;
        turns.push(Turn {
            index: j,
            role: Role::ER,
            text: act.text,
            embedding: act.embedding,
            strategy: act.strategy,
            source: Some(TurnSource::CfAction),
        });
        turns.push(Turn {
            index: k,
            role: Role::EE,
            text: d.turns[k].text.clone(),
            embedding: s_next.clone(),
            strategy: next_label.clone(),
            source: Some(TurnSource::CfState),
        });
        s = s_next;
        cause = next_label;
        last = k;
    }
    for t in &d.turns[last + 1..] {
        turns.push(Turn { source: Some(TurnSource::Factual), ..t.clone() });
    }
    Ok(Dialogue {
        id: d.id.clone(),
        donation_ee: d.donation_ee,
        ocean: d.ocean,
        counterfactual: true,
        turns,
    })
}

/// Builds `n_databases` databases that differ only in their random streams.
pub fn build_database(corpus: &Corpus, ctx: &CfContext, config: &BuildConfig) -> Result<Vec<CfDatabase>> {
    if config.n_databases == 0 {
        return Err(Error::Config("need at least one database".into()));
    }
    let abducted: Vec<Abducted> = corpus
        .dialogues
        .par_iter()
        .map(|d| abduct_dialogue(d, ctx))
        .collect::<Result<_>>()?;
    let m = corpus.dialogues.len();
    let sel = ActionSelector::new(ctx.index);
    let cells: Vec<Dialogue> = (0..config.n_databases * m)
        .into_par_iter()
        .map(|cell| {
            let (i, di) = (cell / m, cell % m);
            let db_seed = rng::derive_seed(&[config.seed, 0xCFDB, i as u64]);
            counterfactual_dialogue(&corpus.dialogues[di], &abducted[di], ctx, &sel, config.actions, db_seed)
        })
        .collect::<Result<_>>()?;
    let checksum = ctx.graph.checksum();
    let mut cells = cells.into_iter();
    Ok((0..config.n_databases)
        .map(|i| CfDatabase {
            index: i,
            engine: ctx.engine.kind(),
            actions: config.actions,
            latent: ctx.tp3m.is_some(),
            graph_checksum: checksum.clone(),
            seed: config.seed,
            dialogues: cells.by_ref().take(m).collect(),
        })
        .collect())
}
