//! TF-IDF retrieval of counterfactual persuader utterances.
//!
//! Documents are ER utterances. Terms come from [`tokenize`];
//! `tf` is the raw count, `idf = ln((1 + N)/(1 + df)) + 1`, and every vector
//! is L2-normalized.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Corpus, Role};
use crate::error::{Error, Result};
use crate::grasp::CausalGraph;
use crate::rng;

pub const GREETING: &str = "greeting";
pub const TOP_K: usize = 3;

/// Sparse vector as `(term id, weight)` pairs sorted by term id.
pub type SparseVec = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub dialogue_id: String,
    pub turn: usize,
    pub text: String,
    pub embedding: Vec<f64>,
    pub strategy: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedUtterance {
    pub utterance: Utterance,
    pub vector: SparseVec,
    /// Strategy of the EE turn right before this one, if labeled.
    pub follows: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfIndex {
    pub vocabulary: BTreeMap<String, usize>,
    pub df: Vec<usize>,
    pub n_docs: usize,
    pub er_strategies: Vec<String>,
    pub docs: Vec<IndexedUtterance>,
}

pub fn idf(n_docs: usize, df: usize) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

fn normalize(v: &mut SparseVec) {
    let n = v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    if n > 0.0 {
        for (_, w) in v.iter_mut() {
            *w /= n;
        }
    }
}

/// Cosine of two sparse vectors; 0 if either is zero.
pub fn cosine_sparse(a: &SparseVec, b: &SparseVec) -> f64 {
    let (mut i, mut j, mut dot) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    let na = a.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    let nb = b.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn term_counts(text: &str) -> BTreeMap<String, usize> {
    let mut c = BTreeMap::new();
    for t in tokenize(text) {
        *c.entry(t).or_insert(0) += 1;
    }
    c
}

pub fn build_index(corpus: &Corpus) -> Result<TfidfIndex> {
    let mut raw = Vec::new();
    for d in &corpus.dialogues {
        for (i, t) in d.turns.iter().enumerate() {
            if t.role != Role::ER {
                continue;
            }
            let follows = i
                .checked_sub(1)
                .map(|j| &d.turns[j])
                .filter(|p| p.role == Role::EE)
                .and_then(|p| p.strategy.clone());
            raw.push((
                Utterance {
                    dialogue_id: d.id.clone(),
                    turn: t.index,
                    text: t.text.clone(),
                    embedding: t.embedding.clone(),
                    strategy: t.strategy.clone(),
                },
                follows,
                term_counts(&t.text),
            ));
        }
    }
    if raw.is_empty() {
        return Err(Error::InsufficientData("no ER utterances to index".into()));
    }
    let mut vocabulary = BTreeMap::new();
    for (_, _, counts) in &raw {
        for term in counts.keys() {
            vocabulary.entry(term.clone()).or_insert(0usize);
        }
    }
    for (id, v) in vocabulary.values_mut().enumerate() {
        *v = id;
    }
    let mut df = vec![0usize; vocabulary.len()];
    for (_, _, counts) in &raw {
        for term in counts.keys() {
            df[vocabulary[term]] += 1;
        }
    }
    let n_docs = raw.len();
    let docs = raw
        .into_iter()
        .map(|(utterance, follows, counts)| {
            let mut vector: SparseVec = counts
                .iter()
                .map(|(term, &tf)| {
                    let id = vocabulary[term];
                    (id, tf as f64 * idf(n_docs, df[id]))
                })
                .collect();
            vector.sort_by_key(|(id, _)| *id);
            normalize(&mut vector);
            IndexedUtterance {
                utterance,
                vector,
                follows,
            }
        })
        .collect();
    Ok(TfidfIndex {
        vocabulary,
        df,
        n_docs,
        er_strategies: corpus.er_vocab.names.clone(),
        docs,
    })
}

impl TfidfIndex {
    /// TF-IDF vector of arbitrary text; out-of-vocabulary terms are dropped.
    pub fn vectorize(&self, text: &str) -> SparseVec {
        let mut v: SparseVec = term_counts(text)
            .iter()
            .filter_map(|(term, &tf)| {
                let id = *self.vocabulary.get(term)?;
                Some((id, tf as f64 * idf(self.n_docs, self.df[id])))
            })
            .collect();
        v.sort_by_key(|(id, _)| *id);
        normalize(&mut v);
        v
    }

    /// Mean of the given document vectors.
    pub fn centroid<'a>(&self, docs: impl Iterator<Item = &'a IndexedUtterance>) -> SparseVec {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        let mut n = 0usize;
        for d in docs {
            n += 1;
            for &(id, w) in &d.vector {
                *acc.entry(id).or_insert(0.0) += w;
            }
        }
        acc.into_iter().map(|(id, w)| (id, w / n.max(1) as f64)).collect()
    }

    pub fn with_strategy<'a>(&'a self, strategy: &'a str) -> impl Iterator<Item = &'a IndexedUtterance> + 'a {
        self.docs
            .iter()
            .filter(move |d| d.utterance.strategy.as_deref() == Some(strategy))
    }

    /// Most frequent ER strategy label in the index, ties by vocabulary order.
    pub fn most_frequent_strategy(&self) -> Option<String> {
        let mut counts = vec![0usize; self.er_strategies.len()];
        for d in &self.docs {
            if let Some(i) = d
                .utterance
                .strategy
                .as_deref()
                .and_then(|s| self.er_strategies.iter().position(|n| n == s))
            {
                counts[i] += 1;
            }
        }
        let best = counts.iter().copied().max().filter(|&c| c > 0)?;
        let i = counts.iter().position(|&c| c == best)?;
        Some(self.er_strategies[i].clone())
    }

    fn strategy_rank(&self, name: &str) -> usize {
        self.er_strategies
            .iter()
            .position(|n| n == name)
            .unwrap_or(usize::MAX)
    }
}

/// Seed of the random stream used at position `t` of dialogue `dialogue_id`.
pub fn position_seed(seed: u64, dialogue_id: &str, t: usize) -> u64 {
    rng::derive_seed(&[seed, rng::str_hash(dialogue_id), t as u64])
}

/// Samples up to three distinct children of `cause` and keeps the one whose
/// utterance centroid is most similar to the EE utterance. Causes without
/// children fall back to the most frequent ER strategy.
pub fn select_effect_strategy(
    graph: &CausalGraph,
    cause: &str,
    index: &TfidfIndex,
    ee_utterance: &str,
    seed: u64,
) -> Result<String> {
    let mut children = graph.children(cause);
    if children.is_empty() {
        return index
            .most_frequent_strategy()
            .ok_or_else(|| Error::InsufficientData("no labeled ER utterances for fallback".into()));
    }
    if children.len() == 1 {
        return Ok(children.remove(0));
    }
    let mut rng = rng::stream(&[seed, 0x5E1E]);
    children.shuffle(&mut rng);
    children.truncate(TOP_K.min(children.len()));
    let query = index.vectorize(ee_utterance);
    let scored: Vec<(f64, usize, String)> = children
        .into_iter()
        .map(|c| {
            let sim = cosine_sparse(&index.centroid(index.with_strategy(&c)), &query);
            (sim, index.strategy_rank(&c), c)
        })
        .collect();
    let best = scored
        .into_iter()
        .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
        .expect("non-empty candidate set");
    Ok(best.2)
}

/// Ranks utterances labeled `effect` by similarity to the centroid of ER
/// utterances that followed `cause`, and draws one of the top three.
pub fn pick_counterfactual_action(
    index: &TfidfIndex,
    effect: &str,
    cause: &str,
    seed: u64,
) -> Result<Utterance> {
    let candidates: Vec<&IndexedUtterance> = index.with_strategy(effect).collect();
    if candidates.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no ER utterance labeled {effect:?}: graph and vocabulary disagree"
        )));
    }
    let followers: Vec<&IndexedUtterance> = index
        .docs
        .iter()
        .filter(|d| d.follows.as_deref() == Some(cause))
        .collect();
    let centroid = if followers.is_empty() {
        index.centroid(candidates.iter().copied())
    } else {
        index.centroid(followers.into_iter())
    };
    let mut ranked: Vec<(f64, usize)> = candidates
        .iter()
        .enumerate()
        .map(|(i, d)| (cosine_sparse(&d.vector, &centroid), i))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let k = TOP_K.min(ranked.len());
    let mut rng = rng::stream(&[seed, 0xAC7]);
    let pick = ranked[rng.random_range(0..k)].1;
    Ok(candidates[pick].utterance.clone())
}

/// Uniform draw over ER utterances whose strategy is not `greeting`.
pub fn random_action_baseline(index: &TfidfIndex, seed: u64) -> Result<Utterance> {
    let support: Vec<&IndexedUtterance> = index
        .docs
        .iter()
        .filter(|d| d.utterance.strategy.as_deref() != Some(GREETING))
        .collect();
    if support.is_empty() {
        return Err(Error::InsufficientData("only greeting ER utterances available".into()));
    }
    let mut rng = rng::stream(&[seed, 0x2A4D]);
    Ok(support[rng.random_range(0..support.len())].utterance.clone())
}

/// Precomputed rankings over a fixed index. Produces the same choices as
/// [`select_effect_strategy`], [`pick_counterfactual_action`] and
/// [`random_action_baseline`] without rescanning the index per call.
#[derive(Debug, Clone)]
pub struct ActionSelector<'a> {
    index: &'a TfidfIndex,
    support: Vec<usize>,
    strategy_centroids: BTreeMap<String, SparseVec>,
    /// `(effect, cause)` → top-ranked doc indices; cause `None` when no
    /// utterance follows it.
    top: BTreeMap<(String, Option<String>), Vec<usize>>,
    fallback: Option<String>,
}

impl<'a> ActionSelector<'a> {
    pub fn new(index: &'a TfidfIndex) -> Self {
        let support = (0..index.docs.len())
            .filter(|&i| index.docs[i].utterance.strategy.as_deref() != Some(GREETING))
            .collect();
        let strategies: std::collections::BTreeSet<String> =
            index.docs.iter().filter_map(|d| d.utterance.strategy.clone()).collect();
        let causes: std::collections::BTreeSet<String> = index.docs.iter().filter_map(|d| d.follows.clone()).collect();
        let mut strategy_centroids = BTreeMap::new();
        let mut top = BTreeMap::new();
        for effect in &strategies {
            let members: Vec<usize> = (0..index.docs.len())
                .filter(|&i| index.docs[i].utterance.strategy.as_deref() == Some(effect.as_str()))
                .collect();
            let own = index.centroid(members.iter().map(|&i| &index.docs[i]));
            top.insert((effect.clone(), None), Self::rank(index, &members, &own));
            for cause in &causes {
                let c = index.centroid(index.docs.iter().filter(|d| d.follows.as_deref() == Some(cause.as_str())));
                top.insert((effect.clone(), Some(cause.clone())), Self::rank(index, &members, &c));
            }
            strategy_centroids.insert(effect.clone(), own);
        }
        ActionSelector { index, support, strategy_centroids, top, fallback: index.most_frequent_strategy() }
    }

    fn rank(index: &TfidfIndex, members: &[usize], centroid: &SparseVec) -> Vec<usize> {
        let mut ranked: Vec<(f64, usize)> = members
            .iter()
            .enumerate()
            .map(|(i, &m)| (cosine_sparse(&index.docs[m].vector, centroid), i))
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        ranked.into_iter().take(TOP_K).map(|(_, i)| members[i]).collect()
    }

    pub fn select_effect(&self, graph: &CausalGraph, cause: &str, ee_utterance: &str, seed: u64) -> Result<String> {
        let mut children = graph.children(cause);
        if children.is_empty() {
            return self
                .fallback
                .clone()
                .ok_or_else(|| Error::InsufficientData("no labeled ER utterances for fallback".into()));
        }
        if children.len() == 1 {
            return Ok(children.remove(0));
        }
        let mut rng = rng::stream(&[seed, 0x5E1E]);
        children.shuffle(&mut rng);
        children.truncate(TOP_K.min(children.len()));
        let query = self.index.vectorize(ee_utterance);
        let empty = SparseVec::new();
        let best = children
            .into_iter()
            .map(|c| {
                let sim = cosine_sparse(self.strategy_centroids.get(&c).unwrap_or(&empty), &query);
                (sim, self.index.strategy_rank(&c), c)
            })
            .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
            .expect("non-empty candidate set");
        Ok(best.2)
    }

    pub fn pick_action(&self, effect: &str, cause: &str, seed: u64) -> Result<Utterance> {
        let key = (effect.to_string(), Some(cause.to_string()));
        let top = match self.top.get(&key) {
            Some(t) => t,
            None => self.top.get(&(effect.to_string(), None)).ok_or_else(|| {
                Error::InvalidInput(format!("no ER utterance labeled {effect:?}: graph and vocabulary disagree"))
            })?,
        };
        let mut rng = rng::stream(&[seed, 0xAC7]);
        Ok(self.index.docs[top[rng.random_range(0..top.len())]].utterance.clone())
    }

    pub fn random_action(&self, seed: u64) -> Result<Utterance> {
        if self.support.is_empty() {
            return Err(Error::InsufficientData("only greeting ER utterances available".into()));
        }
        let mut rng = rng::stream(&[seed, 0x2A4D]);
        Ok(self.index.docs[self.support[rng.random_range(0..self.support.len())]].utterance.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Dialogue, Turn};
    use crate::grasp::GraphEdge;
    use crate::strategy::StrategyVocab;

    fn turn(i: usize, role: Role, text: &str, strategy: &str) -> Turn {
        Turn {
            index: i,
            role,
            text: text.into(),
            embedding: vec![i as f64, 1.0],
            strategy: Some(strategy.into()),
            source: None,
        }
    }

    fn corpus(pairs: &[(&str, &str, &str, &str)]) -> Corpus {
        let mut ee = Vec::new();
        let mut er = Vec::new();
        let dialogues = pairs
            .iter()
            .enumerate()
            .map(|(k, &(ee_s, ee_t, er_s, er_t))| {
                ee.push(ee_s.to_string());
                er.push(er_s.to_string());
                Dialogue {
                    id: format!("d{k}"),
                    donation_ee: 0.0,
                    ocean: None,
                    counterfactual: false,
                    turns: vec![turn(0, Role::EE, ee_t, ee_s), turn(1, Role::ER, er_t, er_s)],
                }
            })
            .collect();
        for v in [&mut ee, &mut er] {
            v.sort();
            v.dedup();
        }
        Corpus::new(2, StrategyVocab::new(Role::EE, ee), StrategyVocab::new(Role::ER, er)).with_dialogues(dialogues)
    }

    fn graph(edges: &[(&str, &str)]) -> CausalGraph {
        CausalGraph {
            edges: edges
                .iter()
                .map(|&(c, e)| GraphEdge {
                    cause: c.into(),
                    effect: e.into(),
                    score: 1.0,
                    cause_role: Some(Role::EE),
                    effect_role: Some(Role::ER),
                })
                .collect(),
        }
    }

    #[test]
    fn idf_matches_formula() {
        let c = corpus(&[("x", "q", "s", "a b"), ("x", "q", "s", "b c"), ("x", "q", "s", "c d")]);
        let idx = build_index(&c).unwrap();
        let b = idx.vocabulary["b"];
        assert_eq!(idx.df[b], 2);
        let expected = (4.0f64 / 3.0).ln() + 1.0;
        assert!((idf(idx.n_docs, idx.df[b]) - expected).abs() < 1e-15);
        assert!((expected - 1.2877).abs() < 1e-4);
    }

    #[test]
    fn cosine_extremes() {
        let c = corpus(&[("x", "q", "s", "same words"), ("x", "q", "s", "same words"), ("x", "q", "s", "other text")]);
        let idx = build_index(&c).unwrap();
        assert!((cosine_sparse(&idx.docs[0].vector, &idx.docs[1].vector) - 1.0).abs() < 1e-12);
        assert_eq!(cosine_sparse(&idx.docs[0].vector, &idx.docs[2].vector), 0.0);
        for d in &idx.docs {
            let n: f64 = d.vector.iter().map(|(_, w)| w * w).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_child_is_always_selected() {
        let c = corpus(&[("x", "hi", "s1", "alpha"), ("x", "hi", "s2", "beta")]);
        let idx = build_index(&c).unwrap();
        let g = graph(&[("x", "s2")]);
        for seed in 0..20 {
            assert_eq!(select_effect_strategy(&g, "x", &idx, "alpha", seed).unwrap(), "s2");
        }
    }

    #[test]
    fn identical_text_child_wins() {
        let c = corpus(&[("x", "hi", "s1", "please donate now"), ("x", "hi", "s2", "weather talk")]);
        let idx = build_index(&c).unwrap();
        let g = graph(&[("x", "s1"), ("x", "s2")]);
        for seed in 0..20 {
            assert_eq!(select_effect_strategy(&g, "x", &idx, "please donate now", seed).unwrap(), "s1");
        }
    }

    #[test]
    fn childless_cause_falls_back_to_most_frequent() {
        let c = corpus(&[("x", "hi", "s1", "a"), ("x", "hi", "s2", "b"), ("y", "hi", "s2", "c")]);
        let idx = build_index(&c).unwrap();
        assert_eq!(select_effect_strategy(&graph(&[]), "x", &idx, "a", 0).unwrap(), "s2");
    }

    #[test]
    fn pick_respects_effect_label_and_errors_without_candidates() {
        let c = corpus(&[("x", "hi", "s1", "a b"), ("x", "hi", "s2", "b c"), ("y", "hi", "s2", "c d")]);
        let idx = build_index(&c).unwrap();
        let u = pick_counterfactual_action(&idx, "s1", "x", 3).unwrap();
        assert_eq!(u.text, "a b");
        for seed in 0..10 {
            let u = pick_counterfactual_action(&idx, "s2", "x", seed).unwrap();
            assert_eq!(u.strategy.as_deref(), Some("s2"));
            assert_eq!(u, pick_counterfactual_action(&idx, "s2", "x", seed).unwrap());
        }
        assert!(pick_counterfactual_action(&idx, "nope", "x", 0).is_err());
    }

    #[test]
    fn centroid_text_lands_in_top_three() {
        let mut rows = vec![("x", "hi", "s0", "donate to the children")];
        rows.extend(["zebra", "yak", "walrus", "vole", "donate children"].iter().map(|t| ("y", "hi", "s1", *t)));
        let c = corpus(&rows);
        let idx = build_index(&c).unwrap();
        // zero-similarity ties are ranked by position
        for seed in 0..30 {
            let u = pick_counterfactual_action(&idx, "s1", "x", seed).unwrap();
            assert!(["donate children", "zebra", "yak"].contains(&u.text.as_str()));
        }
        let hits = (0..60)
            .filter(|&s| pick_counterfactual_action(&idx, "s1", "x", s).unwrap().text == "donate children")
            .count();
        assert!(hits > 0);
    }

    fn chi_square_uniform(counts: &[usize]) -> f64 {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let n: usize = counts.iter().sum();
        let e = n as f64 / counts.len() as f64;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
    }

    #[test]
    fn identical_candidates_are_drawn_uniformly() {
        let c = corpus(&[("x", "hi", "s", "same"), ("x", "hi", "s", "same"), ("x", "hi", "s", "same")]);
        let idx = build_index(&c).unwrap();
        let mut counts = [0usize; 3];
        for seed in 0..300 {
            let u = pick_counterfactual_action(&idx, "s", "x", seed).unwrap();
            counts[u.dialogue_id[1..].parse::<usize>().unwrap()] += 1;
        }
        assert!(chi_square_uniform(&counts) > 0.01, "{counts:?}");
    }

    #[test]
    fn random_baseline_is_uniform_and_skips_greetings() {
        let c = corpus(&[
            ("x", "hi", "greeting", "hello"),
            ("x", "hi", "s1", "a"),
            ("x", "hi", "s2", "b"),
            ("x", "hi", "s1", "c"),
            ("x", "hi", "greeting", "hey"),
        ]);
        let idx = build_index(&c).unwrap();
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for seed in 0..10_000 {
            let u = random_action_baseline(&idx, seed).unwrap();
            assert_ne!(u.strategy.as_deref(), Some(GREETING));
            *counts.entry(u.text).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 3);
        assert!(chi_square_uniform(&counts.values().copied().collect::<Vec<_>>()) > 0.01);
        let only = corpus(&[("x", "hi", "greeting", "hello")]);
        assert!(random_action_baseline(&build_index(&only).unwrap(), 0).is_err());
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let c = Corpus::new(2, StrategyVocab::new(Role::EE, vec![]), StrategyVocab::new(Role::ER, vec![]));
        assert!(build_index(&c).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn cosine_is_symmetric_and_bounded(a in "[a-e ]{1,20}", b in "[a-e ]{1,20}") {
                let c = corpus(&[("x", "q", "s", &a), ("x", "q", "s", &b), ("x", "q", "s", "a b c d e")]);
                let idx = build_index(&c).unwrap();
                let (u, v) = (&idx.docs[0].vector, &idx.docs[1].vector);
                let ab = cosine_sparse(u, v);
                prop_assert!((ab - cosine_sparse(v, u)).abs() < 1e-12);
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&ab));
            }

            #[test]
            fn selector_matches_direct_selection(
                texts in proptest::collection::vec("[a-f ]{1,12}", 6),
                cause_pick in 0usize..4,
                seed in any::<u64>(),
            ) {
                let strategies = ["s0", "s1", "s2"];
                let causes = ["x", "y", "z"];
                let rows: Vec<(&str, &str, &str, &str)> = texts
                    .iter()
                    .enumerate()
                    .map(|(i, t)| (causes[i % 2], "q", strategies[i % 3], t.as_str()))
                    .collect();
                let idx = build_index(&corpus(&rows)).unwrap();
                let sel = ActionSelector::new(&idx);
                let g = graph(&[("x", "s0"), ("x", "s1"), ("x", "s2"), ("y", "s1")]);
                let cause = ["x", "y", "z", ""][cause_pick];
                let effect = select_effect_strategy(&g, cause, &idx, "a b c", seed).unwrap();
                prop_assert_eq!(&sel.select_effect(&g, cause, "a b c", seed).unwrap(), &effect);
                prop_assert_eq!(
                    sel.pick_action(&effect, cause, seed).unwrap(),
                    pick_counterfactual_action(&idx, &effect, cause, seed).unwrap()
                );
                prop_assert_eq!(sel.random_action(seed).unwrap(), random_action_baseline(&idx, seed).unwrap());
            }
        }
    }
}
