//! Embedding → strategy classification per role, cross-validation, and the
//! intra/inter-strategy similarity diagnostic.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Role};
use crate::error::{Error, Result};
use crate::numcore::{
    argmax, cosine, rows_to_matrix, softmax, softmax_cross_entropy_batch, train_minibatch,
    Activation, FeedForwardNet, OptimizerKind, TrainConfig,
};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyVocab {
    pub role: Role,
    pub names: Vec<String>,
}

impl StrategyVocab {
    pub fn new(role: Role, names: Vec<String>) -> Self {
        StrategyVocab { role, names }
    }

    /// Like [`StrategyVocab::new`] but rejects duplicate names.
    pub fn try_new(role: Role, names: Vec<String>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for n in &names {
            if !seen.insert(n) {
                return Err(Error::InvalidInput(format!("duplicate {role} strategy {n:?}")));
            }
        }
        Ok(StrategyVocab { role, names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Multinomial logistic regression over embeddings for one role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyClassifier {
    pub role: Role,
    pub names: Vec<String>,
    pub net: FeedForwardNet,
}

pub fn default_classifier_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.05,
        batch_size: 64,
        epochs: 60,
        seed,
        optimizer: OptimizerKind::Adam,
        l2_penalty: 1e-4,
    }
}

/// Embeddings and label indices of every labeled turn of `role`.
pub fn labeled_turns(corpus: &Corpus, role: Role) -> (Vec<Vec<f64>>, Vec<usize>) {
    let vocab = corpus.vocab(role);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for t in corpus.dialogues.iter().flat_map(|d| &d.turns) {
        if t.role != role {
            continue;
        }
        if let Some(idx) = t.strategy.as_deref().and_then(|s| vocab.index_of(s)) {
            x.push(t.embedding.clone());
            y.push(idx);
        }
    }
    (x, y)
}

pub fn train_classifier(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    vocab: &StrategyVocab,
    config: &TrainConfig,
) -> Result<StrategyClassifier> {
    if embeddings.len() != labels.len() || embeddings.is_empty() {
        return Err(Error::InsufficientData("classifier needs labeled examples".into()));
    }
    let k = vocab.len();
    if labels.iter().any(|&l| l >= k) {
        return Err(Error::InvalidInput("label outside vocabulary".into()));
    }
    let distinct: std::collections::BTreeSet<_> = labels.iter().collect();
    if distinct.len() < 2 {
        return Err(Error::InsufficientData("single-class data".into()));
    }
    let dim = embeddings[0].len();
    let x = rows_to_matrix(embeddings, dim);
    let mut net = FeedForwardNet::new(&[dim, k], &[Activation::Identity], config.seed)?;
    train_minibatch(&mut net, &x, config, |out, rows| {
        let lab: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
        softmax_cross_entropy_batch(out, &lab)
    })?;
    Ok(StrategyClassifier {
        role: vocab.role,
        names: vocab.names.clone(),
        net,
    })
}

impl StrategyClassifier {
    /// Probability vector and the argmax index (lowest index on ties).
    pub fn predict(&self, embedding: &[f64]) -> Result<(Vec<f64>, usize)> {
        if embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite embedding".into()));
        }
        let logits = self.net.forward(embedding)?;
        Ok((softmax(&logits), argmax(&logits)))
    }

    pub fn predict_name(&self, embedding: &[f64]) -> Result<&str> {
        let (_, k) = self.predict(embedding)?;
        Ok(&self.names[k])
    }

    pub fn predict_batch(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        let logits = self.net.predict_batch(x)?;
        Ok(logits
            .row_iter()
            .map(|r| argmax(&r.iter().copied().collect::<Vec<_>>()))
            .collect())
    }

    pub fn accuracy(&self, embeddings: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
        if embeddings.is_empty() {
            return Ok(f64::NAN);
        }
        let x = rows_to_matrix(embeddings, embeddings[0].len());
        let pred = self.predict_batch(&x)?;
        let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

/// One-hot vector of the argmax of `probs`.
pub fn one_hot(k: usize, idx: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[idx] = 1.0;
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub fold_accuracies: Vec<f64>,
    pub folds: Vec<Vec<usize>>,
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::InvalidInput("need at least 2 folds".into()));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut out = vec![Vec::new(); folds];
    let mut rng = rng::stream(&[seed, 0xF01D]);
    let mut offset = 0;
    for (class, mut members) in by_class {
        if members.len() < folds {
            return Err(Error::InsufficientData(format!(
                "class {class} has {} examples, fewer than {folds} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for (j, m) in members.into_iter().enumerate() {
            out[(j + offset) % folds].push(m);
        }
        offset += 1;
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

pub fn crossval(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    vocab: &StrategyVocab,
    config: &TrainConfig,
    folds: usize,
    seed: u64,
) -> Result<CrossValidation> {
    let assignment = stratified_folds(labels, folds, seed)?;
    let mut accs = Vec::with_capacity(folds);
    for (f, test) in assignment.iter().enumerate() {
        let in_test: std::collections::BTreeSet<_> = test.iter().copied().collect();
        let train: Vec<usize> = (0..labels.len()).filter(|i| !in_test.contains(i)).collect();
        let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<usize>) {
            (
                idx.iter().map(|&i| embeddings[i].clone()).collect(),
                idx.iter().map(|&i| labels[i]).collect(),
            )
        };
        let (xtr, ytr) = pick(&train);
        let (xte, yte) = pick(test);
        let cfg = TrainConfig {
            seed: rng::derive_seed(&[config.seed, f as u64]),
            ..config.clone()
        };
        let clf = train_classifier(&xtr, &ytr, vocab, &cfg)?;
        accs.push(clf.accuracy(&xte, &yte)?);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / accs.len() as f64;
    Ok(CrossValidation {
        mean_accuracy: mean,
        std_accuracy: var.sqrt(),
        fold_accuracies: accs,
        folds: assignment,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub intra: f64,
    pub inter: f64,
    pub strategies: usize,
}

/// `intra`: mean cosine over all same-strategy utterance pairs.
/// `inter`: mean cosine over unordered pairs of strategy centroids.
/// Only strategies with at least two utterances participate.
pub fn similarity_report<K: Ord + Clone>(items: &[(K, Vec<f64>)]) -> Result<SimilarityReport> {
    let mut groups: BTreeMap<K, Vec<&Vec<f64>>> = BTreeMap::new();
    for (k, v) in items {
        groups.entry(k.clone()).or_default().push(v);
    }
    groups.retain(|_, g| g.len() >= 2);
    if groups.len() < 2 {
        return Err(Error::InsufficientData(
            "similarity report needs 2 strategies with 2+ utterances".into(),
        ));
    }
    let mut intra_sum = 0.0;
    let mut intra_n = 0usize;
    let mut centroids = Vec::with_capacity(groups.len());
    for g in groups.values() {
        for i in 0..g.len() {
            for j in i + 1..g.len() {
                intra_sum += cosine(g[i], g[j]);
                intra_n += 1;
            }
        }
        let dim = g[0].len();
        let mut c = vec![0.0; dim];
        for v in g {
            for (ci, vi) in c.iter_mut().zip(v.iter()) {
                *ci += vi / g.len() as f64;
            }
        }
        centroids.push(c);
    }
    let mut inter_sum = 0.0;
    let mut inter_n = 0usize;
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            inter_sum += cosine(&centroids[i], &centroids[j]);
            inter_n += 1;
        }
    }
    Ok(SimilarityReport {
        intra: intra_sum / intra_n as f64,
        inter: inter_sum / inter_n as f64,
        strategies: groups.len(),
    })
}

/// Similarity report over all labeled turns of both roles.
pub fn corpus_similarity(corpus: &Corpus) -> Result<SimilarityReport> {
    let items: Vec<((Role, String), Vec<f64>)> = corpus
        .dialogues
        .iter()
        .flat_map(|d| &d.turns)
        .filter_map(|t| {
            t.strategy
                .as_ref()
                .map(|s| ((t.role, s.clone()), t.embedding.clone()))
        })
        .collect();
    similarity_report(&items)
}

/// Fills every missing strategy label with the classifier prediction.
pub fn annotate(
    corpus: &Corpus,
    ee: &StrategyClassifier,
    er: &StrategyClassifier,
) -> Result<Corpus> {
    if ee.role != Role::EE || er.role != Role::ER {
        return Err(Error::InvalidInput("classifiers passed for the wrong roles".into()));
    }
    let mut out = corpus.clone();
    for t in out.dialogues.iter_mut().flat_map(|d| d.turns.iter_mut()) {
        if t.strategy.is_none() {
            let clf = if t.role == Role::EE { ee } else { er };
            t.strategy = Some(clf.predict_name(&t.embedding)?.to_string());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn clusters(k: usize, per: usize, dim: usize, spread: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = rng::stream(&[seed]);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for c in 0..k {
            for _ in 0..per {
                let mut v: Vec<f64> = (0..dim).map(|_| spread * rng.sample::<f64, _>(StandardNormal)).collect();
                v[c % dim] += 3.0;
                x.push(v);
                y.push(c);
            }
        }
        (x, y)
    }

    fn vocab(k: usize) -> StrategyVocab {
        StrategyVocab::new(Role::ER, (0..k).map(|i| format!("s{i}")).collect())
    }

    #[test]
    fn separable_clusters_train_to_high_accuracy() {
        let (x, y) = clusters(2, 100, 4, 0.3, 1);
        let clf = train_classifier(&x, &y, &vocab(2), &default_classifier_config(0)).unwrap();
        assert!(clf.accuracy(&x, &y).unwrap() >= 0.99);
    }

    #[test]
    fn single_class_is_rejected() {
        let (x, _) = clusters(1, 10, 3, 0.3, 1);
        let y = vec![0; 10];
        assert!(train_classifier(&x, &y, &vocab(2), &default_classifier_config(0)).is_err());
    }

    #[test]
    fn shuffled_labels_are_at_chance() {
        let mut rng = rng::stream(&[5]);
        let x: Vec<Vec<f64>> = (0..800)
            .map(|_| (0..4).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let mut y: Vec<usize> = (0..800).map(|i| i % 4).collect();
        y.shuffle(&mut rng);
        let cv = crossval(&x, &y, &vocab(4), &default_classifier_config(1), 5, 2).unwrap();
        assert!((cv.mean_accuracy - 0.25).abs() <= 0.05, "{}", cv.mean_accuracy);
    }

    #[test]
    fn crossval_is_deterministic_and_partitions() {
        let (x, y) = clusters(3, 20, 4, 0.1, 2);
        let a = crossval(&x, &y, &vocab(3), &default_classifier_config(3), 5, 9).unwrap();
        let b = crossval(&x, &y, &vocab(3), &default_classifier_config(3), 5, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mean_accuracy, 1.0);
        let mut all: Vec<usize> = a.folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..60).collect::<Vec<_>>());
        assert!(stratified_folds(&[0, 0, 1], 5, 0).is_err());
    }

    #[test]
    fn predict_distribution_and_ties() {
        let mut net = FeedForwardNet::new(&[2, 3], &[Activation::Identity], 0).unwrap();
        net.set_params_flat(&[0.0; 9]).unwrap();
        let clf = StrategyClassifier {
            role: Role::EE,
            names: vec!["a".into(), "b".into(), "c".into()],
            net,
        };
        let (p, k) = clf.predict(&[0.3, -1.0]).unwrap();
        assert_eq!(k, 0);
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
        assert!(clf.predict(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn similarity_extremes() {
        let same: Vec<(usize, Vec<f64>)> = (0..6).map(|i| (i % 2, vec![1.0, 2.0])).collect();
        let r = similarity_report(&same).unwrap();
        assert!((r.intra - 1.0).abs() < 1e-12 && (r.inter - 1.0).abs() < 1e-12);
        let ortho: Vec<(usize, Vec<f64>)> = (0..6)
            .map(|i| (i % 3, one_hot(3, i % 3)))
            .collect();
        let r = similarity_report(&ortho).unwrap();
        assert!((r.intra - 1.0).abs() < 1e-12 && r.inter.abs() < 1e-12);
        assert!(similarity_report(&[(0, vec![1.0]), (0, vec![1.0])]).is_err());
    }

    #[test]
    fn clustered_data_has_intra_above_inter() {
        let (x, y) = clusters(4, 30, 6, 0.5, 3);
        let items: Vec<_> = y.into_iter().zip(x).collect();
        let r = similarity_report(&items).unwrap();
        assert!(r.intra > r.inter);
    }

    #[test]
    fn vocab_rejects_duplicates() {
        assert!(StrategyVocab::try_new(Role::EE, vec!["a".into(), "a".into()]).is_err());
    }
}
