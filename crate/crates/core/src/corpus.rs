//! Dialogue corpus: data model, JSONL ingest and export, splits, transition
//! extraction, and a deterministic hashing embedder.
//!
//! File layout is one JSON object per line. The first line is a header
//! carrying `embedding_dim`, `ee_vocab` and `er_vocab` (plus an optional
//! `provenance` object); each following line is one dialogue.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::strategy::StrategyVocab;

/// Donations above this are clipped at ingest.
pub const DONATION_CAP: f64 = 10.0;
pub const OCEAN_DIM: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    EE,
    ER,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::EE => "EE",
            Role::ER => "ER",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        match s {
            "EE" => Some(Role::EE),
            "ER" => Some(Role::ER),
            _ => None,
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TurnSource {
    Factual,
    CfAction,
    CfState,
}

/// OCEAN trait scores on the 1..5 inventory scale.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OceanVector(pub [f64; 5]);

impl OceanVector {
    pub const ZERO: OceanVector = OceanVector([0.0; 5]);

    pub fn o(&self) -> f64 {
        self.0[0]
    }
    pub fn c(&self) -> f64 {
        self.0[1]
    }
    pub fn e(&self) -> f64 {
        self.0[2]
    }
    pub fn a(&self) -> f64 {
        self.0[3]
    }
    pub fn n(&self) -> f64 {
        self.0[4]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn in_inventory_range(&self) -> bool {
        self.0.iter().all(|v| (1.0..=5.0).contains(v))
    }

    /// Clamps onto [1, 5]; the flag reports whether anything moved.
    pub fn clamped(&self) -> (OceanVector, bool) {
        let mut out = *self;
        let mut moved = false;
        for v in &mut out.0 {
            let c = v.clamp(1.0, 5.0);
            moved |= c != *v;
            *v = c;
        }
        (out, moved)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    #[serde(rename = "t")]
    pub index: usize,
    pub role: Role,
    pub text: String,
    pub embedding: Vec<f64>,
    pub strategy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<TurnSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub donation_ee: f64,
    pub ocean: Option<OceanVector>,
    pub counterfactual: bool,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    pub fn turn_sources(&self) -> Vec<TurnSource> {
        self.turns
            .iter()
            .map(|t| t.source.unwrap_or(TurnSource::Factual))
            .collect()
    }

    pub fn turns_of(&self, role: Role) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(move |t| t.role == role)
    }

    /// Rejects consecutive turns of the same role.
    pub fn check_alternation(&self) -> Result<()> {
        for w in self.turns.windows(2) {
            if w[0].role == w[1].role {
                return Err(Error::InvalidDialogue {
                    id: self.id.clone(),
                    msg: format!("consecutive {} turns at t={}", w[0].role, w[1].index),
                });
            }
        }
        Ok(())
    }

    /// `(a_{t-1}, s_t)` for every EE turn; the first EE turn pairs with a
    /// zero action unless an ER turn precedes it.
    pub fn action_state_pairs(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut out = Vec::new();
        for (i, turn) in self.turns.iter().enumerate() {
            if turn.role != Role::EE {
                continue;
            }
            let prev = match i.checked_sub(1).map(|j| &self.turns[j]) {
                Some(p) if p.role == Role::ER => p.embedding.clone(),
                _ => vec![0.0; turn.embedding.len()],
            };
            out.push((prev, turn.embedding.clone()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    embedding_dim: usize,
    ee_vocab: Vec<String>,
    er_vocab: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<BTreeMap<String, serde_json::Value>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub embedding_dim: usize,
    pub ee_vocab: StrategyVocab,
    pub er_vocab: StrategyVocab,
    pub dialogues: Vec<Dialogue>,
    /// Free-form header metadata (used by counterfactual databases).
    pub provenance: Option<BTreeMap<String, serde_json::Value>>,
}

#[derive(Debug, Deserialize)]
struct RawTurn {
    t: usize,
    role: String,
    text: String,
    embedding: Vec<f64>,
    strategy: Option<String>,
    #[serde(default)]
    source: Option<TurnSource>,
}

#[derive(Debug, Deserialize)]
struct RawDialogue {
    id: String,
    donation_ee: f64,
    ocean: Option<[f64; 5]>,
    counterfactual: bool,
    turns: Vec<RawTurn>,
}

/// `min(amount, 10)` for finite non-negative amounts.
pub fn clip_donation(amount: f64) -> Result<f64> {
    if !amount.is_finite() || amount < 0.0 {
        return Err(Error::InvalidInput(format!("donation {amount} must be finite and >= 0")));
    }
    Ok(amount.min(DONATION_CAP))
}

impl Corpus {
    pub fn new(embedding_dim: usize, ee_vocab: StrategyVocab, er_vocab: StrategyVocab) -> Self {
        Corpus {
            embedding_dim,
            ee_vocab,
            er_vocab,
            dialogues: Vec::new(),
            provenance: None,
        }
    }

    pub fn empty() -> Self {
        Corpus::new(0, StrategyVocab::new(Role::EE, vec![]), StrategyVocab::new(Role::ER, vec![]))
    }

    pub fn vocab(&self, role: Role) -> &StrategyVocab {
        match role {
            Role::EE => &self.ee_vocab,
            Role::ER => &self.er_vocab,
        }
    }

    pub fn with_dialogues(&self, dialogues: Vec<Dialogue>) -> Corpus {
        Corpus {
            embedding_dim: self.embedding_dim,
            ee_vocab: self.ee_vocab.clone(),
            er_vocab: self.er_vocab.clone(),
            dialogues,
            provenance: self.provenance.clone(),
        }
    }

    /// Validates one dialogue against the corpus invariants, clipping its
    /// donation. `line` is used only for error messages.
    pub fn validate_dialogue(&self, d: &mut Dialogue, line: usize) -> Result<()> {
        if d.turns.len() < 2 {
            return Err(Error::InvalidDialogue {
                id: d.id.clone(),
                msg: "fewer than 2 turns".into(),
            });
        }
        for turn in &d.turns {
            if turn.embedding.len() != self.embedding_dim {
                return Err(Error::DimensionMismatch {
                    line,
                    expected: self.embedding_dim,
                    got: turn.embedding.len(),
                });
            }
            if turn.embedding.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    line,
                    msg: format!("non-finite embedding in dialogue {}", d.id),
                });
            }
            if let Some(s) = &turn.strategy {
                if self.vocab(turn.role).index_of(s).is_none() {
                    return Err(Error::UnknownStrategy {
                        line,
                        role: turn.role.to_string(),
                        name: s.clone(),
                    });
                }
            }
        }
        d.check_alternation()?;
        d.donation_ee = clip_donation(d.donation_ee).map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        Ok(())
    }

    pub fn parse_jsonl(text: &str) -> Result<Corpus> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| !l.trim().is_empty());
        let Some((hline, htext)) = lines.next() else {
            return Ok(Corpus::empty());
        };
        let header: Header = serde_json::from_str(htext).map_err(|e| Error::Parse {
            line: hline,
            msg: format!("header: {e}"),
        })?;
        if header.embedding_dim == 0 {
            return Err(Error::Parse {
                line: hline,
                msg: "embedding_dim must be positive".into(),
            });
        }
        let mut corpus = Corpus::new(
            header.embedding_dim,
            StrategyVocab::try_new(Role::EE, header.ee_vocab)
                .map_err(|e| Error::Parse { line: hline, msg: e.to_string() })?,
            StrategyVocab::try_new(Role::ER, header.er_vocab)
                .map_err(|e| Error::Parse { line: hline, msg: e.to_string() })?,
        );
        corpus.provenance = header.provenance;
        for (line, text) in lines {
            let raw: RawDialogue = serde_json::from_str(text).map_err(|e| Error::Parse {
                line,
                msg: e.to_string(),
            })?;
            let mut turns = Vec::with_capacity(raw.turns.len());
            for rt in raw.turns {
                let role = Role::parse(&rt.role).ok_or_else(|| Error::UnknownRole {
                    line,
                    role: rt.role.clone(),
                })?;
                turns.push(Turn {
                    index: rt.t,
                    role,
                    text: rt.text,
                    embedding: rt.embedding,
                    strategy: rt.strategy,
                    source: rt.source,
                });
            }
            let mut d = Dialogue {
                id: raw.id,
                donation_ee: raw.donation_ee,
                ocean: raw.ocean.map(OceanVector),
                counterfactual: raw.counterfactual,
                turns,
            };
            corpus.validate_dialogue(&mut d, line)?;
            corpus.dialogues.push(d);
        }
        Ok(corpus)
    }

    pub fn to_jsonl(&self) -> String {
        let header = Header {
            embedding_dim: self.embedding_dim,
            ee_vocab: self.ee_vocab.names.clone(),
            er_vocab: self.er_vocab.names.clone(),
            provenance: self.provenance.clone(),
        };
        let mut out = String::new();
        // serializing plain data structures cannot fail
        let _ = writeln!(out, "{}", serde_json::to_string(&header).unwrap_or_default());
        for d in &self.dialogues {
            let _ = writeln!(out, "{}", serde_json::to_string(d).unwrap_or_default());
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    /// Total number of turns carrying no strategy label.
    pub fn unlabeled_turns(&self) -> usize {
        self.dialogues
            .iter()
            .flat_map(|d| &d.turns)
            .filter(|t| t.strategy.is_none())
            .count()
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Corpus::parse_jsonl(&text)
}

/// Dialogue-level seeded split; the first part holds `floor(fraction·M)`.
pub fn split(corpus: &Corpus, train_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidInput(format!("train fraction {train_fraction} not in (0,1)")));
    }
    let m = corpus.dialogues.len();
    if m < 2 {
        return Err(Error::InsufficientData("split needs at least 2 dialogues".into()));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng::stream(&[seed, 0x5B17]));
    let n_train = (train_fraction * m as f64).floor() as usize;
    let pick = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        corpus.with_dialogues(idx.into_iter().map(|i| corpus.dialogues[i].clone()).collect())
    };
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

/// One observed `(s_t, a_t, s_{t+1})` step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub s_next: Vec<f64>,
    pub dialogue_id: String,
    pub t: usize,
    pub terminal: bool,
}

/// Turn indices `(ee, er, ee_next)` of every EE→ER→EE window.
pub fn transition_windows(d: &Dialogue) -> Result<Vec<(usize, usize, usize)>> {
    d.check_alternation()?;
    Ok((0..d.turns.len().saturating_sub(2))
        .filter(|&i| d.turns[i].role == Role::EE)
        .map(|i| (i, i + 1, i + 2))
        .collect())
}

pub fn dialogue_transitions(d: &Dialogue) -> Result<Vec<Transition>> {
    let windows = transition_windows(d)?;
    let n = windows.len();
    Ok(windows
        .into_iter()
        .enumerate()
        .map(|(t, (i, j, k))| Transition {
            s: d.turns[i].embedding.clone(),
            a: d.turns[j].embedding.clone(),
            s_next: d.turns[k].embedding.clone(),
            dialogue_id: d.id.clone(),
            t,
            terminal: t + 1 == n,
        })
        .collect())
}

pub fn to_transitions(corpus: &Corpus) -> Result<Vec<Transition>> {
    let mut out = Vec::new();
    for d in &corpus.dialogues {
        out.extend(dialogue_transitions(d)?);
    }
    Ok(out)
}

fn tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Lowercased alphanumeric tokens, shared with the retrieval index.
pub fn tokenize(text: &str) -> Vec<String> {
    tokens(text)
}

/// Signed feature hashing of word unigrams and bigrams, L2-normalized.
pub fn hash_embed(text: &str, dim: usize, seed: u64) -> Result<Vec<f64>> {
    if dim < 8 {
        return Err(Error::InvalidInput(format!("hash_embed dim {dim} < 8")));
    }
    let toks = tokens(text);
    let mut v = vec![0.0; dim];
    let mut add = |feature: &str| {
        let h = rng::derive_seed(&[seed, rng::str_hash(feature)]);
        let bucket = (h % dim as u64) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[bucket] += sign;
    };
    for t in &toks {
        add(t);
    }
    for w in toks.windows(2) {
        add(&format!("{} {}", w[0], w[1]));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn turn(i: usize, role: Role, dim: usize) -> Turn {
        Turn {
            index: i,
            role,
            text: format!("{role} turn {i}"),
            embedding: vec![i as f64; dim],
            strategy: None,
            source: None,
        }
    }

    fn dialogue(id: &str, roles: &[Role]) -> Dialogue {
        Dialogue {
            id: id.into(),
            donation_ee: 1.0,
            ocean: None,
            counterfactual: false,
            turns: roles.iter().enumerate().map(|(i, &r)| turn(i, r, 2)).collect(),
        }
    }

    fn small_corpus(m: usize) -> Corpus {
        let mut c = Corpus::new(
            2,
            StrategyVocab::new(Role::EE, vec!["ack".into()]),
            StrategyVocab::new(Role::ER, vec!["greeting".into()]),
        );
        for i in 0..m {
            c.dialogues.push(dialogue(&format!("d{i}"), &[Role::EE, Role::ER]));
        }
        c
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip_donation(12.5).unwrap(), 10.0);
        assert_eq!(clip_donation(3.0).unwrap(), 3.0);
        assert_eq!(clip_donation(10.0).unwrap(), 10.0);
        assert!(clip_donation(-1.0).is_err());
        assert!(clip_donation(f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn clip_is_idempotent(a in 0.0f64..1e6) {
            let once = clip_donation(a).unwrap();
            prop_assert_eq!(clip_donation(once).unwrap(), once);
        }

        #[test]
        fn hash_embed_unit_norm(words in proptest::collection::vec("[a-z]{1,6}", 1..8)) {
            let v = hash_embed(&words.join(" "), 32, 7).unwrap();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let c = Corpus::parse_jsonl("").unwrap();
        assert!(c.dialogues.is_empty());
    }

    #[test]
    fn dimension_mismatch_names_the_line() {
        let header = r#"{"embedding_dim":768,"ee_vocab":[],"er_vocab":[]}"#;
        let emb = vec!["0.0"; 767].join(",");
        let line = format!(
            r#"{{"id":"x","donation_ee":1.0,"ocean":null,"counterfactual":false,"turns":[{{"t":0,"role":"EE","text":"hi","embedding":[{emb}],"strategy":null}},{{"t":1,"role":"ER","text":"yo","embedding":[{emb}],"strategy":null}}]}}"#
        );
        let err = Corpus::parse_jsonl(&format!("{header}\n{line}\n")).unwrap_err();
        match err {
            Error::DimensionMismatch { line, expected, got } => {
                assert_eq!((line, expected, got), (2, 768, 767));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_role_and_strategy_are_rejected() {
        let header = r#"{"embedding_dim":1,"ee_vocab":["ack"],"er_vocab":["greeting"]}"#;
        let bad_role = r#"{"id":"x","donation_ee":1.0,"ocean":null,"counterfactual":false,"turns":[{"t":0,"role":"XX","text":"","embedding":[0.0],"strategy":null},{"t":1,"role":"ER","text":"","embedding":[0.0],"strategy":null}]}"#;
        assert!(matches!(
            Corpus::parse_jsonl(&format!("{header}\n{bad_role}")),
            Err(Error::UnknownRole { line: 2, .. })
        ));
        let bad_strategy = r#"{"id":"x","donation_ee":1.0,"ocean":null,"counterfactual":false,"turns":[{"t":0,"role":"EE","text":"","embedding":[0.0],"strategy":"greeting"},{"t":1,"role":"ER","text":"","embedding":[0.0],"strategy":null}]}"#;
        assert!(matches!(
            Corpus::parse_jsonl(&format!("{header}\n{bad_strategy}")),
            Err(Error::UnknownStrategy { line: 2, .. })
        ));
        assert!(matches!(
            Corpus::parse_jsonl(&format!("{header}\n{{not json")),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn donation_is_clipped_on_ingest() {
        let mut c = small_corpus(1);
        c.dialogues[0].donation_ee = 25.0;
        let back = Corpus::parse_jsonl(&c.to_jsonl()).unwrap();
        assert_eq!(back.dialogues[0].donation_ee, 10.0);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let c = small_corpus(10);
        let (a, b) = split(&c, 0.8, 3).unwrap();
        assert_eq!((a.dialogues.len(), b.dialogues.len()), (8, 2));
        let (a2, b2) = split(&c, 0.8, 3).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
        let mut ids: Vec<_> = a.dialogues.iter().chain(&b.dialogues).map(|d| d.id.clone()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 10);
        let big = small_corpus(1017);
        let (a, b) = split(&big, 0.8, 0).unwrap();
        assert_eq!((a.dialogues.len(), b.dialogues.len()), (813, 204));
        assert!(split(&small_corpus(1), 0.8, 0).is_err());
    }

    #[test]
    fn transition_windows_examples() {
        use Role::*;
        let d = dialogue("a", &[EE, ER, EE, ER, EE]);
        let tr = dialogue_transitions(&d).unwrap();
        assert_eq!(tr.len(), 2);
        assert!(!tr[0].terminal && tr[1].terminal);
        assert_eq!(tr[1].s_next, vec![4.0, 4.0]);
        assert!(dialogue_transitions(&dialogue("b", &[EE, ER])).unwrap().is_empty());
        assert!(dialogue_transitions(&dialogue("c", &[EE, EE, ER])).is_err());
        // leading ER turn is skipped
        assert_eq!(dialogue_transitions(&dialogue("d", &[ER, EE, ER, EE])).unwrap().len(), 1);
    }

    #[test]
    fn hash_embed_examples() {
        assert_eq!(hash_embed("", 16, 1).unwrap(), vec![0.0; 16]);
        assert_eq!(hash_embed("a b", 16, 1).unwrap(), hash_embed("a b", 16, 1).unwrap());
        let a = hash_embed("please donate", 64, 0).unwrap();
        let b = hash_embed("donate please", 64, 0).unwrap();
        let cos: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!(cos >= 0.5, "cos {cos}");
        assert!(hash_embed("x", 4, 0).is_err());
    }

    #[test]
    fn action_state_pairs_use_zero_sentinel() {
        use Role::*;
        let d = dialogue("a", &[EE, ER, EE]);
        let pairs = d.action_state_pairs();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].0, vec![0.0, 0.0]);
        assert_eq!(pairs[1].0, vec![1.0, 1.0]);
    }
}
