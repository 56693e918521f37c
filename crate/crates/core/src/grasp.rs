//! Permutation-based causal discovery over strategy count variables.
//!
//! A permutation is projected to a DAG by grow-shrink parent selection over
//! each variable's prefix under a Gaussian BIC. The search edits permutations
//! with tuck moves inside a depth-limited DFS, relaxing which edges may be
//! tucked in three tiers.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, Role};
use crate::error::{Error, Result};
use crate::numcore::linalg::center;
use crate::rng;
use crate::strategy::StrategyVocab;

pub const RIDGE: f64 = 1e-8;
const TOL: f64 = 1e-9;
const MAX_VARS: usize = 128;

type Mask = u128;

fn bit(i: usize) -> Mask {
    1u128 << i
}

fn members(m: Mask) -> Vec<usize> {
    (0..MAX_VARS).filter(|&i| m & bit(i) != 0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspConfig {
    pub depth: usize,
    pub tier: u8,
    pub bic_penalty: f64,
    pub seed: u64,
    pub restarts: usize,
}

impl Default for GraspConfig {
    fn default() -> Self {
        GraspConfig {
            depth: 3,
            tier: 2,
            bic_penalty: 2.0,
            seed: 0,
            restarts: 5,
        }
    }
}

impl GraspConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.tier > 2 || self.restarts == 0 || !(self.bic_penalty >= 0.0) {
            return Err(Error::Config("grasp: depth >= 1, tier in 0..=2, restarts >= 1".into()));
        }
        Ok(())
    }
}

/// How per-dialogue strategy counts enter the score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountEncoding {
    Counts,
    /// `1` when the strategy occurs in the dialogue at all.
    #[default]
    Presence,
}

impl CountEncoding {
    fn apply(self, v: f64) -> f64 {
        match self {
            CountEncoding::Counts => v,
            CountEncoding::Presence => f64::from(u8::from(v > 0.0)),
        }
    }
}

/// Per-dialogue strategy counts, encoded and standardized, with constant
/// columns dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyMatrix {
    pub encoding: CountEncoding,
    /// Raw counts for every strategy column (before dropping).
    pub raw: DMatrix<f64>,
    pub all_names: Vec<String>,
    pub all_roles: Vec<Role>,
    /// Standardized kept columns.
    pub data: DMatrix<f64>,
    pub names: Vec<String>,
    pub roles: Vec<Role>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub dropped: Vec<String>,
}

pub fn build_strategy_matrix(corpus: &Corpus) -> Result<StrategyMatrix> {
    build_strategy_matrix_with(corpus, CountEncoding::default())
}

pub fn build_strategy_matrix_with(corpus: &Corpus, encoding: CountEncoding) -> Result<StrategyMatrix> {
    let ee = &corpus.ee_vocab;
    let er = &corpus.er_vocab;
    let p = ee.len() + er.len();
    let n = corpus.dialogues.len();
    if n < 2 {
        return Err(Error::InsufficientData("strategy matrix needs >= 2 dialogues".into()));
    }
    let mut raw = DMatrix::zeros(n, p);
    for (i, d) in corpus.dialogues.iter().enumerate() {
        for t in &d.turns {
            let name = t.strategy.as_deref().ok_or_else(|| Error::InvalidDialogue {
                id: d.id.clone(),
                msg: format!("turn {} has no strategy; annotate first", t.index),
            })?;
            let col = match t.role {
                Role::EE => ee.index_of(name),
                Role::ER => er.index_of(name).map(|j| ee.len() + j),
            }
            .ok_or_else(|| Error::InvalidInput(format!("unknown strategy {name:?}")))?;
            raw[(i, col)] += 1.0;
        }
    }
    let all_names: Vec<String> = ee.names.iter().chain(&er.names).cloned().collect();
    let all_roles: Vec<Role> = std::iter::repeat_n(Role::EE, ee.len())
        .chain(std::iter::repeat_n(Role::ER, er.len()))
        .collect();
    StrategyMatrix::from_raw(raw, all_names, all_roles, encoding)
}

impl StrategyMatrix {
    pub fn from_raw(
        raw: DMatrix<f64>,
        all_names: Vec<String>,
        all_roles: Vec<Role>,
        encoding: CountEncoding,
    ) -> Result<Self> {
        let n = raw.nrows();
        let enc = raw.map(|v| encoding.apply(v));
        let mut kept = Vec::new();
        let mut means = Vec::new();
        let mut sds = Vec::new();
        let mut dropped = Vec::new();
        for j in 0..raw.ncols() {
            let col = enc.column(j);
            let mean = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            if var.sqrt() < 1e-12 {
                log::warn!("strategy column {:?} is constant and was dropped", all_names[j]);
                dropped.push(all_names[j].clone());
            } else {
                kept.push(j);
                means.push(mean);
                sds.push(var.sqrt());
            }
        }
        if kept.len() > MAX_VARS {
            return Err(Error::InvalidInput(format!("at most {MAX_VARS} variables supported")));
        }
        let data = DMatrix::from_fn(n, kept.len(), |i, k| (enc[(i, kept[k])] - means[k]) / sds[k]);
        Ok(StrategyMatrix {
            encoding,
            names: kept.iter().map(|&j| all_names[j].clone()).collect(),
            roles: kept.iter().map(|&j| all_roles[j]).collect(),
            raw,
            all_names,
            all_roles,
            data,
            means,
            sds,
            dropped,
        })
    }

    /// Rebuilds from a row resample of the raw counts.
    pub fn resample(&self, rows: &[usize]) -> Result<Self> {
        let raw = DMatrix::from_fn(rows.len(), self.raw.ncols(), |i, j| self.raw[(rows[i], j)]);
        StrategyMatrix::from_raw(raw, self.all_names.clone(), self.all_roles.clone(), self.encoding)
    }
}

/// Cached Gaussian BIC local scores over one data set.
pub struct LocalScorer {
    cov: DMatrix<f64>,
    n: f64,
    c: f64,
    scores: HashMap<(usize, Mask), f64>,
    projections: HashMap<(usize, Mask), Mask>,
}

impl LocalScorer {
    pub fn new(data: &DMatrix<f64>, bic_penalty: f64) -> Result<Self> {
        if data.ncols() > MAX_VARS {
            return Err(Error::InvalidInput(format!("at most {MAX_VARS} variables supported")));
        }
        let (xc, _) = center(data);
        let n = data.nrows() as f64;
        Ok(LocalScorer {
            cov: xc.transpose() * &xc / n,
            n,
            c: bic_penalty,
            scores: HashMap::new(),
            projections: HashMap::new(),
        })
    }

    pub fn num_vars(&self) -> usize {
        self.cov.nrows()
    }

    /// `−(n/2)·ln σ̂² − (c/2)·|pa|·ln n`.
    pub fn score(&mut self, v: usize, parents: Mask) -> f64 {
        if let Some(&s) = self.scores.get(&(v, parents)) {
            return s;
        }
        let pa = members(parents);
        let mut var = self.cov[(v, v)];
        if !pa.is_empty() {
            let k = pa.len();
            let spp = DMatrix::from_fn(k, k, |i, j| self.cov[(pa[i], pa[j])] + if i == j { RIDGE } else { 0.0 });
            let spv = DVector::from_fn(k, |i, _| self.cov[(pa[i], v)]);
            let beta = match spp.clone().cholesky() {
                Some(ch) => ch.solve(&spv),
                None => spp.lu().solve(&spv).unwrap_or_else(|| DVector::zeros(k)),
            };
            var -= spv.dot(&beta);
        }
        let var = var.max(1e-12);
        let s = -0.5 * self.n * var.ln() - 0.5 * self.c * pa.len() as f64 * self.n.ln();
        self.scores.insert((v, parents), s);
        s
    }

    /// Grow-shrink parent selection for `v` among `prefix`.
    pub fn grow_shrink(&mut self, v: usize, prefix: Mask) -> Mask {
        if let Some(&m) = self.projections.get(&(v, prefix)) {
            return m;
        }
        let cands = members(prefix);
        let mut pa: Mask = 0;
        loop {
            let mut changed = false;
            loop {
                let cur = self.score(v, pa);
                let mut best: Option<(f64, usize)> = None;
                for &c in &cands {
                    if pa & bit(c) != 0 {
                        continue;
                    }
                    let gain = self.score(v, pa | bit(c)) - cur;
                    if gain > TOL && best.is_none_or(|(g, _)| gain > g) {
                        best = Some((gain, c));
                    }
                }
                match best {
                    Some((_, c)) => {
                        pa |= bit(c);
                        changed = true;
                    }
                    None => break,
                }
            }
            let mut shrunk = false;
            loop {
                let cur = self.score(v, pa);
                let mut best: Option<(f64, usize)> = None;
                for c in members(pa) {
                    let gain = self.score(v, pa & !bit(c)) - cur;
                    if gain > TOL && best.is_none_or(|(g, _)| gain > g) {
                        best = Some((gain, c));
                    }
                }
                match best {
                    Some((_, c)) => {
                        pa &= !bit(c);
                        shrunk = true;
                    }
                    None => break,
                }
            }
            if !shrunk || !changed {
                break;
            }
        }
        self.projections.insert((v, prefix), pa);
        pa
    }
}

/// `local_score` on raw columns (centered internally).
pub fn local_score(data: &DMatrix<f64>, v: usize, parents: &[usize], bic_penalty: f64) -> Result<f64> {
    if parents.contains(&v) || v >= data.ncols() || parents.iter().any(|&p| p >= data.ncols()) {
        return Err(Error::InvalidInput("local score: v must not be its own parent".into()));
    }
    let mut sc = LocalScorer::new(data, bic_penalty)?;
    Ok(sc.score(v, parents.iter().fold(0, |m, &p| m | bit(p))))
}

/// DAG as parent bitmasks plus its total score.
#[derive(Debug, Clone, PartialEq)]
pub struct Dag {
    pub parents: Vec<Mask>,
    pub score: f64,
}

impl Dag {
    pub fn parent_lists(&self) -> Vec<Vec<usize>> {
        self.parents.iter().map(|&m| members(m)).collect()
    }

    /// `(cause, effect)` sorted by cause then effect.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .parents
            .iter()
            .enumerate()
            .flat_map(|(y, &m)| members(m).into_iter().map(move |x| (x, y)))
            .collect();
        e.sort_unstable();
        e
    }

    pub fn ancestors(&self, y: usize) -> Mask {
        let mut seen: Mask = 0;
        let mut stack = members(self.parents[y]);
        while let Some(v) = stack.pop() {
            if seen & bit(v) == 0 {
                seen |= bit(v);
                stack.extend(members(self.parents[v]));
            }
        }
        seen
    }
}

pub fn project_dag(perm: &[usize], scorer: &mut LocalScorer) -> Result<Dag> {
    let p = scorer.num_vars();
    let mut check = perm.to_vec();
    check.sort_unstable();
    if check != (0..p).collect::<Vec<_>>() {
        return Err(Error::InvalidInput("not a permutation of the variables".into()));
    }
    let mut parents = vec![0; p];
    let mut prefix: Mask = 0;
    let mut total = 0.0;
    for &v in perm {
        let pa = scorer.grow_shrink(v, prefix);
        total += scorer.score(v, pa);
        parents[v] = pa;
        prefix |= bit(v);
    }
    Ok(Dag { parents, score: total })
}

/// Moves `y` and the ancestors of `y` lying between `x` and `y` to just
/// before `x`, keeping relative orders.
pub fn tuck(perm: &[usize], dag: &Dag, x: usize, y: usize) -> Result<Vec<usize>> {
    let px = perm.iter().position(|&v| v == x);
    let py = perm.iter().position(|&v| v == y);
    let (px, py) = match (px, py) {
        (Some(a), Some(b)) if a < b && dag.parents[y] & bit(x) != 0 => (a, b),
        _ => return Err(Error::InvalidInput(format!("tuck needs {x} before {y} and {x} -> {y}"))),
    };
    let anc = dag.ancestors(y);
    let between = &perm[px + 1..py];
    let mut out = perm[..px].to_vec();
    out.extend(between.iter().copied().filter(|&v| anc & bit(v) != 0));
    out.push(y);
    out.push(x);
    out.extend(between.iter().copied().filter(|&v| anc & bit(v) == 0));
    out.extend_from_slice(&perm[py + 1..]);
    Ok(out)
}

fn covered(dag: &Dag, x: usize, y: usize) -> bool {
    dag.parents[x] == dag.parents[y] & !bit(x)
}

fn singular(perm: &[usize], dag: &Dag, x: usize, y: usize) -> bool {
    let px = perm.iter().position(|&v| v == x).unwrap_or(0);
    let py = perm.iter().position(|&v| v == y).unwrap_or(0);
    let anc = dag.ancestors(y);
    perm[px + 1..py].iter().all(|&v| anc & bit(v) == 0)
}

struct Searcher<'a> {
    scorer: &'a mut LocalScorer,
    depth: usize,
    visited: HashSet<Vec<usize>>,
}

impl Searcher<'_> {
    fn dfs(&mut self, perm: &[usize], dag: &Dag, base: f64, depth: usize, tier: u8) -> Result<Option<(Vec<usize>, Dag)>> {
        for (x, y) in dag.edges() {
            let eligible = match tier {
                0 => covered(dag, x, y),
                1 => covered(dag, x, y) || singular(perm, dag, x, y),
                _ => true,
            };
            if !eligible {
                continue;
            }
            let next = tuck(perm, dag, x, y)?;
            if !self.visited.insert(next.clone()) {
                continue;
            }
            let nd = project_dag(&next, self.scorer)?;
            if nd.score > base + TOL {
                return Ok(Some((next, nd)));
            }
            if tier == 2 && depth > 1 && nd.score >= dag.score - TOL {
                if let Some(found) = self.dfs(&next, &nd, base, depth - 1, tier)? {
                    return Ok(Some(found));
                }
            }
        }
        Ok(None)
    }

    fn run(&mut self, start: Vec<usize>, max_tier: u8) -> Result<SearchOutcome> {
        let mut perm = start;
        let mut dag = project_dag(&perm, self.scorer)?;
        let mut trace = vec![dag.score];
        for tier in 0..=max_tier {
            loop {
                self.visited.clear();
                self.visited.insert(perm.clone());
                let depth = self.depth;
                match self.dfs(&perm, &dag, dag.score, depth, tier)? {
                    Some((p, d)) => {
                        perm = p;
                        dag = d;
                        trace.push(dag.score);
                    }
                    None => break,
                }
            }
        }
        Ok(SearchOutcome { perm, dag, trace })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub perm: Vec<usize>,
    pub dag: Dag,
    /// Committed scores, starting with the initial projection.
    pub trace: Vec<f64>,
}

/// One search from a given starting permutation.
pub fn search_from(data: &DMatrix<f64>, start: Vec<usize>, cfg: &GraspConfig) -> Result<SearchOutcome> {
    cfg.validate()?;
    let mut scorer = LocalScorer::new(data, cfg.bic_penalty)?;
    let mut s = Searcher {
        scorer: &mut scorer,
        depth: cfg.depth,
        visited: HashSet::new(),
    };
    s.run(start, cfg.tier)
}

/// Best of `cfg.restarts` searches from seeded random permutations.
pub fn search_data(data: &DMatrix<f64>, cfg: &GraspConfig) -> Result<SearchOutcome> {
    cfg.validate()?;
    let p = data.ncols();
    if data.nrows() < 5 * p {
        log::warn!("grasp: {} rows for {p} variables (fewer than 5 per variable)", data.nrows());
    }
    let outcomes: Vec<SearchOutcome> = (0..cfg.restarts)
        .into_par_iter()
        .map(|i| {
            let mut perm: Vec<usize> = (0..p).collect();
            perm.shuffle(&mut rng::stream(&[cfg.seed.wrapping_add(i as u64), 0x62A5]));
            search_from(data, perm, cfg)
        })
        .collect::<Result<_>>()?;
    let mut best: Option<SearchOutcome> = None;
    for o in outcomes {
        let better = match &best {
            None => true,
            Some(b) => {
                o.dag.score > b.dag.score + TOL
                    || ((o.dag.score - b.dag.score).abs() <= TOL && o.dag.edges() < b.dag.edges())
            }
        };
        if better {
            best = Some(o);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub cause: String,
    pub effect: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause_role: Option<Role>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effect_role: Option<Role>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CausalGraph {
    pub edges: Vec<GraphEdge>,
}

impl CausalGraph {
    pub fn from_dag(dag: &Dag, names: &[String], roles: Option<&[Role]>, scorer: &mut LocalScorer) -> Self {
        let edges = dag
            .edges()
            .into_iter()
            .map(|(x, y)| {
                let pa = dag.parents[y];
                GraphEdge {
                    cause: names[x].clone(),
                    effect: names[y].clone(),
                    score: scorer.score(y, pa) - scorer.score(y, pa & !bit(x)),
                    cause_role: roles.map(|r| r[x]),
                    effect_role: roles.map(|r| r[y]),
                }
            })
            .collect();
        CausalGraph { edges }
    }

    /// Topological-sort acyclicity check.
    pub fn is_acyclic(&self) -> bool {
        let key = |name: &String, role: Option<Role>| (role, name.clone());
        let mut nodes = BTreeSet::new();
        for e in &self.edges {
            nodes.insert(key(&e.cause, e.cause_role));
            nodes.insert(key(&e.effect, e.effect_role));
        }
        let nodes: Vec<_> = nodes.into_iter().collect();
        let idx = |k: &(Option<Role>, String)| nodes.binary_search(k).expect("node");
        let mut indeg = vec![0usize; nodes.len()];
        let mut out = vec![Vec::new(); nodes.len()];
        for e in &self.edges {
            let a = idx(&key(&e.cause, e.cause_role));
            let b = idx(&key(&e.effect, e.effect_role));
            out[a].push(b);
            indeg[b] += 1;
        }
        let mut queue: Vec<usize> = (0..nodes.len()).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(v) = queue.pop() {
            seen += 1;
            for &w in &out[v] {
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    queue.push(w);
                }
            }
        }
        seen == nodes.len()
    }

    /// Effects of `cause`, sorted by name.
    pub fn children(&self, cause: &str) -> Vec<String> {
        let mut c: Vec<String> = self
            .edges
            .iter()
            .filter(|e| e.cause == cause && e.cause_role != Some(Role::ER))
            .map(|e| e.effect.clone())
            .collect();
        c.sort();
        c.dedup();
        c
    }

    pub fn edge_pairs(&self) -> BTreeSet<(String, String)> {
        self.edges.iter().map(|e| (e.cause.clone(), e.effect.clone())).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("graph serializes")))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse { line: 0, msg: e.to_string() })
    }
}

/// Keeps only EE → ER edges. Returns the filtered graph and the number of
/// discarded edges.
pub fn orient_filter(graph: &CausalGraph, ee: &StrategyVocab, er: &StrategyVocab) -> (CausalGraph, usize) {
    let is = |name: &str, role: Option<Role>, want: Role, vocab: &StrategyVocab| match role {
        Some(r) => r == want && vocab.index_of(name).is_some(),
        None => vocab.index_of(name).is_some(),
    };
    let kept: Vec<GraphEdge> = graph
        .edges
        .iter()
        .filter(|e| is(&e.cause, e.cause_role, Role::EE, ee) && is(&e.effect, e.effect_role, Role::ER, er))
        .cloned()
        .collect();
    let discarded = graph.edges.len() - kept.len();
    (CausalGraph { edges: kept }, discarded)
}

/// Full search on a strategy matrix, returning the unfiltered named graph.
pub fn search(matrix: &StrategyMatrix, cfg: &GraspConfig) -> Result<CausalGraph> {
    let outcome = search_data(&matrix.data, cfg)?;
    let mut scorer = LocalScorer::new(&matrix.data, cfg.bic_penalty)?;
    Ok(CausalGraph::from_dag(&outcome.dag, &matrix.names, Some(&matrix.roles), &mut scorer))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeFrequency {
    pub cause: String,
    pub effect: String,
    pub frequency: f64,
}

/// Row-bootstrap frequency of every EE → ER edge over `b` replicates.
pub fn bootstrap_stability(
    matrix: &StrategyMatrix,
    ee: &StrategyVocab,
    er: &StrategyVocab,
    cfg: &GraspConfig,
    b: usize,
) -> Result<Vec<EdgeFrequency>> {
    if b < 2 {
        return Err(Error::InvalidInput("bootstrap needs B >= 2".into()));
    }
    let n = matrix.raw.nrows();
    let graphs: Vec<BTreeSet<(String, String)>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(&[cfg.seed, 0xB007, i as u64]);
            let rows: Vec<usize> = (0..n).map(|_| rand::Rng::random_range(&mut rng, 0..n)).collect();
            let m = matrix.resample(&rows)?;
            let g = search(&m, cfg)?;
            Ok(orient_filter(&g, ee, er).0.edge_pairs())
        })
        .collect::<Result<_>>()?;
    let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
    for g in &graphs {
        for e in g {
            *counts.entry(e.clone()).or_default() += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|((cause, effect), c)| EdgeFrequency {
            cause,
            effect,
            frequency: c as f64 / b as f64,
        })
        .collect())
}

/// Completed partially directed graph of a DAG's equivalence class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cpdag {
    pub nodes: Vec<String>,
    pub directed: Vec<(usize, usize)>,
    pub undirected: Vec<(usize, usize)>,
}

impl Cpdag {
    pub fn adjacencies(&self) -> BTreeSet<(usize, usize)> {
        self.directed
            .iter()
            .chain(&self.undirected)
            .map(|&(a, b)| (a.min(b), a.max(b)))
            .collect()
    }
}

/// v-structures plus Meek rules 1–3 to closure.
pub fn cpdag(names: &[String], edges: &[(usize, usize)]) -> Result<Cpdag> {
    let n = names.len();
    if edges.iter().any(|&(a, b)| a >= n || b >= n || a == b) {
        return Err(Error::InvalidInput("edge outside node range".into()));
    }
    let mut adj = vec![vec![false; n]; n];
    let mut pa = vec![BTreeSet::new(); n];
    for &(a, b) in edges {
        adj[a][b] = true;
        adj[b][a] = true;
        pa[b].insert(a);
    }
    // dir[a][b]: a → b compelled
    let mut dir = vec![vec![false; n]; n];
    for c in 0..n {
        let ps: Vec<usize> = pa[c].iter().copied().collect();
        for i in 0..ps.len() {
            for j in i + 1..ps.len() {
                if !adj[ps[i]][ps[j]] {
                    dir[ps[i]][c] = true;
                    dir[ps[j]][c] = true;
                }
            }
        }
    }
    let undirected = |dir: &Vec<Vec<bool>>, a: usize, b: usize| adj[a][b] && !dir[a][b] && !dir[b][a];
    loop {
        let mut changed = false;
        for a in 0..n {
            for b in 0..n {
                if !undirected(&dir, a, b) {
                    continue;
                }
                // R1: c → a - b, c and b nonadjacent
                let r1 = (0..n).any(|c| dir[c][a] && !adj[c][b] && c != b);
                // R2: a → c → b
                let r2 = (0..n).any(|c| dir[a][c] && dir[c][b]);
                // R3: a - c → b, a - d → b, c and d nonadjacent
                let r3 = (0..n).any(|c| {
                    undirected(&dir, a, c)
                        && dir[c][b]
                        && (c + 1..n).any(|d| undirected(&dir, a, d) && dir[d][b] && !adj[c][d])
                });
                if r1 || r2 || r3 {
                    dir[a][b] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut directed = Vec::new();
    let mut und = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if dir[a][b] {
                directed.push((a, b));
            } else if a < b && undirected(&dir, a, b) {
                und.push((a, b));
            }
        }
    }
    Ok(Cpdag {
        nodes: names.to_vec(),
        directed,
        undirected: und,
    })
}

/// Precision, recall and F1 of `found` against `truth`.
pub fn f1<T: Ord>(found: &BTreeSet<T>, truth: &BTreeSet<T>) -> (f64, f64, f64) {
    let tp = found.intersection(truth).count() as f64;
    let precision = if found.is_empty() { 1.0 } else { tp / found.len() as f64 };
    let recall = if truth.is_empty() { 1.0 } else { tp / truth.len() as f64 };
    let f = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normals(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn cols(c: &[Vec<f64>]) -> DMatrix<f64> {
        DMatrix::from_fn(c[0].len(), c.len(), |i, j| c[j][i])
    }

    #[test]
    fn empty_parent_score_is_zero_on_standardized_data() {
        let mut rng = rng::stream(&[1]);
        let x = normals(&mut rng, 500);
        let m = StrategyMatrix::from_raw(cols(&[x.clone(), x]), vec!["a".into(), "b".into()], vec![Role::EE; 2], CountEncoding::Counts).unwrap();
        assert!(local_score(&m.data, 0, &[], 2.0).unwrap().abs() < 1e-9);
    }

    #[test]
    fn penalty_versus_signal() {
        let mut rng = rng::stream(&[2]);
        let x = normals(&mut rng, 5000);
        let z = normals(&mut rng, 5000);
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1e-3 * rng.sample::<f64, _>(StandardNormal)).collect();
        let data = cols(&[x, z, y]);
        assert!(local_score(&data, 1, &[0], 2.0).unwrap() < local_score(&data, 1, &[], 2.0).unwrap());
        assert!(local_score(&data, 2, &[0], 2.0).unwrap() > local_score(&data, 2, &[], 2.0).unwrap());
        assert!(local_score(&data, 2, &[2], 2.0).is_err());
    }

    #[test]
    fn collider_projection() {
        let mut rng = rng::stream(&[3]);
        let x = normals(&mut rng, 3000);
        let y = normals(&mut rng, 3000);
        let z: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let data = cols(&[x, y, z]);
        let mut sc = LocalScorer::new(&data, 2.0).unwrap();
        let dag = project_dag(&[0, 1, 2], &mut sc).unwrap();
        assert_eq!(dag.edges(), vec![(0, 2), (1, 2)]);
        let empty = project_dag(&[1, 0], &mut LocalScorer::new(&cols(&[normals(&mut rng, 2000), normals(&mut rng, 2000)]), 2.0).unwrap()).unwrap();
        assert!(empty.edges().is_empty());
    }

    #[test]
    fn tuck_rules() {
        // X=0, W=1, Y=2
        let dag = Dag { parents: vec![0, 0, bit(0)], score: 0.0 };
        assert_eq!(tuck(&[0, 1, 2], &dag, 0, 2).unwrap(), vec![2, 0, 1]);
        let dag = Dag { parents: vec![0, 0, bit(0) | bit(1)], score: 0.0 };
        assert_eq!(tuck(&[0, 1, 2], &dag, 0, 2).unwrap(), vec![1, 2, 0]);
        let dag = Dag { parents: vec![0, bit(0)], score: 0.0 };
        assert_eq!(tuck(&[0, 1], &dag, 0, 1).unwrap(), vec![1, 0]);
        assert!(tuck(&[1, 0], &dag, 0, 1).is_err());
    }

    #[test]
    fn cpdag_of_collider_and_chain() {
        let names: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let c = cpdag(&names, &[(0, 2), (1, 2), (2, 3)]).unwrap();
        assert_eq!(c.directed, vec![(0, 2), (1, 2), (2, 3)]);
        assert!(c.undirected.is_empty());
        let chain = cpdag(&names, &[(0, 1), (1, 2)]).unwrap();
        assert!(chain.directed.is_empty());
        assert_eq!(chain.undirected, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn orient_filter_counts() {
        let ee = StrategyVocab::new(Role::EE, vec!["x".into()]);
        let er = StrategyVocab::new(Role::ER, vec!["y".into(), "z".into()]);
        let e = |c: &str, cr, f: &str, fr| GraphEdge {
            cause: c.into(),
            effect: f.into(),
            score: 1.0,
            cause_role: Some(cr),
            effect_role: Some(fr),
        };
        let g = CausalGraph {
            edges: vec![e("x", Role::EE, "y", Role::ER), e("y", Role::ER, "z", Role::ER)],
        };
        let (kept, dropped) = orient_filter(&g, &ee, &er);
        assert_eq!((kept.edges.len(), dropped), (1, 1));
        assert_eq!(orient_filter(&CausalGraph::default(), &ee, &er).1, 0);
        assert!(g.is_acyclic());
    }

    #[test]
    fn f1_edge_cases() {
        let a: BTreeSet<u8> = [1, 2].into();
        assert_eq!(f1(&a, &a).2, 1.0);
        assert_eq!(f1(&BTreeSet::new(), &a).2, 0.0);
    }
}
