//! State-to-state contagion graphs inferred from URL timelines, with
//! weighted PageRank and scalar assortativity.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::NewsType;
use crate::diffusion::UrlTimeline;
use crate::states::State;

#[derive(Debug, Error, PartialEq)]
pub enum ContagionError {
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("PageRank did not converge in {iterations} iterations (last L1 change {delta:e})")]
    NonConvergence {
        iterations: usize,
        delta: f64,
        last: BTreeMap<State, f64>,
    },
    #[error("score maps cover different states")]
    Alignment,
    #[error("attribute missing for {0}")]
    MissingAttribute(State),
    #[error("assortativity needs at least 2 edges, graph has {0}")]
    TooFewEdges(usize),
    #[error("assortativity undefined: endpoint attribute has zero variance")]
    ZeroVariance,
    #[error("unknown inference rule `{0}` (expected chain or star)")]
    UnknownRule(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InferenceRule {
    /// Consecutive first exposures: s1→s2, s2→s3, ...
    #[default]
    Chain,
    /// First exposure to every later one: s1→s2, s1→s3, ...
    Star,
}

impl fmt::Display for InferenceRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InferenceRule::Chain => "chain",
            InferenceRule::Star => "star",
        })
    }
}

impl FromStr for InferenceRule {
    type Err = ContagionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chain" => Ok(InferenceRule::Chain),
            "star" => Ok(InferenceRule::Star),
            _ => Err(ContagionError::UnknownRule(s.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateGraph {
    pub news_type: Option<NewsType>,
    pub rule: InferenceRule,
    pub min_states: usize,
    pub urls_used: usize,
    pub nodes: BTreeSet<State>,
    /// Directed weighted edges; no self-loops, weights > 0.
    #[serde(with = "edge_list")]
    pub edges: BTreeMap<(State, State), f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

mod edge_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Edge {
        src: State,
        dst: State,
        weight: f64,
    }

    pub fn serialize<S: Serializer>(edges: &BTreeMap<(State, State), f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(edges.iter().map(|(&(src, dst), &weight)| Edge { src, dst, weight }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<(State, State), f64>, D::Error> {
        let v: Vec<Edge> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|e| ((e.src, e.dst), e.weight)).collect())
    }
}

impl StateGraph {
    pub fn empty(rule: InferenceRule) -> Self {
        StateGraph {
            news_type: None,
            rule,
            min_states: 0,
            urls_used: 0,
            nodes: BTreeSet::new(),
            edges: BTreeMap::new(),
            diagnostic: None,
        }
    }

    /// Adds `weight` to the edge `src → dst`; self-loops are ignored.
    pub fn add_edge(&mut self, src: State, dst: State, weight: f64) {
        if src == dst || weight <= 0.0 {
            return;
        }
        self.nodes.insert(src);
        self.nodes.insert(dst);
        *self.edges.entry((src, dst)).or_default() += weight;
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.values().sum()
    }

    pub fn write_edges_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["src", "dst", "weight"])?;
        for (&(a, b), &wt) in &self.edges {
            w.write_record([a.code(), b.code(), &wt.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Edge contributions of one ordered state sequence under `rule`.
pub fn sequence_edges(states: &[State], rule: InferenceRule) -> Vec<(State, State)> {
    match rule {
        InferenceRule::Chain => states.windows(2).map(|w| (w[0], w[1])).collect(),
        InferenceRule::Star => states.iter().skip(1).map(|&s| (states[0], s)).collect(),
    }
}

/// Accumulates edges over URLs of `news_type` whose timelines reach at
/// least `min_states` distinct states. Repeat posts from a state after its
/// first exposure are ignored.
pub fn infer_state_network(
    timelines: &[UrlTimeline],
    news_type: NewsType,
    min_states: usize,
    rule: InferenceRule,
) -> StateGraph {
    let mut g = StateGraph::empty(rule);
    g.news_type = Some(news_type);
    g.min_states = min_states;
    for tl in timelines.iter().filter(|t| t.news_type == news_type) {
        let seq = tl.state_sequence();
        if seq.len() < min_states.max(2) {
            continue;
        }
        g.urls_used += 1;
        for (a, b) in sequence_edges(&seq, rule) {
            g.add_edge(a, b, 1.0);
        }
    }
    if g.urls_used == 0 {
        g.diagnostic = Some(format!(
            "no {news_type} URL reached {min_states} distinct states; graph is empty"
        ));
    }
    g
}

/// Weighted PageRank with out-weight-proportional transitions and dangling
/// mass spread uniformly. Stops when the L1 change drops below `tol`.
pub fn pagerank(
    graph: &StateGraph,
    damping: f64,
    tol: f64,
    max_iter: usize,
) -> Result<BTreeMap<State, f64>, ContagionError> {
    let nodes: Vec<State> = graph.nodes.iter().copied().collect();
    let n = nodes.len();
    if n == 0 {
        return Err(ContagionError::EmptyGraph);
    }
    let index: BTreeMap<State, usize> = nodes.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let mut out_weight = vec![0.0; n];
    let mut links: Vec<(usize, usize, f64)> = Vec::with_capacity(graph.edges.len());
    for (&(a, b), &w) in &graph.edges {
        let (i, j) = (index[&a], index[&b]);
        out_weight[i] += w;
        links.push((i, j, w));
    }
    let uniform = 1.0 / n as f64;
    let mut x = vec![uniform; n];
    let mut delta = f64::INFINITY;
    for _ in 0..max_iter {
        let dangling: f64 = (0..n).filter(|&i| out_weight[i] == 0.0).map(|i| x[i]).sum();
        let base = (1.0 - damping) * uniform + damping * dangling * uniform;
        let mut next = vec![base; n];
        for &(i, j, w) in &links {
            next[j] += damping * x[i] * w / out_weight[i];
        }
        let sum: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= sum);
        delta = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
        x = next;
        if delta < tol {
            return Ok(nodes.into_iter().zip(x).collect());
        }
    }
    Err(ContagionError::NonConvergence {
        iterations: max_iter,
        delta,
        last: nodes.into_iter().zip(x).collect(),
    })
}

pub fn pagerank_differential(
    a: &BTreeMap<State, f64>,
    b: &BTreeMap<State, f64>,
) -> Result<BTreeMap<State, f64>, ContagionError> {
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        return Err(ContagionError::Alignment);
    }
    Ok(a.iter().map(|(s, v)| (*s, v - b[s])).collect())
}

/// Extends two score maps to their union of states with zero for missing
/// entries, so graphs over different node sets can be differenced.
pub fn align_scores(
    a: &BTreeMap<State, f64>,
    b: &BTreeMap<State, f64>,
) -> (BTreeMap<State, f64>, BTreeMap<State, f64>) {
    let keys: BTreeSet<State> = a.keys().chain(b.keys()).copied().collect();
    let fill = |m: &BTreeMap<State, f64>| keys.iter().map(|k| (*k, m.get(k).copied().unwrap_or(0.0))).collect();
    (fill(a), fill(b))
}

/// Weighted Pearson correlation between source and target attribute values
/// over directed edges.
pub fn assortativity(graph: &StateGraph, attribute: &BTreeMap<State, f64>) -> Result<f64, ContagionError> {
    if graph.edges.len() < 2 {
        return Err(ContagionError::TooFewEdges(graph.edges.len()));
    }
    let mut pts = Vec::with_capacity(graph.edges.len());
    for (&(a, b), &w) in &graph.edges {
        let xa = *attribute.get(&a).ok_or(ContagionError::MissingAttribute(a))?;
        let xb = *attribute.get(&b).ok_or(ContagionError::MissingAttribute(b))?;
        pts.push((xa, xb, w));
    }
    let wsum: f64 = pts.iter().map(|p| p.2).sum();
    let mx = pts.iter().map(|p| p.0 * p.2).sum::<f64>() / wsum;
    let my = pts.iter().map(|p| p.1 * p.2).sum::<f64>() / wsum;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y, w) in &pts {
        sxy += w * (x - mx) * (y - my);
        sxx += w * (x - mx) * (x - mx);
        syy += w * (y - my) * (y - my);
    }
    let scale = sxx.max(syy);
    if sxx <= scale * 1e-24 || syy <= scale * 1e-24 || scale == 0.0 {
        return Err(ContagionError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn write_scores_csv<W: Write>(out: W, scores: &BTreeMap<State, f64>) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["state", "score"])?;
    for (s, v) in scores {
        w.write_record([s.code(), &format!("{v:.15}")])?;
    }
    w.flush()?;
    Ok(())
}
