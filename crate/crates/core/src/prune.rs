//! Stages two and three of tree reconstruction.
//!
//! [`prune_nonleaf`] confirms kin edges whose endpoints separate the kin
//! graph. Those are exactly the edges between two non-leaf nodes of the tree.
//! Their endpoints give the non-leaf set. [`prune_leaf`] then picks, for every
//! leaf, the single true parent among its non-leaf kin.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::graph::{
    edge_key, kin_graph_oracle, separates_indices, validate_tree, GraphError, UndirectedGraph,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PruneError {
    #[error("input is not the kin graph of a tree with a path of length four: {0}")]
    AssumptionViolated(String),
    #[error("cannot resolve parent of leaf `{leaf}`: {reason}")]
    Ambiguous { leaf: String, reason: String },
    #[error("leaf `{0}` has no non-leaf neighbour left")]
    IsolatedLeaf(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub type Result<T> = std::result::Result<T, PruneError>;

type Edge = (String, String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    NonLeaf,
    Leaf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Confirmed,
    Dropped,
    Kept,
    KeptLowConfidence,
    Removed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LeafRule {
    Card1,
    Card2,
    Card3Plus,
}

/// Outcome of testing one parent hypothesis for a card-2 leaf.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Hypothesis {
    pub parent: String,
    /// Non-leaf two-hop neighbours of the leaf once the alternative edge is deleted.
    pub two_hop: Vec<String>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    Separator { components: Vec<Vec<String>> },
    LeafPair,
    Forced,
    TwoHop { hypotheses: Vec<Hypothesis> },
    CommonNeighbour { candidates: Vec<String> },
}

/// One line of reconstruction provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EdgeDecision {
    pub edge: Edge,
    pub stage: Stage,
    pub rule: String,
    pub verdict: Verdict,
    pub witness: Witness,
}

/// Result of the non-leaf stage: the reduced graph and the node classification.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneOutcome {
    pub t_bar: UndirectedGraph,
    pub v_nl: BTreeSet<String>,
    pub v_l: BTreeSet<String>,
    pub confirmed: Vec<Edge>,
    pub dropped_nonleaf_pairs: Vec<Edge>,
    pub dropped_leaf_pairs: Vec<Edge>,
    pub decisions: Vec<EdgeDecision>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LeafResolution {
    pub leaf: String,
    pub kin_set: Vec<String>,
    pub kept: Edge,
    pub removed: Vec<Edge>,
    pub rule: LeafRule,
    pub low_confidence: bool,
    pub witness: Witness,
}

/// How to handle leaves the exact rules cannot resolve.
#[derive(Clone, Copy, Default)]
pub enum TieBreak<'a> {
    /// Raise [`PruneError::Ambiguous`].
    #[default]
    Strict,
    /// Keep the candidate parent with the larger coupling score and flag it.
    Robust(&'a dyn Fn(&str, &str) -> f64),
}

impl std::fmt::Debug for TieBreak<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TieBreak::Strict => f.write_str("Strict"),
            TieBreak::Robust(_) => f.write_str("Robust(..)"),
        }
    }
}

fn sorted_edges(g: &UndirectedGraph, edges: &[(usize, usize)]) -> Vec<Edge> {
    let mut v: Vec<Edge> = edges
        .iter()
        .map(|&(a, b)| edge_key(g.label(a), g.label(b)))
        .collect();
    v.sort();
    v
}

/// Confirms non-leaf edges by vertex separation and drops leaf-leaf pairs.
pub fn prune_nonleaf(kin: &UndirectedGraph) -> Result<PruneOutcome> {
    let n = kin.node_count();
    if n < 5 {
        return Err(PruneError::AssumptionViolated(format!(
            "need at least 5 nodes, got {n}"
        )));
    }
    let mut edges = kin.index_edges();
    let key = |&(a, b): &(usize, usize)| {
        let (x, y) = (kin.label(a), kin.label(b));
        if x <= y {
            (x, y)
        } else {
            (y, x)
        }
    };
    edges.sort_by(|e, f| key(e).cmp(&key(f)));

    let mut is_nl = vec![false; n];
    let mut confirmed = Vec::new();
    let mut decisions = Vec::with_capacity(edges.len());
    let mut unconfirmed = Vec::new();
    for &(a, b) in &edges {
        let comps = separates_indices(kin, &[a, b]);
        if comps.len() >= 2 {
            is_nl[a] = true;
            is_nl[b] = true;
            confirmed.push((a, b));
            decisions.push(EdgeDecision {
                edge: edge_key(kin.label(a), kin.label(b)),
                stage: Stage::NonLeaf,
                rule: "separator".into(),
                verdict: Verdict::Confirmed,
                witness: Witness::Separator {
                    components: comps.iter().map(|c| kin.labels_of(c)).collect(),
                },
            });
        } else {
            unconfirmed.push((a, b, comps));
        }
    }
    if confirmed.is_empty() {
        return Err(PruneError::AssumptionViolated(
            "no kin edge separates the graph, so no non-leaf nodes were found".into(),
        ));
    }
    let backbone = UndirectedGraph::from_index_edges(kin.nodes().to_vec(), &confirmed);
    let backbone_nodes = (0..n).filter(|&i| is_nl[i]).count();
    let removed: Vec<bool> = is_nl.iter().map(|&x| !x).collect();
    let pieces = backbone.components_excluding(&removed);
    if pieces.len() != 1 || pieces[0].len() != backbone_nodes {
        return Err(PruneError::AssumptionViolated(format!(
            "confirmed edges form {} disconnected pieces",
            pieces.len()
        )));
    }

    let mut t_bar_edges = confirmed.clone();
    let mut dropped_nl = Vec::new();
    let mut dropped_l = Vec::new();
    for (a, b, comps) in unconfirmed {
        let edge = edge_key(kin.label(a), kin.label(b));
        let (verdict, rule, witness) = match (is_nl[a], is_nl[b]) {
            (true, true) => {
                dropped_nl.push((a, b));
                (
                    Verdict::Dropped,
                    "non-leaf pair without separator",
                    Witness::Separator {
                        components: comps.iter().map(|c| kin.labels_of(c)).collect(),
                    },
                )
            }
            (false, false) => {
                dropped_l.push((a, b));
                (Verdict::Dropped, "leaf pair", Witness::LeafPair)
            }
            _ => {
                t_bar_edges.push((a, b));
                continue;
            }
        };
        decisions.push(EdgeDecision {
            edge,
            stage: Stage::NonLeaf,
            rule: rule.into(),
            verdict,
            witness,
        });
    }

    let t_bar = UndirectedGraph::from_index_edges(kin.nodes().to_vec(), &t_bar_edges);
    let v_nl = (0..n)
        .filter(|&i| is_nl[i])
        .map(|i| kin.label(i).to_string())
        .collect();
    let v_l = (0..n)
        .filter(|&i| !is_nl[i])
        .map(|i| kin.label(i).to_string())
        .collect();
    Ok(PruneOutcome {
        confirmed: sorted_edges(kin, &confirmed),
        dropped_nonleaf_pairs: sorted_edges(kin, &dropped_nl),
        dropped_leaf_pairs: sorted_edges(kin, &dropped_l),
        t_bar,
        v_nl,
        v_l,
        decisions,
    })
}

/// Non-leaf two-hop neighbours of `leaf` once the edge `(leaf, cut)` is deleted.
fn nonleaf_two_hop_without(
    t_bar: &UndirectedGraph,
    leaf: usize,
    cut: usize,
    is_nl: &[bool],
) -> BTreeSet<usize> {
    let adj = t_bar.adjacency();
    let near = |k: usize| k != cut && adj[leaf].contains(&k);
    adj[leaf]
        .iter()
        .filter(|&&j| j != cut)
        .flat_map(|&j| adj[j].iter().copied())
        .filter(|&k| k != leaf && !near(k) && is_nl[k])
        .collect()
}

fn pick_by_score(
    score: &dyn Fn(&str, &str) -> f64,
    leaf: &str,
    candidates: &[usize],
    t_bar: &UndirectedGraph,
) -> usize {
    let mut best = candidates[0];
    let mut best_s = score(leaf, t_bar.label(best));
    for &c in &candidates[1..] {
        let s = score(leaf, t_bar.label(c));
        if s > best_s {
            best = c;
            best_s = s;
        }
    }
    best
}

/// Resolves the unique parent of a strict-mode leaf.
pub fn resolve_leaf(
    t_bar: &UndirectedGraph,
    leaf: &str,
    v_nl: &BTreeSet<String>,
) -> Result<LeafResolution> {
    resolve_leaf_with(t_bar, leaf, v_nl, TieBreak::Strict)
}

pub fn resolve_leaf_with(
    t_bar: &UndirectedGraph,
    leaf: &str,
    v_nl: &BTreeSet<String>,
    tie: TieBreak<'_>,
) -> Result<LeafResolution> {
    let li = t_bar.index_of(leaf)?;
    if v_nl.contains(leaf) {
        return Err(PruneError::AssumptionViolated(format!(
            "`{leaf}` is a non-leaf node"
        )));
    }
    resolve_leaf_indexed(t_bar, li, &nonleaf_mask(t_bar, v_nl)?, tie)
}

fn nonleaf_mask(t_bar: &UndirectedGraph, v_nl: &BTreeSet<String>) -> Result<Vec<bool>> {
    let mut is_nl = vec![false; t_bar.node_count()];
    for l in v_nl {
        is_nl[t_bar.index_of(l)?] = true;
    }
    Ok(is_nl)
}

fn resolve_leaf_indexed(
    t_bar: &UndirectedGraph,
    li: usize,
    is_nl: &[bool],
    tie: TieBreak<'_>,
) -> Result<LeafResolution> {
    let leaf = t_bar.label(li);
    let kin_set: Vec<usize> = t_bar.adjacency()[li].iter().copied().collect();
    if let Some(&bad) = kin_set.iter().find(|&&k| !is_nl[k]) {
        return Err(PruneError::AssumptionViolated(format!(
            "leaf `{leaf}` is adjacent to leaf `{}` in the reduced graph",
            t_bar.label(bad)
        )));
    }
    let ambiguous = |reason: String| PruneError::Ambiguous {
        leaf: leaf.to_string(),
        reason,
    };

    let (parent, rule, witness, low_confidence) = match kin_set.len() {
        0 => return Err(PruneError::IsolatedLeaf(leaf.to_string())),
        1 => (kin_set[0], LeafRule::Card1, Witness::Forced, false),
        2 => {
            let mut hypotheses = Vec::with_capacity(2);
            let mut passing = Vec::new();
            for (p, q) in [(kin_set[0], kin_set[1]), (kin_set[1], kin_set[0])] {
                let two_hop = nonleaf_two_hop_without(t_bar, li, q, is_nl);
                let passed = two_hop.len() == 1 && two_hop.contains(&q);
                if passed {
                    passing.push(p);
                }
                hypotheses.push(Hypothesis {
                    parent: t_bar.label(p).to_string(),
                    two_hop: t_bar.labels_of(&two_hop.into_iter().collect::<Vec<_>>()),
                    passed,
                });
            }
            let witness = Witness::TwoHop { hypotheses };
            match (passing.len(), tie) {
                (1, _) => (passing[0], LeafRule::Card2, witness, false),
                (k, TieBreak::Robust(score)) => {
                    let pool = if k == 0 { &kin_set } else { &passing };
                    let p = pick_by_score(score, leaf, pool, t_bar);
                    (p, LeafRule::Card2, witness, true)
                }
                (k, TieBreak::Strict) => {
                    return Err(ambiguous(format!(
                        "{k} of 2 parent hypotheses pass the two-hop test"
                    )))
                }
            }
        }
        _ => {
            let adj = t_bar.adjacency();
            let candidates: Vec<usize> = kin_set
                .iter()
                .copied()
                .filter(|&b| kin_set.iter().all(|&k| k == b || adj[b].contains(&k)))
                .collect();
            let witness = Witness::CommonNeighbour {
                candidates: t_bar.labels_of(&candidates),
            };
            match (candidates.len(), tie) {
                (1, _) => (candidates[0], LeafRule::Card3Plus, witness, false),
                (k, TieBreak::Robust(score)) => {
                    let pool = if k == 0 { &kin_set } else { &candidates };
                    let p = pick_by_score(score, leaf, pool, t_bar);
                    (p, LeafRule::Card3Plus, witness, true)
                }
                (k, TieBreak::Strict) => {
                    return Err(ambiguous(format!(
                        "{k} kin nodes are adjacent to the rest of the kin set"
                    )))
                }
            }
        }
    };

    let mut removed: Vec<Edge> = kin_set
        .iter()
        .filter(|&&k| k != parent)
        .map(|&k| edge_key(leaf, t_bar.label(k)))
        .collect();
    removed.sort();
    Ok(LeafResolution {
        leaf: leaf.to_string(),
        kin_set: t_bar.labels_of(&kin_set),
        kept: edge_key(leaf, t_bar.label(parent)),
        removed,
        rule,
        low_confidence,
        witness,
    })
}

/// Resolves every leaf and returns the estimated tree together with the per-leaf records.
pub fn prune_leaf_with(
    outcome: &PruneOutcome,
    tie: TieBreak<'_>,
) -> Result<(UndirectedGraph, Vec<LeafResolution>)> {
    let t_bar = &outcome.t_bar;
    let mut resolutions = Vec::with_capacity(outcome.v_l.len());
    let mut estimate = UndirectedGraph::empty(t_bar.nodes().iter().cloned())?;
    for (a, b) in &outcome.confirmed {
        estimate.add_edge(a, b)?;
    }
    let is_nl = nonleaf_mask(t_bar, &outcome.v_nl)?;
    for leaf in &outcome.v_l {
        let r = resolve_leaf_indexed(t_bar, t_bar.index_of(leaf)?, &is_nl, tie)?;
        estimate.add_edge(&r.kept.0, &r.kept.1)?;
        resolutions.push(r);
    }
    if let Err(e) = validate_tree(&estimate) {
        return Err(PruneError::AssumptionViolated(format!(
            "reconstructed edges do not form a tree: {e}"
        )));
    }
    Ok((estimate, resolutions))
}

/// Strict leaf stage: `T* = confirmed ∪ kept leaf edges`.
pub fn prune_leaf(outcome: &PruneOutcome) -> Result<UndirectedGraph> {
    prune_leaf_with(outcome, TieBreak::Strict).map(|(g, _)| g)
}

/// Full output of [`reconstruct_tree`].
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub tree: UndirectedGraph,
    pub outcome: PruneOutcome,
    pub leaves: Vec<LeafResolution>,
    /// Symmetric difference between the input and the kin graph of `tree`.
    /// Always empty in strict mode.
    pub kin_mismatch: Vec<Edge>,
}

impl Reconstruction {
    /// Every edge decision across both stages, non-leaf stage first.
    pub fn provenance(&self) -> Vec<EdgeDecision> {
        let mut out = self.outcome.decisions.clone();
        for r in &self.leaves {
            let rule = format!("{:?}", r.rule);
            out.push(EdgeDecision {
                edge: r.kept.clone(),
                stage: Stage::Leaf,
                rule: rule.clone(),
                verdict: if r.low_confidence {
                    Verdict::KeptLowConfidence
                } else {
                    Verdict::Kept
                },
                witness: r.witness.clone(),
            });
            for e in &r.removed {
                out.push(EdgeDecision {
                    edge: e.clone(),
                    stage: Stage::Leaf,
                    rule: rule.clone(),
                    verdict: Verdict::Removed,
                    witness: r.witness.clone(),
                });
            }
        }
        out
    }
}

pub fn reconstruct_tree_with(kin: &UndirectedGraph, tie: TieBreak<'_>) -> Result<Reconstruction> {
    let outcome = prune_nonleaf(kin)?;
    let (tree, leaves) = prune_leaf_with(&outcome, tie)?;
    let implied = kin_graph_oracle(&validate_tree(&tree)?);
    let kin_mismatch: Vec<Edge> = if implied == *kin {
        Vec::new()
    } else {
        implied
            .edge_set()
            .symmetric_difference(&kin.edge_set())
            .cloned()
            .collect()
    };
    if !kin_mismatch.is_empty() && matches!(tie, TieBreak::Strict) {
        return Err(PruneError::AssumptionViolated(format!(
            "input differs from the kin graph of the reconstructed tree on {} edges",
            kin_mismatch.len()
        )));
    }
    Ok(Reconstruction {
        tree,
        outcome,
        leaves,
        kin_mismatch,
    })
}

/// Non-leaf stage followed by the leaf stage, strict mode.
pub fn reconstruct_tree(kin: &UndirectedGraph) -> Result<Reconstruction> {
    reconstruct_tree_with(kin, TieBreak::Strict)
}
