//! Labelled graph core: undirected and directed graphs, tree validation,
//! two-hop neighbourhoods, the analytic kin graph, vertex separation and
//! the d-separation oracle (moral ancestral graph route).
//!
//! Node identity is the string label. Internally every graph keeps the
//! labels in declaration order and works on `usize` indices into that list.

use std::collections::{BTreeSet, HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("graph has no nodes")]
    Empty,
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("duplicate node `{0}`")]
    DuplicateNode(String),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(String, String),
    #[error("self-loop on `{0}`")]
    SelfLoop(String),
    #[error("graph is not connected: components {0:?}")]
    NotConnected(Vec<Vec<String>>),
    #[error("graph has a cycle: {0:?}")]
    HasCycle(Vec<String>),
    #[error("removing the separator leaves no nodes")]
    EmptyRemainder,
    #[error("node sets must be pairwise disjoint (`{0}` appears twice)")]
    OverlappingSets(String),
    #[error("node set `{0}` must be nonempty")]
    EmptySet(&'static str),
    #[error("infeasible request: {0}")]
    Infeasible(String),
}

pub type Result<T> = std::result::Result<T, GraphError>;

fn build_index(labels: &[String]) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::with_capacity(labels.len());
    for (i, l) in labels.iter().enumerate() {
        if index.insert(l.clone(), i).is_some() {
            return Err(GraphError::DuplicateNode(l.clone()));
        }
    }
    Ok(index)
}

/// Simple undirected graph on labelled nodes.
#[derive(Debug, Clone)]
pub struct UndirectedGraph {
    labels: Vec<String>,
    index: HashMap<String, usize>,
    adj: Vec<BTreeSet<usize>>,
}

impl PartialEq for UndirectedGraph {
    fn eq(&self, other: &Self) -> bool {
        self.labels == other.labels && self.adj == other.adj
    }
}

impl Eq for UndirectedGraph {}

impl UndirectedGraph {
    /// Builds a graph, rejecting self-loops, duplicate edges and undeclared endpoints.
    pub fn new<N, S, E, A, B>(nodes: N, edges: E) -> Result<Self>
    where
        N: IntoIterator<Item = S>,
        S: Into<String>,
        E: IntoIterator<Item = (A, B)>,
        A: AsRef<str>,
        B: AsRef<str>,
    {
        let mut g = Self::empty(nodes)?;
        for (a, b) in edges {
            let (a, b) = (a.as_ref(), b.as_ref());
            let ia = g.index_of(a)?;
            let ib = g.index_of(b)?;
            if ia == ib {
                return Err(GraphError::SelfLoop(a.to_string()));
            }
            if !g.adj[ia].insert(ib) {
                return Err(GraphError::DuplicateEdge(a.to_string(), b.to_string()));
            }
            g.adj[ib].insert(ia);
        }
        Ok(g)
    }

    /// Edgeless graph on the given nodes.
    pub fn empty<N, S>(nodes: N) -> Result<Self>
    where
        N: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = nodes.into_iter().map(Into::into).collect();
        let index = build_index(&labels)?;
        let adj = vec![BTreeSet::new(); labels.len()];
        Ok(Self { labels, index, adj })
    }

    /// Graph on nodes `"1"..="n"` from 1-based integer edges.
    pub fn numbered(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let nodes: Vec<String> = (1..=n).map(|i| i.to_string()).collect();
        Self::new(
            nodes,
            edges.iter().map(|&(a, b)| (a.to_string(), b.to_string())),
        )
    }

    pub(crate) fn from_index_edges(labels: Vec<String>, edges: &[(usize, usize)]) -> Self {
        let index = build_index(&labels).expect("labels are unique");
        let mut adj = vec![BTreeSet::new(); labels.len()];
        for &(a, b) in edges {
            debug_assert!(a != b);
            adj[a].insert(b);
            adj[b].insert(a);
        }
        Self { labels, index, adj }
    }

    pub fn nodes(&self) -> &[String] {
        &self.labels
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.index
            .get(label)
            .copied()
            .ok_or_else(|| GraphError::UnknownNode(label.to_string()))
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn contains_node(&self, label: &str) -> bool {
        self.index.contains_key(label)
    }

    pub fn contains_edge(&self, a: &str, b: &str) -> bool {
        match (self.index.get(a), self.index.get(b)) {
            (Some(&ia), Some(&ib)) => self.adj[ia].contains(&ib),
            _ => false,
        }
    }

    pub fn degree(&self, label: &str) -> Result<usize> {
        Ok(self.adj[self.index_of(label)?].len())
    }

    pub fn neighbors(&self, label: &str) -> Result<Vec<&str>> {
        let i = self.index_of(label)?;
        Ok(self.adj[i]
            .iter()
            .map(|&j| self.labels[j].as_str())
            .collect())
    }

    pub(crate) fn adjacency(&self) -> &[BTreeSet<usize>] {
        &self.adj
    }

    /// Edges as index pairs `(i, j)` with `i < j`, in index order.
    pub fn index_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (i, nb) in self.adj.iter().enumerate() {
            out.extend(nb.range(i + 1..).map(|&j| (i, j)));
        }
        out
    }

    /// Edges as label pairs, lexicographically smaller label first, sorted.
    pub fn edges(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .index_edges()
            .into_iter()
            .map(|(i, j)| edge_key(&self.labels[i], &self.labels[j]))
            .collect();
        out.sort();
        out
    }

    /// Label-keyed edge set, independent of node declaration order.
    pub fn edge_set(&self) -> BTreeSet<(String, String)> {
        self.edges().into_iter().collect()
    }

    /// Same nodes, and the same edge set, regardless of node order.
    pub fn same_topology(&self, other: &UndirectedGraph) -> bool {
        let a: BTreeSet<&String> = self.labels.iter().collect();
        let b: BTreeSet<&String> = other.labels.iter().collect();
        a == b && self.edge_set() == other.edge_set()
    }

    pub fn add_edge(&mut self, a: &str, b: &str) -> Result<bool> {
        let (ia, ib) = (self.index_of(a)?, self.index_of(b)?);
        if ia == ib {
            return Err(GraphError::SelfLoop(a.to_string()));
        }
        self.adj[ib].insert(ia);
        Ok(self.adj[ia].insert(ib))
    }

    pub fn remove_edge(&mut self, a: &str, b: &str) -> Result<bool> {
        let (ia, ib) = (self.index_of(a)?, self.index_of(b)?);
        self.adj[ib].remove(&ia);
        Ok(self.adj[ia].remove(&ib))
    }

    /// Connected components as index lists, each sorted, ordered by smallest member.
    pub(crate) fn components_excluding(&self, removed: &[bool]) -> Vec<Vec<usize>> {
        let n = self.labels.len();
        let mut seen = removed.to_vec();
        let mut comps = Vec::new();
        let mut queue = VecDeque::new();
        for s in 0..n {
            if seen[s] {
                continue;
            }
            seen[s] = true;
            queue.push_back(s);
            let mut comp = vec![s];
            while let Some(u) = queue.pop_front() {
                for &v in &self.adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                        queue.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps
    }

    pub fn components(&self) -> Vec<Vec<String>> {
        let removed = vec![false; self.labels.len()];
        self.components_excluding(&removed)
            .into_iter()
            .map(|c| self.labels_of(&c))
            .collect()
    }

    pub(crate) fn labels_of(&self, idx: &[usize]) -> Vec<String> {
        idx.iter().map(|&i| self.labels[i].clone()).collect()
    }

    /// Returns a copy with the nodes relabelled via `f` (must stay injective).
    pub fn relabel<F: Fn(&str) -> String>(&self, f: F) -> Result<Self> {
        let labels: Vec<String> = self.labels.iter().map(|l| f(l)).collect();
        let index = build_index(&labels)?;
        Ok(Self {
            labels,
            index,
            adj: self.adj.clone(),
        })
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            nodes: self.labels.clone(),
            edges: self.edges().into_iter().map(|(a, b)| [a, b]).collect(),
        }
    }

    pub fn from_document(doc: &GraphDocument) -> Result<Self> {
        Self::new(
            doc.nodes.iter().cloned(),
            doc.edges.iter().map(|[a, b]| (a.as_str(), b.as_str())),
        )
    }
}

/// Orders an edge with the lexicographically smaller label first.
pub fn edge_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// JSON interchange form: `{"nodes":[...],"edges":[[a,b],...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub nodes: Vec<String>,
    pub edges: Vec<[String; 2]>,
}

/// A validated tree together with its diameter (edge count of the longest path).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeTopology {
    graph: UndirectedGraph,
    diameter: usize,
}

impl TreeTopology {
    pub fn graph(&self) -> &UndirectedGraph {
        &self.graph
    }

    pub fn diameter(&self) -> usize {
        self.diameter
    }

    pub fn into_graph(self) -> UndirectedGraph {
        self.graph
    }

    /// Labels of degree-one nodes.
    pub fn leaves(&self) -> Vec<&str> {
        (0..self.graph.node_count())
            .filter(|&i| self.graph.adj[i].len() == 1)
            .map(|i| self.graph.label(i))
            .collect()
    }
}

fn bfs_far(g: &UndirectedGraph, s: usize) -> (usize, usize) {
    let n = g.node_count();
    let mut dist = vec![usize::MAX; n];
    dist[s] = 0;
    let mut queue = VecDeque::from([s]);
    let mut far = (s, 0);
    while let Some(u) = queue.pop_front() {
        if dist[u] > far.1 {
            far = (u, dist[u]);
        }
        for &v in &g.adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    far
}

fn find_cycle(g: &UndirectedGraph) -> Option<Vec<usize>> {
    let n = g.node_count();
    let mut parent = vec![usize::MAX; n];
    let mut visited = vec![false; n];
    for root in 0..n {
        if visited[root] {
            continue;
        }
        visited[root] = true;
        let mut stack = vec![root];
        while let Some(u) = stack.pop() {
            for &v in &g.adj[u] {
                if v == parent[u] {
                    continue;
                }
                if visited[v] {
                    // Walk both endpoints up to their common ancestor.
                    let path_to_root = |mut x: usize| {
                        let mut p = vec![x];
                        while parent[x] != usize::MAX {
                            x = parent[x];
                            p.push(x);
                        }
                        p
                    };
                    let pu = path_to_root(u);
                    let pv = path_to_root(v);
                    let on_pv: BTreeSet<usize> = pv.iter().copied().collect();
                    let meet_pos = pu.iter().position(|x| on_pv.contains(x))?;
                    let meet = pu[meet_pos];
                    let mut cycle: Vec<usize> = pu[..=meet_pos].to_vec();
                    let vpos = pv.iter().position(|&x| x == meet)?;
                    cycle.extend(pv[..vpos].iter().rev());
                    return Some(cycle);
                }
                visited[v] = true;
                parent[v] = u;
                stack.push(v);
            }
        }
    }
    None
}

/// Checks that `g` is a tree (connected, acyclic) and computes its diameter.
pub fn validate_tree(g: &UndirectedGraph) -> Result<TreeTopology> {
    if g.node_count() == 0 {
        return Err(GraphError::Empty);
    }
    let comps = g.components();
    if comps.len() > 1 {
        return Err(GraphError::NotConnected(comps));
    }
    if g.edge_count() != g.node_count() - 1 {
        let cycle = find_cycle(g).expect("connected graph with |E| >= |V| has a cycle");
        return Err(GraphError::HasCycle(g.labels_of(&cycle)));
    }
    let (a, _) = bfs_far(g, 0);
    let (_, diameter) = bfs_far(g, a);
    Ok(TreeTopology {
        graph: g.clone(),
        diameter,
    })
}

pub(crate) fn two_hop_indices(adj: &[BTreeSet<usize>], i: usize) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    for &j in &adj[i] {
        for &k in &adj[j] {
            if k != i && !adj[i].contains(&k) {
                out.insert(k);
            }
        }
    }
    out
}

/// Nodes at distance exactly two from `i` through a common neighbour.
pub fn two_hop_neighbors(g: &UndirectedGraph, i: &str) -> Result<BTreeSet<String>> {
    let idx = g.index_of(i)?;
    Ok(two_hop_indices(&g.adj, idx)
        .into_iter()
        .map(|k| g.labels[k].clone())
        .collect())
}

/// Analytic kin graph of a tree: tree edges plus every two-hop pair.
pub fn kin_graph_oracle(t: &TreeTopology) -> UndirectedGraph {
    let g = t.graph();
    let mut kin = g.clone();
    for i in 0..g.node_count() {
        for k in two_hop_indices(&g.adj, i) {
            kin.adj[i].insert(k);
            kin.adj[k].insert(i);
        }
    }
    kin
}

/// Result of deleting a vertex set: the remaining connected components.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Separation {
    pub separated: bool,
    pub components: Vec<Vec<String>>,
}

pub(crate) fn separates_indices(g: &UndirectedGraph, z: &[usize]) -> Vec<Vec<usize>> {
    let mut removed = vec![false; g.node_count()];
    for &i in z {
        removed[i] = true;
    }
    g.components_excluding(&removed)
}

/// Removes `z` and reports whether the remainder falls apart into two or more pieces.
pub fn separates<S: AsRef<str>>(g: &UndirectedGraph, z: &[S]) -> Result<Separation> {
    let zi = z
        .iter()
        .map(|l| g.index_of(l.as_ref()))
        .collect::<Result<BTreeSet<usize>>>()?;
    if zi.len() >= g.node_count() {
        return Err(GraphError::EmptyRemainder);
    }
    let comps = separates_indices(g, &zi.into_iter().collect::<Vec<_>>());
    Ok(Separation {
        separated: comps.len() >= 2,
        components: comps.iter().map(|c| g.labels_of(c)).collect(),
    })
}

/// Directed graph on labelled nodes; an arc `(a, b)` reads `a -> b`.
#[derive(Debug, Clone)]
pub struct DirectedGraph {
    labels: Vec<String>,
    index: HashMap<String, usize>,
    out: Vec<BTreeSet<usize>>,
    inc: Vec<BTreeSet<usize>>,
}

impl PartialEq for DirectedGraph {
    fn eq(&self, other: &Self) -> bool {
        self.labels == other.labels && self.out == other.out
    }
}

impl Eq for DirectedGraph {}

impl DirectedGraph {
    pub fn new<N, S, E, A, B>(nodes: N, arcs: E) -> Result<Self>
    where
        N: IntoIterator<Item = S>,
        S: Into<String>,
        E: IntoIterator<Item = (A, B)>,
        A: AsRef<str>,
        B: AsRef<str>,
    {
        let labels: Vec<String> = nodes.into_iter().map(Into::into).collect();
        let index = build_index(&labels)?;
        let n = labels.len();
        let mut g = Self {
            labels,
            index,
            out: vec![BTreeSet::new(); n],
            inc: vec![BTreeSet::new(); n],
        };
        for (a, b) in arcs {
            let (a, b) = (a.as_ref(), b.as_ref());
            let ia = g.index_of(a)?;
            let ib = g.index_of(b)?;
            if ia == ib {
                return Err(GraphError::SelfLoop(a.to_string()));
            }
            g.out[ia].insert(ib);
            g.inc[ib].insert(ia);
        }
        Ok(g)
    }

    /// Bi-directed graph with both arcs for every undirected edge.
    pub fn bidirected(g: &UndirectedGraph) -> Self {
        Self {
            labels: g.labels.clone(),
            index: g.index.clone(),
            out: g.adj.clone(),
            inc: g.adj.clone(),
        }
    }

    pub fn nodes(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.index
            .get(label)
            .copied()
            .ok_or_else(|| GraphError::UnknownNode(label.to_string()))
    }

    pub fn contains_arc(&self, a: &str, b: &str) -> bool {
        match (self.index.get(a), self.index.get(b)) {
            (Some(&ia), Some(&ib)) => self.out[ia].contains(&ib),
            _ => false,
        }
    }

    pub fn arc_count(&self) -> usize {
        self.out.iter().map(BTreeSet::len).sum()
    }

    pub fn arcs(&self) -> Vec<(String, String)> {
        let mut v = Vec::new();
        for (i, succ) in self.out.iter().enumerate() {
            for &j in succ {
                v.push((self.labels[i].clone(), self.labels[j].clone()));
            }
        }
        v
    }

    /// Undirected topology: orientation dropped, repetitions merged.
    pub fn topology(&self) -> UndirectedGraph {
        let mut edges = Vec::new();
        for (i, succ) in self.out.iter().enumerate() {
            edges.extend(succ.iter().map(|&j| (i, j)));
        }
        UndirectedGraph::from_index_edges(self.labels.clone(), &edges)
    }

    fn ancestral_mask(&self, seeds: &[usize]) -> Vec<bool> {
        let mut keep = vec![false; self.labels.len()];
        let mut stack: Vec<usize> = seeds.to_vec();
        for &s in seeds {
            keep[s] = true;
        }
        while let Some(u) = stack.pop() {
            for &p in &self.inc[u] {
                if !keep[p] {
                    keep[p] = true;
                    stack.push(p);
                }
            }
        }
        keep
    }

    fn induced(&self, keep: &[bool]) -> Self {
        let kept: Vec<usize> = (0..self.labels.len()).filter(|&i| keep[i]).collect();
        let mut remap = vec![usize::MAX; self.labels.len()];
        for (new, &old) in kept.iter().enumerate() {
            remap[old] = new;
        }
        let labels: Vec<String> = kept.iter().map(|&i| self.labels[i].clone()).collect();
        let index = build_index(&labels).expect("unique");
        let n = labels.len();
        let mut out = vec![BTreeSet::new(); n];
        let mut inc = vec![BTreeSet::new(); n];
        for &old in &kept {
            for &succ in &self.out[old] {
                if keep[succ] {
                    out[remap[old]].insert(remap[succ]);
                    inc[remap[succ]].insert(remap[old]);
                }
            }
        }
        Self {
            labels,
            index,
            out,
            inc,
        }
    }
}

/// Moral graph: the topology plus an edge between every pair of co-parents.
pub fn moralize(g: &DirectedGraph) -> UndirectedGraph {
    let mut m = g.topology();
    for parents in &g.inc {
        let ps: Vec<usize> = parents.iter().copied().collect();
        for (x, &a) in ps.iter().enumerate() {
            for &b in &ps[x + 1..] {
                m.adj[a].insert(b);
                m.adj[b].insert(a);
            }
        }
    }
    m
}

/// Subgraph induced on `an(B)`, the reflexive ancestors of `b`.
pub fn ancestral_graph<S: AsRef<str>>(g: &DirectedGraph, b: &[S]) -> Result<DirectedGraph> {
    let seeds = b
        .iter()
        .map(|l| g.index_of(l.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    Ok(g.induced(&g.ancestral_mask(&seeds)))
}

/// d-separation of `i` and `j` given `z`, via separation in the moral ancestral graph.
pub fn d_separated<S: AsRef<str>>(g: &DirectedGraph, i: &[S], z: &[S], j: &[S]) -> Result<bool> {
    if i.is_empty() {
        return Err(GraphError::EmptySet("I"));
    }
    if j.is_empty() {
        return Err(GraphError::EmptySet("J"));
    }
    let mut seen = BTreeSet::new();
    for l in i.iter().chain(z).chain(j) {
        let l = l.as_ref();
        g.index_of(l)?;
        if !seen.insert(l) {
            return Err(GraphError::OverlappingSets(l.to_string()));
        }
    }
    let all: Vec<&str> = seen.into_iter().collect();
    let anc = ancestral_graph(g, &all)?;
    let moral = moralize(&anc);
    let mut blocked = vec![false; moral.node_count()];
    for l in z {
        blocked[moral.index_of(l.as_ref())?] = true;
    }
    let targets: BTreeSet<usize> = j
        .iter()
        .map(|l| moral.index_of(l.as_ref()))
        .collect::<Result<_>>()?;
    let mut stack = Vec::new();
    for l in i {
        let s = moral.index_of(l.as_ref())?;
        blocked[s] = true;
        stack.push(s);
    }
    while let Some(u) = stack.pop() {
        if targets.contains(&u) {
            return Ok(false);
        }
        for &v in &moral.adj[u] {
            if !blocked[v] {
                blocked[v] = true;
                stack.push(v);
            }
        }
    }
    Ok(true)
}

/// Decodes a Prüfer sequence over `0..n` (length `n - 2`) into tree edges.
pub(crate) fn prufer_decode(seq: &[usize], n: usize) -> Vec<(usize, usize)> {
    let mut degree = vec![1usize; n];
    for &s in seq {
        degree[s] += 1;
    }
    let mut leaves: BTreeSet<usize> = (0..n).filter(|&i| degree[i] == 1).collect();
    let mut edges = Vec::with_capacity(n - 1);
    for &s in seq {
        let leaf = leaves.pop_first().expect("a leaf always exists");
        edges.push((leaf, s));
        degree[s] -= 1;
        if degree[s] == 1 {
            leaves.insert(s);
        }
    }
    let last: Vec<usize> = leaves.into_iter().collect();
    edges.push((last[0], last[1]));
    edges
}

fn numbered_labels(n: usize) -> Vec<String> {
    (1..=n).map(|i| i.to_string()).collect()
}

fn tree_from_edges(n: usize, edges: &[(usize, usize)]) -> TreeTopology {
    let g = UndirectedGraph::from_index_edges(numbered_labels(n), edges);
    validate_tree(&g).expect("construction yields a tree")
}

const REJECTION_ATTEMPTS: usize = 10_000;

/// Uniform random labelled tree on nodes `"1"..="n"` with diameter at least
/// `min_diameter`, by Prüfer decoding and rejection. Deterministic per seed.
///
/// If rejection keeps failing (very long diameters on many nodes) the tree is
/// grown from a random spine of the requested length instead, which is no
/// longer uniform but always satisfies the bound.
pub fn random_tree(n: usize, seed: u64, min_diameter: usize) -> Result<TreeTopology> {
    if n < 2 {
        return Err(GraphError::Infeasible(format!("need n >= 2, got {n}")));
    }
    if min_diameter > n - 1 {
        return Err(GraphError::Infeasible(format!(
            "diameter {min_diameter} impossible on {n} nodes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if n == 2 {
        return Ok(tree_from_edges(2, &[(0, 1)]));
    }
    for _ in 0..REJECTION_ATTEMPTS {
        let seq: Vec<usize> = (0..n - 2).map(|_| rng.random_range(0..n)).collect();
        let t = tree_from_edges(n, &prufer_decode(&seq, n));
        if t.diameter() >= min_diameter {
            return Ok(t);
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let spine = &order[..=min_diameter];
    let mut edges: Vec<(usize, usize)> = spine.windows(2).map(|w| (w[0], w[1])).collect();
    for (k, &v) in order.iter().enumerate().skip(min_diameter + 1) {
        let attach = order[rng.random_range(0..k)];
        edges.push((attach, v));
    }
    Ok(tree_from_edges(n, &edges))
}

/// Every labelled tree on nodes `"1"..="n"` (`n^(n-2)` of them), in Prüfer order.
pub fn labelled_trees(n: usize) -> impl Iterator<Item = TreeTopology> {
    assert!(n >= 2, "labelled_trees needs n >= 2");
    let len = n - 2;
    let total = n.pow(len as u32);
    (0..total).map(move |mut code| {
        let mut seq = vec![0usize; len];
        for s in seq.iter_mut() {
            *s = code % n;
            code /= n;
        }
        tree_from_edges(n, &prufer_decode(&seq, n))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain5() -> UndirectedGraph {
        UndirectedGraph::numbered(5, &[(1, 2), (2, 3), (3, 4), (4, 5)]).unwrap()
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn chain_is_tree_with_diameter_four() {
        let t = validate_tree(&chain5()).unwrap();
        assert_eq!(t.diameter(), 4);
        assert_eq!(t.leaves(), vec!["1", "5"]);
    }

    #[test]
    fn triangle_has_cycle() {
        let g = UndirectedGraph::numbered(3, &[(1, 2), (2, 3), (3, 1)]).unwrap();
        match validate_tree(&g) {
            Err(GraphError::HasCycle(c)) => {
                assert_eq!(c.len(), 3);
                let s: BTreeSet<_> = c.into_iter().collect();
                assert_eq!(s, set(&["1", "2", "3"]));
            }
            other => panic!("expected HasCycle, got {other:?}"),
        }
    }

    #[test]
    fn cycle_witness_is_a_real_cycle() {
        // Square with a pendant: 1-2-3-4-1, 4-5.
        let g = UndirectedGraph::numbered(5, &[(1, 2), (2, 3), (3, 4), (4, 1), (4, 5)]).unwrap();
        let Err(GraphError::HasCycle(c)) = validate_tree(&g) else {
            panic!("expected cycle");
        };
        assert_eq!(c.len(), 4);
        for k in 0..c.len() {
            assert!(g.contains_edge(&c[k], &c[(k + 1) % c.len()]));
        }
    }

    #[test]
    fn two_components_not_connected() {
        let g = UndirectedGraph::numbered(4, &[(1, 2), (3, 4)]).unwrap();
        assert_eq!(
            validate_tree(&g),
            Err(GraphError::NotConnected(vec![
                vec!["1".into(), "2".into()],
                vec!["3".into(), "4".into()]
            ]))
        );
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            UndirectedGraph::numbered(2, &[(1, 1)]),
            Err(GraphError::SelfLoop(_))
        ));
        assert!(matches!(
            UndirectedGraph::numbered(2, &[(1, 2), (2, 1)]),
            Err(GraphError::DuplicateEdge(_, _))
        ));
        assert!(matches!(
            UndirectedGraph::numbered(2, &[(1, 3)]),
            Err(GraphError::UnknownNode(_))
        ));
        assert!(matches!(
            UndirectedGraph::new(["a", "a"], Vec::<(&str, &str)>::new()),
            Err(GraphError::DuplicateNode(_))
        ));
        let empty = UndirectedGraph::empty(Vec::<String>::new()).unwrap();
        assert_eq!(validate_tree(&empty), Err(GraphError::Empty));
    }

    #[test]
    fn two_hop_examples() {
        let g = chain5();
        assert_eq!(two_hop_neighbors(&g, "1").unwrap(), set(&["3"]));
        assert_eq!(two_hop_neighbors(&g, "3").unwrap(), set(&["1", "5"]));
        let e = UndirectedGraph::numbered(2, &[(1, 2)]).unwrap();
        assert!(two_hop_neighbors(&e, "1").unwrap().is_empty());
        assert!(matches!(
            two_hop_neighbors(&g, "9"),
            Err(GraphError::UnknownNode(_))
        ));
    }

    #[test]
    fn two_hop_excludes_direct_neighbours() {
        let tri = UndirectedGraph::numbered(3, &[(1, 2), (2, 3), (1, 3)]).unwrap();
        assert!(two_hop_neighbors(&tri, "1").unwrap().is_empty());
    }

    #[test]
    fn kin_graph_of_chain5() {
        let kin = kin_graph_oracle(&validate_tree(&chain5()).unwrap());
        let expected =
            UndirectedGraph::numbered(5, &[(1, 2), (2, 3), (3, 4), (4, 5), (1, 3), (2, 4), (3, 5)])
                .unwrap();
        assert_eq!(kin.edge_count(), 7);
        assert_eq!(kin, expected);
    }

    #[test]
    fn kin_graph_of_star_is_complete() {
        let g = UndirectedGraph::new(["c", "a", "b", "d"], [("c", "a"), ("c", "b"), ("c", "d")])
            .unwrap();
        let kin = kin_graph_oracle(&validate_tree(&g).unwrap());
        let expected: BTreeSet<(String, String)> = [
            ("a", "c"),
            ("b", "c"),
            ("c", "d"),
            ("a", "b"),
            ("a", "d"),
            ("b", "d"),
        ]
        .iter()
        .map(|(a, b)| edge_key(a, b))
        .collect();
        assert_eq!(kin.edge_set(), expected);
        let single = UndirectedGraph::numbered(2, &[(1, 2)]).unwrap();
        assert_eq!(kin_graph_oracle(&validate_tree(&single).unwrap()), single);
    }

    #[test]
    fn separation_in_chain5_kin_graph() {
        let kin = kin_graph_oracle(&validate_tree(&chain5()).unwrap());
        let s = separates(&kin, &["2", "3"]).unwrap();
        assert!(s.separated);
        assert_eq!(
            s.components,
            vec![vec!["1".to_string()], vec!["4".into(), "5".into()]]
        );
        let s = separates(&kin, &["2", "4"]).unwrap();
        assert!(!s.separated);
        assert_eq!(
            s.components,
            vec![vec!["1".to_string(), "3".into(), "5".into()]]
        );
        let none: [&str; 0] = [];
        assert!(!separates(&chain5(), &none).unwrap().separated);
        assert_eq!(
            separates(&chain5(), &["1", "2", "3", "4", "5"]),
            Err(GraphError::EmptyRemainder)
        );
    }

    #[test]
    fn moralize_examples() {
        let collider = DirectedGraph::new(["a", "b", "c"], [("a", "c"), ("b", "c")]).unwrap();
        let m = moralize(&collider);
        assert_eq!(m.edge_count(), 3);
        assert!(m.contains_edge("a", "b"));

        let bi =
            DirectedGraph::bidirected(&UndirectedGraph::numbered(3, &[(1, 2), (2, 3)]).unwrap());
        let m = moralize(&bi);
        assert_eq!(
            m.edge_set(),
            [("1", "2"), ("2", "3"), ("1", "3")]
                .iter()
                .map(|(a, b)| edge_key(a, b))
                .collect()
        );

        let chain = DirectedGraph::new(["a", "b", "c"], [("a", "b"), ("b", "c")]).unwrap();
        let m = moralize(&chain);
        assert_eq!(m.edge_count(), 2);
        assert!(!m.contains_edge("a", "c"));
    }

    #[test]
    fn ancestral_graph_examples() {
        let chain = DirectedGraph::new(["a", "b", "c"], [("a", "b"), ("b", "c")]).unwrap();
        let anc = ancestral_graph(&chain, &["b"]).unwrap();
        assert_eq!(anc.nodes(), &["a".to_string(), "b".into()]);
        assert_eq!(anc.arcs(), vec![("a".to_string(), "b".to_string())]);

        let iso = DirectedGraph::new(["a", "b", "c"], [("a", "b")]).unwrap();
        assert_eq!(ancestral_graph(&iso, &["b"]).unwrap().nodes().len(), 2);

        let bi = DirectedGraph::bidirected(&chain5());
        assert_eq!(ancestral_graph(&bi, &["4"]).unwrap(), bi);
        assert!(matches!(
            ancestral_graph(&bi, &["x"]),
            Err(GraphError::UnknownNode(_))
        ));
    }

    #[test]
    fn d_separation_examples() {
        let chain = DirectedGraph::new(["a", "b", "c"], [("a", "b"), ("b", "c")]).unwrap();
        assert!(d_separated(&chain, &["a"], &["b"], &["c"]).unwrap());
        let none: [&str; 0] = [];
        assert!(!d_separated(&chain, &["a"], &none, &["c"]).unwrap());

        let collider = DirectedGraph::new(["a", "b", "c"], [("a", "c"), ("b", "c")]).unwrap();
        assert!(!d_separated(&collider, &["a"], &["c"], &["b"]).unwrap());
        assert!(d_separated(&collider, &["a"], &none, &["b"]).unwrap());

        let bi = DirectedGraph::bidirected(&chain5());
        assert!(d_separated(&bi, &["1"], &["2", "3"], &["4"]).unwrap());
        assert!(!d_separated(&bi, &["1"], &["2", "4"], &["5"]).unwrap());

        assert_eq!(
            d_separated(&chain, &["a"], &["a"], &["c"]),
            Err(GraphError::OverlappingSets("a".into()))
        );
        assert_eq!(
            d_separated(&chain, &none, &["a"], &["c"]),
            Err(GraphError::EmptySet("I"))
        );
    }

    #[test]
    fn random_tree_examples() {
        let t = random_tree(2, 3, 1).unwrap();
        assert_eq!(t.graph().edges(), vec![("1".to_string(), "2".to_string())]);

        let t = random_tree(5, 11, 4).unwrap();
        assert_eq!(t.diameter(), 4);
        let mut degrees: Vec<usize> = t
            .graph()
            .nodes()
            .iter()
            .map(|l| t.graph().degree(l).unwrap())
            .collect();
        degrees.sort();
        assert_eq!(degrees, vec![1, 1, 2, 2, 2]);

        assert_eq!(
            random_tree(12, 99, 4).unwrap(),
            random_tree(12, 99, 4).unwrap()
        );
        assert!(matches!(
            random_tree(4, 0, 4),
            Err(GraphError::Infeasible(_))
        ));
        assert!(matches!(
            random_tree(1, 0, 0),
            Err(GraphError::Infeasible(_))
        ));
    }

    #[test]
    fn random_tree_spine_fallback_meets_bound() {
        let t = random_tree(40, 5, 36).unwrap();
        assert!(t.diameter() >= 36);
        assert_eq!(t.graph().edge_count(), 39);
    }

    #[test]
    fn labelled_tree_counts_follow_cayley() {
        assert_eq!(labelled_trees(4).count(), 16);
        let paths = labelled_trees(5).filter(|t| t.diameter() == 4).count();
        assert_eq!(paths, 60); // 5!/2
    }

    #[test]
    fn document_round_trip_orders_edges() {
        let g = UndirectedGraph::new(["b", "a", "c"], [("b", "a"), ("c", "b")]).unwrap();
        let doc = g.to_document();
        assert_eq!(
            doc.edges,
            vec![["a".to_string(), "b".into()], ["b".into(), "c".into()]]
        );
        assert_eq!(UndirectedGraph::from_document(&doc).unwrap(), g);
    }
}
