//! Undirected weighted graphs, their text formats, and the planted-partition
//! generator used by the cohesion sweeps.
//!
//! Edge lists are line oriented: `i j` or `i j w`, whitespace separated, with
//! `#` comment lines. Node ids are arbitrary non-negative integers and are
//! remapped to dense indices in order of first appearance; the mapping is kept
//! in a [`LoadReport`] so that outputs can use the original ids.
//!
//! Richer formats (GML, GraphML) are not read directly. Export them to an edge
//! list first, e.g. with `networkx.write_edgelist(g, path, data=["weight"])`.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::BufRead;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub w: f64,
}

/// Undirected weighted graph on nodes `0..n`.
///
/// Edges are stored once per unordered pair with `i < j`, have strictly
/// positive finite weights, and never form self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<Edge>,
}

impl Graph {
    /// Builds a graph from `(i, j, w)` triples. Parallel edges are merged by
    /// summing their weights.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut builder = EdgeAccumulator::default();
        for (i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::Validation(format!(
                    "edge ({i}, {j}) out of range for {n} nodes"
                )));
            }
            check_edge(i, j, w).map_err(Error::Validation)?;
            builder.push(i, j, w);
        }
        Ok(Graph {
            n,
            edges: builder.edges,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.w).sum()
    }

    /// Weighted degree of every node.
    pub fn strengths(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n];
        for e in &self.edges {
            s[e.i] += e.w;
            s[e.j] += e.w;
        }
        s
    }

    /// Writes the graph as an `i j w` edge list using dense indices.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            let _ = writeln!(out, "{} {} {}", e.i, e.j, e.w);
        }
        out
    }

    /// Connected components as a label per node, numbered by lowest member.
    pub fn components(&self) -> Vec<usize> {
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for e in &self.edges {
            let (a, b) = (find(&mut parent, e.i), find(&mut parent, e.j));
            if a != b {
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                parent[hi] = lo;
            }
        }
        (0..self.n).map(|x| find(&mut parent, x)).collect()
    }
}

fn check_edge(i: usize, j: usize, w: f64) -> std::result::Result<(), String> {
    if i == j {
        return Err(format!("self-loop on node {i}"));
    }
    if !w.is_finite() || w <= 0.0 {
        return Err(format!("edge weight must be positive and finite, got {w}"));
    }
    Ok(())
}

#[derive(Default)]
struct EdgeAccumulator {
    edges: Vec<Edge>,
    slots: HashMap<(usize, usize), usize>,
    merged: usize,
}

impl EdgeAccumulator {
    fn push(&mut self, i: usize, j: usize, w: f64) {
        let key = if i < j { (i, j) } else { (j, i) };
        match self.slots.get(&key) {
            Some(&slot) => {
                self.edges[slot].w += w;
                self.merged += 1;
            }
            None => {
                self.slots.insert(key, self.edges.len());
                self.edges.push(Edge {
                    i: key.0,
                    j: key.1,
                    w,
                });
            }
        }
    }
}

/// Side information produced while loading an edge list.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    /// `node_ids[k]` is the original id of dense node `k`.
    pub node_ids: Vec<u64>,
    /// Number of input lines folded into an earlier edge on the same pair.
    pub merged_duplicates: usize,
    index: HashMap<u64, usize>,
}

impl LoadReport {
    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    fn intern(&mut self, id: u64) -> usize {
        let next = self.node_ids.len();
        *self.index.entry(id).or_insert_with(|| {
            self.node_ids.push(id);
            next
        })
    }
}

/// Non-comment lines of a text stream, tokenized, with 1-based line numbers.
fn data_lines(reader: impl BufRead) -> impl Iterator<Item = Result<(usize, Vec<String>)>> {
    reader.lines().enumerate().filter_map(|(idx, line)| {
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(Error::Io(e))),
        };
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            return None;
        }
        Some(Ok((
            idx + 1,
            trimmed.split_whitespace().map(str::to_owned).collect(),
        )))
    })
}

fn parse_id(token: &str, line: usize) -> Result<u64> {
    token.parse().map_err(|_| Error::Parse {
        line,
        message: format!("expected a non-negative integer node id, got {token:?}"),
    })
}

/// Reads an edge list. See the module docs for the format.
pub fn load_edge_list(reader: impl BufRead) -> Result<(Graph, LoadReport)> {
    let mut report = LoadReport::default();
    let mut acc = EdgeAccumulator::default();
    for item in data_lines(reader) {
        let (line, tokens) = item?;
        if tokens.len() != 2 && tokens.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected `i j` or `i j w`, found {} tokens", tokens.len()),
            });
        }
        let a = parse_id(&tokens[0], line)?;
        let b = parse_id(&tokens[1], line)?;
        let w = match tokens.get(2) {
            Some(t) => t.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("expected a numeric weight, got {t:?}"),
            })?,
            None => 1.0,
        };
        if a == b {
            return Err(Error::Validation(format!("line {line}: self-loop on node {a}")));
        }
        if !w.is_finite() || w <= 0.0 {
            return Err(Error::Validation(format!(
                "line {line}: edge weight must be positive and finite, got {w}"
            )));
        }
        let i = report.intern(a);
        let j = report.intern(b);
        acc.push(i, j, w);
    }
    if report.node_ids.is_empty() {
        return Err(Error::Validation("edge list contains no edges".into()));
    }
    report.merged_duplicates = acc.merged;
    let graph = Graph {
        n: report.node_ids.len(),
        edges: acc.edges,
    };
    Ok((graph, report))
}

/// Dense, symmetric, non-negative interaction matrix: the weighted adjacency
/// matrix with each node's strength on the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix(Array2<f64>);

impl InteractionMatrix {
    pub fn from_graph(g: &Graph) -> Self {
        build_interaction_matrix(g)
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

impl AsRef<Array2<f64>> for InteractionMatrix {
    fn as_ref(&self) -> &Array2<f64> {
        &self.0
    }
}

pub fn build_interaction_matrix(g: &Graph) -> InteractionMatrix {
    let mut v = Array2::zeros((g.n, g.n));
    for e in &g.edges {
        v[[e.i, e.j]] += e.w;
        v[[e.j, e.i]] += e.w;
        v[[e.i, e.i]] += e.w;
        v[[e.j, e.j]] += e.w;
    }
    InteractionMatrix(v)
}

/// Ground-truth (or externally computed) hard community assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedPartition {
    pub labels: Vec<usize>,
}

impl PlantedPartition {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn community_count(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m + 1)
    }
}

/// How node ids in a partition file map to dense indices.
#[derive(Debug, Clone, Copy)]
pub enum NodeIds<'a> {
    /// Ids are already dense, `0..n`.
    Dense(usize),
    /// Ids are dense and `n` is taken to be the number of entries.
    Inferred,
    /// Ids are those of a previously loaded edge list.
    Remapped(&'a LoadReport),
}

/// Reads `node_id community_id` lines. Community ids are renumbered densely in
/// increasing order of their original value.
pub fn load_partition(reader: impl BufRead, ids: NodeIds<'_>) -> Result<PlantedPartition> {
    let mut entries: Vec<(usize, u64, u64)> = Vec::new();
    for item in data_lines(reader) {
        let (line, tokens) = item?;
        if tokens.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected `node community`, found {} tokens", tokens.len()),
            });
        }
        let node = parse_id(&tokens[0], line)?;
        let community: u64 = tokens[1].parse().map_err(|_| Error::Parse {
            line,
            message: format!("expected an integer community id, got {:?}", tokens[1]),
        })?;
        entries.push((line, node, community));
    }

    let n = match ids {
        NodeIds::Dense(n) => n,
        NodeIds::Inferred => entries.len(),
        NodeIds::Remapped(report) => report.node_ids.len(),
    };
    let communities: BTreeSet<u64> = entries.iter().map(|e| e.2).collect();
    let dense: HashMap<u64, usize> = communities.iter().enumerate().map(|(k, &c)| (c, k)).collect();

    let mut labels: Vec<Option<usize>> = vec![None; n];
    for (line, node, community) in entries {
        let index = match ids {
            NodeIds::Remapped(report) => report.index_of(node),
            _ => usize::try_from(node).ok().filter(|&x| x < n),
        }
        .ok_or_else(|| Error::Validation(format!("line {line}: unknown node {node}")))?;
        if labels[index].replace(dense[&community]).is_some() {
            return Err(Error::Validation(format!("line {line}: duplicate node {node}")));
        }
    }
    let labels = labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            l.ok_or_else(|| {
                let id = match ids {
                    NodeIds::Remapped(report) => report.node_ids[i],
                    _ => i as u64,
                };
                Error::Validation(format!("missing node {id}"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PlantedPartition { labels })
}

/// Parameters of the Newman-Girvan planted-partition benchmark.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct NgParams {
    pub n: usize,
    pub c: usize,
    /// Expected total degree.
    pub k_mean: f64,
    /// Expected inter-community degree.
    pub k_out: f64,
}

impl Default for NgParams {
    fn default() -> Self {
        NgParams {
            n: 128,
            c: 4,
            k_mean: 16.0,
            k_out: 0.0,
        }
    }
}

impl NgParams {
    pub fn with_k_out(self, k_out: f64) -> Self {
        NgParams { k_out, ..self }
    }

    pub fn community_size(&self) -> usize {
        self.n / self.c
    }

    /// Intra- and inter-community edge probabilities.
    pub fn probabilities(&self) -> Result<(f64, f64)> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.c == 0 || self.n == 0 || self.n % self.c != 0 {
            return bad(format!("n = {} must be a positive multiple of c = {}", self.n, self.c));
        }
        let size = self.community_size();
        if size < 2 {
            return bad("communities need at least two nodes".into());
        }
        if !(self.k_out >= 0.0 && self.k_out <= self.k_mean) {
            return bad(format!(
                "k_out = {} must lie in [0, k_mean = {}]",
                self.k_out, self.k_mean
            ));
        }
        let p_in = (self.k_mean - self.k_out) / (size - 1) as f64;
        let p_out = if self.c == 1 {
            0.0
        } else {
            self.k_out / (self.n - size) as f64
        };
        if self.c == 1 && self.k_out > 0.0 {
            return bad("k_out must be 0 with a single community".into());
        }
        for (name, p) in [("p_in", p_in), ("p_out", p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("derived {name} = {p} outside [0, 1]"));
            }
        }
        Ok((p_in, p_out))
    }
}

/// Samples a planted-partition graph: every pair is an independent Bernoulli
/// trial, with probability `p_in` inside a community and `p_out` across.
/// Degrees match `k_mean` and `k_out` in expectation only. Communities are
/// consecutive blocks of `n / c` nodes.
pub fn generate_ng_graph(p: &NgParams, seed: u64) -> Result<(Graph, PlantedPartition)> {
    let (p_in, p_out) = p.probabilities()?;
    let size = p.community_size();
    let labels: Vec<usize> = (0..p.n).map(|i| i / size).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..p.n {
        for j in (i + 1)..p.n {
            let prob = if labels[i] == labels[j] { p_in } else { p_out };
            // Always draw, so that the stream position depends only on (i, j).
            let u: f64 = rng.gen();
            if u < prob {
                edges.push(Edge { i, j, w: 1.0 });
            }
        }
    }
    Ok((Graph { n: p.n, edges }, PlantedPartition { labels }))
}
