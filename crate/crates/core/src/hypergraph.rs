//! Sparse multi-order hypergraph count data.
//!
//! A hypergraph is stored as one count map per order `d`, keyed by the
//! sorted node multi-index. Zeros are implicit; stored counts are >= 1.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::stream;
use crate::{Error, Result};

/// Strictly increasing node IDs; the order `d` is the length.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Hyperedge(Vec<u32>);

impl Hyperedge {
    /// Sorts and validates. Repeated nodes are rejected: diagonal entries
    /// of the adjacency tensors are undefined.
    pub fn new(mut nodes: Vec<u32>) -> Result<Self> {
        nodes.sort_unstable();
        if nodes.len() < 2 {
            return Err(Error::Dimension(format!(
                "hyperedge needs >= 2 nodes, got {}",
                nodes.len()
            )));
        }
        if nodes.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Dimension("repeated node in hyperedge".into()));
        }
        Ok(Hyperedge(nodes))
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn nodes(&self) -> &[u32] {
        &self.0
    }
}

#[derive(Debug, Clone, Default)]
pub struct Hypergraph {
    n_nodes: usize,
    edges: BTreeMap<usize, HashMap<Hyperedge, u64>>,
    /// Original node labels, indexed by dense node ID.
    labels: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SummaryStats {
    pub n_nodes: usize,
    pub n_nz: usize,
    pub a_bullet: u64,
    pub max_order: usize,
    pub mean_order: f64,
    pub pct_pairwise: f64,
}

#[derive(Debug, Clone)]
pub struct ParseOptions {
    /// `None` splits on whitespace.
    pub delimiter: Option<char>,
    pub max_order: usize,
    /// Drop lines with repeated nodes (with a warning) instead of erroring.
    pub drop_repeats: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            delimiter: None,
            max_order: 64,
            drop_repeats: true,
        }
    }
}

/// Train hypergraph plus per-order heldout (edge, true count) pairs with
/// balanced zeros.
#[derive(Debug, Clone)]
pub struct MaskedSplit {
    pub train: Hypergraph,
    /// Per order: masked nonzeros followed by sampled zero-count indices.
    pub test: BTreeMap<usize, Vec<(Hyperedge, u64)>>,
    pub seed: u64,
}

impl Hypergraph {
    pub fn new(n_nodes: usize) -> Self {
        Hypergraph {
            n_nodes,
            edges: BTreeMap::new(),
            labels: Vec::new(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn max_order(&self) -> usize {
        self.edges.keys().next_back().copied().unwrap_or(0)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn orders(&self) -> impl Iterator<Item = usize> + '_ {
        self.edges.keys().copied()
    }

    pub fn count(&self, edge: &Hyperedge) -> u64 {
        self.edges
            .get(&edge.order())
            .and_then(|m| m.get(edge).copied())
            .unwrap_or(0)
    }

    pub fn n_nz_at(&self, d: usize) -> usize {
        self.edges.get(&d).map_or(0, |m| m.len())
    }

    pub fn edges_at(&self, d: usize) -> impl Iterator<Item = (&Hyperedge, u64)> {
        self.edges.get(&d).into_iter().flat_map(|m| m.iter().map(|(e, &c)| (e, c)))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Hyperedge, u64)> {
        self.edges.values().flat_map(|m| m.iter().map(|(e, &c)| (e, c)))
    }

    pub fn add_count(&mut self, edge: Hyperedge, count: u64) {
        if count == 0 {
            return;
        }
        if let Some(&max) = edge.nodes().last() {
            if (max as usize) >= self.n_nodes {
                self.n_nodes = max as usize + 1;
            }
        }
        *self.edges.entry(edge.order()).or_default().entry(edge).or_insert(0) += count;
    }

    /// Removes the edge entirely, returning its count.
    fn remove(&mut self, edge: &Hyperedge) -> u64 {
        let d = edge.order();
        let c = self.edges.get_mut(&d).and_then(|m| m.remove(edge)).unwrap_or(0);
        if self.edges.get(&d).is_some_and(|m| m.is_empty()) {
            self.edges.remove(&d);
        }
        c
    }

    pub fn summarize(&self) -> SummaryStats {
        let mut n_nz = 0usize;
        let mut a_bullet = 0u64;
        let mut weighted_order = 0.0;
        let mut pairwise = 0u64;
        for (&d, m) in &self.edges {
            n_nz += m.len();
            let order_total: u64 = m.values().sum();
            a_bullet += order_total;
            weighted_order += d as f64 * order_total as f64;
            if d == 2 {
                pairwise = order_total;
            }
        }
        SummaryStats {
            n_nodes: self.n_nodes,
            n_nz,
            a_bullet,
            max_order: self.max_order(),
            mean_order: if a_bullet > 0 {
                weighted_order / a_bullet as f64
            } else {
                0.0
            },
            pct_pairwise: if a_bullet > 0 {
                100.0 * pairwise as f64 / a_bullet as f64
            } else {
                0.0
            },
        }
    }

    /// Symmetric N x N matrix of pairwise co-occurrence counts, row-major.
    /// Entry (i, j) sums the counts of all hyperedges containing both i and j.
    pub fn project_adjacency(&self) -> Vec<u64> {
        let n = self.n_nodes;
        let mut adj = vec![0u64; n * n];
        for (edge, count) in self.iter() {
            let nodes = edge.nodes();
            for (a, &i) in nodes.iter().enumerate() {
                for &j in &nodes[a + 1..] {
                    adj[i as usize * n + j as usize] += count;
                    adj[j as usize * n + i as usize] += count;
                }
            }
        }
        adj
    }

    /// Mean (over `repeats`) number of sampled size-`d` nonzero edges that
    /// appear as a subset of a sampled size-`d+1` nonzero edge.
    pub fn inclusion_occurrences(
        &self,
        d: usize,
        sample_size: usize,
        repeats: usize,
        seed: u64,
    ) -> f64 {
        let lower: Vec<&Hyperedge> = self.edges.get(&d).map(|m| m.keys().collect()).unwrap_or_default();
        let upper: Vec<&Hyperedge> =
            self.edges.get(&(d + 1)).map(|m| m.keys().collect()).unwrap_or_default();
        if lower.is_empty() || upper.is_empty() || repeats == 0 {
            return 0.0;
        }
        let mut rng = stream(seed, "inclusion");
        let mut total = 0usize;
        for _ in 0..repeats {
            let lo: Vec<&&Hyperedge> = lower
                .choose_multiple(&mut rng, sample_size.min(lower.len()))
                .collect();
            let up: Vec<&&Hyperedge> = upper
                .choose_multiple(&mut rng, sample_size.min(upper.len()))
                .collect();
            let mut subsets: HashSet<Vec<u32>> = HashSet::new();
            for e in &up {
                let nodes = e.nodes();
                for skip in 0..nodes.len() {
                    let mut sub = Vec::with_capacity(nodes.len() - 1);
                    for (q, &v) in nodes.iter().enumerate() {
                        if q != skip {
                            sub.push(v);
                        }
                    }
                    subsets.insert(sub);
                }
            }
            total += lo.iter().filter(|e| subsets.contains(e.nodes())).count();
        }
        total as f64 / repeats as f64
    }

    /// Per order, masks min(1000, floor(0.10 * nnz), at least 1) nonzeros and
    /// samples an equal number of zero-count multi-indices by rejection.
    pub fn mask_split(&self, seed: u64) -> Result<MaskedSplit> {
        let mut rng = stream(seed, "mask");
        let mut train = self.clone();
        let mut test: BTreeMap<usize, Vec<(Hyperedge, u64)>> = BTreeMap::new();
        let orders: Vec<usize> = self.edges.keys().copied().collect();
        for d in orders {
            let nnz = self.n_nz_at(d);
            if nnz == 0 {
                continue;
            }
            let n_mask = 1000.min(nnz / 10).max(1);
            let mut keys: Vec<&Hyperedge> = self.edges[&d].keys().collect();
            keys.sort(); // stable across HashMap iteration order
            let masked: Vec<Hyperedge> = keys
                .choose_multiple(&mut rng, n_mask)
                .map(|e| (*e).clone())
                .collect();
            let mut entries = Vec::with_capacity(2 * n_mask);
            let mut taken: HashSet<Vec<u32>> = HashSet::new();
            for e in masked {
                let c = train.remove(&e);
                debug_assert!(c > 0);
                taken.insert(e.nodes().to_vec());
                entries.push((e, c));
            }
            // Balanced zeros: uniform over the order-d index set minus nonzeros.
            let nonzeros = &self.edges[&d];
            for _ in 0..n_mask {
                let mut found = None;
                for _ in 0..1000 {
                    let cand = random_subset(&mut rng, self.n_nodes, d)?;
                    let edge = Hyperedge(cand);
                    if !nonzeros.contains_key(&edge) && !taken.contains(edge.nodes()) {
                        found = Some(edge);
                        break;
                    }
                }
                match found {
                    Some(edge) => {
                        taken.insert(edge.nodes().to_vec());
                        entries.push((edge, 0));
                    }
                    None => {
                        return Err(Error::Sampling(format!(
                            "could not sample a zero-count order-{d} index; index set too dense"
                        )))
                    }
                }
            }
            test.insert(d, entries);
        }
        Ok(MaskedSplit { train, test, seed })
    }
}

/// Uniform random sorted d-subset of {0..n-1} (Floyd's algorithm).
fn random_subset<R: Rng>(rng: &mut R, n: usize, d: usize) -> Result<Vec<u32>> {
    if d > n {
        return Err(Error::Sampling(format!("cannot draw {d} distinct nodes from {n}")));
    }
    let mut chosen: HashSet<u32> = HashSet::with_capacity(d);
    for j in (n - d)..n {
        let t = rng.gen_range(0..=j) as u32;
        if !chosen.insert(t) {
            chosen.insert(j as u32);
        }
    }
    let mut v: Vec<u32> = chosen.into_iter().collect();
    v.sort_unstable();
    Ok(v)
}

/// Parses one hyperedge occurrence per line. Tokens map to dense 0-based IDs
/// in first-seen order; duplicate occurrences of the same node set aggregate
/// into counts. `#` starts a comment line.
pub fn parse_hyperedges<R: BufRead>(reader: R, options: &ParseOptions) -> Result<Hypergraph> {
    let mut ids: HashMap<String, u32> = HashMap::new();
    let mut labels: Vec<String> = Vec::new();
    let mut graph = Hypergraph::new(0);
    let mut any = false;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = match options.delimiter {
            Some(c) => line.split(c).map(str::trim).collect(),
            None => line.split_whitespace().collect(),
        };
        if tokens.iter().any(|t| t.is_empty()) {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: "empty token".into(),
            });
        }
        if tokens.len() < 2 {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("expected >= 2 node tokens, got {}", tokens.len()),
            });
        }
        if tokens.len() > options.max_order {
            warn!(
                "line {}: order {} exceeds max order {}, dropped",
                lineno + 1,
                tokens.len(),
                options.max_order
            );
            continue;
        }
        let mut nodes: Vec<u32> = Vec::with_capacity(tokens.len());
        for t in &tokens {
            let id = *ids.entry((*t).to_string()).or_insert_with(|| {
                labels.push((*t).to_string());
                (labels.len() - 1) as u32
            });
            nodes.push(id);
        }
        match Hyperedge::new(nodes) {
            Ok(edge) => graph.add_count(edge, 1),
            Err(_) if options.drop_repeats => {
                warn!("line {}: repeated node, dropped", lineno + 1);
                continue;
            }
            Err(_) => {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: "repeated node in hyperedge".into(),
                })
            }
        }
        any = true;
    }
    if !any {
        return Err(Error::EmptyInput);
    }
    graph.n_nodes = labels.len();
    graph.labels = labels;
    Ok(graph)
}

/// Writes one line per distinct edge with a trailing count column when
/// `aggregate`, else one line per occurrence.
pub fn write_hyperedges<W: std::io::Write>(
    graph: &Hypergraph,
    mut out: W,
    aggregate: bool,
) -> Result<()> {
    let mut all: Vec<(&Hyperedge, u64)> = graph.iter().collect();
    all.sort();
    for (edge, count) in all {
        let line: Vec<String> = edge.nodes().iter().map(|n| n.to_string()).collect();
        if aggregate {
            writeln!(out, "{} {}", line.join(" "), count)?;
        } else {
            for _ in 0..count {
                writeln!(out, "{}", line.join(" "))?;
            }
        }
    }
    Ok(())
}
