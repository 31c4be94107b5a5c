//! Graph and dataset types, neighborhood multisets, and constructors.

mod generate;
mod tu;

pub use generate::{
    generate_triangle_node, triangle_membership, triangle_node_dataset, TriangleNodeParams,
};
pub use tu::{load_tu_dataset, save_tu_dataset, LoadAudit};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("missing required file {0}")]
    MissingFile(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("infeasible generator targets: {0}")]
    Infeasible(String),
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Whether labels attach to nodes or whole graphs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    NodeLevel,
    GraphLevel,
}

/// An undirected graph with categorical node features. Edges are stored
/// once in canonical `(i, j)` form with `i < j` and never include
/// self-loops; a node's own contribution to aggregation enters through the
/// closed neighborhood, not the edge list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub num_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub node_feature_ids: Vec<usize>,
    pub node_labels: Option<Vec<usize>>,
    pub graph_label: Option<usize>,
}

impl Graph {
    /// Build from an arbitrary edge list: self-loops dropped, duplicates and
    /// reversed copies merged. Returns the counts of dropped loops/dups.
    pub fn from_edge_list(
        num_nodes: usize,
        raw_edges: &[(usize, usize)],
        node_feature_ids: Vec<usize>,
    ) -> Result<(Self, usize, usize)> {
        if node_feature_ids.len() != num_nodes {
            return Err(GraphError::Invalid(format!(
                "{} feature ids for {num_nodes} nodes",
                node_feature_ids.len()
            )));
        }
        let mut canonical: Vec<(usize, usize)> = Vec::with_capacity(raw_edges.len());
        let mut self_loops = 0usize;
        for &(a, b) in raw_edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(GraphError::Invalid(format!(
                    "edge ({a}, {b}) endpoint out of range for {num_nodes} nodes"
                )));
            }
            if a == b {
                self_loops += 1;
                continue;
            }
            canonical.push((a.min(b), a.max(b)));
        }
        canonical.sort_unstable();
        let before = canonical.len();
        canonical.dedup();
        let duplicates = before - canonical.len();
        Ok((
            Graph {
                num_nodes,
                edges: canonical,
                node_feature_ids,
                node_labels: None,
                graph_label: None,
            },
            self_loops,
            duplicates,
        ))
    }

    /// Sorted adjacency lists (open neighborhoods).
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges
            .iter()
            .filter(|&&(a, b)| a == node || b == node)
            .count()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Relabel node ids by `perm` (new id of old node `i` is `perm[i]`),
    /// producing an isomorphic graph.
    pub fn permuted(&self, perm: &[usize]) -> Graph {
        let mut features = vec![0; self.num_nodes];
        for (old, &new) in perm.iter().enumerate() {
            features[new] = self.node_feature_ids[old];
        }
        let node_labels = self.node_labels.as_ref().map(|labels| {
            let mut out = vec![0; self.num_nodes];
            for (old, &new) in perm.iter().enumerate() {
                out[new] = labels[old];
            }
            out
        });
        let mut edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .map(|&(a, b)| {
                let (x, y) = (perm[a], perm[b]);
                (x.min(y), x.max(y))
            })
            .collect();
        edges.sort_unstable();
        Graph {
            num_nodes: self.num_nodes,
            edges,
            node_feature_ids: features,
            node_labels,
            graph_label: self.graph_label,
        }
    }
}

/// Complete graph on `n >= 3` nodes with a uniform feature.
pub fn make_complete(n: usize, feature: usize) -> Result<Graph> {
    if n < 3 {
        return Err(GraphError::Invalid(format!("complete graph needs n >= 3, got {n}")));
    }
    let mut edges = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            edges.push((i, j));
        }
    }
    Ok(Graph {
        num_nodes: n,
        edges,
        node_feature_ids: vec![feature; n],
        node_labels: None,
        graph_label: None,
    })
}

/// Ring (cycle) on `n >= 3` nodes with a uniform feature.
pub fn make_ring(n: usize, feature: usize) -> Result<Graph> {
    if n < 3 {
        return Err(GraphError::Invalid(format!("ring needs n >= 3, got {n}")));
    }
    let mut edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
    edges.push((0, n - 1));
    edges.sort_unstable();
    Ok(Graph {
        num_nodes: n,
        edges,
        node_feature_ids: vec![feature; n],
        node_labels: None,
        graph_label: None,
    })
}

/// A collection of graphs sharing one categorical feature vocabulary and one
/// label space. Immutable after construction; safe to share across folds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub graphs: Vec<Graph>,
    pub num_feature_categories: usize,
    pub num_classes: usize,
    pub task: TaskKind,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        for (gi, g) in self.graphs.iter().enumerate() {
            for &f in &g.node_feature_ids {
                if f >= self.num_feature_categories {
                    return Err(GraphError::Invalid(format!(
                        "graph {gi}: feature id {f} >= {} categories",
                        self.num_feature_categories
                    )));
                }
            }
            match self.task {
                TaskKind::GraphLevel => {
                    let label = g.graph_label.ok_or_else(|| {
                        GraphError::Invalid(format!("graph {gi}: missing graph label"))
                    })?;
                    if label >= self.num_classes {
                        return Err(GraphError::Invalid(format!(
                            "graph {gi}: label {label} >= {} classes",
                            self.num_classes
                        )));
                    }
                }
                TaskKind::NodeLevel => {
                    let labels = g.node_labels.as_ref().ok_or_else(|| {
                        GraphError::Invalid(format!("graph {gi}: missing node labels"))
                    })?;
                    if let Some(&bad) = labels.iter().find(|&&l| l >= self.num_classes) {
                        return Err(GraphError::Invalid(format!(
                            "graph {gi}: node label {bad} >= {} classes",
                            self.num_classes
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn num_graphs(&self) -> usize {
        self.graphs.len()
    }
}

/// The multiset of feature ids over a closed neighborhood: the object the
/// collision analysis reasons about. `ground_set` is sorted and distinct,
/// `multiplicities` aligns with it, and the center's own feature is always
/// a member.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NeighborhoodMultiset {
    pub center_feature: usize,
    pub ground_set: Vec<usize>,
    pub multiplicities: Vec<usize>,
    pub cardinality: usize,
}

impl NeighborhoodMultiset {
    /// Assemble from a center feature and the features of the closed
    /// neighborhood (center included).
    pub fn from_features(center_feature: usize, mut features: Vec<usize>) -> Self {
        debug_assert!(features.contains(&center_feature));
        features.sort_unstable();
        let cardinality = features.len();
        let mut ground_set = Vec::new();
        let mut multiplicities = Vec::new();
        for f in features {
            if ground_set.last() == Some(&f) {
                *multiplicities.last_mut().expect("aligned") += 1;
            } else {
                ground_set.push(f);
                multiplicities.push(1);
            }
        }
        NeighborhoodMultiset {
            center_feature,
            ground_set,
            multiplicities,
            cardinality,
        }
    }

    /// The multiset expanded back to one feature id per element, sorted.
    pub fn expanded(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.cardinality);
        for (&f, &m) in self.ground_set.iter().zip(&self.multiplicities) {
            out.extend(std::iter::repeat(f).take(m));
        }
        out
    }

    /// Gcd-normalised distribution: `(ground_set, multiplicities / g)` plus
    /// the scale factor `g`.
    pub fn normalized(&self) -> (Vec<usize>, Vec<usize>, usize) {
        let g = self.multiplicities.iter().fold(0usize, |acc, &m| gcd(acc, m));
        let base = self.multiplicities.iter().map(|m| m / g).collect();
        (self.ground_set.clone(), base, g)
    }

    /// Same multiset with every multiplicity scaled by `k`.
    pub fn scaled(&self, k: usize) -> Self {
        NeighborhoodMultiset {
            center_feature: self.center_feature,
            ground_set: self.ground_set.clone(),
            multiplicities: self.multiplicities.iter().map(|m| m * k).collect(),
            cardinality: self.cardinality * k,
        }
    }
}

pub(crate) fn gcd(a: usize, b: usize) -> usize {
    if a == 0 {
        b
    } else {
        gcd(b % a, a)
    }
}

/// The closed-neighborhood feature multiset of one node.
pub fn neighborhood_multiset(graph: &Graph, node: usize) -> NeighborhoodMultiset {
    let mut features = vec![graph.node_feature_ids[node]];
    for &(a, b) in &graph.edges {
        if a == node {
            features.push(graph.node_feature_ids[b]);
        } else if b == node {
            features.push(graph.node_feature_ids[a]);
        }
    }
    NeighborhoodMultiset::from_features(graph.node_feature_ids[node], features)
}

/// One-hot node features per graph: each row is a unit basis vector of
/// length `num_feature_categories`.
pub fn one_hot(dataset: &Dataset) -> Vec<Tensor> {
    let cats = dataset.num_feature_categories;
    dataset
        .graphs
        .iter()
        .map(|g| one_hot_graph(g, cats))
        .collect()
}

pub fn one_hot_graph(graph: &Graph, num_feature_categories: usize) -> Tensor {
    let mut data = vec![0.0; graph.num_nodes * num_feature_categories];
    for (i, &f) in graph.node_feature_ids.iter().enumerate() {
        data[i * num_feature_categories + f] = 1.0;
    }
    Tensor::new(vec![graph.num_nodes, num_feature_categories], data).expect("one-hot shape")
}

/// Replace every node's feature id with its degree; the vocabulary becomes
/// `0..=max_degree`.
pub fn degree_relabel(dataset: &Dataset) -> Dataset {
    let mut max_degree = 0;
    let mut graphs = Vec::with_capacity(dataset.graphs.len());
    for g in &dataset.graphs {
        let mut degrees = vec![0usize; g.num_nodes];
        for &(a, b) in &g.edges {
            degrees[a] += 1;
            degrees[b] += 1;
        }
        max_degree = max_degree.max(degrees.iter().copied().max().unwrap_or(0));
        let mut relabeled = g.clone();
        relabeled.node_feature_ids = degrees;
        graphs.push(relabeled);
    }
    Dataset {
        graphs,
        num_feature_categories: max_degree + 1,
        num_classes: dataset.num_classes,
        task: dataset.task,
    }
}
