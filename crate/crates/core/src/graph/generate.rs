//! Synthetic triangle-membership benchmark.
//!
//! The construction plants vertex-disjoint triangles to hit a target count
//! of triangle-member nodes, then spends the remaining edge budget on a
//! near-regular random fill that rejects any edge closing a new triangle.
//! Labels (`1` = touches a triangle) therefore coincide exactly with the
//! planted members, and the degree distribution carries the signal that
//! separates cardinality-aware aggregators from the plain weighted sum.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use std::collections::HashSet;

use super::{Dataset, Graph, GraphError, Result, TaskKind};

#[derive(Clone, Copy, Debug)]
pub struct TriangleNodeParams {
    pub n_feature0: usize,
    pub n_feature1: usize,
    pub n_feature2: usize,
    pub target_edges: usize,
    pub target_triangle_fraction: f64,
}

impl Default for TriangleNodeParams {
    fn default() -> Self {
        TriangleNodeParams {
            n_feature0: 4000,
            n_feature1: 400,
            n_feature2: 400,
            target_edges: 32_400,
            target_triangle_fraction: 0.4058,
        }
    }
}

impl TriangleNodeParams {
    pub fn num_nodes(&self) -> usize {
        self.n_feature0 + self.n_feature1 + self.n_feature2
    }
}

fn has_common_neighbor(adj: &[HashSet<usize>], u: usize, v: usize) -> bool {
    let (small, large) = if adj[u].len() <= adj[v].len() {
        (&adj[u], &adj[v])
    } else {
        (&adj[v], &adj[u])
    };
    small.iter().any(|w| large.contains(w))
}

/// Generate the benchmark graph. Node labels mark triangle membership,
/// recomputed from the final edge set as a safety net on the construction.
pub fn generate_triangle_node(seed: u64, params: &TriangleNodeParams) -> Result<Graph> {
    let n = params.num_nodes();
    if n < 3 {
        return Err(GraphError::Infeasible(format!("{n} nodes cannot host a triangle")));
    }
    let frac = params.target_triangle_fraction;
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(GraphError::Infeasible(format!(
            "triangle fraction {frac} outside (0, 1]"
        )));
    }
    let triangles = ((frac * n as f64 / 3.0).round() as usize).clamp(1, n / 3);
    let planted_edges = 3 * triangles;
    if params.target_edges < planted_edges {
        return Err(GraphError::Infeasible(format!(
            "edge budget {} below the {planted_edges} planted triangle edges",
            params.target_edges
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Disjoint triangles over a random slice of the node ids.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut adj: Vec<HashSet<usize>> = vec![HashSet::new(); n];
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(params.target_edges);
    let add_edge = |adj: &mut Vec<HashSet<usize>>,
                        edges: &mut Vec<(usize, usize)>,
                        u: usize,
                        v: usize| {
        adj[u].insert(v);
        adj[v].insert(u);
        edges.push((u.min(v), u.max(v)));
    };
    for t in 0..triangles {
        let (a, b, c) = (order[3 * t], order[3 * t + 1], order[3 * t + 2]);
        add_edge(&mut adj, &mut edges, a, b);
        add_edge(&mut adj, &mut edges, b, c);
        add_edge(&mut adj, &mut edges, a, c);
    }

    // Near-regular fill: every node gets a fill-degree quota of
    // floor(2m/n) or one more, then quota-weighted endpoints are paired at
    // random, rejecting duplicates and triangle-closing pairs.
    let fill = params.target_edges - planted_edges;
    let mut quota = vec![(2 * fill) / n; n];
    let mut leftovers: Vec<usize> = (0..n).collect();
    leftovers.shuffle(&mut rng);
    for &node in leftovers.iter().take(2 * fill - ((2 * fill) / n) * n) {
        quota[node] += 1;
    }

    let mut pool: Vec<usize> = (0..n)
        .flat_map(|v| std::iter::repeat(v).take(quota[v]))
        .collect();
    let mut placed = 0usize;
    let mut stale = 0usize;
    let max_attempts = 200 * params.target_edges.max(1);
    let mut attempts = 0usize;
    while placed < fill {
        attempts += 1;
        if attempts > max_attempts {
            return Err(GraphError::Infeasible(format!(
                "placed {placed} of {fill} fill edges before exhausting attempts"
            )));
        }
        let (u, v) = if pool.len() >= 2 && stale < 50 {
            let i = rng.gen_range(0..pool.len());
            let mut j = rng.gen_range(0..pool.len() - 1);
            if j >= i {
                j += 1;
            }
            (pool[i], pool[j])
        } else {
            // Quota pairing starved (or oddballs remain): fall back to
            // uniform endpoints so the exact edge budget is always met.
            (rng.gen_range(0..n), rng.gen_range(0..n))
        };
        if u == v || adj[u].contains(&v) || has_common_neighbor(&adj, u, v) {
            stale += 1;
            continue;
        }
        add_edge(&mut adj, &mut edges, u, v);
        placed += 1;
        stale = 0;
        // Retire one pool slot per endpoint actually used.
        for node in [u, v] {
            if let Some(pos) = pool.iter().position(|&x| x == node) {
                pool.swap_remove(pos);
            }
        }
    }

    // Features: exact per-category counts, uniformly shuffled over nodes.
    let mut features = Vec::with_capacity(n);
    features.extend(std::iter::repeat(0usize).take(params.n_feature0));
    features.extend(std::iter::repeat(1usize).take(params.n_feature1));
    features.extend(std::iter::repeat(2usize).take(params.n_feature2));
    features.shuffle(&mut rng);
    // Compact ids in case a category count is zero.
    let mut present: Vec<usize> = features.clone();
    present.sort_unstable();
    present.dedup();
    let features: Vec<usize> = features
        .iter()
        .map(|f| present.binary_search(f).expect("present"))
        .collect();

    edges.sort_unstable();
    let mut graph = Graph {
        num_nodes: n,
        edges,
        node_feature_ids: features,
        node_labels: None,
        graph_label: Some(0),
    };
    let labels = triangle_membership(&graph);
    let members = labels.iter().filter(|&&l| l == 1).count();
    let realized = members as f64 / n as f64;
    if (realized - frac).abs() > 0.05 {
        return Err(GraphError::Infeasible(format!(
            "realized triangle fraction {realized:.4} strays from target {frac:.4}"
        )));
    }
    graph.node_labels = Some(labels);
    Ok(graph)
}

/// Per-node triangle membership computed from scratch.
pub fn triangle_membership(graph: &Graph) -> Vec<usize> {
    let mut adj: Vec<HashSet<usize>> = vec![HashSet::new(); graph.num_nodes];
    for &(a, b) in &graph.edges {
        adj[a].insert(b);
        adj[b].insert(a);
    }
    let mut member = vec![0usize; graph.num_nodes];
    for &(a, b) in &graph.edges {
        let (small, large) = if adj[a].len() <= adj[b].len() {
            (&adj[a], &adj[b])
        } else {
            (&adj[b], &adj[a])
        };
        for &w in small {
            if large.contains(&w) {
                member[a] = 1;
                member[b] = 1;
                member[w] = 1;
            }
        }
    }
    member
}

/// Wrap the generated graph as a node-level dataset.
pub fn triangle_node_dataset(seed: u64, params: &TriangleNodeParams) -> Result<Dataset> {
    let graph = generate_triangle_node(seed, params)?;
    let num_feature_categories = graph
        .node_feature_ids
        .iter()
        .max()
        .map(|m| m + 1)
        .unwrap_or(1);
    let ds = Dataset {
        graphs: vec![graph],
        num_feature_categories,
        num_classes: 2,
        task: TaskKind::NodeLevel,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_instance_is_a_triangle() {
        let params = TriangleNodeParams {
            n_feature0: 3,
            n_feature1: 0,
            n_feature2: 0,
            target_edges: 3,
            target_triangle_fraction: 1.0,
        };
        let g = generate_triangle_node(7, &params).unwrap();
        assert_eq!(g.num_nodes, 3);
        assert_eq!(g.num_edges(), 3);
        assert_eq!(g.node_labels.as_ref().unwrap(), &vec![1, 1, 1]);
    }

    #[test]
    fn infeasible_budget_is_rejected() {
        let params = TriangleNodeParams {
            n_feature0: 30,
            n_feature1: 0,
            n_feature2: 0,
            target_edges: 5,
            target_triangle_fraction: 0.9,
        };
        assert!(matches!(
            generate_triangle_node(1, &params),
            Err(GraphError::Infeasible(_))
        ));
    }

    #[test]
    fn deterministic_in_seed() {
        let params = TriangleNodeParams {
            n_feature0: 60,
            n_feature1: 20,
            n_feature2: 20,
            target_edges: 300,
            target_triangle_fraction: 0.4,
        };
        let a = generate_triangle_node(11, &params).unwrap();
        let b = generate_triangle_node(11, &params).unwrap();
        assert_eq!(a, b);
        let c = generate_triangle_node(12, &params).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn midsize_instance_hits_exact_counts() {
        let params = TriangleNodeParams {
            n_feature0: 200,
            n_feature1: 20,
            n_feature2: 20,
            target_edges: 1500,
            target_triangle_fraction: 0.4,
        };
        let g = generate_triangle_node(3, &params).unwrap();
        assert_eq!(g.num_nodes, 240);
        assert_eq!(g.num_edges(), 1500);
        let members: usize = g.node_labels.as_ref().unwrap().iter().sum();
        let frac = members as f64 / 240.0;
        assert!((frac - 0.4).abs() <= 0.05, "fraction {frac}");
        // Exact feature category counts survive the shuffle.
        let count0 = g.node_feature_ids.iter().filter(|&&f| f == 0).count();
        assert_eq!(count0, 200);
    }
}
