//! 1-WL color refinement and the neighborhood-collision analysis.
//!
//! Refinement assigns each node a canonical color per round from the pair
//! (own color, sorted multiset of neighbor colors); the color histograms
//! bound what any message-passing aggregator can distinguish. The collision
//! analysis groups closed-neighborhood multisets that share a center feature
//! and a gcd-normalised feature distribution: any softmax-attention weighted
//! sum maps all members of such a group to one embedding, and the P
//! statistic is the fraction of multisets sitting in a group with at least
//! two distinct cardinalities.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{neighborhood_multiset, Dataset, Graph};

#[derive(Debug, Error)]
pub enum WlError {
    #[error("empty dataset")]
    EmptyDataset,
}

/// Grouping scope for the collision analysis: per graph for node-level
/// tasks, across the whole dataset for graph-level tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    WithinGraph,
    AcrossDataset,
}

/// Colors and color histograms per refinement round (round 0 included).
#[derive(Clone, Debug, PartialEq)]
pub struct ColorAssignment {
    pub colors_per_round: Vec<Vec<usize>>,
    pub histogram_per_round: Vec<BTreeMap<usize, usize>>,
}

impl ColorAssignment {
    pub fn rounds(&self) -> usize {
        self.colors_per_round.len()
    }

    pub fn final_colors(&self) -> &[usize] {
        self.colors_per_round.last().expect("round 0 always present")
    }
}

fn histogram(colors: &[usize]) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for &c in colors {
        *h.entry(c).or_insert(0) += 1;
    }
    h
}

/// Joint refinement of several graphs with a shared color table, so colors
/// (and histograms) are comparable across graphs. Runs at most `max_rounds`
/// refinement rounds, stopping as soon as the joint partition stops
/// refining.
pub fn wl_refine_joint(graphs: &[&Graph], max_rounds: usize) -> Vec<ColorAssignment> {
    let adjacency: Vec<Vec<Vec<usize>>> = graphs.iter().map(|g| g.adjacency()).collect();
    let mut colors: Vec<Vec<usize>> = graphs
        .iter()
        .map(|g| g.node_feature_ids.clone())
        .collect();
    let mut assignments: Vec<ColorAssignment> = colors
        .iter()
        .map(|c| ColorAssignment {
            colors_per_round: vec![c.clone()],
            histogram_per_round: vec![histogram(c)],
        })
        .collect();

    let mut distinct: usize = {
        let mut all: Vec<usize> = colors.iter().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        all.len()
    };

    for _ in 0..max_rounds {
        // Canonical ids by first appearance: deterministic in graph and
        // node order.
        let mut table: HashMap<(usize, Vec<usize>), usize> = HashMap::new();
        let mut next_colors: Vec<Vec<usize>> = Vec::with_capacity(graphs.len());
        for (gi, g) in graphs.iter().enumerate() {
            let mut new_colors = Vec::with_capacity(g.num_nodes);
            for node in 0..g.num_nodes {
                let mut neighbor_colors: Vec<usize> = adjacency[gi][node]
                    .iter()
                    .map(|&j| colors[gi][j])
                    .collect();
                neighbor_colors.sort_unstable();
                let key = (colors[gi][node], neighbor_colors);
                let next = table.len();
                let id = *table.entry(key).or_insert(next);
                new_colors.push(id);
            }
            next_colors.push(new_colors);
        }
        let new_distinct = table.len();
        // A refinement round only splits classes; an unchanged count means
        // the partition is stable and further rounds add nothing.
        if new_distinct == distinct {
            break;
        }
        distinct = new_distinct;
        colors = next_colors;
        for (assignment, c) in assignments.iter_mut().zip(&colors) {
            assignment.colors_per_round.push(c.clone());
            assignment.histogram_per_round.push(histogram(c));
        }
    }
    assignments
}

/// Refine one graph for at most `rounds` rounds.
pub fn wl_refine(graph: &Graph, rounds: usize) -> ColorAssignment {
    wl_refine_joint(&[graph], rounds)
        .pop()
        .expect("one assignment per graph")
}

/// True iff joint refinement separates the color histograms of the two
/// graphs in some round; `false` means "not distinguished", which is not a
/// proof of isomorphism.
pub fn wl_distinguish(g1: &Graph, g2: &Graph, max_rounds: usize) -> bool {
    let assignments = wl_refine_joint(&[g1, g2], max_rounds);
    let rounds = assignments[0]
        .rounds()
        .min(assignments[1].rounds());
    (0..rounds).any(|r| {
        assignments[0].histogram_per_round[r] != assignments[1].histogram_per_round[r]
    })
}

/// One multiset inside a collision group.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionMember {
    pub graph: usize,
    pub node: usize,
    /// Scale of this member's multiplicities over the group base.
    pub k: usize,
    pub cardinality: usize,
}

/// Multisets sharing a center feature and a normalised feature
/// distribution. Only groups with at least two distinct cardinalities are
/// reported: identical multisets encode identical subtrees and lose
/// nothing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionGroup {
    pub center_feature: usize,
    pub ground_set: Vec<usize>,
    pub base_multiplicities: Vec<usize>,
    pub distinct_k: Vec<usize>,
    pub members: Vec<CollisionMember>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub scope: Scope,
    pub total_multisets: usize,
    pub colliding_multisets: usize,
    pub p_value: f64,
    pub groups: Vec<CollisionGroup>,
}

/// Group every node's closed-neighborhood multiset by
/// (center, normalised distribution) and keep the multi-cardinality groups.
pub fn find_colliding_pairs(dataset: &Dataset, scope: Scope) -> CollisionReport {
    type Key = (Option<usize>, usize, Vec<usize>, Vec<usize>);
    let mut table: BTreeMap<Key, Vec<CollisionMember>> = BTreeMap::new();
    let mut total = 0usize;
    for (gi, g) in dataset.graphs.iter().enumerate() {
        for node in 0..g.num_nodes {
            let m = neighborhood_multiset(g, node);
            let (support, base, k) = m.normalized();
            let scope_key = match scope {
                Scope::WithinGraph => Some(gi),
                Scope::AcrossDataset => None,
            };
            table
                .entry((scope_key, m.center_feature, support, base))
                .or_default()
                .push(CollisionMember {
                    graph: gi,
                    node,
                    k,
                    cardinality: m.cardinality,
                });
            total += 1;
        }
    }
    let mut groups = Vec::new();
    let mut colliding = 0usize;
    for ((_, center, support, base), members) in table {
        let mut ks: Vec<usize> = members.iter().map(|m| m.k).collect();
        ks.sort_unstable();
        ks.dedup();
        if ks.len() < 2 {
            continue;
        }
        colliding += members.len();
        groups.push(CollisionGroup {
            center_feature: center,
            ground_set: support,
            base_multiplicities: base,
            distinct_k: ks,
            members,
        });
    }
    let p_value = if total == 0 {
        0.0
    } else {
        colliding as f64 / total as f64
    };
    CollisionReport {
        scope,
        total_multisets: total,
        colliding_multisets: colliding,
        p_value,
        groups,
    }
}

/// Fraction of neighborhood multisets whose collision group contains at
/// least two distinct cardinalities.
pub fn compute_p_statistic(
    dataset: &Dataset,
    scope: Scope,
) -> Result<(f64, CollisionReport), WlError> {
    if dataset.graphs.is_empty() {
        return Err(WlError::EmptyDataset);
    }
    let report = find_colliding_pairs(dataset, scope);
    Ok((report.p_value, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{make_complete, make_ring, Dataset, TaskKind};

    fn star(center_feature: usize, leaf_features: &[usize]) -> Graph {
        let n = leaf_features.len() + 1;
        let mut features = vec![center_feature];
        features.extend_from_slice(leaf_features);
        Graph {
            num_nodes: n,
            edges: (1..n).map(|i| (0, i)).collect(),
            node_feature_ids: features,
            node_labels: None,
            graph_label: Some(0),
        }
    }

    fn graph_dataset(graphs: Vec<Graph>, cats: usize) -> Dataset {
        Dataset {
            graphs,
            num_feature_categories: cats,
            num_classes: 1,
            task: TaskKind::GraphLevel,
        }
    }

    #[test]
    fn uniform_complete_graph_is_monochrome() {
        let g = make_complete(4, 0).unwrap();
        let a = wl_refine(&g, 1);
        let final_colors = a.final_colors();
        assert!(final_colors.iter().all(|&c| c == final_colors[0]));
        assert_eq!(a.histogram_per_round.last().unwrap().len(), 1);
    }

    #[test]
    fn star_splits_by_degree_after_one_round() {
        let g = star(0, &[0, 0, 0]);
        let a = wl_refine(&g, 1);
        let hist = &a.histogram_per_round[1];
        let mut counts: Vec<usize> = hist.values().copied().collect();
        counts.sort_unstable();
        assert_eq!(counts, vec![1, 3]);
    }

    #[test]
    fn path_stabilises_into_ends_and_middle() {
        let g = Graph {
            num_nodes: 3,
            edges: vec![(0, 1), (1, 2)],
            node_feature_ids: vec![0; 3],
            node_labels: None,
            graph_label: None,
        };
        let a = wl_refine(&g, 5);
        let colors = a.final_colors();
        assert_eq!(colors[0], colors[2]);
        assert_ne!(colors[0], colors[1]);
        // Stable after round 1: rounds recorded are 0 and 1.
        assert_eq!(a.rounds(), 2);
    }

    #[test]
    fn wl_separates_complete_from_ring() {
        let k6 = make_complete(6, 0).unwrap();
        let c6 = make_ring(6, 0).unwrap();
        assert!(wl_distinguish(&k6, &c6, 3));
        assert!(!wl_distinguish(&k6, &k6.clone(), 3));
    }

    #[test]
    fn different_uniform_features_distinguish_at_round_zero() {
        let a = make_ring(6, 0).unwrap();
        let b = make_ring(6, 1).unwrap();
        assert!(wl_distinguish(&a, &b, 1));
    }

    #[test]
    fn collision_group_requires_matching_center() {
        // Closed multisets {0,1} and {0,0,1,1}: same center, multiplicities
        // (1,1) vs (2,2) — one group with k in {1, 2}.
        let ds = graph_dataset(vec![star(0, &[1]), star(0, &[0, 1, 1])], 2);
        let report = find_colliding_pairs(&ds, Scope::AcrossDataset);
        let group = report
            .groups
            .iter()
            .find(|g| g.members.iter().any(|m| m.node == 0 && m.graph == 0))
            .expect("center collision group");
        let ks: Vec<usize> = group.members.iter().map(|m| m.k).collect();
        assert!(ks.contains(&1) && ks.contains(&2));

        // Different centers, same distribution: no shared group.
        let ds2 = graph_dataset(vec![star(0, &[0, 1]), star(1, &[0, 1])], 2);
        let report2 = find_colliding_pairs(&ds2, Scope::AcrossDataset);
        for g in &report2.groups {
            let centers: Vec<usize> = g
                .members
                .iter()
                .map(|m| ds2.graphs[m.graph].node_feature_ids[m.node])
                .collect();
            assert!(centers.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn single_complete_graph_has_p_zero() {
        let ds = graph_dataset(vec![make_complete(4, 0).unwrap()], 1);
        let (p, report) = compute_p_statistic(&ds, Scope::WithinGraph).unwrap();
        assert_eq!(p, 0.0);
        assert!(report.groups.is_empty());
    }

    #[test]
    fn uniform_features_with_mixed_degrees_give_p_one() {
        let ds = graph_dataset(
            vec![make_complete(6, 0).unwrap(), make_ring(6, 0).unwrap()],
            1,
        );
        let (p, _) = compute_p_statistic(&ds, Scope::AcrossDataset).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let ds = graph_dataset(vec![], 1);
        assert!(compute_p_statistic(&ds, Scope::AcrossDataset).is_err());
    }

    #[test]
    fn p_statistic_is_permutation_invariant() {
        let g1 = star(0, &[1, 1, 0]);
        let g2 = star(0, &[1, 1, 1, 1, 0, 0]);
        let ds = graph_dataset(vec![g1.clone(), g2.clone()], 2);
        let (p, _) = compute_p_statistic(&ds, Scope::AcrossDataset).unwrap();

        let perm1: Vec<usize> = vec![3, 0, 2, 1];
        let perm2: Vec<usize> = vec![6, 1, 5, 2, 4, 0, 3];
        let ds_perm = graph_dataset(
            vec![g1.permuted(&perm1), g2.permuted(&perm2)],
            2,
        );
        let (p_perm, _) = compute_p_statistic(&ds_perm, Scope::AcrossDataset).unwrap();
        assert_eq!(p, p_perm);
    }

    // Exhaustive oracle: all multisets over 2 features with cardinality
    // <= 4, each realised as a star; collision groups must be exactly the
    // proportional-multiplicity chains with equal centers.
    #[test]
    fn collision_groups_match_brute_force_enumeration() {
        let mut multisets: Vec<(usize, Vec<usize>)> = Vec::new();
        for card in 1..=4usize {
            for ones in 0..=card {
                let zeros = card - ones;
                let mut elements = vec![0usize; zeros];
                elements.extend(std::iter::repeat(1).take(ones));
                for &center in elements.iter().collect::<std::collections::BTreeSet<_>>() {
                    multisets.push((center, elements.clone()));
                }
            }
        }
        let graphs: Vec<Graph> = multisets
            .iter()
            .map(|(c, elements)| {
                let mut leaves = elements.clone();
                let pos = leaves.iter().position(|f| f == c).expect("center in multiset");
                leaves.remove(pos);
                star(*c, &leaves)
            })
            .collect();
        let ds = graph_dataset(graphs, 2);
        let report = find_colliding_pairs(&ds, Scope::AcrossDataset);

        // Oracle: pair (i, j) collides iff centers equal and multiplicity
        // vectors are proportional.
        let proportional = |a: &[usize], b: &[usize]| -> bool {
            a.len() == b.len() && {
                // cross-multiplication avoids rationals
                a.iter().zip(b).all(|(&x, &y)| x * b[0] == y * a[0])
            }
        };
        let to_counts = |elements: &[usize]| -> (Vec<usize>, Vec<usize>) {
            let mut support: Vec<usize> = elements.to_vec();
            support.sort_unstable();
            support.dedup();
            let counts = support
                .iter()
                .map(|s| elements.iter().filter(|e| *e == s).count())
                .collect();
            (support, counts)
        };
        let mut oracle_pairs = std::collections::BTreeSet::new();
        for i in 0..multisets.len() {
            for j in (i + 1)..multisets.len() {
                let (ci, ei) = &multisets[i];
                let (cj, ej) = &multisets[j];
                let (si, mi) = to_counts(ei);
                let (sj, mj) = to_counts(ej);
                if ci == cj && si == sj && proportional(&mi, &mj) && ei.len() != ej.len() {
                    oracle_pairs.insert((i, j));
                }
            }
        }
        // Node 0 of graph i is the center of multiset i; collect the pairs
        // the report places in one group with different cardinalities.
        let mut report_pairs = std::collections::BTreeSet::new();
        for group in &report.groups {
            let centers: Vec<&CollisionMember> =
                group.members.iter().filter(|m| m.node == 0).collect();
            for a in 0..centers.len() {
                for b in (a + 1)..centers.len() {
                    if centers[a].cardinality != centers[b].cardinality {
                        let (x, y) = (centers[a].graph, centers[b].graph);
                        report_pairs.insert((x.min(y), x.max(y)));
                    }
                }
            }
        }
        assert_eq!(oracle_pairs, report_pairs);
    }
}
