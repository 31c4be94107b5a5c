//! Property tests: every differentiable primitive against central finite
//! differences, segment-softmax normalisation, determinism, and the graph
//! and refinement invariants.

use cpa_gnn::graph::{
    load_tu_dataset, neighborhood_multiset, save_tu_dataset, Dataset, Graph, TaskKind,
};
use cpa_gnn::tensor::{gradient_check, BnStats, Tape, Tensor};
use cpa_gnn::wl::{compute_p_statistic, wl_refine, Scope};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1.0f64..1.0, n)
}

// Inputs bounded away from activation kinks so central differences stay
// second-order accurate.
fn kink_free(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(
        prop_oneof![-1.0f64..-0.01, 0.01f64..1.0],
        n,
    )
}

fn positive(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.1f64..2.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn grad_matmul(a in values(6), b in values(12)) {
        let point = Tensor::matrix(2, 3, a).unwrap();
        let report = gradient_check(
            move |t, x| {
                let w = t.constant(Tensor::matrix(3, 4, b.clone()).unwrap());
                let y = t.matmul(x, w)?;
                t.sum_all(y)
            },
            &point, FD_STEP, FD_TOL,
        ).unwrap();
        prop_assert!(report.passed, "deviation {}", report.max_rel_deviation);
    }

    #[test]
    fn grad_add_sub_mul_broadcast(a in values(6), row in values(3), col in values(2)) {
        let point = Tensor::matrix(2, 3, a).unwrap();
        let report = gradient_check(
            move |t, x| {
                let r = t.constant(Tensor::vector(row.clone()));
                let c = t.constant(Tensor::matrix(2, 1, col.clone()).unwrap());
                let s = t.add(x, r)?;
                let s = t.sub(s, c)?;
                let s = t.mul(s, x)?;
                let s = t.mul(s, c)?;
                t.sum_all(s)
            },
            &point, FD_STEP, FD_TOL,
        ).unwrap();
        prop_assert!(report.passed, "deviation {}", report.max_rel_deviation);
    }

    #[test]
    fn grad_scalar_mul_concat_narrow_reshape(a in values(6), c in -2.0f64..2.0) {
        let point = Tensor::matrix(2, 3, a).unwrap();
        let report = gradient_check(
            move |t, x| {
                let y = t.scalar_mul(x, c)?;
                let z = t.concat_last_axis(&[x, y])?;
                let z = t.narrow(z, 0, 2)?;
                let z = t.reshape(z, &[12])?;
                let z = t.mul(z, z)?;
                t.sum_all(z)
            },
            &point, FD_STEP, FD_TOL,
        ).unwrap();
        prop_assert!(report.passed, "deviation {}", report.max_rel_deviation);
    }

    #[test]
    fn grad_leaky_relu_and_relu(a in kink_free(8)) {
        let point = Tensor::matrix(2, 4, a).unwrap();
        let report = gradient_check(
            |t, x| {
                let y = t.leaky_relu(x, 0.2)?;
                let y = t.relu(y)?;
                t.sum_all(y)
            },
            &point, FD_STEP, FD_TOL,
        ).unwrap();
        prop_assert!(report.passed, "deviation {}", report.max_rel_deviation);
    }

    #[test]
    fn grad_exp_log(a in positive(6)) {
        let point = Tensor::vector(a);
        let report = gradient_check(
            |t, x| {
                let y = t.exp(x)?;
                let y = t.log(y)?;
                let y = t.log(y)?; // ln of values in (0.1, 2) shifted by exp/log chain
                t.sum_all(y)
            },
            &point, FD_STEP, FD_TOL,
        ).unwrap();
        prop_assert!(report.passed, "deviation {}", report.max_rel_deviation);
    }

    #[test]
    fn grad_gather_and_segment_sum(a in values(8)) {
        let point = Tensor::matrix(4, 2, a).unwrap();
        let report = gradient_check(
            |t, x| {
                let g = t.gather_rows(x, &[0, 0, 1, 2, 3, 3])?;
                let s = t.segment_sum(g, &[0, 0, 0, 1, 1, 1])?;
                let s = t.mul(s, s)?;
                t.sum_all(s)
            },
            &point, FD_STEP, FD_TOL,
        ).unwrap();
        prop_assert!(report.passed, "deviation {}", report.max_rel_deviation);
    }

    #[test]
    fn grad_segment_softmax(a in values(7)) {
        let point = Tensor::vector(a);
        let report = gradient_check(
            |t, x| {
                let y = t.segment_softmax(x, &[0, 0, 0, 1, 1, 2, 2])?;
                let w = t.constant(Tensor::vector(vec![0.9, -0.3, 0.4, 1.2, -0.8, 0.1, 0.5]));
                let y = t.mul(y, w)?;
                t.sum_all(y)
            },
            &point, FD_STEP, FD_TOL,
        ).unwrap();
        prop_assert!(report.passed, "deviation {}", report.max_rel_deviation);
    }

    #[test]
    fn grad_batch_norm_train_and_eval(a in values(8), g in kink_free(2), b in values(2)) {
        for train in [true, false] {
            let point = Tensor::matrix(4, 2, a.clone()).unwrap();
            let g = g.clone();
            let b = b.clone();
            let report = gradient_check(
                move |t, x| {
                    let gamma = t.leaf(Tensor::vector(g.clone()), false);
                    let beta = t.leaf(Tensor::vector(b.clone()), false);
                    let mut stats = BnStats::new(2);
                    let y = t.batch_norm(x, gamma, beta, &mut stats, train, 0.1, 1e-5)?;
                    let y = t.mul(y, y)?;
                    t.sum_all(y)
                },
                &point, FD_STEP, FD_TOL,
            ).unwrap();
            prop_assert!(report.passed, "train={train} deviation {}", report.max_rel_deviation);
        }
    }

    #[test]
    fn grad_batch_norm_gamma_beta(a in values(8), g in kink_free(2)) {
        // Gradient with respect to the scale parameter.
        let data = a.clone();
        let point = Tensor::vector(g);
        let report = gradient_check(
            move |t, gamma| {
                let x = t.constant(Tensor::matrix(4, 2, data.clone()).unwrap());
                let beta = t.leaf(Tensor::vector(vec![0.1, -0.2]), false);
                let mut stats = BnStats::new(2);
                let y = t.batch_norm(x, gamma, beta, &mut stats, true, 0.1, 1e-5)?;
                t.sum_all(y)
            },
            &point, FD_STEP, FD_TOL,
        ).unwrap();
        prop_assert!(report.passed, "deviation {}", report.max_rel_deviation);
    }

    #[test]
    fn grad_dropout_fixed_mask(a in values(6), seed in 0u64..1000) {
        let point = Tensor::matrix(2, 3, a).unwrap();
        let report = gradient_check(
            move |t, x| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let y = t.dropout(x, 0.4, &mut rng)?;
                let y = t.mul(y, y)?;
                t.sum_all(y)
            },
            &point, FD_STEP, FD_TOL,
        ).unwrap();
        prop_assert!(report.passed, "deviation {}", report.max_rel_deviation);
    }

    #[test]
    fn grad_cross_entropy(a in values(6), labels in proptest::collection::vec(0usize..3, 2)) {
        let point = Tensor::matrix(2, 3, a).unwrap();
        let report = gradient_check(
            move |t, x| t.cross_entropy(x, &labels),
            &point, FD_STEP, FD_TOL,
        ).unwrap();
        prop_assert!(report.passed, "deviation {}", report.max_rel_deviation);
    }

    #[test]
    fn segment_softmax_sums_to_one(a in values(9)) {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(a), false);
        let segments = vec![0, 0, 0, 1, 1, 2, 2, 2, 2];
        let y = tape.segment_softmax(x, &segments).unwrap();
        let data = tape.value(y).data();
        prop_assert!(data.iter().all(|&v| v > 0.0));
        let mut sums = [0.0f64; 3];
        for (i, &s) in segments.iter().enumerate() {
            sums[s] += data[i];
        }
        for s in sums {
            prop_assert!((s - 1.0).abs() < 1e-12, "segment sum {s}");
        }
    }
}

#[test]
fn seeded_computation_is_bit_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::uniform(&mut rng, &[4, 4], -1.0, 1.0), true);
        let w = tape.constant(Tensor::uniform(&mut rng, &[4, 4], -1.0, 1.0));
        let y = tape.matmul(x, w).unwrap();
        let y = tape.leaky_relu(y, 0.2).unwrap();
        let y = tape.dropout(y, 0.3, &mut rng).unwrap();
        let loss = tape.sum_all(y).unwrap();
        tape.backward(loss).unwrap();
        (
            tape.value(loss).item(),
            tape.grad(x).unwrap().data().to_vec(),
        )
    };
    let (l1, g1) = run();
    let (l2, g2) = run();
    assert!(l1.to_bits() == l2.to_bits());
    assert!(g1
        .iter()
        .zip(&g2)
        .all(|(a, b)| a.to_bits() == b.to_bits()));
}

// ── graph and refinement invariants ─────────────────────────────────────

fn random_graph_strategy() -> impl Strategy<Value = Graph> {
    (2usize..12, any::<u64>()).prop_map(|(n, seed)| {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen::<f64>() < 0.35 {
                    edges.push((i, j));
                }
            }
        }
        let node_feature_ids = (0..n).map(|_| rng.gen_range(0..3)).collect();
        Graph {
            num_nodes: n,
            edges,
            node_feature_ids,
            node_labels: None,
            graph_label: Some(0),
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn neighborhood_cardinality_is_degree_plus_one(g in random_graph_strategy()) {
        for node in 0..g.num_nodes {
            let m = neighborhood_multiset(&g, node);
            prop_assert_eq!(m.cardinality, g.degree(node) + 1);
        }
    }

    #[test]
    fn wl_color_counts_monotone_and_stabilise(g in random_graph_strategy()) {
        let assignment = wl_refine(&g, g.num_nodes + 2);
        let counts: Vec<usize> = assignment
            .histogram_per_round
            .iter()
            .map(|h| h.len())
            .collect();
        for pair in counts.windows(2) {
            prop_assert!(pair[1] >= pair[0], "color count decreased: {counts:?}");
        }
        prop_assert!(assignment.rounds() <= g.num_nodes + 1);
    }

    #[test]
    fn tu_roundtrip_is_stable(g1 in random_graph_strategy(), g2 in random_graph_strategy()) {
        let ds = Dataset {
            graphs: vec![g1, g2],
            num_feature_categories: 3,
            num_classes: 1,
            task: TaskKind::GraphLevel,
        };
        let dir = tempfile::tempdir().unwrap();
        save_tu_dataset(&ds, dir.path(), "prop").unwrap();
        let (loaded1, _) = load_tu_dataset(dir.path(), "prop").unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        save_tu_dataset(&loaded1, dir2.path(), "prop").unwrap();
        let (loaded2, _) = load_tu_dataset(dir2.path(), "prop").unwrap();
        prop_assert_eq!(loaded1, loaded2);
    }

    #[test]
    fn p_statistic_survives_relabeling(g in random_graph_strategy(), perm_seed in any::<u64>()) {
        let ds = Dataset {
            graphs: vec![g.clone()],
            num_feature_categories: 3,
            num_classes: 1,
            task: TaskKind::GraphLevel,
        };
        let (p, _) = compute_p_statistic(&ds, Scope::WithinGraph).unwrap();

        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        let mut perm: Vec<usize> = (0..g.num_nodes).collect();
        perm.shuffle(&mut rng);
        let permuted = Dataset {
            graphs: vec![g.permuted(&perm)],
            num_feature_categories: 3,
            num_classes: 1,
            task: TaskKind::GraphLevel,
        };
        let (p2, _) = compute_p_statistic(&permuted, Scope::WithinGraph).unwrap();
        prop_assert_eq!(p, p2);
    }
}
