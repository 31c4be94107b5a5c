//! Seeded cross-validation training harness.
//!
//! Experiments run stratified k-fold cross-validation, optionally repeated
//! with re-randomised folds. For each run the reported epoch is the one
//! whose validation accuracy, averaged over all folds, is highest; the
//! final mean and standard deviation pool the per-fold accuracies at that
//! epoch across every repeat. Folds train in parallel with independent
//! models and RNG streams, so results are identical for identical
//! `(config, seed)` regardless of scheduling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::aggregators::{AggregatorKind, Incidence};
use crate::graph::{one_hot_graph, Dataset, TaskKind};
use crate::models::{
    Activation, GatGcModel, GatNodeModel, GcModelConfig, GraphBatch, ModelError, NodeModelConfig,
    ReadoutMode,
};
use crate::tensor::{AdamConfig, AdamState, Tape, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("stratification: class {class} has {count} instances for {folds} folds")]
    Stratification {
        class: usize,
        count: usize,
        folds: usize,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("results share no fold structure: {0}")]
    FoldMismatch(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Full experiment configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: TaskKind,
    pub variant: AggregatorKind,
    pub folds: usize,
    pub repeats: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_drop_every: usize,
    pub lr_drop_factor: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub heads: usize,
    pub num_layers: usize,
    pub readout: ReadoutMode,
    pub activation: Activation,
    pub seed: u64,
}

impl TrainConfig {
    /// Node-classification defaults: 2 layers, hidden 32, lr 0.01 halved
    /// every 400 epochs.
    pub fn node_defaults(variant: AggregatorKind) -> Self {
        TrainConfig {
            task: TaskKind::NodeLevel,
            variant,
            folds: 10,
            repeats: 10,
            epochs: 1000,
            lr: 0.01,
            lr_drop_every: 400,
            lr_drop_factor: 0.5,
            batch_size: 0,
            dropout: 0.0,
            weight_decay: 0.0,
            hidden: 32,
            heads: 1,
            num_layers: 2,
            readout: ReadoutMode::Mean,
            activation: Activation::Relu,
            seed: 0,
        }
    }

    /// Graph-classification defaults for bioinformatics-style data:
    /// 4 layers, hidden 32, sum readout, lr 0.01 halved every 50 epochs.
    pub fn graph_bio_defaults(variant: AggregatorKind) -> Self {
        TrainConfig {
            task: TaskKind::GraphLevel,
            variant,
            folds: 10,
            repeats: 10,
            epochs: 300,
            lr: 0.01,
            lr_drop_every: 50,
            lr_drop_factor: 0.5,
            batch_size: 32,
            dropout: 0.0,
            weight_decay: 0.0,
            hidden: 32,
            heads: 1,
            num_layers: 4,
            readout: ReadoutMode::Sum,
            activation: Activation::Relu,
            seed: 0,
        }
    }

    /// Graph-classification defaults for social-style data: hidden 64,
    /// mean readout, lr 0.0025.
    pub fn graph_social_defaults(variant: AggregatorKind) -> Self {
        TrainConfig {
            lr: 0.0025,
            hidden: 64,
            readout: ReadoutMode::Mean,
            ..Self::graph_bio_defaults(variant)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(TrainError::Config(format!(
                "folds must be >= 2, got {}",
                self.folds
            )));
        }
        if self.repeats == 0 || self.epochs == 0 {
            return Err(TrainError::Config("repeats and epochs must be positive".into()));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("lr_drop_factor", self.lr_drop_factor),
            ("dropout", self.dropout),
            ("weight_decay", self.weight_decay),
        ] {
            if v < 0.0 {
                return Err(TrainError::Config(format!("{name} must be non-negative")));
            }
        }
        if self.task == TaskKind::GraphLevel && self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Step-decay schedule: the rate is halved (by `lr_drop_factor`) every
/// `lr_drop_every` epochs.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    if config.lr_drop_every == 0 {
        return config.lr;
    }
    config.lr * config.lr_drop_factor.powi((epoch / config.lr_drop_every) as i32)
}

/// Accuracy curves for one (repeat, fold) training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub repeat: usize,
    pub fold: usize,
    pub train_curve: Vec<f64>,
    pub val_curve: Vec<f64>,
}

/// Experiment outcome: per-fold curves, the epoch chosen per repeat by
/// fold-averaged validation accuracy, and pooled accuracy statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: TrainConfig,
    pub folds: Vec<FoldRecord>,
    pub selected_epoch_per_repeat: Vec<usize>,
    pub final_accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl RunResult {
    /// Mean training accuracy over the last `window` epochs, across folds.
    pub fn train_plateau(&self, window: usize) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for fold in &self.folds {
            let n = fold.train_curve.len();
            let start = n.saturating_sub(window);
            for &v in &fold.train_curve[start..] {
                sum += v;
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }
}

// splitmix64: cheap deterministic seed derivation.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut s = splitmix64(base ^ 0x5851f42d4c957f2d);
    for &t in tags {
        s = splitmix64(s ^ t);
    }
    s
}

/// Deal each class round-robin into folds after a seeded shuffle, so every
/// fold's class counts differ by at most one instance.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Result<Vec<usize>> {
    let num_classes = labels.iter().max().map(|m| m + 1).unwrap_or(0);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; labels.len()];
    let mut next_fold = 0usize;
    for (class, mut items) in by_class.into_iter().enumerate() {
        if items.is_empty() {
            continue;
        }
        if items.len() < folds {
            return Err(TrainError::Stratification {
                class,
                count: items.len(),
                folds,
            });
        }
        items.shuffle(&mut rng);
        for item in items {
            assignment[item] = next_fold;
            next_fold = (next_fold + 1) % folds;
        }
    }
    Ok(assignment)
}

fn accuracy_on(logits: &crate::tensor::Tensor, labels: &[usize], rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let cols = logits.shape()[1];
    let mut correct = 0usize;
    for (slot, &row) in rows.iter().enumerate() {
        let offset = row * cols;
        let mut best = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        for c in 0..cols {
            let v = logits.data()[offset + c];
            if v > best_v {
                best_v = v;
                best = c;
            }
        }
        let want = labels[slot.min(labels.len() - 1)];
        if best == want {
            correct += 1;
        }
    }
    correct as f64 / rows.len() as f64
}

fn graph_fold_run(
    dataset: &Dataset,
    config: &TrainConfig,
    assignment: &[usize],
    repeat: usize,
    fold: usize,
) -> Result<FoldRecord> {
    let train_idx: Vec<usize> = (0..dataset.num_graphs())
        .filter(|&i| assignment[i] != fold)
        .collect();
    let val_idx: Vec<usize> = (0..dataset.num_graphs())
        .filter(|&i| assignment[i] == fold)
        .collect();

    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(
        config.seed,
        &[1, repeat as u64, fold as u64],
    ));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(
        config.seed,
        &[2, repeat as u64, fold as u64],
    ));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(
        config.seed,
        &[3, repeat as u64, fold as u64],
    ));

    let mut cfg = GcModelConfig::new(
        dataset.num_feature_categories,
        dataset.num_classes,
        config.variant,
        config.readout,
    );
    cfg.hidden = config.hidden;
    cfg.heads = config.heads;
    cfg.num_layers = config.num_layers;
    cfg.dropout = config.dropout;
    cfg.activation = config.activation;
    let mut model = GatGcModel::new(&mut init_rng, &cfg);
    let mut adam = AdamState::new(&model.params());
    let adam_cfg = AdamConfig {
        weight_decay: config.weight_decay,
        ..AdamConfig::default()
    };

    let train_eval_batch = GraphBatch::new(dataset, &train_idx);
    let val_batch = GraphBatch::new(dataset, &val_idx);

    let mut train_curve = Vec::with_capacity(config.epochs);
    let mut val_curve = Vec::with_capacity(config.epochs);
    let mut order = train_idx.clone();
    for epoch in 0..config.epochs {
        let lr = lr_schedule(epoch, config);
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch = GraphBatch::new(dataset, chunk);
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape);
            let logits = model.forward(&mut tape, &vars, &batch, true, &mut dropout_rng)?;
            let loss = tape.cross_entropy(logits, &batch.labels)?;
            tape.backward(loss)?;
            adam.step(&mut model.params_mut(), lr, &adam_cfg)?;
        }
        let eval = |batch: &GraphBatch, m: &GatGcModel| -> Result<f64> {
            let mut tape = Tape::new();
            let vars = m.bind(&mut tape);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let logits = m.forward(&mut tape, &vars, batch, false, &mut rng)?;
            let rows: Vec<usize> = (0..batch.num_graphs).collect();
            let acc = accuracy_on(tape.value(logits), &batch.labels, &rows);
            for p in m.params() {
                p.zero_grad();
            }
            Ok(acc)
        };
        train_curve.push(eval(&train_eval_batch, &model)?);
        val_curve.push(eval(&val_batch, &model)?);
    }
    Ok(FoldRecord {
        repeat,
        fold,
        train_curve,
        val_curve,
    })
}

fn node_fold_run(
    dataset: &Dataset,
    config: &TrainConfig,
    assignment: &[usize],
    repeat: usize,
    fold: usize,
) -> Result<FoldRecord> {
    let graph = &dataset.graphs[0];
    let labels = graph
        .node_labels
        .as_ref()
        .expect("validated node-level dataset");
    let train_idx: Vec<usize> = (0..graph.num_nodes)
        .filter(|&i| assignment[i] != fold)
        .collect();
    let val_idx: Vec<usize> = (0..graph.num_nodes)
        .filter(|&i| assignment[i] == fold)
        .collect();
    let train_labels: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
    let val_labels: Vec<usize> = val_idx.iter().map(|&i| labels[i]).collect();

    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(
        config.seed,
        &[1, repeat as u64, fold as u64],
    ));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(
        config.seed,
        &[3, repeat as u64, fold as u64],
    ));

    let mut cfg = NodeModelConfig::new(
        dataset.num_feature_categories,
        dataset.num_classes,
        config.variant,
    );
    cfg.hidden = config.hidden;
    cfg.heads = config.heads;
    cfg.num_layers = config.num_layers;
    cfg.dropout = config.dropout;
    cfg.activation = config.activation;
    let mut model = GatNodeModel::new(&mut init_rng, &cfg);
    let mut adam = AdamState::new(&model.params());
    let adam_cfg = AdamConfig {
        weight_decay: config.weight_decay,
        ..AdamConfig::default()
    };

    let features = one_hot_graph(graph, dataset.num_feature_categories);
    let inc = Incidence::from_graph(graph);

    let mut train_curve = Vec::with_capacity(config.epochs);
    let mut val_curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = lr_schedule(epoch, config);
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let logits = model.forward(&mut tape, &vars, &features, &inc, true, &mut dropout_rng)?;
        let train_logits = tape.gather_rows(logits, &train_idx)?;
        let loss = tape.cross_entropy(train_logits, &train_labels)?;

        // With no dropout the training forward doubles as evaluation.
        let logits_value = if config.dropout > 0.0 {
            let mut eval_tape = Tape::new();
            let eval_vars = model.bind(&mut eval_tape);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let eval_logits =
                model.forward(&mut eval_tape, &eval_vars, &features, &inc, false, &mut rng)?;
            eval_tape.value(eval_logits).clone()
        } else {
            tape.value(logits).clone()
        };
        train_curve.push(accuracy_on(&logits_value, &train_labels, &train_idx));
        val_curve.push(accuracy_on(&logits_value, &val_labels, &val_idx));

        tape.backward(loss)?;
        adam.step(&mut model.params_mut(), lr, &adam_cfg)?;
    }
    Ok(FoldRecord {
        repeat,
        fold,
        train_curve,
        val_curve,
    })
}

/// Run repeated stratified cross-validation for one configuration.
pub fn run_cv(dataset: &Dataset, config: &TrainConfig) -> Result<RunResult> {
    config.validate()?;
    if dataset.task != config.task {
        return Err(TrainError::Config(format!(
            "dataset task {:?} does not match config task {:?}",
            dataset.task, config.task
        )));
    }
    let strat_labels: Vec<usize> = match config.task {
        TaskKind::GraphLevel => dataset
            .graphs
            .iter()
            .map(|g| g.graph_label.expect("validated graph labels"))
            .collect(),
        TaskKind::NodeLevel => {
            if dataset.num_graphs() != 1 {
                return Err(TrainError::Config(format!(
                    "node-level training expects a single graph, got {}",
                    dataset.num_graphs()
                )));
            }
            dataset.graphs[0]
                .node_labels
                .clone()
                .expect("validated node labels")
        }
    };

    let mut jobs = Vec::new();
    for repeat in 0..config.repeats {
        let assignment = stratified_folds(
            &strat_labels,
            config.folds,
            derive_seed(config.seed, &[0, repeat as u64]),
        )?;
        for fold in 0..config.folds {
            jobs.push((repeat, fold, assignment.clone()));
        }
    }

    let records: Result<Vec<FoldRecord>> = jobs
        .par_iter()
        .map(|(repeat, fold, assignment)| match config.task {
            TaskKind::GraphLevel => graph_fold_run(dataset, config, assignment, *repeat, *fold),
            TaskKind::NodeLevel => node_fold_run(dataset, config, assignment, *repeat, *fold),
        })
        .collect();
    let records = records?;

    // Epoch selection per repeat: argmax of fold-averaged validation
    // accuracy (earliest epoch wins ties), then pool that epoch's fold
    // accuracies across repeats.
    let mut selected = Vec::with_capacity(config.repeats);
    let mut final_accuracies = Vec::with_capacity(config.repeats * config.folds);
    for repeat in 0..config.repeats {
        let folds: Vec<&FoldRecord> = records.iter().filter(|r| r.repeat == repeat).collect();
        let mut best_epoch = 0usize;
        let mut best_acc = f64::NEG_INFINITY;
        for epoch in 0..config.epochs {
            let avg: f64 = folds.iter().map(|f| f.val_curve[epoch]).sum::<f64>()
                / folds.len() as f64;
            if avg > best_acc {
                best_acc = avg;
                best_epoch = epoch;
            }
        }
        selected.push(best_epoch);
        for fold in &folds {
            final_accuracies.push(fold.val_curve[best_epoch]);
        }
    }
    let mean = final_accuracies.iter().sum::<f64>() / final_accuracies.len() as f64;
    let std = if final_accuracies.len() > 1 {
        let var = final_accuracies
            .iter()
            .map(|a| (a - mean) * (a - mean))
            .sum::<f64>()
            / (final_accuracies.len() - 1) as f64;
        var.sqrt()
    } else {
        0.0
    };
    Ok(RunResult {
        config: config.clone(),
        folds: records,
        selected_epoch_per_repeat: selected,
        final_accuracies,
        mean,
        std,
    })
}

// ── Comparison across variants ──────────────────────────────────────────

/// Two-sided paired t-test over matched samples. Returns `(t, p)`; a zero
/// difference vector yields `p = 1`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> (f64, f64) {
    assert_eq!(a.len(), b.len(), "paired test needs matched samples");
    let n = a.len();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if sd == 0.0 {
        return if mean == 0.0 {
            (0.0, 1.0)
        } else if mean > 0.0 {
            (f64::INFINITY, 0.0)
        } else {
            (f64::NEG_INFINITY, 0.0)
        };
    }
    let t = mean / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("valid dof");
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    (t, p)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: AggregatorKind,
    pub mean: f64,
    pub std: f64,
    pub mean_difference: Option<f64>,
    pub t_statistic: Option<f64>,
    pub p_value: Option<f64>,
    /// Significantly higher than the original aggregator at the 5% level.
    pub significantly_better: Option<bool>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<VariantSummary>,
}

impl Summary {
    /// Fixed-width text table.
    pub fn to_table(&self) -> String {
        let mut out = String::from(
            "variant      mean      std       diff      p-value   significant\n",
        );
        for row in &self.rows {
            let fmt_opt = |v: Option<f64>| match v {
                Some(x) => format!("{x:<9.4}"),
                None => "-        ".to_string(),
            };
            out.push_str(&format!(
                "{:<12} {:<9.4} {:<9.4} {}{}{}\n",
                row.variant.name(),
                row.mean,
                row.std,
                fmt_opt(row.mean_difference),
                fmt_opt(row.p_value),
                match row.significantly_better {
                    Some(true) => "yes",
                    Some(false) => "no",
                    None => "-",
                },
            ));
        }
        out
    }
}

/// Per-variant statistics plus a paired t-test of each variant against the
/// original aggregator over matched `(repeat, fold)` accuracies.
pub fn summarize(results: &[(AggregatorKind, RunResult)]) -> Result<Summary> {
    let baseline = results
        .iter()
        .find(|(v, _)| *v == AggregatorKind::Original)
        .map(|(_, r)| r);
    if let Some(base) = baseline {
        for (variant, r) in results {
            if r.final_accuracies.len() != base.final_accuracies.len() {
                return Err(TrainError::FoldMismatch(format!(
                    "{variant} has {} fold accuracies, original has {}",
                    r.final_accuracies.len(),
                    base.final_accuracies.len()
                )));
            }
        }
    }
    let rows = results
        .iter()
        .map(|(variant, r)| {
            let cmp = match (baseline, variant) {
                (Some(base), v) if *v != AggregatorKind::Original => {
                    let (t, p) = paired_t_test(&r.final_accuracies, &base.final_accuracies);
                    let diff = r.mean - base.mean;
                    Some((diff, t, p, diff > 0.0 && p < 0.05))
                }
                _ => None,
            };
            VariantSummary {
                variant: *variant,
                mean: r.mean,
                std: r.std,
                mean_difference: cmp.map(|c| c.0),
                t_statistic: cmp.map(|c| c.1),
                p_value: cmp.map(|c| c.2),
                significantly_better: cmp.map(|c| c.3),
            }
        })
        .collect();
    Ok(Summary { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    #[test]
    fn lr_schedule_matches_examples() {
        let mut cfg = TrainConfig::node_defaults(AggregatorKind::Original);
        assert_eq!(lr_schedule(0, &cfg), 0.01);
        assert_eq!(lr_schedule(799, &cfg), 0.005);
        cfg = TrainConfig::graph_bio_defaults(AggregatorKind::Original);
        assert_eq!(lr_schedule(50, &cfg), 0.005);
        assert_eq!(lr_schedule(49, &cfg), 0.01);
    }

    #[test]
    fn stratified_folds_balance_classes() {
        let labels: Vec<usize> = (0..50).map(|i| if i < 30 { 0 } else { 1 }).collect();
        let assignment = stratified_folds(&labels, 5, 7).unwrap();
        for fold in 0..5 {
            let class0 = labels
                .iter()
                .zip(&assignment)
                .filter(|(&l, &f)| l == 0 && f == fold)
                .count();
            let class1 = labels
                .iter()
                .zip(&assignment)
                .filter(|(&l, &f)| l == 1 && f == fold)
                .count();
            assert!((class0 as i64 - 6).abs() <= 1, "fold {fold}: {class0}");
            assert!((class1 as i64 - 4).abs() <= 1, "fold {fold}: {class1}");
        }
    }

    #[test]
    fn small_class_fails_stratification() {
        let labels = vec![0, 0, 0, 0, 1];
        let err = stratified_folds(&labels, 3, 0).unwrap_err();
        assert!(matches!(err, TrainError::Stratification { class: 1, .. }));
    }

    /// Two-class dataset with disjoint feature supports; linearly separable
    /// from the layer-0 readout alone.
    fn separable_dataset(per_class: usize) -> Dataset {
        let mut graphs = Vec::new();
        for i in 0..per_class {
            let n = 4 + (i % 3);
            let mut g = crate::graph::make_ring(n, 0).unwrap();
            g.graph_label = Some(0);
            graphs.push(g);
            let mut g = crate::graph::make_ring(n, 1).unwrap();
            g.graph_label = Some(1);
            graphs.push(g);
        }
        Dataset {
            graphs,
            num_feature_categories: 2,
            num_classes: 2,
            task: TaskKind::GraphLevel,
        }
    }

    #[test]
    fn separable_dataset_hits_full_train_accuracy() {
        let ds = separable_dataset(6);
        for variant in [AggregatorKind::Original, AggregatorKind::FScaled] {
            let mut cfg = TrainConfig::graph_bio_defaults(variant);
            cfg.folds = 2;
            cfg.repeats = 1;
            cfg.epochs = 50;
            cfg.hidden = 8;
            cfg.seed = 3;
            let result = run_cv(&ds, &cfg).unwrap();
            let plateau = result.train_plateau(1);
            assert!(
                (plateau - 1.0).abs() < 1e-9,
                "{variant}: final train accuracy {plateau}"
            );
        }
    }

    #[test]
    fn identical_seeds_give_identical_results() {
        let ds = separable_dataset(4);
        let mut cfg = TrainConfig::graph_bio_defaults(AggregatorKind::FAdditive);
        cfg.folds = 2;
        cfg.repeats = 2;
        cfg.epochs = 3;
        cfg.hidden = 4;
        cfg.seed = 11;
        let a = run_cv(&ds, &cfg).unwrap();
        let b = run_cv(&ds, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_task_is_rejected() {
        let ds = separable_dataset(4);
        let cfg = TrainConfig::node_defaults(AggregatorKind::Original);
        assert!(matches!(run_cv(&ds, &cfg), Err(TrainError::Config(_))));
    }

    #[test]
    fn paired_t_matches_frozen_oracle() {
        // Values pinned from an independent implementation.
        let a = [0.82, 0.79, 0.91, 0.85, 0.88, 0.80, 0.86, 0.84];
        let b = [0.78, 0.80, 0.85, 0.80, 0.87, 0.77, 0.82, 0.79];
        let (t, p) = paired_t_test(&a, &b);
        assert!((t - 4.103849919090103).abs() < 1e-9, "t = {t}");
        assert!((p - 0.004550953200599).abs() < 1e-9, "p = {p}");
    }

    #[test]
    fn identical_vectors_give_p_one() {
        let a = [0.8, 0.9, 0.7];
        let (t, p) = paired_t_test(&a, &a);
        assert_eq!(t, 0.0);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn constant_shift_is_significant() {
        // +5pp with 1pp noise over 100 folds.
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        use rand::Rng;
        let b: Vec<f64> = vec![0.80; 100];
        let a: Vec<f64> = b
            .iter()
            .map(|x| x + 0.05 + 0.01 * (rng.gen::<f64>() - 0.5))
            .collect();
        let (t, p) = paired_t_test(&a, &b);
        assert!(t > 10.0);
        assert!(p < 0.05);
    }

    fn fake_result(variant: AggregatorKind, accs: Vec<f64>) -> (AggregatorKind, RunResult) {
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>()
            / (accs.len() - 1) as f64;
        let mut config = TrainConfig::graph_bio_defaults(variant);
        config.folds = accs.len();
        config.repeats = 1;
        (
            variant,
            RunResult {
                config,
                folds: vec![],
                selected_epoch_per_repeat: vec![0],
                std: var.sqrt(),
                mean,
                final_accuracies: accs,
            },
        )
    }

    #[test]
    fn summary_flags_significant_improvements() {
        // Shaped like the paper's bioinformatics table: a variant clearly
        // above the original gets flagged, one statistically tied does not.
        let original: Vec<f64> = (0..10).map(|i| 0.85 + 0.01 * (i % 3) as f64).collect();
        let better: Vec<f64> = original.iter().map(|a| a + 0.05).collect();
        let tied: Vec<f64> = original
            .iter()
            .enumerate()
            .map(|(i, a)| if i % 2 == 0 { a + 0.01 } else { a - 0.01 })
            .collect();
        let results = vec![
            fake_result(AggregatorKind::Original, original),
            fake_result(AggregatorKind::FScaled, better),
            fake_result(AggregatorKind::Additive, tied),
        ];
        let summary = summarize(&results).unwrap();
        assert_eq!(summary.rows[0].significantly_better, None);
        assert_eq!(summary.rows[1].significantly_better, Some(true));
        assert_eq!(summary.rows[2].significantly_better, Some(false));
        let table = summary.to_table();
        assert!(table.contains("f_scaled"));
    }

    #[test]
    fn mismatched_fold_structure_is_an_error() {
        let results = vec![
            fake_result(AggregatorKind::Original, vec![0.8; 10]),
            fake_result(AggregatorKind::FScaled, vec![0.9; 8]),
        ];
        assert!(matches!(
            summarize(&results),
            Err(TrainError::FoldMismatch(_))
        ));
    }

    #[test]
    fn node_task_trains_on_a_small_graph() {
        // Degree-separable node labels on a single graph.
        let mut edges = crate::graph::make_complete(5, 0).unwrap().edges;
        edges.extend(
            crate::graph::make_ring(5, 0)
                .unwrap()
                .edges
                .iter()
                .map(|&(a, b)| (a + 5, b + 5)),
        );
        let labels: Vec<usize> = (0..10).map(|i| usize::from(i >= 5)).collect();
        let g = Graph {
            num_nodes: 10,
            edges,
            node_feature_ids: vec![0; 10],
            node_labels: Some(labels),
            graph_label: None,
        };
        let ds = Dataset {
            graphs: vec![g],
            num_feature_categories: 1,
            num_classes: 2,
            task: TaskKind::NodeLevel,
        };
        let mut cfg = TrainConfig::node_defaults(AggregatorKind::FScaled);
        cfg.folds = 2;
        cfg.repeats = 1;
        cfg.epochs = 300;
        cfg.hidden = 8;
        // Uniform features make the input rank one; leaky units cannot die
        // on tiny hidden widths.
        cfg.activation = Activation::LeakyRelu;
        cfg.seed = 5;
        let result = run_cv(&ds, &cfg).unwrap();
        assert!(
            result.train_plateau(5) > 0.9,
            "plateau {}",
            result.train_plateau(5)
        );
    }
}
