//! Node- and graph-classification models built from attention layers.
//!
//! The node classifier stacks two aggregation layers and a linear read-off
//! over node embeddings. The graph classifier stacks four aggregation
//! layers with batch norm after each one, reads out every iteration
//! (including the raw input encoding) with a sum or mean, concatenates the
//! per-iteration readouts, and classifies with a final dense layer.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregators::{
    aggregate_additive, aggregate_f_additive, aggregate_f_scaled, aggregate_original,
    aggregate_scaled, attention_coefficients, attention_weights, AggError, AggregatorKind,
    AttentionVars, Incidence,
};
use crate::graph::{one_hot_graph, Dataset, Graph};
use crate::nn::{BatchNorm, BatchNormVars, Linear, LinearVars, Mlp, MlpVars};
use crate::tensor::{GradCheckReport, Param, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Aggregation(#[from] AggError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Hidden nonlinearity applied after every aggregation layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    LeakyRelu,
}

impl Activation {
    fn apply(&self, tape: &mut Tape<'_>, v: Var) -> crate::tensor::Result<Var> {
        match self {
            Activation::Relu => tape.relu(v),
            Activation::LeakyRelu => tape.leaky_relu(v, 0.2),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "relu" => Ok(Activation::Relu),
            "leaky_relu" => Ok(Activation::LeakyRelu),
            other => Err(format!("unknown activation '{other}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutMode {
    Sum,
    Mean,
}

impl std::str::FromStr for ReadoutMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sum" => Ok(ReadoutMode::Sum),
            "mean" => Ok(ReadoutMode::Mean),
            other => Err(format!("unknown readout '{other}' (expected sum|mean)")),
        }
    }
}

// ── Attention layer ─────────────────────────────────────────────────────

/// One attention head: feature transform plus attention vector.
#[derive(Clone, Debug)]
pub struct GatHead {
    pub w: Param,
    pub a: Param,
}

/// An aggregation layer: one or more attention heads (outputs concatenated)
/// plus the extra parameters its aggregation rule needs. `additive_w` is
/// kept non-zero at initialisation and `psi` is a two-layer perceptron on
/// the scalar neighborhood cardinality.
#[derive(Clone, Debug)]
pub struct GatLayer {
    pub variant: AggregatorKind,
    pub heads: Vec<GatHead>,
    pub additive_w: Option<Param>,
    pub psi: Option<Mlp>,
    pub leaky_slope: f64,
    out_dim: usize,
}

pub struct GatLayerVars {
    heads: Vec<AttentionVars>,
    additive_w: Option<Var>,
    psi: Option<MlpVars>,
}

impl GatLayer {
    pub fn new(
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        heads: usize,
        variant: AggregatorKind,
        leaky_slope: f64,
    ) -> Self {
        let heads = (0..heads.max(1))
            .map(|h| GatHead {
                w: Param::new(
                    format!("{name}.head{h}.w"),
                    Tensor::glorot(rng, in_dim, out_dim),
                ),
                a: Param::new(
                    format!("{name}.head{h}.a"),
                    Tensor::uniform(rng, &[2 * out_dim], -0.5, 0.5),
                ),
            })
            .collect();
        let additive_w = (variant == AggregatorKind::Additive).then(|| {
            // Away from zero in every component, so the cardinality term
            // never silently vanishes.
            let mut data = Tensor::uniform(rng, &[out_dim], 0.1, 1.0);
            for (i, v) in data.data_mut().iter_mut().enumerate() {
                if i % 2 == 1 {
                    *v = -*v;
                }
            }
            Param::new(format!("{name}.additive_w"), data)
        });
        let psi = (variant == AggregatorKind::Scaled).then(|| {
            let mut mlp = Mlp::new(rng, &format!("{name}.psi"), 1, out_dim, out_dim);
            // Cardinalities are positive, so an all-negative first-layer row
            // would silence psi entirely (and park the layer output on the
            // ReLU kink). Bias the hidden units positive and start the
            // output scale near one.
            mlp.l1.b.value = Tensor::full(&[out_dim], 0.1);
            mlp.l2.b.value = Tensor::full(&[out_dim], 1.0);
            mlp
        });
        GatLayer {
            variant,
            heads,
            additive_w,
            psi,
            leaky_slope,
            out_dim,
        }
    }

    /// Width of the layer output (`out_dim * heads`).
    pub fn out_width(&self) -> usize {
        self.out_dim * self.heads.len()
    }

    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>) -> GatLayerVars {
        GatLayerVars {
            heads: self
                .heads
                .iter()
                .map(|h| AttentionVars {
                    w: tape.param(&h.w),
                    a: tape.param(&h.a),
                })
                .collect(),
            additive_w: self.additive_w.as_ref().map(|p| tape.param(p)),
            psi: self.psi.as_ref().map(|m| m.bind(tape)),
        }
    }

    /// Pre-activation layer output `[n, out_dim * heads]`.
    pub fn forward<'p>(
        &self,
        tape: &mut Tape<'p>,
        vars: &GatLayerVars,
        h: Var,
        inc: &Incidence,
    ) -> Result<Var> {
        let mut head_outputs = Vec::with_capacity(vars.heads.len());
        for head in &vars.heads {
            let (e, wh) = attention_coefficients(tape, h, inc, head, self.leaky_slope)?;
            let alpha = attention_weights(tape, e, inc)?;
            let identity = |_: &mut Tape<'p>, v: Var| -> crate::aggregators::Result<Var> { Ok(v) };
            let out = match self.variant {
                AggregatorKind::Original => aggregate_original(tape, wh, alpha, inc, identity)?,
                AggregatorKind::Additive => {
                    let w = vars.additive_w.expect("additive layer carries w");
                    aggregate_additive(tape, wh, alpha, inc, w, identity)?
                }
                AggregatorKind::Scaled => {
                    let psi_vars = vars.psi.as_ref().expect("scaled layer carries psi");
                    aggregate_scaled(
                        tape,
                        wh,
                        alpha,
                        inc,
                        |t, card| Mlp::forward(t, psi_vars, card).map_err(Into::into),
                        identity,
                    )?
                }
                AggregatorKind::FAdditive => aggregate_f_additive(tape, wh, alpha, inc, identity)?,
                AggregatorKind::FScaled => aggregate_f_scaled(tape, wh, alpha, inc, identity)?,
            };
            head_outputs.push(out);
        }
        if head_outputs.len() == 1 {
            Ok(head_outputs[0])
        } else {
            Ok(tape.concat_last_axis(&head_outputs)?)
        }
    }

    pub fn visit<'a>(&'a self, out: &mut Vec<&'a Param>) {
        for h in &self.heads {
            out.push(&h.w);
            out.push(&h.a);
        }
        if let Some(w) = &self.additive_w {
            out.push(w);
        }
        if let Some(psi) = &self.psi {
            psi.visit(out);
        }
    }

    pub fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        for h in &mut self.heads {
            out.push(&mut h.w);
            out.push(&mut h.a);
        }
        if let Some(w) = &mut self.additive_w {
            out.push(w);
        }
        if let Some(psi) = &mut self.psi {
            psi.visit_mut(out);
        }
    }
}

// ── Graph batching ──────────────────────────────────────────────────────

/// Disjoint union of a subset of a dataset's graphs: one-hot features, the
/// union incidence, and node -> batch-graph segment ids.
pub struct GraphBatch {
    pub features: Tensor,
    pub incidence: Incidence,
    pub node_graph_ids: Vec<usize>,
    pub node_counts: Vec<usize>,
    pub labels: Vec<usize>,
    pub num_graphs: usize,
}

impl GraphBatch {
    pub fn new(dataset: &Dataset, indices: &[usize]) -> GraphBatch {
        let graphs: Vec<&Graph> = indices.iter().map(|&i| &dataset.graphs[i]).collect();
        Self::from_graphs(&graphs, dataset.num_feature_categories)
    }

    pub fn from_graphs(graphs: &[&Graph], num_feature_categories: usize) -> GraphBatch {
        let total_nodes: usize = graphs.iter().map(|g| g.num_nodes).sum();
        let mut data = Vec::with_capacity(total_nodes * num_feature_categories);
        let mut node_graph_ids = Vec::with_capacity(total_nodes);
        let mut node_counts = Vec::with_capacity(graphs.len());
        let mut labels = Vec::with_capacity(graphs.len());
        for (bi, g) in graphs.iter().enumerate() {
            data.extend_from_slice(one_hot_graph(g, num_feature_categories).data());
            node_graph_ids.extend(std::iter::repeat(bi).take(g.num_nodes));
            node_counts.push(g.num_nodes);
            if let Some(l) = g.graph_label {
                labels.push(l);
            }
        }
        GraphBatch {
            features: Tensor::new(vec![total_nodes, num_feature_categories], data)
                .expect("batch features"),
            incidence: Incidence::from_graphs(graphs),
            node_graph_ids,
            node_counts,
            labels,
            num_graphs: graphs.len(),
        }
    }
}

/// Readout per layer (sum or mean over each graph's nodes), concatenated in
/// layer order.
pub fn readout_concat(
    tape: &mut Tape<'_>,
    per_layer_embeddings: &[Var],
    batch: &GraphBatch,
    mode: ReadoutMode,
) -> Result<Var> {
    let mut readouts = Vec::with_capacity(per_layer_embeddings.len());
    let inv_counts = Tensor::new(
        vec![batch.num_graphs, 1],
        batch.node_counts.iter().map(|&n| 1.0 / n as f64).collect(),
    )
    .expect("inverse counts");
    for &emb in per_layer_embeddings {
        let summed = tape.segment_sum(emb, &batch.node_graph_ids)?;
        let r = match mode {
            ReadoutMode::Sum => summed,
            ReadoutMode::Mean => {
                let inv = tape.constant(inv_counts.clone());
                tape.mul(summed, inv)?
            }
        };
        readouts.push(r);
    }
    Ok(tape.concat_last_axis(&readouts)?)
}

// ── Node classifier ─────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct NodeModelConfig {
    pub in_dim: usize,
    pub hidden: usize,
    pub num_classes: usize,
    pub num_layers: usize,
    pub heads: usize,
    pub variant: AggregatorKind,
    pub leaky_slope: f64,
    pub dropout: f64,
    pub activation: Activation,
}

impl NodeModelConfig {
    pub fn new(in_dim: usize, num_classes: usize, variant: AggregatorKind) -> Self {
        NodeModelConfig {
            in_dim,
            hidden: 32,
            num_classes,
            num_layers: 2,
            heads: 1,
            variant,
            leaky_slope: 0.2,
            dropout: 0.0,
            activation: Activation::Relu,
        }
    }
}

/// Stacked aggregation layers plus a per-node linear classifier.
#[derive(Clone, Debug)]
pub struct GatNodeModel {
    pub layers: Vec<GatLayer>,
    pub classifier: Linear,
    pub activation: Activation,
    pub dropout: f64,
}

pub struct NodeModelVars {
    layers: Vec<GatLayerVars>,
    classifier: LinearVars,
}

impl GatNodeModel {
    pub fn new(rng: &mut ChaCha8Rng, cfg: &NodeModelConfig) -> Self {
        let mut layers = Vec::with_capacity(cfg.num_layers);
        let mut width = cfg.in_dim;
        for l in 0..cfg.num_layers {
            let layer = GatLayer::new(
                rng,
                &format!("layer{l}"),
                width,
                cfg.hidden,
                cfg.heads,
                cfg.variant,
                cfg.leaky_slope,
            );
            width = layer.out_width();
            layers.push(layer);
        }
        let classifier = Linear::new(rng, "classifier", width, cfg.num_classes);
        GatNodeModel {
            layers,
            classifier,
            activation: cfg.activation,
            dropout: cfg.dropout,
        }
    }

    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>) -> NodeModelVars {
        NodeModelVars {
            layers: self.layers.iter().map(|l| l.bind(tape)).collect(),
            classifier: self.classifier.bind(tape),
        }
    }

    /// Per-node class logits `[n, num_classes]`.
    pub fn forward<'p>(
        &self,
        tape: &mut Tape<'p>,
        vars: &NodeModelVars,
        features: &Tensor,
        inc: &Incidence,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let mut h = tape.constant(features.clone());
        for (layer, lvars) in self.layers.iter().zip(&vars.layers) {
            let pre = layer.forward(tape, lvars, h, inc)?;
            h = self.activation.apply(tape, pre)?;
            if train && self.dropout > 0.0 {
                h = tape.dropout(h, self.dropout, rng)?;
            }
        }
        Ok(Linear::forward(tape, &vars.classifier, h)?)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for l in &self.layers {
            l.visit(&mut out);
        }
        self.classifier.visit(&mut out);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            l.visit_mut(&mut out);
        }
        self.classifier.visit_mut(&mut out);
        out
    }
}

// ── Graph classifier ────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct GcModelConfig {
    pub in_dim: usize,
    pub hidden: usize,
    pub num_classes: usize,
    pub num_layers: usize,
    pub heads: usize,
    pub variant: AggregatorKind,
    pub readout: ReadoutMode,
    pub leaky_slope: f64,
    pub dropout: f64,
    pub activation: Activation,
}

impl GcModelConfig {
    pub fn new(
        in_dim: usize,
        num_classes: usize,
        variant: AggregatorKind,
        readout: ReadoutMode,
    ) -> Self {
        GcModelConfig {
            in_dim,
            hidden: 32,
            num_classes,
            num_layers: 4,
            heads: 1,
            variant,
            readout,
            leaky_slope: 0.2,
            dropout: 0.0,
            activation: Activation::Relu,
        }
    }
}

/// Aggregation layers with batch norm, per-iteration readouts concatenated
/// (iteration 0 reads out the raw encoding), and a final dense classifier
/// with optional dropout.
#[derive(Clone, Debug)]
pub struct GatGcModel {
    pub layers: Vec<GatLayer>,
    pub norms: Vec<BatchNorm>,
    pub readout: ReadoutMode,
    pub classifier: Linear,
    pub activation: Activation,
    pub dropout: f64,
    in_dim: usize,
}

pub struct GcModelVars {
    layers: Vec<GatLayerVars>,
    norms: Vec<BatchNormVars>,
    classifier: LinearVars,
}

impl GatGcModel {
    pub fn new(rng: &mut ChaCha8Rng, cfg: &GcModelConfig) -> Self {
        let mut layers = Vec::with_capacity(cfg.num_layers);
        let mut norms = Vec::with_capacity(cfg.num_layers);
        let mut width = cfg.in_dim;
        let mut embedding_dim = cfg.in_dim;
        for l in 0..cfg.num_layers {
            let layer = GatLayer::new(
                rng,
                &format!("layer{l}"),
                width,
                cfg.hidden,
                cfg.heads,
                cfg.variant,
                cfg.leaky_slope,
            );
            width = layer.out_width();
            embedding_dim += width;
            norms.push(BatchNorm::new(&format!("norm{l}"), width));
            layers.push(layer);
        }
        let classifier = Linear::new(rng, "classifier", embedding_dim, cfg.num_classes);
        GatGcModel {
            layers,
            norms,
            readout: cfg.readout,
            classifier,
            activation: cfg.activation,
            dropout: cfg.dropout,
            in_dim: cfg.in_dim,
        }
    }

    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>) -> GcModelVars {
        GcModelVars {
            layers: self.layers.iter().map(|l| l.bind(tape)).collect(),
            norms: self.norms.iter().map(|n| n.bind(tape)).collect(),
            classifier: self.classifier.bind(tape),
        }
    }

    /// Concatenated multi-iteration graph embedding `[g, embedding_dim]`.
    pub fn forward_embedding<'p>(
        &self,
        tape: &mut Tape<'p>,
        vars: &GcModelVars,
        batch: &GraphBatch,
        train: bool,
    ) -> Result<Var> {
        if batch.features.shape()[1] != self.in_dim {
            return Err(ModelError::Dimension(format!(
                "batch encodes {} feature categories, model expects {}",
                batch.features.shape()[1],
                self.in_dim
            )));
        }
        let mut h = tape.constant(batch.features.clone());
        let mut per_layer = vec![h];
        for ((layer, lvars), (norm, nvars)) in self
            .layers
            .iter()
            .zip(&vars.layers)
            .zip(self.norms.iter().zip(&vars.norms))
        {
            let pre = layer.forward(tape, lvars, h, &batch.incidence)?;
            let act = self.activation.apply(tape, pre)?;
            h = norm.forward(tape, nvars, act, train)?;
            per_layer.push(h);
        }
        readout_concat(tape, &per_layer, batch, self.readout)
    }

    /// Per-graph class logits `[g, num_classes]`.
    pub fn forward<'p>(
        &self,
        tape: &mut Tape<'p>,
        vars: &GcModelVars,
        batch: &GraphBatch,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let embedding = self.forward_embedding(tape, vars, batch, train)?;
        let mut logits = Linear::forward(tape, &vars.classifier, embedding)?;
        if train && self.dropout > 0.0 {
            logits = tape.dropout(logits, self.dropout, rng)?;
        }
        Ok(logits)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for l in &self.layers {
            l.visit(&mut out);
        }
        for n in &self.norms {
            n.visit(&mut out);
        }
        self.classifier.visit(&mut out);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            l.visit_mut(&mut out);
        }
        for n in &mut self.norms {
            n.visit_mut(&mut out);
        }
        self.classifier.visit_mut(&mut out);
        out
    }
}

// ── Checkpoints ─────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct CheckpointEntry {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Dump parameters as a JSON list of named, shaped buffers.
pub fn save_checkpoint(params: &[&Param], path: &Path) -> Result<()> {
    let entries: Vec<CheckpointEntry> = params
        .iter()
        .map(|p| CheckpointEntry {
            name: p.name().to_string(),
            shape: p.value.shape().to_vec(),
            data: p.value.data().to_vec(),
        })
        .collect();
    let json = serde_json::to_string_pretty(&entries)
        .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    std::fs::write(path, json).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Restore parameters by name; every checkpoint entry must match an
/// existing parameter's name and shape.
pub fn load_checkpoint(params: &mut [&mut Param], path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let entries: Vec<CheckpointEntry> =
        serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    if entries.len() != params.len() {
        return Err(ModelError::Checkpoint(format!(
            "checkpoint holds {} entries, model has {} parameters",
            entries.len(),
            params.len()
        )));
    }
    for entry in entries {
        let param = params
            .iter_mut()
            .find(|p| p.name() == entry.name)
            .ok_or_else(|| ModelError::Checkpoint(format!("no parameter named '{}'", entry.name)))?;
        if param.value.shape() != entry.shape.as_slice() {
            return Err(ModelError::Checkpoint(format!(
                "parameter '{}' has shape {:?}, checkpoint holds {:?}",
                entry.name,
                param.value.shape(),
                entry.shape
            )));
        }
        param.value = Tensor::new(entry.shape, entry.data)
            .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    }
    Ok(())
}

// ── Finite-difference checks over whole models ──────────────────────────

/// Random connected test graph for gradient checks.
pub fn random_test_graph(seed: u64, num_nodes: usize, num_features: usize) -> Graph {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 1..num_nodes {
        // spanning chain keeps the graph connected
        edges.push((i - 1, i));
    }
    for i in 0..num_nodes {
        for j in (i + 2)..num_nodes {
            if rng.gen::<f64>() < 0.4 {
                edges.push((i, j));
            }
        }
    }
    let node_feature_ids = (0..num_nodes)
        .map(|_| rng.gen_range(0..num_features))
        .collect();
    Graph {
        num_nodes,
        edges,
        node_feature_ids,
        node_labels: None,
        graph_label: Some(0),
    }
}

fn fd_compare(
    analytic: &[Tensor],
    mut eval_shifted: impl FnMut(usize, usize, f64) -> Result<f64>,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    use crate::tensor::gradcheck::relative_deviation;
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for (pi, grad) in analytic.iter().enumerate() {
        for i in 0..grad.numel() {
            let up = eval_shifted(pi, i, step)?;
            let down = eval_shifted(pi, i, -step)?;
            let fd = (up - down) / (2.0 * step);
            let ad = grad.data()[i];
            max_rel = max_rel.max(relative_deviation(ad, fd));
            max_abs = max_abs.max((ad - fd).abs());
        }
    }
    Ok(GradCheckReport {
        max_rel_deviation: max_rel,
        max_abs_deviation: max_abs,
        tolerance: tol,
        passed: max_rel < tol,
    })
}

/// Finite-difference check of a full node model (all parameters) on a small
/// random graph.
pub fn gradcheck_node_model(
    seed: u64,
    variant: AggregatorKind,
    num_nodes: usize,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let num_features = 3;
    let graph = random_test_graph(seed, num_nodes, num_features);
    let labels: Vec<usize> = (0..num_nodes).map(|i| i % 2).collect();
    let features = one_hot_graph(&graph, num_features);
    let inc = Incidence::from_graph(&graph);
    let mut cfg = NodeModelConfig::new(num_features, 2, variant);
    cfg.hidden = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let mut model = GatNodeModel::new(&mut rng, &cfg);

    let loss = |m: &GatNodeModel| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let logits = m.forward(&mut tape, &vars, &features, &inc, false, &mut rng)?;
        let l = tape.cross_entropy(logits, &labels)?;
        let item = tape.value(l).item();
        for p in m.params() {
            p.zero_grad();
        }
        Ok(item)
    };

    let analytic: Vec<Tensor> = {
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let mut fwd_rng = ChaCha8Rng::seed_from_u64(0);
        let logits = model.forward(&mut tape, &vars, &features, &inc, false, &mut fwd_rng)?;
        let l = tape.cross_entropy(logits, &labels)?;
        tape.backward(l)?;
        let grads = model
            .params()
            .iter()
            .map(|p| p.grad().unwrap_or_else(|| Tensor::zeros(p.value.shape())))
            .collect();
        for p in model.params() {
            p.zero_grad();
        }
        grads
    };

    fd_compare(
        &analytic,
        |pi, i, delta| {
            model.params_mut()[pi].value.data_mut()[i] += delta;
            let v = loss(&model);
            model.params_mut()[pi].value.data_mut()[i] -= delta;
            v
        },
        step,
        tol,
    )
}

/// Finite-difference check of a full graph classifier on a two-graph batch.
pub fn gradcheck_gc_model(
    seed: u64,
    variant: AggregatorKind,
    num_nodes: usize,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let num_features = 3;
    let g1 = random_test_graph(seed, num_nodes, num_features);
    let g2 = random_test_graph(seed ^ 0xff, num_nodes.max(4) - 1, num_features);
    let batch = GraphBatch::from_graphs(&[&g1, &g2], num_features);
    let labels = vec![0usize, 1usize];
    let mut cfg = GcModelConfig::new(num_features, 2, variant, ReadoutMode::Mean);
    cfg.hidden = 4;
    cfg.num_layers = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51f1);
    let mut model = GatGcModel::new(&mut rng, &cfg);

    let loss = |m: &GatGcModel| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let logits = m.forward(&mut tape, &vars, &batch, true, &mut rng)?;
        let l = tape.cross_entropy(logits, &labels)?;
        let item = tape.value(l).item();
        for p in m.params() {
            p.zero_grad();
        }
        Ok(item)
    };

    let analytic: Vec<Tensor> = {
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let mut fwd_rng = ChaCha8Rng::seed_from_u64(0);
        let logits = model.forward(&mut tape, &vars, &batch, true, &mut fwd_rng)?;
        let l = tape.cross_entropy(logits, &labels)?;
        tape.backward(l)?;
        let grads = model
            .params()
            .iter()
            .map(|p| p.grad().unwrap_or_else(|| Tensor::zeros(p.value.shape())))
            .collect();
        for p in model.params() {
            p.zero_grad();
        }
        grads
    };

    fd_compare(
        &analytic,
        |pi, i, delta| {
            model.params_mut()[pi].value.data_mut()[i] += delta;
            let v = loss(&model);
            model.params_mut()[pi].value.data_mut()[i] -= delta;
            v
        },
        step,
        tol,
    )
}
