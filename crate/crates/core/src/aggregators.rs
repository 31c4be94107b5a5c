//! Attention scoring and the five neighborhood aggregation rules.
//!
//! Attention follows the GAT form: per incidence entry `(j -> i)` the
//! coefficient is `e_ij = LeakyReLU(a^T [W h_i || W h_j])`, normalised to
//! weights by a softmax over each closed neighborhood. The aggregation rules
//! differ only in how the weighted sum treats neighborhood cardinality:
//!
//! - original:   `f(sum_j alpha_ij v_j)`
//! - additive:   `f(sum_j alpha_ij v_j + w ⊙ sum_j v_j)`
//! - scaled:     `f(psi(|Ñ(i)|) ⊙ sum_j alpha_ij v_j)`
//! - f-additive: `f(sum_j (alpha_ij + 1) v_j)`
//! - f-scaled:   `f(|Ñ(i)| · sum_j alpha_ij v_j)`
//!
//! None of the rules touches the attention computation itself, so attention
//! weights are bit-identical across variants on identical inputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Graph;
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum AggError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("node {node} has no self entry in its neighborhood")]
    MissingSelfEdge { node: usize },
    #[error("invalid incidence: {0}")]
    Incidence(String),
}

pub type Result<T> = std::result::Result<T, AggError>;

/// Which aggregation rule a layer applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    Original,
    Additive,
    Scaled,
    FAdditive,
    FScaled,
}

impl AggregatorKind {
    pub const ALL: [AggregatorKind; 5] = [
        AggregatorKind::Original,
        AggregatorKind::Additive,
        AggregatorKind::Scaled,
        AggregatorKind::FAdditive,
        AggregatorKind::FScaled,
    ];

    /// The four cardinality-preserving rules.
    pub const CPA: [AggregatorKind; 4] = [
        AggregatorKind::Additive,
        AggregatorKind::Scaled,
        AggregatorKind::FAdditive,
        AggregatorKind::FScaled,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AggregatorKind::Original => "original",
            AggregatorKind::Additive => "additive",
            AggregatorKind::Scaled => "scaled",
            AggregatorKind::FAdditive => "f_additive",
            AggregatorKind::FScaled => "f_scaled",
        }
    }
}

impl std::fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AggregatorKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "original" => Ok(AggregatorKind::Original),
            "additive" => Ok(AggregatorKind::Additive),
            "scaled" => Ok(AggregatorKind::Scaled),
            "f_additive" | "f-additive" => Ok(AggregatorKind::FAdditive),
            "f_scaled" | "f-scaled" => Ok(AggregatorKind::FScaled),
            other => Err(format!(
                "unknown aggregator '{other}' (expected original|additive|scaled|f_additive|f_scaled)"
            )),
        }
    }
}

/// Closed-neighborhood incidence list in segment form: entry `t` carries a
/// message from `src[t]` to `dst[t]`, entries are grouped by destination in
/// ascending order, and every node's own entry `(i, i)` is present.
#[derive(Clone, Debug, PartialEq)]
pub struct Incidence {
    src: Vec<usize>,
    dst: Vec<usize>,
    seg_counts: Vec<usize>,
    num_nodes: usize,
}

impl Incidence {
    pub fn from_graph(graph: &Graph) -> Self {
        Self::from_graphs(&[graph])
    }

    /// Disjoint union of several graphs with node ids offset in order.
    pub fn from_graphs(graphs: &[&Graph]) -> Self {
        let num_nodes: usize = graphs.iter().map(|g| g.num_nodes).sum();
        let mut src = Vec::new();
        let mut dst = Vec::new();
        let mut seg_counts = Vec::with_capacity(num_nodes);
        let mut offset = 0usize;
        for g in graphs {
            let adjacency = g.adjacency();
            for (node, neighbors) in adjacency.iter().enumerate() {
                // Closed neighborhood in ascending node order.
                let mut members: Vec<usize> = Vec::with_capacity(neighbors.len() + 1);
                let mut self_inserted = false;
                for &j in neighbors {
                    if !self_inserted && j > node {
                        members.push(node);
                        self_inserted = true;
                    }
                    members.push(j);
                }
                if !self_inserted {
                    members.push(node);
                }
                seg_counts.push(members.len());
                for j in members {
                    src.push(j + offset);
                    dst.push(node + offset);
                }
            }
            offset += g.num_nodes;
        }
        Incidence {
            src,
            dst,
            seg_counts,
            num_nodes,
        }
    }

    /// Build from raw entry lists, validating the segment layout (self
    /// entries are checked by `attention_coefficients`, not here).
    pub fn from_parts(src: Vec<usize>, dst: Vec<usize>, num_nodes: usize) -> Result<Self> {
        if src.len() != dst.len() {
            return Err(AggError::Incidence(format!(
                "{} sources for {} destinations",
                src.len(),
                dst.len()
            )));
        }
        let mut seg_counts = vec![0usize; num_nodes];
        let mut prev = 0usize;
        for (t, &d) in dst.iter().enumerate() {
            if d >= num_nodes || src[t] >= num_nodes {
                return Err(AggError::Incidence(format!(
                    "entry {t} references a node out of range"
                )));
            }
            if d < prev {
                return Err(AggError::Incidence(format!(
                    "destinations not sorted at entry {t}"
                )));
            }
            prev = d;
            seg_counts[d] += 1;
        }
        if let Some(node) = seg_counts.iter().position(|&c| c == 0) {
            return Err(AggError::Incidence(format!(
                "node {node} has an empty neighborhood segment"
            )));
        }
        Ok(Incidence {
            src,
            dst,
            seg_counts,
            num_nodes,
        })
    }

    pub fn src(&self) -> &[usize] {
        &self.src
    }

    pub fn dst(&self) -> &[usize] {
        &self.dst
    }

    pub fn seg_counts(&self) -> &[usize] {
        &self.seg_counts
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_entries(&self) -> usize {
        self.src.len()
    }

    fn self_edge_check(&self) -> Result<()> {
        let mut seen = vec![false; self.num_nodes];
        for (&s, &d) in self.src.iter().zip(&self.dst) {
            if s == d {
                seen[d] = true;
            }
        }
        match seen.iter().position(|&ok| !ok) {
            Some(node) => Err(AggError::MissingSelfEdge { node }),
            None => Ok(()),
        }
    }

    /// `|Ñ(i)|` per node as an `[n, 1]` column.
    pub fn cardinality_column(&self) -> Tensor {
        Tensor::new(
            vec![self.num_nodes, 1],
            self.seg_counts.iter().map(|&c| c as f64).collect(),
        )
        .expect("cardinality shape")
    }
}

/// Tape handles for one attention head: `w` is `in_dim x out_dim`, `a` the
/// attention vector of length `2 * out_dim`.
#[derive(Copy, Clone, Debug)]
pub struct AttentionVars {
    pub w: Var,
    pub a: Var,
}

/// Per-entry attention coefficients `e = LeakyReLU(a^T [W h_i || W h_j])`,
/// plus the transformed features `W h` that the weighted sum aggregates.
/// The coefficient of an entry depends only on the two endpoint features,
/// never on the rest of the neighborhood.
pub fn attention_coefficients(
    tape: &mut Tape<'_>,
    h: Var,
    inc: &Incidence,
    vars: &AttentionVars,
    leaky_slope: f64,
) -> Result<(Var, Var)> {
    inc.self_edge_check()?;
    let wh = tape.matmul(h, vars.w)?;
    let out_dim = tape.value(wh).shape()[1];
    // a^T [u || v] = a_dst . u + a_src . v, avoiding the E x 2d concat.
    let a_dst = tape.narrow(vars.a, 0, out_dim)?;
    let a_dst = tape.reshape(a_dst, &[out_dim, 1])?;
    let a_src = tape.narrow(vars.a, out_dim, out_dim)?;
    let a_src = tape.reshape(a_src, &[out_dim, 1])?;
    let score_dst = tape.matmul(wh, a_dst)?;
    let score_src = tape.matmul(wh, a_src)?;
    let per_entry_dst = tape.gather_rows(score_dst, inc.dst())?;
    let per_entry_src = tape.gather_rows(score_src, inc.src())?;
    let raw = tape.add(per_entry_dst, per_entry_src)?;
    let raw = tape.reshape(raw, &[inc.num_entries()])?;
    let e = tape.leaky_relu(raw, leaky_slope)?;
    Ok((e, wh))
}

/// Softmax of coefficients within each closed neighborhood.
pub fn attention_weights(tape: &mut Tape<'_>, e: Var, inc: &Incidence) -> Result<Var> {
    Ok(tape.segment_softmax(e, inc.dst())?)
}

fn weighted_sum(tape: &mut Tape<'_>, values: Var, alpha: Var, inc: &Incidence) -> Result<Var> {
    let gathered = tape.gather_rows(values, inc.src())?;
    let alpha_col = tape.reshape(alpha, &[inc.num_entries(), 1])?;
    let weighted = tape.mul(gathered, alpha_col)?;
    Ok(tape.segment_sum(weighted, inc.dst())?)
}

fn plain_sum(tape: &mut Tape<'_>, values: Var, inc: &Incidence) -> Result<Var> {
    let gathered = tape.gather_rows(values, inc.src())?;
    Ok(tape.segment_sum(gathered, inc.dst())?)
}

/// `h'_i = f(sum_j alpha_ij v_j)` — the plain attention-weighted sum.
pub fn aggregate_original<'p, F>(
    tape: &mut Tape<'p>,
    values: Var,
    alpha: Var,
    inc: &Incidence,
    f: F,
) -> Result<Var>
where
    F: FnOnce(&mut Tape<'p>, Var) -> Result<Var>,
{
    let summed = weighted_sum(tape, values, alpha, inc)?;
    f(tape, summed)
}

/// `h'_i = f(sum_j alpha_ij v_j + w ⊙ sum_j v_j)` with a non-zero vector `w`.
pub fn aggregate_additive<'p, F>(
    tape: &mut Tape<'p>,
    values: Var,
    alpha: Var,
    inc: &Incidence,
    w: Var,
    f: F,
) -> Result<Var>
where
    F: FnOnce(&mut Tape<'p>, Var) -> Result<Var>,
{
    let summed = weighted_sum(tape, values, alpha, inc)?;
    let totals = plain_sum(tape, values, inc)?;
    let scaled = tape.mul(totals, w)?;
    let out = tape.add(summed, scaled)?;
    f(tape, out)
}

/// `h'_i = f(psi(|Ñ(i)|) ⊙ sum_j alpha_ij v_j)`; `psi` maps the `[n, 1]`
/// cardinality column to per-node scaling vectors.
pub fn aggregate_scaled<'p, F, P>(
    tape: &mut Tape<'p>,
    values: Var,
    alpha: Var,
    inc: &Incidence,
    psi: P,
    f: F,
) -> Result<Var>
where
    F: FnOnce(&mut Tape<'p>, Var) -> Result<Var>,
    P: FnOnce(&mut Tape<'p>, Var) -> Result<Var>,
{
    let summed = weighted_sum(tape, values, alpha, inc)?;
    let card = tape.constant(inc.cardinality_column());
    let scale = psi(tape, card)?;
    let out = tape.mul(summed, scale)?;
    f(tape, out)
}

/// `h'_i = f(sum_j (alpha_ij + 1) v_j)` — additive with `w` fixed to ones.
pub fn aggregate_f_additive<'p, F>(
    tape: &mut Tape<'p>,
    values: Var,
    alpha: Var,
    inc: &Incidence,
    f: F,
) -> Result<Var>
where
    F: FnOnce(&mut Tape<'p>, Var) -> Result<Var>,
{
    let summed = weighted_sum(tape, values, alpha, inc)?;
    let totals = plain_sum(tape, values, inc)?;
    let out = tape.add(summed, totals)?;
    f(tape, out)
}

/// `h'_i = f(|Ñ(i)| · sum_j alpha_ij v_j)` — scaled with `psi` fixed to the
/// identity on the cardinality.
pub fn aggregate_f_scaled<'p, F>(
    tape: &mut Tape<'p>,
    values: Var,
    alpha: Var,
    inc: &Incidence,
    f: F,
) -> Result<Var>
where
    F: FnOnce(&mut Tape<'p>, Var) -> Result<Var>,
{
    let summed = weighted_sum(tape, values, alpha, inc)?;
    let card = tape.constant(inc.cardinality_column());
    let out = tape.mul(summed, card)?;
    f(tape, out)
}
