use rand::Rng;

use crate::numerics::{glorot_uniform, Graph, NumericsError, ParameterStore, Tensor, Var};

pub struct AttentionOutput {
    /// `G × L × d`, after the residual connection and layer normalization.
    pub output: Var,
    /// One `G × L × L` row-stochastic map per head.
    pub maps: Vec<Var>,
}

pub(crate) fn init_params(p: &mut ParameterStore, prefix: &str, dim: usize, heads: usize, rng: &mut impl Rng) {
    for k in 0..heads {
        p.insert(format!("{prefix}.attn.w{k}"), glorot_uniform(&[dim, dim], dim, dim, rng));
    }
    p.insert(format!("{prefix}.attn.a"), Tensor::zeros(&[heads]));
    p.insert(format!("{prefix}.ln.gamma"), Tensor::ones(&[dim]));
    p.insert(format!("{prefix}.ln.beta"), Tensor::zeros(&[dim]));
}

/// Multi-head attention over `nodes` (`G × L × d`, `G` independent groups).
///
/// Per head `k`: scores `M_ij = z_iᵀ W_k z_j`, map `A_k = softmax_j(M)`.
/// Heads are mixed with `α = softmax(mix)`, values are the encodings
/// themselves, and the result is `LN(z + ReLU(Σ_k α_k A_k z))`.
pub fn multi_head_attention(
    g: &mut Graph,
    nodes: Var,
    alignments: &[Var],
    mix: Var,
    gamma: Var,
    beta: Var,
    eps: f64,
) -> Result<AttentionOutput, NumericsError> {
    let shape = g.shape(nodes).to_vec();
    let [groups, len, dim] = shape[..] else {
        return Err(NumericsError::Shape {
            node: "attention.nodes".into(),
            detail: format!("expected G × L × d, got {shape:?}"),
        });
    };
    if g.shape(mix) != [alignments.len()] {
        return Err(NumericsError::Shape {
            node: "attention.mix".into(),
            detail: format!("{} heads but mixing logits {:?}", alignments.len(), g.shape(mix)),
        });
    }
    let flat = g.reshape(nodes, &[groups * len, dim])?;
    let mut maps = Vec::with_capacity(alignments.len());
    let mut rows = Vec::with_capacity(alignments.len());
    for &w in alignments {
        let projected = g.matmul(flat, w)?;
        let projected = g.reshape(projected, &[groups, len, dim])?;
        let scores = g.batch_matmul(projected, nodes, false, true)?;
        let map = g.softmax(scores, 2)?;
        rows.push(g.reshape(map, &[1, groups * len * len])?);
        maps.push(map);
    }
    let alpha = g.softmax(mix, 0)?;
    let alpha = g.reshape(alpha, &[1, alignments.len()])?;
    let stacked = g.concat(&rows)?;
    let mixed = g.matmul(alpha, stacked)?;
    let mixed = g.reshape(mixed, &[groups, len, len])?;
    let attended = g.batch_matmul(mixed, nodes, false, false)?;
    let attended = g.relu(attended);
    let residual = g.add(nodes, attended)?;
    let output = g.layer_norm(residual, gamma, beta, eps)?;
    Ok(AttentionOutput { output, maps })
}
