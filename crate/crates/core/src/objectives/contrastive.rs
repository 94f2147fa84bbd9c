//! Soft-target contrastive losses over one block of a duplicated batch.
//!
//! Every loss here has the form `−Σ_i Σ_{j∈C(i)} w_ij · log softmax_{C(i)}(s_ij)`
//! with `s_ij = σ(z_i)·σ(z_j)/τ`. The variants differ only in the weights
//! `w` and in which projection head produces σ.

use crate::error::{Error, Result};
use crate::similarity::{anchor_weights, ViewScoreMatrix};
use crate::sts::{ViewId, VIEW_COUNT};
use crate::tensor::{Graph, ParamStore, Var};

use super::heads::{Head, ProjectionHeads};
use super::{LossConfig, NegativeScope};

/// Entries of one sub-batch in duplicate layout: position `p < len/2` holds
/// an original and `p + len/2` its dropout duplicate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    entries: Vec<usize>,
}

impl Block {
    pub fn new(entries: Vec<usize>) -> Result<Self> {
        if !entries.len().is_multiple_of(2) {
            return Err(Error::Batch(format!("block of odd length {}", entries.len())));
        }
        Ok(Block { entries })
    }

    /// The whole batch `0..rows` as one block.
    pub fn full(rows: usize) -> Result<Self> {
        Self::new((0..rows).collect())
    }

    pub fn entries(&self) -> &[usize] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Position of the duplicate of position `p`.
    pub fn dup(&self, p: usize) -> usize {
        let half = self.entries.len() / 2;
        if p < half {
            p + half
        } else {
            p - half
        }
    }
}

/// Where the softmax of each anchor draws its candidates from.
struct Universe {
    rows: Vec<usize>,
    /// Universe position of each block position.
    of_block: Vec<usize>,
}

impl Universe {
    fn new(block: &Block, batch_rows: usize, scope: NegativeScope) -> Result<Self> {
        if let Some(&bad) = block.entries.iter().find(|&&e| e >= batch_rows) {
            return Err(Error::Batch(format!("block entry {bad} outside a batch of {batch_rows}")));
        }
        Ok(match scope {
            NegativeScope::Block => Universe {
                rows: block.entries.clone(),
                of_block: (0..block.len()).collect(),
            },
            NegativeScope::FullBatch => Universe {
                rows: (0..batch_rows).collect(),
                of_block: block.entries.clone(),
            },
        })
    }

    fn len(&self) -> usize {
        self.rows.len()
    }

    /// Anchor rows are the block; every other universe row gets an
    /// all-false mask row and contributes nothing.
    fn mask(&self) -> Vec<bool> {
        let u = self.len();
        let mut mask = vec![false; u * u];
        for &a in &self.of_block {
            for c in 0..u {
                mask[a * u + c] = c != a;
            }
        }
        mask
    }
}

fn check_temperature(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

/// `−Σ w ⊙ log softmax` for one head over the universe.
#[allow(clippy::too_many_arguments)]
fn weighted_info_nce(
    g: &mut Graph,
    store: &ParamStore,
    heads: &ProjectionHeads,
    head: Head,
    z_universe: Var,
    universe: &Universe,
    weights: Vec<f64>,
    tau: f64,
) -> Result<Var> {
    let p = heads.project(g, store, head, z_universe)?;
    let sim = g.matmul_t(p, p)?;
    let logits = g.scale(sim, 1.0 / tau);
    let log_probs = g.log_softmax(logits, Some(universe.mask()))?;
    let neg: Vec<f64> = weights.into_iter().map(|w| -w).collect();
    Ok(g.weighted_sum(log_probs, neg)?)
}

fn universe_rows(g: &mut Graph, z: Var, universe: &Universe, batch_rows: usize) -> Result<Var> {
    if universe.rows.len() == batch_rows && universe.rows.iter().enumerate().all(|(i, &r)| i == r) {
        return Ok(z);
    }
    Ok(g.select_rows(z, &universe.rows)?)
}

fn normalized(g: &mut Graph, raw: Var, count: usize, cfg: &LossConfig) -> Var {
    if cfg.paper_literal || count == 0 {
        raw
    } else {
        g.scale(raw, 1.0 / count as f64)
    }
}

struct Prepared {
    universe: Universe,
    z_u: Var,
}

fn prepare(g: &mut Graph, z: Var, block: &Block, cfg: &LossConfig) -> Result<Option<Prepared>> {
    check_temperature(cfg.temperature)?;
    if block.is_empty() {
        return Ok(None);
    }
    let batch_rows = g.shape(z)[0];
    let universe = Universe::new(block, batch_rows, cfg.negatives)?;
    let z_u = universe_rows(g, z, &universe, batch_rows)?;
    Ok(Some(Prepared { universe, z_u }))
}

fn check_scores(scores: &ViewScoreMatrix, block: &Block) -> Result<()> {
    if scores.len() != block.len() {
        return Err(Error::Batch(format!(
            "score matrix covers {} entries but the block has {}",
            scores.len(),
            block.len()
        )));
    }
    Ok(())
}

/// Single-target supervised loss: weights are the view-averaged scores
/// `(1/K) Σ_k f^k_ij`. Normalized by the number of nonzero weights.
pub fn loss_sup_single(
    g: &mut Graph,
    store: &ParamStore,
    heads: &ProjectionHeads,
    z: Var,
    scores: &ViewScoreMatrix,
    block: &Block,
    cfg: &LossConfig,
) -> Result<Var> {
    check_scores(scores, block)?;
    let Some(prep) = prepare(g, z, block, cfg)? else {
        return zero(g);
    };
    let u = prep.universe.len();
    let mut weights = vec![0.0; u * u];
    let mut count = 0;
    for i in 0..block.len() {
        for j in (0..block.len()).filter(|&j| j != i) {
            let w = scores.mean_score(i, j);
            if w != 0.0 {
                weights[prep.universe.of_block[i] * u + prep.universe.of_block[j]] = w;
                count += 1;
            }
        }
    }
    let raw = weighted_info_nce(g, store, heads, heads.single(), prep.z_u, &prep.universe, weights, cfg.temperature)?;
    Ok(normalized(g, raw, count, cfg))
}

/// Multi-target supervised loss: per view, weights are the anchor-row
/// normalized scores through that view's head. Anchors whose row sums to
/// zero in a view are skipped for that view. Normalized by the number of
/// anchors contributing in at least one view.
pub fn loss_sup_multi(
    g: &mut Graph,
    store: &ParamStore,
    heads: &ProjectionHeads,
    z: Var,
    scores: &ViewScoreMatrix,
    block: &Block,
    cfg: &LossConfig,
) -> Result<Var> {
    check_scores(scores, block)?;
    let Some(prep) = prepare(g, z, block, cfg)? else {
        return zero(g);
    };
    let u = prep.universe.len();
    let mut contributing = vec![false; block.len()];
    let mut terms = Vec::with_capacity(VIEW_COUNT);
    for view in ViewId::ALL {
        let mut weights = vec![0.0; u * u];
        let mut any = false;
        for i in 0..block.len() {
            let aw = anchor_weights(scores, i, view);
            if aw.skip {
                continue;
            }
            any = true;
            contributing[i] = true;
            for (j, w) in aw.weights.into_iter().enumerate() {
                weights[prep.universe.of_block[i] * u + prep.universe.of_block[j]] = w;
            }
        }
        if any {
            let t = weighted_info_nce(g, store, heads, heads.view(view), prep.z_u, &prep.universe, weights, cfg.temperature)?;
            terms.push(t);
        }
    }
    let count = contributing.iter().filter(|&&c| c).count();
    let raw = sum_terms(g, &terms)?;
    Ok(normalized(g, raw, count, cfg))
}

fn zero(g: &mut Graph) -> Result<Var> {
    Ok(g.constant_from(vec![1], vec![0.0])?)
}

fn sum_terms(g: &mut Graph, terms: &[Var]) -> Result<Var> {
    let Some((&first, rest)) = terms.split_first() else {
        return zero(g);
    };
    let mut acc = first;
    for &t in rest {
        acc = g.add(acc, t)?;
    }
    Ok(acc)
}

fn self_weights(block: &Block, universe: &Universe) -> Vec<f64> {
    let u = universe.len();
    let mut weights = vec![0.0; u * u];
    for i in 0..block.len() {
        weights[universe.of_block[i] * u + universe.of_block[block.dup(i)]] = 1.0;
    }
    weights
}

/// Self-supervised loss: the only positive of anchor `i` is its dropout
/// duplicate. Normalized by the number of anchors.
pub fn loss_self_single(
    g: &mut Graph,
    store: &ParamStore,
    heads: &ProjectionHeads,
    z: Var,
    block: &Block,
    cfg: &LossConfig,
) -> Result<Var> {
    let Some(prep) = prepare(g, z, block, cfg)? else {
        return zero(g);
    };
    let weights = self_weights(block, &prep.universe);
    let raw = weighted_info_nce(g, store, heads, heads.single(), prep.z_u, &prep.universe, weights, cfg.temperature)?;
    Ok(normalized(g, raw, block.len(), cfg))
}

/// Self-supervised loss summed over the K view heads shared with the
/// supervised multi-target loss.
pub fn loss_self_multi(
    g: &mut Graph,
    store: &ParamStore,
    heads: &ProjectionHeads,
    z: Var,
    block: &Block,
    cfg: &LossConfig,
) -> Result<Var> {
    let Some(prep) = prepare(g, z, block, cfg)? else {
        return zero(g);
    };
    let mut terms = Vec::with_capacity(VIEW_COUNT);
    for view in ViewId::ALL {
        let weights = self_weights(block, &prep.universe);
        terms.push(weighted_info_nce(g, store, heads, heads.view(view), prep.z_u, &prep.universe, weights, cfg.temperature)?);
    }
    let raw = sum_terms(g, &terms)?;
    Ok(normalized(g, raw, block.len(), cfg))
}
