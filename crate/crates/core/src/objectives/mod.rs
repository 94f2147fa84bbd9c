//! Projection heads and training objectives: supervised and
//! self-supervised contrastive losses in single- and multi-target form,
//! span masked language modeling, and their sum.

mod contrastive;
mod heads;
mod mlm;
mod span;

use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use contrastive::{loss_self_multi, loss_self_single, loss_sup_multi, loss_sup_single, Block};
pub use heads::{Head, HeadInit, ProjectionHeads};
pub use mlm::loss_slm;
pub use span::{span_mask, MaskedInput, SpanMaskConfig};

use crate::error::{Error, Result, TensorError};
use crate::similarity::ViewScoreMatrix;
use crate::tensor::{Graph, ParamStore, Var};

/// Whether supervised targets average the views into one score or keep a
/// head per view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewMode {
    Single,
    Multi,
}

impl ViewMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViewMode::Single => "single",
            ViewMode::Multi => "multi",
        }
    }
}

impl FromStr for ViewMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(ViewMode::Single),
            "multi" => Ok(ViewMode::Multi),
            other => Err(Error::Config(format!("unknown view mode `{other}` (expected single or multi)"))),
        }
    }
}

/// Candidate set of each anchor's softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeScope {
    /// Only entries of the anchor's own sub-block (labeled or unlabeled).
    #[default]
    Block,
    /// Every entry of the mixed batch.
    FullBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub temperature: f64,
    /// Report raw sums instead of dividing by the number of contributing
    /// terms.
    pub paper_literal: bool,
    pub negatives: NegativeScope,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { temperature: 0.1, paper_literal: false, negatives: NegativeScope::Block }
    }
}

/// The supervised loss of `mode`.
#[allow(clippy::too_many_arguments)]
pub fn loss_sup(
    mode: ViewMode,
    g: &mut Graph,
    store: &ParamStore,
    heads: &ProjectionHeads,
    z: Var,
    scores: &ViewScoreMatrix,
    block: &Block,
    cfg: &LossConfig,
) -> Result<Var> {
    match mode {
        ViewMode::Single => loss_sup_single(g, store, heads, z, scores, block, cfg),
        ViewMode::Multi => loss_sup_multi(g, store, heads, z, scores, block, cfg),
    }
}

/// The self-supervised loss of `mode`.
pub fn loss_self(
    mode: ViewMode,
    g: &mut Graph,
    store: &ParamStore,
    heads: &ProjectionHeads,
    z: Var,
    block: &Block,
    cfg: &LossConfig,
) -> Result<Var> {
    match mode {
        ViewMode::Single => loss_self_single(g, store, heads, z, block, cfg),
        ViewMode::Multi => loss_self_multi(g, store, heads, z, block, cfg),
    }
}

/// A contrastive loss tagged with the view mode that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeLoss {
    pub mode: ViewMode,
    pub value: Var,
}

/// `L_sup + L_self + L_slm` for one mode.
pub fn loss_total(g: &mut Graph, mode: ViewMode, sup: ModeLoss, self_sup: ModeLoss, slm: Var) -> Result<Var> {
    if sup.mode != mode || self_sup.mode != mode {
        return Err(TensorError::Contract(format!(
            "total loss in {} mode given {} supervised and {} self-supervised terms",
            mode.as_str(),
            sup.mode.as_str(),
            self_sup.mode.as_str()
        ))
        .into());
    }
    let a = g.add(sup.value, self_sup.value)?;
    Ok(g.add(a, slm)?)
}
