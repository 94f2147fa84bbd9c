use serde::Serialize;

use super::model::Model;
use super::pretrain::{batch_loss, PreparedBatch};
use crate::corpus::synthetic::{generate, SyntheticConfig};
use crate::corpus::{build_vocab, DialogSample, MixedBatcher};
use crate::encoder::EncoderConfig;
use crate::error::Result;
use crate::objectives::{HeadInit, LossConfig, SpanMaskConfig, ViewMode};
use crate::similarity::LabelInterner;
use crate::sts::extract_view_sets;
use crate::tensor::{finite_diff_check, GradCheckConfig, GradCheckReport, Graph};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Tiny end-to-end setting for checking `L_total` gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckSetup {
    pub batch_size: usize,
    pub encoder: EncoderConfig,
    pub loss: LossConfig,
    pub span: SpanMaskConfig,
    pub check: GradCheckConfig,
    /// Random heads by default: distinct per-view weights exercise more
    /// of the backward pass than identical identity heads.
    pub head_init: HeadInit,
    pub seed: u64,
}

impl Default for GradCheckSetup {
    fn default() -> Self {
        GradCheckSetup {
            batch_size: 4,
            encoder: EncoderConfig { hidden: 32, layers: 1, heads: 2, ff: 64, max_len: 32, vocab_size: 0, max_turns: 4, dropout: 0.2 },
            loss: LossConfig::default(),
            span: SpanMaskConfig::default(),
            check: GradCheckConfig::default(),
            head_init: HeadInit::Normal,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeCheck {
    pub mode: ViewMode,
    pub loss: f64,
    pub report: GradCheckReport,
}

impl ModeCheck {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < GRADCHECK_TOLERANCE
    }
}

/// Checks analytic gradients of `L_total` against central differences on
/// one synthetic batch, with dropout on under a fixed seed, in each mode.
pub fn gradcheck(setup: &GradCheckSetup, modes: &[ViewMode]) -> Result<Vec<ModeCheck>> {
    let corpus = generate(&SyntheticConfig { labeled: 8, unlabeled: 8, seed: setup.seed, ..Default::default() })?;
    let all: Vec<DialogSample> = corpus.labeled.iter().chain(&corpus.unlabeled).cloned().collect();
    let vocab = build_vocab(&all, 1)?;
    let base = Model::init(setup.encoder.clone(), vocab, setup.seed, setup.head_init)?;
    let batch = MixedBatcher::new(corpus.labeled.len(), corpus.unlabeled.len(), setup.batch_size, setup.seed)?.next_batch();
    let enc_l: Vec<_> = corpus.labeled.iter().map(|s| base.encode(s)).collect();
    let enc_u: Vec<_> = corpus.unlabeled.iter().map(|s| base.encode(s)).collect();
    let mut interner = LabelInterner::new();
    let views: Vec<_> = corpus
        .labeled
        .iter()
        .map(|s| interner.intern_views(&extract_view_sets(s.annotation.as_ref().expect("labeled"))))
        .collect();
    let prepared = PreparedBatch::new(
        &batch,
        &corpus.labeled,
        &corpus.unlabeled,
        &enc_l,
        &enc_u,
        &views,
        &setup.span,
        base.vocab.len(),
        setup.seed,
    )?;

    let mut out = Vec::with_capacity(modes.len());
    for &mode in modes {
        let mut model = base.clone();
        let mut g = Graph::new();
        let loss = batch_loss(&mut g, &model.store, &model.encoder, &model.heads, &prepared, mode, &setup.loss)?;
        let value = g.item(loss.total);
        model.store.zero_grad();
        g.backward(loss.total, &mut model.store)?;
        let (encoder, heads) = (model.encoder.clone(), model.heads.clone());
        let report = finite_diff_check(
            &mut model.store,
            |store| {
                let mut g = Graph::new();
                let l = batch_loss(&mut g, store, &encoder, &heads, &prepared, mode, &setup.loss)?;
                Ok(g.item(l.total))
            },
            setup.check,
        )?;
        out.push(ModeCheck { mode, loss: value, report });
    }
    Ok(out)
}
