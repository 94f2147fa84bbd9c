use std::fs::File;
use std::io::{BufWriter, Write};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::model::Model;
use crate::corpus::{build_vocab, load_jsonl, Batch, DialogSample, EncodedInput, MixedBatcher};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::objectives::{
    loss_self, loss_slm, loss_sup, loss_total, span_mask, Block, LossConfig, ModeLoss, ProjectionHeads,
    SpanMaskConfig, ViewMode,
};
use crate::similarity::{batch_score_matrix, InternedViews, LabelInterner, ViewScoreMatrix};
use crate::sts::extract_view_sets;
use crate::tensor::{rng, AdamW, Graph, ParamStore, Var};

const STEP_STREAM: u64 = 0x7374_6570;
const BATCH_STREAM: u64 = 0x0062_6174_6368;

/// One metrics line per optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub l_sup: f64,
    pub l_self: f64,
    pub l_slm: f64,
    pub l_total: f64,
    /// Mean cosine between `z_i` and its dropout duplicate `z_{i+N}`.
    pub align_cos: f64,
}

/// A batch with masks, dropout seeds and supervised targets resolved.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    pub inputs: Vec<EncodedInput>,
    /// `(position, original id)` per entry.
    pub masked: Vec<Vec<(usize, usize)>>,
    pub dropout_seeds: Vec<u64>,
    pub labeled: Block,
    pub unlabeled: Block,
    pub scores: ViewScoreMatrix,
    pub dialog_ids: Vec<String>,
}

impl PreparedBatch {
    /// Resolves `batch` against the encoded pools. `seed` fixes every mask.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        batch: &Batch,
        labeled: &[DialogSample],
        unlabeled: &[DialogSample],
        encoded_labeled: &[EncodedInput],
        encoded_unlabeled: &[EncodedInput],
        views_labeled: &[InternedViews],
        span: &SpanMaskConfig,
        vocab_size: usize,
        seed: u64,
    ) -> Result<Self> {
        let samples = batch.samples(labeled, unlabeled);
        let mut inputs = Vec::with_capacity(batch.len());
        let mut masked = Vec::with_capacity(batch.len());
        let mut dropout_seeds = Vec::with_capacity(batch.len());
        for e in 0..batch.len() {
            let slot = batch.slot(e);
            let base = match slot.pool {
                crate::corpus::Pool::Labeled => &encoded_labeled[slot.index],
                crate::corpus::Pool::Unlabeled => &encoded_unlabeled[slot.index],
            };
            let m = span_mask(base, span, vocab_size, rng::derive(seed, 2 * e as u64));
            masked.push(m.positions.iter().copied().zip(m.targets.iter().copied()).collect());
            inputs.push(m.input);
            dropout_seeds.push(rng::derive(seed, 2 * e as u64 + 1));
        }
        let labeled_block = Block::new(batch.labeled_entries())?;
        let views: Vec<InternedViews> = labeled_block
            .entries()
            .iter()
            .map(|&e| views_labeled[batch.slot(e).index].clone())
            .collect();
        let scores = batch_score_matrix(&views)?;
        Ok(PreparedBatch {
            inputs,
            masked,
            dropout_seeds,
            labeled: labeled_block,
            unlabeled: Block::new(batch.unlabeled_entries())?,
            scores,
            dialog_ids: samples.iter().take(batch.n()).map(|s| s.dialog_id.clone()).collect(),
        })
    }
}

/// Graph nodes of one forward pass through every loss.
#[derive(Debug, Clone, Copy)]
pub struct BatchLoss {
    pub pooled: Var,
    pub sup: Var,
    pub self_sup: Var,
    pub slm: Var,
    pub total: Var,
}

/// Builds `L_total` of `mode` for a prepared batch, dropout on.
pub fn batch_loss(
    g: &mut Graph,
    store: &ParamStore,
    encoder: &Encoder,
    heads: &ProjectionHeads,
    batch: &PreparedBatch,
    mode: ViewMode,
    cfg: &LossConfig,
) -> Result<BatchLoss> {
    let refs: Vec<&EncodedInput> = batch.inputs.iter().collect();
    let out = encoder.forward(g, store, &refs, Some(&batch.dropout_seeds))?;
    let z = out.pooled;
    let sup = loss_sup(mode, g, store, heads, z, &batch.scores, &batch.labeled, cfg)?;
    let self_sup = loss_self(mode, g, store, heads, z, &batch.unlabeled, cfg)?;
    let slm = loss_slm(g, store, encoder, &out, &batch.masked)?;
    let total = loss_total(g, mode, ModeLoss { mode, value: sup }, ModeLoss { mode, value: self_sup }, slm)?;
    Ok(BatchLoss { pooled: z, sup, self_sup, slm, total })
}

fn alignment(z: &[f64], hidden: usize) -> f64 {
    let rows: Vec<&[f64]> = z.chunks(hidden).collect();
    let n = rows.len() / 2;
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    (0..n).map(|i| cos(rows[i], rows[i + n])).sum::<f64>() / n as f64
}

/// Pre-training state over fixed labeled and unlabeled pools.
pub struct Trainer<'a> {
    cfg: RunConfig,
    model: Model,
    labeled: &'a [DialogSample],
    unlabeled: &'a [DialogSample],
    encoded_labeled: Vec<EncodedInput>,
    encoded_unlabeled: Vec<EncodedInput>,
    views_labeled: Vec<InternedViews>,
    batcher: MixedBatcher,
    optimizer: AdamW,
    step: usize,
    drawn: u64,
}

impl<'a> Trainer<'a> {
    /// Builds the vocabulary from both pools and initializes a model.
    pub fn new(cfg: &RunConfig, labeled: &'a [DialogSample], unlabeled: &'a [DialogSample]) -> Result<Self> {
        cfg.validate()?;
        let all: Vec<DialogSample> = labeled.iter().chain(unlabeled).cloned().collect();
        let vocab = build_vocab(&all, cfg.min_freq)?;
        let model = Model::init(cfg.encoder.clone(), vocab, cfg.seed, cfg.head_init)?;
        Self::with_model(cfg, model, labeled, unlabeled)
    }

    pub fn with_model(cfg: &RunConfig, model: Model, labeled: &'a [DialogSample], unlabeled: &'a [DialogSample]) -> Result<Self> {
        cfg.validate()?;
        if let Some(s) = labeled.iter().find(|s| !s.is_labeled()) {
            return Err(Error::schema("annotation", format!("labeled pool sample `{}` has no annotation", s.dialog_id)));
        }
        let batcher = MixedBatcher::new(labeled.len(), unlabeled.len(), cfg.batch_size, rng::derive(cfg.seed, BATCH_STREAM))?;
        let mut interner = LabelInterner::new();
        let views_labeled = labeled
            .iter()
            .map(|s| interner.intern_views(&extract_view_sets(s.annotation.as_ref().expect("checked above"))))
            .collect();
        Ok(Trainer {
            encoded_labeled: labeled.iter().map(|s| model.encode(s)).collect(),
            encoded_unlabeled: unlabeled.iter().map(|s| model.encode(s)).collect(),
            views_labeled,
            batcher,
            optimizer: AdamW::new(cfg.optimizer),
            cfg: cfg.clone(),
            model,
            labeled,
            unlabeled,
            step: 0,
            drawn: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Draws the next batch and resolves its masks. Every call gets fresh
    /// span and dropout masks.
    pub fn next_prepared(&mut self) -> Result<PreparedBatch> {
        let batch = self.batcher.next_batch();
        let seed = rng::derive(rng::derive(self.cfg.seed, STEP_STREAM), self.drawn);
        self.drawn += 1;
        PreparedBatch::new(
            &batch,
            self.labeled,
            self.unlabeled,
            &self.encoded_labeled,
            &self.encoded_unlabeled,
            &self.views_labeled,
            &self.cfg.span,
            self.model.vocab.len(),
            seed,
        )
    }

    /// One optimizer step.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let prepared = self.next_prepared()?;
        self.step += 1;
        let model = &mut self.model;
        let mut g = Graph::new();
        let loss = batch_loss(&mut g, &model.store, &model.encoder, &model.heads, &prepared, self.cfg.view_mode, &self.cfg.loss)?;
        let metrics = StepMetrics {
            step: self.step,
            l_sup: g.item(loss.sup),
            l_self: g.item(loss.self_sup),
            l_slm: g.item(loss.slm),
            l_total: g.item(loss.total),
            align_cos: alignment(g.value(loss.pooled), model.config().hidden),
        };
        let numerical = |what: &str| {
            Error::Numerical(format!(
                "{what} at step {}; batch dialog ids: [{}]",
                self.step,
                prepared.dialog_ids.join(", ")
            ))
        };
        if ![metrics.l_sup, metrics.l_self, metrics.l_slm, metrics.l_total].iter().all(|v| v.is_finite()) {
            return Err(numerical("non-finite loss"));
        }
        model.store.zero_grad();
        g.backward(loss.total, &mut model.store)?;
        let finite = model.store.iter().all(|(_, _, t)| t.grad().is_none_or(|gr| gr.iter().all(|v| v.is_finite())));
        if !finite {
            return Err(numerical("non-finite gradient"));
        }
        self.optimizer.config.lr = self.cfg.lr_at(self.step);
        self.optimizer.step(&mut model.store);
        model.store.zero_grad();
        Ok(metrics)
    }
}

/// Runs `cfg.steps` steps, calling `on_step` after each.
pub fn pretrain(
    cfg: &RunConfig,
    labeled: &[DialogSample],
    unlabeled: &[DialogSample],
    mut on_step: impl FnMut(&StepMetrics, &Model) -> Result<()>,
) -> Result<Model> {
    let mut trainer = Trainer::new(cfg, labeled, unlabeled)?;
    for _ in 0..cfg.steps {
        let m = trainer.step()?;
        on_step(&m, trainer.model())?;
    }
    Ok(trainer.into_model())
}

/// File-driven run: loads both corpora, appends metrics lines to
/// `metrics_path` and checkpoints into `checkpoint_dir`.
pub fn run_pretrain(cfg: &RunConfig) -> Result<(Model, Vec<StepMetrics>)> {
    let labeled_path = cfg.labeled.as_ref().ok_or_else(|| Error::Config("no labeled corpus path".into()))?;
    let unlabeled_path = cfg.unlabeled.as_ref().ok_or_else(|| Error::Config("no unlabeled corpus path".into()))?;
    let labeled = load_jsonl(labeled_path)?;
    let unlabeled = load_jsonl(unlabeled_path)?;
    let mut metrics_out = match &cfg.metrics_path {
        Some(p) => Some(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?)),
        None => None,
    };
    let mut all = Vec::with_capacity(cfg.steps);
    let model = pretrain(cfg, &labeled, &unlabeled, |m, model| {
        if let (Some(out), Some(p)) = (metrics_out.as_mut(), cfg.metrics_path.as_ref()) {
            let line = serde_json::to_string(m).expect("metrics serialize");
            writeln!(out, "{line}").and_then(|_| out.flush()).map_err(|e| Error::io(p, e))?;
        }
        if let Some(dir) = &cfg.checkpoint_dir {
            if cfg.checkpoint_interval > 0 && m.step % cfg.checkpoint_interval == 0 && m.step < cfg.steps {
                model.save(dir)?;
            }
        }
        all.push(m.clone());
        Ok(())
    })?;
    if let Some(dir) = &cfg.checkpoint_dir {
        model.save(dir)?;
    }
    Ok((model, all))
}
