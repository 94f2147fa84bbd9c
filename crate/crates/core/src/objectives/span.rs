use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{MASK, RESERVED};
use crate::corpus::EncodedInput;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpanMaskConfig {
    pub mask_rate: f64,
    pub p_span: f64,
    pub max_span: usize,
}

impl Default for SpanMaskConfig {
    fn default() -> Self {
        SpanMaskConfig { mask_rate: 0.15, p_span: 0.2, max_span: 10 }
    }
}

impl SpanMaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return Err(Error::Config(format!("mask_rate {} outside [0, 1]", self.mask_rate)));
        }
        if !(self.p_span > 0.0 && self.p_span <= 1.0) {
            return Err(Error::Config(format!("p_span {} outside (0, 1]", self.p_span)));
        }
        if self.max_span == 0 {
            return Err(Error::Config("max_span must be at least 1".into()));
        }
        Ok(())
    }
}

/// A masked copy of an input with the original ids at masked positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedInput {
    pub input: EncodedInput,
    /// Masked positions, ascending.
    pub positions: Vec<usize>,
    pub targets: Vec<usize>,
}

fn maskable(id: usize) -> bool {
    id >= RESERVED.len()
}

/// Masks contiguous spans of word tokens until `mask_rate` of them are
/// covered. The budget is `mask_rate · n` rounded stochastically so the
/// expected fraction is exact. Span lengths follow a geometric law clipped
/// at `max_span`; each span is replaced by `[MASK]` (80%), random word
/// tokens (10%) or left unchanged (10%).
pub fn span_mask(enc: &EncodedInput, cfg: &SpanMaskConfig, vocab_size: usize, seed: u64) -> MaskedInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = &enc.token_ids;
    let candidates: Vec<usize> = (0..ids.len()).filter(|&p| maskable(ids[p])).collect();
    let mut input = enc.clone();
    if candidates.is_empty() || cfg.mask_rate == 0.0 {
        return MaskedInput { input, positions: Vec::new(), targets: Vec::new() };
    }
    let exact = cfg.mask_rate * candidates.len() as f64;
    let budget = ((exact + rng.random::<f64>()).floor() as usize).min(candidates.len());
    let geometric = Geometric::new(cfg.p_span).expect("validated span parameter");

    let mut masked = vec![false; ids.len()];
    let mut covered = 0;
    let mut attempts = 0;
    while covered < budget && attempts < 100 * candidates.len() {
        attempts += 1;
        let len = (1 + geometric.sample(&mut rng) as usize).min(cfg.max_span).min(budget - covered);
        let start = candidates[rng.random_range(0..candidates.len())];
        if masked[start] {
            continue;
        }
        let mut span = Vec::with_capacity(len);
        let mut p = start;
        while span.len() < len && p < ids.len() && maskable(ids[p]) && !masked[p] {
            span.push(p);
            p += 1;
        }
        let action: f64 = rng.random();
        for &p in &span {
            masked[p] = true;
            if action < 0.8 {
                input.token_ids[p] = MASK;
            } else if action < 0.9 && vocab_size > RESERVED.len() {
                input.token_ids[p] = rng.random_range(RESERVED.len()..vocab_size);
            }
        }
        covered += span.len();
    }
    let positions: Vec<usize> = (0..ids.len()).filter(|&p| masked[p]).collect();
    let targets = positions.iter().map(|&p| ids[p]).collect();
    MaskedInput { input, positions, targets }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::vocab::{BOU, CLS, EOU};

    fn utterance(words: usize) -> EncodedInput {
        let mut ids = vec![CLS, BOU];
        ids.extend((0..words).map(|w| 8 + w % 30));
        ids.push(EOU);
        let n = ids.len();
        EncodedInput { token_ids: ids, role_ids: vec![0; n], turn_ids: vec![0; n], position_ids: (0..n).collect() }
    }

    #[test]
    fn reserved_only_is_untouched() {
        let e = EncodedInput { token_ids: vec![CLS, BOU, 1, EOU], role_ids: vec![0; 4], turn_ids: vec![0; 4], position_ids: vec![0; 4] };
        let m = span_mask(&e, &SpanMaskConfig::default(), 40, 3);
        assert!(m.positions.is_empty());
        assert_eq!(m.input, e);
    }

    #[test]
    fn deterministic_and_targets_are_originals() {
        let e = utterance(50);
        let cfg = SpanMaskConfig::default();
        let a = span_mask(&e, &cfg, 40, 11);
        assert_eq!(a, span_mask(&e, &cfg, 40, 11));
        assert_eq!(a.positions.len(), a.targets.len());
        for (&p, &t) in a.positions.iter().zip(&a.targets) {
            assert_eq!(e.token_ids[p], t);
            assert!(t >= 8);
        }
    }

    #[test]
    fn full_rate_masks_every_word() {
        let e = utterance(12);
        let cfg = SpanMaskConfig { mask_rate: 1.0, ..Default::default() };
        let m = span_mask(&e, &cfg, 40, 5);
        assert_eq!(m.positions, (2..14).collect::<Vec<_>>());
    }

    #[test]
    fn validation() {
        assert!(SpanMaskConfig { mask_rate: 1.5, ..Default::default() }.validate().is_err());
        assert!(SpanMaskConfig { p_span: 0.0, ..Default::default() }.validate().is_err());
        assert!(SpanMaskConfig { max_span: 0, ..Default::default() }.validate().is_err());
        assert!(SpanMaskConfig::default().validate().is_ok());
    }
}
