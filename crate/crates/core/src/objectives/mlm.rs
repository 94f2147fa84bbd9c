use crate::encoder::{Encoder, EncoderOutput};
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, Var};

/// Mean cross-entropy of the original tokens at masked positions.
/// `masked[b]` lists `(position, target)` pairs of batch entry `b`.
pub fn loss_slm(
    g: &mut Graph,
    store: &ParamStore,
    encoder: &Encoder,
    out: &EncoderOutput,
    masked: &[Vec<(usize, usize)>],
) -> Result<Var> {
    if masked.len() != out.lens.len() {
        return Err(Error::Batch(format!("{} mask lists for {} entries", masked.len(), out.lens.len())));
    }
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (b, entries) in masked.iter().enumerate() {
        for &(pos, target) in entries {
            if pos >= out.lens[b] {
                return Err(Error::Batch(format!("masked position {pos} beyond entry {b} of length {}", out.lens[b])));
            }
            rows.push(out.row(b, pos));
            targets.push(target);
        }
    }
    if rows.is_empty() {
        return Ok(g.constant_from(vec![1], vec![0.0])?);
    }
    let logits = encoder.mlm_logits(g, store, out.states, &rows)?;
    let log_probs = g.log_softmax(logits, None)?;
    let picked = g.pick(log_probs, &targets)?;
    let mean = g.mean(picked);
    Ok(g.scale(mean, -1.0))
}
