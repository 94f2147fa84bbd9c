//! Pre-layer-norm bidirectional transformer over encoded dialog contexts.
//!
//! Input embeddings sum four tables (token, role, turn, position). The
//! sentence embedding `z` is the final hidden state at the `[CLS]` position,
//! and masked-token logits reuse the token table as output projection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::vocab::PAD;
use crate::corpus::{EncodedInput, GLOBAL_ROLE};
use crate::error::{Error, Result};
use crate::tensor::{rng, Graph, ParamId, ParamStore, Tensor, Var};

pub const ROLE_COUNT: usize = 3;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub max_turns: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden: 64,
            layers: 2,
            heads: 4,
            ff: 256,
            max_len: 64,
            vocab_size: 0,
            max_turns: 8,
            dropout: 0.2,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return bad(format!("hidden={} must be a positive multiple of heads={}", self.hidden, self.heads));
        }
        if self.ff == 0 || self.max_turns == 0 {
            return bad("ff and max_turns must be positive".into());
        }
        if self.max_len < 3 {
            return bad(format!("max_len={} cannot hold [CLS] and one utterance", self.max_len));
        }
        if self.vocab_size == PAD {
            return bad("vocab_size must be set from the vocabulary".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout={} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct LayerIds {
    ln1: (ParamId, ParamId),
    wq: (ParamId, ParamId),
    wk: (ParamId, ParamId),
    wv: (ParamId, ParamId),
    wo: (ParamId, ParamId),
    ln2: (ParamId, ParamId),
    w1: (ParamId, ParamId),
    w2: (ParamId, ParamId),
}

#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: EncoderConfig,
    tok: ParamId,
    role: ParamId,
    turn: ParamId,
    pos: ParamId,
    ln_emb: (ParamId, ParamId),
    layers: Vec<LayerIds>,
    ln_final: (ParamId, ParamId),
    mlm_bias: ParamId,
}

/// Output of one packed forward pass.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `[B, H]` pooled `[CLS]` states.
    pub pooled: Var,
    /// `[B·seq, H]` final token states; sequence `b` occupies rows
    /// `b·seq .. b·seq + lens[b]`.
    pub states: Var,
    pub seq: usize,
    pub lens: Vec<usize>,
}

impl EncoderOutput {
    /// Packed row index of position `t` in sequence `b`.
    pub fn row(&self, b: usize, t: usize) -> usize {
        b * self.seq + t
    }
}

/// Parameter shapes in registration order.
fn param_layout(cfg: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
    let h = cfg.hidden;
    let mut out = vec![
        ("enc.emb.token".to_string(), vec![cfg.vocab_size, h]),
        ("enc.emb.role".to_string(), vec![ROLE_COUNT, h]),
        ("enc.emb.turn".to_string(), vec![cfg.max_turns, h]),
        ("enc.emb.position".to_string(), vec![cfg.max_len, h]),
        ("enc.emb.ln.gamma".to_string(), vec![h]),
        ("enc.emb.ln.beta".to_string(), vec![h]),
    ];
    for l in 0..cfg.layers {
        let p = format!("enc.layer{l}");
        out.push((format!("{p}.ln1.gamma"), vec![h]));
        out.push((format!("{p}.ln1.beta"), vec![h]));
        for w in ["q", "k", "v", "o"] {
            out.push((format!("{p}.attn.w{w}"), vec![h, h]));
            out.push((format!("{p}.attn.b{w}"), vec![h]));
        }
        out.push((format!("{p}.ln2.gamma"), vec![h]));
        out.push((format!("{p}.ln2.beta"), vec![h]));
        out.push((format!("{p}.ffn.w1"), vec![h, cfg.ff]));
        out.push((format!("{p}.ffn.b1"), vec![cfg.ff]));
        out.push((format!("{p}.ffn.w2"), vec![cfg.ff, h]));
        out.push((format!("{p}.ffn.b2"), vec![h]));
    }
    out.push(("enc.final_ln.gamma".to_string(), vec![h]));
    out.push(("enc.final_ln.beta".to_string(), vec![h]));
    out.push(("enc.mlm.bias".to_string(), vec![cfg.vocab_size]));
    out
}

/// Fills a fresh parameter tensor: layer-norm gains 1, biases 0, everything
/// else normal with std 0.02.
fn init_tensor(name: &str, shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = if name.ends_with(".gamma") {
        vec![1.0; n]
    } else if shape.len() == 1 {
        vec![0.0; n]
    } else {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        (0..n).map(|_| normal.sample(rng)).collect()
    };
    Tensor::new(shape, data).expect("layout shapes are consistent")
}

impl Encoder {
    /// Registers freshly initialized encoder parameters in `store`.
    pub fn init(cfg: EncoderConfig, store: &mut ParamStore, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, shape) in param_layout(&cfg) {
            let t = init_tensor(&name, shape, &mut rng);
            store.insert(name, t);
        }
        Self::attach(cfg, store)
    }

    /// Binds to encoder parameters already present in `store`, checking
    /// every shape against `cfg`.
    pub fn attach(cfg: EncoderConfig, store: &ParamStore) -> Result<Self> {
        cfg.validate()?;
        for (name, shape) in param_layout(&cfg) {
            match store.by_name(&name) {
                None => return Err(Error::Checkpoint(format!("missing parameter `{name}`"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::Checkpoint(format!(
                        "parameter `{name}` has shape {:?}, config expects {shape:?}",
                        t.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        let id = |n: &str| store.id(n).expect("checked above");
        let pair = |p: &str| (id(&format!("{p}.gamma")), id(&format!("{p}.beta")));
        let lin = |p: &str, w: &str, b: &str| (id(&format!("{p}.{w}")), id(&format!("{p}.{b}")));
        let layers = (0..cfg.layers)
            .map(|l| {
                let p = format!("enc.layer{l}");
                LayerIds {
                    ln1: pair(&format!("{p}.ln1")),
                    wq: lin(&format!("{p}.attn"), "wq", "bq"),
                    wk: lin(&format!("{p}.attn"), "wk", "bk"),
                    wv: lin(&format!("{p}.attn"), "wv", "bv"),
                    wo: lin(&format!("{p}.attn"), "wo", "bo"),
                    ln2: pair(&format!("{p}.ln2")),
                    w1: lin(&format!("{p}.ffn"), "w1", "b1"),
                    w2: lin(&format!("{p}.ffn"), "w2", "b2"),
                }
            })
            .collect();
        Ok(Encoder {
            tok: id("enc.emb.token"),
            role: id("enc.emb.role"),
            turn: id("enc.emb.turn"),
            pos: id("enc.emb.position"),
            ln_emb: pair("enc.emb.ln"),
            layers,
            ln_final: pair("enc.final_ln"),
            mlm_bias: id("enc.mlm.bias"),
            cfg,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Ids of every encoder parameter.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.tok, self.role, self.turn, self.pos, self.ln_emb.0, self.ln_emb.1];
        for l in &self.layers {
            for (a, b) in [l.ln1, l.wq, l.wk, l.wv, l.wo, l.ln2, l.w1, l.w2] {
                ids.push(a);
                ids.push(b);
            }
        }
        ids.extend([self.ln_final.0, self.ln_final.1, self.mlm_bias]);
        ids
    }

    /// Packs `inputs` into padded id columns of length `seq`.
    fn pack(&self, inputs: &[&EncodedInput]) -> Result<(usize, Vec<usize>, [Vec<usize>; 4])> {
        let cfg = &self.cfg;
        let seq = inputs.iter().map(|e| e.len()).max().unwrap_or(0);
        if seq == 0 {
            return Err(Error::Encoding("empty input sequence".into()));
        }
        let total = inputs.len() * seq;
        let mut cols = [vec![PAD; total], vec![GLOBAL_ROLE; total], vec![0; total], vec![0; total]];
        let mut lens = Vec::with_capacity(inputs.len());
        for (b, e) in inputs.iter().enumerate() {
            let n = e.len();
            if e.role_ids.len() != n || e.turn_ids.len() != n || e.position_ids.len() != n {
                return Err(Error::Encoding(format!("input {b} has id sequences of unequal length")));
            }
            for t in 0..n {
                let r = b * seq + t;
                let (tok, role, pos) = (e.token_ids[t], e.role_ids[t], e.position_ids[t]);
                for (what, id, bound) in [("token", tok, cfg.vocab_size), ("role", role, ROLE_COUNT), ("position", pos, cfg.max_len)] {
                    if id >= bound {
                        return Err(Error::Encoding(format!("{what} id {id} out of range {bound} in input {b}")));
                    }
                }
                cols[0][r] = tok;
                cols[1][r] = role;
                cols[2][r] = e.turn_ids[t].min(cfg.max_turns - 1);
                cols[3][r] = pos;
            }
            lens.push(n);
        }
        Ok((seq, lens, cols))
    }

    /// Runs the encoder over a batch. With `dropout_seeds`, entry `b` draws
    /// its dropout masks from `dropout_seeds[b]`; without it dropout is off.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        inputs: &[&EncodedInput],
        dropout_seeds: Option<&[u64]>,
    ) -> Result<EncoderOutput> {
        if inputs.is_empty() {
            return Err(Error::Encoding("empty batch".into()));
        }
        if let Some(s) = dropout_seeds {
            if s.len() != inputs.len() {
                return Err(Error::Encoding(format!("{} dropout seeds for {} inputs", s.len(), inputs.len())));
            }
        }
        let (seq, lens, [tok, role, turn, pos]) = self.pack(inputs)?;
        let p = if dropout_seeds.is_some() { self.cfg.dropout } else { 0.0 };
        let row_seeds = |site: u64| -> Vec<u64> {
            let seeds = dropout_seeds.unwrap_or(&[]);
            (0..inputs.len() * seq)
                .map(|r| {
                    let entry = seeds.get(r / seq).copied().unwrap_or(0);
                    rng::derive(rng::derive(entry, site), (r % seq) as u64)
                })
                .collect()
        };
        let param = |g: &mut Graph, id: ParamId| g.param(store, id);

        let mut x = {
            let t = param(g, self.tok);
            let x_tok = g.embedding(t, &tok)?;
            let t = param(g, self.role);
            let x_role = g.embedding(t, &role)?;
            let t = param(g, self.turn);
            let x_turn = g.embedding(t, &turn)?;
            let t = param(g, self.pos);
            let x_pos = g.embedding(t, &pos)?;
            let a = g.add(x_tok, x_role)?;
            let b = g.add(x_turn, x_pos)?;
            g.add(a, b)?
        };
        let (gm, bt) = (param(g, self.ln_emb.0), param(g, self.ln_emb.1));
        x = g.layer_norm(x, gm, bt)?;
        x = g.dropout(x, p, &row_seeds(0))?;

        let linear = |g: &mut Graph, x: Var, (w, b): (ParamId, ParamId)| -> Result<Var> {
            let (w, b) = (g.param(store, w), g.param(store, b));
            Ok(g.linear(x, w, b)?)
        };
        for (l, ids) in self.layers.iter().enumerate() {
            let site = 1 + 2 * l as u64;
            let (gm, bt) = (param(g, ids.ln1.0), param(g, ids.ln1.1));
            let h = g.layer_norm(x, gm, bt)?;
            let q = linear(g, h, ids.wq)?;
            let k = linear(g, h, ids.wk)?;
            let v = linear(g, h, ids.wv)?;
            let a = g.attention(q, k, v, &lens, seq, self.cfg.heads)?;
            let a = linear(g, a, ids.wo)?;
            let a = g.dropout(a, p, &row_seeds(site))?;
            x = g.add(x, a)?;

            let (gm, bt) = (param(g, ids.ln2.0), param(g, ids.ln2.1));
            let h = g.layer_norm(x, gm, bt)?;
            let f = linear(g, h, ids.w1)?;
            let f = g.gelu(f);
            let f = linear(g, f, ids.w2)?;
            let f = g.dropout(f, p, &row_seeds(site + 1))?;
            x = g.add(x, f)?;
        }
        if !self.layers.is_empty() {
            let (gm, bt) = (param(g, self.ln_final.0), param(g, self.ln_final.1));
            x = g.layer_norm(x, gm, bt)?;
        }
        let cls_rows: Vec<usize> = (0..inputs.len()).map(|b| b * seq).collect();
        let pooled = g.select_rows(x, &cls_rows)?;
        Ok(EncoderOutput { pooled, states: x, seq, lens })
    }

    /// Vocabulary logits `[rows.len(), V]` for the given packed state rows,
    /// projecting through the token embedding table.
    pub fn mlm_logits(&self, g: &mut Graph, store: &ParamStore, states: Var, rows: &[usize]) -> Result<Var> {
        let picked = g.select_rows(states, rows)?;
        let table = g.param(store, self.tok);
        let bias = g.param(store, self.mlm_bias);
        let logits = g.matmul_t(picked, table)?;
        Ok(g.add_bias(logits, bias)?)
    }

    /// Pooled embeddings with dropout off, as plain rows.
    pub fn embed(&self, store: &ParamStore, inputs: &[&EncodedInput]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, store, inputs, None)?;
        Ok(g.value(out.pooled).chunks(self.cfg.hidden).map(<[f64]>::to_vec).collect())
    }
}
