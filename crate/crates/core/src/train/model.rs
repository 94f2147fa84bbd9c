use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{encode_sample, DialogSample, EncodedInput, Vocabulary};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::objectives::{HeadInit, ProjectionHeads};
use crate::sts::{ViewId, VIEW_COUNT};
use crate::tensor::{checkpoint, rng, Graph, ParamStore};

pub const PARAMS_FILE: &str = "model.stsp";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const CONFIG_FILE: &str = "config.json";

const ENCODER_INIT: u64 = 1;
const HEADS_INIT: u64 = 2;
const EMBED_CHUNK: usize = 64;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    encoder: EncoderConfig,
}

/// Encoder, projection heads and vocabulary with their parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub heads: ProjectionHeads,
}

impl Model {
    /// Fresh parameters; `cfg.vocab_size` is taken from `vocab`.
    pub fn init(mut cfg: EncoderConfig, vocab: Vocabulary, seed: u64, head_init: HeadInit) -> Result<Self> {
        cfg.vocab_size = vocab.len();
        let mut store = ParamStore::new();
        let hidden = cfg.hidden;
        let encoder = Encoder::init(cfg, &mut store, rng::derive(seed, ENCODER_INIT))?;
        let heads = ProjectionHeads::init(hidden, &mut store, rng::derive(seed, HEADS_INIT), head_init)?;
        Ok(Model { vocab, store, encoder, heads })
    }

    pub fn config(&self) -> &EncoderConfig {
        self.encoder.config()
    }

    /// Writes `model.stsp`, `vocab.txt` and `config.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        checkpoint::save(&dir.join(PARAMS_FILE), &self.store)?;
        self.vocab.save(&dir.join(VOCAB_FILE))?;
        let cfg = serde_json::to_string_pretty(&ModelFile { encoder: self.config().clone() }).expect("config serializes");
        let path = dir.join(CONFIG_FILE);
        std::fs::write(&path, cfg + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(CONFIG_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: ModelFile =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
        if vocab.len() != file.encoder.vocab_size {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} entries but the model expects {}",
                vocab.len(),
                file.encoder.vocab_size
            )));
        }
        let store = checkpoint::load(&dir.join(PARAMS_FILE))?;
        let hidden = file.encoder.hidden;
        let encoder = Encoder::attach(file.encoder, &store)?;
        let heads = ProjectionHeads::attach(hidden, &store)?;
        Ok(Model { vocab, store, encoder, heads })
    }

    pub fn encode(&self, sample: &DialogSample) -> EncodedInput {
        encode_sample(sample, &self.vocab, self.config().max_len)
    }

    /// Pooled `z` of every sample with dropout off.
    pub fn embed(&self, samples: &[DialogSample]) -> Result<Vec<Vec<f64>>> {
        let encoded: Vec<EncodedInput> = samples.iter().map(|s| self.encode(s)).collect();
        let mut out = Vec::with_capacity(samples.len());
        for chunk in encoded.chunks(EMBED_CHUNK) {
            let refs: Vec<&EncodedInput> = chunk.iter().collect();
            out.extend(self.encoder.embed(&self.store, &refs)?);
        }
        Ok(out)
    }

    /// `σ_k(z)` for every sample and view, dropout off.
    pub fn project_views(&self, samples: &[DialogSample]) -> Result<Vec<Vec<Vec<f64>>>> {
        let z = self.embed(samples)?;
        let h = self.config().hidden;
        let mut out: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(VIEW_COUNT); samples.len()];
        for chunk_start in (0..z.len()).step_by(EMBED_CHUNK) {
            let rows = &z[chunk_start..(chunk_start + EMBED_CHUNK).min(z.len())];
            let mut g = Graph::new();
            let zv = g.constant_from(vec![rows.len(), h], rows.concat())?;
            for view in ViewId::ALL {
                let p = self.heads.project(&mut g, &self.store, self.heads.view(view), zv)?;
                for (r, v) in g.value(p).chunks(h).enumerate() {
                    out[chunk_start + r].push(v.to_vec());
                }
            }
        }
        Ok(out)
    }
}
