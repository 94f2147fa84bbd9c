//! Dialog corpora: JSONL ingestion, vocabulary, context encoding and mixed
//! labeled/unlabeled batching.

mod batch;
mod encode;
mod sample;
pub mod synthetic;
pub mod vocab;

pub use batch::{make_batch, Batch, MixedBatcher, Pool, Slot};
pub use encode::{encode_sample, EncodedInput, GLOBAL_ROLE};
pub use sample::{load_jsonl, parse_annotation, read_jsonl, save_jsonl, write_jsonl, DialogSample, Role, Turn};
pub use vocab::{build_vocab, tokenize, Vocabulary};
