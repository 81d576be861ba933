//! Delexicalized corpus data model, JSONL layout, vocabulary and the
//! synthetic generator.

mod io;
pub mod synth;
mod types;
pub mod vocab;

pub use io::{load_corpus, read_jsonl, save_corpus, write_jsonl, TEMPLATES_FILE};
pub use synth::{generate_synthetic_corpus, generate_with_min_instances};
pub use types::{normalize_text, tokens_as_string, Corpus, RefexInstance, SlotTag, Split, Template};
pub use vocab::Vocabulary;
