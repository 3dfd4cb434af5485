//! Text-side data handling: tokenization, packing, pair files, filtering,
//! negative mining, prefixes and batch composition.

pub mod batching;
pub mod embed;
pub mod filter;
pub mod mining;
pub mod packing;
pub mod pairs;
pub mod prefix;
pub mod tokenizer;

pub use batching::{make_batches_single_source, SourceBatch};
pub use embed::{cosine, TextEmbedder};
pub use filter::{consistency_filter_threshold, consistency_filter_topk, FilterOutcome};
pub use mining::{mine_hard_negatives, random_negatives, sample_negatives};
pub use packing::{pack_documents, PackedChunk};
pub use pairs::{
    by_source, read_jsonl, read_pairs, write_jsonl, FilterStats, SourceCounts, TextPair,
};
pub use prefix::{apply_prefix, PairTask, TaskKind, PREFIX_SEPARATOR};
pub use tokenizer::{MaskingVocab, Tokenizer};
