//! Chunk-level OCR dataset construction and evaluation for receipt images.
//!
//! Receipts annotated with word boxes are cut into full-width horizontal
//! chunks. Each chunk gets a reading-ordered label whose text lines are
//! joined by a separator character, and chunk sizes grow stage by stage into
//! a training curriculum that ends with whole pages. Generated page text is
//! scored with character error rate and unordered word-level
//! precision/recall/F1.

pub mod cli;
pub mod fsutil;
pub mod geometry;
pub mod ingest;
pub mod labeler;
pub mod metrics;
pub mod report;
pub mod sampler;

pub use geometry::{overlap_fraction, sort_reading_order, v_overlap, BandSpan, Rect};
pub use ingest::{
    load_dataset, load_page, parse_annotation_line, ParsePolicy, ReceiptPage, TextInstance,
};
pub use labeler::{build_chunk_label, document_label, ChunkLabel, LabelerConfig};
pub use metrics::{
    cer, evaluate_corpus, line_count_distribution, split_output_lines, word_prf, EditStats,
    PrfStats,
};
pub use sampler::{
    build_curriculum, sample_training_chunks, tile_eval_chunks, ChunkSample, CurriculumSpec,
    Manifest, SampleMode,
};
