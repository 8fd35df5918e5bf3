//! Vocabulary, caption preprocessing, dataset containers and the synthetic
//! dataset generator.

pub mod dataset;
pub mod synthetic;
pub mod vocab;

pub use dataset::{
    read_jsonl, write_jsonl, BoundingBox, CaptionBatch, ClassId, ClassTable, Dataset, ImageRecord,
    ObjectFeatureSet, Split, UNK_LABEL,
};
pub use synthetic::{Geometry, SyntheticDataset, SyntheticSpec};
pub use vocab::{normalize, Vocabulary, BOS, EOS, UNK};
