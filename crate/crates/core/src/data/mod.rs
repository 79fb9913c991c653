//! Dataset manifests, class catalogs, splits, few-shot sampling, and class
//! overlap between datasets.

mod catalog;
mod images;
mod manifest;
mod split;
pub mod synthetic;

pub use catalog::{canonical_name, class_similarity, match_key, AliasMap, ClassCatalog, ClassEntry, SimilarityReport};
pub use images::LabeledImages;
pub use manifest::{dataset_stats, load_manifest, parse_manifest, DatasetManifest, DatasetSummary, SampleRef};
pub use split::{few_shot_sample, largest_remainder, stratified_split, stratified_split_labels, FewShotSpec, SplitRatios, SplitSpec};
