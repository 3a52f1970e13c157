//! Array data model, NPY files and the experiment manifest.

mod arrays;
mod manifest;
pub mod npy;

pub use arrays::{
    read_array, read_image, read_label_map, read_prob_map, write_array, write_image,
    write_label_map, write_prob_map, Array, ArrayKind, LabelMap, ProbMap, PROB_SUM_TOLERANCE,
};
pub use manifest::{
    load_manifest, validate as validate_manifest, Manifest, ManifestDocument, Prediction,
    PredictionEntry, Task, TaskName,
};
pub use npy::Dtype;
