//! Tensor files and dataset manifests shared by every pipeline stage.

pub mod manifest;
pub mod tensor;

pub use manifest::{load_manifest, DatasetManifest, FeatureRef, StoryEntry, StoryRole};
pub use tensor::{read_array1, read_array2, read_tensor, read_tensor_header, write_f64, write_tensor, DType, Tensor, TensorHeader};
