//! Dataset loading, input preprocessing and batching.

pub mod batch;
pub mod image;
pub mod manifest;
pub mod preprocess;
pub mod synthetic;

pub use batch::{
    batch_iterator, epoch_batches, epoch_order, prepare, BatchIterator, DataConfig, PreparedSample, SampleSource,
    TensorBatch,
};
pub use image::ImageTensor;
pub use manifest::{load_manifest, DatasetManifest, DatasetPreset, Orphan, RecordDescriptor, SamplePair, Split};
pub use preprocess::{duplicate, duplicate_rotate, polar, resize_bilinear, resize_nearest, rot90_ccw, InputFormat};
