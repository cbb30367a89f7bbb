//! Image ingestion, preprocessing, augmentation, splitting and batching.

mod dataset;
mod record;
mod synthetic;

pub use dataset::{batches, load_dataset, split, Batch, Batches, Dataset};
pub use record::{
    augment, decode_imgr, encode_imgr, hflip, normalize, read_image, resize, rotate, vflip, write_imgr,
    AugmentSpec, ImageRecord, IMGR_MAGIC,
};
pub use synthetic::{synthetic_blobs, write_dataset, SyntheticTask};
