//! Dataset ingestion, preprocessing and synthetic biased data.

pub mod augment;
pub mod loader;
pub mod manifest;
pub mod synthetic;

pub use augment::{preprocess_and_augment, preprocess_into, AugmentDraw};
pub use loader::{load_dataset, save_raw_dir};
pub use manifest::{
    example_id, DataSource, Dataset, DatasetManifest, ExampleRecord, ImageShape, ImageStore, Split,
};
pub use synthetic::{
    generate_biased_dataset, Subcluster, SyntheticBiasSpec, SyntheticDataset, LATENT_DIM,
};
