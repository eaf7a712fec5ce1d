use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Image geometry. Pixels are stored planar (channel-major, then row, then column).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub const CIFAR: ImageShape = ImageShape {
        channels: 3,
        height: 32,
        width: 32,
    };

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for ImageShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub label: usize,
    pub split: Split,
    /// Index of the image in the backing pixel store.
    pub offset: usize,
}

/// Where the pixels behind a manifest live.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Cifar10 { path: String },
    RawDir { path: String },
    InMemory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub class_names: Vec<String>,
    pub image_shape: ImageShape,
    pub source: DataSource,
    pub examples: Vec<ExampleRecord>,
}

/// `"<split>-<zero padded source index>"`, padded to at least five digits.
pub fn example_id(split: Split, index: usize, total: usize) -> String {
    let width = total.max(1).to_string().len().max(5);
    format!("{split}-{index:0width$}")
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self, store_len: usize) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.examples.len());
        for ex in &self.examples {
            if !seen.insert(ex.id.as_str()) {
                return Err(Error::validation(
                    "example_id",
                    format!("duplicate id {}", ex.id),
                ));
            }
            if ex.label >= self.class_names.len() {
                return Err(Error::validation(
                    "label",
                    format!(
                        "example {} has label {} but only {} classes are declared",
                        ex.id,
                        ex.label,
                        self.class_names.len()
                    ),
                ));
            }
            if ex.offset >= store_len {
                return Err(Error::validation(
                    "offset",
                    format!("example {} points past the image store", ex.id),
                ));
            }
        }
        Ok(())
    }

    pub fn ids(&self, split: Split) -> impl Iterator<Item = &str> {
        self.examples
            .iter()
            .filter(move |e| e.split == split)
            .map(|e| e.id.as_str())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        io::read_json(path)
    }
}

/// Raw 8-bit images addressed by offset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageStore {
    shape: ImageShape,
    pixels: Vec<u8>,
}

impl ImageStore {
    pub fn new(shape: ImageShape, pixels: Vec<u8>) -> Result<Self> {
        if shape.is_empty() || !pixels.len().is_multiple_of(shape.len()) {
            return Err(Error::validation(
                "image_store",
                format!(
                    "{} bytes is not a whole number of {shape} images",
                    pixels.len()
                ),
            ));
        }
        Ok(Self { shape, pixels })
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.pixels.len() / self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn image(&self, offset: usize) -> &[u8] {
        let n = self.shape.len();
        &self.pixels[offset * n..(offset + 1) * n]
    }

    pub fn bytes(&self) -> &[u8] {
        &self.pixels
    }
}

/// A manifest together with its pixels. Cheap to clone; both halves are shared.
#[derive(Debug, Clone)]
pub struct Dataset {
    manifest: Arc<DatasetManifest>,
    images: Arc<ImageStore>,
    index: Arc<BTreeMap<String, usize>>,
}

impl Dataset {
    pub fn new(manifest: DatasetManifest, images: ImageStore) -> Result<Self> {
        if manifest.image_shape != images.shape() {
            return Err(Error::validation(
                "image_shape",
                format!(
                    "manifest declares {} but the store holds {}",
                    manifest.image_shape,
                    images.shape()
                ),
            ));
        }
        manifest.validate(images.len())?;
        Ok(Self::from_parts(Arc::new(manifest), Arc::new(images)))
    }

    fn from_parts(manifest: Arc<DatasetManifest>, images: Arc<ImageStore>) -> Self {
        let index = manifest
            .examples
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.clone(), i))
            .collect();
        Self {
            manifest,
            images,
            index: Arc::new(index),
        }
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn id(&self) -> &str {
        &self.manifest.dataset_id
    }

    pub fn shape(&self) -> ImageShape {
        self.manifest.image_shape
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes()
    }

    pub fn images(&self) -> &ImageStore {
        &self.images
    }

    pub fn examples(&self) -> &[ExampleRecord] {
        &self.manifest.examples
    }

    pub fn split(&self, split: Split) -> Vec<&ExampleRecord> {
        self.manifest
            .examples
            .iter()
            .filter(|e| e.split == split)
            .collect()
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.manifest.examples.iter().filter(|e| e.split == split).count()
    }

    pub fn train_ids(&self) -> BTreeSet<String> {
        self.manifest.ids(Split::Train).map(str::to_owned).collect()
    }

    pub fn get(&self, id: &str) -> Option<&ExampleRecord> {
        self.index.get(id).map(|&i| &self.manifest.examples[i])
    }

    pub fn pixels(&self, record: &ExampleRecord) -> &[u8] {
        self.images.image(record.offset)
    }

    /// Keeps only the listed train examples; the test split is untouched.
    pub fn restrict_train(&self, keep: &BTreeSet<String>) -> Result<Dataset> {
        for id in keep {
            match self.get(id) {
                Some(r) if r.split == Split::Train => {}
                _ => {
                    return Err(Error::validation(
                        "retained_ids",
                        format!("{id} is not a train example of {}", self.id()),
                    ))
                }
            }
        }
        let digest = {
            let joined: Vec<&str> = keep.iter().map(String::as_str).collect();
            io::sha256_hex(joined.join("\n").as_bytes())
        };
        let examples = self
            .manifest
            .examples
            .iter()
            .filter(|e| e.split == Split::Test || keep.contains(&e.id))
            .cloned()
            .collect();
        let manifest = DatasetManifest {
            dataset_id: format!("{}/train-subset-{}", self.id(), &digest[..16]),
            class_names: self.manifest.class_names.clone(),
            image_shape: self.manifest.image_shape,
            source: self.manifest.source.clone(),
            examples,
        };
        Ok(Self::from_parts(Arc::new(manifest), Arc::clone(&self.images)))
    }

    /// Class-balanced seeded subsample of both splits. Example ids are kept so
    /// scores remain joinable with the full dataset.
    pub fn subsample_balanced(&self, train: usize, test: usize, seed: u64) -> Result<Dataset> {
        let classes = self.num_classes();
        let mut rng = rng::stream(seed, Stream::Sampling);
        let mut keep = BTreeSet::new();
        for (split, total) in [(Split::Train, train), (Split::Test, test)] {
            if total % classes != 0 {
                return Err(Error::validation(
                    "subsample",
                    format!("{split} size {total} is not divisible by {classes} classes"),
                ));
            }
            let per_class = total / classes;
            for class in 0..classes {
                let mut pool: Vec<&str> = self
                    .manifest
                    .examples
                    .iter()
                    .filter(|e| e.split == split && e.label == class)
                    .map(|e| e.id.as_str())
                    .collect();
                if pool.len() < per_class {
                    return Err(Error::validation(
                        "subsample",
                        format!(
                            "class {class} has {} {split} examples, {per_class} requested",
                            pool.len()
                        ),
                    ));
                }
                pool.shuffle(&mut rng);
                keep.extend(pool[..per_class].iter().map(|s| s.to_string()));
            }
        }
        let examples = self
            .manifest
            .examples
            .iter()
            .filter(|e| keep.contains(&e.id))
            .cloned()
            .collect();
        let manifest = DatasetManifest {
            dataset_id: format!("{}/balanced-{train}-{test}-s{seed}", self.id()),
            class_names: self.manifest.class_names.clone(),
            image_shape: self.manifest.image_shape,
            source: self.manifest.source.clone(),
            examples,
        };
        Ok(Self::from_parts(Arc::new(manifest), Arc::clone(&self.images)))
    }
}

#[cfg(test)]
pub(crate) use tests::toy;

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy(n_train: usize, n_test: usize, classes: usize) -> Dataset {
        let shape = ImageShape {
            channels: 1,
            height: 2,
            width: 2,
        };
        let total = n_train + n_test;
        let mut examples = Vec::new();
        for i in 0..total {
            let (split, idx, count) = if i < n_train {
                (Split::Train, i, n_train)
            } else {
                (Split::Test, i - n_train, n_test)
            };
            examples.push(ExampleRecord {
                id: example_id(split, idx, count),
                label: i % classes,
                split,
                offset: i,
            });
        }
        let manifest = DatasetManifest {
            dataset_id: "toy".into(),
            class_names: (0..classes).map(|c| format!("c{c}")).collect(),
            image_shape: shape,
            source: DataSource::InMemory,
            examples,
        };
        let pixels = (0..total * 4).map(|i| (i % 251) as u8).collect();
        Dataset::new(manifest, ImageStore::new(shape, pixels).unwrap()).unwrap()
    }

    #[test]
    fn ids_are_zero_padded() {
        assert_eq!(example_id(Split::Train, 42, 50_000), "train-00042");
        assert_eq!(example_id(Split::Test, 7, 10), "test-00007");
        assert_eq!(example_id(Split::Train, 3, 1_000_000), "train-0000003");
    }

    #[test]
    fn rejects_out_of_range_labels_and_duplicates() {
        let ds = toy(4, 2, 2);
        let mut bad = ds.manifest().clone();
        bad.examples[0].label = 5;
        let err = Dataset::new(bad, ds.images().clone()).unwrap_err();
        assert!(err.to_string().contains("label"));

        let mut dup = ds.manifest().clone();
        dup.examples[1].id = dup.examples[0].id.clone();
        assert!(Dataset::new(dup, ds.images().clone()).is_err());
    }

    #[test]
    fn restrict_keeps_test_split_and_changes_id() {
        let ds = toy(10, 4, 2);
        let keep: BTreeSet<String> = ds.train_ids().into_iter().take(3).collect();
        let sub = ds.restrict_train(&keep).unwrap();
        assert_eq!(sub.split_len(Split::Train), 3);
        assert_eq!(sub.split_len(Split::Test), 4);
        assert_ne!(sub.id(), ds.id());
        assert_eq!(sub.id(), ds.restrict_train(&keep).unwrap().id());

        let mut foreign = keep.clone();
        foreign.insert("test-00000".into());
        assert!(ds.restrict_train(&foreign).is_err());
    }

    #[test]
    fn balanced_subsample_counts() {
        let ds = toy(40, 20, 4);
        let sub = ds.subsample_balanced(20, 8, 1).unwrap();
        for class in 0..4 {
            let n = sub
                .split(Split::Train)
                .iter()
                .filter(|e| e.label == class)
                .count();
            assert_eq!(n, 5);
        }
        assert_eq!(sub.split_len(Split::Test), 8);
        let again = ds.subsample_balanced(20, 8, 1).unwrap();
        assert_eq!(sub.manifest(), again.manifest());
    }

    #[test]
    fn manifest_json_round_trip() {
        let ds = toy(6, 3, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        ds.manifest().save(&path).unwrap();
        assert_eq!(&DatasetManifest::load(&path).unwrap(), ds.manifest());
    }
}
