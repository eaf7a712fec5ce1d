//! On-disk dataset layouts.
//!
//! Two layouts are recognised:
//!
//! * CIFAR-10 binary: `data_batch_1.bin` .. `data_batch_5.bin` plus
//!   `test_batch.bin`, each a sequence of 3073-byte records (label byte
//!   followed by 1024 red, 1024 green and 1024 blue bytes). Class names come
//!   from `batches.meta.txt` when present.
//! * Raw directory: `manifest.json` plus `images.bin` holding the planar
//!   pixels of every image referenced by offset. Synthetic datasets are
//!   written this way.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::manifest::{
    example_id, DataSource, Dataset, DatasetManifest, ExampleRecord, ImageShape, ImageStore,
    Split,
};
use crate::error::{Error, Result};
use crate::io;

pub const CIFAR_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * 32 * 32;
pub const CIFAR_CLASSES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

pub const MANIFEST_FILE: &str = "manifest.json";
pub const IMAGES_FILE: &str = "images.bin";

/// Loads any supported layout from `source`.
pub fn load_dataset(source: &Path) -> Result<Dataset> {
    if !source.is_dir() {
        return Err(Error::load(source, "not a directory"));
    }
    let cifar_dir = [source.to_path_buf(), source.join("cifar-10-batches-bin")]
        .into_iter()
        .find(|d| d.join(CIFAR_TRAIN_FILES[0]).is_file());
    if let Some(dir) = cifar_dir {
        return load_cifar10(&dir);
    }
    if source.join(MANIFEST_FILE).is_file() {
        return load_raw_dir(source);
    }
    Err(Error::load(
        source,
        format!(
            "no supported dataset layout found (expected {} or {})",
            CIFAR_TRAIN_FILES[0], MANIFEST_FILE
        ),
    ))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::load(path, e.to_string()))
}

pub fn load_cifar10(dir: &Path) -> Result<Dataset> {
    let class_names = match fs::read_to_string(dir.join("batches.meta.txt")) {
        Ok(text) => {
            let names: Vec<String> = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_owned)
                .collect();
            if names.len() != CIFAR_CLASSES.len() {
                return Err(Error::load(
                    dir.join("batches.meta.txt"),
                    format!("expected 10 class names, found {}", names.len()),
                ));
            }
            names
        }
        Err(_) => CIFAR_CLASSES.iter().map(|s| s.to_string()).collect(),
    };

    let mut pixels = Vec::new();
    let mut raw_labels: Vec<(Split, u8, PathBuf)> = Vec::new();
    let mut digest_input = Vec::new();
    let mut files: Vec<(Split, PathBuf)> = CIFAR_TRAIN_FILES
        .iter()
        .map(|f| (Split::Train, dir.join(f)))
        .collect();
    files.push((Split::Test, dir.join(CIFAR_TEST_FILE)));

    for (split, path) in &files {
        let bytes = read_file(path)?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 {
            return Err(Error::load(
                path,
                format!(
                    "size {} is not a positive multiple of the {CIFAR_RECORD_BYTES}-byte record",
                    bytes.len()
                ),
            ));
        }
        digest_input.extend_from_slice(io::sha256_hex(&bytes).as_bytes());
        for record in bytes.chunks_exact(CIFAR_RECORD_BYTES) {
            raw_labels.push((*split, record[0], path.clone()));
            pixels.extend_from_slice(&record[1..]);
        }
    }

    let n_train = raw_labels.iter().filter(|r| r.0 == Split::Train).count();
    let n_test = raw_labels.len() - n_train;
    let mut examples = Vec::with_capacity(raw_labels.len());
    let (mut train_idx, mut test_idx) = (0usize, 0usize);
    for (offset, (split, label, path)) in raw_labels.into_iter().enumerate() {
        if label as usize >= class_names.len() {
            return Err(Error::validation(
                "label",
                format!(
                    "record {offset} in {} has label {label}, outside the 10 declared classes",
                    path.display()
                ),
            ));
        }
        let id = match split {
            Split::Train => {
                train_idx += 1;
                example_id(split, train_idx - 1, n_train)
            }
            Split::Test => {
                test_idx += 1;
                example_id(split, test_idx - 1, n_test)
            }
        };
        examples.push(ExampleRecord {
            id,
            label: label as usize,
            split,
            offset,
        });
    }

    let manifest = DatasetManifest {
        dataset_id: format!("cifar10-{}", &io::sha256_hex(&digest_input)[..16]),
        class_names,
        image_shape: ImageShape::CIFAR,
        source: DataSource::Cifar10 {
            path: dir.display().to_string(),
        },
        examples,
    };
    Dataset::new(manifest, ImageStore::new(ImageShape::CIFAR, pixels)?)
}

pub fn load_raw_dir(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut manifest: DatasetManifest = DatasetManifest::load(&manifest_path)
        .map_err(|e| Error::load(&manifest_path, e.to_string()))?;
    let images_path = dir.join(IMAGES_FILE);
    let bytes = read_file(&images_path)?;
    let store = ImageStore::new(manifest.image_shape, bytes)
        .map_err(|e| Error::load(&images_path, e.to_string()))?;
    manifest.source = DataSource::RawDir {
        path: dir.display().to_string(),
    };
    Dataset::new(manifest, store)
}

/// Writes `dataset` as a raw directory. Only images referenced by the manifest
/// are written, renumbered densely.
pub fn save_raw_dir(dataset: &Dataset, dir: &Path) -> Result<()> {
    let mut manifest = dataset.manifest().clone();
    let mut pixels = Vec::with_capacity(manifest.examples.len() * manifest.image_shape.len());
    for (i, ex) in manifest.examples.iter_mut().enumerate() {
        pixels.extend_from_slice(dataset.images().image(ex.offset));
        ex.offset = i;
    }
    manifest.source = DataSource::InMemory;
    io::write_atomic(&dir.join(IMAGES_FILE), &pixels)?;
    manifest.save(&dir.join(MANIFEST_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_fake_cifar(dir: &Path, per_file: usize) {
        for (f, name) in CIFAR_TRAIN_FILES
            .iter()
            .chain(std::iter::once(&CIFAR_TEST_FILE))
            .enumerate()
        {
            let mut bytes = Vec::new();
            for i in 0..per_file {
                bytes.push(((f + i) % 10) as u8);
                bytes.extend(std::iter::repeat_n((i * 7 + f) as u8, 3072));
            }
            fs::write(dir.join(name), bytes).unwrap();
        }
    }

    #[test]
    fn loads_cifar_binary_layout() {
        let dir = tempfile::tempdir().unwrap();
        write_fake_cifar(dir.path(), 4);
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.split_len(Split::Train), 20);
        assert_eq!(ds.split_len(Split::Test), 4);
        assert_eq!(ds.num_classes(), 10);
        assert_eq!(ds.examples()[0].id, "train-00000");
        assert_eq!(ds.examples()[20].id, "test-00000");
        // second record of the first batch: label (0+1)%10, fill byte 7
        assert_eq!(ds.examples()[1].label, 1);
        assert!(ds.pixels(&ds.examples()[1]).iter().all(|&p| p == 7));

        let again = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.manifest(), again.manifest());
    }

    #[test]
    fn corrupt_batch_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        write_fake_cifar(dir.path(), 2);
        fs::write(dir.path().join("data_batch_3.bin"), [0u8; 100]).unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("data_batch_3.bin"), "{err}");
    }

    #[test]
    fn missing_batch_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        write_fake_cifar(dir.path(), 2);
        fs::remove_file(dir.path().join(CIFAR_TEST_FILE)).unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains(CIFAR_TEST_FILE), "{err}");
    }

    #[test]
    fn label_outside_classes_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        write_fake_cifar(dir.path(), 2);
        let mut bytes = fs::read(dir.path().join("data_batch_2.bin")).unwrap();
        bytes[0] = 11;
        fs::write(dir.path().join("data_batch_2.bin"), bytes).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Validation { .. }), "{err}");
    }

    #[test]
    fn empty_directory_is_a_load_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Load { .. }));
    }

    #[test]
    fn raw_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = crate::data::manifest::toy(6, 2, 2);
        let sub = ds
            .restrict_train(&ds.train_ids().into_iter().skip(2).collect())
            .unwrap();
        save_raw_dir(&sub, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.id(), sub.id());
        for (a, b) in back.examples().iter().zip(sub.examples()) {
            assert_eq!((&a.id, a.label, a.split), (&b.id, b.label, b.split));
            assert_eq!(back.pixels(a), sub.pixels(b));
        }
    }
}
