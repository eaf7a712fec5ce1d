//! Synthetic classification data with controlled intra-class bias.
//!
//! Each class is a mixture of two Gaussian subclusters in an 8-dimensional
//! latent space: a majority subcluster and a minority subcluster on opposite
//! sides of the class mean. Latents are rendered to 16x16 grayscale images
//! through one fixed random linear map, so visual similarity tracks latent
//! proximity.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::loader;
use crate::data::manifest::{
    example_id, DataSource, Dataset, DatasetManifest, ExampleRecord, ImageShape, ImageStore,
    Split,
};
use crate::error::{Error, Result};
use crate::io;
use crate::rng::{self, derive_seed, Stream};

pub const LATENT_DIM: usize = 8;
pub const SYNTHETIC_SHAPE: ImageShape = ImageShape {
    channels: 1,
    height: 16,
    width: 16,
};
pub const SUBCLUSTER_FILE: &str = "subclusters.json";

const RENDER_GAIN: f64 = 32.0;

fn default_class_separation() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticBiasSpec {
    pub num_classes: usize,
    pub examples_per_class: usize,
    pub majority_fraction: f64,
    pub subcluster_separation: f64,
    pub noise_scale: f64,
    pub seed: u64,
    /// Norm of each class mean in latent space.
    #[serde(default = "default_class_separation")]
    pub class_separation: f64,
    /// Test examples per class; defaults to a quarter of `examples_per_class`.
    #[serde(default)]
    pub test_examples_per_class: Option<usize>,
}

impl SyntheticBiasSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::validation("num_classes", "need at least 2 classes"));
        }
        if self.examples_per_class < 2 {
            return Err(Error::validation(
                "examples_per_class",
                "need at least 2 examples per class",
            ));
        }
        if !(self.majority_fraction > 0.5 && self.majority_fraction < 1.0) {
            return Err(Error::validation(
                "majority_fraction",
                format!("must lie in (0.5, 1), got {}", self.majority_fraction),
            ));
        }
        if !(self.subcluster_separation >= 0.0 && self.subcluster_separation.is_finite()) {
            return Err(Error::validation(
                "subcluster_separation",
                format!("must be finite and >= 0, got {}", self.subcluster_separation),
            ));
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::validation(
                "noise_scale",
                format!("must be finite and > 0, got {}", self.noise_scale),
            ));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return Err(Error::validation(
                "class_separation",
                format!("must be finite and > 0, got {}", self.class_separation),
            ));
        }
        Ok(())
    }

    /// `⌈majority_fraction · n⌉`, robust to representation error in the product.
    pub fn majority_count(&self, n: usize) -> usize {
        let exact = self.majority_fraction * n as f64;
        ((exact - 1e-9).ceil() as usize).min(n)
    }

    pub fn test_per_class(&self) -> usize {
        self.test_examples_per_class
            .unwrap_or_else(|| (self.examples_per_class / 4).max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subcluster {
    Majority,
    Minority,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub dataset: Dataset,
    pub subclusters: BTreeMap<String, Subcluster>,
    /// Latent vector of every example, keyed by example id.
    pub latents: BTreeMap<String, [f64; LATENT_DIM]>,
}

fn gaussian_vector<R: Rng>(rng: &mut R) -> [f64; LATENT_DIM] {
    let mut v = [0.0; LATENT_DIM];
    for x in v.iter_mut() {
        *x = rng.sample(StandardNormal);
    }
    v
}

fn unit_vector<R: Rng>(rng: &mut R) -> [f64; LATENT_DIM] {
    loop {
        let v = gaussian_vector(rng);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.map(|x| x / norm);
        }
    }
}

pub fn generate_biased_dataset(spec: &SyntheticBiasSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, Stream::Synthetic);
    let mut render_rng = rng::stream(derive_seed(spec.seed, "render", 0), Stream::Synthetic);

    let pixels_per_image = SYNTHETIC_SHAPE.len();
    let render: Vec<[f64; LATENT_DIM]> = (0..pixels_per_image)
        .map(|_| gaussian_vector(&mut render_rng).map(|x| x / (LATENT_DIM as f64).sqrt()))
        .collect();

    let class_means: Vec<[f64; LATENT_DIM]> = (0..spec.num_classes)
        .map(|_| unit_vector(&mut rng).map(|x| x * spec.class_separation))
        .collect();
    let offsets: Vec<[f64; LATENT_DIM]> = (0..spec.num_classes)
        .map(|_| unit_vector(&mut rng).map(|x| x * spec.subcluster_separation / 2.0))
        .collect();

    // (split, label, subcluster, latent)
    let mut drafts: Vec<(Split, usize, Subcluster, [f64; LATENT_DIM])> = Vec::new();
    for (split, per_class) in [
        (Split::Train, spec.examples_per_class),
        (Split::Test, spec.test_per_class()),
    ] {
        let mut split_drafts = Vec::with_capacity(per_class * spec.num_classes);
        for class in 0..spec.num_classes {
            let majority = spec.majority_count(per_class);
            for i in 0..per_class {
                let sub = if i < majority {
                    Subcluster::Majority
                } else {
                    Subcluster::Minority
                };
                let sign = if sub == Subcluster::Majority { 1.0 } else { -1.0 };
                let noise = gaussian_vector(&mut rng);
                let mut z = [0.0; LATENT_DIM];
                for d in 0..LATENT_DIM {
                    z[d] = class_means[class][d] + sign * offsets[class][d]
                        + spec.noise_scale * noise[d];
                }
                split_drafts.push((split, class, sub, z));
            }
        }
        split_drafts.shuffle(&mut rng);
        drafts.extend(split_drafts);
    }

    let n_train = spec.examples_per_class * spec.num_classes;
    let n_test = spec.test_per_class() * spec.num_classes;
    let mut pixels = Vec::with_capacity(drafts.len() * pixels_per_image);
    let mut examples = Vec::with_capacity(drafts.len());
    let mut subclusters = BTreeMap::new();
    let mut latents = BTreeMap::new();
    for (offset, (split, label, sub, z)) in drafts.into_iter().enumerate() {
        let (index, count) = match split {
            Split::Train => (offset, n_train),
            Split::Test => (offset - n_train, n_test),
        };
        let id = example_id(split, index, count);
        for row in &render {
            let v: f64 = row.iter().zip(&z).map(|(a, b)| a * b).sum();
            pixels.push((128.0 + RENDER_GAIN * v).round().clamp(0.0, 255.0) as u8);
        }
        subclusters.insert(id.clone(), sub);
        latents.insert(id.clone(), z);
        examples.push(ExampleRecord {
            id,
            label,
            split,
            offset,
        });
    }

    let spec_hash = io::hash_json(spec);
    let manifest = DatasetManifest {
        dataset_id: format!("synthetic-{}", &spec_hash[..16]),
        class_names: (0..spec.num_classes).map(|c| format!("class{c}")).collect(),
        image_shape: SYNTHETIC_SHAPE,
        source: DataSource::InMemory,
        examples,
    };
    let dataset = Dataset::new(manifest, ImageStore::new(SYNTHETIC_SHAPE, pixels)?)?;
    Ok(SyntheticDataset {
        dataset,
        subclusters,
        latents,
    })
}

/// Persists as a raw dataset directory plus `subclusters.json`.
pub fn save_synthetic(data: &SyntheticDataset, dir: &Path) -> Result<()> {
    loader::save_raw_dir(&data.dataset, dir)?;
    io::write_json(&dir.join(SUBCLUSTER_FILE), &data.subclusters)
}

pub fn load_subclusters(dir: &Path) -> Result<BTreeMap<String, Subcluster>> {
    io::read_json(&dir.join(SUBCLUSTER_FILE))
}
