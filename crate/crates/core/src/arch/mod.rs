//! Network architectures, selected at runtime by family name.
//!
//! Every family implements [`Architecture`] and registers a builder in an
//! [`ArchRegistry`]. The built-in registry knows `plain-cnn`,
//! `wide-resnet-small` and `densenet-small`; callers may register more.

mod densenet;
mod plain;
mod wide_resnet;

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::data::ImageShape;
use crate::error::{Error, Result};
use crate::io;
use crate::nn::{Graph, Layout, ModelState, Var};
use crate::rng::{self, Stream};

pub use densenet::DenseNetSmall;
pub use plain::PlainCnn;
pub use wide_resnet::WideResNetSmall;

/// Declarative description of a network. `width` and `depth` are
/// interpreted per family (see each family's docs).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub family: String,
    pub width: usize,
    pub depth: usize,
    pub num_classes: usize,
    pub input_shape: ImageShape,
}

impl ArchitectureSpec {
    pub fn new(family: &str, width: usize, depth: usize, num_classes: usize, input: ImageShape) -> Self {
        Self {
            family: family.to_owned(),
            width,
            depth,
            num_classes,
            input_shape: input,
        }
    }

    /// Stable identifier of the spec: `<family>-<16 hex digits>`.
    pub fn fingerprint(&self) -> String {
        format!("{}-{}", self.family, &io::hash_json(self)[..16])
    }

    /// Short human label used in report pair names.
    pub fn label(&self) -> String {
        format!("{}-w{}-d{}", self.family, self.width, self.depth)
    }
}

pub trait Architecture: Send + Sync {
    fn spec(&self) -> &ArchitectureSpec;

    fn layout(&self) -> &Layout;

    /// Maps an input batch `[n, c, h, w]` to logits `[n, num_classes]`.
    fn forward(&self, graph: &mut Graph<'_>, input: Var) -> Var;

    fn param_count(&self) -> usize {
        self.layout().param_count()
    }

    fn fingerprint(&self) -> String {
        self.spec().fingerprint()
    }

    /// Fresh parameters drawn from the seed's init stream.
    fn init(&self, seed: u64) -> ModelState {
        let mut rng = rng::stream(seed, Stream::Init);
        self.layout().init(&mut rng)
    }
}

pub type ArchBuilder = fn(&ArchitectureSpec) -> Result<Box<dyn Architecture>>;

#[derive(Clone, Default)]
pub struct ArchRegistry {
    builders: BTreeMap<String, ArchBuilder>,
}

impl ArchRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register(plain::FAMILY, PlainCnn::build);
        reg.register(wide_resnet::FAMILY, WideResNetSmall::build);
        reg.register(densenet::FAMILY, DenseNetSmall::build);
        reg
    }

    pub fn register(&mut self, family: &str, builder: ArchBuilder) {
        self.builders.insert(family.to_owned(), builder);
    }

    pub fn families(&self) -> impl Iterator<Item = &str> {
        self.builders.keys().map(String::as_str)
    }

    pub fn build(&self, spec: &ArchitectureSpec) -> Result<Box<dyn Architecture>> {
        if spec.num_classes < 2 {
            return Err(Error::validation("num_classes", "need at least 2 classes"));
        }
        let builder = self.builders.get(&spec.family).ok_or_else(|| {
            Error::validation(
                "family",
                format!(
                    "unknown architecture family {:?} (known: {})",
                    spec.family,
                    self.families().collect::<Vec<_>>().join(", ")
                ),
            )
        })?;
        builder(spec)
    }
}

fn builtins() -> &'static ArchRegistry {
    static REGISTRY: OnceLock<ArchRegistry> = OnceLock::new();
    REGISTRY.get_or_init(ArchRegistry::with_builtins)
}

/// Builds `spec` from the built-in registry.
pub fn build(spec: &ArchitectureSpec) -> Result<Box<dyn Architecture>> {
    builtins().build(spec)
}
