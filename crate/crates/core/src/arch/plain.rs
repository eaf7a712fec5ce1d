use crate::arch::{Architecture, ArchitectureSpec};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Graph, Layout, Linear, Var};

pub(super) const FAMILY: &str = "plain-cnn";

/// `depth` 3x3 conv+ReLU layers (channels `width · 2^i`), each but the last
/// followed by 2x2 max pooling, then global average pooling and a linear
/// classifier. No normalization.
pub struct PlainCnn {
    spec: ArchitectureSpec,
    layout: Layout,
    convs: Vec<(Conv2d, bool)>,
    classifier: Linear,
}

impl PlainCnn {
    pub fn build(spec: &ArchitectureSpec) -> Result<Box<dyn Architecture>> {
        if spec.width == 0 || spec.depth == 0 {
            return Err(Error::validation(
                "architecture",
                "plain-cnn needs width >= 1 and depth >= 1",
            ));
        }
        let mut layout = Layout::default();
        let mut convs = Vec::with_capacity(spec.depth);
        let mut channels = spec.input_shape.channels;
        let mut side = spec.input_shape.height.min(spec.input_shape.width);
        for i in 0..spec.depth {
            let out = spec.width << i;
            let conv = layout.conv2d(&format!("conv{i}"), channels, out, 3, 1, 1, true);
            let pool = i + 1 < spec.depth && side >= 2;
            if pool {
                side /= 2;
            }
            convs.push((conv, pool));
            channels = out;
        }
        let classifier = layout.linear("fc", channels, spec.num_classes);
        Ok(Box::new(Self {
            spec: spec.clone(),
            layout,
            convs,
            classifier,
        }))
    }
}

impl Architecture for PlainCnn {
    fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn forward(&self, g: &mut Graph<'_>, input: Var) -> Var {
        let mut x = input;
        for (conv, pool) in &self.convs {
            x = g.conv(x, conv);
            x = g.relu(x);
            if *pool {
                x = g.max_pool2(x);
            }
        }
        let pooled = g.global_avg_pool(x);
        g.linear(pooled, &self.classifier)
    }
}
