use crate::arch::{Architecture, ArchitectureSpec};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv2d, Graph, Layout, Linear, Var};

pub(super) const FAMILY: &str = "densenet-small";

struct DenseLayer {
    bn: BatchNorm,
    conv: Conv2d,
}

struct Transition {
    bn: BatchNorm,
    conv: Conv2d,
}

/// Three dense blocks of `depth` BN-ReLU-Conv3x3 layers with growth rate
/// `width`, joined by compressing (0.5) transitions with 2x2 average pooling.
pub struct DenseNetSmall {
    spec: ArchitectureSpec,
    layout: Layout,
    stem: Conv2d,
    blocks: Vec<(Vec<DenseLayer>, Option<Transition>)>,
    final_bn: BatchNorm,
    classifier: Linear,
}

impl DenseNetSmall {
    pub fn build(spec: &ArchitectureSpec) -> Result<Box<dyn Architecture>> {
        if spec.width == 0 || spec.depth == 0 {
            return Err(Error::validation(
                "architecture",
                "densenet-small needs growth (width) >= 1 and layers per block (depth) >= 1",
            ));
        }
        let growth = spec.width;
        let mut layout = Layout::default();
        let mut channels = 2 * growth;
        let stem = layout.conv2d("stem", spec.input_shape.channels, channels, 3, 1, 1, false);
        let mut blocks = Vec::new();
        for b in 0..3 {
            let mut layers = Vec::with_capacity(spec.depth);
            for l in 0..spec.depth {
                let name = format!("block{b}.layer{l}");
                layers.push(DenseLayer {
                    bn: layout.batch_norm(&format!("{name}.bn"), channels),
                    conv: layout.conv2d(&format!("{name}.conv"), channels, growth, 3, 1, 1, false),
                });
                channels += growth;
            }
            let transition = (b < 2).then(|| {
                let out = channels / 2;
                let t = Transition {
                    bn: layout.batch_norm(&format!("transition{b}.bn"), channels),
                    conv: layout.conv2d(&format!("transition{b}.conv"), channels, out, 1, 1, 0, false),
                };
                channels = out;
                t
            });
            blocks.push((layers, transition));
        }
        let final_bn = layout.batch_norm("final_bn", channels);
        let classifier = layout.linear("fc", channels, spec.num_classes);
        Ok(Box::new(Self {
            spec: spec.clone(),
            layout,
            stem,
            blocks,
            final_bn,
            classifier,
        }))
    }
}

impl Architecture for DenseNetSmall {
    fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn forward(&self, g: &mut Graph<'_>, input: Var) -> Var {
        let mut x = g.conv(input, &self.stem);
        for (layers, transition) in &self.blocks {
            for layer in layers {
                let h = g.batch_norm(x, &layer.bn);
                let h = g.relu(h);
                let h = g.conv(h, &layer.conv);
                x = g.concat(&[x, h]);
            }
            if let Some(t) = transition {
                let h = g.batch_norm(x, &t.bn);
                let h = g.relu(h);
                let h = g.conv(h, &t.conv);
                x = g.avg_pool2(h);
            }
        }
        let x = g.batch_norm(x, &self.final_bn);
        let x = g.relu(x);
        let pooled = g.global_avg_pool(x);
        g.linear(pooled, &self.classifier)
    }
}
