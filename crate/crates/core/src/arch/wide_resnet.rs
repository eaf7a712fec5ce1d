use crate::arch::{Architecture, ArchitectureSpec};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv2d, Graph, Layout, Linear, Var};

pub(super) const FAMILY: &str = "wide-resnet-small";

struct Block {
    bn1: BatchNorm,
    conv1: Conv2d,
    bn2: BatchNorm,
    conv2: Conv2d,
    shortcut: Option<Conv2d>,
}

/// Pre-activation wide residual network. `depth = 6n + 4` gives `n` blocks
/// in each of three stages of widths `16·width`, `32·width`, `64·width`;
/// stages two and three downsample by 2.
pub struct WideResNetSmall {
    spec: ArchitectureSpec,
    layout: Layout,
    stem: Conv2d,
    blocks: Vec<Block>,
    final_bn: BatchNorm,
    classifier: Linear,
}

impl WideResNetSmall {
    pub fn build(spec: &ArchitectureSpec) -> Result<Box<dyn Architecture>> {
        if spec.depth < 10 || !(spec.depth - 4).is_multiple_of(6) || spec.width == 0 {
            return Err(Error::validation(
                "architecture",
                format!(
                    "wide-resnet-small needs depth = 6n+4 with n >= 1 and width >= 1, got depth {} width {}",
                    spec.depth, spec.width
                ),
            ));
        }
        let per_stage = (spec.depth - 4) / 6;
        let mut layout = Layout::default();
        let stem = layout.conv2d("stem", spec.input_shape.channels, 16, 3, 1, 1, false);
        let mut blocks = Vec::new();
        let mut channels = 16;
        for (stage, base) in [16usize, 32, 64].into_iter().enumerate() {
            let out = base * spec.width;
            for b in 0..per_stage {
                let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                let name = format!("stage{stage}.block{b}");
                let bn1 = layout.batch_norm(&format!("{name}.bn1"), channels);
                let conv1 = layout.conv2d(&format!("{name}.conv1"), channels, out, 3, stride, 1, false);
                let bn2 = layout.batch_norm(&format!("{name}.bn2"), out);
                let conv2 = layout.conv2d(&format!("{name}.conv2"), out, out, 3, 1, 1, false);
                let shortcut = (stride != 1 || channels != out).then(|| {
                    layout.conv2d(&format!("{name}.shortcut"), channels, out, 1, stride, 0, false)
                });
                blocks.push(Block {
                    bn1,
                    conv1,
                    bn2,
                    conv2,
                    shortcut,
                });
                channels = out;
            }
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

impl Architecture for WideResNetSmall {
    fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn forward(&self, g: &mut Graph<'_>, input: Var) -> Var {
        let mut x = g.conv(input, &self.stem);
        for block in &self.blocks {
            let pre = g.batch_norm(x, &block.bn1);
            let pre = g.relu(pre);
            let h = g.conv(pre, &block.conv1);
            let h = g.batch_norm(h, &block.bn2);
            let h = g.relu(h);
            let h = g.conv(h, &block.conv2);
            let skip = match &block.shortcut {
                Some(proj) => g.conv(pre, proj),
                None => x,
            };
            x = g.add(h, skip);
        }
        let x = g.batch_norm(x, &self.final_bn);
        let x = g.relu(x);
        let pooled = g.global_avg_pool(x);
        g.linear(pooled, &self.classifier)
    }
}
