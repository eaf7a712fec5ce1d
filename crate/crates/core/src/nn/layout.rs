//! Parameter layout: the list of tensors a network owns, with their
//! initialization rule, recorded once when an architecture is built.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub const CLASSIFIER_INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Normal with standard deviation `sqrt(2 / fan_in)`.
    HeNormal { fan_in: usize },
    Uniform { bound: f64 },
    Normal { std: f64 },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    /// Whether weight decay applies.
    pub decay: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferSpec {
    pub name: String,
    pub len: usize,
    pub fill: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub decay: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Buffer {
    pub name: String,
    pub data: Vec<f64>,
}

/// Learnable parameters plus non-learnable running statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub params: Vec<ParamTensor>,
    pub buffers: Vec<Buffer>,
}

impl ModelState {
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub weight: usize,
    pub bias: Option<usize>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct BatchNorm {
    pub scale: usize,
    pub shift: usize,
    pub running_mean: usize,
    pub running_var: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub in_features: usize,
    pub out_features: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub params: Vec<ParamSpec>,
    pub buffers: Vec<BufferSpec>,
}

impl Layout {
    fn param(&mut self, name: String, shape: Vec<usize>, init: Init, decay: bool) -> usize {
        self.params.push(ParamSpec {
            name,
            shape,
            init,
            decay,
        });
        self.params.len() - 1
    }

    fn buffer(&mut self, name: String, len: usize, fill: f64) -> usize {
        self.buffers.push(BufferSpec { name, len, fill });
        self.buffers.len() - 1
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv2d(
        &mut self,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Conv2d {
        let fan_in = in_channels * kernel * kernel;
        let weight = self.param(
            format!("{name}.weight"),
            vec![out_channels, in_channels, kernel, kernel],
            Init::HeNormal { fan_in },
            true,
        );
        let bias = bias.then(|| {
            self.param(format!("{name}.bias"), vec![out_channels], Init::Zeros, true)
        });
        Conv2d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn batch_norm(&mut self, name: &str, channels: usize) -> BatchNorm {
        BatchNorm {
            scale: self.param(format!("{name}.scale"), vec![channels], Init::Ones, false),
            shift: self.param(format!("{name}.shift"), vec![channels], Init::Zeros, false),
            running_mean: self.buffer(format!("{name}.running_mean"), channels, 0.0),
            running_var: self.buffer(format!("{name}.running_var"), channels, 1.0),
            channels,
        }
    }

    /// Classifier head. Weights start small so initial predictions are
    /// close to uniform.
    pub fn linear(&mut self, name: &str, in_features: usize, out_features: usize) -> Linear {
        Linear {
            weight: self.param(
                format!("{name}.weight"),
                vec![out_features, in_features],
                Init::Normal { std: CLASSIFIER_INIT_STD },
                true,
            ),
            bias: self.param(format!("{name}.bias"), vec![out_features], Init::Zeros, true),
            in_features,
            out_features,
        }
    }

    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .map(|p| p.shape.iter().product::<usize>())
            .sum()
    }

    /// Samples a fresh state. Parameters are drawn in declaration order.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ModelState {
        let params = self
            .params
            .iter()
            .map(|spec| {
                let n = spec.shape.iter().product();
                let data = match spec.init {
                    Init::HeNormal { fan_in } => {
                        let std = (2.0 / fan_in as f64).sqrt();
                        (0..n)
                            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                            .collect()
                    }
                    Init::Uniform { bound } => {
                        (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                    }
                    Init::Normal { std } => (0..n)
                        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                        .collect(),
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                };
                ParamTensor {
                    name: spec.name.clone(),
                    shape: spec.shape.clone(),
                    data,
                    decay: spec.decay,
                }
            })
            .collect();
        let buffers = self
            .buffers
            .iter()
            .map(|b| Buffer {
                name: b.name.clone(),
                data: vec![b.fill; b.len],
            })
            .collect();
        ModelState { params, buffers }
    }
}
