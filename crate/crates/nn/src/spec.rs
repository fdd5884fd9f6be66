//! Declarative network architecture descriptions.

use sha2::{Digest, Sha256};

use crate::error::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// One layer of a feed-forward network.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LayerSpec {
    /// Fully connected layer `act(W x + b)` on `[batch, inputs]`.
    Dense {
        inputs: usize,
        outputs: usize,
        activation: Activation,
    },
    /// `relu(x + W2 relu(W1 x + b1) + b2)` with square weights.
    Residual { width: usize },
    /// Per-group localized input network.
    ///
    /// The input row is a concatenation of field blocks; block `b` holds
    /// `groups * blocks[b]` values, and group `g` owns the contiguous slice
    /// `[g * blocks[b], (g + 1) * blocks[b])` of every block. Each group is
    /// mapped by its own dense layer to `outputs_per_group` units and the
    /// group outputs are concatenated.
    Hierarchical {
        groups: usize,
        blocks: Vec<usize>,
        outputs_per_group: usize,
        activation: Activation,
    },
    /// Valid-padding, stride-1 cross-correlation on `[batch, C, H, W]`.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        activation: Activation,
    },
    /// Non-overlapping max pooling; spatial dims must divide by `window`.
    MaxPool2d { window: usize },
    /// `[batch, ...] -> [batch, product]`.
    Flatten,
}

impl LayerSpec {
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |msg: String| Err(NnError::InvalidSpec(msg));
        match self {
            LayerSpec::Dense {
                inputs, outputs, ..
            } => {
                if input != [*inputs] {
                    return bad(format!("dense expects [{inputs}], got {input:?}"));
                }
                Ok(vec![*outputs])
            }
            LayerSpec::Residual { width } => {
                if input != [*width] {
                    return bad(format!("residual block expects [{width}], got {input:?}"));
                }
                Ok(vec![*width])
            }
            LayerSpec::Hierarchical {
                groups,
                blocks,
                outputs_per_group,
                ..
            } => {
                let expected = groups * blocks.iter().sum::<usize>();
                if *groups == 0 || input != [expected] {
                    return bad(format!(
                        "hierarchical layer expects [{expected}], got {input:?}"
                    ));
                }
                Ok(vec![groups * outputs_per_group])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => match input {
                [c, h, w] if c == in_channels && *h >= *kernel && *w >= *kernel && *kernel > 0 => {
                    Ok(vec![*out_channels, h - kernel + 1, w - kernel + 1])
                }
                _ => bad(format!(
                    "conv expects [{in_channels}, >={kernel}, >={kernel}], got {input:?}"
                )),
            },
            LayerSpec::MaxPool2d { window } => match input {
                [c, h, w] if *window > 0 && h % window == 0 && w % window == 0 => {
                    Ok(vec![*c, h / window, w / window])
                }
                _ => bad(format!(
                    "max pool window {window} does not tile input {input:?}"
                )),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Shapes of this layer's parameter tensors, in storage order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match self {
            LayerSpec::Dense {
                inputs, outputs, ..
            } => vec![vec![*outputs, *inputs], vec![*outputs]],
            LayerSpec::Residual { width } => vec![
                vec![*width, *width],
                vec![*width],
                vec![*width, *width],
                vec![*width],
            ],
            LayerSpec::Hierarchical {
                groups,
                blocks,
                outputs_per_group,
                ..
            } => {
                let per_group: usize = blocks.iter().sum();
                vec![
                    vec![*groups, *outputs_per_group, per_group],
                    vec![*groups, *outputs_per_group],
                ]
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                vec![*out_channels, *in_channels, *kernel, *kernel],
                vec![*out_channels],
            ],
            LayerSpec::MaxPool2d { .. } | LayerSpec::Flatten => Vec::new(),
        }
    }

    /// Multiply-accumulate count of one forward pass for one sample.
    pub fn macs(&self, input: &[usize]) -> u64 {
        match self {
            LayerSpec::Dense {
                inputs, outputs, ..
            } => (inputs * outputs) as u64,
            LayerSpec::Residual { width } => 2 * (width * width) as u64,
            LayerSpec::Hierarchical {
                groups,
                blocks,
                outputs_per_group,
                ..
            } => (groups * blocks.iter().sum::<usize>() * outputs_per_group) as u64,
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                let out_h = input[1] + 1 - kernel;
                let out_w = input[2] + 1 - kernel;
                (out_h * out_w * kernel * kernel * in_channels * out_channels) as u64
            }
            LayerSpec::MaxPool2d { .. } | LayerSpec::Flatten => 0,
        }
    }
}

/// A validated feed-forward architecture: per-sample input shape plus layers.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NetworkSpec {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    shapes: Vec<Vec<usize>>,
}

impl NetworkSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(NnError::InvalidSpec(format!(
                "input shape {input_shape:?} must be non-empty and positive"
            )));
        }
        let mut shapes = vec![input_shape.clone()];
        for layer in &layers {
            let next = layer.output_shape(shapes.last().expect("non-empty"))?;
            shapes.push(next);
        }
        Ok(Self {
            input_shape,
            layers,
            shapes,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("non-empty")
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Per-sample shape entering layer `index` (index `layers().len()` is the output).
    pub fn shape_at(&self, index: usize) -> &[usize] {
        &self.shapes[index]
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.param_shapes())
            .map(|s| s.iter().product::<usize>())
            .sum()
    }

    /// Forward multiply-accumulate count for a single sample.
    pub fn count_macs(&self) -> u64 {
        self.layers
            .iter()
            .zip(&self.shapes)
            .map(|(layer, shape)| layer.macs(shape))
            .sum()
    }

    /// Stable 64-bit fingerprint of the architecture, used by checkpoints.
    pub fn fingerprint(&self) -> u64 {
        let canonical = format!("{:?}|{:?}", self.input_shape, self.layers);
        let digest = Sha256::digest(canonical.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}
