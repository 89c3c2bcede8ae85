use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::tensor::ConvGeometry;

/// Kernel size and stride of a convolution stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// One hidden stage of the feature extractor; each is followed by a ReLU.
///
/// Serialized as a bare width for dense layers and as
/// `{"conv": {"channels": .., "kernel": .., "stride": ..}}` for convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LayerSpec {
    Dense(usize),
    Conv { conv: ConvSpec },
}

impl LayerSpec {
    pub fn conv(channels: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec::Conv {
            conv: ConvSpec {
                channels,
                kernel,
                stride,
            },
        }
    }
}

/// Shape of a classifier `f = h ∘ g`: `g` maps `R^p` to ReLU features in
/// `R^q` through the hidden stages plus a final dense feature layer of width
/// `q`, and `h` is a single affine layer to `k` logits followed by softmax.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    #[serde(rename = "p")]
    pub input_dim: usize,
    #[serde(rename = "q")]
    pub feature_dim: usize,
    #[serde(rename = "k")]
    pub num_classes: usize,
    pub hidden: Vec<LayerSpec>,
    pub seed: u64,
}

/// A hidden stage with its input and output sizes resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResolvedLayer {
    Dense { inputs: usize, outputs: usize },
    Conv(ConvGeometry),
}

impl ResolvedLayer {
    pub fn inputs(&self) -> usize {
        match self {
            ResolvedLayer::Dense { inputs, .. } => *inputs,
            ResolvedLayer::Conv(g) => g.input_len(),
        }
    }

    pub fn outputs(&self) -> usize {
        match self {
            ResolvedLayer::Dense { outputs, .. } => *outputs,
            ResolvedLayer::Conv(g) => g.output_len(),
        }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        match self {
            ResolvedLayer::Dense { inputs, outputs } => vec![*outputs, *inputs],
            ResolvedLayer::Conv(g) => vec![g.out_channels, g.in_channels, g.kernel, g.kernel],
        }
    }

    pub fn bias_len(&self) -> usize {
        match self {
            ResolvedLayer::Dense { outputs, .. } => *outputs,
            ResolvedLayer::Conv(g) => g.out_channels,
        }
    }

    pub fn fan_in(&self) -> usize {
        match self {
            ResolvedLayer::Dense { inputs, .. } => *inputs,
            ResolvedLayer::Conv(g) => g.fan_in(),
        }
    }
}

impl NetworkSpec {
    pub fn dense(input_dim: usize, feature_dim: usize, num_classes: usize, hidden: &[usize], seed: u64) -> Self {
        NetworkSpec {
            input_dim,
            feature_dim,
            num_classes,
            hidden: hidden.iter().copied().map(LayerSpec::Dense).collect(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.extractor_layers().map(|_| ())
    }

    /// Resolves every extractor stage, the final `q`-wide feature layer
    /// included.
    ///
    /// A convolution consumes a channel-major image. Its geometry carries
    /// over from a preceding convolution; otherwise the incoming vector must
    /// have a square length and is read as a single-channel image.
    pub fn extractor_layers(&self) -> Result<Vec<ResolvedLayer>, ModelError> {
        let invalid = |msg: String| Err(ModelError::InvalidSpec(msg));
        if self.num_classes < 2 {
            return invalid(format!("k must be at least 2, got {}", self.num_classes));
        }
        if self.input_dim < 1 {
            return invalid("p must be at least 1".into());
        }
        if self.feature_dim < self.num_classes {
            return invalid(format!(
                "q ({}) must be at least k ({})",
                self.feature_dim, self.num_classes
            ));
        }

        let mut layers = Vec::with_capacity(self.hidden.len() + 1);
        let mut width = self.input_dim;
        let mut image: Option<(usize, usize, usize)> = None;
        for (i, layer) in self.hidden.iter().enumerate() {
            match *layer {
                LayerSpec::Dense(outputs) => {
                    if outputs == 0 {
                        return invalid(format!("hidden layer {i} has width 0"));
                    }
                    layers.push(ResolvedLayer::Dense { inputs: width, outputs });
                    width = outputs;
                    image = None;
                }
                LayerSpec::Conv { conv } => {
                    if conv.channels == 0 || conv.kernel == 0 || conv.stride == 0 {
                        return invalid(format!("conv layer {i} has a zero parameter"));
                    }
                    let (c, h, w) = match image {
                        Some(dims) => dims,
                        None => {
                            let side = (width as f64).sqrt().round() as usize;
                            if side * side != width {
                                return invalid(format!("conv layer {i} needs a square input, got {width} values"));
                            }
                            (1, side, side)
                        }
                    };
                    if conv.kernel > h || conv.kernel > w {
                        return invalid(format!(
                            "conv layer {i}: kernel {} larger than {h}x{w} input",
                            conv.kernel
                        ));
                    }
                    let geom = ConvGeometry {
                        in_channels: c,
                        height: h,
                        width: w,
                        out_channels: conv.channels,
                        kernel: conv.kernel,
                        stride: conv.stride,
                    };
                    layers.push(ResolvedLayer::Conv(geom));
                    width = geom.output_len();
                    image = Some((geom.out_channels, geom.out_height(), geom.out_width()));
                }
            }
        }
        layers.push(ResolvedLayer::Dense {
            inputs: width,
            outputs: self.feature_dim,
        });
        Ok(layers)
    }
}

/// Parses the command-line layer list, e.g. `mlp:64,32` or `conv4k3s1,16`.
///
/// Tokens are comma separated; a bare integer is a dense width and
/// `conv<C>k<K>s<S>` a convolution. A leading `mlp:` is accepted and `mlp:`
/// alone means no hidden layers.
pub fn parse_hidden(text: &str) -> Result<Vec<LayerSpec>, ModelError> {
    let body = text.trim();
    let body = body.strip_prefix("mlp:").unwrap_or(body);
    let bad = |tok: &str| ModelError::InvalidSpec(format!("unrecognized layer token '{tok}'"));
    body.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|tok| {
            if let Some(rest) = tok.strip_prefix("conv") {
                let (c, rest) = rest.split_once('k').ok_or_else(|| bad(tok))?;
                let (k, s) = rest.split_once('s').ok_or_else(|| bad(tok))?;
                let num = |v: &str| v.parse::<usize>().map_err(|_| bad(tok));
                Ok(LayerSpec::conv(num(c)?, num(k)?, num(s)?))
            } else {
                tok.parse().map(LayerSpec::Dense).map_err(|_| bad(tok))
            }
        })
        .collect()
}
