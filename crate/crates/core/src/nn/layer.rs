use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-sample activation shape.
///
/// Signals are `[channels, length]`; dense layers flatten to `Flat(features)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleShape {
    Signal { channels: usize, length: usize },
    Flat(usize),
}

impl SampleShape {
    pub fn size(&self) -> usize {
        match *self {
            SampleShape::Signal { channels, length } => channels * length,
            SampleShape::Flat(n) => n,
        }
    }

    /// Channel count as seen by batch norm (features for flat shapes).
    pub fn channels(&self) -> usize {
        match *self {
            SampleShape::Signal { channels, .. } => channels,
            SampleShape::Flat(n) => n,
        }
    }

    pub fn length(&self) -> usize {
        match *self {
            SampleShape::Signal { length, .. } => length,
            SampleShape::Flat(_) => 1,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            SampleShape::Signal { channels, length } => vec![channels, length],
            SampleShape::Flat(n) => vec![n],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d {
        filters: usize,
        kernel: usize,
        stride: usize,
        /// Symmetric zero padding on each side; 0 is "valid" convolution.
        #[serde(default)]
        padding: usize,
    },
    BatchNorm,
    Relu,
    Tanh,
    MaxPool1d {
        width: usize,
    },
    Dropout {
        p: f64,
    },
    Dense {
        units: usize,
    },
    Softmax,
}

impl LayerSpec {
    pub fn conv(filters: usize, kernel: usize) -> Self {
        LayerSpec::Conv1d {
            filters,
            kernel,
            stride: 1,
            padding: 0,
        }
    }

    pub fn dense(units: usize) -> Self {
        LayerSpec::Dense { units }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::BatchNorm => "batchnorm",
            LayerSpec::Relu => "relu",
            LayerSpec::Tanh => "tanh",
            LayerSpec::MaxPool1d { .. } => "maxpool1d",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Softmax => "softmax",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Conv1d {
                filters,
                kernel,
                stride,
                ..
            } => {
                if filters == 0 || kernel == 0 || stride == 0 {
                    return Err(Error::Config(format!(
                        "conv1d needs filters, kernel and stride >= 1 (got {filters}, {kernel}, {stride})"
                    )));
                }
            }
            LayerSpec::MaxPool1d { width: 0 } => {
                return Err(Error::Config("maxpool1d width must be >= 1".into()));
            }
            LayerSpec::Dropout { p } if !(0.0..1.0).contains(&p) => {
                return Err(Error::Config(format!(
                    "dropout probability must lie in [0, 1), got {p}"
                )));
            }
            LayerSpec::Dense { units: 0 } => {
                return Err(Error::Config("dense layer needs at least one neuron".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// Output shape for a given input shape.
    pub fn output_shape(&self, input: SampleShape) -> Result<SampleShape> {
        self.validate()?;
        match *self {
            LayerSpec::Conv1d {
                filters,
                kernel,
                stride,
                padding,
            } => {
                let SampleShape::Signal { length, .. } = input else {
                    return Err(Error::Shape("conv1d expects a [channels, length] input".into()));
                };
                let padded = length + 2 * padding;
                if padded < kernel {
                    return Err(Error::Shape(format!(
                        "conv1d kernel {kernel} longer than padded input {padded}"
                    )));
                }
                Ok(SampleShape::Signal {
                    channels: filters,
                    length: (padded - kernel) / stride + 1,
                })
            }
            LayerSpec::MaxPool1d { width } => {
                let SampleShape::Signal { channels, length } = input else {
                    return Err(Error::Shape("maxpool1d expects a [channels, length] input".into()));
                };
                if length / width == 0 {
                    return Err(Error::Shape(format!(
                        "maxpool1d width {width} reduces length {length} below 1"
                    )));
                }
                Ok(SampleShape::Signal {
                    channels,
                    length: length / width,
                })
            }
            LayerSpec::Dense { units } => Ok(SampleShape::Flat(units)),
            LayerSpec::Softmax => Ok(SampleShape::Flat(input.size())),
            LayerSpec::BatchNorm | LayerSpec::Relu | LayerSpec::Tanh | LayerSpec::Dropout { .. } => Ok(input),
        }
    }

    /// Number of trainable scalars given the input shape.
    pub fn param_count(&self, input: SampleShape) -> usize {
        match *self {
            LayerSpec::Conv1d { filters, kernel, .. } => filters * input.channels() * kernel + filters,
            LayerSpec::Dense { units } => units * input.size() + units,
            LayerSpec::BatchNorm => 2 * input.channels(),
            _ => 0,
        }
    }

    /// Number of non-trainable running statistics.
    pub fn state_count(&self, input: SampleShape) -> usize {
        match self {
            LayerSpec::BatchNorm => 2 * input.channels(),
            _ => 0,
        }
    }
}
