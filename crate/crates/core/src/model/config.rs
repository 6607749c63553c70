use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Backbone family and its shape parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Backbone {
    /// Stack of 3x3 conv + ReLU blocks, one per entry. Strides default to 2.
    TinyConv {
        stage_channels: Vec<usize>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        stage_strides: Vec<usize>,
    },
    /// Bottleneck ResNet with [3, 4, 6, 3] blocks and `base_width` stem channels
    /// (64 gives the standard 2048-channel output).
    Resnet50Like { base_width: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub backbone: Backbone,
    /// Square input side length S.
    pub input_size: usize,
    /// Channels C of the last convolutional stage.
    pub feature_channels: usize,
    /// Spatial grid (H, W) of the last convolutional stage.
    pub feature_grid: (usize, usize),
    /// Projector widths including its input: `[C, hidden.., D]`.
    pub projector_dims: Vec<usize>,
}

pub(crate) fn tiny_stride(strides: &[usize], stage: usize) -> usize {
    strides.get(stage).copied().unwrap_or(2)
}

impl EncoderConfig {
    /// Desk-scale default: 64x64 input, four stride-2 blocks, C=64 on a 4x4 grid.
    pub fn tiny() -> Self {
        EncoderConfig {
            backbone: Backbone::TinyConv {
                stage_channels: vec![16, 32, 64, 64],
                stage_strides: Vec::new(),
            },
            input_size: 64,
            feature_channels: 64,
            feature_grid: (4, 4),
            projector_dims: vec![64, 128, 128],
        }
    }

    /// ResNet-50-shaped trunk at 224x224 with the 2048x2048x256 projector.
    pub fn full_scale() -> Self {
        EncoderConfig {
            backbone: Backbone::Resnet50Like { base_width: 64 },
            input_size: 224,
            feature_channels: 2048,
            feature_grid: (7, 7),
            projector_dims: vec![2048, 2048, 256],
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.projector_dims.last().copied().unwrap_or(0)
    }

    /// Channel count and grid the backbone actually produces for `input_size`.
    pub fn derived_output(&self) -> Result<(usize, (usize, usize))> {
        let conv_out = |s: usize, k: usize, stride: usize, pad: usize| -> Result<usize> {
            if s + 2 * pad < k {
                return Err(Error::Config(format!("input {} too small for backbone", self.input_size)));
            }
            Ok((s + 2 * pad - k) / stride + 1)
        };
        match &self.backbone {
            Backbone::TinyConv { stage_channels, stage_strides } => {
                if stage_channels.is_empty() || stage_channels.contains(&0) {
                    return Err(Error::Config("tiny-conv needs nonzero stage widths".into()));
                }
                if !stage_strides.is_empty()
                    && (stage_strides.len() != stage_channels.len() || stage_strides.contains(&0))
                {
                    return Err(Error::Config(
                        "tiny-conv strides must be positive, one per stage".into(),
                    ));
                }
                let mut s = self.input_size;
                for i in 0..stage_channels.len() {
                    s = conv_out(s, 3, tiny_stride(stage_strides, i), 1)?;
                }
                Ok((*stage_channels.last().unwrap(), (s, s)))
            }
            Backbone::Resnet50Like { base_width } => {
                if *base_width == 0 {
                    return Err(Error::Config("resnet base width must be positive".into()));
                }
                let mut s = conv_out(self.input_size, 7, 2, 3)?;
                s = conv_out(s, 3, 2, 1)?;
                for _ in 0..3 {
                    s = conv_out(s, 3, 2, 1)?;
                }
                Ok((base_width * 8 * 4, (s, s)))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.feature_channels == 0 {
            return Err(Error::Config("input size and channels must be positive".into()));
        }
        let (c, grid) = self.derived_output()?;
        if c != self.feature_channels || grid != self.feature_grid {
            return Err(Error::Config(format!(
                "backbone produces C={c} grid {grid:?}, config declares C={} grid {:?}",
                self.feature_channels, self.feature_grid
            )));
        }
        if matches!(self.backbone, Backbone::TinyConv { .. }) && (grid.0 < 4 || grid.1 < 4) {
            return Err(Error::Config(format!(
                "tiny-conv grid {grid:?} too small; need at least 4x4"
            )));
        }
        if self.projector_dims.len() < 2 || self.projector_dims.contains(&0) {
            return Err(Error::Config(format!(
                "projector dims {:?} need input and output widths",
                self.projector_dims
            )));
        }
        Ok(())
    }
}
