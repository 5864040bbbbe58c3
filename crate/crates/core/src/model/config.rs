use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frequency::FrequencyMethod;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Positional {
    /// Fixed 2-D sinusoidal table.
    Sinusoidal,
    /// Trainable table initialized near zero.
    Learned,
}

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Square input side in pixels.
    pub image_size: usize,
    /// One stride-2 3×3 conv stage per entry; the total stride is `2^len`.
    pub backbone_channels: Vec<usize>,
    pub d_model: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub mlp_hidden: usize,
    /// `None` removes the frequency branch (spatial-only baseline).
    pub frequency: Option<FrequencyMethod>,
    pub freq_channels: usize,
    pub positional: Positional,
    /// Row-wise normalization before attention and MLP blocks.
    pub pre_norm: bool,
    /// Adds a fixed 2-D sinusoidal table to `f_s` on the key side of the
    /// decoder's cross-attention, so queries can address image locations.
    pub cross_key_pos: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 64,
            backbone_channels: vec![8, 16, 32],
            d_model: 32,
            heads: 4,
            encoder_layers: 2,
            decoder_layers: 2,
            mlp_hidden: 64,
            frequency: Some(FrequencyMethod::Dwt),
            freq_channels: 8,
            positional: Positional::Sinusoidal,
            pre_norm: false,
            cross_key_pos: true,
        }
    }
}

impl ModelConfig {
    pub fn total_stride(&self) -> usize {
        1 << self.backbone_channels.len()
    }

    /// Side of the backbone's output grid.
    pub fn grid(&self) -> usize {
        self.image_size / self.total_stride()
    }

    pub fn backbone_out(&self) -> usize {
        *self.backbone_channels.last().unwrap_or(&3)
    }

    /// Number of stride-2 stages that reduce the frequency map to the grid.
    /// Zero means a single 1×1 stage.
    pub fn freq_stages(&self) -> Result<usize> {
        let Some(method) = self.frequency else { return Ok(0) };
        let side = method.output_size(self.image_size);
        let grid = self.grid();
        if side % grid != 0 || !(side / grid).is_power_of_two() {
            return Err(Error::invalid(format!(
                "frequency map side {side} cannot be reduced to grid {grid} by stride-2 stages"
            )));
        }
        Ok((side / grid).trailing_zeros() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.backbone_channels.is_empty() || self.backbone_channels.contains(&0) {
            return Err(Error::invalid("backbone needs at least one non-empty stage"));
        }
        if self.image_size == 0 || self.image_size % self.total_stride() != 0 {
            return Err(Error::invalid(format!(
                "image size {} is not divisible by backbone stride {}",
                self.image_size,
                self.total_stride()
            )));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::invalid(format!(
                "d_model {} must be divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 || self.mlp_hidden == 0 {
            return Err(Error::invalid("encoder, decoder and MLP sizes must be positive"));
        }
        if let Some(m) = self.frequency {
            m.validate(self.image_size, self.image_size)?;
            if self.freq_channels == 0 {
                return Err(Error::invalid("freq_channels must be positive"));
            }
        }
        self.freq_stages()?;
        Ok(())
    }
}
