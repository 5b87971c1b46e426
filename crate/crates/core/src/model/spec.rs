use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::ImageShape;
use crate::error::{Error, Result};

/// How channels are grouped for normalization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormGroups {
    /// One group per channel (instance normalization).
    PerChannel,
    /// A fixed number of groups; must divide every block width.
    Groups(usize),
}

impl NormGroups {
    pub fn groups_for(&self, channels: usize) -> usize {
        match *self {
            NormGroups::PerChannel => channels,
            NormGroups::Groups(g) => g,
        }
    }
}

/// Architecture descriptor for a ConvNetD network.
///
/// Each block is conv3x3(pad 1, no bias) -> group norm -> ReLU -> 2x2 average
/// pool (stride 2, ceil on odd sizes). A linear classifier with bias maps the
/// flattened output of the last block to `class_count` logits.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub block_widths: Vec<usize>,
    pub input_shape: ImageShape,
    pub class_count: usize,
    pub norm: NormGroups,
}

/// Output size of the edge-replicated 2x2 stride-2 pool.
pub fn pooled(n: usize) -> usize {
    n.div_ceil(2)
}

impl ModelSpec {
    /// `depth` blocks of identical width with per-channel normalization.
    pub fn convnet(
        depth: usize,
        width: usize,
        input_shape: ImageShape,
        class_count: usize,
    ) -> Result<Self> {
        let spec = ModelSpec {
            block_widths: vec![width; depth],
            input_shape,
            class_count,
            norm: NormGroups::PerChannel,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn depth(&self) -> usize {
        self.block_widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_widths.is_empty() {
            return Err(Error::InvalidSpec("at least one block is required".into()));
        }
        if let Some(i) = self.block_widths.iter().position(|&w| w == 0) {
            return Err(Error::InvalidSpec(format!("block {i} has width 0")));
        }
        if self.class_count == 0 {
            return Err(Error::InvalidSpec("class_count must be positive".into()));
        }
        if self.input_shape.channels == 0 {
            return Err(Error::InvalidSpec(
                "input must have at least one channel".into(),
            ));
        }
        if self.input_shape.height == 0 || self.input_shape.width == 0 {
            let path = self
                .spatial_trace()
                .iter()
                .map(|(h, w)| format!("{h}x{w}"))
                .collect::<Vec<_>>()
                .join(" -> ");
            return Err(Error::InvalidSpec(format!(
                "spatial size collapses below 1x1 along {path}"
            )));
        }
        if let NormGroups::Groups(g) = self.norm {
            if g == 0 {
                return Err(Error::InvalidSpec("norm groups must be positive".into()));
            }
            if let Some(i) = self.block_widths.iter().position(|w| w % g != 0) {
                return Err(Error::InvalidSpec(format!(
                    "{g} norm groups do not divide width {} of block {i}",
                    self.block_widths[i]
                )));
            }
        }
        Ok(())
    }

    /// Spatial size entering each block, followed by the final pooled size.
    pub fn spatial_trace(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![(self.input_shape.height, self.input_shape.width)];
        for _ in 0..self.depth() {
            let (h, w) = *dims.last().unwrap();
            dims.push((pooled(h), pooled(w)));
        }
        dims
    }

    /// Shape of the last block's pooled activations.
    pub fn feature_shape(&self) -> ImageShape {
        let (h, w) = *self.spatial_trace().last().unwrap();
        ImageShape::new(*self.block_widths.last().unwrap(), h, w)
    }

    /// Classifier input size.
    pub fn flatten_dim(&self) -> usize {
        self.feature_shape().len()
    }

    pub fn block_input_channels(&self, block: usize) -> usize {
        if block == 0 {
            self.input_shape.channels
        } else {
            self.block_widths[block - 1]
        }
    }

    pub fn param_count(&self) -> usize {
        let mut total = 0;
        for (b, &w) in self.block_widths.iter().enumerate() {
            total += w * self.block_input_channels(b) * 9 + 2 * w;
        }
        total + self.class_count * self.flatten_dim() + self.class_count
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let widths = self
            .block_widths
            .iter()
            .map(|w| w.to_string())
            .collect::<Vec<_>>()
            .join(",");
        write!(
            f,
            "ConvNetD{}[{}]{}->{}",
            self.depth(),
            widths,
            self.input_shape,
            self.class_count
        )
    }
}
