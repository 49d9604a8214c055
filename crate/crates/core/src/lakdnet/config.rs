use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// Three-channel RGB input.
    Single,
    /// Two stacked RGB views from a dual-pixel sensor (six channels).
    DualPixel,
}

impl InputMode {
    pub fn channels(self) -> usize {
        match self {
            InputMode::Single => 3,
            InputMode::DualPixel => 6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockVariant {
    /// Large-kernel depth-wise/point-wise feature mixer.
    Lakd,
    /// Three 3x3 convolutions with dilation 1, 2 and 3 as the mixer.
    Dilated,
}

/// Architecture of a LaKDNet instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub base_channels: usize,
    pub block_counts: [usize; 4],
    pub mixer_kernel: usize,
    pub input_mode: InputMode,
    pub block_variant: BlockVariant,
    pub shortcut_inner: bool,
    pub shortcut_middle: bool,
    pub downsample_factor: usize,
}

impl Default for NetworkConfig {
    /// The desk-scale configuration: `C = 16`, blocks `[2, 3, 3, 4]`, 9x9 mixer.
    fn default() -> Self {
        NetworkConfig {
            base_channels: 16,
            block_counts: [2, 3, 3, 4],
            mixer_kernel: 9,
            input_mode: InputMode::Single,
            block_variant: BlockVariant::Lakd,
            shortcut_inner: true,
            shortcut_middle: true,
            downsample_factor: 2,
        }
    }
}

impl NetworkConfig {
    pub const LEVELS: usize = 4;

    pub fn tiny(base_channels: usize, mixer_kernel: usize) -> Self {
        NetworkConfig {
            base_channels,
            block_counts: [1, 1, 1, 1],
            mixer_kernel,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.base_channels < 4 || !self.base_channels.is_multiple_of(4) {
            return bad(format!(
                "base_channels {} must be a positive multiple of 4",
                self.base_channels
            ));
        }
        if self.block_counts.contains(&0) {
            return bad(format!("block counts {:?} must all be >= 1", self.block_counts));
        }
        if self.mixer_kernel.is_multiple_of(2) {
            return bad(format!("mixer_kernel {} must be odd", self.mixer_kernel));
        }
        if self.downsample_factor < 2 {
            return bad(format!(
                "downsample_factor {} must be at least 2",
                self.downsample_factor
            ));
        }
        Ok(())
    }

    /// Channels at level `level` (0-based): `C * 2^level`.
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn channel_schedule(&self) -> [usize; 4] {
        std::array::from_fn(|l| self.channels(l))
    }

    /// Spatial sizes must be divisible by this (three downsamplings).
    pub fn spatial_multiple(&self) -> usize {
        self.downsample_factor.pow(Self::LEVELS as u32 - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        let c = NetworkConfig::default();
        c.validate().unwrap();
        assert_eq!(c.channel_schedule(), [16, 32, 64, 128]);
        assert_eq!(c.spatial_multiple(), 8);
    }

    #[test]
    fn rejects_invalid() {
        let base = NetworkConfig::default();
        for c in [
            NetworkConfig { base_channels: 6, ..base.clone() },
            NetworkConfig { block_counts: [1, 0, 1, 1], ..base.clone() },
            NetworkConfig { mixer_kernel: 4, ..base.clone() },
            NetworkConfig { downsample_factor: 1, ..base.clone() },
        ] {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn json_rejects_unknown_keys() {
        let mut v = serde_json::to_value(NetworkConfig::default()).unwrap();
        let back: NetworkConfig = serde_json::from_value(v.clone()).unwrap();
        assert_eq!(back, NetworkConfig::default());
        v["extra"] = serde_json::json!(1);
        assert!(serde_json::from_value::<NetworkConfig>(v).is_err());
    }

    #[test]
    fn json_fills_missing_fields_from_default() {
        let c: NetworkConfig = serde_json::from_str(r#"{"mixer_kernel": 3}"#).unwrap();
        assert_eq!(c, NetworkConfig { mixer_kernel: 3, ..NetworkConfig::default() });
    }
}
