use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::msgpass::MessagePassingConfig;

/// Largest emitter count accepted by the `2^K - 1` class baseline.
pub const MULTICLASS_MAX_EMITTERS: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Multi-label head with one sigmoid per emitter.
    Smei,
    /// Softmax over every non-empty emitter combination.
    Multiclass,
    /// Multi-label head with cross-sample message passing.
    Ismei,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Smei => "smei",
            ModelKind::Multiclass => "multiclass",
            ModelKind::Ismei => "ismei",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smei" => Ok(ModelKind::Smei),
            "multiclass" => Ok(ModelKind::Multiclass),
            "ismei" => Ok(ModelKind::Ismei),
            other => Err(Error::InvalidConfig(format!(
                "unknown model {other:?} (expected smei, multiclass or ismei)"
            ))),
        }
    }
}

/// Convolutional trunk shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorConfig {
    pub num_emitters: usize,
    pub base_channels: usize,
    pub num_blocks: usize,
    pub hidden: usize,
    pub input_len: usize,
}

impl ExtractorConfig {
    /// Default trunk: 32 stem channels, three residual blocks, 256 hidden.
    pub fn reference(num_emitters: usize, input_len: usize) -> Self {
        Self {
            num_emitters,
            base_channels: 32,
            num_blocks: 3,
            hidden: 256,
            input_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_emitters == 0 || self.base_channels == 0 || self.hidden == 0 || self.input_len == 0 {
            return Err(Error::InvalidConfig(format!("extractor sizes must be positive: {self:?}")));
        }
        if self.num_blocks > 16 {
            return Err(Error::InvalidConfig(format!("{} residual blocks is too deep", self.num_blocks)));
        }
        Ok(())
    }

    /// Channel count after the last residual block (pooled feature width).
    pub fn pooled_channels(&self) -> usize {
        self.base_channels << self.num_blocks
    }

    /// Sequence length after each stage, starting with the stem.
    pub fn stage_lengths(&self) -> Vec<usize> {
        let mut l = self.input_len;
        let mut out = vec![l];
        for _ in 0..self.num_blocks {
            l = (l - 1) / 2 + 1;
            out.push(l);
        }
        out
    }

    pub fn output_dim(&self, kind: ModelKind) -> usize {
        match kind {
            ModelKind::Smei | ModelKind::Ismei => self.num_emitters,
            ModelKind::Multiclass => (1usize << self.num_emitters) - 1,
        }
    }
}

/// Full model description stored alongside checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub kind: ModelKind,
    pub extractor: ExtractorConfig,
    pub message_passing: Option<MessagePassingConfig>,
}

impl NetworkConfig {
    pub fn smei(extractor: ExtractorConfig) -> Self {
        Self { kind: ModelKind::Smei, extractor, message_passing: None }
    }

    pub fn multiclass(extractor: ExtractorConfig) -> Self {
        Self { kind: ModelKind::Multiclass, extractor, message_passing: None }
    }

    pub fn ismei(extractor: ExtractorConfig, mp: MessagePassingConfig) -> Self {
        Self { kind: ModelKind::Ismei, extractor, message_passing: Some(mp) }
    }

    /// Reference configuration for a model kind.
    pub fn reference(kind: ModelKind, num_emitters: usize, input_len: usize) -> Self {
        let e = ExtractorConfig::reference(num_emitters, input_len);
        match kind {
            ModelKind::Smei => Self::smei(e),
            ModelKind::Multiclass => Self::multiclass(e),
            ModelKind::Ismei => Self::ismei(e, MessagePassingConfig::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.extractor.validate()?;
        if self.kind == ModelKind::Multiclass && self.extractor.num_emitters > MULTICLASS_MAX_EMITTERS {
            return Err(Error::InvalidConfig(format!(
                "the multiclass baseline supports at most {MULTICLASS_MAX_EMITTERS} emitters, got {}",
                self.extractor.num_emitters
            )));
        }
        match (self.kind, &self.message_passing) {
            (ModelKind::Ismei, Some(mp)) => mp.validate(self.extractor.pooled_channels()),
            (ModelKind::Ismei, None) => Err(Error::InvalidConfig("ismei requires message passing settings".into())),
            (_, Some(_)) => Err(Error::InvalidConfig(format!("{} takes no message passing settings", self.kind))),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_lengths_and_widths() {
        let c = ExtractorConfig::reference(3, 1024);
        assert_eq!(c.stage_lengths(), vec![1024, 512, 256, 128]);
        assert_eq!(c.pooled_channels(), 256);
        assert_eq!(c.output_dim(ModelKind::Multiclass), 7);
        assert_eq!(ExtractorConfig { input_len: 5, ..c }.stage_lengths(), vec![5, 3, 2, 1]);
    }

    #[test]
    fn multiclass_guard() {
        let mut c = NetworkConfig::reference(ModelKind::Multiclass, 13, 64);
        assert!(c.validate().is_err());
        c.extractor.num_emitters = 12;
        assert!(c.validate().is_ok());
        assert!("ismei".parse::<ModelKind>().is_ok());
        assert!("mlp".parse::<ModelKind>().is_err());
    }
}
