//! Backbone configuration and its `key=value` file format.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BackboneKind {
    #[default]
    Mamba,
    AttentionCausal,
    AttentionBidirectional,
}

impl BackboneKind {
    /// Causal kinds score from the final `EOS`; the bidirectional kind from `CLS`.
    pub fn is_causal(self) -> bool {
        !matches!(self, BackboneKind::AttentionBidirectional)
    }
}

impl FromStr for BackboneKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mamba" => Ok(BackboneKind::Mamba),
            "attention-causal" => Ok(BackboneKind::AttentionCausal),
            "attention-bidirectional" => Ok(BackboneKind::AttentionBidirectional),
            other => Err(Error::Config(format!("unknown backbone kind '{other}'"))),
        }
    }
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackboneKind::Mamba => "mamba",
            BackboneKind::AttentionCausal => "attention-causal",
            BackboneKind::AttentionBidirectional => "attention-bidirectional",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    pub n_layers: usize,
    pub d_model: usize,
    /// Used by the Mamba kind.
    pub n_state: usize,
    /// Used by the attention kinds.
    pub n_heads: usize,
    pub max_len: usize,
    pub seed: u64,
    /// Low-rank adapters on the layer projections, with the backbone frozen.
    pub lora: Option<LoraSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoraSpec {
    pub rank: usize,
    pub alpha: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            kind: BackboneKind::Mamba,
            n_layers: 2,
            d_model: 64,
            n_state: 16,
            n_heads: 4,
            max_len: 512,
            seed: 0,
            lora: None,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.d_model == 0 || self.max_len == 0 {
            return Err(Error::Config(format!(
                "n_layers, d_model and max_len must be >= 1 (got {}, {}, {})",
                self.n_layers, self.d_model, self.max_len
            )));
        }
        match self.kind {
            BackboneKind::Mamba if self.n_state == 0 => {
                Err(Error::Config("n_state must be >= 1".into()))
            }
            BackboneKind::AttentionCausal | BackboneKind::AttentionBidirectional
                if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) =>
            {
                Err(Error::Config(format!(
                    "d_model ({}) must be divisible by n_heads ({})",
                    self.d_model, self.n_heads
                )))
            }
            _ => Ok(()),
        }?;
        match self.lora {
            Some(l) if l.rank == 0 || !l.alpha.is_finite() => Err(Error::Config(format!(
                "LoRA needs rank >= 1 and a finite alpha, got rank={} alpha={}",
                l.rank, l.alpha
            ))),
            _ => Ok(()),
        }
    }

    /// Parses `key=value` lines. Blank lines and `#` comments are ignored;
    /// missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = BackboneConfig::default();
        let (mut lora_rank, mut lora_alpha) = (None, None);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(i + 1, format!("expected key=value, got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| -> Result<usize> {
                v.parse().map_err(|_| Error::parse(i + 1, format!("'{key}' needs an integer, got '{v}'")))
            };
            match key {
                "kind" => cfg.kind = value.parse()?,
                "n_layers" => cfg.n_layers = num(value)?,
                "d_model" => cfg.d_model = num(value)?,
                "n_state" => cfg.n_state = num(value)?,
                "n_heads" => cfg.n_heads = num(value)?,
                "max_len" => cfg.max_len = num(value)?,
                "seed" => cfg.seed = num(value)? as u64,
                "lora_rank" => lora_rank = Some(num(value)?),
                "lora_alpha" => {
                    lora_alpha = Some(value.parse::<f64>().map_err(|_| {
                        Error::parse(i + 1, format!("'lora_alpha' needs a number, got '{value}'"))
                    })?)
                }
                other => return Err(Error::parse(i + 1, format!("unknown key '{other}'"))),
            }
        }
        cfg.lora = match (lora_rank, lora_alpha) {
            (None, None) => None,
            (Some(rank), Some(alpha)) => Some(LoraSpec { rank, alpha }),
            _ => return Err(Error::Config("lora_rank and lora_alpha must be given together".into())),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_string())?;
        Ok(())
    }
}

impl fmt::Display for BackboneConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "kind={}", self.kind)?;
        writeln!(f, "n_layers={}", self.n_layers)?;
        writeln!(f, "d_model={}", self.d_model)?;
        writeln!(f, "n_state={}", self.n_state)?;
        writeln!(f, "n_heads={}", self.n_heads)?;
        writeln!(f, "max_len={}", self.max_len)?;
        writeln!(f, "seed={}", self.seed)?;
        if let Some(l) = self.lora {
            writeln!(f, "lora_rank={}", l.rank)?;
            writeln!(f, "lora_alpha={}", l.alpha)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let cfg = BackboneConfig::default();
        assert_eq!(cfg.max_len, 512);
        assert_eq!(BackboneConfig::parse(&cfg.to_string()).unwrap(), cfg);
        let other = BackboneConfig {
            kind: BackboneKind::AttentionBidirectional,
            n_heads: 8,
            seed: 7,
            ..cfg
        };
        assert_eq!(BackboneConfig::parse(&other.to_string()).unwrap(), other);
        let adapted = BackboneConfig { lora: Some(LoraSpec { rank: 32, alpha: 64.0 }), ..cfg };
        assert_eq!(BackboneConfig::parse(&adapted.to_string()).unwrap(), adapted);
        assert!(BackboneConfig::parse("lora_rank=4").is_err());
    }

    #[test]
    fn partial_file_and_errors() {
        let cfg = BackboneConfig::parse("# tiny\nkind = mamba\n\nd_model=8\nn_state=4\n").unwrap();
        assert_eq!((cfg.d_model, cfg.n_state, cfg.n_layers), (8, 4, 2));
        assert!(matches!(BackboneConfig::parse("d_model"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(BackboneConfig::parse("\ncolour=red"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(BackboneConfig::parse("kind=rnn"), Err(Error::Config(_))));
        assert!(matches!(
            BackboneConfig::parse("kind=attention-causal\nd_model=10\nn_heads=4"),
            Err(Error::Config(_))
        ));
    }
}
