use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::{CLM_DIM, FALLBACK_DIM, PLM_DIM};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Tipformer,
    Deepcnn,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Tipformer => "tipformer",
            Variant::Deepcnn => "deepcnn",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tipformer" => Ok(Variant::Tipformer),
            "deepcnn" => Ok(Variant::Deepcnn),
            _ => Err(Error::usage(format!("unknown variant {s:?} (tipformer | deepcnn)"))),
        }
    }
}

/// How per-residue hotspot scores are reduced over toxin positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HotspotAggregate {
    Mean,
    Max,
}

impl FromStr for HotspotAggregate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(HotspotAggregate::Mean),
            "max" => Ok(HotspotAggregate::Max),
            _ => Err(Error::usage(format!("unknown hotspot aggregate {s:?} (mean | max)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    /// Learned character/residue tables inside the model.
    Fallback,
    /// External per-token matrices of width `toxin_dim` / `protein_dim`.
    Precomputed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub heads: usize,
    pub interaction_layers: usize,
    pub conv_kernel: usize,
    /// Defaults to `2 * hidden`.
    pub ffn_hidden: Option<usize>,
    pub dropout: f64,
    /// Head layer widths including input and output, defaults to
    /// `[2d, d, d, d/2, 1]`.
    pub head_dims: Option<Vec<usize>>,
    pub variant: Variant,
    /// Also let protein queries attend to toxin keys/values.
    pub symmetric_cross: bool,
    pub hotspot_aggregate: HotspotAggregate,
    pub embedding: EmbeddingKind,
    pub fallback_dim: usize,
    pub toxin_dim: usize,
    pub protein_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 32,
            heads: 8,
            interaction_layers: 2,
            conv_kernel: 3,
            ffn_hidden: None,
            dropout: 0.2,
            head_dims: None,
            variant: Variant::Tipformer,
            symmetric_cross: false,
            hotspot_aggregate: HotspotAggregate::Mean,
            embedding: EmbeddingKind::Fallback,
            fallback_dim: FALLBACK_DIM,
            toxin_dim: CLM_DIM,
            protein_dim: PLM_DIM,
        }
    }
}

impl ModelConfig {
    pub fn ffn(&self) -> usize {
        self.ffn_hidden.unwrap_or(2 * self.hidden)
    }

    pub fn head_widths(&self) -> Vec<usize> {
        self.head_dims.clone().unwrap_or_else(|| {
            let d = self.hidden;
            vec![2 * d, d, d, (d / 2).max(1), 1]
        })
    }

    /// Width of the toxin / protein encoder input.
    pub fn input_dims(&self) -> (usize, usize) {
        match self.embedding {
            EmbeddingKind::Fallback => (self.fallback_dim, self.fallback_dim),
            EmbeddingKind::Precomputed => (self.toxin_dim, self.protein_dim),
        }
    }

    /// Copy with every defaulted field made explicit.
    pub fn resolved(&self) -> ModelConfig {
        ModelConfig { ffn_hidden: Some(self.ffn()), head_dims: Some(self.head_widths()), ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.hidden == 0 || self.heads == 0 {
            return bad("hidden and heads must be positive".into());
        }
        if self.hidden % self.heads != 0 {
            return bad(format!("hidden {} is not divisible by heads {}", self.hidden, self.heads));
        }
        if self.conv_kernel % 2 == 0 {
            return bad(format!("conv_kernel {} must be odd", self.conv_kernel));
        }
        if self.ffn() == 0 {
            return bad("ffn_hidden must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        let w = self.head_widths();
        if w.len() < 2 || w[0] != 2 * self.hidden || *w.last().unwrap() != 1 || w.contains(&0) {
            return bad(format!("head_dims {w:?} must run from 2*hidden = {} down to 1", 2 * self.hidden));
        }
        let (t, p) = self.input_dims();
        if t == 0 || p == 0 {
            return bad("embedding dimensions must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.ffn(), 64);
        assert_eq!(c.head_widths(), vec![64, 32, 32, 16, 1]);
        assert_eq!(c.resolved().head_dims, Some(vec![64, 32, 32, 16, 1]));
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig { hidden: 30, ..Default::default() };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c = ModelConfig { conv_kernel: 4, ..Default::default() };
        assert!(c.validate().is_err());
        c = ModelConfig { head_dims: Some(vec![64, 32, 2]), ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let r: std::result::Result<ModelConfig, _> = serde_json::from_str(r#"{"hiden": 4}"#);
        assert!(r.is_err());
    }
}
