use std::fmt;
use std::str::FromStr;

use super::NetError;

/// Where the original input enters each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RecallMode {
    /// No recall: `x_{t+1} = f(x_t)`.
    Autonomous,
    /// Recall replaces the residual stream entering the first sublayer.
    External,
    /// Recall only feeds the sublayer updates; the residual carries `x_t`.
    Internal,
}

/// Normalisation placement around the two residual sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormMode {
    None,
    /// RMSNorm on each sublayer input, identity residual.
    Pre,
    /// RMSNorm applied to each residual sum (outer normalisation).
    Post,
    /// Pre-norm plus RMSNorm on each sublayer output before the residual add.
    Peri,
    /// Residual add replaced by a GRU cell (outer normalisation).
    Gru,
}

impl RecallMode {
    pub const ALL: [RecallMode; 3] = [Self::Autonomous, Self::External, Self::Internal];

    pub fn has_recall(self) -> bool {
        !matches!(self, Self::Autonomous)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Autonomous => "autonomous",
            Self::External => "external",
            Self::Internal => "internal",
        }
    }

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl NormMode {
    pub const ALL: [NormMode; 5] = [Self::None, Self::Pre, Self::Post, Self::Peri, Self::Gru];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Pre => "pre",
            Self::Post => "post",
            Self::Peri => "peri",
            Self::Gru => "gru",
        }
    }

    pub fn has_input_norm(self) -> bool {
        matches!(self, Self::Pre | Self::Peri)
    }

    pub fn has_output_norm(self) -> bool {
        matches!(self, Self::Post | Self::Peri)
    }

    pub fn is_outer(self) -> bool {
        matches!(self, Self::Post | Self::Gru)
    }

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for RecallMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for NormMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RecallMode {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| NetError::Config(format!("unknown recall mode `{s}`")))
    }
}

impl FromStr for NormMode {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| NetError::Config(format!("unknown norm mode `{s}`")))
    }
}

/// Reach of the token-mixing sublayer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixBandwidth {
    /// Shift-invariant kernel over offsets `-b..=b`; works for any length.
    Banded(usize),
    /// Dense learned `L×L` matrix; tied to the configured length.
    Full,
}

impl fmt::Display for MixBandwidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Banded(b) => write!(f, "{b}"),
            Self::Full => f.write_str("full"),
        }
    }
}

impl FromStr for MixBandwidth {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "full" {
            return Ok(Self::Full);
        }
        s.parse()
            .map(Self::Banded)
            .map_err(|_| NetError::Config(format!("bad mix bandwidth `{s}`")))
    }
}

pub const DEFAULT_NORM_EPS: f64 = 1e-6;

/// Architecture of a looped network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub d: usize,
    /// Sequence length `L`. Only binding when `mix_bandwidth` is `Full`.
    pub seq_len: usize,
    pub recall: RecallMode,
    pub norm: NormMode,
    pub mlp_hidden: usize,
    pub mix_bandwidth: MixBandwidth,
    pub mix_heads: usize,
    pub norm_eps: f64,
}

impl NetConfig {
    pub fn new(d: usize, seq_len: usize, recall: RecallMode, norm: NormMode) -> Self {
        Self {
            d,
            seq_len,
            recall,
            norm,
            mlp_hidden: 4 * d,
            mix_bandwidth: MixBandwidth::Full,
            mix_heads: 1,
            norm_eps: DEFAULT_NORM_EPS,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.d == 0 || self.seq_len == 0 || self.mlp_hidden == 0 || self.mix_heads == 0 {
            return Err(NetError::Config(
                "d, L, mlp_hidden and mix_heads must all be at least 1".into(),
            ));
        }
        if !(self.norm_eps > 0.0 && self.norm_eps.is_finite()) {
            return Err(NetError::Config(format!(
                "RMSNorm epsilon must be positive, got {}",
                self.norm_eps
            )));
        }
        Ok(())
    }

    /// Checks that a state shape can be processed by this architecture.
    pub fn check_state_shape(&self, d: usize, len: usize) -> Result<(), NetError> {
        if d != self.d {
            return Err(NetError::Shape(format!(
                "state has {d} features, network expects {}",
                self.d
            )));
        }
        if matches!(self.mix_bandwidth, MixBandwidth::Full) && len != self.seq_len {
            return Err(NetError::Shape(format!(
                "full token mixing is fixed to length {}, got {len}",
                self.seq_len
            )));
        }
        Ok(())
    }

    pub(crate) fn header_codes(&self) -> (u8, u8) {
        (self.recall.code(), self.norm.code())
    }

    pub(crate) fn modes_from_codes(
        recall: u8,
        norm: u8,
    ) -> Result<(RecallMode, NormMode), NetError> {
        Ok((
            RecallMode::from_code(recall)
                .ok_or_else(|| NetError::Format(format!("bad recall code {recall}")))?,
            NormMode::from_code(norm)
                .ok_or_else(|| NetError::Format(format!("bad norm code {norm}")))?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_roundtrip() {
        for m in RecallMode::ALL {
            assert_eq!(m.as_str().parse::<RecallMode>().unwrap(), m);
        }
        for m in NormMode::ALL {
            assert_eq!(m.as_str().parse::<NormMode>().unwrap(), m);
        }
        assert_eq!("full".parse::<MixBandwidth>().unwrap(), MixBandwidth::Full);
        assert_eq!(
            "5".parse::<MixBandwidth>().unwrap(),
            MixBandwidth::Banded(5)
        );
        assert!("wide".parse::<MixBandwidth>().is_err());
    }

    #[test]
    fn validation() {
        let mut c = NetConfig::new(4, 3, RecallMode::External, NormMode::Post);
        assert!(c.validate().is_ok());
        c.norm_eps = 0.0;
        assert!(c.validate().is_err());
        c.norm_eps = 1e-6;
        c.mlp_hidden = 0;
        assert!(c.validate().is_err());
    }
}
