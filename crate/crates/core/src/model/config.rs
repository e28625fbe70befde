use serde::{Deserialize, Serialize};

use crate::charts::{ChartMode, SamplingPolicy, DEFAULT_MAX_POINTS, DEFAULT_RESOLUTION};
use crate::data::{default_chart_selection, DEFAULT_GRID, DEFAULT_RAW_LEN};
use crate::error::{Error, Result};

/// Which pathways a prediction uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Raw MLP straight into the head.
    MlpOnly,
    /// Raw MLP + norm + attention token into the head.
    MlpAttn,
    /// Both branches fused by the Transformer.
    Multimodal,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::MlpOnly, Variant::MlpAttn, Variant::Multimodal];

    pub fn uses_charts(self) -> bool {
        self == Variant::Multimodal
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::MlpOnly => "mlp_only",
            Variant::MlpAttn => "mlp_attn",
            Variant::Multimodal => "multimodal",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant `{s}` (expected mlp_only, mlp_attn or multimodal)"))
    }
}

/// Visual feature extractor. Only the conv stack is implemented.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    #[default]
    Cnn,
}

/// How the head reads the fused token sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Mean of all fused tokens.
    #[default]
    Mean,
    /// The raw-branch token only.
    First,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Raw vector length n.
    pub raw_len: usize,
    /// Linear + sigmoid layers in the raw MLP.
    pub mlp_layers: usize,
    pub mlp_hidden: usize,
    pub d_model: usize,
    /// Output channels of each conv stage (3×3, stride 1, pad 1, BN, ReLU,
    /// 2×2 max pool).
    pub conv_channels: Vec<usize>,
    pub heads: usize,
    /// Transformer blocks in the fusion stage (L); 0 means plain concatenation.
    pub fusion_blocks: usize,
    pub ffn_mult: usize,
    /// Output grid size G.
    pub grid: usize,
    /// Indicators rendered as chart channels, in channel order.
    pub chart_selection: Vec<String>,
    pub height: usize,
    pub width: usize,
    /// Interval-sampling cap M.
    pub max_points: usize,
    #[serde(default)]
    pub backbone: Backbone,
    #[serde(default)]
    pub chart_mode: ChartMode,
    #[serde(default)]
    pub readout: Readout,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            raw_len: DEFAULT_RAW_LEN,
            mlp_layers: 3,
            mlp_hidden: 256,
            d_model: 128,
            conv_channels: vec![16, 32, 64, 128],
            heads: 4,
            fusion_blocks: 2,
            ffn_mult: 4,
            grid: DEFAULT_GRID,
            chart_selection: default_chart_selection(),
            height: DEFAULT_RESOLUTION,
            width: DEFAULT_RESOLUTION,
            max_points: DEFAULT_MAX_POINTS,
            backbone: Backbone::Cnn,
            chart_mode: ChartMode::Binary,
            readout: Readout::Mean,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// Desk-scale defaults used by the ablation runner: 32×32 charts, two
    /// conv stages, narrow MLP and fusion width. One multimodal run of 30
    /// epochs over 1,000 records takes a minute or two on one core.
    pub fn desk() -> Self {
        ModelConfig {
            mlp_hidden: 64,
            d_model: 32,
            conv_channels: vec![4, 8],
            ffn_mult: 2,
            height: 32,
            width: 32,
            ..ModelConfig::default()
        }
    }

    /// Small enough for exhaustive finite-difference checks: n=32, K=2,
    /// 16×16 charts, d_model=8, G=5. Wide enough to memorize a handful of
    /// records.
    pub fn tiny() -> Self {
        ModelConfig {
            raw_len: 32,
            mlp_layers: 2,
            mlp_hidden: 32,
            d_model: 8,
            conv_channels: vec![8, 8],
            heads: 2,
            fusion_blocks: 2,
            ffn_mult: 4,
            grid: 5,
            chart_selection: default_chart_selection()[..2].to_vec(),
            height: 16,
            width: 16,
            ..ModelConfig::default()
        }
    }

    pub fn charts(&self) -> usize {
        self.chart_selection.len()
    }

    pub fn sampling(&self) -> SamplingPolicy {
        SamplingPolicy {
            max_points: self.max_points,
        }
    }

    /// Spatial size of the last feature map, if every stage can pool.
    pub fn feature_size(&self) -> Option<(usize, usize)> {
        let (mut h, mut w) = (self.height, self.width);
        for _ in &self.conv_channels {
            if h < 2 || w < 2 {
                return None;
            }
            h /= 2;
            w /= 2;
        }
        Some((h, w))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("raw_len", self.raw_len),
            ("mlp_layers", self.mlp_layers),
            ("mlp_hidden", self.mlp_hidden),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("ffn_mult", self.ffn_mult),
            ("height", self.height),
            ("width", self.width),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return bad(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            ));
        }
        if self.grid < 2 {
            return bad(format!("grid must be >= 2, got {}", self.grid));
        }
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return bad("conv_channels must be non-empty with positive entries".into());
        }
        if self.chart_selection.is_empty() {
            return bad("chart selection is empty".into());
        }
        if self.max_points < 2 {
            return bad(format!("max_points must be >= 2, got {}", self.max_points));
        }
        if self.feature_size().is_none() {
            return bad(format!(
                "{}×{} charts cannot be pooled through {} stages",
                self.height,
                self.width,
                self.conv_channels.len()
            ));
        }
        if !(self.bn_eps >= 0.0 && self.ln_eps >= 0.0) {
            return bad("eps values must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad(format!("bn_momentum must be in [0, 1], got {}", self.bn_momentum));
        }
        Ok(())
    }
}
