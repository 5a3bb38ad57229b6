use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sequence-level expert that every patch passes through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharedExpert {
    None,
    /// Depthwise conv over patches, then a pointwise inverted bottleneck.
    DwConv,
    /// Two pointwise convolutions only.
    Conv,
}

/// Architecture of the top-K routed experts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutedExpert {
    Fourier,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertMix {
    pub shared: SharedExpert,
    pub routed: RoutedExpert,
}

impl ExpertMix {
    pub const MOHE: Self = Self::new(SharedExpert::DwConv, RoutedExpert::Fourier);

    pub const fn new(shared: SharedExpert, routed: RoutedExpert) -> Self {
        Self { shared, routed }
    }

    /// The six compositions compared in the expert ablation, with their labels.
    pub fn ablation_rows() -> [(&'static str, Self); 6] {
        use RoutedExpert::*;
        use SharedExpert::*;
        [
            ("MoHETS", Self::new(DwConv, Fourier)),
            ("MLP", Self::new(None, Mlp)),
            ("FA", Self::new(None, Fourier)),
            ("Conv + MLP", Self::new(Conv, Mlp)),
            ("Conv + FA", Self::new(Conv, Fourier)),
            ("DwConv + MLP", Self::new(DwConv, Mlp)),
        ]
    }
}

/// Which normalization each site uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScheme {
    /// Single-group norm at patch embedding and in the decoder, RMSNorm elsewhere.
    Mixed,
    AllLayerNorm,
    AllRmsNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Transpose-conv unpatching followed by a large-kernel conv block.
    Conv,
    /// One linear map from the flattened patch embeddings to the output chunk.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub blocks: usize,
    pub q_heads: usize,
    pub kv_heads: usize,
    pub experts: usize,
    pub top_k: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub patch_len: usize,
    /// Look-back window L.
    pub lookback: usize,
    /// Output resolution H_o produced per forward pass.
    pub horizon: usize,
    /// Endogenous variates D (only covariate fusion depends on it).
    pub variates: usize,
    /// Calendar covariate channels C; 0 disables cross-attention.
    pub covariates: usize,
    pub rope_base: f64,
    pub dropout: f64,
    pub drop_path: f64,
    pub shared_kernel: usize,
    pub decoder_kernel: usize,
    /// Rotate keys and queries in cross-attention as in self-attention.
    pub cross_attn_rope: bool,
    pub expert_mix: ExpertMix,
    pub norm: NormScheme,
    pub head: HeadKind,
    pub norm_eps: f64,
}

impl ModelConfig {
    fn preset_dims(blocks: usize, q_heads: usize, kv_heads: usize, d_model: usize) -> Self {
        Self {
            blocks,
            q_heads,
            kv_heads,
            experts: 8,
            top_k: 2,
            d_model,
            d_ff: 2 * d_model,
            patch_len: 8,
            lookback: 672,
            horizon: 24,
            variates: 7,
            covariates: 6,
            rope_base: 10_000.0,
            dropout: 0.2,
            drop_path: 0.3,
            shared_kernel: 3,
            decoder_kernel: 7,
            cross_attn_rope: true,
            expert_mix: ExpertMix::MOHE,
            norm: NormScheme::Mixed,
            head: HeadKind::Conv,
            norm_eps: 1e-5,
        }
    }

    pub fn tiny() -> Self {
        Self::preset_dims(4, 4, 2, 64)
    }

    pub fn small() -> Self {
        Self::preset_dims(4, 4, 2, 128)
    }

    pub fn base() -> Self {
        Self::preset_dims(6, 8, 4, 256)
    }

    pub fn large() -> Self {
        Self::preset_dims(8, 12, 6, 384)
    }

    pub const PRESETS: [&'static str; 4] = ["tiny", "small", "base", "large"];

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny()),
            "small" => Ok(Self::small()),
            "base" => Ok(Self::base()),
            "large" => Ok(Self::large()),
            other => Err(Error::config(format!(
                "unknown preset `{other}` (expected one of {})",
                Self::PRESETS.join(", ")
            ))),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.q_heads
    }

    /// Patches per look-back window, `⌈L/P⌉`.
    pub fn patches(&self) -> usize {
        self.lookback.div_ceil(self.patch_len)
    }

    /// Trailing patch tokens consumed by the decoder, `H_o/P`.
    pub fn output_patches(&self) -> usize {
        self.horizon / self.patch_len
    }

    pub fn uses_covariates(&self) -> bool {
        self.covariates > 0
    }

    /// Stochastic-depth rate of block `b`, linear from 0 to the maximum.
    pub fn drop_path_rate(&self, b: usize) -> f64 {
        if self.blocks <= 1 {
            0.0
        } else {
            self.drop_path * b as f64 / (self.blocks - 1) as f64
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::config(msg));
        let positive = [
            ("blocks", self.blocks),
            ("q_heads", self.q_heads),
            ("kv_heads", self.kv_heads),
            ("experts", self.experts),
            ("top_k", self.top_k),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("patch_len", self.patch_len),
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("variates", self.variates),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return fail(format!("{name} must be positive"));
        }
        if self.q_heads % self.kv_heads != 0 {
            return fail(format!(
                "q_heads {} not divisible by kv_heads {}",
                self.q_heads, self.kv_heads
            ));
        }
        if self.d_model % self.q_heads != 0 {
            return fail(format!(
                "d_model {} not divisible by q_heads {}",
                self.d_model, self.q_heads
            ));
        }
        if self.head_dim() % 2 != 0 {
            return fail(format!("head dimension {} must be even for RoPE", self.head_dim()));
        }
        if self.top_k > self.experts {
            return fail(format!("top_k {} exceeds experts {}", self.top_k, self.experts));
        }
        if self.expert_mix.routed == RoutedExpert::Fourier && (self.d_ff % 4 != 0 || self.d_model % 4 != 0) {
            return fail(format!(
                "Fourier experts need d_ff ({}) and d_model ({}) divisible by 4",
                self.d_ff, self.d_model
            ));
        }
        if self.head == HeadKind::Conv && self.d_model % 4 != 0 {
            return fail(format!("d_model {} must be divisible by 4 for the decoder bottleneck", self.d_model));
        }
        if self.horizon % self.patch_len != 0 {
            return fail(format!(
                "patch_len {} must divide horizon {}",
                self.patch_len, self.horizon
            ));
        }
        if self.patch_len > self.lookback {
            return fail(format!(
                "patch_len {} exceeds lookback {}",
                self.patch_len, self.lookback
            ));
        }
        if self.output_patches() > self.patches() {
            return fail(format!(
                "horizon {} needs {} trailing patches but the window has {}",
                self.horizon,
                self.output_patches(),
                self.patches()
            ));
        }
        for (name, k) in [("shared_kernel", self.shared_kernel), ("decoder_kernel", self.decoder_kernel)] {
            if k % 2 == 0 {
                return fail(format!("{name} {k} must be odd"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.drop_path) {
            return fail("dropout and drop_path must lie in [0, 1)".into());
        }
        if !(self.rope_base > 0.0) || !(self.norm_eps > 0.0) {
            return fail("rope_base and norm_eps must be positive".into());
        }
        Ok(())
    }
}

/// Per-dataset run settings used when a known benchmark is named.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DatasetDefaults {
    pub preset: &'static str,
    pub patch_len: usize,
    pub horizon: usize,
    pub max_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl DatasetDefaults {
    pub fn for_dataset(name: &str) -> Option<Self> {
        let d = |preset, patch_len, max_lr, batch_size, epochs| DatasetDefaults {
            preset,
            patch_len,
            horizon: 24,
            max_lr,
            batch_size,
            epochs,
        };
        Some(match name.to_ascii_lowercase().as_str() {
            "etth1" | "etth2" => d("tiny", 8, 3.2e-3, 128, 30),
            "ettm1" | "ettm2" => d("base", 16, 3.2e-3, 128, 20),
            "weather" => d("large", 16, 3.2e-3, 64, 30),
            "ecl" | "electricity" => d("large", 12, 2.2e-3, 8, 10),
            "traffic" => d("base", 12, 2.2e-3, 6, 15),
            _ => return None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for name in ModelConfig::PRESETS {
            ModelConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(ModelConfig::preset("huge").is_err());
    }

    #[test]
    fn tiny_geometry() {
        let c = ModelConfig::tiny();
        assert_eq!(c.patches(), 84);
        assert_eq!(c.output_patches(), 3);
        assert_eq!(c.head_dim(), 16);
        assert_eq!(c.drop_path_rate(0), 0.0);
        assert!((c.drop_path_rate(3) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_divisibility() {
        let mut c = ModelConfig::tiny();
        c.horizon = 20;
        assert!(c.validate().unwrap_err().to_string().contains("divide"));
        let mut c = ModelConfig::tiny();
        c.kv_heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::tiny();
        c.d_ff = 130;
        assert!(c.validate().is_err());
    }
}
