//! Model configuration, validation and the named-tensor shape contract.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

/// Transformer-backbone family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// PVTv2-B0-class transformer path.
    V0,
    /// PVTv2-B2-linear-class transformer path.
    V1,
}

/// Full-size backbones, or the reduced widths used for desk-scale training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scale {
    Full,
    Tiny,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AblationFlags {
    pub use_resnet_branch: bool,
    pub use_coag: bool,
    pub use_mambaconv: bool,
    pub use_coasmamba: bool,
    pub use_coamamba: bool,
    pub use_doublelcoa: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self::FULL
    }
}

impl AblationFlags {
    pub const FULL: Self = Self {
        use_resnet_branch: true,
        use_coag: true,
        use_mambaconv: true,
        use_coasmamba: true,
        use_coamamba: true,
        use_doublelcoa: true,
    };

    pub(crate) const KEYS: [&'static str; 6] = [
        "use_resnet_branch",
        "use_coag",
        "use_mambaconv",
        "use_coasmamba",
        "use_coamamba",
        "use_doublelcoa",
    ];

    pub fn values(&self) -> [bool; 6] {
        [
            self.use_resnet_branch,
            self.use_coag,
            self.use_mambaconv,
            self.use_coasmamba,
            self.use_coamamba,
            self.use_doublelcoa,
        ]
    }

    fn slot(&mut self, key: &str) -> Option<&mut bool> {
        Some(match key {
            "use_resnet_branch" => &mut self.use_resnet_branch,
            "use_coag" => &mut self.use_coag,
            "use_mambaconv" => &mut self.use_mambaconv,
            "use_coasmamba" => &mut self.use_coasmamba,
            "use_coamamba" => &mut self.use_coamamba,
            "use_doublelcoa" => &mut self.use_doublelcoa,
            _ => return None,
        })
    }
}

/// Layout of the CNN and transformer pyramids implied by a [`ModelConfig`].
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneLayout {
    pub cnn_channels: [usize; 4],
    /// Residual blocks per CNN layer (only the first three layers run).
    pub cnn_blocks: usize,
    /// Instantiate the unused fourth residual layer (parameter bookkeeping only).
    pub cnn_keeps_layer4: bool,
    pub vit_dims: [usize; 4],
    pub vit_heads: [usize; 4],
    pub vit_mlp_ratios: [usize; 4],
    pub vit_depths: [usize; 4],
    pub vit_sr_ratios: [usize; 4],
    /// Pooled-key attention (the "linear" PVTv2 flavour) instead of strided reduction.
    pub vit_linear: bool,
    pub vit_pool: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub scale: Scale,
    pub input_size: usize,
    pub in_channels: usize,
    pub num_classes: usize,
    /// Channels of x_1..x_4 (x_5 keeps the last entry).
    pub stage_channels: [usize; 4],
    /// Channels of x_0.
    pub stem_channels: usize,
    pub bottleneck_pool: usize,
    pub ssm_state_dim: usize,
    pub ssm_expand: usize,
    pub ca_reduction: usize,
    pub ablation: AblationFlags,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full(Variant::V1)
    }
}

impl ModelConfig {
    pub fn full(variant: Variant) -> Self {
        Self {
            variant,
            scale: Scale::Full,
            input_size: 224,
            in_channels: 3,
            num_classes: 9,
            stage_channels: [64, 128, 256, 512],
            stem_channels: 32,
            bottleneck_pool: 14,
            ssm_state_dim: 16,
            ssm_expand: 2,
            ca_reduction: 16,
            ablation: AblationFlags::FULL,
            seed: 0,
        }
    }

    /// Channel widths divided by eight, one block per backbone stage, 64² single-channel input.
    pub fn tiny(variant: Variant) -> Self {
        Self {
            scale: Scale::Tiny,
            input_size: 64,
            in_channels: 1,
            num_classes: 3,
            stage_channels: [8, 16, 32, 64],
            stem_channels: 4,
            bottleneck_pool: 4,
            ca_reduction: 2,
            ..Self::full(variant)
        }
    }

    pub fn backbones(&self) -> BackboneLayout {
        let (dims, depths, linear) = match self.variant {
            Variant::V1 => ([64, 128, 320, 512], [3, 4, 6, 3], true),
            Variant::V0 => ([32, 64, 160, 256], [2, 2, 2, 2], false),
        };
        let full = BackboneLayout {
            cnn_channels: [64, 64, 128, 256],
            cnn_blocks: 2,
            cnn_keeps_layer4: true,
            vit_dims: dims,
            vit_heads: [1, 2, 5, 8],
            vit_mlp_ratios: [8, 8, 4, 4],
            vit_depths: depths,
            vit_sr_ratios: [8, 4, 2, 1],
            vit_linear: linear,
            vit_pool: 7,
        };
        match self.scale {
            Scale::Full => full,
            Scale::Tiny => BackboneLayout {
                cnn_channels: [8, 8, 16, 32],
                cnn_blocks: 1,
                cnn_keeps_layer4: false,
                vit_dims: dims.map(|d| d / 8),
                vit_depths: [1; 4],
                ..full
            },
        }
    }

    /// Channels of x_0..x_5.
    pub fn main_channels(&self) -> [usize; 6] {
        let s = self.stage_channels;
        [self.stem_channels, s[0], s[1], s[2], s[3], s[3]]
    }

    /// Squeeze-excite widths the configuration will instantiate.
    fn ca_widths(&self) -> Vec<usize> {
        let x = self.main_channels();
        let t = self.backbones().vit_dims;
        let mut widths: Vec<usize> = (0..4).map(|i| x[i] + t[i]).collect();
        widths.push(x[3] + x[4]);
        widths
    }
}

/// Outcome of [`validate_config`]: empty when the configuration is usable.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationResult {
    pub violations: Vec<String>,
}

impl ValidationResult {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(Error::Config(self.violations))
        }
    }
}

pub fn validate_config(cfg: &ModelConfig) -> ValidationResult {
    let mut v = Vec::new();
    if cfg.input_size == 0 || !cfg.input_size.is_multiple_of(32) {
        v.push(format!("input_size not divisible by 32 (got {})", cfg.input_size));
    }
    if cfg.stage_channels.windows(2).any(|w| w[0] >= w[1]) {
        v.push(format!("stage_channels not strictly increasing (got {:?})", cfg.stage_channels));
    }
    for (name, value) in [
        ("in_channels", cfg.in_channels),
        ("num_classes", cfg.num_classes),
        ("stem_channels", cfg.stem_channels),
        ("stage_channels[0]", cfg.stage_channels[0]),
        ("ssm_state_dim", cfg.ssm_state_dim),
        ("ssm_expand", cfg.ssm_expand),
        ("ca_reduction", cfg.ca_reduction),
    ] {
        if value == 0 {
            v.push(format!("{name} must be at least 1"));
        }
    }
    if cfg.input_size.is_multiple_of(32) && cfg.bottleneck_pool != cfg.input_size / 16 {
        v.push(format!(
            "bottleneck_pool {} must equal input_size/16 = {}",
            cfg.bottleneck_pool,
            cfg.input_size / 16
        ));
    }
    if cfg.ablation.use_coag && cfg.ca_reduction > 0 {
        for w in cfg.ca_widths() {
            if w < cfg.ca_reduction || w % cfg.ca_reduction != 0 {
                v.push(format!(
                    "channel attention width {w} not divisible by ca_reduction {}",
                    cfg.ca_reduction
                ));
            }
        }
    }
    let layout = cfg.backbones();
    for (d, h) in layout.vit_dims.iter().zip(layout.vit_heads) {
        if d % h != 0 {
            v.push(format!("transformer width {d} not divisible by {h} heads"));
        }
    }
    ValidationResult { violations: v }
}

/// One named tensor of the shape contract.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageSpec {
    pub stage_index: usize,
    pub resolution: usize,
    pub channels: usize,
}

/// Every named encoder and decoder tensor with its expected spatial size and width.
pub fn expected_shapes(cfg: &ModelConfig) -> Result<Vec<(String, StageSpec)>> {
    validate_config(cfg).into_result()?;
    let s = cfg.input_size;
    let x = cfg.main_channels();
    let layout = cfg.backbones();
    let t = layout.vit_dims;
    let r = layout.cnn_channels;
    let spec = |stage, resolution, channels| StageSpec {
        stage_index: stage,
        resolution,
        channels,
    };
    let mut rows = vec![("x0".to_string(), spec(0, s, x[0]))];
    for i in 0..4 {
        rows.push((format!("t{i}"), spec(i, s >> (i + 2), t[i])));
    }
    for i in 0..4 {
        rows.push((format!("r{i}"), spec(i, s >> (i + 1), r[i])));
    }
    rows.push(("x0_pooled".into(), spec(0, s / 2, x[0])));
    for i in 1..=4 {
        rows.push((format!("x{i}"), spec(i, s >> i, x[i])));
    }
    rows.push(("coamamba".into(), spec(5, s / 8, x[5])));
    rows.push(("x5".into(), spec(5, cfg.bottleneck_pool, x[5])));
    let dec_out = [x[3], x[2], x[1], x[0]];
    let mut d_channels = x[5];
    for j in 0..4 {
        let res = s >> (3 - j);
        rows.push((format!("d{}", 4 - j), spec(4 - j, res, d_channels)));
        let name = if j == 3 { "d0".to_string() } else { format!("dec{}", j + 1) };
        rows.push((name, spec(3 - j, res, dec_out[j])));
        d_channels = dec_out[j];
    }
    Ok(rows)
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::V0 => "v0",
            Self::V1 => "v1",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "v0" => Ok(Self::V0),
            "v1" => Ok(Self::V1),
            _ => Err(Error::config(format!("unknown variant `{s}` (expected v0 or v1)"))),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::Tiny => "tiny",
        })
    }
}

impl FromStr for Scale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Self::Full),
            "tiny" => Ok(Self::Tiny),
            _ => Err(Error::config(format!("unknown scale `{s}` (expected full or tiny)"))),
        }
    }
}

pub(crate) fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse `{value}`")))
}

pub(crate) fn parse_list<const N: usize>(key: &str, value: &str) -> Result<[usize; N]> {
    let items: Vec<usize> = value
        .split(',')
        .map(|p| parse_value(key, p))
        .collect::<Result<_>>()?;
    items
        .try_into()
        .map_err(|_| Error::config(format!("{key}: expected {N} comma-separated values")))
}

/// Ordered `key = value` pairs from a flat text configuration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues(pub BTreeMap<String, String>);

impl KeyValues {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", n + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self(map))
    }

    /// Parses a `key=value` command-line override and inserts it.
    pub fn set_override(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override `{pair}` is not key=value")))?;
        self.0.insert(k.trim().to_string(), v.trim().to_string());
        Ok(())
    }

    pub fn render(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

impl ModelConfig {
    /// Applies one key; returns `Ok(false)` when the key is not a model key.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "variant" => self.variant = value.parse()?,
            "scale" => self.scale = value.parse()?,
            "input_size" => self.input_size = parse_value(key, value)?,
            "in_channels" => self.in_channels = parse_value(key, value)?,
            "num_classes" => self.num_classes = parse_value(key, value)?,
            "stage_channels" => self.stage_channels = parse_list(key, value)?,
            "stem_channels" => self.stem_channels = parse_value(key, value)?,
            "bottleneck_pool" => self.bottleneck_pool = parse_value(key, value)?,
            "ssm_state_dim" => self.ssm_state_dim = parse_value(key, value)?,
            "ssm_expand" => self.ssm_expand = parse_value(key, value)?,
            "ca_reduction" => self.ca_reduction = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => match self.ablation.slot(key) {
                Some(slot) => *slot = parse_value(key, value)?,
                None => return Ok(false),
            },
        }
        Ok(true)
    }

    /// Builds a configuration from key/value pairs, starting from the preset named
    /// by `scale` and `variant` when present. Unknown keys are rejected.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let (cfg, rest) = Self::from_key_values_partial(kv)?;
        if let Some(k) = rest.first() {
            return Err(Error::config(format!("unknown key `{k}`")));
        }
        Ok(cfg)
    }

    /// As [`Self::from_key_values`] but returns the keys it did not recognise.
    pub fn from_key_values_partial(kv: &KeyValues) -> Result<(Self, Vec<String>)> {
        let variant = kv.0.get("variant").map(|v| v.parse()).transpose()?.unwrap_or(Variant::V1);
        let scale = kv.0.get("scale").map(|v| v.parse()).transpose()?.unwrap_or(Scale::Full);
        let mut cfg = match scale {
            Scale::Full => Self::full(variant),
            Scale::Tiny => Self::tiny(variant),
        };
        let mut rest = Vec::new();
        for (k, v) in &kv.0 {
            if !cfg.apply(k, v)? {
                rest.push(k.clone());
            }
        }
        Ok((cfg, rest))
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("variant", self.variant.to_string());
        put("scale", self.scale.to_string());
        put("input_size", self.input_size.to_string());
        put("in_channels", self.in_channels.to_string());
        put("num_classes", self.num_classes.to_string());
        put("stage_channels", join(&self.stage_channels));
        put("stem_channels", self.stem_channels.to_string());
        put("bottleneck_pool", self.bottleneck_pool.to_string());
        put("ssm_state_dim", self.ssm_state_dim.to_string());
        put("ssm_expand", self.ssm_expand.to_string());
        put("ca_reduction", self.ca_reduction.to_string());
        put("seed", self.seed.to_string());
        for (k, v) in AblationFlags::KEYS.iter().zip(self.ablation.values()) {
            put(k, v.to_string());
        }
        KeyValues(m)
    }
}

pub(crate) fn join(values: &[usize]) -> String {
    values.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}
