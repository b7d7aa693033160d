//! Run configuration: one JSON document per run, plus `--set key=value`
//! overrides. Unknown keys are errors so typos fail loudly.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::augment::AugmentParams;
use crate::data::batches::CloudApply;
use crate::data::clouds::CloudParams;
use crate::error::{Error, Result};
use crate::vocab::{resolve_vocabulary, ClassVocabulary, DEFAULT_IGNORE_INDEX};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Infonce,
    Mse,
    L1,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossKind::Infonce => write!(f, "infonce"),
            LossKind::Mse => write!(f, "mse"),
            LossKind::L1 => write!(f, "l1"),
        }
    }
}

/// Which SAR encoders stage 1 aligns against their RGB counterparts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CmuTarget {
    None,
    Dense,
    Global,
    Both,
}

impl CmuTarget {
    pub fn trains_dense(&self) -> bool {
        matches!(self, CmuTarget::Dense | CmuTarget::Both)
    }
    pub fn trains_global(&self) -> bool {
        matches!(self, CmuTarget::Global | CmuTarget::Both)
    }
}

impl std::fmt::Display for CmuTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CmuTarget::None => write!(f, "none"),
            CmuTarget::Dense => write!(f, "dense"),
            CmuTarget::Global => write!(f, "global"),
            CmuTarget::Both => write!(f, "both"),
        }
    }
}

/// Dual-modality fusion or the single-modality bypass (`f_d = proj(rgb)`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    Dual,
    RgbOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseEncoderConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    /// Fractions of depth whose blocks export dense taps; indices are
    /// `ceil(f * depth)`, the last must hit the final block.
    pub tap_fractions: [f64; 3],
}

impl Default for DenseEncoderConfig {
    fn default() -> Self {
        Self {
            patch_size: 8,
            embed_dim: 16,
            depth: 3,
            heads: 2,
            tap_fractions: [1.0 / 3.0, 2.0 / 3.0, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalEncoderConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    /// Output embedding dimension shared with the text encoder.
    pub output_dim: usize,
}

impl Default for GlobalEncoderConfig {
    fn default() -> Self {
        Self { patch_size: 8, embed_dim: 16, depth: 2, heads: 2, output_dim: 16 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextEncoderConfig {
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    /// Maximum prompt length in bytes.
    pub max_len: usize,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        Self { embed_dim: 16, depth: 2, heads: 2, max_len: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub stage1_lr: f64,
    pub stage2_lr: f64,
    /// Small learning rate for the global visual and text encoders in
    /// stage 2, preserving their alignment.
    pub encoder_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            stage1_lr: 3e-4,
            stage2_lr: 2.5e-4,
            encoder_lr: 2e-6,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudTrainingConfig {
    #[serde(flatten)]
    pub params: CloudParams,
    pub apply: CloudApply,
}

impl Default for CloudTrainingConfig {
    fn default() -> Self {
        Self { params: CloudParams::default(), apply: CloudApply::NoSplit }
    }
}

fn default_prompt() -> String {
    "a photo of {}".to_string()
}

fn default_ignore() -> usize {
    DEFAULT_IGNORE_INDEX
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Manifest path, relative to the config file or absolute.
    pub manifest: String,
    pub classes_seen: Vec<String>,
    #[serde(default)]
    pub classes_novel: Vec<String>,
    #[serde(default = "default_prompt")]
    pub prompt_template: String,
    #[serde(default = "default_ignore")]
    pub ignore_index: usize,
    /// Optional CSV of external per-class text embeddings; when set, the
    /// text encoder is replaced by these fixed rows.
    #[serde(default)]
    pub text_embeddings: Option<String>,

    #[serde(default)]
    pub dense_encoder: DenseEncoderConfig,
    #[serde(default)]
    pub global_encoder: GlobalEncoderConfig,
    #[serde(default)]
    pub text_encoder: TextEncoderConfig,
    /// Unified fusion dimension; must equal the global/text output dim so
    /// cosine similarities are defined.
    #[serde(default = "default_unified_dim")]
    pub unified_dim: usize,
    /// Per-class channel width of the decoder state.
    #[serde(default = "default_decoder_width")]
    pub decoder_width: usize,

    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default = "default_cmu_target")]
    pub cmu_target: CmuTarget,
    #[serde(default = "default_fusion")]
    pub fusion: FusionMode,

    #[serde(default)]
    pub cloud: CloudTrainingConfig,
    #[serde(default)]
    pub augment: Option<AugmentParams>,

    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_stage1_iters")]
    pub stage1_iters: u64,
    #[serde(default = "default_stage2_iters")]
    pub stage2_iters: u64,
}

fn default_unified_dim() -> usize {
    16
}
fn default_decoder_width() -> usize {
    8
}
fn default_temperature() -> f64 {
    0.07
}
fn default_loss() -> LossKind {
    LossKind::Infonce
}
fn default_cmu_target() -> CmuTarget {
    CmuTarget::Dense
}
fn default_fusion() -> FusionMode {
    FusionMode::Dual
}
fn default_batch_size() -> usize {
    8
}
fn default_stage1_iters() -> u64 {
    400
}
fn default_stage2_iters() -> u64 {
    600
}

impl RunConfig {
    /// A minimal valid config for programmatic use; callers override fields.
    pub fn toy_defaults(manifest: &str, seen: &[&str], novel: &[&str]) -> RunConfig {
        RunConfig {
            seed: 0,
            manifest: manifest.to_string(),
            classes_seen: seen.iter().map(|s| s.to_string()).collect(),
            classes_novel: novel.iter().map(|s| s.to_string()).collect(),
            prompt_template: default_prompt(),
            ignore_index: DEFAULT_IGNORE_INDEX,
            text_embeddings: None,
            dense_encoder: DenseEncoderConfig::default(),
            global_encoder: GlobalEncoderConfig::default(),
            text_encoder: TextEncoderConfig::default(),
            unified_dim: default_unified_dim(),
            decoder_width: default_decoder_width(),
            temperature: default_temperature(),
            loss: default_loss(),
            cmu_target: default_cmu_target(),
            fusion: default_fusion(),
            cloud: CloudTrainingConfig::default(),
            augment: None,
            optimizer: OptimizerConfig::default(),
            batch_size: default_batch_size(),
            stage1_iters: default_stage1_iters(),
            stage2_iters: default_stage2_iters(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(Error::Config(format!("temperature {} must be > 0", self.temperature)));
        }
        let opt = &self.optimizer;
        for (name, lr) in [
            ("stage1_lr", opt.stage1_lr),
            ("stage2_lr", opt.stage2_lr),
            ("encoder_lr", opt.encoder_lr),
        ] {
            if lr <= 0.0 {
                return Err(Error::Config(format!("{name} {lr} must be > 0")));
            }
        }
        if opt.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if self.loss == LossKind::Infonce && self.batch_size < 2 {
            return Err(Error::Config(
                "infonce needs batch_size >= 2 (in-batch negatives require at least one negative)"
                    .into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.unified_dim != self.global_encoder.output_dim {
            return Err(Error::Config(format!(
                "unified_dim {} must equal global_encoder.output_dim {} for cosine similarity",
                self.unified_dim, self.global_encoder.output_dim
            )));
        }
        let d = &self.dense_encoder;
        if d.embed_dim % d.heads != 0 || self.global_encoder.embed_dim % self.global_encoder.heads != 0
        {
            return Err(Error::Config("embed_dim must be divisible by heads".into()));
        }
        if self.text_encoder.embed_dim % self.text_encoder.heads != 0 {
            return Err(Error::Config("text embed_dim must be divisible by heads".into()));
        }
        let taps = tap_indices(d.tap_fractions, d.depth)?;
        if taps[2] != d.depth {
            return Err(Error::Config(format!(
                "last tap {} must be the final block {}",
                taps[2], d.depth
            )));
        }
        self.cloud.params.validate()?;
        if let Some(augment) = &self.augment {
            augment.validate()?;
        }
        if self.classes_seen.is_empty() {
            return Err(Error::Config("classes_seen must not be empty".into()));
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> Result<ClassVocabulary> {
        resolve_vocabulary(
            &self.classes_seen,
            &self.classes_novel,
            &self.prompt_template,
            self.ignore_index,
        )
    }

    /// Stable hash of the resolved config; checkpoints reject mismatches.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        let mut out = String::with_capacity(16);
        for byte in digest.iter().take(8) {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }
}

/// 1-based block indices `ceil(f * depth)`; must be strictly increasing.
pub fn tap_indices(fractions: [f64; 3], depth: usize) -> Result<[usize; 3]> {
    let mut out = [0usize; 3];
    for (i, f) in fractions.iter().enumerate() {
        if !(0.0..=1.0).contains(f) || *f <= 0.0 {
            return Err(Error::Config(format!("tap fraction {f} outside (0,1]")));
        }
        out[i] = (f * depth as f64).ceil() as usize;
    }
    if !(out[0] < out[1] && out[1] < out[2]) {
        return Err(Error::Config(format!(
            "tap fractions {fractions:?} give non-distinct blocks {out:?} at depth {depth}"
        )));
    }
    Ok(out)
}

/// Parse a config JSON document and apply `--set key.path=value` overrides
/// before strict deserialization.
pub fn parse_config(text: &str, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| Error::Config(format!("malformed config JSON: {e}")))?;
    for (key, raw) in overrides {
        let parsed: serde_json::Value =
            serde_json::from_str(raw).unwrap_or(serde_json::Value::String(raw.clone()));
        set_path(&mut value, key, parsed)?;
    }
    let config: RunConfig = serde_json::from_value(value)
        .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
    config.validate()?;
    Ok(config)
}

fn set_path(root: &mut serde_json::Value, path: &str, new: serde_json::Value) -> Result<()> {
    let mut current = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = current
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("--set path {path}: {part} is not an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), new);
            return Ok(());
        }
        current = obj.entry(part.to_string()).or_insert_with(|| serde_json::json!({}));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_json() -> String {
        serde_json::to_string(&RunConfig::toy_defaults(
            "manifest.json",
            &["Background", "Field"],
            &["Water"],
        ))
        .unwrap()
    }

    #[test]
    fn defaults_follow_published_recipe() {
        let opt = OptimizerConfig::default();
        assert_eq!(opt.stage1_lr, 3e-4);
        assert_eq!(opt.weight_decay, 1e-4);
        assert_eq!(opt.stage2_lr, 2.5e-4);
        assert_eq!(opt.encoder_lr, 2e-6);
        assert_eq!(default_batch_size(), 8);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut value: serde_json::Value = serde_json::from_str(&base_json()).unwrap();
        value.as_object_mut().unwrap().insert("lerning_rate".into(), serde_json::json!(0.1));
        let err = parse_config(&value.to_string(), &[]).unwrap_err();
        assert!(err.to_string().contains("lerning_rate"), "{err}");
    }

    #[test]
    fn overrides_take_effect_and_nested_paths_work() {
        let config = parse_config(
            &base_json(),
            &[
                ("seed".into(), "7".into()),
                ("optimizer.stage1_lr".into(), "0.001".into()),
                ("loss".into(), "\"mse\"".into()),
            ],
        )
        .unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.optimizer.stage1_lr, 0.001);
        assert_eq!(config.loss, LossKind::Mse);
    }

    #[test]
    fn infonce_with_batch_one_is_rejected() {
        let err = parse_config(&base_json(), &[("batch_size".into(), "1".into())]).unwrap_err();
        assert!(err.to_string().contains("in-batch negatives"), "{err}");
    }

    #[test]
    fn tap_rule_matches_ceiling() {
        assert_eq!(tap_indices([1.0 / 3.0, 2.0 / 3.0, 1.0], 6).unwrap(), [2, 4, 6]);
        assert_eq!(tap_indices([1.0 / 3.0, 2.0 / 3.0, 1.0], 12).unwrap(), [4, 8, 12]);
        assert!(tap_indices([0.1, 0.15, 1.0], 6).is_err()); // both round to 1
    }

    #[test]
    fn config_hash_changes_with_content() {
        let a = parse_config(&base_json(), &[]).unwrap();
        let b = parse_config(&base_json(), &[("seed".into(), "99".into())]).unwrap();
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash(), parse_config(&base_json(), &[]).unwrap().config_hash());
    }
}
