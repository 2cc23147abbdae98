//! Configuration tree for the whole pipeline.
//!
//! Every knob has a default chosen to match the reference hyperparameters;
//! a TOML file (or CLI overrides) can change any subset. Unknown keys are
//! rejected so typos fail loudly.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub backbone: BackboneConfig,
    pub descriptor: DescriptorConfig,
    pub graph: GraphConfig,
    pub transport: TransportConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub datagen: DatagenConfig,
    pub eval: EvalConfig,
}

/// Five stride-2 stages; two taps stand in for a shallow and a deep layer
/// of a large pretrained network.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    /// Image channels expected by the first stage.
    pub input_channels: usize,
    pub channels: Vec<usize>,
    /// 1-based stage index whose output is the shallow tap.
    pub shallow_tap: usize,
    /// 1-based stage index whose output is the deep tap.
    pub deep_tap: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            input_channels: 3,
            channels: vec![16, 32, 64, 64, 64],
            shallow_tap: 2,
            deep_tap: 4,
        }
    }
}

impl BackboneConfig {
    pub fn shallow_stride(&self) -> usize {
        1 << self.shallow_tap
    }

    pub fn deep_stride(&self) -> usize {
        1 << self.deep_tap
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::config("backbone.channels must be non-empty"));
        }
        if self.input_channels == 0 {
            return Err(Error::config("backbone.input_channels must be positive"));
        }
        if self.shallow_tap == 0 || self.deep_tap <= self.shallow_tap {
            return Err(Error::config(
                "backbone taps must satisfy 1 <= shallow_tap < deep_tap",
            ));
        }
        if self.deep_tap > self.channels.len() {
            return Err(Error::config("backbone.deep_tap exceeds stage count"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DescriptorConfig {
    /// Samples across the line width (odd).
    pub cells: usize,
    /// Number of max-pooled groups along the line.
    pub groups: usize,
    /// Gaussian width across the line; `None` means `cells / 4`.
    pub sigma: Option<f64>,
    /// Drop lines whose best descriptor similarity falls below this.
    pub exclusion_threshold: f64,
    pub exclusion_enabled: bool,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        DescriptorConfig {
            cells: 7,
            groups: 5,
            sigma: None,
            exclusion_threshold: 0.5,
            exclusion_enabled: true,
        }
    }
}

impl DescriptorConfig {
    pub fn sigma_value(&self) -> f64 {
        self.sigma.unwrap_or(self.cells as f64 / 4.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells == 0 || self.cells % 2 == 0 {
            return Err(Error::config("descriptor.cells must be odd and positive"));
        }
        if self.groups == 0 {
            return Err(Error::config("descriptor.groups must be positive"));
        }
        if self.sigma_value() <= 0.0 {
            return Err(Error::config("descriptor.sigma must be positive"));
        }
        if !(0.0..=1.0).contains(&self.exclusion_threshold) {
            return Err(Error::config(
                "descriptor.exclusion_threshold must lie in [0, 1]",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    /// Number of stacked intra+cross convolution blocks.
    pub blocks: usize,
    /// Feature width inside the graph blocks.
    pub width: usize,
    /// Keep ratio at 0-based block `l` is `max(keep_start / 2^(l+1), keep_floor)`.
    pub keep_start: f64,
    pub keep_floor: f64,
    /// Zero non-mutual relation scores before forming the adjacency.
    pub strict_mutual: bool,
    /// Replace learned sparse adjacency with a uniform dense one (ablation).
    pub uniform_adjacency: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            blocks: 3,
            width: 128,
            keep_start: 0.4,
            keep_floor: 0.1,
            strict_mutual: true,
            uniform_adjacency: false,
        }
    }
}

impl GraphConfig {
    /// Keep ratio schedule for block `l` (0-based).
    pub fn keep_ratio(&self, l: usize) -> f64 {
        (self.keep_start / (1u64 << (l + 1)) as f64).max(self.keep_floor)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.width == 0 {
            return Err(Error::config("graph.blocks and graph.width must be positive"));
        }
        if !(self.keep_start > 0.0 && self.keep_start <= 1.0)
            || !(self.keep_floor > 0.0 && self.keep_floor <= 1.0)
        {
            return Err(Error::config("graph keep ratios must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TransportConfig {
    /// Entropy temperature dividing the affinity scores.
    pub temperature: f64,
    pub max_iters: usize,
    /// Worst-case marginal residual at which iteration stops.
    pub tol: f64,
    /// Stop early once `tol` is reached (disable for gradient checks).
    pub early_stop: bool,
    /// Minimum assignment mass for an extracted match.
    pub score_floor: f64,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig {
            temperature: 0.5,
            max_iters: 100,
            tol: 1e-6,
            early_stop: true,
            score_floor: 0.2,
        }
    }
}

impl TransportConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(Error::config("transport.temperature must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("transport.max_iters must be positive"));
        }
        if self.tol <= 0.0 {
            return Err(Error::config("transport.tol must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub shallow_scale: f64,
    pub shallow_margin: f64,
    pub deep_scale: f64,
    pub deep_margin: f64,
    /// Weight of the descriptor loss; the assignment loss gets `1 - balance`.
    pub balance: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            shallow_scale: 30.0,
            shallow_margin: 0.5,
            deep_scale: 5.0,
            deep_margin: 0.2,
            balance: 0.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shallow_scale <= 0.0 || self.deep_scale <= 0.0 {
            return Err(Error::config("loss scales must be positive"));
        }
        if !(0.0..=1.0).contains(&self.balance) {
            return Err(Error::config("loss.balance must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Divide the learning rate by this factor after every epoch.
    pub lr_decay: f64,
    /// Never decay below this rate.
    pub lr_floor: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Random resize and rotation of training pairs.
    pub augment: bool,
    pub augment_max_rotation_deg: f64,
    pub augment_scale_range: (f64, f64),
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            lr_decay: 10.0,
            lr_floor: 1e-6,
            epochs: 10,
            batch_size: 4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 7,
            augment: true,
            augment_max_rotation_deg: 15.0,
            augment_scale_range: (0.8, 1.2),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || self.lr_decay < 1.0 || self.lr_floor <= 0.0 {
            return Err(Error::config("train rates must be positive, decay >= 1"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("train.epochs and train.batch_size must be positive"));
        }
        let (lo, hi) = self.augment_scale_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::config("train.augment_scale_range must be 0 < lo <= hi"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DatagenConfig {
    pub width: usize,
    pub height: usize,
    pub min_lines: usize,
    pub max_lines: usize,
    /// Sampled ratio of matched to unmatched lines per pair.
    pub match_ratio_range: (f64, f64),
    /// Endpoint positional noise in pixels for matched lines.
    pub endpoint_jitter: f64,
    pub seed: u64,
    /// Probability that a matched line loses its second-view counterpart.
    pub drop_prob: f64,
    /// Probability that a matched second-view line is shortened.
    pub fragment_prob: f64,
    /// Shortest generated segment in pixels.
    pub min_line_len: f64,
    /// Warp rotation bound in degrees.
    pub max_rotation_deg: f64,
    /// Warp scale interval.
    pub scale_range: (f64, f64),
    /// Warp translation bound as a fraction of the image size.
    pub max_translation_frac: f64,
    /// Warp perspective coefficient bound.
    pub max_perspective: f64,
    /// Depth-labeling angle threshold in degrees.
    pub angle_thresh_deg: f64,
    /// Depth-labeling mutual overlap threshold.
    pub overlap_thresh: f64,
    /// Pair filtering: fewest matched lines kept.
    pub min_matches: usize,
    /// Pair filtering: largest tolerated view overlap.
    pub max_overlap: f64,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        DatagenConfig {
            width: 96,
            height: 96,
            min_lines: 8,
            max_lines: 14,
            match_ratio_range: (0.5, 1.5),
            endpoint_jitter: 0.3,
            seed: 11,
            drop_prob: 0.1,
            fragment_prob: 0.1,
            min_line_len: 14.0,
            max_rotation_deg: 20.0,
            scale_range: (0.75, 1.25),
            max_translation_frac: 0.08,
            max_perspective: 2e-4,
            angle_thresh_deg: 5.0,
            overlap_thresh: 0.5,
            min_matches: 5,
            max_overlap: 0.9,
        }
    }
}

impl DatagenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 32 || self.height < 32 {
            return Err(Error::config("datagen image size must be at least 32"));
        }
        if self.min_lines == 0 || self.max_lines < self.min_lines {
            return Err(Error::config("datagen line counts must be 0 < min <= max"));
        }
        let (lo, hi) = self.match_ratio_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::config("datagen.match_ratio_range must be 0 < lo <= hi"));
        }
        if self.endpoint_jitter < 0.0 {
            return Err(Error::config("datagen.endpoint_jitter must be non-negative"));
        }
        for (name, p) in [("drop_prob", self.drop_prob), ("fragment_prob", self.fragment_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("datagen.{name} must be in [0, 1]")));
            }
        }
        if self.min_line_len <= 0.0 {
            return Err(Error::config("datagen.min_line_len must be positive"));
        }
        let (slo, shi) = self.scale_range;
        if !(slo > 0.0 && shi >= slo) {
            return Err(Error::config("datagen.scale_range must be 0 < lo <= hi"));
        }
        if !(self.angle_thresh_deg > 0.0) {
            return Err(Error::config("datagen.angle_thresh_deg must be positive"));
        }
        if !(0.0..=1.0).contains(&self.overlap_thresh) {
            return Err(Error::config("datagen.overlap_thresh must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.max_overlap) {
            return Err(Error::config("datagen.max_overlap must be in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Rotation sweep angles in degrees (split evenly across both images).
    pub rotation_sweep_deg: Vec<f64>,
    /// Gaussian blur standard deviations applied to both images.
    pub blur_sweep_sigma: Vec<f64>,
    /// Scale factors applied to both images.
    pub scale_sweep: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            rotation_sweep_deg: vec![0.0, 15.0, 30.0, 45.0, 60.0, 75.0, 90.0],
            blur_sweep_sigma: vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
            scale_sweep: vec![0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blur_sweep_sigma.iter().any(|&s| s <= 0.0) {
            return Err(Error::config("eval blur sigmas must be positive"));
        }
        if self.scale_sweep.iter().any(|&s| s <= 0.0) {
            return Err(Error::config("eval scale factors must be positive"));
        }
        Ok(())
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.descriptor.validate()?;
        self.graph.validate()?;
        self.transport.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.datagen.validate()?;
        self.eval.validate()
    }

    pub fn from_toml_str(s: &str) -> Result<Config> {
        let cfg: Config = toml::from_str(s).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| Error::MissingArtifact(path.display().to_string()))?;
        Self::from_toml_str(&text)
    }

    /// Short hash of the effective configuration, echoed in logs so runs
    /// can be traced back to their exact settings.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        let mut out = String::with_capacity(16);
        for b in digest.iter().take(8) {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_match_reference_values() {
        let c = Config::default();
        c.validate().unwrap();
        assert_eq!(c.descriptor.cells, 7);
        assert_eq!(c.descriptor.groups, 5);
        assert_eq!(c.descriptor.sigma_value(), 1.75);
        assert_eq!(c.loss.shallow_scale, 30.0);
        assert_eq!(c.loss.deep_scale, 5.0);
        assert_eq!(c.loss.shallow_margin, 0.5);
        assert_eq!(c.loss.deep_margin, 0.2);
        assert_eq!(c.loss.balance, 0.5);
        assert_eq!(c.train.lr, 1e-3);
        assert_eq!(c.train.epochs, 10);
        assert_eq!(c.train.batch_size, 4);
        assert_eq!(c.backbone.shallow_stride(), 4);
        assert_eq!(c.backbone.deep_stride(), 16);
    }

    #[test]
    fn keep_ratio_schedule_decays_to_floor() {
        let g = GraphConfig::default();
        assert!((g.keep_ratio(0) - 0.2).abs() < 1e-12);
        assert!((g.keep_ratio(1) - 0.1).abs() < 1e-12);
        assert!((g.keep_ratio(2) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = Config::from_toml_str("[transport]\nbogus = 1\n");
        assert!(err.is_err());
    }

    #[test]
    fn toml_round_trip_preserves_config() {
        let c = Config::default();
        let text = toml::to_string(&c).unwrap();
        let back = Config::from_toml_str(&text).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = Config::default();
        let mut b = Config::default();
        assert_eq!(a.hash(), b.hash());
        b.transport.temperature = 0.25;
        assert_ne!(a.hash(), b.hash());
    }
}
