//! Experiment configuration: defaults, the line-based `key = value` parser,
//! overrides, and the resolved snapshot that makes runs reproducible.

use crate::error::{Error, Result};
use crate::nn::network::NetworkConfig;
use crate::scenes::{SceneConfig, SceneFamily};
use crate::trainer::{LossKind, MixStrategy, TrainConfig, WeightScheme};

/// Union of scene, network, training and experiment settings. Every field
/// has a default; a config file only lists deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    // scene
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub family: SceneFamily,
    pub objects_min: usize,
    pub objects_max: usize,
    pub noise: f64,
    pub train_scenes: usize,
    pub eval_scenes: usize,
    pub labelled_fraction: f64,
    pub data_seed: u64,
    // network
    pub hidden_widths: Vec<usize>,
    pub kernel_size: usize,
    // training
    pub mix_strategy: MixStrategy,
    pub weight_scheme: WeightScheme,
    pub constant_weight: f64,
    pub loss_kind: LossKind,
    pub use_pseudo_label: bool,
    pub tau: f64,
    pub ema_alpha: f64,
    pub iterations: u64,
    pub batch_labelled: usize,
    pub batch_unlabelled: usize,
    pub extra_augment: bool,
    pub jitter_strength: f64,
    /// 0 disables cropping.
    pub crop_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub poly_power: f64,
    pub cow_sigma: f64,
    pub cow_p: f64,
    pub eval_teacher: bool,
    // experiment
    pub eval_interval: u64,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> ExperimentConfig {
        ExperimentConfig {
            height: 64,
            width: 64,
            classes: 6,
            family: SceneFamily::Structured,
            objects_min: 2,
            objects_max: 4,
            noise: 0.03,
            train_scenes: 240,
            eval_scenes: 60,
            labelled_fraction: 0.125,
            data_seed: 1,
            hidden_widths: vec![16, 16, 16],
            kernel_size: 3,
            mix_strategy: MixStrategy::ClassMix,
            weight_scheme: WeightScheme::ConfidenceProportion,
            constant_weight: 1.0,
            loss_kind: LossKind::CrossEntropy,
            use_pseudo_label: true,
            tau: 0.968,
            ema_alpha: 0.99,
            iterations: 4000,
            batch_labelled: 2,
            batch_unlabelled: 2,
            extra_augment: false,
            jitter_strength: 1.0,
            crop_size: 0,
            base_lr: 0.02,
            momentum: 0.9,
            weight_decay: 5e-4,
            poly_power: 0.9,
            cow_sigma: 16.0,
            cow_p: 0.5,
            eval_teacher: false,
            eval_interval: 200,
            seeds: vec![0, 1, 2],
        }
    }
}

fn cfg_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Config {
        line,
        msg: msg.into(),
    }
}

fn parse_num<T: std::str::FromStr>(value: &str, line: usize, key: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| cfg_err(line, format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(value: &str, line: usize, key: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(cfg_err(line, format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_list<T: std::str::FromStr>(value: &str, line: usize, key: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|s| s.trim().parse::<T>().map_err(|_| cfg_err(line, format!("{key}: bad list entry {s:?}"))))
        .collect()
}

impl ExperimentConfig {
    /// Apply one `key = value` pair, validating ranges. `line` is reported
    /// in errors (0 for command-line overrides).
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        match key {
            "height" => self.height = parse_num(value, line, key)?,
            "width" => self.width = parse_num(value, line, key)?,
            "classes" => {
                self.classes = parse_num(value, line, key)?;
                if self.classes < 3 || self.classes > 255 {
                    return Err(cfg_err(line, format!("classes must be in 3..=255, got {value}")));
                }
            }
            "family" => {
                self.family = match value {
                    "structured" => SceneFamily::Structured,
                    "unstructured" => SceneFamily::Unstructured,
                    _ => {
                        return Err(cfg_err(
                            line,
                            format!("family: {value:?} is not one of structured, unstructured"),
                        ))
                    }
                }
            }
            "objects_min" => self.objects_min = parse_num(value, line, key)?,
            "objects_max" => self.objects_max = parse_num(value, line, key)?,
            "noise" => {
                self.noise = parse_num(value, line, key)?;
                if !(0.0..=1.0).contains(&self.noise) {
                    return Err(cfg_err(line, "noise must be in [0, 1]"));
                }
            }
            "train_scenes" => self.train_scenes = parse_num(value, line, key)?,
            "eval_scenes" => self.eval_scenes = parse_num(value, line, key)?,
            "labelled_fraction" => {
                self.labelled_fraction = parse_num(value, line, key)?;
                if !(self.labelled_fraction > 0.0 && self.labelled_fraction <= 1.0) {
                    return Err(cfg_err(line, "labelled_fraction must be in (0, 1]"));
                }
            }
            "data_seed" => self.data_seed = parse_num(value, line, key)?,
            "hidden_widths" => {
                self.hidden_widths = parse_list(value, line, key)?;
                if self.hidden_widths.iter().any(|&w| w == 0) {
                    return Err(cfg_err(line, "hidden_widths entries must be positive"));
                }
            }
            "kernel_size" => {
                self.kernel_size = parse_num(value, line, key)?;
                if self.kernel_size % 2 == 0 || self.kernel_size == 0 {
                    return Err(cfg_err(line, "kernel_size must be odd and positive"));
                }
            }
            "mix_strategy" => {
                self.mix_strategy = match value {
                    "classmix" => MixStrategy::ClassMix,
                    "cutmix" => MixStrategy::CutMix,
                    "cowmix" => MixStrategy::CowMix,
                    "none" => MixStrategy::None,
                    _ => {
                        return Err(cfg_err(
                            line,
                            format!("mix_strategy: {value:?} is not one of classmix, cutmix, cowmix, none"),
                        ))
                    }
                }
            }
            "weight_scheme" => {
                self.weight_scheme = match value {
                    "confidence_proportion" => WeightScheme::ConfidenceProportion,
                    "pixelwise_threshold" => WeightScheme::PixelwiseThreshold,
                    "sigmoid_rampup" => WeightScheme::SigmoidRampup,
                    "constant" => WeightScheme::Constant,
                    _ => {
                        return Err(cfg_err(
                            line,
                            format!(
                                "weight_scheme: {value:?} is not one of confidence_proportion, \
                                 pixelwise_threshold, sigmoid_rampup, constant"
                            ),
                        ))
                    }
                }
            }
            "constant_weight" => {
                self.constant_weight = parse_num(value, line, key)?;
                if !(0.0..=1.0).contains(&self.constant_weight) {
                    return Err(cfg_err(line, "constant_weight must be in [0, 1]"));
                }
            }
            "loss_kind" => {
                self.loss_kind = match value {
                    "cross_entropy" => LossKind::CrossEntropy,
                    "squared_error" => LossKind::SquaredError,
                    _ => {
                        return Err(cfg_err(
                            line,
                            format!("loss_kind: {value:?} is not one of cross_entropy, squared_error"),
                        ))
                    }
                }
            }
            "use_pseudo_label" => self.use_pseudo_label = parse_bool(value, line, key)?,
            "tau" => {
                self.tau = parse_num(value, line, key)?;
                if !(self.tau > 0.0 && self.tau < 1.0) {
                    return Err(cfg_err(line, "tau must be in (0, 1)"));
                }
            }
            "ema_alpha" => {
                self.ema_alpha = parse_num(value, line, key)?;
                if !(0.0..=1.0).contains(&self.ema_alpha) {
                    return Err(cfg_err(line, "ema_alpha must be in [0, 1]"));
                }
            }
            "iterations" => self.iterations = parse_num(value, line, key)?,
            "batch_labelled" => {
                self.batch_labelled = parse_num(value, line, key)?;
                if self.batch_labelled == 0 {
                    return Err(cfg_err(line, "batch_labelled must be at least 1"));
                }
            }
            "batch_unlabelled" => self.batch_unlabelled = parse_num(value, line, key)?,
            "extra_augment" => self.extra_augment = parse_bool(value, line, key)?,
            "jitter_strength" => {
                self.jitter_strength = parse_num(value, line, key)?;
                if !(0.0..=1.0).contains(&self.jitter_strength) {
                    return Err(cfg_err(line, "jitter_strength must be in [0, 1]"));
                }
            }
            "crop_size" => self.crop_size = parse_num(value, line, key)?,
            "base_lr" => {
                self.base_lr = parse_num(value, line, key)?;
                if self.base_lr <= 0.0 {
                    return Err(cfg_err(line, "base_lr must be positive"));
                }
            }
            "momentum" => {
                self.momentum = parse_num(value, line, key)?;
                if !(0.0..1.0).contains(&self.momentum) {
                    return Err(cfg_err(line, "momentum must be in [0, 1)"));
                }
            }
            "weight_decay" => {
                self.weight_decay = parse_num(value, line, key)?;
                if self.weight_decay < 0.0 {
                    return Err(cfg_err(line, "weight_decay must be non-negative"));
                }
            }
            "poly_power" => {
                self.poly_power = parse_num(value, line, key)?;
                if self.poly_power < 0.0 {
                    return Err(cfg_err(line, "poly_power must be non-negative"));
                }
            }
            "cow_sigma" => {
                self.cow_sigma = parse_num(value, line, key)?;
                if self.cow_sigma <= 0.0 {
                    return Err(cfg_err(line, "cow_sigma must be positive"));
                }
            }
            "cow_p" => {
                self.cow_p = parse_num(value, line, key)?;
                if !(self.cow_p > 0.0 && self.cow_p < 1.0) {
                    return Err(cfg_err(line, "cow_p must be in (0, 1)"));
                }
            }
            "eval_teacher" => self.eval_teacher = parse_bool(value, line, key)?,
            "eval_interval" => {
                self.eval_interval = parse_num(value, line, key)?;
                if self.eval_interval == 0 {
                    return Err(cfg_err(line, "eval_interval must be positive"));
                }
            }
            "seeds" => {
                self.seeds = parse_list(value, line, key)?;
                if self.seeds.is_empty() {
                    return Err(cfg_err(line, "seeds must not be empty"));
                }
            }
            _ => return Err(cfg_err(line, format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Apply a command-line `key=value` override.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| cfg_err(0, format!("override {pair:?} is not key=value")))?;
        self.set(key.trim(), value.trim(), 0)
    }

    /// Cross-field checks that individual setters cannot see.
    pub fn validate(&self) -> Result<()> {
        if self.objects_min == 0 || self.objects_min > self.objects_max {
            return Err(cfg_err(0, "objects_min must be in 1..=objects_max"));
        }
        if self.height < 32 || self.width < 32 {
            return Err(cfg_err(0, "height and width must be at least 32"));
        }
        if self.crop_size > 0 && (self.crop_size > self.height || self.crop_size > self.width) {
            return Err(cfg_err(0, "crop_size does not fit in the scene"));
        }
        if self.train_scenes == 0 || self.eval_scenes == 0 {
            return Err(cfg_err(0, "train_scenes and eval_scenes must be positive"));
        }
        if self.mix_strategy != MixStrategy::None && self.batch_unlabelled == 0 {
            return Err(cfg_err(0, "batch_unlabelled must be at least 1 when mixing"));
        }
        Ok(())
    }

    pub fn to_scene_config(&self) -> SceneConfig {
        let mut scene = match self.family {
            SceneFamily::Structured => SceneConfig::structured(self.height, self.width, self.classes),
            SceneFamily::Unstructured => SceneConfig::unstructured(self.height, self.width, self.classes),
        };
        scene.objects_min = self.objects_min;
        scene.objects_max = self.objects_max;
        scene.noise_amplitude = self.noise;
        scene
    }

    pub fn to_net_config(&self) -> NetworkConfig {
        NetworkConfig {
            in_channels: 3,
            num_classes: self.classes,
            hidden_widths: self.hidden_widths.clone(),
            kernel_sizes: vec![self.kernel_size; self.hidden_widths.len() + 1],
        }
    }

    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            mix_strategy: self.mix_strategy,
            weight_scheme: self.weight_scheme,
            loss_kind: self.loss_kind,
            use_pseudo_label: self.use_pseudo_label,
            tau: self.tau,
            ema_alpha: self.ema_alpha,
            iterations: self.iterations,
            batch_labelled: self.batch_labelled,
            batch_unlabelled: self.batch_unlabelled,
            extra_augment: self.extra_augment,
            jitter_strength: self.jitter_strength,
            crop: (self.crop_size > 0).then_some((self.crop_size, self.crop_size)),
            base_lr: self.base_lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            poly_power: self.poly_power,
            constant_weight: self.constant_weight,
            cow_sigma: self.cow_sigma,
            cow_p: self.cow_p,
            eval_teacher: self.eval_teacher,
            eval_interval: self.eval_interval,
            seed,
        }
    }

    /// Resolved snapshot: every key in a fixed order, re-parseable by
    /// [`parse_config`] to an identical configuration.
    pub fn to_text(&self) -> String {
        let family = match self.family {
            SceneFamily::Structured => "structured",
            SceneFamily::Unstructured => "unstructured",
        };
        let mix = match self.mix_strategy {
            MixStrategy::ClassMix => "classmix",
            MixStrategy::CutMix => "cutmix",
            MixStrategy::CowMix => "cowmix",
            MixStrategy::None => "none",
        };
        let scheme = match self.weight_scheme {
            WeightScheme::ConfidenceProportion => "confidence_proportion",
            WeightScheme::PixelwiseThreshold => "pixelwise_threshold",
            WeightScheme::SigmoidRampup => "sigmoid_rampup",
            WeightScheme::Constant => "constant",
        };
        let loss = match self.loss_kind {
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::SquaredError => "squared_error",
        };
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let seed_list = self.seeds.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "height = {}\nwidth = {}\nclasses = {}\nfamily = {}\nobjects_min = {}\nobjects_max = {}\n\
             noise = {}\ntrain_scenes = {}\neval_scenes = {}\nlabelled_fraction = {}\ndata_seed = {}\n\
             hidden_widths = {}\nkernel_size = {}\nmix_strategy = {}\nweight_scheme = {}\n\
             constant_weight = {}\nloss_kind = {}\nuse_pseudo_label = {}\ntau = {}\nema_alpha = {}\n\
             iterations = {}\nbatch_labelled = {}\nbatch_unlabelled = {}\nextra_augment = {}\n\
             jitter_strength = {}\ncrop_size = {}\nbase_lr = {}\nmomentum = {}\nweight_decay = {}\n\
             poly_power = {}\ncow_sigma = {}\ncow_p = {}\neval_teacher = {}\neval_interval = {}\nseeds = {}\n",
            self.height,
            self.width,
            self.classes,
            family,
            self.objects_min,
            self.objects_max,
            self.noise,
            self.train_scenes,
            self.eval_scenes,
            self.labelled_fraction,
            self.data_seed,
            list(&self.hidden_widths),
            self.kernel_size,
            mix,
            scheme,
            self.constant_weight,
            loss,
            self.use_pseudo_label,
            self.tau,
            self.ema_alpha,
            self.iterations,
            self.batch_labelled,
            self.batch_unlabelled,
            self.extra_augment,
            self.jitter_strength,
            self.crop_size,
            self.base_lr,
            self.momentum,
            self.weight_decay,
            self.poly_power,
            self.cow_sigma,
            self.cow_p,
            self.eval_teacher,
            self.eval_interval,
            seed_list,
        )
    }
}

/// Parse `key = value` lines; `#` starts a comment, blank lines are skipped,
/// unknown keys and out-of-range values are rejected with their line number.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| cfg_err(line_no, format!("malformed line {line:?}, expected key = value")))?;
        config.set(key.trim(), value.trim(), line_no)?;
    }
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let config = parse_config("").unwrap();
        assert_eq!(config, ExperimentConfig::default());
    }

    #[test]
    fn tau_key_parses() {
        let config = parse_config("tau = 0.968\n").unwrap();
        assert_eq!(config.tau, 0.968);
    }

    #[test]
    fn comments_and_blanks_skipped() {
        let config = parse_config("# a comment\n\n  iterations = 10  # trailing\n").unwrap();
        assert_eq!(config.iterations, 10);
    }

    #[test]
    fn unknown_enum_value_names_line_and_choices() {
        let err = parse_config("mix_strategy = classmiks\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 1"), "{msg}");
        assert!(msg.contains("classmix") && msg.contains("cutmix") && msg.contains("cowmix") && msg.contains("none"), "{msg}");
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let err = parse_config("iterations = 5\nnot_a_key = 3\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(parse_config("tau = 1.5\n").is_err());
        assert!(parse_config("labelled_fraction = 0\n").is_err());
        assert!(parse_config("classes = 2\n").is_err());
        assert!(parse_config("kernel_size = 4\n").is_err());
        assert!(parse_config("crop_size = 100\n").is_err());
    }

    #[test]
    fn malformed_line_rejected() {
        let err = parse_config("just some words\n").unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }

    #[test]
    fn snapshot_roundtrip_identical() {
        let mut config = ExperimentConfig::default();
        config.set("mix_strategy", "cowmix", 1).unwrap();
        config.set("tau", "0.9", 1).unwrap();
        config.set("seeds", "5,6,7", 1).unwrap();
        config.set("crop_size", "48", 1).unwrap();
        let text = config.to_text();
        let back = parse_config(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn override_applies_and_reports_bad_pairs() {
        let mut config = ExperimentConfig::default();
        config.apply_override("iterations=123").unwrap();
        assert_eq!(config.iterations, 123);
        assert!(config.apply_override("no-equals-sign").is_err());
        assert!(config.apply_override("tau=2.0").is_err());
    }
}
