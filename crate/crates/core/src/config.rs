//! Experiment configuration, dimension accounting and the flat `key = value` file format.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use num_rational::Rational64;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Source and channel compression ratios `(L_s / L_i, L_c / L_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrPair {
    pub source: Rational64,
    pub channel: Rational64,
}

impl CrPair {
    pub fn new(source: Rational64, channel: Rational64) -> Self {
        Self { source, channel }
    }

    pub fn from_ints(s: (i64, i64), c: (i64, i64)) -> Self {
        Self::new(Rational64::new(s.0, s.1), Rational64::new(c.0, c.1))
    }

    fn problems(&self) -> Vec<String> {
        let zero = Rational64::from_integer(0);
        let one = Rational64::from_integer(1);
        let mut out = vec![];
        if !(zero < self.channel && self.channel <= self.source && self.source <= one) {
            out.push(format!(
                "CR pair ({}, {}) must satisfy 0 < cr_c <= cr_s <= 1",
                self.source, self.channel
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OfdmParams {
    pub subcarriers: usize,
    pub data_symbols: usize,
    pub pilot_symbols: usize,
    pub cp_len: usize,
}

impl OfdmParams {
    /// Complex data slots in one frame.
    pub fn data_slots(&self) -> usize {
        self.subcarriers * self.data_symbols
    }

    pub fn frame_samples(&self) -> usize {
        (self.subcarriers + self.cp_len) * (self.data_symbols + self.pilot_symbols)
    }
}

impl Default for OfdmParams {
    fn default() -> Self {
        Self {
            subcarriers: 64,
            data_symbols: 6,
            pilot_symbols: 2,
            cp_len: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    pub paths: usize,
    /// Exponential decay rate of the tap power profile.
    pub decay: f64,
    pub snr_db: f64,
}

impl ChannelParams {
    /// Normalized power-delay profile `p_l ∝ exp(-decay * l)`, `l = 0..paths`.
    pub fn tap_profile(&self) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.paths).map(|l| (-self.decay * l as f64).exp()).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|p| p / total).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DerivedDims {
    pub source_len: usize,
    pub semantic_len: usize,
    pub channel_len: usize,
    pub frames_per_image: usize,
    pub classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainHyper {
    pub lambda: f64,
    pub mu: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs_pretrain: usize,
    pub epochs_finetune: usize,
    pub train_snr_db: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            lambda: 0.15,
            mu: 1.0,
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.99,
            batch_size: 128,
            epochs_pretrain: 200,
            epochs_finetune: 60,
            train_snr_db: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EncoderPreset {
    PaperR50,
    PaperR34,
    DeskCnn,
}

impl EncoderPreset {
    pub fn output_dim(self) -> usize {
        match self {
            EncoderPreset::PaperR50 => 2048,
            EncoderPreset::PaperR34 => 512,
            EncoderPreset::DeskCnn => 128,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Slscom,
    SlscomFw,
    SlscomDs,
    Rscom,
    Tscom,
    TscomFw,
    /// Semantic encoder/decoder trained on clean features, features sent digitally.
    Hybrid,
}

impl Mode {
    pub const ALL: [Mode; 7] = [
        Mode::Slscom,
        Mode::SlscomFw,
        Mode::SlscomDs,
        Mode::Rscom,
        Mode::Tscom,
        Mode::TscomFw,
        Mode::Hybrid,
    ];

    pub fn freezes_encoder(self) -> bool {
        matches!(self, Mode::SlscomFw | Mode::TscomFw)
    }

    /// Modes whose encoder starts from self-supervised pre-training.
    pub fn uses_pretraining(self) -> bool {
        matches!(self, Mode::Slscom | Mode::SlscomFw | Mode::SlscomDs | Mode::Hybrid)
    }

    pub fn needs_external_weights(self) -> bool {
        matches!(self, Mode::Tscom | Mode::TscomFw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Ablations {
    pub no_reconstruction: bool,
    pub no_aux_projection: bool,
    pub no_color_transforms: bool,
}

/// `pretrained_path` value selecting the supervised stand-in for external transfer weights.
pub const TRANSFER_STANDIN: &str = "standin";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Cifar10,
    /// Procedurally generated ten-class shape images, for smoke tests and offline runs.
    Synthetic,
    /// Raw container file (see `data::raw`).
    Raw,
}

/// Channel code used by the hybrid baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HybridCode {
    /// Rate-1 identity.
    Null,
    /// Regular rate-2/3 LDPC with a 864 x 2304 parity-check matrix.
    Ldpc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JsccSpec {
    pub filters: usize,
    pub channel_filters: usize,
    pub sampling: usize,
    /// `(channels, height, width)` grid the semantic vector is reshaped to.
    pub grid: (usize, usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentPolicy {
    pub flip_prob: f64,
    pub jitter_prob: f64,
    /// (brightness, contrast, saturation, hue)
    pub jitter_strengths: (f64, f64, f64, f64),
    pub gray_prob: f64,
    pub blur_kernel: usize,
    pub blur_sigma: (f64, f64),
    pub blur_prob: f64,
    pub color_enabled: bool,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            jitter_prob: 0.8,
            jitter_strengths: (0.4, 0.4, 0.4, 0.1),
            gray_prob: 0.2,
            blur_kernel: 3,
            blur_sigma: (0.1, 2.0),
            blur_prob: 1.0,
            color_enabled: true,
        }
    }
}

impl AugmentPolicy {
    fn problems(&self) -> Vec<String> {
        let mut out = vec![];
        for (name, p) in [
            ("flip_prob", self.flip_prob),
            ("jitter_prob", self.jitter_prob),
            ("gray_prob", self.gray_prob),
            ("blur_prob", self.blur_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                out.push(format!("{name} = {p} is not a probability"));
            }
        }
        if self.blur_kernel % 2 == 0 {
            out.push(format!("blur kernel size {} must be odd", self.blur_kernel));
        }
        if !(0.0 < self.blur_sigma.0 && self.blur_sigma.0 <= self.blur_sigma.1) {
            out.push("blur sigma range must satisfy 0 < min <= max".into());
        }
        let (b, c, s, h) = self.jitter_strengths;
        if b < 0.0 || c < 0.0 || s < 0.0 || !(0.0..=0.5).contains(&h) {
            out.push("jitter strengths must be nonnegative with hue <= 0.5".into());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub unlabeled: usize,
    pub labeled: usize,
    pub excluded_classes: BTreeSet<usize>,
    pub per_class_uniform: bool,
    pub val_fraction: f64,
    /// Allow the labeled split to reuse samples of the unlabeled split.
    pub allow_overlap: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            unlabeled: 32_000,
            labeled: 2_000,
            excluded_classes: BTreeSet::new(),
            per_class_uniform: false,
            val_fraction: 0.1,
            allow_overlap: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: String,
    pub image_shape: (usize, usize, usize),
    pub classes: usize,
    pub cr: CrPair,
    pub ofdm: OfdmParams,
    pub paths: usize,
    pub decay: f64,
    pub hyper: TrainHyper,
    pub encoder: EncoderPreset,
    pub proj_hidden: usize,
    pub proj_dim: usize,
    pub jscc: JsccSpec,
    pub bn_momentum: f64,
    pub mode: Mode,
    pub ablations: Ablations,
    pub augment: AugmentPolicy,
    pub dataset: DatasetKind,
    pub data_dir: Option<PathBuf>,
    /// Dataset for D_r in `slscom_ds` mode.
    pub pretrain_dataset: Option<DatasetKind>,
    pub pretrain_data_dir: Option<PathBuf>,
    pub synthetic_train: usize,
    pub synthetic_test: usize,
    pub split: SplitSpec,
    /// Cap on evaluated test images (0 = whole test set).
    pub test_limit: usize,
    pub test_snrs: Vec<f64>,
    pub repeats_train: usize,
    pub repeats_test: usize,
    pub seed: u64,
    pub pretrained_path: Option<PathBuf>,
    /// Labeled samples used by the supervised stand-in for external TSCom weights.
    pub tscom_standin_labels: usize,
    pub checkpoint_every: usize,
    /// Clipping bound multiplier for the hybrid baseline quantizer.
    pub clip_sigmas: f64,
    /// Channel code of the hybrid baseline.
    pub hybrid_code: HybridCode,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::paper_r50()
    }
}

impl ExperimentConfig {
    /// ResNet-50 encoder with CR pair (2/3, 1/4).
    pub fn paper_r50() -> Self {
        Self {
            preset: "paper_r50".into(),
            image_shape: (3, 32, 32),
            classes: 10,
            cr: CrPair::from_ints((2, 3), (1, 4)),
            ofdm: OfdmParams::default(),
            paths: 8,
            decay: 0.25,
            hyper: TrainHyper::default(),
            encoder: EncoderPreset::PaperR50,
            proj_hidden: 2048,
            proj_dim: 128,
            jscc: JsccSpec {
                filters: 64,
                channel_filters: 12,
                sampling: 2,
                grid: (8, 16, 16),
            },
            bn_momentum: 0.1,
            mode: Mode::Slscom,
            ablations: Ablations::default(),
            augment: AugmentPolicy::default(),
            dataset: DatasetKind::Cifar10,
            data_dir: None,
            pretrain_dataset: None,
            pretrain_data_dir: None,
            synthetic_train: 50_000,
            synthetic_test: 10_000,
            split: SplitSpec::default(),
            test_limit: 0,
            test_snrs: vec![-10.0, -8.0, -6.0, -4.0, -2.0, 0.0, 2.0],
            repeats_train: 3,
            repeats_test: 3,
            seed: 0,
            pretrained_path: None,
            tscom_standin_labels: 5_000,
            checkpoint_every: 0,
            clip_sigmas: 4.0,
            hybrid_code: HybridCode::Ldpc,
            output_dir: PathBuf::from("runs"),
        }
    }

    /// ResNet-34 encoder with CR pair (1/6, 1/8).
    pub fn paper_r34() -> Self {
        let mut cfg = Self::paper_r50();
        cfg.preset = "paper_r34".into();
        cfg.cr = CrPair::from_ints((1, 6), (1, 8));
        cfg.encoder = EncoderPreset::PaperR34;
        cfg.proj_hidden = 512;
        cfg.hyper.lambda = 0.1;
        cfg.jscc = JsccSpec {
            filters: 32,
            channel_filters: 6,
            sampling: 1,
            grid: (2, 16, 16),
        };
        cfg
    }

    /// Small convolutional encoder sized for CPU runs.
    pub fn desk() -> Self {
        let mut cfg = Self::paper_r50();
        cfg.preset = "desk".into();
        cfg.cr = CrPair::from_ints((1, 24), (1, 48));
        cfg.encoder = EncoderPreset::DeskCnn;
        cfg.proj_hidden = 128;
        cfg.proj_dim = 64;
        cfg.jscc = JsccSpec {
            filters: 32,
            channel_filters: 8,
            sampling: 1,
            grid: (8, 4, 4),
        };
        cfg.hyper.lambda = 0.1;
        cfg.hyper.lr = 1e-3;
        cfg.hyper.beta1 = 0.9;
        cfg.hyper.batch_size = 32;
        cfg.hyper.epochs_pretrain = 30;
        cfg.hyper.epochs_finetune = 60;
        cfg.split.unlabeled = 5_000;
        cfg.split.labeled = 500;
        cfg.test_limit = 2_000;
        cfg.test_snrs = vec![0.0];
        cfg.tscom_standin_labels = 2_000;
        cfg
    }

    pub fn from_preset(name: &str) -> Result<Self> {
        match name {
            "paper_r50" => Ok(Self::paper_r50()),
            "paper_r34" => Ok(Self::paper_r34()),
            "desk" => Ok(Self::desk()),
            other => Err(bad("preset", other, "expected paper_r50, paper_r34 or desk")),
        }
    }

    pub fn channel(&self, snr_db: f64) -> ChannelParams {
        ChannelParams {
            paths: self.paths,
            decay: self.decay,
            snr_db,
        }
    }

    pub fn dims(&self) -> Result<DerivedDims> {
        let mut d = derive_dimensions(self.image_shape, self.cr, &self.ofdm)?;
        d.classes = self.classes;
        Ok(d)
    }

    /// Effective pre-training weight of the reconstruction term.
    pub fn effective_lambda(&self) -> f64 {
        if self.ablations.no_reconstruction {
            0.0
        } else {
            self.hyper.lambda
        }
    }

    pub fn effective_augment(&self) -> AugmentPolicy {
        let mut p = self.augment.clone();
        if self.ablations.no_color_transforms {
            p.color_enabled = false;
        }
        p
    }

    // ---- text format ----

    /// Parse a config file. A leading `preset = ...` line selects the defaults the
    /// remaining keys override; keys are applied in file order.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = vec![];
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::ConfigParse {
                    line: i + 1,
                    message: format!("expected `key = value`, found `{line}`"),
                });
            };
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = match pairs.iter().find(|(k, _)| k == "preset") {
            Some((_, v)) => Self::from_preset(v)?,
            None => Self::default(),
        };
        for (k, v) in &pairs {
            if k != "preset" {
                cfg.set(k, v)?;
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Override one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "preset" => {
                let fresh = Self::from_preset(v)?;
                *self = fresh;
            }
            "image_shape" => self.image_shape = parse_triple(key, v)?,
            "classes" => self.classes = num(key, v)?,
            "cr_s" => self.cr.source = ratio(key, v)?,
            "cr_c" => self.cr.channel = ratio(key, v)?,
            "subcarriers" => self.ofdm.subcarriers = num(key, v)?,
            "data_symbols" => self.ofdm.data_symbols = num(key, v)?,
            "pilot_symbols" => self.ofdm.pilot_symbols = num(key, v)?,
            "cp_len" => self.ofdm.cp_len = num(key, v)?,
            "paths" => self.paths = num(key, v)?,
            "decay" => self.decay = num(key, v)?,
            "lambda" => self.hyper.lambda = num(key, v)?,
            "mu" => self.hyper.mu = num(key, v)?,
            "lr" => self.hyper.lr = num(key, v)?,
            "beta1" => self.hyper.beta1 = num(key, v)?,
            "beta2" => self.hyper.beta2 = num(key, v)?,
            "batch_size" => self.hyper.batch_size = num(key, v)?,
            "epochs_pretrain" => self.hyper.epochs_pretrain = num(key, v)?,
            "epochs_finetune" => self.hyper.epochs_finetune = num(key, v)?,
            "train_snr_db" | "train_snr" => self.hyper.train_snr_db = num(key, v)?,
            "encoder" => {
                self.encoder = match v {
                    "paper_r50" => EncoderPreset::PaperR50,
                    "paper_r34" => EncoderPreset::PaperR34,
                    "desk_cnn" => EncoderPreset::DeskCnn,
                    _ => return Err(bad(key, v, "expected paper_r50, paper_r34 or desk_cnn")),
                }
            }
            "proj_hidden" => self.proj_hidden = num(key, v)?,
            "proj_dim" => self.proj_dim = num(key, v)?,
            "jscc_filters" => self.jscc.filters = num(key, v)?,
            "jscc_channel_filters" => self.jscc.channel_filters = num(key, v)?,
            "jscc_sampling" => self.jscc.sampling = num(key, v)?,
            "jscc_grid" => self.jscc.grid = parse_triple(key, v)?,
            "bn_momentum" => self.bn_momentum = num(key, v)?,
            "mode" => self.mode = v.parse()?,
            "no_reconstruction" => self.ablations.no_reconstruction = flag(key, v)?,
            "no_aux_projection" => self.ablations.no_aux_projection = flag(key, v)?,
            "no_color_transforms" => self.ablations.no_color_transforms = flag(key, v)?,
            "flip_prob" => self.augment.flip_prob = num(key, v)?,
            "jitter_prob" => self.augment.jitter_prob = num(key, v)?,
            "jitter_strengths" => {
                let p = list::<f64>(key, v)?;
                if p.len() != 4 {
                    return Err(bad(key, v, "expected four comma-separated values"));
                }
                self.augment.jitter_strengths = (p[0], p[1], p[2], p[3]);
            }
            "gray_prob" => self.augment.gray_prob = num(key, v)?,
            "blur_kernel" => self.augment.blur_kernel = num(key, v)?,
            "blur_sigma" => {
                let p = list::<f64>(key, v)?;
                if p.len() != 2 {
                    return Err(bad(key, v, "expected `min, max`"));
                }
                self.augment.blur_sigma = (p[0], p[1]);
            }
            "blur_prob" => self.augment.blur_prob = num(key, v)?,
            "color_enabled" => self.augment.color_enabled = flag(key, v)?,
            "dataset" => self.dataset = v.parse()?,
            "data_dir" => self.data_dir = path(v),
            "pretrain_dataset" => self.pretrain_dataset = if v.is_empty() { None } else { Some(v.parse()?) },
            "pretrain_data_dir" => self.pretrain_data_dir = path(v),
            "synthetic_train" => self.synthetic_train = num(key, v)?,
            "synthetic_test" => self.synthetic_test = num(key, v)?,
            "unlabeled" => self.split.unlabeled = num(key, v)?,
            "labeled" | "labels" => self.split.labeled = num(key, v)?,
            "excluded_classes" => self.split.excluded_classes = list::<usize>(key, v)?.into_iter().collect(),
            "per_class_uniform" => self.split.per_class_uniform = flag(key, v)?,
            "val_fraction" => self.split.val_fraction = num(key, v)?,
            "allow_overlap" => self.split.allow_overlap = flag(key, v)?,
            "test_limit" => self.test_limit = num(key, v)?,
            "test_snrs" => self.test_snrs = list::<f64>(key, v)?,
            "repeats_train" => self.repeats_train = num(key, v)?,
            "repeats_test" => self.repeats_test = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "pretrained_path" => self.pretrained_path = path(v),
            "tscom_standin_labels" => self.tscom_standin_labels = num(key, v)?,
            "checkpoint_every" => self.checkpoint_every = num(key, v)?,
            "clip_sigmas" => self.clip_sigmas = num(key, v)?,
            "hybrid_code" => self.hybrid_code = v.parse()?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            _ => return Err(Error::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Every key in a fixed order. Parsing this text reproduces the config exactly.
    pub fn to_text(&self) -> String {
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let (b, c, s, h) = self.augment.jitter_strengths;
        let triple = |t: (usize, usize, usize)| format!("{}, {}, {}", t.0, t.1, t.2);
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        let entries: Vec<(&str, String)> = vec![
            ("preset", self.preset.clone()),
            ("image_shape", triple(self.image_shape)),
            ("classes", self.classes.to_string()),
            ("cr_s", self.cr.source.to_string()),
            ("cr_c", self.cr.channel.to_string()),
            ("subcarriers", self.ofdm.subcarriers.to_string()),
            ("data_symbols", self.ofdm.data_symbols.to_string()),
            ("pilot_symbols", self.ofdm.pilot_symbols.to_string()),
            ("cp_len", self.ofdm.cp_len.to_string()),
            ("paths", self.paths.to_string()),
            ("decay", format!("{:?}", self.decay)),
            ("lambda", format!("{:?}", self.hyper.lambda)),
            ("mu", format!("{:?}", self.hyper.mu)),
            ("lr", format!("{:?}", self.hyper.lr)),
            ("beta1", format!("{:?}", self.hyper.beta1)),
            ("beta2", format!("{:?}", self.hyper.beta2)),
            ("batch_size", self.hyper.batch_size.to_string()),
            ("epochs_pretrain", self.hyper.epochs_pretrain.to_string()),
            ("epochs_finetune", self.hyper.epochs_finetune.to_string()),
            ("train_snr_db", format!("{:?}", self.hyper.train_snr_db)),
            ("encoder", self.encoder.to_string()),
            ("proj_hidden", self.proj_hidden.to_string()),
            ("proj_dim", self.proj_dim.to_string()),
            ("jscc_filters", self.jscc.filters.to_string()),
            ("jscc_channel_filters", self.jscc.channel_filters.to_string()),
            ("jscc_sampling", self.jscc.sampling.to_string()),
            ("jscc_grid", triple(self.jscc.grid)),
            ("bn_momentum", format!("{:?}", self.bn_momentum)),
            ("mode", self.mode.to_string()),
            ("no_reconstruction", self.ablations.no_reconstruction.to_string()),
            ("no_aux_projection", self.ablations.no_aux_projection.to_string()),
            ("no_color_transforms", self.ablations.no_color_transforms.to_string()),
            ("flip_prob", format!("{:?}", self.augment.flip_prob)),
            ("jitter_prob", format!("{:?}", self.augment.jitter_prob)),
            ("jitter_strengths", format!("{b:?}, {c:?}, {s:?}, {h:?}")),
            ("gray_prob", format!("{:?}", self.augment.gray_prob)),
            ("blur_kernel", self.augment.blur_kernel.to_string()),
            ("blur_sigma", format!("{:?}, {:?}", self.augment.blur_sigma.0, self.augment.blur_sigma.1)),
            ("blur_prob", format!("{:?}", self.augment.blur_prob)),
            ("color_enabled", self.augment.color_enabled.to_string()),
            ("dataset", self.dataset.to_string()),
            ("data_dir", opt(&self.data_dir)),
            ("pretrain_dataset", self.pretrain_dataset.map(|d| d.to_string()).unwrap_or_default()),
            ("pretrain_data_dir", opt(&self.pretrain_data_dir)),
            ("synthetic_train", self.synthetic_train.to_string()),
            ("synthetic_test", self.synthetic_test.to_string()),
            ("unlabeled", self.split.unlabeled.to_string()),
            ("labeled", self.split.labeled.to_string()),
            (
                "excluded_classes",
                self.split.excluded_classes.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(", "),
            ),
            ("per_class_uniform", self.split.per_class_uniform.to_string()),
            ("val_fraction", format!("{:?}", self.split.val_fraction)),
            ("allow_overlap", self.split.allow_overlap.to_string()),
            ("test_limit", self.test_limit.to_string()),
            ("test_snrs", join(&self.test_snrs)),
            ("repeats_train", self.repeats_train.to_string()),
            ("repeats_test", self.repeats_test.to_string()),
            ("seed", self.seed.to_string()),
            ("pretrained_path", opt(&self.pretrained_path)),
            ("tscom_standin_labels", self.tscom_standin_labels.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("clip_sigmas", format!("{:?}", self.clip_sigmas)),
            ("hybrid_code", self.hybrid_code.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
        ];
        let mut out = String::new();
        for (k, v) in entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the canonical text, hex encoded. The output location is not part
    /// of the content and is left out.
    pub fn fingerprint(&self) -> String {
        let text: String = self.to_text().lines().filter(|l| !l.starts_with("output_dir ")).map(|l| format!("{l}\n")).collect();
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// True when transfer weights come from the built-in supervised stand-in.
    pub fn uses_transfer_standin(&self) -> bool {
        self.pretrained_path.as_deref() == Some(std::path::Path::new(TRANSFER_STANDIN))
    }

    /// Every violated invariant, or `Ok(())`.
    pub fn validate(&self) -> Result<()> {
        let problems = validate_config(self);
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }
}

/// Lengths implied by an image shape and a CR pair.
pub fn derive_dimensions(image_shape: (usize, usize, usize), cr: CrPair, ofdm: &OfdmParams) -> Result<DerivedDims> {
    let (c, h, w) = image_shape;
    let source_len = c * h * w;
    let scaled = |r: Rational64| -> Result<usize> {
        let v = r * Rational64::from_integer(source_len as i64);
        if !v.is_integer() || v <= Rational64::from_integer(0) {
            return Err(Error::NonIntegerDimension {
                ratio: r.to_string(),
                source_len,
            });
        }
        Ok(v.to_integer() as usize)
    };
    let semantic_len = scaled(cr.source)?;
    let channel_len = scaled(cr.channel)?;
    let slots = ofdm.data_slots();
    if slots == 0 {
        return Err(Error::DimensionMismatch { expected: 1, got: 0 });
    }
    Ok(DerivedDims {
        source_len,
        semantic_len,
        channel_len,
        frames_per_image: channel_len.div_ceil(slots),
        classes: 10,
    })
}

/// All violated cross-field invariants; empty when the config is usable.
pub fn validate_config(cfg: &ExperimentConfig) -> Vec<String> {
    let mut out = cfg.cr.problems();
    let o = &cfg.ofdm;
    if o.subcarriers < 2 || !o.subcarriers.is_power_of_two() {
        out.push(format!("subcarrier count {} must be a power of two >= 2", o.subcarriers));
    }
    if o.data_symbols < 1 {
        out.push("at least one data OFDM symbol per frame is required".into());
    }
    if o.pilot_symbols < 1 {
        out.push("at least one pilot OFDM symbol per frame is required".into());
    }
    if cfg.paths < 1 {
        out.push("channel needs at least one path".into());
    } else if o.cp_len + 1 < cfg.paths {
        out.push(format!(
            "CP shorter than channel memory: cp_len {} < paths - 1 = {}",
            o.cp_len,
            cfg.paths - 1
        ));
    }
    if !(cfg.decay >= 0.0 && cfg.decay.is_finite()) {
        out.push("tap decay must be finite and nonnegative".into());
    }
    let h = &cfg.hyper;
    if h.batch_size < 1 {
        out.push("batch size must be >= 1".into());
    }
    if !(h.lr > 0.0) {
        out.push("learning rate must be positive".into());
    }
    if !(0.0..1.0).contains(&h.beta1) || !(0.0..1.0).contains(&h.beta2) {
        out.push("Adam betas must lie in [0, 1)".into());
    }
    if !(h.lambda >= 0.0) {
        out.push("lambda must be >= 0".into());
    }
    if !(h.mu > 0.0) {
        out.push("mu must be > 0".into());
    }
    match derive_dimensions(cfg.image_shape, cfg.cr, o) {
        Ok(d) => {
            if d.semantic_len != cfg.encoder.output_dim() {
                out.push(format!(
                    "encoder {} emits {} features but the CR pair implies L_s = {}",
                    cfg.encoder,
                    cfg.encoder.output_dim(),
                    d.semantic_len
                ));
            }
            let (gc, gh, gw) = cfg.jscc.grid;
            if gc * gh * gw != d.semantic_len {
                out.push(format!("JSCC grid {:?} does not hold L_s = {}", cfg.jscc.grid, d.semantic_len));
            }
        }
        Err(e) => out.push(e.to_string()),
    }
    let j = &cfg.jscc;
    if j.sampling < 1 || j.grid.1 % j.sampling != 0 || j.grid.2 % j.sampling != 0 {
        out.push(format!("JSCC sampling factor {} must divide the grid", j.sampling));
    }
    if j.filters < 1 || j.channel_filters < 1 {
        out.push("JSCC filter counts must be positive".into());
    }
    if cfg.proj_dim < 1 || cfg.proj_hidden < 1 {
        out.push("projection sizes must be positive".into());
    }
    if cfg.classes < 2 {
        out.push("at least two classes are required".into());
    }
    if cfg.split.excluded_classes.iter().any(|&c| c >= cfg.classes) {
        out.push("excluded class index out of range".into());
    }
    if !(0.0..1.0).contains(&cfg.split.val_fraction) {
        out.push("validation fraction must lie in [0, 1)".into());
    }
    if cfg.split.labeled < 1 {
        out.push("labeled split must be nonempty".into());
    }
    if cfg.mode.uses_pretraining() && cfg.split.unlabeled < 1 {
        out.push("pre-training needs a nonempty unlabeled split".into());
    }
    if cfg.test_snrs.is_empty() {
        out.push("test SNR list is empty".into());
    }
    if cfg.repeats_train < 1 || cfg.repeats_test < 1 {
        out.push("repeat counts must be >= 1".into());
    }
    if !(0.0..1.0).contains(&cfg.bn_momentum) {
        out.push("batch-norm momentum must lie in [0, 1)".into());
    }
    if !(cfg.clip_sigmas > 0.0) {
        out.push("clip_sigmas must be positive".into());
    }
    match cfg.mode {
        Mode::Tscom | Mode::TscomFw if cfg.pretrained_path.is_none() => {
            out.push(format!("mode {} requires pretrained_path", cfg.mode));
        }
        Mode::Tscom | Mode::TscomFw if cfg.uses_transfer_standin() && cfg.tscom_standin_labels == 0 => {
            out.push("the transfer stand-in needs tscom_standin_labels > 0".into());
        }
        Mode::Rscom if cfg.pretrained_path.is_some() => {
            out.push("mode rscom must not load pretrained weights".into());
        }
        Mode::SlscomDs if cfg.pretrain_dataset.is_none() => {
            out.push("mode slscom_ds requires pretrain_dataset".into());
        }
        _ => {}
    }
    out.extend(cfg.augment.problems());
    out
}

// ---- enum <-> text ----

macro_rules! text_enum {
    ($ty:ty, $what:literal, { $($variant:path => $name:literal),* $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),* })
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)*
                    _ => Err(bad($what, s, concat!("expected one of:", $(" ", $name),*))),
                }
            }
        }
    };
}

text_enum!(Mode, "mode", {
    Mode::Slscom => "slscom",
    Mode::SlscomFw => "slscom_fw",
    Mode::SlscomDs => "slscom_ds",
    Mode::Rscom => "rscom",
    Mode::Tscom => "tscom",
    Mode::TscomFw => "tscom_fw",
    Mode::Hybrid => "hybrid",
});

text_enum!(EncoderPreset, "encoder", {
    EncoderPreset::PaperR50 => "paper_r50",
    EncoderPreset::PaperR34 => "paper_r34",
    EncoderPreset::DeskCnn => "desk_cnn",
});

text_enum!(HybridCode, "hybrid_code", {
    HybridCode::Null => "null",
    HybridCode::Ldpc => "ldpc",
});

text_enum!(DatasetKind, "dataset", {
    DatasetKind::Cifar10 => "cifar10",
    DatasetKind::Synthetic => "synthetic",
    DatasetKind::Raw => "raw",
});

fn bad(key: &str, value: &str, reason: &str) -> Error {
    Error::BadValue {
        key: key.into(),
        value: value.into(),
        reason: reason.into(),
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(key, v, "not a number of the expected type"))
}

fn ratio(key: &str, v: &str) -> Result<Rational64> {
    match v.split_once('/') {
        Some((a, b)) => {
            let (a, b): (i64, i64) = (num(key, a.trim())?, num(key, b.trim())?);
            if b == 0 {
                return Err(bad(key, v, "zero denominator"));
            }
            Ok(Rational64::new(a, b))
        }
        None => Ok(Rational64::from_integer(num(key, v)?)),
    }
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(key, v, "expected true or false")),
    }
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(vec![]);
    }
    v.split(',').map(|p| num(key, p.trim())).collect()
}

fn parse_triple(key: &str, v: &str) -> Result<(usize, usize, usize)> {
    let p = list::<usize>(key, v)?;
    match p[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(bad(key, v, "expected three comma-separated integers")),
    }
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_presets_dimensions() {
        let o = OfdmParams::default();
        let d = derive_dimensions((3, 32, 32), CrPair::from_ints((2, 3), (1, 4)), &o).unwrap();
        assert_eq!((d.source_len, d.semantic_len, d.channel_len, d.frames_per_image), (3072, 2048, 768, 2));
        let d = derive_dimensions((3, 32, 32), CrPair::from_ints((1, 6), (1, 8)), &o).unwrap();
        assert_eq!((d.semantic_len, d.channel_len, d.frames_per_image), (512, 384, 1));
        let d = derive_dimensions((3, 32, 32), CrPair::from_ints((1, 1), (1, 1)), &o).unwrap();
        assert_eq!((d.semantic_len, d.channel_len), (3072, 3072));
    }

    #[test]
    fn non_integer_ratio_rejected() {
        let err = derive_dimensions((3, 32, 32), CrPair::from_ints((1, 7), (1, 8)), &OfdmParams::default());
        assert!(matches!(err, Err(Error::NonIntegerDimension { .. })));
    }

    #[test]
    fn presets_validate() {
        for cfg in [ExperimentConfig::paper_r50(), ExperimentConfig::paper_r34(), ExperimentConfig::desk()] {
            assert_eq!(validate_config(&cfg), Vec::<String>::new(), "{}", cfg.preset);
        }
    }

    #[test]
    fn short_cp_and_tscom_reported_together() {
        let mut cfg = ExperimentConfig::desk();
        cfg.ofdm.cp_len = 4;
        cfg.mode = Mode::Tscom;
        let problems = validate_config(&cfg);
        assert!(problems.iter().any(|p| p.contains("CP shorter than channel memory")));
        assert!(problems.iter().any(|p| p.contains("pretrained_path")));
        assert_eq!(problems.len(), 2);
    }

    #[test]
    fn text_roundtrip_and_fingerprint() {
        let mut cfg = ExperimentConfig::desk();
        cfg.split.excluded_classes = [0, 1].into_iter().collect();
        cfg.data_dir = Some("/data/cifar".into());
        cfg.hyper.lr = 3e-4;
        let back = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.fingerprint(), cfg.fingerprint());
        cfg.seed = 7;
        assert_ne!(back.fingerprint(), cfg.fingerprint());
    }

    #[test]
    fn parse_comments_and_overrides() {
        let cfg = ExperimentConfig::parse("# desk run\npreset = desk\nlabeled = 2000 # M2\ncr_s = 1/24\n").unwrap();
        assert_eq!(cfg.split.labeled, 2000);
        assert_eq!(cfg.encoder, EncoderPreset::DeskCnn);
        assert!(matches!(ExperimentConfig::parse("nonsense"), Err(Error::ConfigParse { line: 1, .. })));
        assert!(matches!(ExperimentConfig::parse("bogus = 1"), Err(Error::UnknownKey(_))));
    }

    #[test]
    fn tap_profile_sums_to_one() {
        let p = ExperimentConfig::paper_r50().channel(0.0).tap_profile();
        assert_eq!(p.len(), 8);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((p[0] - 0.2558).abs() < 1e-4);
    }
}
