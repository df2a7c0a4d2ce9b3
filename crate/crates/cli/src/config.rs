//! Run configuration, read from TOML.
//!
//! Every section and key is optional and falls back to the library defaults.
//! Unknown keys are rejected.
//!
//! ```toml
//! [network]
//! mode = "predictor"            # autoencoder | predictor | composite
//! input_len = 10
//! output_len = 10
//! hidden = 128
//! cell_variance_rule = "corrected"   # corrected | table1_literal
//! gate_product_rule = "full_independent"   # full_independent | paper_simplified
//! loss = "bce_mean"             # bce_mean | gaussian_nll
//! omega = "main"                # main | appendix
//! sigmoid_omega = -0.8814       # optional, overrides the sigmoid variance constant
//!
//! [train]
//! epochs = 100
//! batch_size = 30
//! sequences = 30
//! seed = 0
//! lr = 0.05
//! beta1 = 0.9
//! beta2 = 0.999
//! eps = 1e-8
//! clip_norm = 10.0              # optional
//! init_s = 1e-3
//! checkpoint_every = 0
//!
//! [data]
//! angle_deg = 20.0
//! speed = 0.05
//! noise_b = 0.0
//! frame_size = 32
//! seq_len = 20
//! n_digits = 1
//! bounce = true
//! start = [0.1, 0.2]            # or "random"
//! random_motion = false
//! digit = 3                     # or "random"
//! glyph_variant = 0             # or "random"
//! sprite_size = 14
//! render = "bilinear"           # bilinear | integer_snap
//! composite = "max"             # max | add_clamp
//! seed = 0
//! idx_images = "train-images-idx3-ubyte"   # optional digit source
//! idx_labels = "train-labels-idx1-ubyte"
//!
//! [eval]
//! sequences = 3
//!
//! [oracle]
//! samples = 1000000
//! seed = 0
//!
//! [generate]
//! sequences = 30
//! suites = true
//! preview = false
//! ```

use std::path::PathBuf;

use serde::Deserialize;
use spgru_core::data::{CompositeMode, RenderMode, TrajectoryConfig};
use spgru_core::moments::{NmmConstants, OmegaVariant};
use spgru_core::spgru::{CellVarianceRule, GateProductRule, LossKind, NetworkConfig, NetworkMode};
use spgru_core::training::{AdamConfig, TrainConfig};

use crate::error::CliError;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub network: NetworkSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub eval: EvalSection,
    pub oracle: OracleSection,
    pub generate: GenerateSection,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Autoencoder,
    Predictor,
    Composite,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellRuleName {
    Corrected,
    Table1Literal,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateRuleName {
    FullIndependent,
    PaperSimplified,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    BceMean,
    GaussianNll,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaName {
    Main,
    Appendix,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub mode: ModeName,
    pub input_len: usize,
    pub output_len: usize,
    pub hidden: usize,
    pub cell_variance_rule: CellRuleName,
    pub gate_product_rule: GateRuleName,
    pub loss: LossName,
    pub omega: OmegaName,
    pub sigmoid_omega: Option<f64>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let d = NetworkConfig::default();
        Self {
            mode: ModeName::Predictor,
            input_len: d.input_len,
            output_len: d.output_len,
            hidden: d.hidden,
            cell_variance_rule: CellRuleName::Corrected,
            gate_product_rule: GateRuleName::FullIndependent,
            loss: LossName::BceMean,
            omega: OmegaName::Main,
            sigmoid_omega: None,
        }
    }
}

impl NetworkSection {
    pub fn to_config(&self) -> NetworkConfig {
        NetworkConfig {
            mode: match self.mode {
                ModeName::Autoencoder => NetworkMode::Autoencoder,
                ModeName::Predictor => NetworkMode::Predictor,
                ModeName::Composite => NetworkMode::Composite,
            },
            input_len: self.input_len,
            output_len: self.output_len,
            hidden: self.hidden,
            cell_variance_rule: match self.cell_variance_rule {
                CellRuleName::Corrected => CellVarianceRule::Corrected,
                CellRuleName::Table1Literal => CellVarianceRule::Table1Literal,
            },
            gate_product_rule: match self.gate_product_rule {
                GateRuleName::FullIndependent => GateProductRule::FullIndependent,
                GateRuleName::PaperSimplified => GateProductRule::PaperSimplified,
            },
            loss: match self.loss {
                LossName::BceMean => LossKind::BceMean,
                LossName::GaussianNll => LossKind::GaussianNll,
            },
            omega: match self.omega {
                OmegaName::Main => OmegaVariant::Main,
                OmegaName::Appendix => OmegaVariant::Appendix,
            },
        }
    }

    /// Activation constants for the oracle, including any ω override.
    pub fn nmm_constants(&self) -> NmmConstants {
        let mut k = NmmConstants::with_omega(self.to_config().omega);
        if let Some(w) = self.sigmoid_omega {
            k.omega_sig = w;
        }
        k
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    /// Training sequences generated from `[data]`.
    pub sequences: usize,
    pub seed: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    pub init_s: f64,
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            sequences: 30,
            seed: t.seed,
            lr: t.adam.lr,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            eps: t.adam.eps,
            clip_norm: t.clip_norm,
            init_s: t.init_s,
            checkpoint_every: t.checkpoint_every,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
            },
            clip_norm: self.clip_norm,
            init_s: self.init_s,
            checkpoint_every: self.checkpoint_every,
        }
    }
}

/// A value that is either fixed or drawn per sequence.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum OrRandom<T> {
    Fixed(T),
    Keyword(RandomKeyword),
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum RandomKeyword {
    Random,
}

impl<T: Clone> OrRandom<T> {
    fn get(&self) -> Option<T> {
        match self {
            OrRandom::Fixed(v) => Some(v.clone()),
            OrRandom::Keyword(_) => None,
        }
    }

    fn from_option(v: Option<T>) -> Self {
        v.map_or(OrRandom::Keyword(RandomKeyword::Random), OrRandom::Fixed)
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderName {
    Bilinear,
    IntegerSnap,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositeName {
    Max,
    AddClamp,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub angle_deg: f64,
    pub speed: f64,
    pub noise_b: f64,
    pub frame_size: usize,
    pub seq_len: usize,
    pub n_digits: usize,
    pub bounce: bool,
    pub start: OrRandom<[f64; 2]>,
    pub random_motion: bool,
    pub digit: OrRandom<u8>,
    pub glyph_variant: OrRandom<u64>,
    pub sprite_size: usize,
    pub render: RenderName,
    pub composite: CompositeName,
    pub seed: u64,
    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        let t = TrajectoryConfig::default();
        Self {
            angle_deg: t.angle_deg,
            speed: t.speed,
            noise_b: t.noise_b,
            frame_size: t.frame_size,
            seq_len: t.seq_len,
            n_digits: t.n_digits,
            bounce: t.bounce,
            start: OrRandom::from_option(t.start.map(|(x, y)| [x, y])),
            random_motion: t.random_motion,
            digit: OrRandom::from_option(t.digit),
            glyph_variant: OrRandom::from_option(t.glyph_variant),
            sprite_size: t.sprite_size,
            render: RenderName::Bilinear,
            composite: CompositeName::Max,
            seed: t.seed,
            idx_images: None,
            idx_labels: None,
        }
    }
}

impl DataSection {
    pub fn to_config(&self) -> TrajectoryConfig {
        TrajectoryConfig {
            angle_deg: self.angle_deg,
            speed: self.speed,
            noise_b: self.noise_b,
            frame_size: self.frame_size,
            seq_len: self.seq_len,
            n_digits: self.n_digits,
            bounce: self.bounce,
            start: self.start.get().map(|[x, y]| (x, y)),
            random_motion: self.random_motion,
            digit: self.digit.get(),
            glyph_variant: self.glyph_variant.get(),
            sprite_size: self.sprite_size,
            render: match self.render {
                RenderName::Bilinear => RenderMode::Bilinear,
                RenderName::IntegerSnap => RenderMode::IntegerSnap,
            },
            composite: match self.composite {
                CompositeName::Max => CompositeMode::Max,
                CompositeName::AddClamp => CompositeMode::AddClamp,
            },
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Sequences per deviation level.
    pub sequences: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { sequences: 3 }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub samples: usize,
    pub seed: u64,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            samples: 1_000_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSection {
    pub sequences: usize,
    /// Also write the angle, speed and noise deviation suites.
    pub suites: bool,
    /// Write PGM frames of the first sequence of every file.
    pub preview: bool,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self {
            sequences: 30,
            suites: true,
            preview: false,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.network.to_config().validate()?;
        self.train.to_config().validate()?;
        self.data.to_config().validate()?;
        if self.train.sequences == 0 || self.eval.sequences == 0 || self.generate.sequences == 0 {
            return Err(CliError::Config("sequence counts must be at least 1".into()));
        }
        if self.data.idx_images.is_some() != self.data.idx_labels.is_some() {
            return Err(CliError::Config("idx_images and idx_labels must be given together".into()));
        }
        if let Some(w) = self.network.sigmoid_omega {
            if !w.is_finite() {
                return Err(CliError::Config(format!("sigmoid_omega must be finite, got {w}")));
            }
        }
        Ok(())
    }

    /// `--seed` replaces every seed in the document.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.train.seed = s;
            self.data.seed = s;
            self.oracle.seed = s;
        }
        self
    }
}
