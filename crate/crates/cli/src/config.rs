//! Experiment configuration: built-in defaults, then an optional TOML file,
//! then command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use stlth_core::lottery::{ImpConfig, Seeds, Strategy, TrainMode};
use stlth_core::models::{Architecture, ModelKind};
use stlth_core::optim::AdamConfig;
use stlth_core::pruning::{Scope, SparsitySchedule};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Adain,
    Sanet,
}

impl From<Model> for ModelKind {
    fn from(m: Model) -> Self {
        match m {
            Model::Adain => ModelKind::AdaInToy,
            Model::Sanet => ModelKind::SANetToy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Plus,
    Frozen,
}

impl From<Mode> for TrainMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Plus => TrainMode::Plus,
            Mode::Frozen => TrainMode::Frozen,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScopeArg {
    Pt,
    Nopt,
}

impl From<ScopeArg> for Scope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::Pt => Scope::PT,
            ScopeArg::Nopt => Scope::NOPT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum StrategyArg {
    Imp,
    Omp,
    Rp,
    Rt,
    Fp,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Imp => Strategy::Imp,
            StrategyArg::Omp => Strategy::Omp,
            StrategyArg::Rp => Strategy::Rp,
            StrategyArg::Rt => Strategy::Rt,
            StrategyArg::Fp => Strategy::Fp,
        }
    }
}

/// Where the plus-mode encoder starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EncoderInit {
    Pretrained,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: Model,
    pub mode: Mode,
    pub scope: ScopeArg,
    /// Strategies for `compare`.
    pub strategies: Vec<StrategyArg>,
    /// Training iterations per round.
    pub iters: usize,
    /// Rewind point as a fraction of `iters`.
    pub rewind_frac: f64,
    pub prune_frac: f64,
    pub target_sparsity: f64,
    /// Grid rounds reported by `compare`; every round when empty.
    pub rounds: Vec<u32>,
    pub trials: u32,
    pub seed: u64,
    /// `synthetic` or a folder with `content/` and `style/` subfolders.
    pub data: String,
    pub out: PathBuf,
    pub image_size: usize,
    /// Divides the default channel widths.
    pub width_divisor: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Reconstruction steps for the evaluation encoder.
    pub pretrain_iters: usize,
    pub encoder_init: EncoderInit,
    pub test_pairs: usize,
    pub eval_batch: usize,
    pub style_weight: f64,
    pub identity_pixel_weight: f64,
    pub identity_feature_weight: f64,
    pub svg: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: Model::Adain,
            mode: Mode::Plus,
            scope: ScopeArg::Pt,
            strategies: vec![StrategyArg::Imp, StrategyArg::Omp, StrategyArg::Rp, StrategyArg::Rt, StrategyArg::Fp],
            iters: 2000,
            rewind_frac: 0.0,
            prune_frac: 0.2,
            target_sparsity: 0.892,
            rounds: Vec::new(),
            trials: 1,
            seed: 0,
            data: "synthetic".into(),
            out: PathBuf::from("stlth-out"),
            image_size: 32,
            width_divisor: 4,
            batch_size: 4,
            lr: 1e-3,
            pretrain_iters: 500,
            encoder_init: EncoderInit::Pretrained,
            test_pairs: 100,
            eval_batch: 8,
            style_weight: 10.0,
            identity_pixel_weight: 50.0,
            identity_feature_weight: 1.0,
            svg: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message)))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }

    pub fn arch(&self) -> Architecture {
        Architecture::narrowed(self.model.into(), self.width_divisor)
    }

    pub fn rewind_iteration(&self) -> usize {
        (self.rewind_frac * self.iters as f64).round() as usize
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::config(m));
        if self.iters == 0 {
            return bad("iters must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.rewind_frac) {
            return bad(format!("rewind_frac must lie in [0,1), got {}", self.rewind_frac));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.width_divisor == 0 || self.batch_size == 0 || self.eval_batch == 0 || self.test_pairs == 0 {
            return bad("width_divisor, batch_size, eval_batch and test_pairs must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        let div = self.arch().required_divisor();
        if self.image_size == 0 || !self.image_size.is_multiple_of(div) {
            return bad(format!("image_size {} must be a positive multiple of {div}", self.image_size));
        }
        if self.mode == Mode::Frozen && self.encoder_init == EncoderInit::Random {
            return bad("frozen mode holds the pretrained encoder fixed; encoder_init must be pretrained".into());
        }
        if self.rounds.contains(&0) {
            return bad("rounds are numbered from 1".into());
        }
        // remaining checks are shared with the library
        self.imp_config(0).validate().map_err(|e| CliError::config(e.to_string()))
    }

    /// Library configuration for trial `trial`.
    pub fn imp_config(&self, trial: u32) -> ImpConfig {
        let mut c = ImpConfig::new(self.arch(), self.iters, Seeds::for_trial(self.seed, trial));
        c.rewind_iteration = self.rewind_iteration();
        c.schedule = SparsitySchedule { fraction: self.prune_frac };
        c.target_sparsity = self.target_sparsity;
        c.scope = self.scope.into();
        c.train.batch_size = self.batch_size;
        c.train.adam = AdamConfig::with_lr(self.lr);
        c.train.mode = self.mode.into();
        c.train.weights.style = self.style_weight;
        c.train.weights.identity_pixel = self.identity_pixel_weight;
        c.train.weights.identity_feature = self.identity_feature_weight;
        c.eval_batch = self.eval_batch;
        c
    }

    pub fn model_label(&self) -> &'static str {
        ModelKind::from(self.model).label()
    }

    /// Seeds for the shared setup (evaluation encoder, test pairs).
    pub fn setup_seeds(&self) -> Seeds {
        Seeds::for_trial(self.seed, u32::MAX)
    }
}
