//! Run configuration, read from a sectioned TOML file.
//!
//! Every section and key is optional and falls back to the desk-scale
//! six-mode defaults; unknown keys are rejected.
//!
//! ```toml
//! seed = 1
//!
//! [simulate]
//! n_nodes = 8
//! coupling_strength = 0.5
//! natural_freq = 2.0          # one value for all nodes, or a list
//! n_sensors_per_node = 3
//! n_vars_per_sensor = 2
//! sample_rate = 200.0
//! duration = 20.0
//!
//! [[simulate.modes]]
//! label = "full"
//! missing = []
//!
//! [windows]
//! length = 8
//! stride = 16
//! blocks = 10                 # interleaved reference / held-out runs
//!
//! [model]
//! encoder_hidden = [16, 32]
//! encoder_dense = 64
//! decoder_hidden = [32, 16]
//! decoder_dense = 64
//! beta = 1e-4
//! noise_scale = "stddev"      # or "variance"
//! cell_output = "current"     # or "previous"
//! ortho_in_loss = false
//! mlp_hidden = 256
//!
//! [train]
//! max_epochs = 400
//! patience = 30
//! batch_size = 64
//! validation_fraction = 0.2
//! learning_rate = 3e-3
//! clip_norm = 5.0
//!
//! [kde]
//! grid = 50
//! kernel = "full"             # or "isotropic"
//!
//! [classify]
//! backend = "sinkhorn"        # or "exact"
//! epsilon = 1e-3
//! epsilon_start = 0.1
//! max_iter = 100000
//! tolerance = 1e-6
//! ```

use std::path::Path;

use oscmode::latent::{KdeConfig, KernelForm};
use oscmode::nn::{AdamConfig, CellOutput};
use oscmode::synth::RingConfig;
use oscmode::trainer::TrainConfig;
use oscmode::vae::{ArchConfig, NoiseScale};
use oscmode::wasserstein::{Backend, SinkhornConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub simulate: SimulateSection,
    pub windows: WindowSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub kde: KdeSection,
    pub classify: ClassifySection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Frequencies {
    Uniform(f64),
    PerNode(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub label: String,
    #[serde(default)]
    pub missing: Vec<usize>,
    /// Defaults to the run seed plus the mode's position.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub n_nodes: usize,
    pub coupling_strength: f64,
    pub natural_freq: Frequencies,
    pub n_sensors_per_node: usize,
    pub n_vars_per_sensor: usize,
    pub sample_rate: f64,
    pub duration: f64,
    pub modes: Vec<ModeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSection {
    pub length: usize,
    pub stride: usize,
    pub blocks: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseScaleName {
    Stddev,
    Variance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellOutputName {
    Current,
    Previous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub encoder_hidden: [usize; 2],
    pub encoder_dense: usize,
    pub decoder_hidden: [usize; 2],
    pub decoder_dense: usize,
    pub beta: f64,
    pub noise_scale: NoiseScaleName,
    pub cell_output: CellOutputName,
    pub ortho_in_loss: bool,
    /// Hidden width of the fully connected baseline.
    pub mlp_hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub learning_rate: f64,
    pub clip_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelName {
    Full,
    Isotropic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KdeSection {
    pub grid: usize,
    pub kernel: KernelName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendName {
    Sinkhorn,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifySection {
    pub backend: BackendName,
    pub epsilon: f64,
    pub epsilon_start: f64,
    pub max_iter: usize,
    pub tolerance: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 1,
            simulate: SimulateSection::default(),
            windows: WindowSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            kde: KdeSection::default(),
            classify: ClassifySection::default(),
        }
    }
}

impl Default for SimulateSection {
    fn default() -> Self {
        let d = RingConfig::desk_default("", &[], 0);
        let mode = |label: &str, missing: &[usize]| ModeSpec {
            label: label.into(),
            missing: missing.to_vec(),
            seed: None,
        };
        Self {
            n_nodes: d.n_nodes,
            coupling_strength: d.coupling_strength,
            natural_freq: Frequencies::Uniform(d.natural_freq[0]),
            n_sensors_per_node: d.n_sensors_per_node,
            n_vars_per_sensor: d.n_vars_per_sensor,
            sample_rate: d.sample_rate,
            duration: d.duration,
            modes: vec![
                mode("full", &[]),
                mode("m1", &[1]),
                mode("m2", &[1, 2]),
                mode("m3", &[1, 3]),
                mode("m4", &[1, 4]),
                mode("m5", &[1, 5]),
            ],
        }
    }
}

impl Default for WindowSection {
    fn default() -> Self {
        Self {
            length: 8,
            stride: 16,
            blocks: 10,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            encoder_hidden: [16, 32],
            encoder_dense: 64,
            decoder_hidden: [32, 16],
            decoder_dense: 64,
            beta: 1e-4,
            noise_scale: NoiseScaleName::Stddev,
            cell_output: CellOutputName::Current,
            ortho_in_loss: false,
            mlp_hidden: oscmode::baselines::MLP_HIDDEN,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            max_epochs: 400,
            patience: 30,
            batch_size: 64,
            validation_fraction: 0.2,
            learning_rate: 3e-3,
            clip_norm: 5.0,
        }
    }
}

impl Default for KdeSection {
    fn default() -> Self {
        Self {
            grid: 50,
            kernel: KernelName::Full,
        }
    }
}

impl Default for ClassifySection {
    fn default() -> Self {
        let s = SinkhornConfig::default();
        Self {
            backend: BackendName::Sinkhorn,
            epsilon: s.epsilon,
            epsilon_start: s.epsilon_start,
            max_iter: s.max_iter,
            tolerance: s.tolerance,
        }
    }
}

/// `line:column` (1-based) of byte offset `pos` in `text`.
fn line_col(text: &str, pos: usize) -> (usize, usize) {
    let before = &text[..pos.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

impl Config {
    /// Parses `text`; diagnostics are prefixed with `origin:line:column`.
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let cfg: Config = toml::from_str(text).map_err(|e| {
            let msg = e.message().trim().to_string();
            match e.span() {
                Some(span) => {
                    let (line, col) = line_col(text, span.start);
                    CliError::Config(format!("{origin}:{line}:{col}: {msg}"))
                }
                None => CliError::Config(format!("{origin}: {msg}")),
            }
        })?;
        cfg.validate().map_err(|m| CliError::Config(format!("{origin}: {m}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn validate(&self) -> Result<(), String> {
        if self.simulate.modes.is_empty() {
            return Err("simulate.modes must list at least one mode".into());
        }
        let mut labels: Vec<&str> = self.simulate.modes.iter().map(|m| m.label.as_str()).collect();
        if let Some(bad) = labels.iter().find(|l| l.is_empty() || l.contains(['/', '\\', '.', ','])) {
            return Err(format!("mode label {bad:?} must be non-empty without '/', '\\\\', '.' or ','"));
        }
        labels.sort_unstable();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(format!("duplicate mode label {:?}", w[0]));
        }
        let w = &self.windows;
        if w.length == 0 || w.stride == 0 {
            return Err("windows.length and windows.stride must be >= 1".into());
        }
        if w.blocks < 2 {
            return Err("windows.blocks must be >= 2".into());
        }
        if self.kde.grid < 2 {
            return Err("kde.grid must be >= 2".into());
        }
        for m in &self.simulate.modes {
            self.ring(m, 0).validate().map_err(|e| format!("mode {:?}: {e}", m.label))?;
        }
        self.train_config().validate().map_err(|e| e.to_string())?;
        Ok(())
    }

    /// Ring configuration of mode `index`.
    pub fn ring(&self, mode: &ModeSpec, index: usize) -> RingConfig {
        let s = &self.simulate;
        RingConfig {
            n_nodes: s.n_nodes,
            missing: mode.missing.iter().copied().collect(),
            coupling_strength: s.coupling_strength,
            natural_freq: match &s.natural_freq {
                Frequencies::Uniform(f) => vec![*f; s.n_nodes],
                Frequencies::PerNode(v) => v.clone(),
            },
            n_sensors_per_node: s.n_sensors_per_node,
            n_vars_per_sensor: s.n_vars_per_sensor,
            sample_rate: s.sample_rate,
            duration: s.duration,
            seed: mode.seed.unwrap_or(self.seed.wrapping_add(index as u64)),
            mode_label: mode.label.clone(),
        }
    }

    pub fn arch(&self, features: usize) -> ArchConfig {
        let m = &self.model;
        ArchConfig {
            features,
            window: self.windows.length,
            encoder_hidden: m.encoder_hidden,
            encoder_dense: m.encoder_dense,
            decoder_hidden: m.decoder_hidden,
            decoder_dense: m.decoder_dense,
            beta: m.beta,
            noise_scale: match m.noise_scale {
                NoiseScaleName::Stddev => NoiseScale::StdDev,
                NoiseScaleName::Variance => NoiseScale::Variance,
            },
            cell_output: match m.cell_output {
                CellOutputName::Current => CellOutput::CurrentMemory,
                CellOutputName::Previous => CellOutput::PreviousMemory,
            },
            ortho_in_loss: m.ortho_in_loss,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            validation_fraction: t.validation_fraction,
            seed: self.seed,
            adam: AdamConfig {
                lr: t.learning_rate,
                ..AdamConfig::default()
            },
            clip_norm: t.clip_norm,
        }
    }

    pub fn kde_config(&self) -> KdeConfig {
        KdeConfig {
            grid: self.kde.grid,
            bandwidth: None,
            kernel: match self.kde.kernel {
                KernelName::Full => KernelForm::FullCovariance,
                KernelName::Isotropic => KernelForm::Isotropic,
            },
        }
    }

    pub fn backend(&self) -> Backend {
        let c = &self.classify;
        match c.backend {
            BackendName::Exact => Backend::Exact,
            BackendName::Sinkhorn => Backend::SinkhornWith(SinkhornConfig {
                epsilon: c.epsilon,
                epsilon_start: c.epsilon_start,
                max_iter: c.max_iter,
                tolerance: c.tolerance,
            }),
        }
    }
}
