//! Experiment configuration: TOML file, environment overrides
//! (`SYNFAULT_*`), then command-line flags, in increasing precedence.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use synfault::adapt::{Method, TrainConfig};
use synfault::datastore::ImbalanceSpec;
use synfault::siggen::{BearingGeometry, FaultClass, SynthParams};

fn default_classes() -> Vec<String> {
    FaultClass::ALL.iter().map(|c| c.as_str().to_string()).collect()
}

fn default_segment_len() -> usize {
    4096
}

fn default_per_class() -> usize {
    1200
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub output: PathBuf,
    #[serde(default = "default_classes")]
    pub classes: Vec<String>,
    pub bearing: BearingConfig,
    #[serde(default)]
    pub healthy: HealthyConfig,
    #[serde(default)]
    pub segmentation: SegmentationConfig,
    /// Source-domain generation knobs; defaults are the standard recipe.
    #[serde(default)]
    pub source_synth: SynthConfig,
    #[serde(default)]
    pub target: TargetConfig,
    #[serde(default)]
    pub train: TrainSection,
    /// Per-class keep fractions applied to the target at training time.
    #[serde(default)]
    pub imbalance: Vec<ImbalanceEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BearingConfig {
    pub n_elements: u32,
    pub ball_diameter_mm: f64,
    pub pitch_diameter_mm: f64,
    #[serde(default)]
    pub contact_angle_rad: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct HealthyConfig {
    /// Raw little-endian f32 recordings of healthy machines.
    #[serde(default)]
    pub files: Vec<RecordingEntry>,
    /// Alternatively, simulate healthy recordings (demos, smoke tests).
    pub simulate: Option<SimulateConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordingEntry {
    pub path: PathBuf,
    pub sample_rate_hz: f64,
    pub shaft_speed_rpm: f64,
    /// Fault label for target-domain recordings.
    pub label: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub count: usize,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub shaft_speed_rpm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentationConfig {
    #[serde(default = "default_segment_len")]
    pub segment_len: usize,
    #[serde(default = "default_per_class")]
    pub per_class: usize,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self { segment_len: default_segment_len(), per_class: default_per_class() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub alphas: Option<Vec<f64>>,
    pub duty_fraction: Option<f64>,
    pub beta_range: Option<(f64, f64)>,
    pub jitter_sigma: Option<f64>,
    /// Pulse band-pass corners as fractions of the sample rate.
    pub pulse_band: Option<(f64, f64)>,
    pub defect_frequency_scale: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            alphas: None,
            duty_fraction: None,
            beta_range: None,
            jitter_sigma: None,
            pulse_band: None,
            defect_frequency_scale: None,
        }
    }
}

impl SynthConfig {
    pub fn to_params(&self) -> SynthParams {
        let defaults = SynthParams::default();
        SynthParams {
            sideband_amplitudes: self.alphas.clone().unwrap_or(defaults.sideband_amplitudes),
            duty_fraction: self.duty_fraction.unwrap_or(defaults.duty_fraction),
            noise_scale_range: self.beta_range.unwrap_or(defaults.noise_scale_range),
            jitter_sigma: self.jitter_sigma.unwrap_or(defaults.jitter_sigma),
            pulse_band_fractions: self.pulse_band.unwrap_or(defaults.pulse_band_fractions),
            defect_frequency_scale: self
                .defect_frequency_scale
                .unwrap_or(defaults.defect_frequency_scale),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TargetConfig {
    /// Real fault recordings (plus the held-back healthy pool) form the target.
    #[serde(default)]
    pub fault_files: Vec<RecordingEntry>,
    /// Alternatively, synthesize a stand-in target with perturbed knobs.
    pub synth: Option<SynthConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSection {
    pub method: Option<String>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub lambda_d: Option<f64>,
    pub lambda_ramp: Option<bool>,
    pub mixup_alpha: Option<f64>,
    pub mixup_per_sample: Option<bool>,
    pub mixup_symmetric: Option<bool>,
    pub dropout_rate: Option<f64>,
    pub eval_every: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            method: None,
            epochs: None,
            batch_size: None,
            learning_rate: None,
            lambda_d: None,
            lambda_ramp: None,
            mixup_alpha: None,
            mixup_per_sample: None,
            mixup_symmetric: None,
            dropout_rate: None,
            eval_every: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImbalanceEntry {
    pub class: String,
    pub keep: f64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.apply_env()?;
        Ok(cfg)
    }

    /// `SYNFAULT_*` environment overrides (CI hook). Applied between the file
    /// and the command-line flags.
    fn apply_env(&mut self) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str) -> Result<Option<T>>
        where
            T::Err: std::fmt::Display,
        {
            match std::env::var(key) {
                Ok(v) => match v.parse::<T>() {
                    Ok(parsed) => Ok(Some(parsed)),
                    Err(e) => bail!("invalid {key}={v}: {e}"),
                },
                Err(_) => Ok(None),
            }
        }
        if let Some(seed) = parse::<u64>("SYNFAULT_SEED")? {
            self.seed = seed;
        }
        if let Some(output) = parse::<PathBuf>("SYNFAULT_OUTPUT")? {
            self.output = output;
        }
        if let Some(method) = parse::<String>("SYNFAULT_METHOD")? {
            self.train.method = Some(method);
        }
        if let Some(epochs) = parse::<usize>("SYNFAULT_EPOCHS")? {
            self.train.epochs = Some(epochs);
        }
        if let Some(batch) = parse::<usize>("SYNFAULT_BATCH_SIZE")? {
            self.train.batch_size = Some(batch);
        }
        if let Some(per_class) = parse::<usize>("SYNFAULT_PER_CLASS")? {
            self.segmentation.per_class = per_class;
        }
        Ok(())
    }

    pub fn geometry(&self) -> BearingGeometry {
        BearingGeometry {
            n_elements: self.bearing.n_elements,
            ball_diameter_mm: self.bearing.ball_diameter_mm,
            pitch_diameter_mm: self.bearing.pitch_diameter_mm,
            contact_angle_rad: self.bearing.contact_angle_rad,
        }
    }

    pub fn fault_classes(&self) -> Result<Vec<FaultClass>> {
        let classes = self
            .classes
            .iter()
            .map(|s| FaultClass::parse(s))
            .collect::<synfault::Result<Vec<_>>>()?;
        if classes.is_empty() {
            bail!("class list is empty");
        }
        Ok(classes)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let defaults = TrainConfig::default();
        let t = &self.train;
        let cfg = TrainConfig {
            method: match &t.method {
                Some(name) => Method::parse(name)?,
                None => defaults.method,
            },
            epochs: t.epochs.unwrap_or(defaults.epochs),
            batch_size: t.batch_size.unwrap_or(defaults.batch_size),
            learning_rate: t.learning_rate.unwrap_or(defaults.learning_rate),
            lambda_d: t.lambda_d.unwrap_or(defaults.lambda_d),
            lambda_ramp: t.lambda_ramp.unwrap_or(defaults.lambda_ramp),
            mixup_alpha: t.mixup_alpha.unwrap_or(defaults.mixup_alpha),
            mixup_per_sample: t.mixup_per_sample.unwrap_or(defaults.mixup_per_sample),
            mixup_symmetric: t.mixup_symmetric.unwrap_or(defaults.mixup_symmetric),
            dropout_rate: t.dropout_rate.unwrap_or(defaults.dropout_rate),
            seed: self.seed,
            eval_every: t.eval_every.unwrap_or(defaults.eval_every),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn imbalance_spec(&self) -> Result<ImbalanceSpec> {
        let fractions = self
            .imbalance
            .iter()
            .map(|e| Ok((FaultClass::parse(&e.class)?, e.keep)))
            .collect::<synfault::Result<Vec<_>>>()?;
        Ok(ImbalanceSpec::new(fractions)?)
    }

    /// Check that every referenced input path exists.
    pub fn validate_paths(&self) -> Result<()> {
        for entry in self.healthy.files.iter().chain(&self.target.fault_files) {
            if !entry.path.exists() {
                bail!("referenced recording does not exist: {}", entry.path.display());
            }
        }
        if self.healthy.files.is_empty() && self.healthy.simulate.is_none() {
            bail!("config needs [healthy] files or [healthy.simulate]");
        }
        Ok(())
    }

    /// Resolved-config echo written next to every artifact.
    pub fn provenance(&self, command: &str) -> Result<String> {
        let body = toml::to_string_pretty(self).context("serializing resolved config")?;
        Ok(format!(
            "# synfault {} v{}\n# command: {command}\n{body}",
            env!("CARGO_PKG_NAME"),
            env!("CARGO_PKG_VERSION"),
        ))
    }
}
