//! The diagnosis network: feature extractor `f`, classifier `g` and domain
//! discriminator `h`.
//!
//! The extractor is three size-3/10-channel conv blocks (ReLU + dropout)
//! followed by a 256-wide dense block; the classifier is 256 -> 256 -> K with
//! a softmax head; the discriminator is a 512-wide two-way softmax head. In
//! marginal mode the discriminator reads the 256-D features directly; in
//! conditional mode it reads the 256*K multilinear fusion of features and
//! predictions. Extractor and classifier are identical across modes.

use std::path::Path;

use rand::Rng;

use crate::dsp::ORDER_POINTS;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{
    load_checkpoint, save_checkpoint, CheckpointMeta, NodeId, ParamId, Params, Scalar, Tape,
};

/// Width of the model input (order-normalized envelope spectrum).
pub const INPUT_LEN: usize = ORDER_POINTS;
/// Width of the extracted feature vector.
pub const FEATURE_DIM: usize = 256;
/// Hidden width of the discriminator.
pub const DISC_HIDDEN: usize = 512;
/// Conv channel count and kernel size.
pub const CONV_CHANNELS: usize = 10;
pub const CONV_KERNEL: usize = 3;

/// What the discriminator consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscMode {
    /// Features only (width 256).
    Marginal,
    /// Multilinear feature/prediction fusion (width 256 * K).
    Conditional,
}

impl DiscMode {
    fn tag(self) -> u8 {
        match self {
            DiscMode::Marginal => 0,
            DiscMode::Conditional => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(DiscMode::Marginal),
            1 => Ok(DiscMode::Conditional),
            other => Err(Error::format(format!("unknown discriminator mode tag {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub class_count: usize,
    pub disc_mode: DiscMode,
    pub dropout_rate: f64,
}

impl ModelConfig {
    pub fn new(class_count: usize, disc_mode: DiscMode) -> Self {
        Self { class_count, disc_mode, dropout_rate: 0.5 }
    }
}

/// Seeds one training-step's dropout masks. Masks are derived per
/// (step, branch, layer), so drawing masks for one branch never shifts the
/// masks of another.
#[derive(Debug, Clone, Copy)]
pub struct DropoutCtx {
    pub base_seed: u64,
    pub step: u64,
    pub branch: u64,
    pub rate: f64,
}

impl DropoutCtx {
    fn rng(&self, layer: u64) -> rand_chacha::ChaCha8Rng {
        seed::rng(self.base_seed, &[0xD0, self.step, self.branch, layer])
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerIds {
    conv_w: [ParamId; 3],
    conv_b: [ParamId; 3],
    dense_w: ParamId,
    dense_b: ParamId,
    clf1_w: ParamId,
    clf1_b: ParamId,
    clf2_w: ParamId,
    clf2_b: ParamId,
    disc1_w: ParamId,
    disc1_b: ParamId,
    disc2_w: ParamId,
    disc2_b: ParamId,
}

/// All learnable state plus the wiring mode.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub params: Params<T>,
    config: ModelConfig,
    ids: LayerIds,
}

fn flat_len() -> usize {
    // Three valid convs shave kernel-1 samples each.
    CONV_CHANNELS * (INPUT_LEN - 3 * (CONV_KERNEL - 1))
}

impl<T: Scalar> Model<T> {
    /// Build a freshly initialized model: fan-in-scaled uniform weights,
    /// zero biases, deterministic for a given seed.
    pub fn new(config: ModelConfig, init_seed: u64) -> Result<Self> {
        if config.class_count < 2 {
            return Err(Error::parameter("need at least 2 classes"));
        }
        if !(0.0..1.0).contains(&config.dropout_rate) {
            return Err(Error::parameter("dropout rate must be in [0, 1)"));
        }
        let mut rng = seed::rng(init_seed, &[0x17]);
        let mut params = Params::new();
        let dense_init = |params: &mut Params<T>,
                              rng: &mut rand_chacha::ChaCha8Rng,
                              name: &str,
                              shape: &[usize],
                              fan_in: usize|
         -> Result<ParamId> {
            let bound = (1.0 / fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let value: Vec<T> =
                (0..n).map(|_| T::from_f64(rng.gen_range(-bound..bound))).collect();
            params.add(name, shape, value)
        };

        let mut conv_w = Vec::new();
        let mut conv_b = Vec::new();
        for layer in 0..3 {
            let cin = if layer == 0 { 1 } else { CONV_CHANNELS };
            let w = dense_init(
                &mut params,
                &mut rng,
                &format!("extractor.conv{layer}.weight"),
                &[CONV_CHANNELS, cin, CONV_KERNEL],
                cin * CONV_KERNEL,
            )?;
            let b = params.add(
                &format!("extractor.conv{layer}.bias"),
                &[CONV_CHANNELS],
                vec![T::zero(); CONV_CHANNELS],
            )?;
            conv_w.push(w);
            conv_b.push(b);
        }
        let dense_w = dense_init(
            &mut params,
            &mut rng,
            "extractor.dense.weight",
            &[flat_len(), FEATURE_DIM],
            flat_len(),
        )?;
        let dense_b =
            params.add("extractor.dense.bias", &[FEATURE_DIM], vec![T::zero(); FEATURE_DIM])?;
        let k = config.class_count;
        let clf1_w = dense_init(
            &mut params,
            &mut rng,
            "classifier.dense0.weight",
            &[FEATURE_DIM, FEATURE_DIM],
            FEATURE_DIM,
        )?;
        let clf1_b =
            params.add("classifier.dense0.bias", &[FEATURE_DIM], vec![T::zero(); FEATURE_DIM])?;
        let clf2_w = dense_init(
            &mut params,
            &mut rng,
            "classifier.dense1.weight",
            &[FEATURE_DIM, k],
            FEATURE_DIM,
        )?;
        let clf2_b = params.add("classifier.dense1.bias", &[k], vec![T::zero(); k])?;
        let disc_in = match config.disc_mode {
            DiscMode::Marginal => FEATURE_DIM,
            DiscMode::Conditional => FEATURE_DIM * k,
        };
        let disc1_w = dense_init(
            &mut params,
            &mut rng,
            "discriminator.dense0.weight",
            &[disc_in, DISC_HIDDEN],
            disc_in,
        )?;
        let disc1_b =
            params.add("discriminator.dense0.bias", &[DISC_HIDDEN], vec![T::zero(); DISC_HIDDEN])?;
        let disc2_w = dense_init(
            &mut params,
            &mut rng,
            "discriminator.dense1.weight",
            &[DISC_HIDDEN, 2],
            DISC_HIDDEN,
        )?;
        let disc2_b = params.add("discriminator.dense1.bias", &[2], vec![T::zero(); 2])?;

        let ids = LayerIds {
            conv_w: [conv_w[0], conv_w[1], conv_w[2]],
            conv_b: [conv_b[0], conv_b[1], conv_b[2]],
            dense_w,
            dense_b,
            clf1_w,
            clf1_b,
            clf2_w,
            clf2_b,
            disc1_w,
            disc1_b,
            disc2_w,
            disc2_b,
        };
        Ok(Self { params, config, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn class_count(&self) -> usize {
        self.config.class_count
    }

    pub fn disc_mode(&self) -> DiscMode {
        self.config.disc_mode
    }

    /// Width the discriminator expects.
    pub fn disc_input_dim(&self) -> usize {
        match self.config.disc_mode {
            DiscMode::Marginal => FEATURE_DIM,
            DiscMode::Conditional => FEATURE_DIM * self.config.class_count,
        }
    }

    /// Number of scalar values in extractor + classifier (mode-independent).
    pub fn extractor_classifier_value_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with("extractor.") || p.name.starts_with("classifier."))
            .map(|p| p.value.len())
            .sum()
    }

    /// Extractor + classifier values flattened, for trajectory comparisons.
    pub fn classifier_path_values(&self) -> Vec<T> {
        self.params
            .iter()
            .filter(|p| p.name.starts_with("extractor.") || p.name.starts_with("classifier."))
            .flat_map(|p| p.value.iter().copied())
            .collect()
    }

    /// Run the feature extractor on a `[B, 1, INPUT_LEN]` input node.
    /// `dropout: None` disables dropout (inference).
    pub fn features(
        &self,
        tape: &mut Tape<T>,
        x: NodeId,
        dropout: Option<&DropoutCtx>,
    ) -> Result<NodeId> {
        let shape = tape.shape(x);
        if shape.len() != 3 || shape[1] != 1 || shape[2] != INPUT_LEN {
            return Err(Error::shape(format!(
                "extractor expects [B, 1, {INPUT_LEN}], got {shape:?}"
            )));
        }
        let mut h = x;
        for layer in 0..3 {
            h = tape.conv1d(&self.params, h, self.ids.conv_w[layer], self.ids.conv_b[layer])?;
            h = tape.relu(h);
            h = self.apply_dropout(tape, h, dropout, layer as u64)?;
        }
        h = tape.flatten(h)?;
        h = tape.dense(&self.params, h, self.ids.dense_w, self.ids.dense_b)?;
        h = tape.relu(h);
        h = self.apply_dropout(tape, h, dropout, 3)?;
        Ok(h)
    }

    fn apply_dropout(
        &self,
        tape: &mut Tape<T>,
        x: NodeId,
        dropout: Option<&DropoutCtx>,
        layer: u64,
    ) -> Result<NodeId> {
        match dropout {
            Some(ctx) if ctx.rate > 0.0 => {
                let mut rng = ctx.rng(layer);
                tape.dropout(x, ctx.rate, true, &mut rng)
            }
            _ => Ok(x),
        }
    }

    /// Class probabilities from features: dense(256) + ReLU + dense(K) + softmax.
    pub fn classify(&self, tape: &mut Tape<T>, features: NodeId) -> Result<NodeId> {
        let h = tape.dense(&self.params, features, self.ids.clf1_w, self.ids.clf1_b)?;
        let h = tape.relu(h);
        let h = tape.dense(&self.params, h, self.ids.clf2_w, self.ids.clf2_b)?;
        tape.softmax(h)
    }

    /// Domain probabilities (source, target) from the mode's input width.
    pub fn discriminate(&self, tape: &mut Tape<T>, z: NodeId) -> Result<NodeId> {
        let shape = tape.shape(z);
        if shape.len() != 2 || shape[1] != self.disc_input_dim() {
            return Err(Error::shape(format!(
                "discriminator expects [B, {}], got {shape:?}",
                self.disc_input_dim()
            )));
        }
        let h = tape.dense(&self.params, z, self.ids.disc1_w, self.ids.disc1_b)?;
        let h = tape.relu(h);
        let h = tape.dense(&self.params, h, self.ids.disc2_w, self.ids.disc2_b)?;
        tape.softmax(h)
    }

    /// Batch spectra into a `[B, 1, INPUT_LEN]` input node.
    pub fn input_node(&self, tape: &mut Tape<T>, batch: &[&[f64]]) -> Result<NodeId> {
        let b = batch.len();
        if b == 0 {
            return Err(Error::parameter("empty batch"));
        }
        let mut data = Vec::with_capacity(b * INPUT_LEN);
        for row in batch {
            if row.len() != INPUT_LEN {
                return Err(Error::shape(format!(
                    "input row has {} points, expected {INPUT_LEN}",
                    row.len()
                )));
            }
            data.extend(row.iter().map(|&v| T::from_f64(v)));
        }
        tape.input(&[b, 1, INPUT_LEN], data)
    }

    /// Inference: argmax class index per spectrum, computed in chunks.
    pub fn predict(&self, spectra: &[&[f64]], chunk: usize) -> Result<Vec<usize>> {
        let chunk = chunk.max(1);
        let mut out = Vec::with_capacity(spectra.len());
        for rows in spectra.chunks(chunk) {
            let mut tape = Tape::new();
            let x = self.input_node(&mut tape, rows)?;
            let f = self.features(&mut tape, x, None)?;
            let p = self.classify(&mut tape, f)?;
            let k = self.config.class_count;
            for row in tape.value(p).chunks(k) {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                out.push(best);
            }
        }
        Ok(out)
    }

    /// Write a checkpoint (mode and class count in the header, f32 tensors).
    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(
            path,
            &self.params,
            CheckpointMeta {
                mode: self.config.disc_mode.tag(),
                class_count: self.config.class_count as u32,
            },
        )
    }

    /// Load a checkpoint written by [`Model::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let (loaded, meta) = load_checkpoint::<T>(path)?;
        let config = ModelConfig::new(meta.class_count as usize, DiscMode::from_tag(meta.mode)?);
        let mut model = Model::new(config, 0)?;
        if loaded.len() != model.params.len() {
            return Err(Error::format(format!(
                "checkpoint has {} tensors, model expects {}",
                loaded.len(),
                model.params.len()
            )));
        }
        for (have, want) in loaded.iter().zip(model.params.iter_mut()) {
            if have.name != want.name || have.shape != want.shape {
                return Err(Error::format(format!(
                    "checkpoint tensor `{}` {:?} does not match `{}` {:?}",
                    have.name, have.shape, want.name, want.shape
                )));
            }
            want.value = have.value.clone();
        }
        Ok(model)
    }
}
