//! Adversarial domain adaptation objectives and the training loop.
//!
//! All four methods share one graph skeleton. The classifier loss is the
//! cross-entropy of `g(f(x))` on labeled source batches. The adaptation
//! methods add a domain loss: a discriminator separates source from target
//! through a gradient-scaling node with factor `-lambda_d`, so one backward
//! pass descends the classifier/discriminator losses while ascending the
//! domain loss through the feature extractor (the adversarial minimax).
//!
//! * `Dann`: the discriminator reads features `f(x)`.
//! * `Conditional`: it reads the multilinear fusion `f(x) (x) g(f(x))`,
//!   aligning class-conditioned rather than marginal distributions. The
//!   pseudo-label factor is detached so the domain loss never updates the
//!   classifier head through it.
//! * `AugmentedConditional`: target features and pseudo-labels are convexly
//!   mixed within the batch (lambda ~ Beta(alpha, alpha)) before the fusion,
//!   densifying support for rare fault classes.

use std::collections::VecDeque;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::dsp::EnvelopeSpectrum;
use crate::error::{Error, Result};
use crate::metrics::{balanced_accuracy, cohens_kappa, f1_scores, ConfusionMatrix};
use crate::model::{DiscMode, DropoutCtx, Model};
use crate::seed;
use crate::siggen::FaultClass;
use crate::tensor::{AdamConfig, AdamState, NodeId, Scalar, Tape};

/// Training objective selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    SourceOnly,
    Dann,
    Conditional,
    AugmentedConditional,
}

impl Method {
    pub const ALL: [Method; 4] =
        [Method::SourceOnly, Method::Dann, Method::Conditional, Method::AugmentedConditional];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::SourceOnly => "source-only",
            Method::Dann => "dann",
            Method::Conditional => "conditional",
            Method::AugmentedConditional => "proposed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "source-only" | "source_only" => Ok(Method::SourceOnly),
            "dann" => Ok(Method::Dann),
            "conditional" => Ok(Method::Conditional),
            "proposed" | "augmented-conditional" | "augmented_conditional" => {
                Ok(Method::AugmentedConditional)
            }
            other => Err(Error::parameter(format!("unknown method `{other}`"))),
        }
    }

    /// Discriminator wiring this method needs.
    pub fn disc_mode(&self) -> DiscMode {
        match self {
            Method::SourceOnly | Method::Dann => DiscMode::Marginal,
            Method::Conditional | Method::AugmentedConditional => DiscMode::Conditional,
        }
    }

    pub fn uses_target(&self) -> bool {
        *self != Method::SourceOnly
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Full training schedule and adaptation knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of the domain loss in the reversal node.
    pub lambda_d: f64,
    /// Ramp lambda_d with 2/(1+exp(-10p)) - 1 over training progress p.
    pub lambda_ramp: bool,
    /// Shape parameter of the Beta(alpha, alpha) mixup prior.
    pub mixup_alpha: f64,
    /// Draw one lambda per sample instead of one per batch.
    pub mixup_per_sample: bool,
    /// Also mix the source batch (default: target only).
    pub mixup_symmetric: bool,
    pub dropout_rate: f64,
    pub seed: u64,
    /// Evaluate every n-th epoch (the final epoch is always evaluated).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::AugmentedConditional,
            epochs: 100,
            batch_size: 128,
            learning_rate: 0.001,
            lambda_d: 1.0,
            lambda_ramp: false,
            mixup_alpha: 1.0,
            mixup_per_sample: false,
            mixup_symmetric: false,
            dropout_rate: 0.5,
            seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::parameter("epochs must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::parameter("batch size must be at least 2"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::parameter("learning rate must be positive"));
        }
        if !(self.lambda_d >= 0.0) {
            return Err(Error::parameter("lambda_d must be nonnegative"));
        }
        if !(self.mixup_alpha > 0.0) {
            return Err(Error::parameter("mixup alpha must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::parameter("dropout rate must be in [0, 1)"));
        }
        if self.eval_every < 1 {
            return Err(Error::parameter("eval_every must be at least 1"));
        }
        Ok(())
    }

    fn lambda_at(&self, progress: f64) -> f64 {
        if self.lambda_ramp {
            self.lambda_d * (2.0 / (1.0 + (-10.0 * progress).exp()) - 1.0)
        } else {
            self.lambda_d
        }
    }
}

/// Multilinear feature/prediction fusion `e (x) y`, flattened feature-major.
pub fn multilinear_map<T: Scalar>(tape: &mut Tape<T>, e: NodeId, y: NodeId) -> Result<NodeId> {
    tape.multilinear(e, y)
}

/// Nodes and draws of one mixup augmentation.
#[derive(Debug, Clone)]
pub struct MixupBatch {
    pub e_tilde: NodeId,
    pub y_tilde: NodeId,
    pub z_tilde: NodeId,
    pub lambdas: Vec<f64>,
    pub perm: Vec<usize>,
}

/// Draw mixing coefficients from Beta(alpha, alpha).
pub fn sample_mixup_lambdas(alpha: f64, count: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let beta = Beta::new(alpha, alpha)
        .map_err(|e| Error::parameter(format!("invalid mixup alpha {alpha}: {e}")))?;
    Ok((0..count).map(|_| beta.sample(rng)).collect())
}

/// Convexly mix a batch of embeddings and pseudo-labels with a shuffled copy
/// of itself and fuse the result: `e~ = lam*e + (1-lam)*e[perm]`, same for
/// `y~`, `z~ = e~ (x) y~`. One lambda per batch unless `per_sample`.
pub fn mixup_augment<T: Scalar>(
    tape: &mut Tape<T>,
    e: NodeId,
    y: NodeId,
    alpha: f64,
    per_sample: bool,
    rng: &mut impl Rng,
) -> Result<MixupBatch> {
    let batch = tape.shape(e)[0];
    if batch < 2 {
        return Err(Error::parameter("mixup needs a batch of at least 2"));
    }
    let lambdas = if per_sample {
        sample_mixup_lambdas(alpha, batch, rng)?
    } else {
        vec![sample_mixup_lambdas(alpha, 1, rng)?[0]; batch]
    };
    let mut perm: Vec<usize> = (0..batch).collect();
    perm.shuffle(rng);
    let lam_t: Vec<T> = lambdas.iter().map(|&l| T::from_f64(l)).collect();
    let e_tilde = tape.mix_rows(e, &perm, &lam_t)?;
    let y_tilde = tape.mix_rows(y, &perm, &lam_t)?;
    let z_tilde = tape.multilinear(e_tilde, y_tilde)?;
    Ok(MixupBatch { e_tilde, y_tilde, z_tilde, lambdas, perm })
}

/// Loss values of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub clf: f64,
    pub disc: Option<f64>,
}

struct StepGraph {
    total: NodeId,
    losses: StepLosses,
}

fn build_step<T: Scalar>(
    model: &Model<T>,
    tape: &mut Tape<T>,
    src_x: &[&[f64]],
    src_y: &[usize],
    tgt_x: Option<&[&[f64]]>,
    config: &TrainConfig,
    lambda_now: f64,
    step: u64,
) -> Result<StepGraph> {
    let src_ctx =
        DropoutCtx { base_seed: config.seed, step, branch: 0, rate: config.dropout_rate };
    let x_s = model.input_node(tape, src_x)?;
    let f_s = model.features(tape, x_s, Some(&src_ctx))?;
    let p_s = model.classify(tape, f_s)?;
    let clf = tape.cross_entropy(p_s, src_y)?;

    if !config.method.uses_target() {
        let clf_value = tape.scalar(clf);
        return Ok(StepGraph { total: clf, losses: StepLosses { clf: clf_value, disc: None } });
    }
    let tgt_x = tgt_x.ok_or_else(|| Error::parameter("adaptation methods need a target batch"))?;
    let tgt_ctx =
        DropoutCtx { base_seed: config.seed, step, branch: 1, rate: config.dropout_rate };
    let x_t = model.input_node(tape, tgt_x)?;
    let f_t = model.features(tape, x_t, Some(&tgt_ctx))?;
    let factor = T::from_f64(-lambda_now);

    let (d_s, d_t) = match config.method {
        Method::Dann => (tape.grad_scale(f_s, factor), tape.grad_scale(f_t, factor)),
        Method::Conditional | Method::AugmentedConditional => {
            let yhat_s = tape.detach(p_s);
            let p_t = model.classify(tape, f_t)?;
            let yhat_t = tape.detach(p_t);
            let z_s = if config.method == Method::AugmentedConditional && config.mixup_symmetric {
                let mut rng = seed::rng(config.seed, &[0xA2, step]);
                mixup_augment(tape, f_s, yhat_s, config.mixup_alpha, config.mixup_per_sample, &mut rng)?
                    .z_tilde
            } else {
                tape.multilinear(f_s, yhat_s)?
            };
            let z_t = if config.method == Method::AugmentedConditional {
                let mut rng = seed::rng(config.seed, &[0xA1, step]);
                mixup_augment(tape, f_t, yhat_t, config.mixup_alpha, config.mixup_per_sample, &mut rng)?
                    .z_tilde
            } else {
                tape.multilinear(f_t, yhat_t)?
            };
            (tape.grad_scale(z_s, factor), tape.grad_scale(z_t, factor))
        }
        Method::SourceOnly => unreachable!(),
    };

    let d_in = tape.concat_rows(d_s, d_t)?;
    let d_probs = model.discriminate(tape, d_in)?;
    let mut domain_targets = vec![0usize; src_x.len()];
    domain_targets.extend(std::iter::repeat(1usize).take(tgt_x.len()));
    let disc = tape.cross_entropy(d_probs, &domain_targets)?;
    let total = tape.add(clf, disc)?;
    Ok(StepGraph {
        total,
        losses: StepLosses { clf: tape.scalar(clf), disc: Some(tape.scalar(disc)) },
    })
}

/// Classifier and domain losses of one batch pair without touching the
/// parameters. Deterministic per (config.seed, step).
pub fn combined_loss<T: Scalar>(
    model: &Model<T>,
    src_x: &[&[f64]],
    src_y: &[usize],
    tgt_x: Option<&[&[f64]]>,
    config: &TrainConfig,
    step: u64,
) -> Result<StepLosses> {
    config.validate()?;
    let mut tape = Tape::new();
    let graph = build_step(model, &mut tape, src_x, src_y, tgt_x, config, config.lambda_d, step)?;
    Ok(graph.losses)
}

/// Scalar evaluation metrics of one pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub balanced_accuracy: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    /// NaN when kappa is undefined (constant labels on both sides).
    pub kappa: f64,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub clf_loss: f64,
    pub disc_loss: Option<f64>,
    pub eval: Option<EvalMetrics>,
}

/// Key=value log line, one per epoch.
pub fn format_epoch_record(rec: &EpochRecord) -> String {
    let mut line = format!("epoch={} clf_loss={:.6}", rec.epoch, rec.clf_loss);
    if let Some(d) = rec.disc_loss {
        line.push_str(&format!(" disc_loss={d:.6}"));
    }
    if let Some(e) = &rec.eval {
        line.push_str(&format!(
            " bal_acc={:.6} acc={:.6} macro_f1={:.6} micro_f1={:.6} kappa={:.6}",
            e.balanced_accuracy, e.accuracy, e.macro_f1, e.micro_f1, e.kappa
        ));
    }
    line
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    pub final_eval: Option<EvalMetrics>,
}

fn class_index(classes: &[FaultClass], label: FaultClass) -> Result<usize> {
    classes
        .iter()
        .position(|&c| c == label)
        .ok_or_else(|| Error::parameter(format!("label {label} not in class list")))
}

/// Confusion matrix and metrics of the model on labeled spectra.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    spectra: &[EnvelopeSpectrum],
    labels: &[FaultClass],
    classes: &[FaultClass],
    chunk: usize,
) -> Result<(ConfusionMatrix, EvalMetrics)> {
    if spectra.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} spectra vs {} labels",
            spectra.len(),
            labels.len()
        )));
    }
    if spectra.is_empty() {
        return Err(Error::parameter("empty evaluation set"));
    }
    let rows: Vec<&[f64]> = spectra.iter().map(|s| s.values.as_slice()).collect();
    let pred = model.predict(&rows, chunk)?;
    let truth: Vec<usize> =
        labels.iter().map(|&l| class_index(classes, l)).collect::<Result<_>>()?;
    let cm = ConfusionMatrix::from_predictions(&truth, &pred, classes.len())?;
    let f1 = f1_scores(&cm);
    let metrics = EvalMetrics {
        balanced_accuracy: balanced_accuracy(&cm)?,
        accuracy: cm.accuracy(),
        macro_f1: f1.macro_f1,
        micro_f1: f1.micro_f1,
        kappa: cohens_kappa(&cm).unwrap_or(f64::NAN),
    };
    Ok((cm, metrics))
}

/// End-to-end training: Adam over the combined loss, one source pass per
/// epoch, target batches cycled with per-epoch reshuffling. Labels are read
/// only from the source set and the optional evaluation pair. Deterministic
/// given the config seed.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    source: &[EnvelopeSpectrum],
    target: &[EnvelopeSpectrum],
    classes: &[FaultClass],
    eval_set: Option<(&[EnvelopeSpectrum], &[FaultClass])>,
    config: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if classes.len() != model.class_count() {
        return Err(Error::parameter(format!(
            "{} classes vs model built for {}",
            classes.len(),
            model.class_count()
        )));
    }
    if source.is_empty() {
        return Err(Error::parameter("source dataset is empty"));
    }
    if config.method.uses_target() {
        if target.is_empty() {
            return Err(Error::parameter("target dataset is empty"));
        }
        if model.disc_mode() != config.method.disc_mode() {
            return Err(Error::parameter(format!(
                "method {} needs a {:?} discriminator, model has {:?}",
                config.method,
                config.method.disc_mode(),
                model.disc_mode()
            )));
        }
    }
    let src_y_all: Vec<usize> = source
        .iter()
        .map(|s| {
            s.label
                .ok_or_else(|| Error::parameter("source sample without label"))
                .and_then(|l| class_index(classes, l))
        })
        .collect::<Result<_>>()?;

    let n_src = source.len();
    let n_tgt = target.len();
    let mut batch = config.batch_size.min(n_src);
    if config.method.uses_target() {
        batch = batch.min(n_tgt);
    }
    if config.method == Method::AugmentedConditional && batch < 2 {
        return Err(Error::parameter("mixup needs an effective batch of at least 2"));
    }
    if batch == 0 {
        return Err(Error::parameter("empty training batch"));
    }
    let steps_per_epoch = (n_src / batch).max(1);
    let total_steps = (steps_per_epoch * config.epochs) as f64;

    let mut adam = AdamState::new(
        &model.params,
        AdamConfig::with_learning_rate(config.learning_rate),
    );
    let mut records = Vec::with_capacity(config.epochs);
    let mut final_eval = None;

    for epoch in 0..config.epochs {
        let mut src_order: Vec<usize> = (0..n_src).collect();
        src_order.shuffle(&mut seed::rng(config.seed, &[0xE0, epoch as u64]));
        let mut tgt_rng = seed::rng(config.seed, &[0xE1, epoch as u64]);
        let mut tgt_queue: VecDeque<usize> = VecDeque::new();

        let mut clf_sum = 0.0;
        let mut disc_sum = 0.0;
        let mut disc_seen = false;
        for step_in_epoch in 0..steps_per_epoch {
            let global_step = (epoch * steps_per_epoch + step_in_epoch) as u64;
            let lambda_now = config.lambda_at((global_step as f64 + 1.0) / total_steps);

            let src_idx = &src_order[step_in_epoch * batch..(step_in_epoch + 1) * batch];
            let src_x: Vec<&[f64]> = src_idx.iter().map(|&i| source[i].values.as_slice()).collect();
            let src_y: Vec<usize> = src_idx.iter().map(|&i| src_y_all[i]).collect();

            let tgt_rows: Option<Vec<&[f64]>> = if config.method.uses_target() {
                let mut rows = Vec::with_capacity(batch);
                for _ in 0..batch {
                    if tgt_queue.is_empty() {
                        let mut order: Vec<usize> = (0..n_tgt).collect();
                        order.shuffle(&mut tgt_rng);
                        tgt_queue.extend(order);
                    }
                    let i = tgt_queue.pop_front().expect("refilled above");
                    rows.push(target[i].values.as_slice());
                }
                Some(rows)
            } else {
                None
            };

            model.params.zero_grads();
            let mut tape = Tape::new();
            let graph = build_step(
                model,
                &mut tape,
                &src_x,
                &src_y,
                tgt_rows.as_deref(),
                config,
                lambda_now,
                global_step,
            )?;
            tape.backward(graph.total, &mut model.params)?;
            adam.step(&mut model.params)?;

            clf_sum += graph.losses.clf;
            if let Some(d) = graph.losses.disc {
                disc_sum += d;
                disc_seen = true;
            }
        }

        let is_last = epoch + 1 == config.epochs;
        let eval = match &eval_set {
            Some((spectra, labels)) if (epoch + 1) % config.eval_every == 0 || is_last => {
                let (_, metrics) = evaluate(model, spectra, labels, classes, config.batch_size)?;
                Some(metrics)
            }
            _ => None,
        };
        if eval.is_some() {
            final_eval = eval;
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            clf_loss: clf_sum / steps_per_epoch as f64,
            disc_loss: disc_seen.then(|| disc_sum / steps_per_epoch as f64),
            eval,
        };
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", format_epoch_record(&record))?;
        }
        records.push(record);
    }

    Ok(TrainOutcome { records, final_eval })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, ModelConfig, FEATURE_DIM, INPUT_LEN};
    use crate::siggen::DomainTag;

    fn spectra_set(
        n: usize,
        classes: &[FaultClass],
        seedval: u64,
        domain: DomainTag,
    ) -> Vec<EnvelopeSpectrum> {
        // Class-dependent bump plus noise: linearly separable-ish toy data.
        let mut rng = seed::rng(seedval, &[]);
        (0..n)
            .map(|i| {
                let class = classes[i % classes.len()];
                let center = 100 + 200 * (i % classes.len());
                let values: Vec<f64> = (0..INPUT_LEN)
                    .map(|j| {
                        let bump = (-((j as f64 - center as f64) / 20.0).powi(2)).exp();
                        0.05 * rng.gen::<f64>() + bump
                    })
                    .collect();
                EnvelopeSpectrum { values, label: Some(class), domain }
            })
            .collect()
    }

    fn toy_config(method: Method, epochs: usize) -> TrainConfig {
        TrainConfig {
            method,
            epochs,
            batch_size: 8,
            learning_rate: 0.001,
            seed: 42,
            dropout_rate: 0.25,
            eval_every: 1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn multilinear_frobenius_identity() {
        let mut rng = seed::rng(1, &[]);
        let mut tape: Tape<f64> = Tape::new();
        let (b, f, k) = (4, 16, 4);
        let e_data: Vec<f64> = (0..b * f).map(|_| rng.gen::<f64>() - 0.5).collect();
        let y_data: Vec<f64> = (0..b * k).map(|_| rng.gen::<f64>()).collect();
        let e = tape.input(&[b, f], e_data.clone()).unwrap();
        let y = tape.input(&[b, k], y_data.clone()).unwrap();
        let z = multilinear_map(&mut tape, e, y).unwrap();
        for bi in 0..b {
            let ze = tape.value(z)[bi * f * k..(bi + 1) * f * k]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            let en = e_data[bi * f..(bi + 1) * f].iter().map(|v| v * v).sum::<f64>().sqrt();
            let yn = y_data[bi * k..(bi + 1) * k].iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((ze - en * yn).abs() < 1e-9, "Frobenius norm of rank-1 outer product");
        }
    }

    #[test]
    fn multilinear_uniform_prediction_replicates_features() {
        let mut tape: Tape<f64> = Tape::new();
        let k = 4;
        let e = tape.input(&[1, 3], vec![1.0, -2.0, 3.0]).unwrap();
        let y = tape.input(&[1, k], vec![0.25; k]).unwrap();
        let z = multilinear_map(&mut tape, e, y).unwrap();
        let v = tape.value(z);
        for i in 0..3 {
            for j in 0..k {
                assert!((v[i * k + j] - tape.value(e)[i] * 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mixup_lambda_prior_is_uniform_for_alpha_one() {
        let mut rng = seed::rng(2, &[]);
        let draws = sample_mixup_lambdas(1.0, 100_000, &mut rng).unwrap();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 0.5).abs() < 0.01, "Beta(1,1) mean: {mean}");
        assert!(draws.iter().all(|&l| (0.0..=1.0).contains(&l)));
    }

    #[test]
    fn mixup_outputs_stay_convex_and_normalized() {
        let mut rng = seed::rng(3, &[]);
        for trial in 0..50 {
            let b = 6;
            let mut tape: Tape<f64> = Tape::new();
            let e_data: Vec<f64> = (0..b * FEATURE_DIM).map(|_| rng.gen::<f64>() - 0.5).collect();
            let mut y_data = Vec::new();
            for _ in 0..b {
                let mut row: Vec<f64> = (0..4).map(|_| rng.gen::<f64>() + 1e-3).collect();
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= s);
                y_data.extend(row);
            }
            let e = tape.input(&[b, FEATURE_DIM], e_data.clone()).unwrap();
            let y = tape.input(&[b, 4], y_data.clone()).unwrap();
            let mut mix_rng = seed::rng(100 + trial, &[]);
            let mix = mixup_augment(&mut tape, e, y, 1.0, trial % 2 == 0, &mut mix_rng).unwrap();
            let et = tape.value(mix.e_tilde);
            for r in 0..b {
                for i in 0..FEATURE_DIM {
                    let a = e_data[r * FEATURE_DIM + i];
                    let bb = e_data[mix.perm[r] * FEATURE_DIM + i];
                    let (lo, hi) = (a.min(bb), a.max(bb));
                    let v = et[r * FEATURE_DIM + i];
                    assert!(v >= lo - 1e-9 && v <= hi + 1e-9, "convexity violated");
                }
            }
            for row in tape.value(mix.y_tilde).chunks(4) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mixup_rejects_batch_of_one() {
        let mut tape: Tape<f64> = Tape::new();
        let e = tape.input(&[1, 4], vec![0.0; 4]).unwrap();
        let y = tape.input(&[1, 2], vec![0.5; 2]).unwrap();
        let mut rng = seed::rng(4, &[]);
        assert!(mixup_augment(&mut tape, e, y, 1.0, false, &mut rng).is_err());
    }

    #[test]
    fn reversed_gradient_does_not_decrease_discriminator_loss() {
        let model: Model<f64> = Model::new(ModelConfig::new(4, DiscMode::Marginal), 11).unwrap();
        let mut rng = seed::rng(5, &[]);
        let b = 6;
        let e_data: Vec<f64> = (0..2 * b * FEATURE_DIM).map(|_| rng.gen::<f64>() - 0.5).collect();
        let targets: Vec<usize> =
            (0..b).map(|_| 0).chain((0..b).map(|_| 1)).collect();
        let disc_loss = |data: &[f64]| -> (f64, Vec<f64>) {
            let mut params = model.params.clone();
            params.zero_grads();
            let mut tape = Tape::new();
            let e = tape.input(&[2 * b, FEATURE_DIM], data.to_vec()).unwrap();
            let rev = tape.grad_scale(e, -1.0);
            let p = model.discriminate(&mut tape, rev).unwrap();
            let loss = tape.cross_entropy(p, &targets).unwrap();
            let value = tape.scalar(loss);
            tape.backward(loss, &mut params).unwrap();
            (value, tape.grad(e).unwrap().to_vec())
        };
        let (l0, g) = disc_loss(&e_data);
        // The optimizer moves e along -grad; with the reversal in place that
        // direction must not decrease the discriminator loss.
        let h = 1e-4;
        let stepped: Vec<f64> = e_data.iter().zip(&g).map(|(&v, &gv)| v - h * gv).collect();
        let (l1, _) = disc_loss(&stepped);
        assert!(l1 >= l0 - 1e-10, "disc loss decreased along the reversed direction: {l0} -> {l1}");
    }

    #[test]
    fn combined_loss_matches_source_only_when_lambda_is_zero() {
        let classes = [FaultClass::Healthy, FaultClass::OuterRace];
        let source = spectra_set(8, &classes, 10, DomainTag::SyntheticSource);
        let target = spectra_set(8, &classes, 11, DomainTag::RealTarget);
        let rows: Vec<&[f64]> = source.iter().map(|s| s.values.as_slice()).collect();
        let trows: Vec<&[f64]> = target.iter().map(|s| s.values.as_slice()).collect();
        let y: Vec<usize> = (0..8).map(|i| i % 2).collect();

        let src_model: Model<f64> = Model::new(ModelConfig::new(2, DiscMode::Marginal), 3).unwrap();
        let mut cfg = toy_config(Method::SourceOnly, 1);
        cfg.lambda_d = 0.0;
        let a = combined_loss(&src_model, &rows, &y, None, &cfg, 0).unwrap();
        cfg.method = Method::Dann;
        let b = combined_loss(&src_model, &rows, &y, Some(&trows), &cfg, 0).unwrap();
        assert_eq!(a.clf, b.clf, "classifier loss must not depend on the disc branch");
        assert!(a.disc.is_none() && b.disc.is_some());
    }

    #[test]
    fn train_smoke_converges_and_is_deterministic() {
        let classes = [FaultClass::Healthy, FaultClass::OuterRace];
        let source = spectra_set(32, &classes, 20, DomainTag::SyntheticSource);
        let labels: Vec<FaultClass> = source.iter().map(|s| s.label.unwrap()).collect();
        let cfg = toy_config(Method::SourceOnly, 6);
        let run = || -> (Vec<EpochRecord>, Vec<f64>) {
            let mut model: Model<f64> =
                Model::new(ModelConfig::new(2, DiscMode::Marginal), 77).unwrap();
            let outcome =
                train(&mut model, &source, &[], &classes, Some((&source, &labels)), &cfg, None)
                    .unwrap();
            (outcome.records, model.classifier_path_values())
        };
        let (rec1, par1) = run();
        let (rec2, par2) = run();
        assert_eq!(rec1, rec2, "fixed seed must reproduce the loss curve exactly");
        assert_eq!(par1, par2);
        assert!(
            rec1.last().unwrap().clf_loss < rec1[0].clf_loss,
            "training loss should decrease on separable toy data"
        );
        let final_eval = rec1.last().unwrap().eval.unwrap();
        assert!(final_eval.balanced_accuracy > 0.9, "toy fit: {final_eval:?}");
    }

    #[test]
    fn train_all_methods_run_one_epoch() {
        let classes = [FaultClass::Healthy, FaultClass::OuterRace];
        let source = spectra_set(16, &classes, 30, DomainTag::SyntheticSource);
        let target = spectra_set(12, &classes, 31, DomainTag::RealTarget);
        for method in Method::ALL {
            let mut model: Model<f64> =
                Model::new(ModelConfig::new(2, method.disc_mode()), 5).unwrap();
            let mut cfg = toy_config(method, 1);
            cfg.batch_size = 4;
            let mut log = Vec::new();
            let outcome =
                train(&mut model, &source, &target, &classes, None, &cfg, Some(&mut log))
                    .unwrap();
            assert_eq!(outcome.records.len(), 1);
            let text = String::from_utf8(log).unwrap();
            assert!(text.starts_with("epoch=1 clf_loss="), "log line: {text}");
            if method.uses_target() {
                assert!(outcome.records[0].disc_loss.is_some());
                assert!(text.contains("disc_loss="));
            }
        }
    }

    #[test]
    fn train_rejects_mode_mismatch() {
        let classes = [FaultClass::Healthy, FaultClass::OuterRace];
        let source = spectra_set(8, &classes, 40, DomainTag::SyntheticSource);
        let target = spectra_set(8, &classes, 41, DomainTag::RealTarget);
        let mut model: Model<f64> =
            Model::new(ModelConfig::new(2, DiscMode::Marginal), 1).unwrap();
        let cfg = toy_config(Method::Conditional, 1);
        assert!(train(&mut model, &source, &target, &classes, None, &cfg, None).is_err());
    }

    #[test]
    fn train_rejects_empty_inputs() {
        let classes = [FaultClass::Healthy, FaultClass::OuterRace];
        let source = spectra_set(8, &classes, 50, DomainTag::SyntheticSource);
        let mut model: Model<f64> =
            Model::new(ModelConfig::new(2, DiscMode::Marginal), 1).unwrap();
        let cfg = toy_config(Method::Dann, 1);
        assert!(train(&mut model, &source, &[], &classes, None, &cfg, None).is_err());
        assert!(train(&mut model, &[], &source, &classes, None, &cfg, None).is_err());
    }

    #[test]
    fn method_parsing_round_trips() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.as_str()).unwrap(), m);
        }
        assert!(Method::parse("mmd").is_err());
    }
}
