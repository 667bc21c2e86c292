//! Losses, the unsupervised weighting schemes, batch scheduling, the
//! training loop, and held-out evaluation.
//!
//! One step trains on a batch of labelled images plus a batch of mixed
//! unlabelled pairs: the teacher predicts on both halves of each pair, a
//! binary mask mixes images and predictions, the (optionally pseudo-labelled)
//! mixed prediction becomes the target, and the student is trained on the
//! supervised term plus the weighted unsupervised term. The teacher follows
//! the student by exponential moving average and receives no gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::{accumulate_confusion, miou, ConfusionMatrix};
use crate::mixing::{
    apply_color_jitter_blur, classmix_augment, cowmix_mask, cutmix_mask, lambda_weight, mix,
    pixelwise_argmax, pseudo_label, MixOutput,
};
use crate::nn::network::{backward, forward, forward_cached, init_params, ModelParams, NetworkConfig};
use crate::nn::ops::softmax_backward;
use crate::nn::optim::{ema_update, sgd_nesterov_step, OptimizerState};
use crate::scenes::{random_crop, random_crop_image, Dataset, ExperimentData};
use crate::tensor::{Image, ProbMap, SegMap, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixStrategy {
    ClassMix,
    CutMix,
    CowMix,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightScheme {
    /// Lambda = fraction of confidently predicted pixels in the soft target.
    ConfidenceProportion,
    /// Unconfident pixels are masked out of the loss instead.
    PixelwiseThreshold,
    /// Lambda ramps from exp(-5) to 1 over the first quarter of training.
    SigmoidRampup,
    /// Fixed lambda (1 reproduces the constant-weight arm, 0 the baseline).
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    SquaredError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mix_strategy: MixStrategy,
    pub weight_scheme: WeightScheme,
    pub loss_kind: LossKind,
    pub use_pseudo_label: bool,
    pub tau: f64,
    pub ema_alpha: f64,
    pub iterations: u64,
    pub batch_labelled: usize,
    pub batch_unlabelled: usize,
    pub extra_augment: bool,
    pub jitter_strength: f64,
    /// Aligned random crop applied when building batches; `None` trains on
    /// full scenes.
    pub crop: Option<(usize, usize)>,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub poly_power: f64,
    pub constant_weight: f64,
    pub cow_sigma: f64,
    pub cow_p: f64,
    /// Evaluate the teacher instead of the student.
    pub eval_teacher: bool,
    pub eval_interval: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            mix_strategy: MixStrategy::ClassMix,
            weight_scheme: WeightScheme::ConfidenceProportion,
            loss_kind: LossKind::CrossEntropy,
            use_pseudo_label: true,
            tau: 0.968,
            ema_alpha: 0.99,
            iterations: 4000,
            batch_labelled: 2,
            batch_unlabelled: 2,
            extra_augment: false,
            jitter_strength: 1.0,
            crop: None,
            base_lr: 0.02,
            momentum: 0.9,
            weight_decay: 5e-4,
            poly_power: 0.9,
            constant_weight: 1.0,
            cow_sigma: 16.0,
            cow_p: 0.5,
            eval_teacher: false,
            eval_interval: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_labelled == 0 {
            return Err(Error::invalid("TrainConfig", "batch_labelled must be at least 1"));
        }
        if self.mix_strategy != MixStrategy::None && self.batch_unlabelled == 0 {
            return Err(Error::invalid("TrainConfig", "batch_unlabelled must be at least 1"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::invalid("TrainConfig", format!("tau {} outside (0, 1)", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.ema_alpha) {
            return Err(Error::invalid("TrainConfig", "ema_alpha outside [0, 1]"));
        }
        if self.eval_interval == 0 {
            return Err(Error::invalid("TrainConfig", "eval_interval must be positive"));
        }
        Ok(())
    }

    /// Ramp length for the sigmoid scheme: first quarter of the run, in
    /// line with ramping over 10k of 40k iterations.
    pub fn ramp_length(&self) -> u64 {
        (self.iterations / 4).max(1)
    }
}

/// One-hot encode a ground-truth map as a `[H, W, K]` target distribution.
pub fn one_hot(seg: &SegMap, k: usize) -> ProbMap {
    let mut out = Tensor::zeros(&[seg.h, seg.w, k]);
    for (px, &id) in out.data_mut().chunks_exact_mut(k).zip(&seg.data) {
        px[id as usize] = 1.0;
    }
    out
}

const LOG_CLAMP: f64 = 1e-12;

fn check_same_probmaps(op: &'static str, s: &ProbMap, y: &ProbMap) -> Result<(usize, usize)> {
    if s.shape() != y.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", s.shape(), y.shape())));
    }
    let k = s.shape()[2];
    Ok((s.len() / k, k))
}

/// Pixel-averaged cross-entropy: `-(1/(W*H)) sum_ij sum_c Y log S`, with `S`
/// clamped below at 1e-12 before the log.
pub fn cross_entropy_loss(s: &ProbMap, y: &ProbMap) -> Result<f64> {
    let (n, k) = check_same_probmaps("cross_entropy_loss", s, y)?;
    let mut sum = 0.0;
    for (spx, ypx) in s.data().chunks_exact(k).zip(y.data().chunks_exact(k)) {
        for (&sv, &yv) in spx.iter().zip(ypx) {
            if yv != 0.0 {
                sum -= yv * sv.max(LOG_CLAMP).ln();
            }
        }
    }
    Ok(sum / n as f64)
}

/// Squared error summed over the class dimension, averaged over pixels.
pub fn squared_error_loss(s: &ProbMap, y: &ProbMap) -> Result<f64> {
    let (n, k) = check_same_probmaps("squared_error_loss", s, y)?;
    let mut sum = 0.0;
    for (spx, ypx) in s.data().chunks_exact(k).zip(y.data().chunks_exact(k)) {
        for (&sv, &yv) in spx.iter().zip(ypx) {
            let d = sv - yv;
            sum += d * d;
        }
    }
    Ok(sum / n as f64)
}

/// `loss(sup) + lambda * loss(unsup)` with the loss picked by `kind`.
/// Teacher-produced targets are constants; gradients flow into the student
/// predictions only.
pub fn total_loss(
    sup_s: &ProbMap,
    sup_y: &ProbMap,
    unsup_s: &ProbMap,
    unsup_y: &ProbMap,
    lambda: f64,
    kind: LossKind,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid("total_loss", format!("lambda {lambda} outside [0, 1]")));
    }
    let single = |s, y| match kind {
        LossKind::CrossEntropy => cross_entropy_loss(s, y),
        LossKind::SquaredError => squared_error_loss(s, y),
    };
    Ok(single(sup_s, sup_y)? + lambda * single(unsup_s, unsup_y)?)
}

/// Per-pixel weights: 1 where the soft target's max class probability
/// exceeds `tau`, else 0.
pub fn pixelwise_threshold_weights(soft_target: &ProbMap, tau: f64) -> Vec<f64> {
    let k = soft_target.shape()[2];
    soft_target
        .data()
        .chunks_exact(k)
        .map(|px| {
            let max = px.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (max > tau) as u8 as f64
        })
        .collect()
}

/// `exp(-5 (1 - t)^2)` with `t = min(iteration / ramp_length, 1)`.
pub fn sigmoid_rampup(iteration: u64, ramp_length: u64) -> f64 {
    let t = (iteration as f64 / ramp_length.max(1) as f64).min(1.0);
    (-5.0 * (1.0 - t) * (1.0 - t)).exp()
}

/// Loss value plus the gradient w.r.t. the logits, already scaled by
/// `grad_scale` (the caller folds in batch size and lambda). With pixel
/// weights, the loss is the mean over positively weighted pixels and only
/// those pixels carry gradient; all-masked inputs contribute nothing.
fn loss_and_logit_grad(
    kind: LossKind,
    s: &ProbMap,
    y: &ProbMap,
    pixel_weights: Option<&[f64]>,
    grad_scale: f64,
) -> Result<(f64, Tensor)> {
    let (n, k) = check_same_probmaps("loss_and_logit_grad", s, y)?;
    let (denom, weight_at): (f64, Box<dyn Fn(usize) -> f64>) = match pixel_weights {
        None => (n as f64, Box::new(|_| 1.0)),
        Some(w) => {
            debug_assert_eq!(w.len(), n);
            let nz = w.iter().filter(|&&v| v > 0.0).count();
            let w = w.to_vec();
            (nz.max(1) as f64, Box::new(move |i| w[i]))
        }
    };

    let mut loss_sum = 0.0;
    match kind {
        LossKind::CrossEntropy => {
            // dL/dz = (S - Y) per pixel, scaled; exact because targets sum to 1
            let mut dlogits = Tensor::zeros(s.shape());
            for (i, ((spx, ypx), dpx)) in s
                .data()
                .chunks_exact(k)
                .zip(y.data().chunks_exact(k))
                .zip(dlogits.data_mut().chunks_exact_mut(k))
                .enumerate()
            {
                let w = weight_at(i);
                if w == 0.0 {
                    continue;
                }
                for ((&sv, &yv), d) in spx.iter().zip(ypx).zip(dpx.iter_mut()) {
                    if yv != 0.0 {
                        loss_sum -= w * yv * sv.max(LOG_CLAMP).ln();
                    }
                    *d = w * (sv - yv) * grad_scale / denom;
                }
            }
            Ok((loss_sum / denom, dlogits))
        }
        LossKind::SquaredError => {
            let mut dprobs = Tensor::zeros(s.shape());
            for (i, ((spx, ypx), dpx)) in s
                .data()
                .chunks_exact(k)
                .zip(y.data().chunks_exact(k))
                .zip(dprobs.data_mut().chunks_exact_mut(k))
                .enumerate()
            {
                let w = weight_at(i);
                if w == 0.0 {
                    continue;
                }
                for ((&sv, &yv), d) in spx.iter().zip(ypx).zip(dpx.iter_mut()) {
                    let diff = sv - yv;
                    loss_sum += w * diff * diff;
                    *d = 2.0 * w * diff * grad_scale / denom;
                }
            }
            let dlogits = softmax_backward(s, &dprobs);
            Ok((loss_sum / denom, dlogits))
        }
    }
}

/// One training batch: labelled pairs and unlabelled image pairs.
#[derive(Debug, Clone)]
pub struct Batch {
    pub labelled: Vec<(Image, SegMap)>,
    pub unlabelled_pairs: Vec<(Image, Image)>,
}

/// The random streams of one training run, all derived from the run seed so
/// that arms consuming different streams stay comparable.
pub struct TrainRngs {
    pub init: ChaCha8Rng,
    pub labelled: ChaCha8Rng,
    pub unlabelled: ChaCha8Rng,
    pub mask: ChaCha8Rng,
    pub labelled_augment: ChaCha8Rng,
    pub unlabelled_augment: ChaCha8Rng,
}

impl TrainRngs {
    pub fn from_seed(seed: u64) -> TrainRngs {
        let stream = |n: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(n);
            rng
        };
        TrainRngs {
            init: stream(0),
            labelled: stream(1),
            unlabelled: stream(2),
            mask: stream(3),
            labelled_augment: stream(4),
            unlabelled_augment: stream(5),
        }
    }
}

/// Draw one batch: labelled samples uniformly with replacement, unlabelled
/// A/B pairs uniformly, aligned crops applied when configured.
pub fn make_batch(dataset: &Dataset, config: &TrainConfig, rngs: &mut TrainRngs) -> Result<Batch> {
    if dataset.labelled.is_empty() {
        return Err(Error::invalid("make_batch", "labelled pool is empty"));
    }
    let mut labelled = Vec::with_capacity(config.batch_labelled);
    for _ in 0..config.batch_labelled {
        let idx = dataset.labelled[rngs.labelled.gen_range(0..dataset.labelled.len())];
        let (img, seg) = &dataset.items[idx];
        let pair = match config.crop {
            Some((ch, cw)) => random_crop(img, seg, ch, cw, &mut rngs.labelled_augment)?,
            None => (img.clone(), seg.clone()),
        };
        labelled.push(pair);
    }

    let mut unlabelled_pairs = Vec::new();
    if config.mix_strategy != MixStrategy::None {
        if dataset.unlabelled.is_empty() {
            return Err(Error::invalid("make_batch", "unlabelled pool is empty"));
        }
        for _ in 0..config.batch_unlabelled {
            let ia = dataset.unlabelled[rngs.unlabelled.gen_range(0..dataset.unlabelled.len())];
            let ib = dataset.unlabelled[rngs.unlabelled.gen_range(0..dataset.unlabelled.len())];
            let mut a = dataset.items[ia].0.clone();
            let mut b = dataset.items[ib].0.clone();
            if let Some((ch, cw)) = config.crop {
                a = random_crop_image(&a, ch, cw, &mut rngs.unlabelled_augment)?;
                b = random_crop_image(&b, ch, cw, &mut rngs.unlabelled_augment)?;
            }
            unlabelled_pairs.push((a, b));
        }
    }
    Ok(Batch {
        labelled,
        unlabelled_pairs,
    })
}

/// Mutable state of one training run.
pub struct TrainState {
    pub student: ModelParams,
    pub teacher: ModelParams,
    pub optimizer: OptimizerState,
    pub iteration: u64,
    pub rngs: TrainRngs,
}

impl TrainState {
    /// Fresh state with He-initialized student, teacher starting as a copy.
    pub fn new(config: &TrainConfig, net: &NetworkConfig) -> Result<TrainState> {
        config.validate()?;
        let mut rngs = TrainRngs::from_seed(config.seed);
        let student = init_params(&mut rngs.init, net)?;
        let teacher = student.clone();
        let optimizer = OptimizerState::new(
            &student,
            config.base_lr,
            config.iterations.max(1),
            config.momentum,
            config.weight_decay,
            config.poly_power,
        );
        Ok(TrainState {
            student,
            teacher,
            optimizer,
            iteration: 0,
            rngs,
        })
    }
}

/// Per-step metrics (losses are batch means; the unsupervised one is
/// lambda-weighted, i.e. the quantity actually optimized).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub sup_loss: f64,
    pub unsup_loss: f64,
    pub lambda_mean: f64,
}

/// Build the mixed sample for one unlabelled pair under the configured
/// strategy. For the rectangle and smoothed-noise masks the target is the
/// same mask-mix of teacher predictions, keeping the arms comparable.
pub fn build_mix<R: Rng>(
    a: &Image,
    b: &Image,
    teacher: &ModelParams,
    net: &NetworkConfig,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<MixOutput> {
    match config.mix_strategy {
        MixStrategy::ClassMix => classmix_augment(a, b, teacher, net, config.tau, rng),
        MixStrategy::CutMix | MixStrategy::CowMix => {
            let (h, w) = (a.shape()[0], a.shape()[1]);
            let mask = if config.mix_strategy == MixStrategy::CutMix {
                cutmix_mask(h, w, rng)?
            } else {
                cowmix_mask(h, w, config.cow_sigma, config.cow_p, rng)?
            };
            let (_, probs_a) = forward(teacher, net, a)?;
            let (_, probs_b) = forward(teacher, net, b)?;
            let mixed_image = mix(&mask, a, b)?;
            let soft_target = mix(&mask, &probs_a, &probs_b)?;
            let pseudo_target = pseudo_label(&soft_target);
            let lambda = lambda_weight(&soft_target, config.tau);
            Ok(MixOutput {
                mixed_image,
                soft_target,
                pseudo_target,
                lambda,
                mask,
            })
        }
        MixStrategy::None => Err(Error::invalid("build_mix", "no mixing strategy configured")),
    }
}

/// One optimization step over a batch. The teacher changes only through the
/// EMA update, after the student step.
pub fn train_step(
    state: &mut TrainState,
    batch: &Batch,
    config: &TrainConfig,
    net: &NetworkConfig,
) -> Result<StepMetrics> {
    let k = net.num_classes;
    let mut grads = state.student.zeros_like();

    let mut sup_loss = 0.0;
    let b_l = batch.labelled.len().max(1) as f64;
    for (img, seg) in &batch.labelled {
        let target = one_hot(seg, k);
        let (cache, _logits, probs) = forward_cached(&state.student, net, img)?;
        let (loss, dlogits) = loss_and_logit_grad(config.loss_kind, &probs, &target, None, 1.0 / b_l)?;
        sup_loss += loss / b_l;
        let g = backward(&state.student, net, &cache, &dlogits)?;
        grads.axpy(1.0, &g)?;
    }

    let mut unsup_loss = 0.0;
    let mut lambda_sum = 0.0;
    let b_u = batch.unlabelled_pairs.len().max(1) as f64;
    for (a, b) in &batch.unlabelled_pairs {
        let mix_out = build_mix(a, b, &state.teacher, net, config, &mut state.rngs.mask)?;
        let target = if config.use_pseudo_label {
            &mix_out.pseudo_target
        } else {
            &mix_out.soft_target
        };
        let (sample_weight, pixel_weights, logged_lambda) = match config.weight_scheme {
            WeightScheme::ConfidenceProportion => (mix_out.lambda, None, mix_out.lambda),
            WeightScheme::PixelwiseThreshold => {
                let w = pixelwise_threshold_weights(&mix_out.soft_target, config.tau);
                let confident = w.iter().filter(|&&v| v > 0.0).count() as f64 / w.len() as f64;
                (1.0, Some(w), confident)
            }
            WeightScheme::SigmoidRampup => {
                let l = sigmoid_rampup(state.iteration, config.ramp_length());
                (l, None, l)
            }
            WeightScheme::Constant => (config.constant_weight, None, config.constant_weight),
        };
        lambda_sum += logged_lambda;
        if sample_weight == 0.0 {
            continue;
        }
        let mixed_image = if config.extra_augment {
            apply_color_jitter_blur(&mix_out.mixed_image, &mut state.rngs.unlabelled_augment, config.jitter_strength)
        } else {
            mix_out.mixed_image
        };
        let (cache, _logits, probs) = forward_cached(&state.student, net, &mixed_image)?;
        let (loss, dlogits) = loss_and_logit_grad(
            config.loss_kind,
            &probs,
            target,
            pixel_weights.as_deref(),
            sample_weight / b_u,
        )?;
        unsup_loss += sample_weight * loss / b_u;
        let g = backward(&state.student, net, &cache, &dlogits)?;
        grads.axpy(1.0, &g)?;
    }

    let total = sup_loss + unsup_loss;
    if !total.is_finite() {
        return Err(Error::TrainingAborted {
            iteration: state.iteration,
            msg: format!(
                "non-finite loss (sup {sup_loss}, unsup {unsup_loss}); first bad parameter: {:?}",
                state.student.first_non_finite()
            ),
        });
    }

    sgd_nesterov_step(&mut state.student, &grads, &mut state.optimizer)?;
    ema_update(&mut state.teacher, &state.student, config.ema_alpha)?;
    state.iteration += 1;

    Ok(StepMetrics {
        sup_loss,
        unsup_loss,
        lambda_mean: if batch.unlabelled_pairs.is_empty() {
            0.0
        } else {
            lambda_sum / b_u
        },
    })
}

/// mIoU of `params` over a held-out set.
pub fn evaluate(params: &ModelParams, net: &NetworkConfig, eval_set: &[(Image, SegMap)]) -> Result<f64> {
    let mut matrix = ConfusionMatrix::new(net.num_classes);
    for (img, gt) in eval_set {
        let (_, probs) = forward(params, net, img)?;
        let pred = pixelwise_argmax(&probs);
        accumulate_confusion(&pred, gt, &mut matrix)?;
    }
    miou(&matrix)
}

/// One row of the metric time series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricPoint {
    pub iteration: u64,
    pub miou: f64,
    pub sup_loss: f64,
    pub unsup_loss: f64,
    pub lambda_mean: f64,
}

/// Everything one run produces.
#[derive(Debug, Clone)]
pub struct RunSeries {
    pub seed: u64,
    pub points: Vec<MetricPoint>,
    pub final_student: ModelParams,
    pub final_teacher: ModelParams,
}

impl RunSeries {
    pub fn final_miou(&self) -> f64 {
        self.points.last().map(|p| p.miou).unwrap_or(0.0)
    }

    pub fn best_miou(&self) -> f64 {
        self.points.iter().map(|p| p.miou).fold(0.0, f64::max)
    }
}

/// Train for `config.iterations` steps, evaluating on the held-out set every
/// `eval_interval` iterations (plus once before training and once at the
/// end). Deterministic given the seed.
pub fn run_experiment(config: &TrainConfig, net: &NetworkConfig, data: &ExperimentData) -> Result<RunSeries> {
    config.validate()?;
    net.validate()?;
    data.train.validate(net.num_classes)?;
    let mut state = TrainState::new(config, net)?;
    let mut points = Vec::new();

    fn eval_params<'s>(state: &'s TrainState, config: &TrainConfig) -> &'s ModelParams {
        if config.eval_teacher {
            &state.teacher
        } else {
            &state.student
        }
    }
    points.push(MetricPoint {
        iteration: 0,
        miou: evaluate(eval_params(&state, config), net, &data.eval)?,
        sup_loss: 0.0,
        unsup_loss: 0.0,
        lambda_mean: 0.0,
    });

    let mut window = (0.0, 0.0, 0.0, 0u64);
    for it in 0..config.iterations {
        let batch = make_batch(&data.train, config, &mut state.rngs)?;
        let m = train_step(&mut state, &batch, config, net)?;
        window.0 += m.sup_loss;
        window.1 += m.unsup_loss;
        window.2 += m.lambda_mean;
        window.3 += 1;
        let done = it + 1;
        if done % config.eval_interval == 0 || done == config.iterations {
            let n = window.3 as f64;
            points.push(MetricPoint {
                iteration: done,
                miou: evaluate(eval_params(&state, config), net, &data.eval)?,
                sup_loss: window.0 / n,
                unsup_loss: window.1 / n,
                lambda_mean: window.2 / n,
            });
            window = (0.0, 0.0, 0.0, 0);
        }
    }

    Ok(RunSeries {
        seed: config.seed,
        points,
        final_student: state.student,
        final_teacher: state.teacher,
    })
}
