//! Alternating fine-tuning with the verification loss, and identification
//! (softmax) pre-training.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::fcn::{fcn_backward, fcn_forward, fcn_forward_traced, FcnConfig, FcnParams};
use super::loss::{loss_gradients, residual_energy, PairLabel};
use crate::error::{DsrError, Result};
use crate::feature_maps::{multiscale_blocks, scatter_block_gradients, FeatureMap};
use crate::scalar::Scalar;
use crate::sparse_solver::{solve_batch, SolverOptions};

/// Two network inputs and whether they show the same identity.
#[derive(Debug, Clone)]
pub struct VerificationPair<T> {
    pub probe: FeatureMap<T>,
    pub gallery: FeatureMap<T>,
    pub label: PairLabel,
}

#[derive(Debug, Clone)]
pub struct FineTuneOptions<T> {
    pub beta: T,
    /// Impostor pairs stop pushing once their mean block residual reaches
    /// this value; `None` means twice the output channel count.
    pub margin: Option<T>,
    pub scales: Vec<usize>,
    pub solver: SolverOptions<T>,
    /// Pairs per parameter update in [`fine_tune`].
    pub batch_size: usize,
}

impl<T: Scalar> Default for FineTuneOptions<T> {
    fn default() -> Self {
        Self {
            beta: T::of(crate::sparse_solver::DEFAULT_BETA),
            margin: None,
            scales: vec![1],
            solver: SolverOptions::default(),
            batch_size: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub params: FcnParams<T>,
    pub learning_rate: T,
    pub step: usize,
    pub loss_history: Vec<T>,
    /// Steps whose sparse codes did not reach the KKT tolerance.
    pub solver_warnings: usize,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(params: FcnParams<T>, learning_rate: T) -> Self {
        Self {
            params,
            learning_rate,
            step: 0,
            loss_history: Vec::new(),
            solver_warnings: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepReport<T> {
    pub loss: T,
    /// Mean block residual of the pair before the update.
    pub distance: T,
    /// Impostor pair already beyond the margin; no residual gradient applied.
    pub clipped: bool,
    pub converged: bool,
}

fn pair_gradient<T: Scalar>(
    config: &FcnConfig,
    params: &FcnParams<T>,
    pair: &VerificationPair<T>,
    opts: &FineTuneOptions<T>,
    want_gradient: bool,
) -> Result<(StepReport<T>, Option<FcnParams<T>>)> {
    let (xmap, xtrace) = fcn_forward_traced(config, params, &pair.probe)?;
    let (ymap, ytrace) = fcn_forward_traced(config, params, &pair.gallery)?;
    let xb = multiscale_blocks(&xmap, &opts.scales)?;
    let yb = multiscale_blocks(&ymap, &opts.scales)?;

    let codes = solve_batch(&yb, &xb, opts.beta, &opts.solver)?;
    let converged = codes.all_converged();

    let energy = residual_energy(&xb, &yb, &codes)?;
    let n = T::of(xb.len() as f64);
    let distance = energy / n;
    let margin = opts
        .margin
        .unwrap_or_else(|| T::of(2.0 * config.output_channels() as f64));
    let clipped = pair.label == PairLabel::Impostor && distance >= margin;
    let penalty = opts.beta * codes.l1();
    let loss = if clipped {
        -margin * n + penalty
    } else {
        pair.label.sign::<T>() * energy + penalty
    };
    let report = StepReport {
        loss,
        distance,
        clipped,
        converged,
    };
    if clipped || !want_gradient {
        return Ok((report, None));
    }
    let (dx, dy) = loss_gradients(&xb, &yb, &codes, pair.label)?;
    let gx = scatter_block_gradients(xmap.width(), xmap.height(), &xb, &dx)?;
    let gy = scatter_block_gradients(ymap.width(), ymap.height(), &yb, &dy)?;
    let (mut grads, _) = fcn_backward(config, params, &xtrace, &gx)?;
    let (grads_y, _) = fcn_backward(config, params, &ytrace, &gy)?;
    grads.add_scaled(&grads_y, T::one());
    Ok((report, Some(grads)))
}

/// One round of alternating optimization on a single pair:
/// codes `W` are solved with the network fixed, then the network takes one
/// SGD step with `W` fixed.
pub fn alternating_train_step<T: Scalar>(
    config: &FcnConfig,
    pair: &VerificationPair<T>,
    state: &mut TrainState<T>,
    opts: &FineTuneOptions<T>,
) -> Result<StepReport<T>> {
    alternating_train_batch(config, &[pair], state, opts)
}

/// Like [`alternating_train_step`] but averages the parameter gradient over
/// several pairs before the update. The recorded loss is the batch mean.
pub fn alternating_train_batch<T: Scalar>(
    config: &FcnConfig,
    pairs: &[&VerificationPair<T>],
    state: &mut TrainState<T>,
    opts: &FineTuneOptions<T>,
) -> Result<StepReport<T>> {
    if pairs.is_empty() {
        return Err(DsrError::EmptyInput("training pairs"));
    }
    let want = state.learning_rate != T::zero();
    let mut total = FcnParams::zeros(config);
    let (mut loss, mut distance) = (T::zero(), T::zero());
    let (mut clipped, mut converged) = (true, true);
    for pair in pairs {
        let (r, g) = pair_gradient(config, &state.params, pair, opts, want)?;
        loss += r.loss;
        distance += r.distance;
        clipped &= r.clipped;
        converged &= r.converged;
        if let Some(g) = g {
            total.add_scaled(&g, T::one());
        }
    }
    let k = T::of(pairs.len() as f64);
    let (loss, distance) = (loss / k, distance / k);
    if !loss.is_finite() {
        return Err(DsrError::Numeric(format!(
            "loss became {loss} at step {}",
            state.step
        )));
    }
    if !converged {
        state.solver_warnings += 1;
        log::warn!("step {}: sparse codes did not converge", state.step);
    }
    if want {
        state.params.add_scaled(&total, -state.learning_rate / k);
        if !state.params.is_finite() {
            return Err(DsrError::Numeric(format!(
                "parameters diverged at step {}",
                state.step
            )));
        }
    }
    state.step += 1;
    state.loss_history.push(loss);
    Ok(StepReport {
        loss,
        distance,
        clipped,
        converged,
    })
}

/// Runs `epochs` passes over `pairs`, shuffled per epoch with `seed`, in
/// updates of `opts.batch_size` pairs.
pub fn fine_tune<T: Scalar>(
    config: &FcnConfig,
    pairs: &[VerificationPair<T>],
    state: &mut TrainState<T>,
    epochs: usize,
    seed: u64,
    opts: &FineTuneOptions<T>,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(opts.batch_size.max(1)) {
            let batch: Vec<&VerificationPair<T>> = chunk.iter().map(|&i| &pairs[i]).collect();
            alternating_train_batch(config, &batch, state, opts)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct LabeledImage<T> {
    pub image: FeatureMap<T>,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct PretrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 0.05,
            batch_size: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainReport {
    /// Mean cross-entropy of each epoch, measured before each batch's update.
    pub epoch_loss: Vec<f64>,
    pub train_accuracy: f64,
}

/// Linear softmax head over the flattened last feature map.
struct SoftmaxHead<T> {
    classes: usize,
    features: usize,
    weight: Vec<T>,
    bias: Vec<T>,
}

impl<T: Scalar> SoftmaxHead<T> {
    fn probabilities(&self, f: &[T]) -> Vec<T> {
        let logits: Vec<T> = (0..self.classes)
            .map(|k| {
                crate::scalar::dot(&self.weight[k * self.features..(k + 1) * self.features], f)
                    + self.bias[k]
            })
            .collect();
        let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
        let z: T = exps.iter().copied().sum();
        exps.into_iter().map(|e| e / z).collect()
    }
}

/// Trains the convolution stack with an identification signal:
/// flatten, linear layer, softmax cross-entropy. The head starts at zero
/// and is discarded afterwards; only the convolution parameters are returned.
pub fn pretrain_identification<T: Scalar>(
    config: &FcnConfig,
    init: FcnParams<T>,
    data: &[LabeledImage<T>],
    opts: &PretrainOptions,
) -> Result<(FcnParams<T>, PretrainReport)> {
    let first = data
        .first()
        .ok_or(DsrError::EmptyInput("training images"))?;
    let (w, h) = (first.image.width(), first.image.height());
    if let Some(bad) = data
        .iter()
        .find(|d| d.image.width() != w || d.image.height() != h)
    {
        return Err(DsrError::Config(format!(
            "pre-training needs one image size; got {w}x{h} and {}x{}",
            bad.image.width(),
            bad.image.height()
        )));
    }
    let classes = data.iter().map(|d| d.label).max().unwrap_or(0) + 1;
    let distinct: std::collections::BTreeSet<usize> = data.iter().map(|d| d.label).collect();
    if distinct.len() < 2 {
        return Err(DsrError::Config(
            "pre-training needs at least two classes".into(),
        ));
    }
    let (ow, oh) = config
        .output_size(w, h)
        .ok_or_else(|| DsrError::OutOfRange(format!("{w}x{h} input too small for the network")))?;
    let features = ow * oh * config.output_channels();
    let mut head = SoftmaxHead {
        classes,
        features,
        weight: vec![T::zero(); classes * features],
        bias: vec![T::zero(); classes],
    };
    let mut params = init;
    let lr = T::of(opts.learning_rate);
    let batch = opts.batch_size.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_loss = Vec::with_capacity(opts.epochs);

    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let mut grads = FcnParams::zeros(config);
            let mut gw = vec![T::zero(); head.weight.len()];
            let mut gb = vec![T::zero(); classes];
            for &i in chunk {
                let sample = &data[i];
                let (fmap, trace) = fcn_forward_traced(config, &params, &sample.image)?;
                let f = fmap.data();
                let p = head.probabilities(f);
                total += -p[sample.label].as_f64().max(f64::MIN_POSITIVE).ln();

                let mut gf = vec![T::zero(); features];
                for k in 0..classes {
                    let g = p[k]
                        - if k == sample.label {
                            T::one()
                        } else {
                            T::zero()
                        };
                    gb[k] += g;
                    let row = k * features;
                    for j in 0..features {
                        gw[row + j] += g * f[j];
                        gf[j] += g * head.weight[row + j];
                    }
                }
                let gmap = FeatureMap::new(fmap.width(), fmap.height(), fmap.channels(), gf)?;
                let (g, _) = fcn_backward(config, &params, &trace, &gmap)?;
                grads.add_scaled(&g, T::one());
            }
            let step = -lr / T::of(chunk.len() as f64);
            params.add_scaled(&grads, step);
            for (x, g) in head.weight.iter_mut().zip(&gw) {
                *x += step * *g;
            }
            for (x, g) in head.bias.iter_mut().zip(&gb) {
                *x += step * *g;
            }
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() || !params.is_finite() {
            return Err(DsrError::Numeric("pre-training diverged".into()));
        }
        epoch_loss.push(mean);
    }

    let mut correct = 0;
    for sample in data {
        let f = fcn_forward(config, &params, &sample.image)?;
        let p = head.probabilities(f.data());
        let best = (0..classes)
            .max_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap())
            .unwrap_or(0);
        correct += usize::from(best == sample.label);
    }
    Ok((
        params,
        PretrainReport {
            epoch_loss,
            train_accuracy: correct as f64 / data.len() as f64,
        },
    ))
}
