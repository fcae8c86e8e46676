//! Loss, dropout, gradient clipping, Adadelta updates and the epoch loop.

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{HanGrads, HanModel, Mode};
use crate::numerics::Rng;

/// Whether dropout is active (training) or an identity map (evaluation).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// Optimizer and regime settings.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Adadelta decay rate.
    pub rho: f64,
    /// Adadelta epsilon.
    pub epsilon: f64,
    /// Dropout rate on layer-2 inputs and on the classifier input.
    pub dropout: f64,
    /// Global-norm gradient clipping ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Worker threads for batch forward/backward passes. Results are
    /// identical for any thread count: per-sample gradients are reduced in
    /// batch order.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rho: 0.95,
            epsilon: 1e-6,
            dropout: 0.5,
            clip_norm: Some(5.0),
            batch_size: 16,
            epochs: 1,
            seed: 42,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("rho must be in (0,1), got {}", self.rho)));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout rate must be in [0,1), got {}",
                self.dropout
            )));
        }
        if let Some(c) = self.clip_norm {
            if c <= 0.0 {
                return Err(Error::Config(format!("clip norm must be > 0, got {c}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".to_string()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// Negative log-likelihood of the labeled class.
pub fn nll_loss(probs: &[f64], label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: probs.len(),
        });
    }
    Ok(-probs[label].ln())
}

/// Gradient of the NLL with respect to the classifier logits: `p - onehot`.
pub fn nll_grad_logits(probs: &[f64], label: usize) -> Result<Vec<f64>> {
    if label >= probs.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: probs.len(),
        });
    }
    Ok(probs
        .iter()
        .enumerate()
        .map(|(i, &p)| if i == label { p - 1.0 } else { p })
        .collect())
}

/// Inverted dropout. In training mode each coordinate is zeroed with
/// probability `rate` and survivors are scaled by `1/(1-rate)`, so the
/// expected output equals the input and evaluation needs no rescaling.
/// Returns the output and the scale mask that the backward pass multiplies
/// by. Rate 0 and eval mode are identity maps and draw nothing from the RNG.
pub fn dropout_apply(
    v: &[f64],
    rate: f64,
    phase: Phase,
    rng: &mut Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!(
            "dropout rate must be in [0,1), got {rate}"
        )));
    }
    if phase == Phase::Eval || rate == 0.0 {
        return Ok((v.to_vec(), vec![1.0; v.len()]));
    }
    let scale = 1.0 / (1.0 - rate);
    let mut out = Vec::with_capacity(v.len());
    let mut mask = Vec::with_capacity(v.len());
    for &x in v {
        if rng.next_f64() < rate {
            out.push(0.0);
            mask.push(0.0);
        } else {
            out.push(x * scale);
            mask.push(scale);
        }
    }
    Ok((out, mask))
}

/// Scales the whole gradient set so its global L2 norm does not exceed
/// `ceiling`; leaves it unchanged otherwise. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut HanGrads, ceiling: f64) -> Result<f64> {
    if ceiling <= 0.0 {
        return Err(Error::Config(format!("clip ceiling must be > 0, got {ceiling}")));
    }
    let mut sum_sq = 0.0;
    let mut bad: Option<String> = None;
    grads.visit(&mut |name, data| {
        if bad.is_none() {
            for &v in data {
                if !v.is_finite() {
                    bad = Some(name.clone());
                    return;
                }
                sum_sq += v * v;
            }
        }
    });
    if let Some(tensor) = bad {
        return Err(Error::NonFinite { tensor });
    }
    let norm = sum_sq.sqrt();
    if norm > ceiling {
        grads.scale(ceiling / norm);
    }
    Ok(norm)
}

/// Decaying accumulators of squared gradients and squared updates, one pair
/// of values per parameter, in the model's flat layout order.
#[derive(Debug, Clone)]
pub struct AdadeltaState {
    pub eg2: Vec<f64>,
    pub edx2: Vec<f64>,
}

impl AdadeltaState {
    pub fn new(param_count: usize) -> Self {
        AdadeltaState {
            eg2: vec![0.0; param_count],
            edx2: vec![0.0; param_count],
        }
    }
}

/// One Adadelta update, elementwise over the flat parameter vector:
///
/// ```text
/// E[g^2]  <- rho E[g^2]  + (1-rho) g^2
/// dx       = -sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g
/// E[dx^2] <- rho E[dx^2] + (1-rho) dx^2
/// x       <- x + dx
/// ```
pub fn adadelta_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdadeltaState,
    rho: f64,
    epsilon: f64,
) -> Result<()> {
    if grads.len() != params.len()
        || state.eg2.len() != params.len()
        || state.edx2.len() != params.len()
    {
        return Err(Error::Dimension {
            op: "adadelta_step",
            expected: format!("{} parameters", params.len()),
            got: format!(
                "{} gradients, state of {}/{}",
                grads.len(),
                state.eg2.len(),
                state.edx2.len()
            ),
        });
    }
    for j in 0..params.len() {
        let g = grads[j];
        state.eg2[j] = rho * state.eg2[j] + (1.0 - rho) * g * g;
        let dx = -((state.edx2[j] + epsilon).sqrt() / (state.eg2[j] + epsilon).sqrt()) * g;
        state.edx2[j] = rho * state.edx2[j] + (1.0 - rho) * dx * dx;
        params[j] += dx;
    }
    Ok(())
}

/// Per-epoch training metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
    pub eval_accuracy: Option<f64>,
}

/// Accuracy of eval-mode predictions over a sample set, with per-class
/// counts.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub accuracy: f64,
    /// (samples, correct) per class index.
    pub per_class: Vec<(usize, usize)>,
}

/// Runs eval-mode forward passes and scores argmax predictions.
pub fn evaluate(model: &HanModel, samples: &[Sample]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Config("evaluation set is empty".to_string()));
    }
    let classes = model.config().classes;
    let mut per_class = vec![(0usize, 0usize); classes];
    let mut correct = 0;
    for s in samples {
        if s.label >= classes {
            return Err(Error::LabelOutOfRange {
                label: s.label,
                classes,
            });
        }
        let out = model.forward(&s.cubes_p, &s.cubes_q, Mode::Eval)?;
        let pred = argmax(&out.probs);
        per_class[s.label].0 += 1;
        if pred == s.label {
            per_class[s.label].1 += 1;
            correct += 1;
        }
    }
    Ok(EvalReport {
        accuracy: correct as f64 / samples.len() as f64,
        per_class,
    })
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Owns one training run: shuffling, mini-batching, the
/// forward/backward/clip/update cycle, and per-epoch metrics.
///
/// The trainer holds the model exclusively. Batch passes may run on worker
/// threads; per-sample gradients are always reduced in batch order, so the
/// result is bitwise independent of the thread count.
pub struct Trainer<'a> {
    model: &'a mut HanModel,
    train_set: &'a [Sample],
    eval_set: Option<&'a [Sample]>,
    config: TrainConfig,
    opt_state: AdadeltaState,
    shuffle_rng: Rng,
    next_epoch: usize,
}

// Derivation tags for the independent RNG streams of one seed.
const STREAM_SHUFFLE: u64 = 1;
const STREAM_DROPOUT: u64 = 2;

impl<'a> Trainer<'a> {
    pub fn new(
        model: &'a mut HanModel,
        train_set: &'a [Sample],
        eval_set: Option<&'a [Sample]>,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        if train_set.is_empty() {
            return Err(Error::Config("training set is empty".to_string()));
        }
        let classes = model.config().classes;
        for s in train_set {
            if s.label >= classes {
                return Err(Error::LabelOutOfRange {
                    label: s.label,
                    classes,
                });
            }
        }
        let opt_state = AdadeltaState::new(model.param_count());
        let shuffle_rng = Rng::derive(config.seed, &[STREAM_SHUFFLE]);
        Ok(Trainer {
            model,
            train_set,
            eval_set,
            config,
            opt_state,
            shuffle_rng,
            next_epoch: 0,
        })
    }

    pub fn model(&self) -> &HanModel {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// One pass over the training set. Returns the epoch's metrics.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let epoch = self.next_epoch;
        self.next_epoch += 1;

        let mut order: Vec<usize> = (0..self.train_set.len()).collect();
        self.shuffle_rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch_index, batch) in order.chunks(self.config.batch_size).enumerate() {
            let results = self.run_batch(epoch, batch_index, batch)?;

            let mut total = HanGrads::zeros(self.model.config());
            for (loss, is_correct, grads) in &results {
                loss_sum += loss;
                correct += usize::from(*is_correct);
                total.accumulate(grads);
            }
            total.scale(1.0 / batch.len() as f64);

            if let Some(ceiling) = self.config.clip_norm {
                clip_global_norm(&mut total, ceiling).map_err(|e| {
                    numeric_context(e, epoch, batch_index)
                })?;
            }

            let mut flat = self.model.flatten();
            adadelta_step(
                &mut flat,
                &total.flatten(),
                &mut self.opt_state,
                self.config.rho,
                self.config.epsilon,
            )?;
            self.model.set_from_flat(&flat)?;
        }

        let mean_loss = loss_sum / self.train_set.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::NumericFailure(format!(
                "non-finite mean loss {mean_loss} at epoch {epoch}"
            )));
        }

        let eval_accuracy = match self.eval_set {
            Some(set) => Some(evaluate(self.model, set)?.accuracy),
            None => None,
        };

        Ok(EpochMetrics {
            epoch,
            mean_loss,
            train_accuracy: correct as f64 / self.train_set.len() as f64,
            eval_accuracy,
        })
    }

    /// Forward/backward for every sample of one batch, in batch order.
    fn run_batch(
        &self,
        epoch: usize,
        batch_index: usize,
        batch: &[usize],
    ) -> Result<Vec<(f64, bool, HanGrads)>> {
        let process = |dataset_index: usize| -> Result<(f64, bool, HanGrads)> {
            let sample = &self.train_set[dataset_index];
            let mut rng = Rng::derive(
                self.config.seed,
                &[STREAM_DROPOUT, epoch as u64, dataset_index as u64],
            );
            let out = self.model.forward(
                &sample.cubes_p,
                &sample.cubes_q,
                Mode::Train {
                    dropout: self.config.dropout,
                    rng: &mut rng,
                },
            )?;
            let loss = nll_loss(&out.probs, sample.label)?;
            if !loss.is_finite() {
                return Err(Error::NumericFailure(format!(
                    "non-finite loss for sample {}",
                    sample.id
                )));
            }
            let grad_logits = nll_grad_logits(&out.probs, sample.label)?;
            let grads = self.model.backward(&out.trace, &grad_logits)?;
            Ok((loss, argmax(&out.probs) == sample.label, grads))
        };

        let results: Vec<Result<(f64, bool, HanGrads)>> = if self.config.threads <= 1
            || batch.len() <= 1
        {
            batch.iter().map(|&ix| process(ix)).collect()
        } else {
            let chunk = batch.len().div_ceil(self.config.threads);
            let process = &process;
            std::thread::scope(|scope| {
                let handles: Vec<_> = batch
                    .chunks(chunk)
                    .map(|part| {
                        scope.spawn(move || {
                            part.iter().map(|&ix| process(ix)).collect::<Vec<_>>()
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .flat_map(|handle| handle.join().expect("training worker panicked"))
                    .collect()
            })
        };

        results
            .into_iter()
            .collect::<Result<Vec<_>>>()
            .map_err(|e| numeric_context(e, epoch, batch_index))
    }
}

/// Attaches epoch/batch context to numeric failures so the abort names the
/// batch that diverged.
fn numeric_context(e: Error, epoch: usize, batch_index: usize) -> Error {
    match e {
        Error::NonFinite { tensor } => Error::NumericFailure(format!(
            "epoch {epoch} batch {batch_index}: non-finite value in {tensor}"
        )),
        Error::NumericFailure(msg) => Error::NumericFailure(format!(
            "epoch {epoch} batch {batch_index}: {msg}"
        )),
        other => other,
    }
}

/// Convenience wrapper: runs `config.epochs` epochs and collects metrics.
pub fn train_epochs(
    model: &mut HanModel,
    train_set: &[Sample],
    eval_set: Option<&[Sample]>,
    config: &TrainConfig,
) -> Result<Vec<EpochMetrics>> {
    let mut trainer = Trainer::new(model, train_set, eval_set, config.clone())?;
    (0..config.epochs).map(|_| trainer.run_epoch()).collect()
}
