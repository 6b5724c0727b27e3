use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::lm::{lm_step, LmConfig, LmState, NetworkFit};
use crate::error::{Error, Result};
use crate::nn::{loss, loss_gradient, LayerSpec, LossKind, Mode, Network};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Adam {
        #[serde(flatten)]
        config: AdamConfig,
        batch_size: usize,
    },
    Lm(LmConfig),
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            config: AdamConfig::default(),
            batch_size: 32,
        }
    }

    pub fn lm() -> Self {
        Optimizer::Lm(LmConfig::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopCriterion {
    pub max_epochs: usize,
    /// Stop once the epoch's training error is at or below this value.
    pub target_error: f64,
    /// Stop after this many epochs without a new best validation error.
    #[serde(default)]
    pub patience: Option<usize>,
}

impl StopCriterion {
    pub fn epochs(max_epochs: usize) -> Self {
        StopCriterion {
            max_epochs,
            target_error: 0.0,
            patience: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::Config("max epochs must be at least 1".into()));
        }
        if !(self.target_error >= 0.0) {
            return Err(Error::Config(format!(
                "target error must be non-negative, got {}",
                self.target_error
            )));
        }
        if self.patience == Some(0) {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub loss: LossKind,
    pub stop: StopCriterion,
    /// Coefficient of the additive `λ·|W|²` penalty on conv/dense weights.
    #[serde(default)]
    pub l2: f64,
    #[serde(default)]
    pub batch_norm: BatchNormStats,
}

/// Where inference-time batch norm statistics come from after Adam epochs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchNormStats {
    /// Exponential moving average of minibatch statistics only.
    Moving,
    /// Recomputed over the whole training set whenever the network is
    /// evaluated or returned.
    #[default]
    Population,
}

impl TrainConfig {
    pub fn new(optimizer: Optimizer, loss: LossKind, stop: StopCriterion) -> Self {
        TrainConfig {
            optimizer,
            loss,
            stop,
            l2: 0.0,
            batch_norm: BatchNormStats::default(),
        }
    }
}

/// Inputs and targets, one row per sample.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub inputs: &'a Tensor,
    pub targets: &'a Tensor,
}

impl<'a> Batch<'a> {
    pub fn new(inputs: &'a Tensor, targets: &'a Tensor) -> Result<Self> {
        if inputs.batch_size() != targets.batch_size() {
            return Err(Error::Shape(format!(
                "{} input rows vs {} target rows",
                inputs.batch_size(),
                targets.batch_size()
            )));
        }
        Ok(Batch { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.batch_size()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_error: f64,
    pub validation_error: Option<f64>,
    /// Damping μ after the epoch for LM, learning rate α for Adam.
    pub step_size: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were returned.
    pub selected_epoch: usize,
    pub reached_target: bool,
}

impl History {
    pub fn final_train_error(&self) -> f64 {
        self.epochs.last().map(|e| e.train_error).unwrap_or(f64::NAN)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_error,validation_error,step_size\n");
        for e in &self.epochs {
            let v = e.validation_error.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_error, v, e.step_size));
        }
        s
    }
}

/// Index of the first minimum.
pub fn select_best_epoch(errors: &[f64]) -> Option<usize> {
    errors
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &e)| match best {
            Some((_, b)) if b <= e => best,
            _ => Some((i, e)),
        })
        .map(|(i, _)| i)
}

pub fn gather_rows(t: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let w = t.row_len();
    let mut values = Vec::with_capacity(idx.len() * w);
    for &i in idx {
        values.extend_from_slice(t.row(i));
    }
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    Tensor::new(shape, values)
}

fn l2_penalty(params: &[f64], mask: &[bool], l2: f64) -> f64 {
    if l2 == 0.0 {
        return 0.0;
    }
    l2 * params
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(w, _)| w * w)
        .sum::<f64>()
}

/// Train `network` until the stop criterion fires.
///
/// With a validation set the weights from the epoch of minimal validation
/// error are returned; otherwise the final epoch's.
pub fn train(
    mut network: Network,
    data: Batch<'_>,
    validation: Option<Batch<'_>>,
    config: &TrainConfig,
    seed: u64,
) -> Result<(Network, History)> {
    config.stop.validate()?;
    if data.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if config.stop.patience.is_some() && validation.is_none() {
        return Err(Error::Config("validation patience needs a validation set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut history = History::default();
    let mut best: Option<(f64, Network, usize)> = None;

    let mut adam = match config.optimizer {
        Optimizer::Adam { config: c, .. } => Some(AdamState::new(network.param_count(), c)),
        Optimizer::Lm(_) => None,
    };
    let mut lm = match config.optimizer {
        Optimizer::Lm(c) => {
            if config.loss != LossKind::Mse {
                return Err(Error::Config("Levenberg-Marquardt minimizes squared error only".into()));
            }
            Some(LmState::new(c)?)
        }
        Optimizer::Adam { .. } => None,
    };
    let mask = network.weight_mask();
    let has_bn = network.architecture().layers.contains(&LayerSpec::BatchNorm);

    for epoch in 1..=config.stop.max_epochs {
        let (train_error, step_size) = match config.optimizer {
            Optimizer::Adam { batch_size, .. } => {
                let state = adam.as_mut().unwrap();
                let err = adam_epoch(&mut network, data, config, batch_size, &mask, state, &mut rng)?;
                // Only worth the extra passes when the weights are about to be
                // evaluated or could be returned.
                let could_stop =
                    validation.is_some() || epoch == config.stop.max_epochs || err <= config.stop.target_error;
                if config.batch_norm == BatchNormStats::Population && has_bn && could_stop {
                    network.set_population_stats(data.inputs)?;
                }
                (err, state.config.learning_rate)
            }
            Optimizer::Lm(_) => {
                let state = lm.as_mut().unwrap();
                let fit = NetworkFit::new(&network, data.inputs, data.targets.values())?;
                let mut params = network.trainable().to_vec();
                let step = lm_step(&fit, &mut params, state)?;
                network.set_trainable(&params)?;
                (step.sse / data.targets.len() as f64, state.damping)
            }
        };
        if !train_error.is_finite() {
            return Err(Error::Training(format!("training error diverged at epoch {epoch}")));
        }
        let validation_error = match validation {
            Some(v) => Some(loss(config.loss, &network.predict(v.inputs)?, v.targets)?),
            None => None,
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_error,
            validation_error,
            step_size,
        });

        if let Some(ve) = validation_error {
            if best.as_ref().is_none_or(|(b, _, _)| ve < *b) {
                best = Some((ve, network.clone(), epoch));
            }
            if let (Some(p), Some((_, _, be))) = (config.stop.patience, &best) {
                if epoch - be >= p {
                    break;
                }
            }
        }
        if train_error <= config.stop.target_error {
            history.reached_target = true;
            break;
        }
    }

    match best {
        Some((_, net, epoch)) => {
            history.selected_epoch = epoch;
            Ok((net, history))
        }
        None => {
            history.selected_epoch = history.epochs.len();
            Ok((network, history))
        }
    }
}

fn adam_epoch(
    network: &mut Network,
    data: Batch<'_>,
    config: &TrainConfig,
    batch_size: usize,
    mask: &[bool],
    state: &mut AdamState,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let n = data.len();
    let bs = batch_size.clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for chunk in order.chunks(bs) {
        let x = gather_rows(data.inputs, chunk)?;
        let t = gather_rows(data.targets, chunk)?;
        let (y, cache) = network.forward(&x, Mode::Train { seed: rng.next_u64() })?;
        let batch_loss = loss(config.loss, &y, &t)?;
        let g = loss_gradient(config.loss, &y, &t)?;
        network.commit_batch_stats(&cache);
        let mut grads = network.backward(cache, &g)?.params;
        if config.l2 != 0.0 {
            for ((gv, &w), &m) in grads.iter_mut().zip(network.trainable()).zip(mask) {
                if m {
                    *gv += 2.0 * config.l2 * w;
                }
            }
        }
        let mut params = network.trainable().to_vec();
        adam_step(&mut params, &grads, state)?;
        network.set_trainable(&params)?;
        total += batch_loss * chunk.len() as f64;
    }
    Ok(total / n as f64)
}

/// Regularized objective value, for callers that need to report it.
pub fn regularized_loss(network: &Network, batch: Batch<'_>, kind: LossKind, l2: f64) -> Result<f64> {
    let data = loss(kind, &network.predict(batch.inputs)?, batch.targets)?;
    Ok(data + l2_penalty(network.trainable(), &network.weight_mask(), l2))
}
