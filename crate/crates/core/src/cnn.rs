//! Stage-1 bank of convolutional classifiers and its softmax feature output.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{one_hot, Architecture, LayerSpec, LossKind, Network, SampleShape};
use crate::optim::{train, Batch, History, Optimizer, StopCriterion, TrainConfig};
use crate::seed::derive_seed;
use crate::signal::FINGERPRINT_LEN;
use crate::tensor::Tensor;

pub const INNER_BLOCKS: usize = 4;

/// Four conv → batchnorm → relu → maxpool blocks, then
/// dropout → dense → dense(classes) → softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnArch {
    /// Total input values per sample (channels × length).
    pub input_len: usize,
    /// 1 reads the fingerprint as one long signal; 6 as one channel per block.
    pub channels: usize,
    pub filters: Vec<usize>,
    pub kernel: usize,
    /// Stride of the first convolution; later ones use stride 1.
    pub input_stride: usize,
    pub pool: usize,
    pub dropout: f64,
    pub dense: usize,
    pub classes: usize,
}

impl Default for CnnArch {
    fn default() -> Self {
        CnnArch {
            input_len: FINGERPRINT_LEN,
            channels: 1,
            filters: vec![8, 16, 32, 64],
            kernel: 7,
            input_stride: 1,
            pool: 4,
            dropout: 0.5,
            dense: 64,
            classes: 17,
        }
    }
}

impl CnnArch {
    pub fn with_classes(classes: usize) -> Self {
        CnnArch {
            classes,
            ..CnnArch::default()
        }
    }

    pub fn input_shape(&self) -> SampleShape {
        SampleShape::Signal {
            channels: self.channels,
            length: self.input_len / self.channels.max(1),
        }
    }

    /// Length of each block's output after pooling, checked block by block.
    pub fn block_lengths(&self) -> Result<Vec<usize>> {
        if self.filters.len() != INNER_BLOCKS {
            return Err(Error::Config(format!(
                "CNN needs exactly {INNER_BLOCKS} inner blocks, got {}",
                self.filters.len()
            )));
        }
        if self.channels == 0 || !self.input_len.is_multiple_of(self.channels) {
            return Err(Error::Config(format!(
                "input length {} is not divisible into {} channels",
                self.input_len, self.channels
            )));
        }
        if self.kernel == 0 || self.pool == 0 || self.input_stride == 0 || self.filters.contains(&0) {
            return Err(Error::Config(
                "kernel, pool, stride and filter counts must be >= 1".into(),
            ));
        }
        if self.classes < 2 || self.dense == 0 {
            return Err(Error::Config(format!(
                "need >= 2 classes and a nonempty dense layer (classes {}, dense {})",
                self.classes, self.dense
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        let mut len = self.input_len / self.channels;
        let mut out = Vec::with_capacity(INNER_BLOCKS);
        for b in 0..INNER_BLOCKS {
            let stride = if b == 0 { self.input_stride } else { 1 };
            if len < self.kernel {
                return Err(Error::Shape(format!(
                    "inner block {b}: length {len} is shorter than kernel {}",
                    self.kernel
                )));
            }
            let conv = (len - self.kernel) / stride + 1;
            len = conv / self.pool;
            if len < 1 {
                return Err(Error::Shape(format!(
                    "inner block {b}: pooling width {} reduces length {conv} below 1",
                    self.pool
                )));
            }
            out.push(len);
        }
        Ok(out)
    }

    /// Flattened feature length entering the outer block.
    pub fn pre_dense_len(&self) -> Result<usize> {
        Ok(self.block_lengths()?[INNER_BLOCKS - 1] * self.filters[INNER_BLOCKS - 1])
    }

    pub fn architecture(&self) -> Result<Architecture> {
        self.block_lengths()?;
        let mut layers = Vec::with_capacity(4 * INNER_BLOCKS + 4);
        for (b, &f) in self.filters.iter().enumerate() {
            layers.push(LayerSpec::Conv1d {
                filters: f,
                kernel: self.kernel,
                stride: if b == 0 { self.input_stride } else { 1 },
                padding: 0,
            });
            layers.push(LayerSpec::BatchNorm);
            layers.push(LayerSpec::Relu);
            layers.push(LayerSpec::MaxPool1d { width: self.pool });
        }
        layers.push(LayerSpec::Dropout { p: self.dropout });
        layers.push(LayerSpec::dense(self.dense));
        layers.push(LayerSpec::dense(self.classes));
        layers.push(LayerSpec::Softmax);
        Ok(Architecture::new(self.input_shape(), layers))
    }

    /// View `[n, input_len]` rows as this architecture's `[n, channels, length]` input.
    pub fn shape_inputs(&self, flat: Tensor) -> Result<Tensor> {
        if flat.row_len() != self.input_len {
            return Err(Error::Shape(format!(
                "fingerprint length {} does not match CNN input {}",
                flat.row_len(),
                self.input_len
            )));
        }
        let n = flat.batch_size();
        flat.reshape(vec![n, self.channels, self.input_len / self.channels])
    }
}

pub fn build_cnn(arch: &CnnArch, seed: u64) -> Result<Network> {
    Network::new(arch.architecture()?, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankConfig {
    pub arch: CnnArch,
    pub members: usize,
    pub epochs: usize,
    pub optimizer: Optimizer,
}

impl Default for BankConfig {
    fn default() -> Self {
        BankConfig {
            arch: CnnArch::default(),
            members: 12,
            epochs: 3,
            optimizer: Optimizer::adam(),
        }
    }
}

impl BankConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig::new(
            self.optimizer,
            LossKind::CrossEntropy,
            StopCriterion::epochs(self.epochs),
        )
    }
}

/// `members` distinct seeds derived from `base`.
pub fn bank_seeds(base: u64, members: usize) -> Vec<u64> {
    (0..members as u64).map(|k| derive_seed(base, &[k])).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnBank {
    pub arch: CnnArch,
    pub seeds: Vec<u64>,
    pub members: Vec<Network>,
    pub histories: Vec<History>,
}

impl CnnBank {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    pub fn feature_len(&self) -> usize {
        self.members.len() * self.arch.classes
    }
}

/// Train one CNN classifier. Initialization and shuffling both follow `seed`.
pub fn train_cnn(
    arch: &CnnArch,
    config: &TrainConfig,
    inputs: &Tensor,
    labels: &[usize],
    validation: Option<(&Tensor, &[usize])>,
    seed: u64,
) -> Result<(Network, History)> {
    let net = build_cnn(arch, derive_seed(seed, &[0]))?;
    let x = arch.shape_inputs(inputs.clone())?;
    let y = one_hot(labels, arch.classes)?;
    let val = match validation {
        Some((vx, vl)) => Some((arch.shape_inputs(vx.clone())?, one_hot(vl, arch.classes)?)),
        None => None,
    };
    let val_batch = match &val {
        Some((vx, vy)) => Some(Batch::new(vx, vy)?),
        None => None,
    };
    train(net, Batch::new(&x, &y)?, val_batch, config, derive_seed(seed, &[1]))
}

/// Train each member independently on all of `inputs`; members run in parallel
/// and are collected in seed order.
pub fn train_bank(config: &BankConfig, inputs: &Tensor, labels: &[usize], seeds: &[u64]) -> Result<CnnBank> {
    if seeds.len() != config.members || config.members == 0 {
        return Err(Error::Config(format!(
            "bank of {} members got {} seeds",
            config.members,
            seeds.len()
        )));
    }
    if seeds.iter().collect::<HashSet<_>>().len() != seeds.len() {
        return Err(Error::Config("bank member seeds must be pairwise distinct".into()));
    }
    if labels.len() != inputs.batch_size() {
        return Err(Error::Data(format!(
            "{} labels for {} samples",
            labels.len(),
            inputs.batch_size()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= config.arch.classes) {
        return Err(Error::Data(format!(
            "label {l} out of range for {} classes",
            config.arch.classes
        )));
    }
    let tc = config.train_config();
    let trained: Vec<(Network, History)> = seeds
        .par_iter()
        .enumerate()
        .map(|(k, &s)| {
            train_cnn(&config.arch, &tc, inputs, labels, None, s).map_err(|e| e.context(format!("bank member {k}")))
        })
        .collect::<Result<_>>()?;
    let (members, histories) = trained.into_iter().unzip();
    Ok(CnnBank {
        arch: config.arch.clone(),
        seeds: seeds.to_vec(),
        members,
        histories,
    })
}

/// Softmax outputs of every member, concatenated member-major: `[n, K × C]`.
pub fn extract_features(bank: &CnnBank, inputs: &Tensor) -> Result<Tensor> {
    let x = bank.arch.shape_inputs(inputs.clone())?;
    let n = x.batch_size();
    let c = bank.arch.classes;
    let outs: Vec<Tensor> = bank.members.par_iter().map(|m| m.predict(&x)).collect::<Result<_>>()?;
    let k = outs.len();
    let mut values = vec![0.0; n * k * c];
    for (m, out) in outs.iter().enumerate() {
        for (i, row) in out.rows().enumerate() {
            values[i * k * c + m * c..i * k * c + (m + 1) * c].copy_from_slice(row);
        }
    }
    Tensor::new(vec![n, k * c], values)
}
