//! Comparison methods: single CNN, CNN committee, single FCN, FCN committee.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cnn::{train_cnn, CnnArch};
use crate::error::{Error, Result};
use crate::mst::argmax;
use crate::nn::{one_hot, Architecture, LayerSpec, LossKind, Network, SampleShape};
use crate::optim::{gather_rows, train, Batch, History, Optimizer, StopCriterion, TrainConfig};
use crate::seed::derive_seed;
use crate::signal::Dataset;
use crate::tensor::Tensor;

pub const TRAIN_FRACTION: f64 = 0.7;

/// Per-class seeded split; each class keeps at least one sample on each side.
pub fn stratified_split(
    labels: &[usize],
    classes: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut by_class = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Data(format!("label {l} out of range for {classes} classes")));
        }
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut tr, mut va) = (Vec::new(), Vec::new());
    for (c, mut idx) in by_class.into_iter().enumerate() {
        if idx.len() < 2 {
            return Err(Error::Data(format!(
                "class {c} has {} sample(s); a train/validation split needs at least 2",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let n_train = ((idx.len() as f64 * train_fraction).round() as usize).clamp(1, idx.len() - 1);
        tr.extend_from_slice(&idx[..n_train]);
        va.extend_from_slice(&idx[n_train..]);
    }
    tr.sort_unstable();
    va.sort_unstable();
    Ok((tr, va))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnBaselineConfig {
    pub arch: CnnArch,
    pub max_epochs: usize,
    /// Stop after this many epochs without a new validation minimum.
    pub patience: Option<usize>,
    pub optimizer: Optimizer,
}

impl Default for CnnBaselineConfig {
    fn default() -> Self {
        CnnBaselineConfig {
            arch: CnnArch::default(),
            max_epochs: 50,
            patience: None,
            optimizer: Optimizer::adam(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcnBaselineConfig {
    pub hidden: Vec<usize>,
    pub max_epochs: usize,
    pub patience: Option<usize>,
    pub l2: f64,
    pub optimizer: Optimizer,
}

impl Default for FcnBaselineConfig {
    fn default() -> Self {
        FcnBaselineConfig {
            hidden: vec![200, 200],
            max_epochs: 100,
            patience: None,
            l2: 1e-4,
            optimizer: Optimizer::adam(),
        }
    }
}

impl FcnBaselineConfig {
    pub fn architecture(&self, inputs: usize, classes: usize) -> Architecture {
        let mut layers = Vec::new();
        for &h in &self.hidden {
            layers.push(LayerSpec::Dense { units: h });
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::Dense { units: classes });
        layers.push(LayerSpec::Softmax);
        Architecture::new(SampleShape::Flat(inputs), layers)
    }
}

fn split_tensors(dataset: &Dataset, seed: u64) -> Result<(Tensor, Vec<usize>, Tensor, Vec<usize>)> {
    let labels = dataset.labels();
    let (tr, va) = stratified_split(&labels, dataset.class_count, TRAIN_FRACTION, seed)?;
    let x = dataset.inputs()?;
    Ok((
        gather_rows(&x, &tr)?,
        tr.iter().map(|&i| labels[i]).collect(),
        gather_rows(&x, &va)?,
        va.iter().map(|&i| labels[i]).collect(),
    ))
}

/// Single CNN: Adam on a 70/30 split, weights of the best validation epoch.
pub fn train_cnn_baseline(dataset: &Dataset, config: &CnnBaselineConfig, seed: u64) -> Result<(Network, History)> {
    fit_cnn(dataset, config, seed, derive_seed(seed, &[1]))
}

/// Single FCN on raw fingerprints with L2 regularization.
pub fn train_fcn_baseline(dataset: &Dataset, config: &FcnBaselineConfig, seed: u64) -> Result<(Network, History)> {
    fit_fcn(dataset, config, seed, derive_seed(seed, &[1]))
}

/// Modal label; ties go to the lowest class index.
pub fn committee_vote(labels: &[usize]) -> Result<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    // BTreeMap iterates in ascending label order, so the first maximum wins.
    counts
        .into_iter()
        .fold(None, |best: Option<(usize, usize)>, (l, n)| match best {
            Some((_, bn)) if bn >= n => best,
            _ => Some((l, n)),
        })
        .map(|(l, _)| l)
        .ok_or_else(|| Error::Data("committee vote over no members".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteRule {
    #[default]
    Majority,
    /// Argmax of the members' mean softmax output.
    MeanScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemberKind {
    Cnn,
    Fcn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommitteeModel {
    pub kind: MemberKind,
    pub members: Vec<Network>,
    pub seeds: Vec<u64>,
    pub histories: Vec<History>,
    pub vote: VoteRule,
}

/// Shape raw fingerprint rows for a member network.
fn member_input(net: &Network, inputs: &Tensor) -> Result<Tensor> {
    let dims = net.input_shape().dims();
    if net.input_shape().size() != inputs.row_len() {
        return Err(Error::Shape(format!(
            "network expects {} inputs per sample, got {}",
            net.input_shape().size(),
            inputs.row_len()
        )));
    }
    let mut shape = vec![inputs.batch_size()];
    shape.extend(dims);
    inputs.clone().reshape(shape)
}

/// Class scores of one classifier network on raw fingerprint rows.
pub fn network_scores(net: &Network, inputs: &Tensor) -> Result<Tensor> {
    net.predict(&member_input(net, inputs)?)
}

impl CommitteeModel {
    /// Labels for each row of `inputs`.
    pub fn predict(&self, inputs: &Tensor) -> Result<Vec<usize>> {
        let scores: Vec<Tensor> = self
            .members
            .par_iter()
            .map(|m| network_scores(m, inputs))
            .collect::<Result<_>>()?;
        let n = inputs.batch_size();
        (0..n)
            .map(|i| match self.vote {
                VoteRule::Majority => committee_vote(&scores.iter().map(|s| argmax(s.row(i))).collect::<Vec<_>>()),
                VoteRule::MeanScore => {
                    let c = scores[0].row_len();
                    let mut mean = vec![0.0; c];
                    for s in &scores {
                        for (m, v) in mean.iter_mut().zip(s.row(i)) {
                            *m += v;
                        }
                    }
                    Ok(argmax(&mean))
                }
            })
            .collect()
    }
}

/// Committee seeds, one per member.
pub fn member_seeds(seed: u64, members: usize) -> Vec<u64> {
    (0..members as u64).map(|m| derive_seed(seed, &[m])).collect()
}

/// Members share one 70/30 split and differ only in their initialization
/// and shuffling seeds.
pub fn train_cnn_committee(
    dataset: &Dataset,
    config: &CnnBaselineConfig,
    members: usize,
    vote: VoteRule,
    seed: u64,
) -> Result<CommitteeModel> {
    train_committee(MemberKind::Cnn, members, vote, seed, |s| {
        fit_cnn(dataset, config, seed, s)
    })
}

pub fn train_fcn_committee(
    dataset: &Dataset,
    config: &FcnBaselineConfig,
    members: usize,
    vote: VoteRule,
    seed: u64,
) -> Result<CommitteeModel> {
    train_committee(MemberKind::Fcn, members, vote, seed, |s| {
        fit_fcn(dataset, config, seed, s)
    })
}

fn train_committee(
    kind: MemberKind,
    members: usize,
    vote: VoteRule,
    seed: u64,
    fit: impl Fn(u64) -> Result<(Network, History)> + Sync,
) -> Result<CommitteeModel> {
    if members == 0 {
        return Err(Error::Config("committee needs at least one member".into()));
    }
    let seeds = member_seeds(derive_seed(seed, &[7]), members);
    let trained: Vec<(Network, History)> = seeds
        .par_iter()
        .enumerate()
        .map(|(m, &s)| fit(s).map_err(|e| e.context(format!("committee member {m}"))))
        .collect::<Result<_>>()?;
    let (members, histories) = trained.into_iter().unzip();
    Ok(CommitteeModel {
        kind,
        members,
        seeds,
        histories,
        vote,
    })
}

fn stop(max_epochs: usize, patience: Option<usize>) -> StopCriterion {
    StopCriterion {
        max_epochs,
        target_error: 0.0,
        patience,
    }
}

// The split depends only on `split_seed`; `member_seed` drives init and shuffling.
fn fit_cnn(
    dataset: &Dataset,
    config: &CnnBaselineConfig,
    split_seed: u64,
    member_seed: u64,
) -> Result<(Network, History)> {
    if config.arch.classes != dataset.class_count {
        return Err(Error::Config(format!(
            "CNN has {} outputs for {} classes",
            config.arch.classes, dataset.class_count
        )));
    }
    let (x, y, vx, vy) = split_tensors(dataset, derive_seed(split_seed, &[0]))?;
    let tc = TrainConfig::new(
        config.optimizer,
        LossKind::CrossEntropy,
        stop(config.max_epochs, config.patience),
    );
    train_cnn(&config.arch, &tc, &x, &y, Some((&vx, &vy)), member_seed)
}

fn fit_fcn(
    dataset: &Dataset,
    config: &FcnBaselineConfig,
    split_seed: u64,
    member_seed: u64,
) -> Result<(Network, History)> {
    let (x, y, vx, vy) = split_tensors(dataset, derive_seed(split_seed, &[0]))?;
    let classes = dataset.class_count;
    let net = Network::new(
        config.architecture(dataset.input_len(), classes),
        derive_seed(member_seed, &[0]),
    )?;
    let mut tc = TrainConfig::new(
        config.optimizer,
        LossKind::CrossEntropy,
        stop(config.max_epochs, config.patience),
    );
    tc.l2 = config.l2;
    let (ty, tvy) = (one_hot(&y, classes)?, one_hot(&vy, classes)?);
    train(
        net,
        Batch::new(&x, &ty)?,
        Some(Batch::new(&vx, &tvy)?),
        &tc,
        derive_seed(member_seed, &[1]),
    )
}
