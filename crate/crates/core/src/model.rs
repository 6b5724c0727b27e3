//! Method configurations and the trained classifiers they produce.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{
    network_scores, train_cnn_baseline, train_cnn_committee, train_fcn_baseline, train_fcn_committee,
    CnnBaselineConfig, CommitteeModel, FcnBaselineConfig, MemberKind, VoteRule,
};
use crate::cnn::CnnArch;
use crate::error::{Error, Result};
use crate::mst::{argmax, predict, train_cmsn, CmsnConfig, CmsnModel};
use crate::nn::Network;
use crate::optim::{AdamConfig, History, Optimizer};
use crate::signal::{Dataset, BLOCKS};
use crate::tensor::Tensor;

/// Anything that labels fingerprint rows.
pub trait Classifier {
    fn classify(&self, inputs: &Tensor) -> Result<Vec<usize>>;

    /// Hash of the learned parameters, when the classifier has any.
    fn digest(&self) -> Option<String> {
        None
    }
}

/// A trainable classifier factory.
pub trait Method: Sync {
    fn id(&self) -> String;
    fn config_hash(&self) -> String;
    fn fit(&self, dataset: &Dataset, seed: u64) -> Result<Box<dyn Classifier + Send + Sync>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitteeConfig<T> {
    pub member: T,
    pub members: usize,
    #[serde(default)]
    pub vote: VoteRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    Cmsn,
    Cnn,
    CnnCommittee,
    Fcn,
    FcnCommittee,
}

impl MethodKind {
    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Cmsn => "cmsn",
            MethodKind::Cnn => "cnn",
            MethodKind::CnnCommittee => "cnn-committee",
            MethodKind::Fcn => "fcn",
            MethodKind::FcnCommittee => "fcn-committee",
        }
    }
}

impl std::str::FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            MethodKind::Cmsn,
            MethodKind::Cnn,
            MethodKind::CnnCommittee,
            MethodKind::Fcn,
            MethodKind::FcnCommittee,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", content = "config", rename_all = "kebab-case")]
pub enum MethodConfig {
    Cmsn(CmsnConfig),
    Cnn(CnnBaselineConfig),
    CnnCommittee(CommitteeConfig<CnnBaselineConfig>),
    Fcn(FcnBaselineConfig),
    FcnCommittee(CommitteeConfig<FcnBaselineConfig>),
}

pub const DEFAULT_COMMITTEE: usize = 12;

impl MethodConfig {
    /// Defaults for `kind`.
    pub fn default_for(kind: MethodKind) -> Self {
        match kind {
            MethodKind::Cmsn => MethodConfig::Cmsn(CmsnConfig::default()),
            MethodKind::Cnn => MethodConfig::Cnn(CnnBaselineConfig::default()),
            MethodKind::CnnCommittee => MethodConfig::CnnCommittee(CommitteeConfig {
                member: CnnBaselineConfig::default(),
                members: DEFAULT_COMMITTEE,
                vote: VoteRule::Majority,
            }),
            MethodKind::Fcn => MethodConfig::Fcn(FcnBaselineConfig::default()),
            MethodKind::FcnCommittee => MethodConfig::FcnCommittee(CommitteeConfig {
                member: FcnBaselineConfig::default(),
                members: DEFAULT_COMMITTEE,
                vote: VoteRule::Majority,
            }),
        }
    }

    /// Reduced-cost variant for single-machine experiment runs: each
    /// fingerprint block is a separate input channel, filter counts are
    /// halved and baseline epoch caps are lowered.
    pub fn desk(kind: MethodKind) -> Self {
        let arch = CnnArch {
            channels: BLOCKS,
            filters: vec![4, 8, 16, 32],
            ..CnnArch::default()
        };
        let adam = |learning_rate| Optimizer::Adam {
            config: AdamConfig {
                learning_rate,
                ..AdamConfig::default()
            },
            batch_size: 32,
        };
        let cnn = CnnBaselineConfig {
            arch: arch.clone(),
            max_epochs: 12,
            patience: None,
            optimizer: adam(0.003),
        };
        let fcn = FcnBaselineConfig {
            max_epochs: 30,
            ..FcnBaselineConfig::default()
        };
        match kind {
            MethodKind::Cmsn => {
                let mut c = CmsnConfig::default();
                c.bank.arch = arch;
                c.bank.optimizer = adam(0.01);
                MethodConfig::Cmsn(c)
            }
            MethodKind::Cnn => MethodConfig::Cnn(cnn),
            MethodKind::CnnCommittee => MethodConfig::CnnCommittee(CommitteeConfig {
                member: cnn,
                members: DEFAULT_COMMITTEE,
                vote: VoteRule::Majority,
            }),
            MethodKind::Fcn => MethodConfig::Fcn(fcn),
            MethodKind::FcnCommittee => MethodConfig::FcnCommittee(CommitteeConfig {
                member: fcn,
                members: DEFAULT_COMMITTEE,
                vote: VoteRule::Majority,
            }),
        }
    }

    pub fn kind(&self) -> MethodKind {
        match self {
            MethodConfig::Cmsn(_) => MethodKind::Cmsn,
            MethodConfig::Cnn(_) => MethodKind::Cnn,
            MethodConfig::CnnCommittee(_) => MethodKind::CnnCommittee,
            MethodConfig::Fcn(_) => MethodKind::Fcn,
            MethodConfig::FcnCommittee(_) => MethodKind::FcnCommittee,
        }
    }

    /// Configured class count; FCN baselines take theirs from the data.
    pub fn classes(&self) -> Option<usize> {
        match self {
            MethodConfig::Cmsn(c) => Some(c.classes()),
            MethodConfig::Cnn(c) => Some(c.arch.classes),
            MethodConfig::CnnCommittee(c) => Some(c.member.arch.classes),
            MethodConfig::Fcn(_) | MethodConfig::FcnCommittee(_) => None,
        }
    }

    /// Same hyperparameters with `classes` output classes.
    pub fn with_classes(&self, classes: usize) -> Self {
        let mut c = self.clone();
        match &mut c {
            MethodConfig::Cmsn(m) => m.bank.arch.classes = classes,
            MethodConfig::Cnn(m) => m.arch.classes = classes,
            MethodConfig::CnnCommittee(m) => m.member.arch.classes = classes,
            MethodConfig::Fcn(_) | MethodConfig::FcnCommittee(_) => {}
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MethodConfig::Cmsn(c) => c.validate(),
            MethodConfig::CnnCommittee(c) if c.members == 0 => {
                Err(Error::Config("committee needs at least one member".into()))
            }
            MethodConfig::FcnCommittee(c) if c.members == 0 => {
                Err(Error::Config("committee needs at least one member".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Train on `dataset`, adapting the class count to the data.
    pub fn train(&self, dataset: &Dataset, seed: u64) -> Result<TrainedModel> {
        let config = self.with_classes(dataset.class_count);
        config.validate()?;
        Ok(match &config {
            MethodConfig::Cmsn(c) => TrainedModel::Cmsn(train_cmsn(dataset, c, seed)?),
            MethodConfig::Cnn(c) => {
                let (network, history) = train_cnn_baseline(dataset, c, seed)?;
                TrainedModel::Single {
                    kind: MemberKind::Cnn,
                    network,
                    history,
                }
            }
            MethodConfig::Fcn(c) => {
                let (network, history) = train_fcn_baseline(dataset, c, seed)?;
                TrainedModel::Single {
                    kind: MemberKind::Fcn,
                    network,
                    history,
                }
            }
            MethodConfig::CnnCommittee(c) => {
                TrainedModel::Committee(train_cnn_committee(dataset, &c.member, c.members, c.vote, seed)?)
            }
            MethodConfig::FcnCommittee(c) => {
                TrainedModel::Committee(train_fcn_committee(dataset, &c.member, c.members, c.vote, seed)?)
            }
        })
    }
}

impl Method for MethodConfig {
    fn id(&self) -> String {
        self.kind().name().to_string()
    }

    fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_string(self).expect("config serializes")))
    }

    fn fit(&self, dataset: &Dataset, seed: u64) -> Result<Box<dyn Classifier + Send + Sync>> {
        Ok(Box::new(self.train(dataset, seed)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum TrainedModel {
    Cmsn(CmsnModel),
    Single {
        kind: MemberKind,
        network: Network,
        history: History,
    },
    Committee(CommitteeModel),
}

impl TrainedModel {
    /// All networks in persistence order.
    pub fn networks(&self) -> Vec<&Network> {
        match self {
            TrainedModel::Cmsn(m) => m.networks().collect(),
            TrainedModel::Single { network, .. } => vec![network],
            TrainedModel::Committee(c) => c.members.iter().collect(),
        }
    }

    pub fn histories(&self) -> Vec<&History> {
        match self {
            TrainedModel::Cmsn(m) => m
                .bank
                .histories
                .iter()
                .chain(m.stages.iter().flat_map(|s| s.histories.iter()))
                .collect(),
            TrainedModel::Single { history, .. } => vec![history],
            TrainedModel::Committee(c) => c.histories.iter().collect(),
        }
    }

    pub fn parameter_digest(&self) -> String {
        let mut h = Sha256::new();
        for n in self.networks() {
            for v in n.params().values.iter().chain(&n.params().running) {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

impl Classifier for TrainedModel {
    fn classify(&self, inputs: &Tensor) -> Result<Vec<usize>> {
        match self {
            TrainedModel::Cmsn(m) => Ok(predict(m, inputs)?.iter().map(|s| s.label()).collect()),
            TrainedModel::Single { network, .. } => Ok(network_scores(network, inputs)?.rows().map(argmax).collect()),
            TrainedModel::Committee(c) => c.predict(inputs),
        }
    }

    fn digest(&self) -> Option<String> {
        Some(self.parameter_digest())
    }
}
