//! Model directories: a version-stamped manifest plus one JSON file per network.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{CommitteeModel, MemberKind};
use crate::cnn::CnnBank;
use crate::error::{Error, Result};
use crate::model::{MethodConfig, TrainedModel};
use crate::mst::{CmsnModel, Stage};
use crate::nn::{Architecture, Network, NetworkParams};
use crate::optim::History;

pub const MODEL_MANIFEST: &str = "model.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const MODEL_FORMAT: &str = "cmst-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEntry {
    pub file: String,
    /// `bank`, `stage<s>`, `member` or `network`.
    pub role: String,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: String,
    pub version: u32,
    pub config: MethodConfig,
    pub seed: u64,
    pub classes: usize,
    pub networks: Vec<NetworkEntry>,
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    architecture: Architecture,
    params: NetworkParams,
    history: History,
}

fn entries(model: &TrainedModel) -> Vec<NetworkEntry> {
    let entry = |file: String, role: &str, seed: Option<u64>| NetworkEntry {
        file,
        role: role.to_string(),
        seed,
    };
    match model {
        TrainedModel::Cmsn(m) => {
            let mut v: Vec<NetworkEntry> = m
                .bank
                .seeds
                .iter()
                .enumerate()
                .map(|(k, &s)| entry(format!("bank/cnn_{k:02}.json"), "bank", Some(s)))
                .collect();
            for st in &m.stages {
                let role = format!("stage{}", st.spec.index);
                for (i, &s) in st.seeds.iter().enumerate() {
                    let (c, g) = (i / st.spec.group, i % st.spec.group);
                    v.push(entry(format!("{role}/fcn_c{c:02}_m{g}.json"), &role, Some(s)));
                }
            }
            v
        }
        TrainedModel::Single { .. } => vec![entry("network.json".into(), "network", None)],
        TrainedModel::Committee(c) => c
            .seeds
            .iter()
            .enumerate()
            .map(|(k, &s)| entry(format!("committee/member_{k:02}.json"), "member", Some(s)))
            .collect(),
    }
}

/// Write `model` into `dir`. Output bytes depend only on the model.
pub fn save_model(model: &TrainedModel, config: &MethodConfig, seed: u64, classes: usize, dir: &Path) -> Result<()> {
    let list = entries(model);
    let nets = model.networks();
    let histories = model.histories();
    let mut csv = String::from("file,epoch,train_error,validation_error,step_size\n");
    for ((e, net), hist) in list.iter().zip(&nets).zip(&histories) {
        let path = dir.join(&e.file);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|err| Error::io(parent, err))?;
        }
        let file = NetworkFile {
            architecture: net.architecture().clone(),
            params: net.params().clone(),
            history: (*hist).clone(),
        };
        fs::write(&path, serde_json::to_string(&file).expect("network serializes"))
            .map_err(|err| Error::io(&path, err))?;
        for line in hist.to_csv().lines().skip(1) {
            csv.push_str(&format!("{},{line}\n", e.file));
        }
    }
    let manifest = ModelManifest {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        config: config.with_classes(classes),
        seed,
        classes,
        networks: list,
    };
    let path = dir.join(MODEL_MANIFEST);
    fs::write(
        &path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(|err| Error::io(&path, err))?;
    let hpath = dir.join(HISTORY_FILE);
    fs::write(&hpath, csv).map_err(|err| Error::io(&hpath, err))
}

pub fn read_manifest(dir: &Path) -> Result<ModelManifest> {
    let path = dir.join(MODEL_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: ModelManifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if m.format != MODEL_FORMAT || m.version != MODEL_VERSION {
        return Err(Error::format(
            &path,
            format!(
                "unsupported model format {} v{} (expected {MODEL_FORMAT} v{MODEL_VERSION})",
                m.format, m.version
            ),
        ));
    }
    Ok(m)
}

fn load_network(dir: &Path, entry: &NetworkEntry) -> Result<(Network, History)> {
    let path = dir.join(&entry.file);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let f: NetworkFile = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    let net = Network::from_parts(f.architecture, f.params).map_err(|e| Error::format(&path, e.to_string()))?;
    Ok((net, f.history))
}

fn seeds_of(entries: &[&NetworkEntry], manifest: &Path) -> Result<Vec<u64>> {
    entries
        .iter()
        .map(|e| {
            e.seed
                .ok_or_else(|| Error::format(manifest, format!("{} has no seed", e.file)))
        })
        .collect()
}

/// Load a model directory written by [`save_model`].
pub fn load_model(dir: &Path) -> Result<(ModelManifest, TrainedModel)> {
    let manifest = read_manifest(dir)?;
    let mpath = dir.join(MODEL_MANIFEST);
    let bad = |msg: String| Error::format(&mpath, msg);
    let role = |r: &str| -> Vec<&NetworkEntry> { manifest.networks.iter().filter(|e| e.role == r).collect() };
    let load_all = |list: &[&NetworkEntry]| -> Result<(Vec<Network>, Vec<History>)> {
        Ok(list
            .iter()
            .map(|e| load_network(dir, e))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip())
    };
    let model = match &manifest.config {
        MethodConfig::Cmsn(config) => {
            config.validate()?;
            let bank_entries = role("bank");
            if bank_entries.len() != config.bank.members {
                return Err(bad(format!(
                    "expected {} bank networks, found {}",
                    config.bank.members,
                    bank_entries.len()
                )));
            }
            let (members, histories) = load_all(&bank_entries)?;
            let bank = CnnBank {
                arch: config.bank.arch.clone(),
                seeds: seeds_of(&bank_entries, &mpath)?,
                members,
                histories,
            };
            let mut stages = Vec::new();
            for index in 2..=config.stages {
                let list = role(&format!("stage{index}"));
                let expected = config.classes() * config.group;
                if list.len() != expected {
                    return Err(bad(format!(
                        "expected {expected} stage {index} networks, found {}",
                        list.len()
                    )));
                }
                let (networks, histories) = load_all(&list)?;
                stages.push(Stage {
                    spec: config.stage_spec(index),
                    classes: config.classes(),
                    input_width: config.stage_input_width(index),
                    networks,
                    seeds: seeds_of(&list, &mpath)?,
                    histories,
                });
            }
            TrainedModel::Cmsn(CmsnModel {
                config: config.clone(),
                seed: manifest.seed,
                bank,
                stages,
            })
        }
        MethodConfig::Cnn(_) | MethodConfig::Fcn(_) => {
            let list = role("network");
            if list.len() != 1 {
                return Err(bad(format!("expected 1 network, found {}", list.len())));
            }
            let (network, history) = load_network(dir, list[0])?;
            let kind = if matches!(manifest.config, MethodConfig::Cnn(_)) {
                MemberKind::Cnn
            } else {
                MemberKind::Fcn
            };
            TrainedModel::Single { kind, network, history }
        }
        MethodConfig::CnnCommittee(_) | MethodConfig::FcnCommittee(_) => {
            let (kind, members_expected, vote) = match &manifest.config {
                MethodConfig::CnnCommittee(c) => (MemberKind::Cnn, c.members, c.vote),
                MethodConfig::FcnCommittee(c) => (MemberKind::Fcn, c.members, c.vote),
                _ => unreachable!(),
            };
            let list = role("member");
            if list.len() != members_expected {
                return Err(bad(format!(
                    "expected {members_expected} committee members, found {}",
                    list.len()
                )));
            }
            let (members, histories) = load_all(&list)?;
            TrainedModel::Committee(CommitteeModel {
                kind,
                members,
                seeds: seeds_of(&list, &mpath)?,
                histories,
                vote,
            })
        }
    };
    Ok((manifest, model))
}
