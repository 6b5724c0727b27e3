//! Run configuration: JSON file, flag overrides, resolved snapshot.

use std::fs;
use std::path::{Path, PathBuf};

use cmst_core::baselines::VoteRule;
use cmst_core::model::{MethodConfig, MethodKind};
use cmst_core::optim::Optimizer;
use cmst_core::signal::{generate_dataset, load_dataset, Dataset, GeneratorSpec, MANIFEST_FILE};
use cmst_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const OUTPUT_ROOT_ENV: &str = "CMST_OUTPUT_ROOT";
pub const RESOLVED_CONFIG: &str = "config.resolved.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// The bundled 17-class synthetic benchmark.
    Benchmark,
    /// A generator spec JSON file.
    SpecFile(PathBuf),
    Generator(GeneratorSpec),
    /// A dataset manifest written by `gen-data`.
    Manifest(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub repeats: usize,
    pub fold_limit: Option<usize>,
    /// Class counts for a robustness sweep; `None` runs plain LOOCV.
    pub class_counts: Option<Vec<usize>>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            repeats: 5,
            fold_limit: None,
            class_counts: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSettings {
    pub cores: Vec<usize>,
    pub runs: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            cores: vec![1, 2, 4],
            runs: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: MethodConfig,
    pub data: DataSource,
    pub seed: u64,
    /// Seed for generated data; defaults to `seed`.
    #[serde(default)]
    pub data_seed: Option<u64>,
    /// Use only the first this many classes of the data.
    #[serde(default)]
    pub class_count: Option<usize>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub bench: BenchSettings,
}

/// Command-line values that replace file values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub method: Option<MethodKind>,
    pub desk: bool,
    pub seed: Option<u64>,
    pub data_seed: Option<u64>,
    pub data_manifest: Option<PathBuf>,
    pub data_spec: Option<PathBuf>,
    pub class_count: Option<usize>,
    pub members: Option<usize>,
    pub group: Option<usize>,
    pub stages: Option<usize>,
    pub epochs: Option<usize>,
    pub schedule: Option<Vec<f64>>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub vote: Option<VoteRule>,
    pub workers: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub repeats: Option<usize>,
    pub fold_limit: Option<usize>,
    pub class_counts: Option<Vec<usize>>,
    pub cores: Option<Vec<usize>>,
    pub runs: Option<usize>,
}

fn read_json(path: &Path) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn set_adam(opt: &mut Optimizer, lr: Option<f64>, batch: Option<usize>) -> Result<()> {
    match opt {
        Optimizer::Adam { config, batch_size } => {
            if let Some(lr) = lr {
                config.learning_rate = lr;
            }
            if let Some(b) = batch {
                *batch_size = b;
            }
            Ok(())
        }
        Optimizer::Lm(_) if lr.is_none() && batch.is_none() => Ok(()),
        Optimizer::Lm(_) => Err(Error::Config("learning rate and batch size apply to Adam only".into())),
    }
}

impl RunConfig {
    /// File values (if any) with `overrides` applied on top.
    pub fn resolve(file: Option<&Path>, o: &Overrides) -> Result<RunConfig> {
        let mut value = match file {
            Some(p) => read_json(p)?,
            None => serde_json::json!({}),
        };
        let obj = value
            .as_object_mut()
            .ok_or_else(|| Error::Config("config file must hold a JSON object".into()))?;
        if let Some(seed) = o.seed {
            obj.insert("seed".into(), seed.into());
        }
        if !obj.contains_key("seed") {
            return Err(Error::Config("a seed is required (config `seed` or --seed)".into()));
        }
        let file_kind = obj
            .get("model")
            .and_then(|m| m.get("method"))
            .and_then(|v| v.as_str())
            .map(str::parse::<MethodKind>)
            .transpose()?;
        let kind = o.method.or(file_kind).unwrap_or(MethodKind::Cmsn);
        // A preset or a different method replaces the file's model section.
        if !obj.contains_key("model") || o.desk || file_kind != Some(kind) {
            let base = if o.desk {
                MethodConfig::desk(kind)
            } else {
                MethodConfig::default_for(kind)
            };
            obj.insert("model".into(), serde_json::to_value(base).expect("config serializes"));
        }
        obj.entry("data")
            .or_insert_with(|| serde_json::to_value(DataSource::Benchmark).expect("serializes"));
        let mut c: RunConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid run config: {e}")))?;
        c.apply(o)?;
        c.validate()?;
        Ok(c)
    }

    fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(p) = &o.data_manifest {
            self.data = DataSource::Manifest(p.clone());
        }
        if let Some(p) = &o.data_spec {
            self.data = DataSource::SpecFile(p.clone());
        }
        macro_rules! set {
            ($field:expr, $v:expr) => {
                if let Some(v) = $v.clone() {
                    $field = v.into();
                }
            };
        }
        set!(self.data_seed, o.data_seed);
        set!(self.class_count, o.class_count);
        set!(self.workers, o.workers);
        set!(self.output_dir, o.output_dir);
        set!(self.eval.repeats, o.repeats);
        set!(self.eval.fold_limit, o.fold_limit);
        set!(self.eval.class_counts, o.class_counts);
        set!(self.bench.cores, o.cores);
        set!(self.bench.runs, o.runs);
        let (lr, bs) = (o.learning_rate, o.batch_size);
        match &mut self.model {
            MethodConfig::Cmsn(c) => {
                set!(c.bank.members, o.members);
                set!(c.group, o.group);
                set!(c.bank.epochs, o.epochs);
                if let Some(s) = o.stages {
                    c.stages = s;
                    if o.schedule.is_none() && c.schedule.len() != s.saturating_sub(1) {
                        return Err(Error::Config(format!(
                            "{s} stages need {} schedule values; pass --schedule",
                            s.saturating_sub(1)
                        )));
                    }
                }
                set!(c.schedule, o.schedule);
                set_adam(&mut c.bank.optimizer, lr, bs)?;
                if o.vote.is_some() {
                    return Err(Error::Config("--vote applies to committees only".into()));
                }
            }
            MethodConfig::Cnn(c) => {
                set!(c.max_epochs, o.epochs);
                set_adam(&mut c.optimizer, lr, bs)?;
            }
            MethodConfig::Fcn(c) => {
                set!(c.max_epochs, o.epochs);
                set_adam(&mut c.optimizer, lr, bs)?;
            }
            MethodConfig::CnnCommittee(c) => {
                set!(c.members, o.members);
                set!(c.vote, o.vote);
                set!(c.member.max_epochs, o.epochs);
                set_adam(&mut c.member.optimizer, lr, bs)?;
            }
            MethodConfig::FcnCommittee(c) => {
                set!(c.members, o.members);
                set!(c.vote, o.vote);
                set!(c.member.max_epochs, o.epochs);
                set_adam(&mut c.member.optimizer, lr, bs)?;
            }
        }
        if !matches!(self.model, MethodConfig::Cmsn(_))
            && (o.group.is_some() || o.stages.is_some() || o.schedule.is_some())
        {
            return Err(Error::Config(
                "--group, --stages and --schedule apply to cmsn only".into(),
            ));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if let DataSource::SpecFile(p) | DataSource::Manifest(p) = &self.data {
            if !p.exists() {
                return Err(Error::Config(format!("data file {} does not exist", p.display())));
            }
        }
        if self.workers == Some(0) {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        if self.eval.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.bench.runs == 0 || self.bench.cores.is_empty() || self.bench.cores.contains(&0) {
            return Err(Error::Config(
                "bench needs at least one run and core counts of at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn generator_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    /// Materialize the dataset, restricted to `class_count` classes if set.
    pub fn load_data(&self) -> Result<Dataset> {
        let ds = match &self.data {
            DataSource::Benchmark => {
                let g = GeneratorSpec::benchmark();
                generate_dataset(&g.classes, g.samples_per_class, self.generator_seed())?
            }
            DataSource::Generator(g) => {
                g.validate()?;
                generate_dataset(&g.classes, g.samples_per_class, self.generator_seed())?
            }
            DataSource::SpecFile(p) => {
                let g = read_spec(p)?;
                generate_dataset(&g.classes, g.samples_per_class, self.generator_seed())?
            }
            DataSource::Manifest(p) => {
                let path = if p.is_dir() { p.join(MANIFEST_FILE) } else { p.clone() };
                load_dataset(&path)?
            }
        };
        match self.class_count {
            Some(c) => ds.first_classes(c),
            None => Ok(ds),
        }
    }

    /// Output directory: explicit setting, else `<root>/<command>-<method>-<seed>`,
    /// with relative paths placed under the output root.
    pub fn output_path(&self, command: &str) -> PathBuf {
        let root = std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"));
        match &self.output_dir {
            Some(p) if p.is_absolute() => p.clone(),
            Some(p) => root.join(p),
            None => root.join(format!("{command}-{}-{}", self.model.kind().name(), self.seed)),
        }
    }
}

pub fn read_spec(path: &Path) -> Result<GeneratorSpec> {
    let g: GeneratorSpec =
        serde_json::from_value(read_json(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    g.validate()?;
    Ok(g)
}

/// Parse a comma-separated list.
pub fn parse_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String> {
    s.split(',')
        .map(|v| v.trim().parse::<T>().map_err(|_| format!("cannot parse {v:?}")))
        .collect()
}
