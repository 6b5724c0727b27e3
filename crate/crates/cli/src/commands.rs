//! Subcommand implementations. Each returns the files it wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cmst_core::eval::{
    benchmark_cores, robustness_sweep, run_loocv, summary_csv, BenchReport, EvalReport, LoocvOptions, TrialRecord,
};
use cmst_core::model::{Classifier, Method};
use cmst_core::persist::{load_model, save_model};
use cmst_core::signal::{generate_dataset, save_dataset, GeneratorSpec};
use cmst_core::{Error, Result};
use sha2::{Digest, Sha256};

use crate::config::{read_spec, RunConfig, RESOLVED_CONFIG};

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

fn snapshot(config: &RunConfig, dir: &Path) -> Result<PathBuf> {
    write(&dir.join(RESOLVED_CONFIG), config.to_json())
}

/// Run `f` inside a pool of `workers` threads (default: all cores).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        b = b.num_threads(n);
    }
    let pool = b
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

pub struct GenData {
    pub manifest: PathBuf,
    pub manifest_sha256: String,
    pub fingerprints: usize,
}

pub fn cmd_gen_data(spec: Option<&Path>, out: &Path, seed: u64) -> Result<GenData> {
    let g = match spec {
        Some(p) => read_spec(p)?,
        None => GeneratorSpec::benchmark(),
    };
    let ds = generate_dataset(&g.classes, g.samples_per_class, seed)?;
    let manifest = save_dataset(&ds, out, Some(seed), Some(&g))?;
    let bytes = fs::read(&manifest).map_err(|e| Error::io(&manifest, e))?;
    Ok(GenData {
        manifest,
        manifest_sha256: hex::encode(Sha256::digest(&bytes)),
        fingerprints: ds.len(),
    })
}

pub fn cmd_train(config: &RunConfig) -> Result<PathBuf> {
    let ds = config.load_data()?;
    let dir = config.output_path("train");
    snapshot(config, &dir)?;
    let model = with_workers(config.workers, || config.model.train(&ds, config.seed))??;
    save_model(&model, &config.model, config.seed, ds.class_count, &dir)?;
    Ok(dir)
}

fn write_report(dir: &Path, report: &EvalReport, suffix: &str) -> Result<()> {
    write(&dir.join(format!("report{suffix}.json")), report.to_json())?;
    write(&dir.join(format!("confusion{suffix}.csv")), report.confusion_csv())?;
    Ok(())
}

/// Leave-one-out evaluation (or a class sweep); with `model`, score that
/// trained model on the whole dataset instead.
pub fn cmd_eval(config: &RunConfig, model: Option<&Path>) -> Result<(PathBuf, Vec<EvalReport>)> {
    let ds = config.load_data()?;
    let dir = config.output_path("eval");
    snapshot(config, &dir)?;
    let reports = if let Some(m) = model {
        let (manifest, trained) = load_model(m)?;
        let x = ds.inputs()?;
        let truths = ds.labels();
        let pred = trained.classify(&x)?;
        let confusion = cmst_core::eval::confusion_matrix(&truths, &pred, ds.class_count)?;
        let ok = pred.iter().zip(&truths).filter(|(p, t)| p == t).count();
        let acc = ok as f64 / truths.len() as f64;
        vec![EvalReport {
            method: manifest.config.id(),
            classes: ds.class_count,
            config_hash: manifest.config.config_hash(),
            repeats: 1,
            folds: 1,
            trials: vec![TrialRecord {
                repeat: 0,
                fold: 0,
                seed: manifest.seed,
                accuracy: Some(acc),
                seconds: 0.0,
                error: None,
            }],
            mean_accuracy: acc,
            std_accuracy: 0.0,
            mean_seconds: 0.0,
            failed_trials: 0,
            confusion,
        }]
    } else {
        let opts = LoocvOptions {
            repeats: config.eval.repeats,
            fold_limit: config.eval.fold_limit,
            seed: config.seed,
        };
        with_workers(config.workers, || match &config.eval.class_counts {
            Some(counts) => robustness_sweep(&config.model, &ds, counts, &opts),
            None => run_loocv(&config.model, &ds, &opts).map(|r| vec![r]),
        })??
    };
    if reports.len() == 1 {
        write_report(&dir, &reports[0], "")?;
    } else {
        for r in &reports {
            write_report(&dir, r, &format!("_{:02}", r.classes))?;
        }
    }
    write(&dir.join("summary.csv"), summary_csv(&reports))?;
    Ok((dir, reports))
}

pub fn cmd_bench(config: &RunConfig) -> Result<(PathBuf, BenchReport)> {
    let ds = config.load_data()?;
    let dir = config.output_path("bench");
    snapshot(config, &dir)?;
    let report = benchmark_cores(&config.model, &ds, &config.bench.cores, config.bench.runs, config.seed)?;
    write(&dir.join("bench.csv"), report.to_csv())?;
    write(
        &dir.join("bench.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    Ok((dir, report))
}

/// Read reports from JSON files holding one report or an array of them.
pub fn read_reports(paths: &[PathBuf]) -> Result<Vec<EvalReport>> {
    let mut out = Vec::new();
    for p in paths {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::format(p, e.to_string()))?;
        let parsed: std::result::Result<Vec<EvalReport>, _> = if v.is_array() {
            serde_json::from_value(v)
        } else {
            serde_json::from_value(v).map(|r| vec![r])
        };
        out.extend(parsed.map_err(|e| Error::format(p, e.to_string()))?);
    }
    Ok(out)
}

/// Wide comparison table: one row per class count, mean and std per method.
pub fn comparison_csv(reports: &[EvalReport]) -> String {
    let mut methods: Vec<String> = Vec::new();
    let mut table: BTreeMap<usize, BTreeMap<String, (f64, f64)>> = BTreeMap::new();
    for r in reports {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
        table
            .entry(r.classes)
            .or_default()
            .insert(r.method.clone(), (r.mean_accuracy, r.std_accuracy));
    }
    let mut s = String::from("classes");
    for m in &methods {
        s.push_str(&format!(",{m}_mean,{m}_std"));
    }
    s.push('\n');
    for (c, row) in &table {
        s.push_str(&c.to_string());
        for m in &methods {
            match row.get(m) {
                Some((a, b)) => s.push_str(&format!(",{a},{b}")),
                None => s.push_str(",,"),
            }
        }
        s.push('\n');
    }
    s
}

pub fn cmd_report(inputs: &[PathBuf], out: &Path) -> Result<PathBuf> {
    if inputs.is_empty() {
        return Err(Error::Config("report needs at least one input".into()));
    }
    let reports = read_reports(inputs)?;
    write(out, comparison_csv(&reports))
}
