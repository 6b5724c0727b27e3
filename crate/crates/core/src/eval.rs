//! Leave-one-out protocol, class-count sweeps, confusion matrices and
//! core-count benchmarks.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Method;
use crate::seed::derive_seed;
use crate::signal::Dataset;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

/// Fold k validates the k-th sample (in dataset order) of every class.
pub fn make_folds(dataset: &Dataset) -> Result<FoldPlan> {
    let per_class = dataset.samples_per_class()?;
    let by_class = dataset.class_indices();
    let folds = (0..per_class)
        .map(|k| {
            let mut validation: Vec<usize> = by_class.iter().map(|idx| idx[k]).collect();
            validation.sort_unstable();
            let train = (0..dataset.len())
                .filter(|i| validation.binary_search(i).is_err())
                .collect();
            Fold { train, validation }
        })
        .collect();
    Ok(FoldPlan { folds })
}

/// Entry (i, j) counts samples of true class i predicted as j.
pub fn confusion_matrix(truths: &[usize], predictions: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    if truths.len() != predictions.len() {
        return Err(Error::Shape(format!(
            "{} truths for {} predictions",
            truths.len(),
            predictions.len()
        )));
    }
    let mut m = vec![vec![0; classes]; classes];
    for (&t, &p) in truths.iter().zip(predictions) {
        if t >= classes || p >= classes {
            return Err(Error::Data(format!(
                "label pair ({t}, {p}) out of range for {classes} classes"
            )));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoocvOptions {
    pub repeats: usize,
    /// Run only the first folds of each repeat.
    pub fold_limit: Option<usize>,
    pub seed: u64,
}

impl LoocvOptions {
    pub fn new(repeats: usize, seed: u64) -> Self {
        LoocvOptions {
            repeats,
            fold_limit: None,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub repeat: usize,
    pub fold: usize,
    pub seed: u64,
    /// `None` when training or classification failed.
    pub accuracy: Option<f64>,
    /// Training time only.
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub classes: usize,
    pub config_hash: String,
    pub repeats: usize,
    pub folds: usize,
    pub trials: Vec<TrialRecord>,
    /// Over successful trials; NaN (JSON null) when every trial failed.
    #[serde(with = "nan_as_null")]
    pub mean_accuracy: f64,
    #[serde(with = "nan_as_null")]
    pub std_accuracy: f64,
    pub mean_seconds: f64,
    pub failed_trials: usize,
    /// Rows are true classes.
    pub confusion: Vec<Vec<usize>>,
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

pub const SUMMARY_HEADER: &str = "method,classes,mean_accuracy,std_accuracy,mean_seconds,trials,failed_trials";

impl EvalReport {
    pub fn accuracies(&self) -> Vec<f64> {
        self.trials.iter().filter_map(|t| t.accuracy).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn summary_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.method,
            self.classes,
            self.mean_accuracy,
            self.std_accuracy,
            self.mean_seconds,
            self.trials.len(),
            self.failed_trials
        )
    }

    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for j in 0..self.classes {
            s.push_str(&format!(",{j}"));
        }
        s.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            s.push_str(&i.to_string());
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

pub fn summary_csv(reports: &[EvalReport]) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for r in reports {
        s.push_str(&r.summary_row());
        s.push('\n');
    }
    s
}

/// Trial seed for repeat `r`, fold `k`.
pub fn trial_seed(seed: u64, repeat: usize, fold: usize) -> u64 {
    derive_seed(seed, &[repeat as u64, fold as u64])
}

/// Repeated leave-one-out evaluation; each trial trains a fresh model.
pub fn run_loocv(method: &dyn Method, dataset: &Dataset, options: &LoocvOptions) -> Result<EvalReport> {
    if options.repeats == 0 {
        return Err(Error::Config("need at least one repeat".into()));
    }
    let plan = make_folds(dataset)?;
    let folds = options.fold_limit.map_or(plan.folds.len(), |l| l.min(plan.folds.len()));
    if folds == 0 {
        return Err(Error::Config("fold limit must be at least 1".into()));
    }
    let x = dataset.inputs()?;
    let labels = dataset.labels();
    let classes = dataset.class_count;
    let mut trials = Vec::with_capacity(options.repeats * folds);
    let mut confusion = vec![vec![0; classes]; classes];
    for repeat in 0..options.repeats {
        for (k, fold) in plan.folds.iter().take(folds).enumerate() {
            let seed = trial_seed(options.seed, repeat, k);
            let train = dataset.subset(&fold.train);
            let start = Instant::now();
            let fitted = method.fit(&train, seed);
            let seconds = start.elapsed().as_secs_f64();
            let outcome = fitted.and_then(|model| {
                let vx = crate::optim::gather_rows(&x, &fold.validation)?;
                model.classify(&vx)
            });
            let truths: Vec<usize> = fold.validation.iter().map(|&i| labels[i]).collect();
            let (accuracy, error) = match outcome.and_then(|p| confusion_matrix(&truths, &p, classes).map(|m| (p, m))) {
                Ok((pred, m)) => {
                    for (row, add) in confusion.iter_mut().zip(m) {
                        for (a, b) in row.iter_mut().zip(add) {
                            *a += b;
                        }
                    }
                    let ok = pred.iter().zip(&truths).filter(|(p, t)| p == t).count();
                    (Some(ok as f64 / truths.len() as f64), None)
                }
                Err(e) => (None, Some(e.to_string())),
            };
            trials.push(TrialRecord {
                repeat,
                fold: k,
                seed,
                accuracy,
                seconds,
                error,
            });
        }
    }
    let acc: Vec<f64> = trials.iter().filter_map(|t| t.accuracy).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&acc);
    let (mean_seconds, _) = mean_std(&trials.iter().map(|t| t.seconds).collect::<Vec<_>>());
    Ok(EvalReport {
        method: method.id(),
        classes,
        config_hash: method.config_hash(),
        repeats: options.repeats,
        folds,
        failed_trials: trials.len() - acc.len(),
        trials,
        mean_accuracy,
        std_accuracy,
        mean_seconds,
        confusion,
    })
}

/// One report per class count, each on the lowest-indexed classes.
pub fn robustness_sweep(
    method: &dyn Method,
    dataset: &Dataset,
    class_counts: &[usize],
    options: &LoocvOptions,
) -> Result<Vec<EvalReport>> {
    if let Some(&c) = class_counts.iter().find(|&&c| c == 0 || c > dataset.class_count) {
        return Err(Error::Config(format!(
            "class count {c} not in 1..={}",
            dataset.class_count
        )));
    }
    class_counts
        .iter()
        .map(|&c| run_loocv(method, &dataset.first_classes(c)?, options))
        .collect()
}

/// Sample std of the per-count mean accuracies.
pub fn sweep_spread(reports: &[EvalReport]) -> f64 {
    mean_std(&reports.iter().map(|r| r.mean_accuracy).collect::<Vec<_>>()).1
}

/// Parse `8..17` (inclusive) or a comma list.
pub fn parse_class_counts(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("cannot parse class counts {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (usize, usize) = (
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        );
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|v| v.trim().parse().map_err(|_| bad())).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub cores: usize,
    pub runs_seconds: Vec<f64>,
    pub median_seconds: f64,
    pub speedup: f64,
    pub model_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub method: String,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("cores,median_seconds,speedup,model_hash\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.cores, r.median_seconds, r.speedup, r.model_hash
            ));
        }
        s
    }

    pub fn identical_models(&self) -> bool {
        self.rows.windows(2).all(|w| w[0].model_hash == w[1].model_hash)
    }

    pub fn speedup(&self, cores: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.cores == cores).map(|r| r.speedup)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Median-of-`runs` training time per worker count. Speedups are relative to
/// one worker, which is always measured.
pub fn benchmark_cores(
    method: &dyn Method,
    dataset: &Dataset,
    cores: &[usize],
    runs: usize,
    seed: u64,
) -> Result<BenchReport> {
    if cores.is_empty() || cores.contains(&0) {
        return Err(Error::Config("core counts must be at least 1".into()));
    }
    if runs == 0 {
        return Err(Error::Config("need at least one timing run".into()));
    }
    let mut counts = vec![1];
    counts.extend(cores.iter().copied().filter(|&c| c != 1));
    let mut measured = Vec::with_capacity(counts.len());
    for &n in &counts {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot build a {n}-thread pool: {e}")))?;
        let mut times = Vec::with_capacity(runs);
        let mut hash = String::new();
        for _ in 0..runs {
            let start = Instant::now();
            let model = pool.install(|| method.fit(dataset, seed))?;
            times.push(start.elapsed().as_secs_f64());
            hash = model.digest().unwrap_or_default();
        }
        measured.push((n, times, hash));
    }
    let base = median(measured[0].1.clone());
    let rows = measured
        .into_iter()
        .filter(|(n, _, _)| *n != 1 || cores.contains(&1))
        .map(|(n, times, model_hash)| {
            let m = median(times.clone());
            BenchRow {
                cores: n,
                runs_seconds: times,
                median_seconds: m,
                speedup: base / m,
                model_hash,
            }
        })
        .collect();
    Ok(BenchReport {
        method: method.id(),
        rows,
    })
}
