//! CSV trace files and the JSON dataset manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fingerprint::{build_fingerprint, Dataset};
use super::synth::{generate_dataset, GeneratorSpec};
use super::trace::{Angle, Trace, TraceMeta};
use crate::error::{Error, Result};

pub const TRACE_HEADER: [&str; 3] = ["frequency_hz", "real", "imag"];
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

pub fn save_trace(trace: &Trace, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(TRACE_HEADER).map_err(|e| csv_error(path, e))?;
    for (f, s) in trace.frequencies().iter().zip(trace.samples()) {
        // `{}` on f64 prints the shortest string that parses back exactly.
        w.write_record([f.to_string(), s.re.to_string(), s.im.to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::format(path, e.to_string())
    }
}

pub fn load_trace(path: &Path, meta: TraceMeta) -> Result<Trace> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().map(str::trim).ne(TRACE_HEADER) {
        return Err(Error::format(
            path,
            format!(
                "expected header {}, found {}",
                TRACE_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut freqs = Vec::new();
    let mut samples = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.len() != 3 {
            return Err(Error::format(
                path,
                format!("row {row}: expected 3 fields, found {}", rec.len()),
            ));
        }
        let parse = |k: usize| -> Result<f64> {
            rec[k].trim().parse::<f64>().map_err(|_| {
                Error::format(
                    path,
                    format!("row {row}: cannot parse {:?} as {}", &rec[k], TRACE_HEADER[k]),
                )
            })
        };
        freqs.push(parse(0)?);
        samples.push(Complex64::new(parse(1)?, parse(2)?));
    }
    Trace::new(freqs, samples, meta).map_err(|e| match e {
        Error::Data(m) | Error::NonFinite(m) => Error::format(path, m),
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest directory.
    pub file: String,
    pub label: usize,
    pub object: usize,
    pub angle: Angle,
    pub session: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub class_count: usize,
    pub samples_per_class: usize,
    pub seed: Option<u64>,
    pub generator: Option<GeneratorSpec>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::format(
                path,
                format!(
                    "manifest version {} not supported (expected {MANIFEST_VERSION})",
                    m.version
                ),
            ));
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

fn trace_file_name(meta: &TraceMeta) -> String {
    match (meta.object, meta.angle) {
        (Some(o), Some(a)) => format!("obj{o:02}_s{:02}_a{:02}.csv", meta.session, a.degrees()),
        _ => format!("background_{:03}.csv", meta.session),
    }
}

/// Write every trace of `dataset` plus a manifest into `dir`.
pub fn save_dataset(
    dataset: &Dataset,
    dir: &Path,
    seed: Option<u64>,
    generator: Option<&GeneratorSpec>,
) -> Result<PathBuf> {
    if dataset.traces.len() != 3 * dataset.len() {
        return Err(Error::Data(format!(
            "dataset holds {} traces for {} fingerprints; raw traces are needed to save",
            dataset.traces.len(),
            dataset.len()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(dataset.traces.len());
    for (k, t) in dataset.traces.iter().enumerate() {
        let label = dataset.fingerprints[k / 3].label;
        let (Some(object), Some(angle)) = (t.meta.object, t.meta.angle) else {
            return Err(Error::Data(format!("trace {k} has no object/orientation metadata")));
        };
        let file = trace_file_name(&t.meta);
        save_trace(t, &dir.join(&file))?;
        entries.push(ManifestEntry {
            file,
            label,
            object,
            angle,
            session: t.meta.session,
        });
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        class_count: dataset.class_count,
        samples_per_class: dataset.samples_per_class().unwrap_or(0),
        seed,
        generator: generator.cloned(),
        entries,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Load a manifest and its traces; fingerprints follow first appearance of
/// each (object, session) in the manifest.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest = DatasetManifest::read(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut order: Vec<(usize, usize)> = Vec::new();
    let mut groups: BTreeMap<(usize, usize), (usize, Vec<Trace>)> = BTreeMap::new();
    for e in &manifest.entries {
        let trace = load_trace(&dir.join(&e.file), TraceMeta::object(e.object, e.angle, e.session))?;
        let key = (e.object, e.session);
        let g = groups.entry(key).or_insert_with(|| {
            order.push(key);
            (e.label, Vec::new())
        });
        if g.0 != e.label {
            return Err(Error::format(
                manifest_path,
                format!("object {} session {} has conflicting labels", e.object, e.session),
            ));
        }
        g.1.push(trace);
    }
    let mut fingerprints = Vec::with_capacity(order.len());
    let mut traces = Vec::with_capacity(manifest.entries.len());
    for key in order {
        let (label, mut group) = groups.remove(&key).expect("grouped above");
        let fp = build_fingerprint(&group, label)
            .map_err(|e| Error::format(manifest_path, format!("object {} session {}: {e}", key.0, key.1)))?;
        group.sort_by_key(|t| t.meta.angle);
        traces.extend(group);
        fingerprints.push(fp);
    }
    let mut ds = Dataset::new(fingerprints, manifest.class_count)?;
    ds.traces = traces;
    Ok(ds)
}

/// Rebuild a generated dataset from the generator spec and seed in its manifest.
pub fn regenerate(manifest: &DatasetManifest) -> Result<Dataset> {
    match (&manifest.generator, manifest.seed) {
        (Some(g), Some(seed)) => generate_dataset(&g.classes, g.samples_per_class, seed),
        _ => Err(Error::Data("manifest records no generator spec and seed".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::synth::{generate_background, mixed_difficulty};

    #[test]
    fn trace_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let t = generate_background(1, 0.013, 8).unwrap().remove(0);
        let p = dir.path().join("t.csv");
        save_trace(&t, &p).unwrap();
        let back = load_trace(&p, t.meta).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn short_file_names_expected_count() {
        let dir = tempfile::tempdir().unwrap();
        let t = generate_background(1, 0.0, 1).unwrap().remove(0);
        let p = dir.path().join("t.csv");
        save_trace(&t, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let truncated: Vec<&str> = text.lines().take(1600).collect();
        fs::write(&p, truncated.join("\n")).unwrap();
        let err = load_trace(&p, t.meta).unwrap_err().to_string();
        assert!(err.contains("expected 1600 points, found 1599"), "{err}");
    }

    #[test]
    fn malformed_rows_and_ordering() {
        let dir = tempfile::tempdir().unwrap();
        let t = generate_background(1, 0.0, 1).unwrap().remove(0);
        let p = dir.path().join("t.csv");
        save_trace(&t, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();

        let bad = text.replacen("frequency_hz,real,imag", "f,re,im", 1);
        fs::write(&p, &bad).unwrap();
        assert!(load_trace(&p, t.meta).unwrap_err().to_string().contains("header"));

        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[10] = "abc,1,2".into();
        fs::write(&p, lines.join("\n")).unwrap();
        assert!(load_trace(&p, t.meta).unwrap_err().to_string().contains("row 11"));

        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines.swap(5, 6);
        fs::write(&p, lines.join("\n")).unwrap();
        assert!(load_trace(&p, t.meta)
            .unwrap_err()
            .to_string()
            .contains("frequencies not"));

        assert!(matches!(
            load_trace(&dir.path().join("none.csv"), t.meta),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn dataset_round_trip_and_regeneration() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GeneratorSpec {
            classes: mixed_difficulty(3, 0.5, 4),
            samples_per_class: 2,
        };
        let ds = generate_dataset(&spec.classes, 2, 11).unwrap();
        let path = save_dataset(&ds, dir.path(), Some(11), Some(&spec)).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.class_count, ds.class_count);
        assert_eq!(back.labels(), ds.labels());
        for (a, b) in back.traces.iter().zip(&ds.traces) {
            assert_eq!(a.meta, b.meta);
            assert_eq!(a.frequencies(), b.frequencies());
            assert_eq!(a.samples(), b.samples());
        }
        assert!(back.fingerprints == ds.fingerprints);
        let manifest = DatasetManifest::read(&path).unwrap();
        assert_eq!(manifest.entries.len(), 18);
        assert_eq!(regenerate(&manifest).unwrap(), ds);
    }
}
