use serde::{Deserialize, Serialize};

use super::trace::{Angle, Trace, TRACE_POINTS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BLOCKS: usize = 6;
pub const FINGERPRINT_LEN: usize = BLOCKS * TRACE_POINTS;

/// Subtract the mean and divide by the sample standard deviation (n − 1).
pub fn normalize_block(values: &[f64]) -> Result<Vec<f64>> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Data(format!("cannot normalize a block of {n} values")));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    if !(std >= 1e-12) {
        return Err(Error::Data(format!("block has zero variance (std {std:e})")));
    }
    Ok(values.iter().map(|v| (v - mean) / std).collect())
}

/// One classifier input: three orientations × {real, imag}, each block normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub values: Vec<f64>,
    pub label: usize,
    pub session: usize,
}

fn block_name(angle: Angle, part: &str) -> String {
    format!("{}° {part}", angle.degrees())
}

/// Assemble `[0°: re, im | 45°: re, im | 90°: re, im]`; input order does not matter.
pub fn build_fingerprint(traces: &[Trace], label: usize) -> Result<Fingerprint> {
    if traces.len() != 3 {
        return Err(Error::Data(format!("fingerprint needs 3 traces, got {}", traces.len())));
    }
    let mut by_angle: [Option<&Trace>; 3] = [None; 3];
    for t in traces {
        let angle = t
            .meta
            .angle
            .ok_or_else(|| Error::Data("trace without an orientation".into()))?;
        if by_angle[angle.index()].replace(t).is_some() {
            return Err(Error::Data(format!("duplicate {}° trace", angle.degrees())));
        }
    }
    let (obj, session) = (traces[0].meta.object, traces[0].meta.session);
    if traces.iter().any(|t| t.meta.object != obj || t.meta.session != session) {
        return Err(Error::Data(
            "fingerprint traces come from different objects or sessions".into(),
        ));
    }
    let mut values = Vec::with_capacity(FINGERPRINT_LEN);
    for angle in Angle::ALL {
        let t = by_angle[angle.index()].ok_or_else(|| Error::Data(format!("missing {}° trace", angle.degrees())))?;
        for (part, raw) in [("real", t.real()), ("imag", t.imag())] {
            let block =
                normalize_block(&raw).map_err(|e| Error::Data(format!("{} block: {e}", block_name(angle, part))))?;
            values.extend(block);
        }
    }
    Ok(Fingerprint { values, label, session })
}

/// Check the per-block normalization contract within `tol`.
pub fn check_normalized(values: &[f64], block_len: usize, tol: f64) -> Result<()> {
    for (b, block) in values.chunks(block_len).enumerate() {
        let n = block.len() as f64;
        let mean = block.iter().sum::<f64>() / n;
        let std = (block.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        if mean.abs() > tol || (std - 1.0).abs() > tol {
            return Err(Error::Data(format!("block {b}: mean {mean:e}, std {std}")));
        }
    }
    Ok(())
}

/// Labelled fingerprints with equal counts per class.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub fingerprints: Vec<Fingerprint>,
    pub class_count: usize,
    /// Raw traces, three per fingerprint in fingerprint order; empty for subsets.
    pub traces: Vec<Trace>,
}

impl Dataset {
    pub fn new(fingerprints: Vec<Fingerprint>, class_count: usize) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::Data("dataset needs at least one class".into()));
        }
        if let Some(f) = fingerprints.iter().find(|f| f.label >= class_count) {
            return Err(Error::Data(format!(
                "label {} out of range for {class_count} classes",
                f.label
            )));
        }
        if let Some(w) = fingerprints.windows(2).find(|w| w[0].values.len() != w[1].values.len()) {
            return Err(Error::Data(format!(
                "fingerprints of different lengths ({} vs {})",
                w[0].values.len(),
                w[1].values.len()
            )));
        }
        Ok(Dataset {
            fingerprints,
            class_count,
            traces: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.fingerprints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fingerprints.is_empty()
    }

    pub fn input_len(&self) -> usize {
        self.fingerprints.first().map(|f| f.values.len()).unwrap_or(0)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.fingerprints.iter().map(|f| f.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for f in &self.fingerprints {
            counts[f.label] += 1;
        }
        counts
    }

    /// Indices of each class's samples, in dataset order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut idx = vec![Vec::new(); self.class_count];
        for (i, f) in self.fingerprints.iter().enumerate() {
            idx[f.label].push(i);
        }
        idx
    }

    /// Samples per class, or an error if classes are unbalanced.
    pub fn samples_per_class(&self) -> Result<usize> {
        let counts = self.class_counts();
        let first = counts[0];
        if let Some((c, &n)) = counts.iter().enumerate().find(|(_, &n)| n != first) {
            return Err(Error::Data(format!("class {c} has {n} samples, class 0 has {first}")));
        }
        Ok(first)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            fingerprints: indices.iter().map(|&i| self.fingerprints[i].clone()).collect(),
            class_count: self.class_count,
            traces: Vec::new(),
        }
    }

    /// Keep only classes `0..count`.
    pub fn first_classes(&self, count: usize) -> Result<Dataset> {
        if count == 0 || count > self.class_count {
            return Err(Error::Config(format!(
                "class count {count} not in 1..={}",
                self.class_count
            )));
        }
        Ok(Dataset {
            fingerprints: self.fingerprints.iter().filter(|f| f.label < count).cloned().collect(),
            class_count: count,
            traces: Vec::new(),
        })
    }

    /// `[n, len]` tensor of all fingerprints.
    pub fn inputs(&self) -> Result<Tensor> {
        let rows: Vec<&[f64]> = self.fingerprints.iter().map(|f| f.values.as_slice()).collect();
        Tensor::from_rows(&rows)
    }
}
