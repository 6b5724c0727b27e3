use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRACE_POINTS: usize = 1600;
pub const SWEEP_START_HZ: f64 = 675e6;
pub const SWEEP_STOP_HZ: f64 = 8.5e9;

/// Object orientation relative to the antenna pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Angle {
    #[serde(rename = "0")]
    Deg0,
    #[serde(rename = "45")]
    Deg45,
    #[serde(rename = "90")]
    Deg90,
}

impl Angle {
    pub const ALL: [Angle; 3] = [Angle::Deg0, Angle::Deg45, Angle::Deg90];

    pub fn degrees(self) -> u32 {
        match self {
            Angle::Deg0 => 0,
            Angle::Deg45 => 45,
            Angle::Deg90 => 90,
        }
    }

    pub fn from_degrees(deg: u32) -> Result<Self> {
        match deg {
            0 => Ok(Angle::Deg0),
            45 => Ok(Angle::Deg45),
            90 => Ok(Angle::Deg90),
            _ => Err(Error::Data(format!("unsupported angle {deg}°, expected 0, 45 or 90"))),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceMeta {
    /// `None` for empty-scene (background) sweeps.
    pub object: Option<usize>,
    pub angle: Option<Angle>,
    pub session: usize,
}

impl TraceMeta {
    pub fn object(object: usize, angle: Angle, session: usize) -> Self {
        TraceMeta {
            object: Some(object),
            angle: Some(angle),
            session,
        }
    }

    pub fn background(session: usize) -> Self {
        TraceMeta {
            object: None,
            angle: None,
            session,
        }
    }
}

/// The standard 1,600-point linear sweep.
pub fn frequency_grid() -> Vec<f64> {
    let step = (SWEEP_STOP_HZ - SWEEP_START_HZ) / (TRACE_POINTS - 1) as f64;
    (0..TRACE_POINTS).map(|i| SWEEP_START_HZ + step * i as f64).collect()
}

/// One complex S21 frequency sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    frequencies: Vec<f64>,
    samples: Vec<Complex64>,
    pub meta: TraceMeta,
}

pub(crate) fn check_grid(frequencies: &[f64]) -> std::result::Result<(), String> {
    if frequencies.len() != TRACE_POINTS {
        return Err(format!("expected {TRACE_POINTS} points, found {}", frequencies.len()));
    }
    let step = (frequencies[TRACE_POINTS - 1] - frequencies[0]) / (TRACE_POINTS - 1) as f64;
    for (i, w) in frequencies.windows(2).enumerate() {
        let d = w[1] - w[0];
        if !(d > 0.0) {
            return Err(format!("frequencies not strictly increasing at row {}", i + 1));
        }
        if (d - step).abs() > 1e-6 * step {
            return Err(format!("frequencies not linearly spaced at row {}", i + 1));
        }
    }
    Ok(())
}

impl Trace {
    pub fn new(frequencies: Vec<f64>, samples: Vec<Complex64>, meta: TraceMeta) -> Result<Self> {
        check_grid(&frequencies).map_err(Error::Data)?;
        if samples.len() != frequencies.len() {
            return Err(Error::Data(format!(
                "{} samples for {} frequencies",
                samples.len(),
                frequencies.len()
            )));
        }
        if samples.iter().any(|s| !s.re.is_finite() || !s.im.is_finite()) {
            return Err(Error::NonFinite("trace samples".into()));
        }
        Ok(Trace {
            frequencies,
            samples,
            meta,
        })
    }

    pub fn on_standard_grid(samples: Vec<Complex64>, meta: TraceMeta) -> Result<Self> {
        Trace::new(frequency_grid(), samples, meta)
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn real(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.re).collect()
    }

    pub fn imag(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.im).collect()
    }

    pub fn map_samples(&self, f: impl Fn(Complex64) -> Complex64) -> Trace {
        Trace {
            frequencies: self.frequencies.clone(),
            samples: self.samples.iter().map(|&s| f(s)).collect(),
            meta: self.meta,
        }
    }
}
