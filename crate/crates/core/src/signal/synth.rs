//! Synthetic stand-in for measured S21 sweeps: Lorentzian resonances over a
//! fixed chamber response, with per-session jitter and complex Gaussian noise.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fingerprint::{build_fingerprint, Dataset};
use super::trace::{frequency_grid, Angle, Trace, TraceMeta, SWEEP_START_HZ, SWEEP_STOP_HZ};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resonance {
    pub center_hz: f64,
    /// Full width at half maximum.
    pub width_hz: f64,
    pub amplitude: Complex64,
    /// Gain applied at 0°, 45° and 90°.
    pub angle_gain: [f64; 3],
}

impl Resonance {
    /// Complex Lorentzian `A / (1 + j·2(f − f0)/w)`.
    pub fn response(&self, f: f64, center_shift: f64, gain: f64) -> Complex64 {
        let x = 2.0 * (f - self.center_hz - center_shift) / self.width_hz;
        self.amplitude * gain / Complex64::new(1.0, x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticClassSpec {
    pub resonances: Vec<Resonance>,
    /// Standard deviation of each noise component (real and imaginary).
    pub noise: f64,
    /// Per-session center shift, as a fraction of each resonance's width.
    #[serde(default)]
    pub center_jitter: f64,
    /// Per-session relative amplitude jitter.
    #[serde(default)]
    pub amplitude_jitter: f64,
    /// Propagation delay of the object response.
    #[serde(default)]
    pub delay_ns: f64,
    /// Per-session delay jitter (placement repeatability).
    #[serde(default)]
    pub delay_jitter_ns: f64,
}

impl SyntheticClassSpec {
    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.resonances.iter().enumerate() {
            if !(SWEEP_START_HZ..=SWEEP_STOP_HZ).contains(&r.center_hz) {
                return Err(Error::Config(format!(
                    "resonance {i} at {} Hz lies outside the {SWEEP_START_HZ}-{SWEEP_STOP_HZ} Hz sweep",
                    r.center_hz
                )));
            }
            if !(r.width_hz > 0.0) {
                return Err(Error::Config(format!("resonance {i} has non-positive width")));
            }
        }
        let knobs = [
            self.noise,
            self.center_jitter,
            self.amplitude_jitter,
            self.delay_jitter_ns,
        ];
        if knobs.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Config("noise and jitter levels must be non-negative".into()));
        }
        Ok(())
    }
}

/// Empty-chamber response: direct antenna coupling with a slow ripple.
pub fn chamber_response(f: f64) -> Complex64 {
    let ghz = f / 1e9;
    let coupling = 0.05 * (1.0 + 0.1 * (ghz / 0.7).sin());
    Complex64::from_polar(coupling, -2.0 * PI * ghz * 5.0)
}

/// Full generator input: per-class specs plus counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub classes: Vec<SyntheticClassSpec>,
    pub samples_per_class: usize,
}

impl GeneratorSpec {
    /// The bundled benchmark: 17 classes × 12 sessions, mixed difficulty.
    pub fn benchmark() -> Self {
        GeneratorSpec {
            classes: mixed_difficulty(17, 0.8, 2024),
            samples_per_class: 12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::Config("generator needs at least 2 classes".into()));
        }
        if self.samples_per_class < 2 {
            return Err(Error::Config("generator needs at least 2 samples per class".into()));
        }
        for (c, spec) in self.classes.iter().enumerate() {
            spec.validate().map_err(|e| Error::Config(format!("class {c}: {e}")))?;
        }
        Ok(())
    }
}

/// Class specs whose distinctiveness falls with class index.
///
/// Every class shares a set of common resonances. Class `c` adds its own
/// resonances scaled by `1 − difficulty·c/(classes − 1)`, so low indices are
/// easy (strong, distinct peaks) and high indices are dominated by the shared
/// structure, session jitter and noise.
pub fn mixed_difficulty(classes: usize, difficulty: f64, seed: u64) -> Vec<SyntheticClassSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let band = SWEEP_STOP_HZ - SWEEP_START_HZ;
    let common: Vec<Resonance> = (0..4)
        .map(|i| Resonance {
            center_hz: SWEEP_START_HZ + band * (0.12 + 0.22 * i as f64),
            width_hz: 4e8,
            amplitude: Complex64::from_polar(0.02, rng.random_range(0.0..2.0 * PI)),
            angle_gain: [1.0, 0.8, 0.9],
        })
        .collect();
    (0..classes)
        .map(|c| {
            let strength = if classes > 1 {
                1.0 - difficulty.clamp(0.0, 1.0) * c as f64 / (classes - 1) as f64
            } else {
                1.0
            };
            let mut resonances = common.clone();
            for _ in 0..3 {
                resonances.push(Resonance {
                    center_hz: SWEEP_START_HZ + band * rng.random_range(0.05..0.95),
                    width_hz: rng.random_range(1.0e8..3.0e8),
                    amplitude: Complex64::from_polar(
                        0.012 * strength * rng.random_range(0.7..1.3),
                        rng.random_range(0.0..2.0 * PI),
                    ),
                    angle_gain: [
                        rng.random_range(0.4..1.2),
                        rng.random_range(0.4..1.2),
                        rng.random_range(0.4..1.2),
                    ],
                });
            }
            SyntheticClassSpec {
                resonances,
                noise: 0.002,
                center_jitter: 0.15,
                amplitude_jitter: 0.15,
                delay_ns: 2.0,
                delay_jitter_ns: 0.004,
            }
        })
        .collect()
}

/// Draws one session's jitter once and applies it to all three orientations.
fn session_traces(spec: &SyntheticClassSpec, object: usize, session: usize, seed: u64) -> Result<Vec<Trace>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let shifts: Vec<(f64, f64)> = spec
        .resonances
        .iter()
        .map(|r| {
            (
                spec.center_jitter * r.width_hz * std_normal.sample(&mut rng),
                1.0 + spec.amplitude_jitter * std_normal.sample(&mut rng),
            )
        })
        .collect();
    let delay = (spec.delay_ns + spec.delay_jitter_ns * std_normal.sample(&mut rng)) * 1e-9;
    let grid = frequency_grid();
    Angle::ALL
        .iter()
        .map(|&angle| {
            let samples = grid
                .iter()
                .map(|&f| {
                    let mut obj = Complex64::new(0.0, 0.0);
                    for (r, &(shift, scale)) in spec.resonances.iter().zip(&shifts) {
                        obj += r.response(f, shift, scale * r.angle_gain[angle.index()]);
                    }
                    let noise = Complex64::new(
                        spec.noise * std_normal.sample(&mut rng),
                        spec.noise * std_normal.sample(&mut rng),
                    );
                    chamber_response(f) + obj * Complex64::from_polar(1.0, -2.0 * PI * f * delay) + noise
                })
                .collect();
            Trace::new(grid.clone(), samples, TraceMeta::object(object, angle, session))
        })
        .collect()
}

/// Generate `samples_per_class` sessions per class. A pure function of its
/// arguments; fingerprints are class-major.
pub fn generate_dataset(specs: &[SyntheticClassSpec], samples_per_class: usize, seed: u64) -> Result<Dataset> {
    let gen = GeneratorSpec {
        classes: specs.to_vec(),
        samples_per_class,
    };
    gen.validate()?;
    let jobs: Vec<(usize, usize)> = (0..specs.len())
        .flat_map(|c| (0..samples_per_class).map(move |k| (c, k)))
        .collect();
    let sessions: Vec<Vec<Trace>> = jobs
        .par_iter()
        .map(|&(c, k)| session_traces(&specs[c], c, k, derive_seed(seed, &[c as u64, k as u64])))
        .collect::<Result<_>>()?;
    let fingerprints = sessions
        .iter()
        .zip(&jobs)
        .map(|(traces, &(c, _))| build_fingerprint(traces, c))
        .collect::<Result<Vec<_>>>()?;
    let mut ds = Dataset::new(fingerprints, specs.len())?;
    ds.traces = sessions.into_iter().flatten().collect();
    Ok(ds)
}

/// Empty-chamber sweeps with complex Gaussian noise of per-component std `noise`.
pub fn generate_background(count: usize, noise: f64, seed: u64) -> Result<Vec<Trace>> {
    let grid = frequency_grid();
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    (0..count)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[k as u64]));
            let samples = grid
                .iter()
                .map(|&f| {
                    chamber_response(f)
                        + Complex64::new(noise * std_normal.sample(&mut rng), noise * std_normal.sample(&mut rng))
                })
                .collect();
            Trace::new(grid.clone(), samples, TraceMeta::background(k))
        })
        .collect()
}
