//! Background subtraction, SNR and relative radar cross section.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::trace::{Angle, Trace};
use crate::error::{Error, Result};

/// Pointwise complex mean of empty-scene sweeps.
pub fn background_average(traces: &[Trace]) -> Result<Trace> {
    let first = traces
        .first()
        .ok_or_else(|| Error::Data("background average needs at least one trace".into()))?;
    if let Some(i) = traces.iter().position(|t| t.frequencies() != first.frequencies()) {
        return Err(Error::Data(format!(
            "background trace {i} is on a different frequency grid"
        )));
    }
    let n = traces.len() as f64;
    let mut acc = vec![Complex64::new(0.0, 0.0); first.len()];
    for t in traces {
        for (a, s) in acc.iter_mut().zip(t.samples()) {
            *a += s;
        }
    }
    Trace::new(
        first.frequencies().to_vec(),
        acc.into_iter().map(|a| a / n).collect(),
        super::trace::TraceMeta::background(0),
    )
}

/// `|trace − background|` per frequency point.
pub fn subtracted_magnitude(trace: &Trace, background: &Trace) -> Result<Vec<f64>> {
    if trace.frequencies() != background.frequencies() {
        return Err(Error::Data(
            "trace and background are on different frequency grids".into(),
        ));
    }
    Ok(trace
        .samples()
        .iter()
        .zip(background.samples())
        .map(|(a, b)| (a - b).norm())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrConfig {
    /// Points averaged around the magnitude peak.
    pub signal_window: usize,
    /// First index of the noise-estimation region.
    pub flat_start: usize,
    pub flat_len: usize,
}

impl Default for SnrConfig {
    fn default() -> Self {
        SnrConfig {
            signal_window: 100,
            flat_start: 1400,
            flat_len: 100,
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// SNR in dB from a background-subtracted magnitude trace: mean of the
/// window centered on the peak over the sample std of the flat region.
pub fn snr_from_magnitude(magnitude: &[f64], cfg: &SnrConfig) -> Result<f64> {
    let n = magnitude.len();
    if cfg.signal_window == 0 || cfg.signal_window > n || cfg.flat_len < 2 || cfg.flat_start + cfg.flat_len > n {
        return Err(Error::Config(format!(
            "SNR windows {cfg:?} do not fit a {n}-point trace"
        )));
    }
    let peak = magnitude
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > magnitude[best] { i } else { best });
    let start = peak.saturating_sub(cfg.signal_window / 2).min(n - cfg.signal_window);
    let signal = mean(&magnitude[start..start + cfg.signal_window]);
    let noise = sample_std(&magnitude[cfg.flat_start..cfg.flat_start + cfg.flat_len]);
    if !(noise > 0.0) {
        return Err(Error::Data("noise estimate is zero; SNR undefined".into()));
    }
    Ok(20.0 * (signal / noise).log10())
}

pub fn snr_db(trace: &Trace, background: &Trace, cfg: &SnrConfig) -> Result<f64> {
    snr_from_magnitude(&subtracted_magnitude(trace, background)?, cfg)
}

/// Trapezoidal integral of `y` over the abscissae `x`.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// Relative RCS for one object orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RrcsEntry {
    pub object: usize,
    pub angle: Angle,
    pub value: f64,
    /// Sample std over the group's traces (same normalization), 0 for one trace.
    pub std: f64,
    pub traces: usize,
}

/// Area under each background-subtracted magnitude curve, averaged per
/// (object, orientation) and divided by the largest average.
pub fn rrcs(traces: &[Trace], background: &Trace) -> Result<Vec<RrcsEntry>> {
    if traces.is_empty() {
        return Err(Error::Data("rRCS needs at least one object trace".into()));
    }
    let mut groups: BTreeMap<(usize, Angle), Vec<f64>> = BTreeMap::new();
    for (i, t) in traces.iter().enumerate() {
        let (Some(obj), Some(angle)) = (t.meta.object, t.meta.angle) else {
            return Err(Error::Data(format!("trace {i} has no object/orientation metadata")));
        };
        let area = trapezoid(t.frequencies(), &subtracted_magnitude(t, background)?);
        groups.entry((obj, angle)).or_default().push(area);
    }
    let max = groups.values().map(|v| mean(v)).fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(Error::Data("all object traces equal the background".into()));
    }
    Ok(groups
        .into_iter()
        .map(|((object, angle), areas)| RrcsEntry {
            object,
            angle,
            value: mean(&areas) / max,
            std: if areas.len() > 1 { sample_std(&areas) / max } else { 0.0 },
            traces: areas.len(),
        })
        .collect())
}

/// One row of the signal-strength table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrengthRow {
    pub object: usize,
    pub angle: Angle,
    pub snr_db: f64,
    pub snr_std: f64,
    pub rrcs: f64,
    pub rrcs_std: f64,
}

pub fn strength_table(traces: &[Trace], background: &Trace, cfg: &SnrConfig) -> Result<Vec<StrengthRow>> {
    let mut snrs: BTreeMap<(usize, Angle), Vec<f64>> = BTreeMap::new();
    for t in traces {
        if let (Some(o), Some(a)) = (t.meta.object, t.meta.angle) {
            snrs.entry((o, a)).or_default().push(snr_db(t, background, cfg)?);
        }
    }
    Ok(rrcs(traces, background)?
        .into_iter()
        .map(|e| {
            let s = &snrs[&(e.object, e.angle)];
            StrengthRow {
                object: e.object,
                angle: e.angle,
                snr_db: mean(s),
                snr_std: if s.len() > 1 { sample_std(s) } else { 0.0 },
                rrcs: e.value,
                rrcs_std: e.std,
            }
        })
        .collect())
}

pub fn strength_csv(rows: &[StrengthRow]) -> String {
    let mut s = String::from("object,angle_deg,snr_db,snr_std,rrcs,rrcs_std\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.object,
            r.angle.degrees(),
            r.snr_db,
            r.snr_std,
            r.rrcs,
            r.rrcs_std
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::synth::generate_background;
    use crate::signal::trace::{TraceMeta, TRACE_POINTS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn flat(v: f64) -> Vec<f64> {
        vec![v; TRACE_POINTS]
    }

    #[test]
    fn ratio_of_ten_is_twenty_db() {
        // Peak region of exactly 10, flat region with sample std exactly 1:
        // 99 zeros and one 10 gives mean 0.1 and sum of squares 99.
        let mut m = flat(0.0);
        m[..300].fill(10.0);
        m[1450] = 10.0;
        let cfg = SnrConfig::default();
        let flat_std = sample_std(&m[1400..1500]);
        assert!((flat_std - 1.0).abs() < 1e-12);
        let snr = snr_from_magnitude(&m, &cfg).unwrap();
        assert!((snr - 20.0).abs() < 1e-9, "{snr}");
    }

    #[test]
    fn snr_errors() {
        let m = flat(1.0);
        assert!(snr_from_magnitude(&m, &SnrConfig::default()).is_err());
        let cfg = SnrConfig {
            flat_start: 1550,
            ..SnrConfig::default()
        };
        assert!(matches!(snr_from_magnitude(&m, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn trapezoid_of_rectangle_pulse() {
        let x: Vec<f64> = (0..1001).map(|i| i as f64 * 1e6).collect();
        let (h, lo, hi) = (0.3, 200, 700);
        let y: Vec<f64> = (0..1001)
            .map(|i| if (lo..=hi).contains(&i) { h } else { 0.0 })
            .collect();
        let b = x[hi] - x[lo];
        // Exact for the piecewise-linear interpolant: h·B plus one step of ramps.
        let area = trapezoid(&x, &y);
        assert!((area - h * (b + 1e6)).abs() < 1e-6);
        assert!((area - h * b).abs() <= h * 1e6 + 1e-6);
    }

    fn object_trace(bg: &Trace, object: usize, angle: Angle, amp: f64) -> Trace {
        let mut t = bg.map_samples(|s| s);
        t = Trace::new(
            t.frequencies().to_vec(),
            t.samples()
                .iter()
                .enumerate()
                .map(|(i, s)| s + Complex64::new(amp * (1.0 + (i as f64 * 0.01).sin()), 0.0))
                .collect(),
            TraceMeta::object(object, angle, 0),
        )
        .unwrap();
        t
    }

    #[test]
    fn rrcs_normalization_and_scale_invariance() {
        let bg = generate_background(1, 0.0, 0).unwrap().remove(0);
        let single = rrcs(&[object_trace(&bg, 0, Angle::Deg0, 0.1)], &bg).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].value, 1.0);

        let traces = vec![
            object_trace(&bg, 0, Angle::Deg0, 0.1),
            object_trace(&bg, 0, Angle::Deg45, 0.05),
            object_trace(&bg, 1, Angle::Deg0, 0.3),
            object_trace(&bg, 1, Angle::Deg0, 0.2),
        ];
        let table = rrcs(&traces, &bg).unwrap();
        assert_eq!(table.iter().filter(|e| e.value == 1.0).count(), 1);
        assert!(table.iter().all(|e| (0.0..=1.0).contains(&e.value)));

        let doubled: Vec<Trace> = traces.iter().map(|t| t.map_samples(|s| s * 2.0)).collect();
        let bg2 = bg.map_samples(|s| s * 2.0);
        for (a, b) in table.iter().zip(rrcs(&doubled, &bg2).unwrap()) {
            assert!((a.value - b.value).abs() < 1e-12);
        }
        assert!(rrcs(&[], &bg).is_err());
    }

    #[test]
    fn snr_invariant_under_global_phase() {
        let bg = generate_background(1, 0.0, 3).unwrap().remove(0);
        let noisy = generate_background(1, 0.01, 4).unwrap().remove(0);
        let obj = Trace::new(
            noisy.frequencies().to_vec(),
            noisy
                .samples()
                .iter()
                .enumerate()
                .map(|(i, s)| s + Complex64::new(0.2 / (1.0 + ((i as f64 - 400.0) / 30.0).powi(2)), 0.0))
                .collect(),
            TraceMeta::object(0, Angle::Deg0, 0),
        )
        .unwrap();
        let base = snr_db(&obj, &bg, &SnrConfig::default()).unwrap();
        for phi in [0.3, 1.7, -2.9] {
            let rot = Complex64::from_polar(1.0, phi);
            let got = snr_db(
                &obj.map_samples(|s| s * rot),
                &bg.map_samples(|s| s * rot),
                &SnrConfig::default(),
            )
            .unwrap();
            assert!((got - base).abs() < 1e-9);
        }
    }

    #[test]
    fn background_average_examples() {
        let t = generate_background(1, 0.1, 1).unwrap().remove(0);
        let avg = background_average(&[t.clone(), t.clone()]).unwrap();
        for (a, b) in avg.samples().iter().zip(t.samples()) {
            assert!((a - b).norm() < 1e-15);
        }
        let neg = t.map_samples(|s| -s);
        let zero = background_average(&[t, neg]).unwrap();
        assert!(zero.samples().iter().all(|s| s.norm() == 0.0));
        assert!(background_average(&[]).is_err());
    }

    #[test]
    fn averaging_reduces_noise_by_sqrt_n() {
        let sigma = 0.01;
        let traces = generate_background(112, sigma, 77).unwrap();
        let avg = background_average(&traces).unwrap();
        let residual: Vec<f64> = avg
            .samples()
            .iter()
            .zip(avg.frequencies())
            .map(|(s, &f)| (s - super::super::synth::chamber_response(f)).re)
            .collect();
        let measured = sample_std(&residual);
        let expected = sigma / 112f64.sqrt();
        assert!((measured / expected - 1.0).abs() < 0.2, "{measured} vs {expected}");
    }

    /// Noise-only object trace: independent Monte-Carlo estimate of what the
    /// estimator should return when there is no target.
    #[test]
    fn noise_only_snr_matches_monte_carlo() {
        let sigma = 0.01;
        let bg_traces = generate_background(112, sigma, 5).unwrap();
        let bg = background_average(&bg_traces).unwrap();
        let cfg = SnrConfig::default();
        let mut estimator = Vec::new();
        for k in 0..20 {
            let obj = generate_background(1, sigma, 1000 + k).unwrap().remove(0);
            estimator.push(snr_db(&obj, &bg, &cfg).unwrap());
        }
        // Oracle: residual magnitude of two complex Gaussians (object noise
        // plus the averaged background's), simulated directly.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let eff = sigma * (1.0 + 1.0 / 112.0f64).sqrt();
        let nrm = Normal::new(0.0, eff).unwrap();
        let mut oracle = Vec::new();
        for _ in 0..200 {
            let m: Vec<f64> = (0..TRACE_POINTS)
                .map(|_| nrm.sample(&mut rng).hypot(nrm.sample(&mut rng)))
                .collect();
            oracle.push(snr_from_magnitude(&m, &cfg).unwrap());
        }
        let (e, o) = (mean(&estimator), mean(&oracle));
        assert!((e - o).abs() < 1.0, "estimator {e} dB vs oracle {o} dB");
        // No target: the estimate stays at the noise floor, far below a real scatterer.
        assert!(e.abs() < 10.0);
    }
}
