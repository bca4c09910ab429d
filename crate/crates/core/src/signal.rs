//! Drive-signal synthesis for the single emitter.
//!
//! Carrier `n` contributes `s_n(t) = w1 exp(-iω1 t) + w2 exp(-iω2 t)`; the
//! emitted signal is the real part of the sum, peak-normalized.

use std::f64::consts::TAU;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonlinear::CarrierSet;

/// How an audio weight is split between the two sidebands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorMode {
    /// `w1 = 1`, `w2 = w`.
    #[default]
    Canonical,
    /// Equal magnitudes `√|w|`, phase split evenly.
    Balanced,
}

/// Sideband weights with `conj(w1)·w2 = w`.
pub fn factor_weights(w: Complex64, mode: FactorMode) -> (Complex64, Complex64) {
    match mode {
        FactorMode::Canonical => (Complex64::new(1.0, 0.0), w),
        FactorMode::Balanced => {
            let (r, phi) = w.to_polar();
            let m = r.sqrt();
            (Complex64::from_polar(m, -0.5 * phi), Complex64::from_polar(m, 0.5 * phi))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveSignal {
    pub sample_rate: f64,
    pub duration: f64,
    pub samples: Vec<f64>,
    /// Multiplier applied to the raw sum to bring its peak to 1.
    pub gain: f64,
    pub audio_frequency: f64,
    pub carriers: Vec<f64>,
    pub weights: Vec<Complex64>,
    pub sideband_weights: Vec<(Complex64, Complex64)>,
}

pub fn synthesize(
    carriers: &CarrierSet,
    weights: &[Complex64],
    sample_rate: f64,
    duration: f64,
    mode: FactorMode,
) -> Result<DriveSignal> {
    carriers.validate()?;
    if weights.len() != carriers.len() {
        return Err(Error::Contract(format!("{} weights for {} carriers", weights.len(), carriers.len())));
    }
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::Config(format!("duration must be positive, got {duration}")));
    }
    for ch in &carriers.channels {
        let f = ch.upper_frequency();
        if !(sample_rate > 2.0 * f) {
            return Err(Error::Config(format!(
                "sample rate {sample_rate} Hz does not exceed twice the {f} Hz upper sideband of the {} Hz carrier",
                ch.center_frequency
            )));
        }
    }
    let n = (duration * sample_rate).round() as usize;
    // A zero weight switches the carrier off; the canonical split would
    // otherwise leave its lower sideband at unit amplitude.
    let parts: Vec<(Complex64, Complex64)> = weights
        .iter()
        .map(|&w| {
            if w == Complex64::new(0.0, 0.0) {
                (w, w)
            } else {
                factor_weights(w, mode)
            }
        })
        .collect();
    let tones: Vec<(f64, Complex64)> = carriers
        .channels
        .iter()
        .zip(&parts)
        .flat_map(|(ch, &(w1, w2))| [(ch.lower_frequency(), w1), (ch.upper_frequency(), w2)])
        .collect();
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            tones
                .iter()
                .map(|&(f, w)| {
                    // Reduce the phase in cycles before scaling to radians.
                    let cycles = f * i as f64 / sample_rate;
                    let phase = -TAU * (cycles - cycles.floor());
                    (w * Complex64::from_polar(1.0, phase)).re
                })
                .sum()
        })
        .collect();
    let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 0.0 { 1.0 / peak } else { 1.0 };
    Ok(DriveSignal {
        sample_rate,
        duration,
        samples: raw.iter().map(|v| v * gain).collect(),
        gain,
        audio_frequency: carriers.audio_frequency(),
        carriers: carriers.center_frequencies(),
        weights: weights.to_vec(),
        sideband_weights: parts,
    })
}

/// Mono 32-bit float WAV.
pub fn write_wav(signal: &DriveSignal, path: &Path) -> Result<()> {
    let rate = signal.sample_rate.round();
    if (rate - signal.sample_rate).abs() > 1e-9 || rate > u32::MAX as f64 {
        return Err(Error::Config(format!("WAV needs an integral sample rate, got {}", signal.sample_rate)));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rate as u32,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let io = |e: hound::Error| Error::Config(format!("writing {}: {e}", path.display()));
    let mut w = hound::WavWriter::create(path, spec).map_err(io)?;
    for &s in &signal.samples {
        w.write_sample(s as f32).map_err(io)?;
    }
    w.finalize().map_err(io)
}

/// `time_s,amplitude` rows.
pub fn write_csv(signal: &DriveSignal, path: &Path) -> Result<()> {
    let io = |e: csv::Error| Error::Config(format!("writing {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["time_s", "amplitude"]).map_err(io)?;
    for (i, s) in signal.samples.iter().enumerate() {
        let t = i as f64 / signal.sample_rate;
        w.write_record([format!("{t:e}"), format!("{s:e}")]).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Config(format!("writing {}: {e}", path.display())))
}
