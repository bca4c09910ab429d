//! Ambient air: state, ISO 9613-1 pure-tone absorption and complex wavenumbers.

use std::f64::consts::{E, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard atmosphere, Pa.
pub const STANDARD_PRESSURE: f64 = 101_325.0;

/// Ambient air state shared by every field solver.
///
/// Density and sound speed are independent inputs; they are not derived from
/// the temperature, which only enters the absorption model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AirMedium {
    pub temperature_celsius: f64,
    /// Relative humidity in percent.
    pub relative_humidity: f64,
    /// kg/m³
    pub density: f64,
    /// m/s
    pub sound_speed: f64,
    /// Coefficient of nonlinearity β.
    pub nonlinearity: f64,
    #[serde(default = "default_pressure")]
    pub ambient_pressure: f64,
    /// Atmospheric absorption on or off for every frequency.
    #[serde(default = "default_true")]
    pub absorption: bool,
    /// Drop absorption at audio frequencies only.
    #[serde(default)]
    pub lossless_audio: bool,
}

fn default_pressure() -> f64 {
    STANDARD_PRESSURE
}

fn default_true() -> bool {
    true
}

impl Default for AirMedium {
    fn default() -> Self {
        Self::paper_default()
    }
}

impl AirMedium {
    /// 20 °C, 70 % RH, ρ0 = 1.21 kg/m³, c0 = 343 m/s, β = 1.2.
    pub fn paper_default() -> Self {
        Self {
            temperature_celsius: 20.0,
            relative_humidity: 70.0,
            density: 1.21,
            sound_speed: 343.0,
            nonlinearity: 1.2,
            ambient_pressure: STANDARD_PRESSURE,
            absorption: true,
            lossless_audio: false,
        }
    }

    /// Same state with absorption switched off everywhere.
    pub fn lossless(mut self) -> Self {
        self.absorption = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("density", self.density),
            ("sound_speed", self.sound_speed),
            ("nonlinearity", self.nonlinearity),
            ("ambient_pressure", self.ambient_pressure),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=100.0).contains(&self.relative_humidity) {
            return Err(Error::InvalidParameter(format!(
                "relative_humidity must lie in [0, 100], got {}",
                self.relative_humidity
            )));
        }
        if !(self.temperature_celsius.is_finite() && self.temperature_celsius > -273.15) {
            return Err(Error::InvalidParameter(format!(
                "temperature {} °C is not physical",
                self.temperature_celsius
            )));
        }
        Ok(())
    }

    /// Characteristic impedance ρ0·c0.
    pub fn impedance(&self) -> f64 {
        self.density * self.sound_speed
    }

    /// Pressure attenuation coefficient α(f) in Np/m after ISO 9613-1.
    ///
    /// Ignores the `absorption` switch; see [`AirMedium::complex_wavenumber`].
    pub fn absorption_coefficient(&self, frequency: f64) -> Result<f64> {
        if !(frequency.is_finite() && frequency > 0.0) {
            return Err(Error::Domain(format!("frequency must be positive, got {frequency}")));
        }
        const T0: f64 = 293.15;
        const T01: f64 = 273.16;
        let t = self.temperature_celsius + 273.15;
        let pa = self.ambient_pressure / STANDARD_PRESSURE;
        let c = -6.8346 * (T01 / t).powf(1.261) + 4.6151;
        // Molar concentration of water vapour, percent.
        let h = self.relative_humidity * 10f64.powf(c) / pa;
        let fr_o = pa * (24.0 + 4.04e4 * h * (0.02 + h) / (0.391 + h));
        let fr_n = pa
            * (t / T0).powf(-0.5)
            * (9.0 + 280.0 * h * (-4.170 * ((t / T0).powf(-1.0 / 3.0) - 1.0)).exp());
        let f2 = frequency * frequency;
        let db_per_m = 8.686
            * f2
            * (1.84e-11 / pa * (t / T0).sqrt()
                + (t / T0).powf(-2.5)
                    * (0.01275 * (-2239.1 / t).exp() / (fr_o + f2 / fr_o)
                        + 0.1068 * (-3352.0 / t).exp() / (fr_n + f2 / fr_n)));
        Ok(db_per_m / (20.0 * E.log10()))
    }

    /// k = ω/c0 + iα, with α = 0 when absorption is disabled.
    pub fn complex_wavenumber(&self, frequency: f64) -> Result<ComplexWavenumber> {
        let alpha = self.absorption_coefficient(frequency)?;
        Ok(ComplexWavenumber {
            real: 2.0 * PI * frequency / self.sound_speed,
            imag: if self.absorption { alpha } else { 0.0 },
        })
    }

    /// Wavenumber used for the demodulated audio field; honours `lossless_audio`.
    pub fn audio_wavenumber(&self, frequency: f64) -> Result<ComplexWavenumber> {
        let mut k = self.complex_wavenumber(frequency)?;
        if self.lossless_audio {
            k.imag = 0.0;
        }
        Ok(k)
    }
}

/// Complex wavenumber `real + i·imag`; `imag` is the attenuation in Np/m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexWavenumber {
    pub real: f64,
    pub imag: f64,
}

impl ComplexWavenumber {
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.real, self.imag)
    }

    /// exp(i k d)
    #[inline]
    pub fn propagator(&self, distance: f64) -> Complex64 {
        let mag = (-self.imag * distance).exp();
        let (s, c) = (self.real * distance).sin_cos();
        Complex64::new(mag * c, mag * s)
    }
}
