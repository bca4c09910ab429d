//! Experiment configuration.
//!
//! A TOML file is merged key by key over the preset it names (`desk` when
//! absent), so a config only needs the fields it changes.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mcpl_core::medium::AirMedium;
use mcpl_core::nonlinear::{CarrierSet, QuadSpec};
use mcpl_core::signal::FactorMode;
use mcpl_core::szc::{ZoneSpec, DEFAULT_REGULARIZATION};
use mcpl_core::ultrasound::PistonSource;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "desk" => Ok(Self::Desk),
            "paper" => Ok(Self::Paper),
            other => Err(format!("unknown preset '{other}' (expected desk or paper)")),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Desk => "desk",
            Self::Paper => "paper",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Linear,
    Log,
}

/// On-axis profile `z_min ..= z_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxialSpec {
    pub z_min: f64,
    pub z_max: f64,
    pub points: usize,
    pub spacing: Spacing,
}

impl AxialSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.z_min.is_finite() && self.z_max.is_finite() && 0.0 < self.z_min && self.z_min < self.z_max) {
            return Err(format!("axial range must satisfy 0 < z_min < z_max, got {} .. {}", self.z_min, self.z_max));
        }
        if self.points < 2 {
            return Err("axial profile needs at least two points".into());
        }
        Ok(())
    }

    pub fn z_values(&self) -> Vec<f64> {
        let n = self.points - 1;
        let mut z: Vec<f64> = (0..=n)
            .map(|i| {
                let t = i as f64 / n as f64;
                match self.spacing {
                    Spacing::Linear => self.z_min + t * (self.z_max - self.z_min),
                    Spacing::Log => self.z_min * (self.z_max / self.z_min).powf(t),
                }
            })
            .collect();
        z[0] = self.z_min;
        z[n] = self.z_max;
        z
    }
}

/// Drive-signal export settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub sample_rate: f64,
    pub duration: f64,
    pub factor: FactorMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub medium: AirMedium,
    pub piston: PistonSource,
    pub audio_frequencies: Vec<f64>,
    /// Nested carrier sets take the first `N` of these.
    pub carrier_frequencies: Vec<f64>,
    pub carrier_counts: Vec<usize>,
    pub bright: ZoneSpec,
    pub dark: ZoneSpec,
    pub axial: AxialSpec,
    /// Field map on the `Oxz` plane.
    pub map: ZoneSpec,
    pub quad: QuadSpec,
    pub regularization: f64,
    pub synth: SynthSpec,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    pub fn desk() -> Self {
        Self {
            preset: Preset::Desk,
            medium: AirMedium::paper_default(),
            piston: PistonSource::default(),
            audio_frequencies: vec![500.0, 1000.0, 2000.0, 4000.0],
            carrier_frequencies: vec![40e3, 80e3, 120e3, 160e3],
            carrier_counts: vec![1, 2, 3, 4],
            bright: ZoneSpec::paper_bright(),
            dark: ZoneSpec::paper_dark(),
            axial: AxialSpec {
                z_min: 0.05,
                z_max: 10.0,
                points: 200,
                spacing: Spacing::Log,
            },
            map: ZoneSpec {
                x_range: (-1.0, 1.0),
                z_range: (0.05, 6.0),
                nx: 61,
                nz: 121,
            },
            quad: QuadSpec::default(),
            regularization: DEFAULT_REGULARIZATION,
            synth: SynthSpec {
                sample_rate: 400e3,
                duration: 0.1,
                factor: FactorMode::Canonical,
            },
            cache_dir: PathBuf::from("mcpl-cache"),
            output_dir: PathBuf::from("mcpl-out"),
        }
    }

    /// Finer maps and profiles, every quadrature spacing halved.
    pub fn paper() -> Self {
        let desk = Self::desk();
        Self {
            preset: Preset::Paper,
            axial: AxialSpec {
                points: 400,
                ..desk.axial
            },
            map: ZoneSpec {
                nx: 201,
                nz: 301,
                ..desk.map
            },
            quad: desk.quad.refined(),
            ..desk
        }
    }

    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
        }
    }

    /// Parse TOML over a preset. `preset` in the file wins over `fallback`.
    pub fn from_toml_str(text: &str, fallback: Preset, origin: &str) -> CliResult<Self> {
        let err = |message: String| CliError::Config {
            path: origin.to_string(),
            message,
        };
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| err(e.to_string()))?;
        let preset = match user.get("preset") {
            Some(toml::Value::String(s)) => s.parse().map_err(err)?,
            Some(other) => return Err(err(format!("preset must be a string, got {other}"))),
            None => fallback,
        };
        let mut base = toml::Table::try_from(Self::preset(preset)).map_err(|e| err(e.to_string()))?;
        merge(&mut base, user);
        base.insert("preset".into(), toml::Value::String(preset.to_string()));
        let cfg: Self = toml::Value::Table(base).try_into().map_err(|e: toml::de::Error| err(e.to_string()))?;
        cfg.validate().map_err(err)?;
        Ok(cfg)
    }

    pub fn load(path: &Path, fallback: Preset) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(crate::error::io_err(path))?;
        Self::from_toml_str(&text, fallback, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Every violated constraint, one per line.
    pub fn validate(&self) -> Result<(), String> {
        let mut problems = Vec::new();
        let mut check = |what: &str, r: Result<(), String>| {
            if let Err(e) = r {
                problems.push(format!("{what}: {e}"));
            }
        };
        let core = |r: mcpl_core::Result<()>| r.map_err(|e| e.to_string());
        check("medium", core(self.medium.validate()));
        check("piston", core(self.piston.validate()));
        check("bright", core(self.bright.validate()));
        check("dark", core(self.dark.validate()));
        check("map", core(self.map.validate()));
        check("axial", self.axial.validate());
        check("quad", core(self.quad.validate()));
        if self.audio_frequencies.is_empty() {
            check("audio_frequencies", Err("at least one audio frequency is required".into()));
        }
        for &fa in &self.audio_frequencies {
            check(
                &format!("carrier_frequencies at f_a = {fa} Hz"),
                core(CarrierSet::new(&self.carrier_frequencies, fa).map(|_| ())),
            );
        }
        let n_max = self.carrier_frequencies.len();
        if self.carrier_counts.is_empty() {
            check("carrier_counts", Err("at least one carrier count is required".into()));
        }
        for &n in &self.carrier_counts {
            if n == 0 || n > n_max {
                check("carrier_counts", Err(format!("{n} is outside 1..={n_max}")));
            }
        }
        if !(self.regularization.is_finite() && self.regularization >= 0.0) {
            check("regularization", Err(format!("must be finite and non-negative, got {}", self.regularization)));
        }
        let s = &self.synth;
        if !(s.duration.is_finite() && s.duration > 0.0) {
            check("synth.duration", Err(format!("must be positive, got {}", s.duration)));
        }
        let top = self
            .audio_frequencies
            .iter()
            .flat_map(|fa| self.carrier_frequencies.iter().map(move |fc| fc + 0.5 * fa))
            .fold(0.0, f64::max);
        if !(s.sample_rate > 2.0 * top) {
            check(
                "synth.sample_rate",
                Err(format!("{} Hz does not exceed twice the highest sideband ({top} Hz)", s.sample_rate)),
            );
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems.join("\n"))
        }
    }

    /// SHA-256 of the canonical JSON form, file-system paths excluded.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("cache_dir");
            m.remove("output_dir");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    pub fn short_hash(&self) -> String {
        self.hash()[..12].to_string()
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
