//! The end-to-end pipeline: transfer grids (cached per carrier and point
//! group), ACC weights per nested carrier set, profiles, maps and summary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mcpl_core::nonlinear::{
    spl, transfer_on_points, AudioTransferGrid, CarrierChannel, CarrierSet, ObsPoint, TransferProvenance,
    VirtualSourceGrid, VolumeTruncation,
};
use mcpl_core::signal::{synthesize, write_csv, write_wav, DriveSignal};
use mcpl_core::szc::{
    acc_solve, acoustic_contrast, build_transfer_matrix, effective_propagation_distance, eigen_residual,
    AccSolution, IndexedTransfer, TransferMatrix, REFERENCE_CARRIER,
};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cache::{self, EXTENSION};
use crate::config::ExperimentConfig;
use crate::error::{io_err, CliError, CliResult};

/// Bumped whenever a change in the numerics invalidates cached transfers.
pub const NUMERICS_REVISION: u32 = 2;

/// Level below the map maximum that bounds the reported map extent.
pub const MAP_CONTOUR_DB: f64 = -10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Full,
    Axial,
    Map,
    Weights,
}

impl Scope {
    fn groups(self) -> &'static [Group] {
        match self {
            Scope::Full => &[Group::Zones, Group::Axial, Group::Map],
            Scope::Axial => &[Group::Zones, Group::Axial],
            Scope::Map => &[Group::Zones, Group::Map],
            Scope::Weights => &[Group::Zones],
        }
    }
}

/// Observation points that are cached together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Zones,
    Axial,
    Map,
}

/// The field depends on `|x|` only, so points are stored with `x ≥ 0`,
/// sorted and deduplicated.
pub fn canonical_points(points: impl IntoIterator<Item = ObsPoint>) -> Vec<ObsPoint> {
    let mut v: Vec<ObsPoint> = points.into_iter().map(|p| ObsPoint::new(p.rho(), p.z)).collect();
    v.sort_by(|a, b| a.z.total_cmp(&b.z).then(a.x.total_cmp(&b.x)));
    v.dedup_by(|a, b| a.x.to_bits() == b.x.to_bits() && a.z.to_bits() == b.z.to_bits());
    v
}

pub fn group_points(cfg: &ExperimentConfig, group: Group) -> Vec<ObsPoint> {
    match group {
        Group::Zones => canonical_points(cfg.bright.points().into_iter().chain(cfg.dark.points())),
        Group::Axial => cfg.axial.z_values().into_iter().map(|z| ObsPoint::new(0.0, z)).collect(),
        Group::Map => canonical_points(cfg.map.points()),
    }
}

/// Counters and notices from one pass over the transfer cache.
#[derive(Debug, Default, Clone)]
pub struct CacheStats {
    pub loaded: usize,
    pub computed: usize,
    pub notices: Vec<String>,
}

#[derive(Serialize)]
struct CacheKey<'a> {
    revision: u32,
    medium: &'a mcpl_core::medium::AirMedium,
    piston: &'a mcpl_core::ultrasound::PistonSource,
    quad: &'a mcpl_core::nonlinear::QuadSpec,
    center_frequency: f64,
    audio_frequency: f64,
    points: String,
}

fn points_digest(points: &[ObsPoint]) -> String {
    let mut h = Sha256::new();
    for p in points {
        h.update(p.x.to_le_bytes());
        h.update(p.z.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn same_bits(a: &[ObsPoint], b: &[ObsPoint]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(p, q)| p.x.to_bits() == q.x.to_bits() && p.z.to_bits() == q.z.to_bits())
}

/// Transfer grids for one audio frequency, all configured carriers.
pub struct TransferSet {
    pub audio_frequency: f64,
    pub carriers: CarrierSet,
    pub grids: BTreeMap<Group, AudioTransferGrid>,
}

impl TransferSet {
    pub fn grid(&self, group: Group) -> CliResult<&AudioTransferGrid> {
        self.grids
            .get(&group)
            .ok_or_else(|| CliError::Core(mcpl_core::Error::Contract(format!("{group:?} transfers were not computed"))))
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut w: Vec<String> = self.grids.values().flat_map(|g| g.provenance.warnings.clone()).collect();
        w.sort();
        w.dedup();
        w
    }
}

pub struct Experiment {
    pub config: ExperimentConfig,
    pub hash: String,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> CliResult<Self> {
        config.validate().map_err(|message| CliError::Config {
            path: "<config>".into(),
            message,
        })?;
        let hash = config.hash();
        Ok(Self { config, hash })
    }

    fn cache_path(&self, channel: &CarrierChannel, points: &[ObsPoint]) -> PathBuf {
        let key = CacheKey {
            revision: NUMERICS_REVISION,
            medium: &self.config.medium,
            piston: &self.config.piston,
            quad: &self.config.quad,
            center_frequency: channel.center_frequency,
            audio_frequency: channel.audio_frequency,
            points: points_digest(points),
        };
        let digest = Sha256::digest(serde_json::to_vec(&key).expect("key serializes"));
        self.config
            .cache_dir
            .join(format!("transfer-{}.{EXTENSION}", &hex::encode(digest)[..32]))
    }

    fn load_cached(&self, path: &Path, channel: &CarrierChannel, points: &[ObsPoint], stats: &mut CacheStats) -> Option<AudioTransferGrid> {
        if !path.exists() {
            return None;
        }
        match cache::load_transfer(path) {
            Ok(g) => {
                let p = &g.provenance;
                let matches = same_bits(&g.points, points)
                    && g.carriers == [channel.center_frequency]
                    && g.audio_frequency == channel.audio_frequency
                    && p.quad == self.config.quad
                    && p.medium == self.config.medium
                    && p.source == self.config.piston;
                if matches {
                    return Some(g);
                }
                let msg = format!("{} was written for different inputs; recomputing", path.display());
                log::warn!("{msg}");
                stats.notices.push(msg);
            }
            Err(e) => {
                let msg = format!("{e}; recomputing");
                log::warn!("{msg}");
                stats.notices.push(msg);
            }
        }
        None
    }

    /// Load or compute every requested group for one audio frequency.
    pub fn transfers(&self, audio_frequency: f64, groups: &[Group], stats: &mut CacheStats) -> CliResult<TransferSet> {
        let cfg = &self.config;
        let carriers = CarrierSet::new(&cfg.carrier_frequencies, audio_frequency)?;
        let points: Vec<(Group, Vec<ObsPoint>)> = groups.iter().map(|&g| (g, group_points(cfg, g))).collect();
        let mut columns: Vec<Vec<AudioTransferGrid>> = vec![Vec::new(); groups.len()];
        for channel in &carriers.channels {
            let mut found: Vec<Option<AudioTransferGrid>> = Vec::with_capacity(groups.len());
            for (_, pts) in &points {
                let path = self.cache_path(channel, pts);
                found.push(self.load_cached(&path, channel, pts, stats));
            }
            stats.loaded += found.iter().filter(|g| g.is_some()).count();
            if found.iter().any(Option::is_none) {
                log::info!(
                    "computing transfers for the {} Hz carrier at f_a = {} Hz",
                    channel.center_frequency,
                    audio_frequency
                );
                let truncation = VolumeTruncation::auto(&cfg.piston, &cfg.medium, channel)?;
                let vs = VirtualSourceGrid::build(&cfg.piston, &cfg.medium, channel, truncation, &cfg.quad)?;
                let single = CarrierSet {
                    channels: vec![*channel],
                };
                for (slot, (_, pts)) in found.iter_mut().zip(&points) {
                    if slot.is_some() {
                        continue;
                    }
                    let values = transfer_on_points(&vs, &cfg.medium, pts, &cfg.quad)?;
                    let provenance = TransferProvenance {
                        quad: cfg.quad,
                        truncations: vec![truncation],
                        source: cfg.piston,
                        medium: cfg.medium,
                        warnings: vs.warnings(),
                    };
                    let g = AudioTransferGrid::from_columns(pts.clone(), &single, vec![values], provenance)?;
                    cache::store_transfer(&g, &self.cache_path(channel, pts))?;
                    stats.computed += 1;
                    *slot = Some(g);
                }
            }
            for (col, g) in columns.iter_mut().zip(found) {
                col.push(g.expect("every slot filled"));
            }
        }
        let mut grids = BTreeMap::new();
        for ((group, pts), cols) in points.into_iter().zip(columns) {
            let provenance = TransferProvenance {
                quad: cfg.quad,
                truncations: cols.iter().flat_map(|g| g.provenance.truncations.clone()).collect(),
                source: cfg.piston,
                medium: cfg.medium,
                warnings: cols.iter().flat_map(|g| g.provenance.warnings.clone()).collect(),
            };
            let values = cols.into_iter().map(|g| g.values).collect();
            grids.insert(group, AudioTransferGrid::from_columns(pts, &carriers, values, provenance)?);
        }
        Ok(TransferSet {
            audio_frequency,
            carriers,
            grids,
        })
    }

    /// Run the requested scope and write every output under `output_dir`.
    pub fn run(&self, scope: Scope) -> CliResult<(Summary, CacheStats)> {
        let cfg = &self.config;
        let out = &cfg.output_dir;
        fs::create_dir_all(out).map_err(io_err(out))?;
        let mut stats = CacheStats::default();
        let mut records = Vec::new();
        let mut warnings = Vec::new();
        for &fa in &cfg.audio_frequencies {
            let set = self.transfers(fa, scope.groups(), &mut stats)?;
            warnings.extend(set.warnings());
            let zones = IndexedTransfer::new(set.grid(Group::Zones)?);
            let hb = build_transfer_matrix(&cfg.bright, &zones)?;
            let hd = build_transfer_matrix(&cfg.dark, &zones)?;
            for &n in &cfg.carrier_counts {
                let v = solve_variant(&hb, &hd, &set.carriers, n, cfg.regularization)?;
                let mut record = VariantRecord::new(&v, &self.hash);
                if let Some(grid) = set.grids.get(&Group::Axial) {
                    let profile = axial_profile(grid, &v);
                    let name = format!("axial_fa{}_n{}.csv", fa, n);
                    write_axial_csv(&out.join(&name), &profile, &self.hash)?;
                    record.axial = Some(AxialMetrics::from_profile(&profile, name)?);
                }
                if let Some(grid) = set.grids.get(&Group::Map) {
                    let map = FieldMap::evaluate(cfg, grid, &v)?;
                    let name = format!("map_fa{}_n{}.csv", fa, n);
                    map.write_csv(&out.join(&name), &self.hash)?;
                    record.map = Some(MapMetrics {
                        peak_spl_db: finite(map.peak()),
                        contour_db: MAP_CONTOUR_DB,
                        extent_z_m: map.extent_z(MAP_CONTOUR_DB),
                        file: name,
                    });
                }
                records.push(record);
            }
        }
        warnings.sort();
        warnings.dedup();
        let summary = Summary {
            config_hash: self.hash.clone(),
            preset: cfg.preset.to_string(),
            records,
            warnings,
        };
        let path = out.join("summary.json");
        let mut text = serde_json::to_string_pretty(&summary)?;
        text.push('\n');
        cache::write_atomic(&path, text.as_bytes())?;
        Ok((summary, stats))
    }

    /// ACC weights for one variant, then the drive signal they imply.
    pub fn synth(&self, audio_frequency: f64, carrier_count: usize) -> CliResult<(DriveSignal, Vec<PathBuf>)> {
        let cfg = &self.config;
        let mut stats = CacheStats::default();
        let set = self.transfers(audio_frequency, Scope::Weights.groups(), &mut stats)?;
        let zones = IndexedTransfer::new(set.grid(Group::Zones)?);
        let hb = build_transfer_matrix(&cfg.bright, &zones)?;
        let hd = build_transfer_matrix(&cfg.dark, &zones)?;
        let v = solve_variant(&hb, &hd, &set.carriers, carrier_count, cfg.regularization)?;
        let signal = synthesize(&v.carriers, &v.solution.weights, cfg.synth.sample_rate, cfg.synth.duration, cfg.synth.factor)?;
        let out = &cfg.output_dir;
        fs::create_dir_all(out).map_err(io_err(out))?;
        let stem = format!("drive_fa{}_n{}", audio_frequency, carrier_count);
        let wav = out.join(format!("{stem}.wav"));
        let csv = out.join(format!("{stem}.csv"));
        let meta = out.join(format!("{stem}.json"));
        write_wav(&signal, &wav)?;
        write_csv(&signal, &csv)?;
        let info = DriveInfo {
            config_hash: self.hash.clone(),
            sample_rate: signal.sample_rate,
            duration: signal.duration,
            samples: signal.samples.len(),
            gain: signal.gain,
            audio_frequency: signal.audio_frequency,
            carriers: signal.carriers.clone(),
            factor: cfg.synth.factor,
            weights: signal.weights.iter().map(pair).collect(),
            sideband_weights: signal.sideband_weights.iter().map(|(a, b)| [pair(a), pair(b)]).collect(),
        };
        let mut text = serde_json::to_string_pretty(&info)?;
        text.push('\n');
        cache::write_atomic(&meta, text.as_bytes())?;
        Ok((signal, vec![wav, csv, meta]))
    }
}

/// Solved weights for the first `n` carriers.
pub struct Variant {
    pub carriers: CarrierSet,
    pub solution: AccSolution,
    pub acoustic_contrast_db: f64,
    pub eigen_residual: f64,
}

pub fn solve_variant(
    bright: &TransferMatrix,
    dark: &TransferMatrix,
    carriers: &CarrierSet,
    n: usize,
    regularization: f64,
) -> CliResult<Variant> {
    let fcs = &carriers.center_frequencies()[..n];
    let sub = CarrierSet::new(fcs, carriers.audio_frequency())?;
    debug_assert_eq!(fcs[0], REFERENCE_CARRIER);
    let b = bright.select_carriers(fcs)?;
    let d = dark.select_carriers(fcs)?;
    let solution = acc_solve(&b, &d, regularization)?;
    Ok(Variant {
        acoustic_contrast_db: acoustic_contrast(&b, &d, &solution.weights)?,
        eigen_residual: eigen_residual(&b, &d, &solution),
        carriers: sub,
        solution,
    })
}

fn pressure_at(grid: &AudioTransferGrid, m: usize, v: &Variant) -> Complex64 {
    let row = grid.row(m);
    v.carriers
        .center_frequencies()
        .iter()
        .zip(&v.solution.weights)
        .map(|(fc, w)| {
            let j = grid.carriers.iter().position(|c| c == fc).expect("carrier present");
            row[j] * w
        })
        .sum()
}

/// `(z, p)` along the axis.
pub fn axial_profile(grid: &AudioTransferGrid, v: &Variant) -> Vec<(f64, Complex64)> {
    grid.points
        .iter()
        .enumerate()
        .map(|(m, p)| (p.z, pressure_at(grid, m, v)))
        .collect()
}

fn write_axial_csv(path: &Path, profile: &[(f64, Complex64)], hash: &str) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["z_m", "spl_db", "p_re", "p_im", "config_hash"])?;
    let h = &hash[..12];
    for (z, p) in profile {
        w.write_record([z.to_string(), spl(*p).to_string(), p.re.to_string(), p.im.to_string(), h.to_string()])?;
    }
    w.flush().map_err(io_err(path))
}

/// SPL over a rectangular `Oxz` grid, `x` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMap {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub spl_db: Vec<f64>,
    pub audio_frequency: f64,
    pub weights: Vec<Complex64>,
}

impl FieldMap {
    pub fn evaluate(cfg: &ExperimentConfig, grid: &AudioTransferGrid, v: &Variant) -> CliResult<Self> {
        let index: BTreeMap<(u64, u64), usize> = grid
            .points
            .iter()
            .enumerate()
            .map(|(m, p)| ((p.x.to_bits(), p.z.to_bits()), m))
            .collect();
        let pts = cfg.map.points();
        let mut spl_db = Vec::with_capacity(pts.len());
        for p in &pts {
            let m = *index.get(&(p.rho().to_bits(), p.z.to_bits())).ok_or(CliError::Core(
                mcpl_core::Error::MissingPoints { count: 1, x: p.x, z: p.z },
            ))?;
            spl_db.push(spl(pressure_at(grid, m, v)));
        }
        let nx = cfg.map.nx;
        Ok(Self {
            x: pts[..nx].iter().map(|p| p.x).collect(),
            z: pts.iter().step_by(nx).map(|p| p.z).collect(),
            spl_db,
            audio_frequency: v.carriers.audio_frequency(),
            weights: v.solution.weights.clone(),
        })
    }

    pub fn peak(&self) -> f64 {
        self.spl_db.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Farthest `z` where the level is within `drop_db` (negative) of the peak.
    pub fn extent_z(&self, drop_db: f64) -> f64 {
        let peak = self.peak();
        let nx = self.x.len();
        self.spl_db
            .iter()
            .enumerate()
            .filter(|(_, s)| **s - peak >= drop_db)
            .map(|(i, _)| self.z[i / nx])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_csv(&self, path: &Path, hash: &str) -> CliResult<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x_m", "z_m", "spl_db", "spl_norm_db", "config_hash"])?;
        let peak = self.peak();
        let h = &hash[..12];
        let nx = self.x.len();
        for (i, s) in self.spl_db.iter().enumerate() {
            w.write_record([
                self.x[i % nx].to_string(),
                self.z[i / nx].to_string(),
                s.to_string(),
                (s - peak).to_string(),
                h.to_string(),
            ])?;
        }
        w.flush().map_err(io_err(path))
    }
}

fn pair(w: &Complex64) -> [f64; 2] {
    [w.re, w.im]
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxialMetrics {
    pub effective_distance_m: f64,
    /// The profile never fell 10 dB below its maximum.
    pub effective_unbounded: bool,
    pub peak_spl_db: Option<f64>,
    pub peak_z_m: f64,
    pub file: String,
}

impl AxialMetrics {
    fn from_profile(profile: &[(f64, Complex64)], file: String) -> CliResult<Self> {
        let levels: Vec<(f64, f64)> = profile.iter().map(|(z, p)| (*z, spl(*p))).collect();
        let e = effective_propagation_distance(&levels)?;
        let (peak_z, peak) = levels
            .iter()
            .cloned()
            .fold((levels[0].0, f64::NEG_INFINITY), |acc, l| if l.1 > acc.1 { l } else { acc });
        Ok(Self {
            effective_distance_m: e.distance,
            effective_unbounded: e.unbounded,
            peak_spl_db: finite(peak),
            peak_z_m: peak_z,
            file,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMetrics {
    pub peak_spl_db: Option<f64>,
    pub contour_db: f64,
    /// Farthest `z` inside the contour.
    pub extent_z_m: f64,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRecord {
    pub audio_frequency: f64,
    pub carrier_count: usize,
    pub carriers: Vec<f64>,
    /// `[re, im]`, normalized so the 40 kHz weight is 1.
    pub weights: Vec<[f64; 2]>,
    pub contrast: f64,
    pub contrast_db: f64,
    pub acoustic_contrast_db: f64,
    pub eigenvalue: f64,
    pub eigen_residual: f64,
    pub axial: Option<AxialMetrics>,
    pub map: Option<MapMetrics>,
    pub config_hash: String,
}

impl VariantRecord {
    fn new(v: &Variant, hash: &str) -> Self {
        let s = &v.solution;
        Self {
            audio_frequency: v.carriers.audio_frequency(),
            carrier_count: v.carriers.len(),
            carriers: s.carriers.clone(),
            weights: s.weights.iter().map(pair).collect(),
            contrast: s.contrast,
            contrast_db: s.contrast_db,
            acoustic_contrast_db: v.acoustic_contrast_db,
            eigenvalue: s.eigenvalue,
            eigen_residual: v.eigen_residual,
            axial: None,
            map: None,
            config_hash: hash.to_string(),
        }
    }

    pub fn weights(&self) -> Vec<Complex64> {
        self.weights.iter().map(|w| Complex64::new(w[0], w[1])).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub preset: String,
    pub records: Vec<VariantRecord>,
    pub warnings: Vec<String>,
}

impl Summary {
    pub fn record(&self, audio_frequency: f64, carrier_count: usize) -> Option<&VariantRecord> {
        self.records
            .iter()
            .find(|r| r.audio_frequency == audio_frequency && r.carrier_count == carrier_count)
    }
}

#[derive(Debug, Clone, Serialize)]
struct DriveInfo {
    config_hash: String,
    sample_rate: f64,
    duration: f64,
    samples: usize,
    gain: f64,
    audio_frequency: f64,
    carriers: Vec<f64>,
    factor: mcpl_core::signal::FactorMode,
    weights: Vec<[f64; 2]>,
    sideband_weights: Vec<[[f64; 2]; 2]>,
}
