//! Experiment configuration documents.
//!
//! JSON with SI-suffixed keys (`_m`, `_hz`, `_mps`, `_rad`, `_per_m3`).
//! Relative paths resolve against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use scoba::acoustic_sim::{
    linspace, make_cyst_phantom, Aabb, Acquisition, Phantom, Point3, Scatterer, TransmitMode, TransmitScheme,
    CENTER_FREQ, PITCH, SAMPLE_RATE, SOUND_SPEED, VIRTUAL_SOURCE_DEPTH,
};
use scoba::array_geometry::{fractal_expand, make_upa, named_sparse, NamedSparse};
use scoba::beamformers::{BeamformerKind, ImagingGrid, ScobaPath, WeightMode};
use scoba::metrics::SliceSpec;
use scoba::{ElementSet, Index2};

use crate::error::{CliError, CliResult};

fn default_pitch() -> f64 {
    PITCH
}

/// How an element set is obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArraySpec {
    Upa {
        half_extent_x: u32,
        half_extent_y: u32,
    },
    Named {
        layout: NamedSparse,
    },
    /// `array_i`, `array_ii` or `array_iii`.
    Preset {
        name: String,
    },
    Fractal {
        generator: Box<ArraySpec>,
        order: u32,
    },
    Positions {
        positions: Vec<Index2>,
    },
    Descriptor {
        path: PathBuf,
    },
}

impl ArraySpec {
    pub fn resolve(&self, pitch_x: f64, pitch_y: f64, base: &Path) -> CliResult<ElementSet> {
        let set = match self {
            ArraySpec::Upa { half_extent_x, half_extent_y } => {
                make_upa(*half_extent_x, *half_extent_y, pitch_x, pitch_y)
            }
            ArraySpec::Named { layout } => named_sparse(layout, pitch_x, pitch_y),
            ArraySpec::Preset { name } => named_sparse(&preset(name)?, pitch_x, pitch_y),
            ArraySpec::Fractal { generator, order } => {
                let g = generator.resolve(pitch_x, pitch_y, base)?;
                fractal_expand(&g, *order).map(|f| {
                    for w in &f.warnings {
                        log::warn!("fractal generator: {w}");
                    }
                    f.elements
                })
            }
            ArraySpec::Positions { positions } => ElementSet::new(positions.clone(), pitch_x, pitch_y),
            ArraySpec::Descriptor { path } => {
                let set = scoba::io::load_descriptor(base.join(path))
                    .map_err(|e| CliError::config(format!("array descriptor {}: {e}", path.display())))?;
                if (set.pitch_x() - pitch_x).abs() > 1e-12 * pitch_x
                    || (set.pitch_y() - pitch_y).abs() > 1e-12 * pitch_y
                {
                    return Err(CliError::config(format!(
                        "descriptor {} has pitch ({}, {}) m, config uses ({pitch_x}, {pitch_y}) m",
                        path.display(),
                        set.pitch_x(),
                        set.pitch_y()
                    )));
                }
                Ok(set)
            }
        };
        set.map_err(CliError::config)
    }
}

pub fn preset(name: &str) -> CliResult<NamedSparse> {
    match name.to_ascii_lowercase().as_str() {
        "array_i" | "i" => Ok(NamedSparse::ARRAY_I),
        "array_ii" | "ii" => Ok(NamedSparse::ARRAY_II),
        "array_iii" | "iii" => Ok(NamedSparse::ARRAY_III),
        _ => Err(CliError::config(format!("unknown preset array '{name}' (expected array_i, array_ii or array_iii)"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraysSpec {
    #[serde(default = "default_pitch")]
    pub pitch_x_m: f64,
    #[serde(default = "default_pitch")]
    pub pitch_y_m: f64,
    pub tx: ArraySpec,
    pub rx: ArraySpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSpec {
    pub mode: TransmitMode,
    /// Rotation about y, `[first, last]`.
    pub alpha_span_rad: [f64; 2],
    pub alpha_count: usize,
    /// Rotation about x, `[first, last]`.
    pub beta_span_rad: [f64; 2],
    pub beta_count: usize,
    /// Virtual source depth (diverging, negative) or focal depth (focused).
    #[serde(default)]
    pub focal_z_m: Option<f64>,
}

impl SchemeSpec {
    pub fn resolve(&self, tx: &ElementSet) -> CliResult<TransmitScheme> {
        if self.alpha_count == 0 || self.beta_count == 0 {
            return Err(CliError::config("scheme angle counts must be positive"));
        }
        let focal = self.focal_z_m.unwrap_or(match self.mode {
            TransmitMode::Diverging => VIRTUAL_SOURCE_DEPTH,
            TransmitMode::Focused => 0.04,
        });
        let alphas = linspace(self.alpha_span_rad[0], self.alpha_span_rad[1], self.alpha_count);
        let betas = linspace(self.beta_span_rad[0], self.beta_span_rad[1], self.beta_count);
        TransmitScheme::grid(self.mode, &alphas, &betas, focal, tx.clone()).map_err(CliError::config)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionSpec {
    #[serde(default = "default_f0")]
    pub center_freq_hz: f64,
    #[serde(default = "default_fs")]
    pub sample_rate_hz: f64,
    #[serde(default = "default_c")]
    pub sound_speed_mps: f64,
    #[serde(default = "default_cycles")]
    pub n_cycles: f64,
    #[serde(default)]
    pub spreading: bool,
}

fn default_f0() -> f64 {
    CENTER_FREQ
}
fn default_fs() -> f64 {
    SAMPLE_RATE
}
fn default_c() -> f64 {
    SOUND_SPEED
}
fn default_cycles() -> f64 {
    2.0
}

impl Default for AcquisitionSpec {
    fn default() -> Self {
        Self {
            center_freq_hz: CENTER_FREQ,
            sample_rate_hz: SAMPLE_RATE,
            sound_speed_mps: SOUND_SPEED,
            n_cycles: 2.0,
            spreading: false,
        }
    }
}

impl AcquisitionSpec {
    /// Parameters with a placeholder window; the window is set from ranges later.
    pub fn base(&self) -> Acquisition {
        Acquisition {
            sample_rate_hz: self.sample_rate_hz,
            center_freq_hz: self.center_freq_hz,
            n_cycles: self.n_cycles,
            sound_speed_mps: self.sound_speed_mps,
            start_time_s: 0.0,
            t_max_s: 1.0,
            spreading: self.spreading,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScattererSpec {
    pub position_m: Point3,
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhantomSpec {
    Points {
        scatterers: Vec<ScattererSpec>,
    },
    /// Random speckle in a box with an anechoic sphere; seeded by the config seed.
    Cyst {
        center_m: Point3,
        radius_m: f64,
        density_per_m3: f64,
        bounds_min_m: Point3,
        bounds_max_m: Point3,
    },
}

impl PhantomSpec {
    pub fn resolve(&self, seed: u64) -> CliResult<Phantom> {
        match self {
            PhantomSpec::Points { scatterers } => Phantom::new(
                scatterers.iter().map(|s| Scatterer { position: s.position_m, amplitude: s.amplitude }).collect(),
                "points",
            ),
            PhantomSpec::Cyst { center_m, radius_m, density_per_m3, bounds_min_m, bounds_max_m } => make_cyst_phantom(
                *density_per_m3,
                *center_m,
                *radius_m,
                Aabb { min: *bounds_min_m, max: *bounds_max_m },
                seed,
            ),
        }
        .map_err(CliError::config)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub theta_span_rad: [f64; 2],
    pub theta_count: usize,
    pub phis_rad: Vec<f64>,
    pub depth_span_m: [f64; 2],
    pub depth_count: usize,
}

impl GridSpec {
    pub fn resolve(&self) -> CliResult<ImagingGrid> {
        if self.theta_count == 0 || self.depth_count == 0 {
            return Err(CliError::config("grid counts must be positive"));
        }
        let thetas = linspace(self.theta_span_rad[0], self.theta_span_rad[1], self.theta_count);
        let depths = linspace(self.depth_span_m[0], self.depth_span_m[1], self.depth_count);
        ImagingGrid::planes(&thetas, &self.phis_rad, depths).map_err(CliError::config)
    }

    pub fn load(path: &Path) -> CliResult<ImagingGrid> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let spec: GridSpec =
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        spec.resolve()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Das,
    Coba,
    Scoba,
}

impl Method {
    pub fn kind(self) -> BeamformerKind {
        match self {
            Method::Das => BeamformerKind::Das,
            Method::Coba => BeamformerKind::Coba3d,
            Method::Scoba => BeamformerKind::Scoba3d,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamformerSpec {
    pub method: Method,
    #[serde(default)]
    pub label: Option<String>,
    /// Receive elements used; defaults to the full receive array. Required for SCOBA.
    #[serde(default)]
    pub array: Option<ArraySpec>,
    #[serde(default)]
    pub weights: WeightMode,
    #[serde(default)]
    pub scoba_path: ScobaPath,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CystRegionSpec {
    pub center_m: Point3,
    pub radius_m: f64,
    #[serde(default = "default_inner")]
    pub inner_fraction: f64,
    /// Lateral offset of the background disk; two cyst radii when absent.
    #[serde(default)]
    pub background_offset_m: Option<f64>,
    #[serde(default = "default_slice")]
    pub slice: SliceSpec,
}

fn default_inner() -> f64 {
    0.6
}
fn default_slice() -> SliceSpec {
    SliceSpec::Xz
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointTargetSpec {
    pub position_m: Point3,
    #[serde(default = "default_search")]
    pub search_radius_m: f64,
}

fn default_search() -> f64 {
    2e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSpec {
    #[serde(default = "default_dr")]
    pub dynamic_range_db: f64,
    #[serde(default)]
    pub cyst: Option<CystRegionSpec>,
    #[serde(default)]
    pub point: Option<PointTargetSpec>,
}

fn default_dr() -> f64 {
    80.0
}

impl Default for MetricsSpec {
    fn default() -> Self {
        Self { dynamic_range_db: 80.0, cyst: None, point: None }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageFormat {
    #[default]
    Png,
    Pgm,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Png => "png",
            ImageFormat::Pgm => "pgm",
        }
    }
}

/// Where artifacts go. Not part of the configuration hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub image_format: ImageFormat,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: default_dir(), image_format: ImageFormat::Png }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub arrays: ArraysSpec,
    pub scheme: SchemeSpec,
    #[serde(default)]
    pub acquisition: AcquisitionSpec,
    pub phantom: PhantomSpec,
    pub grid: GridSpec,
    pub beamformers: Vec<BeamformerSpec>,
    #[serde(default)]
    pub metrics: MetricsSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

/// A beamformer with its receive elements resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedBeamformer {
    pub label: String,
    pub method: Method,
    pub array: ElementSet,
    pub weights: WeightMode,
    pub scoba_path: ScobaPath,
}

impl ResolvedBeamformer {
    /// File-name stem derived from the label.
    pub fn stem(&self) -> String {
        let s: String =
            self.label.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' }).collect();
        s.trim_matches('_').to_string()
    }
}

/// Everything a run needs, validated.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub tx: ElementSet,
    pub rx: ElementSet,
    pub scheme: TransmitScheme,
    pub acquisition: Acquisition,
    pub phantom: Phantom,
    pub grid: ImagingGrid,
    pub beamformers: Vec<ResolvedBeamformer>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    /// SHA-256 over the canonical form of every semantic field.
    pub fn hash_hex(&self) -> String {
        let semantic = ExperimentConfig { output: OutputSpec::default(), ..self.clone() };
        let bytes = serde_json::to_vec(&semantic).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// First eight bytes of the hash, stored in volume headers.
    pub fn provenance(&self) -> u64 {
        let h = hex::decode(self.hash_hex()).expect("hex digest");
        u64::from_le_bytes(h[..8].try_into().expect("digest has 32 bytes"))
    }

    pub fn resolve(&self, base: &Path) -> CliResult<Resolved> {
        let (px, py) = (self.arrays.pitch_x_m, self.arrays.pitch_y_m);
        if !(px > 0.0 && py > 0.0 && px.is_finite() && py.is_finite()) {
            return Err(CliError::config(format!("pitch must be positive, got ({px}, {py}) m")));
        }
        let tx = self.arrays.tx.resolve(px, py, base)?;
        let rx = self.arrays.rx.resolve(px, py, base)?;
        let scheme = self.scheme.resolve(&tx)?;
        let phantom = self.phantom.resolve(self.seed)?;
        let grid = self.grid.resolve()?;
        if self.beamformers.is_empty() {
            return Err(CliError::config("beamformer list is empty"));
        }
        let mut beamformers = Vec::with_capacity(self.beamformers.len());
        for (i, b) in self.beamformers.iter().enumerate() {
            let array = match &b.array {
                Some(spec) => spec.resolve(px, py, base)?,
                None if b.method == Method::Scoba => {
                    return Err(CliError::config(format!("beamformer {i}: scoba needs an 'array'")));
                }
                None => rx.clone(),
            };
            if !array.is_subset_of(&rx) {
                return Err(CliError::config(format!("beamformer {i}: its elements are not all in the receive array")));
            }
            if b.method == Method::Coba && !array.is_upa() {
                return Err(CliError::config(format!("beamformer {i}: coba needs a fully populated array; use scoba")));
            }
            let label = b.label.clone().unwrap_or_else(|| match b.method {
                Method::Das => "DAS".to_string(),
                Method::Coba => "COBA".to_string(),
                Method::Scoba => format!("SCOBA-{}", array.len()),
            });
            beamformers.push(ResolvedBeamformer {
                label,
                method: b.method,
                array,
                weights: b.weights,
                scoba_path: b.scoba_path,
            });
        }
        let mut stems: Vec<String> = beamformers.iter().map(|b| b.stem()).collect();
        stems.sort();
        if stems.windows(2).any(|w| w[0] == w[1]) || stems.iter().any(|s| s.is_empty()) {
            return Err(CliError::config("beamformer labels must be distinct and contain letters or digits"));
        }

        // Sampling window covers both the imaging grid and every scatterer.
        let ranges = phantom
            .scatterers
            .iter()
            .map(|s| (s.position[0].powi(2) + s.position[1].powi(2) + s.position[2].powi(2)).sqrt())
            .chain([grid.depths[0], *grid.depths.last().expect("non-empty depths")]);
        let (near, far) = ranges.fold((f64::INFINITY, 0.0f64), |(a, b), r| (a.min(r), b.max(r)));
        let acquisition = self.acquisition.base().with_window(near, far, &scheme);
        acquisition.validate().map_err(CliError::config)?;

        Ok(Resolved { tx, rx, scheme, acquisition, phantom, grid, beamformers })
    }
}
