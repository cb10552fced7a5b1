//! simulate → compound → beamform → metrics → render, with a manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use serde::{Deserialize, Serialize};

use scoba::acoustic_sim::{simulate, IqCube};
use scoba::array_geometry::ApodizationMap;
use scoba::beamformers::{coba3d, compound, das, default_user_weights, scoba3d, CompoundField, ImagingGrid, Volume};
use scoba::metrics::{
    contrast_ratio, envelope_logcompress, fwhm, peak_near, slice_directions, CrRegions, FwhmAxis, SliceSpec,
};
use scoba::{ApodizationKind, ElementSet};

use crate::config::{ExperimentConfig, ImageFormat, Method, MetricsSpec, Resolved, ResolvedBeamformer};
use crate::error::{CliError, CliResult, StageExt};

pub const MANIFEST: &str = "manifest.json";
pub const CUBE: &str = "cube.iqc";
pub const METRICS_CSV: &str = "metrics.csv";
const PARTIAL: &str = ".partial";

/// One line of the metrics table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub elements: usize,
    pub cr_db: Option<f64>,
    pub fwhm_x_mm: Option<f64>,
    pub fwhm_y_mm: Option<f64>,
    pub fwhm_z_mm: Option<f64>,
}

pub const METRICS_HEADER: [&str; 6] = ["method", "elements", "cr_db", "fwhm_x_mm", "fwhm_y_mm", "fwhm_z_mm"];

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

impl MetricsRow {
    pub fn cells(&self) -> Vec<String> {
        vec![
            self.method.clone(),
            self.elements.to_string(),
            cell(self.cr_db),
            cell(self.fwhm_x_mm),
            cell(self.fwhm_y_mm),
            cell(self.fwhm_z_mm),
        ]
    }
}

/// CR and FWHM of one volume. Metrics that cannot be measured stay empty.
pub fn volume_metrics(vol: &Volume<f64>, spec: &MetricsSpec, method: &str, elements: usize) -> MetricsRow {
    let mut row = MetricsRow { method: method.to_string(), elements, ..Default::default() };
    if let Some(c) = &spec.cyst {
        let offset = c.background_offset_m.unwrap_or(2.0 * c.radius_m);
        let regions = CrRegions::around_cyst(&vol.grid, c.center_m, c.radius_m, c.inner_fraction, offset, c.slice);
        match contrast_ratio(vol, &regions.cyst, &regions.background) {
            Ok(cr) => row.cr_db = Some(cr),
            Err(e) => log::warn!("{method}: contrast ratio unavailable: {e}"),
        }
    }
    if let Some(p) = &spec.point {
        let measure = |axis: FwhmAxis, slice: Option<SliceSpec>| -> Option<f64> {
            let peak = peak_near(vol, p.position_m, p.search_radius_m, slice)?;
            match fwhm(vol, axis, peak) {
                Ok(w) => Some(w * 1e3),
                Err(e) => {
                    log::warn!("{method}: {axis:?} FWHM unavailable: {e}");
                    None
                }
            }
        };
        row.fwhm_x_mm = measure(FwhmAxis::LateralX, Some(SliceSpec::Xz));
        row.fwhm_y_mm = measure(FwhmAxis::LateralY, Some(SliceSpec::Yz));
        row.fwhm_z_mm = measure(FwhmAxis::Axial, None);
    }
    row
}

pub fn write_metrics_csv<W: Write>(w: W, rows: &[MetricsRow]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(METRICS_HEADER)?;
    for r in rows {
        out.write_record(r.cells())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> CliResult<Vec<MetricsRow>> {
    let mut rd = csv::Reader::from_path(path).stage("read metrics")?;
    let parse = |s: &str| if s.is_empty() { Ok(None) } else { s.parse::<f64>().map(Some) };
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.stage("read metrics")?;
        let f = |i: usize| parse(rec.get(i).unwrap_or("")).stage("read metrics");
        rows.push(MetricsRow {
            method: rec.get(0).unwrap_or("").to_string(),
            elements: rec.get(1).unwrap_or("0").parse().stage("read metrics")?,
            cr_db: f(2)?,
            fwhm_x_mm: f(3)?,
            fwhm_y_mm: f(4)?,
            fwhm_z_mm: f(5)?,
        });
    }
    Ok(rows)
}

/// Encodes a log-compressed plane as an 8-bit grayscale image.
pub fn encode_slice<W: Write>(
    vol: &Volume<f64>,
    slice: SliceSpec,
    dynamic_range_db: f64,
    format: ImageFormat,
    w: W,
) -> CliResult<()> {
    let img = envelope_logcompress(vol, dynamic_range_db, slice).stage("render")?;
    let (width, height, pixels) = img.to_gray();
    let (width, height) = (width as u32, height as u32);
    match format {
        ImageFormat::Png => PngEncoder::new(w).write_image(&pixels, width, height, ExtendedColorType::L8),
        ImageFormat::Pgm => PnmEncoder::new(w).with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary)).write_image(
            &pixels,
            width,
            height,
            ExtendedColorType::L8,
        ),
    }
    .stage("render")
}

/// Runs one beamformer on the compounded field of the full receive array.
pub fn beamform_one(field: &CompoundField<f64>, bf: &ResolvedBeamformer) -> scoba::Result<Volume<f64>> {
    match bf.method {
        Method::Das => {
            let sub = if field.rx_array == bf.array { field.clone() } else { field.restrict(&bf.array)? };
            das(&sub, &ApodizationMap::unity(&bf.array, ApodizationKind::User))
        }
        Method::Coba => {
            let sub = if field.rx_array == bf.array { field.clone() } else { field.restrict(&bf.array)? };
            coba3d(&sub, &default_user_weights(&bf.array, bf.weights)?)
        }
        Method::Scoba => scoba3d(field, &bf.array, &default_user_weights(&bf.array, bf.weights)?, bf.scoba_path),
    }
}

/// Values rounded to the stored `f32` precision, so in-memory results equal reloaded files.
pub fn as_stored(vol: Volume<f64>) -> Volume<f64> {
    Volume { values: vol.values.mapv(|v| num_complex::Complex::new(v.re as f32 as f64, v.im as f32 as f64)), ..vol }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTime {
    pub name: String,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestBeamformer {
    pub label: String,
    pub method: Method,
    pub elements: usize,
    pub volume: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub n_events: usize,
    pub n_tx_elements: usize,
    pub n_rx_elements: usize,
    pub n_samples: usize,
    pub n_scatterers: usize,
    pub grid_directions: usize,
    pub grid_depths: usize,
    pub beamformers: Vec<ManifestBeamformer>,
    pub metrics: Vec<MetricsRow>,
    pub artifacts: Vec<String>,
    pub stages: Vec<StageTime>,
}

/// Files written under `.partial` names and renamed once the run succeeds.
struct Artifacts {
    dir: PathBuf,
    names: Vec<String>,
}

impl Artifacts {
    fn partial(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{name}{PARTIAL}"))
    }

    fn write_with(&mut self, name: &str, stage: &str, f: impl FnOnce(&Path) -> CliResult<()>) -> CliResult<()> {
        let path = self.partial(name);
        f(&path).map_err(|e| match e {
            CliError::Runtime { message, .. } => CliError::runtime(stage, format!("{name}: {message}")),
            other => other,
        })?;
        self.names.push(name.to_string());
        Ok(())
    }

    fn write_bytes(&mut self, name: &str, stage: &str, bytes: &[u8]) -> CliResult<()> {
        self.write_with(name, stage, |p| fs::write(p, bytes).stage(stage))
    }

    fn commit(&self) -> CliResult<()> {
        for name in &self.names {
            fs::rename(self.partial(name), self.dir.join(name)).stage("finalize")?;
        }
        Ok(())
    }
}

struct Clock {
    stages: Vec<StageTime>,
    start: Instant,
}

impl Clock {
    fn new() -> Self {
        Self { stages: Vec::new(), start: Instant::now() }
    }

    fn lap(&mut self, name: &str) {
        let now = Instant::now();
        self.stages.push(StageTime { name: name.to_string(), wall_time_s: (now - self.start).as_secs_f64() });
        self.start = now;
    }
}

/// Checks that `dir` exists or can be created and accepts files.
pub fn ensure_writable(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::config(format!("output directory {}: {e}", dir.display())))?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"")
        .map_err(|e| CliError::config(format!("output directory {} is not writable: {e}", dir.display())))?;
    let _ = fs::remove_file(probe);
    Ok(())
}

pub fn volume_name(bf: &ResolvedBeamformer) -> String {
    format!("volume_{}.bvol", bf.stem())
}

pub fn slice_name(bf: &ResolvedBeamformer, slice: SliceSpec, format: ImageFormat) -> String {
    let s = match slice {
        SliceSpec::Xz => "xz",
        SliceSpec::Yz => "yz",
    };
    format!("{}_{s}.{}", bf.stem(), format.extension())
}

/// Simulates the configured phantom into an `f32`-precision cube.
pub fn simulate_cube(r: &Resolved) -> scoba::Result<IqCube<f32>> {
    simulate::<f32>(&r.phantom, &r.scheme, &r.rx, &r.acquisition)
}

/// Full experiment. `config_dir` anchors relative paths in the config.
pub fn run(config: &ExperimentConfig, config_dir: &Path, out_dir: &Path) -> CliResult<Manifest> {
    let mut clock = Clock::new();
    let resolved = config.resolve(config_dir)?;
    ensure_writable(out_dir)?;
    let provenance = config.provenance();
    let mut art = Artifacts { dir: out_dir.to_path_buf(), names: Vec::new() };
    clock.lap("config");

    log::info!(
        "simulating {} scatterers, {} events x {} elements",
        resolved.phantom.len(),
        resolved.scheme.events.len(),
        resolved.rx.len()
    );
    let cube = simulate_cube(&resolved).stage("simulate")?;
    art.write_with(CUBE, "simulate", |p| {
        let mut w = std::io::BufWriter::new(fs::File::create(p).stage("simulate")?);
        scoba::io::write_iq_cube(&mut w, &cube).stage("simulate")?;
        w.flush().stage("simulate")
    })?;
    art.write_bytes(
        &format!("{CUBE}.scheme.json"),
        "simulate",
        serde_json::to_string_pretty(&resolved.scheme).stage("simulate")?.as_bytes(),
    )?;
    art.write_bytes(
        "tx.json",
        "simulate",
        (scoba::io::descriptor_to_string(&resolved.tx).stage("simulate")? + "\n").as_bytes(),
    )?;
    art.write_bytes(
        "rx.json",
        "simulate",
        (scoba::io::descriptor_to_string(&resolved.rx).stage("simulate")? + "\n").as_bytes(),
    )?;
    clock.lap("simulate");

    let field = compound(&cube.cast::<f64>(), &resolved.grid).stage("compound")?;
    drop(cube);
    clock.lap("compound");

    let mut volumes = Vec::with_capacity(resolved.beamformers.len());
    for bf in &resolved.beamformers {
        log::info!("beamforming {} on {} elements", bf.label, bf.array.len());
        let mut vol = beamform_one(&field, bf).stage(&format!("beamform {}", bf.label))?;
        vol.provenance = provenance;
        let vol = as_stored(vol);
        let name = volume_name(bf);
        art.write_with(&name, "beamform", |p| scoba::io::save_volume(p, &vol).stage("beamform"))?;
        volumes.push(vol);
    }
    drop(field);
    clock.lap("beamform");

    let rows: Vec<MetricsRow> = resolved
        .beamformers
        .iter()
        .zip(&volumes)
        .map(|(bf, v)| volume_metrics(v, &config.metrics, &bf.label, bf.array.len()))
        .collect();
    let mut csv_bytes = Vec::new();
    write_metrics_csv(&mut csv_bytes, &rows).stage("metrics")?;
    art.write_bytes(METRICS_CSV, "metrics", &csv_bytes)?;
    clock.lap("metrics");

    let format = config.output.image_format;
    for (bf, vol) in resolved.beamformers.iter().zip(&volumes) {
        for slice in [SliceSpec::Xz, SliceSpec::Yz] {
            if slice_directions(&vol.grid, slice).len() < 2 {
                continue;
            }
            let name = slice_name(bf, slice, format);
            art.write_with(&name, "render", |p| {
                let f = std::io::BufWriter::new(fs::File::create(p).stage("render")?);
                encode_slice(vol, slice, config.metrics.dynamic_range_db, format, f)
            })?;
        }
    }
    clock.lap("render");

    let manifest = Manifest {
        config_hash: config.hash_hex(),
        seed: config.seed,
        n_events: resolved.scheme.events.len(),
        n_tx_elements: resolved.tx.len(),
        n_rx_elements: resolved.rx.len(),
        n_samples: resolved.acquisition.n_samples(),
        n_scatterers: resolved.phantom.len(),
        grid_directions: resolved.grid.directions.len(),
        grid_depths: resolved.grid.depths.len(),
        beamformers: resolved
            .beamformers
            .iter()
            .map(|b| ManifestBeamformer {
                label: b.label.clone(),
                method: b.method,
                elements: b.array.len(),
                volume: volume_name(b),
            })
            .collect(),
        metrics: rows,
        artifacts: art.names.clone(),
        stages: clock.stages,
    };
    art.commit()?;
    let text = serde_json::to_string_pretty(&manifest).stage("finalize")?;
    fs::write(out_dir.join(MANIFEST), text + "\n").stage("finalize")?;
    Ok(manifest)
}

/// Checks that two configs image the same phantom on the same grid.
fn same_scene(a: &ExperimentConfig, b: &ExperimentConfig) -> bool {
    a.grid == b.grid && a.phantom == b.phantom && a.seed == b.seed
}

/// Header of the comparison report.
pub const COMPARE_HEADER: [&str; 11] = [
    "config",
    "method",
    "elements",
    "cr_db",
    "fwhm_x_mm",
    "fwhm_y_mm",
    "fwhm_z_mm",
    "fwhm_x_ratio",
    "fwhm_y_ratio",
    "fwhm_z_ratio",
    "cr_delta_db",
];

/// Runs each config into `out_dir/<index>_<name>` and tabulates every
/// method against the first method of the first config.
pub fn compare(configs: &[PathBuf], out_dir: &Path) -> CliResult<Vec<Vec<String>>> {
    if configs.len() < 2 {
        return Err(CliError::config("compare needs at least two configs"));
    }
    let loaded: Vec<ExperimentConfig> = configs.iter().map(|p| ExperimentConfig::load(p)).collect::<CliResult<_>>()?;
    for (p, c) in configs.iter().zip(&loaded).skip(1) {
        if !same_scene(&loaded[0], c) {
            return Err(CliError::config(format!(
                "{} does not share the phantom, seed and imaging grid of {}",
                p.display(),
                configs[0].display()
            )));
        }
    }
    let mut all = Vec::new();
    for (i, (path, cfg)) in configs.iter().zip(&loaded).enumerate() {
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| format!("config{i}"));
        let dir = out_dir.join(format!("{i}_{name}"));
        let base = path.parent().unwrap_or(Path::new("."));
        let manifest = run(cfg, base, &dir)?;
        all.extend(manifest.metrics.into_iter().map(|m| (name.clone(), m)));
    }
    let base = all[0].1.clone();
    let ratio = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    };
    Ok(all
        .into_iter()
        .map(|(name, m)| {
            let mut cells = vec![name];
            cells.extend(m.cells());
            cells.push(cell(ratio(m.fwhm_x_mm, base.fwhm_x_mm)));
            cells.push(cell(ratio(m.fwhm_y_mm, base.fwhm_y_mm)));
            cells.push(cell(ratio(m.fwhm_z_mm, base.fwhm_z_mm)));
            cells.push(cell(m.cr_db.zip(base.cr_db).map(|(a, b)| a - b)));
            cells
        })
        .collect())
}

/// Mean time per call of direct and Fourier self-convolution of an `n x n` input.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub size: usize,
    pub direct_us: f64,
    pub fourier_us: f64,
}

pub fn bench(sizes: &[usize], reps: usize) -> Vec<BenchRow> {
    use scoba::beamformers::{conv2d_self, ConvMethod};
    let reps = reps.max(1);
    sizes
        .iter()
        .filter(|&&n| n > 0)
        .map(|&n| {
            let r = ndarray::Array2::from_shape_fn((n, n), |(i, j)| {
                num_complex::Complex::new(((i * 7 + j * 3) as f64).sin(), ((i * 5 + j * 11) as f64).cos())
            });
            let time = |m: ConvMethod| {
                let t = Instant::now();
                for _ in 0..reps {
                    std::hint::black_box(conv2d_self(std::hint::black_box(&r), m));
                }
                t.elapsed().as_secs_f64() * 1e6 / reps as f64
            };
            BenchRow { size: n, direct_us: time(ConvMethod::Direct), fourier_us: time(ConvMethod::Fourier) }
        })
        .collect()
}

/// Loads a grid spec file.
pub fn load_grid(path: &Path) -> CliResult<ImagingGrid> {
    crate::config::GridSpec::load(path)
}

/// Checks that `subset` can be beamformed from a cube recorded on `rx`.
pub fn check_subset(subset: &ElementSet, rx: &ElementSet) -> CliResult<()> {
    if !subset.same_pitch(rx) {
        return Err(CliError::config("array pitch differs from the cube's receive array"));
    }
    if !subset.is_subset_of(rx) {
        return Err(CliError::config("array has elements that were not recorded in the cube"));
    }
    Ok(())
}
