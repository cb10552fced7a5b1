#![allow(clippy::neg_cmp_op_on_partial_ord)]
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use scoba::acoustic_sim::{CENTER_FREQ, PITCH, SOUND_SPEED};
use scoba::array_geometry::{
    fractal_expand, intrinsic_counts, is_full_coarray, is_sparse_wrt, is_symmetric, make_upa, named_sparse,
    sum_coarray, ApodizationMap, NamedSparse,
};
use scoba::beam_pattern::{coba_receive_beam_pattern, pattern_metrics, receive_beam_pattern, AngleGrid};
use scoba::beamformers::{compound_subset, default_user_weights, effective_weights, ScobaPath, WeightMode};
use scoba::metrics::SliceSpec;
use scoba::{ApodizationKind, ElementSet};

use scoba_cli::config::{preset, ExperimentConfig, ImageFormat, Method, MetricsSpec, ResolvedBeamformer};
use scoba_cli::error::{CliError, CliResult, StageExt};
use scoba_cli::pipeline;
use scoba_cli::{ENV_OUT_DIR, ENV_WORKERS};

#[derive(Parser)]
#[command(name = "scoba", version, about = "Sparse convolutional beamforming for 3D ultrafast ultrasound")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = ENV_WORKERS)]
    workers: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create, inspect, expand and validate array descriptors.
    #[command(subcommand)]
    Array(ArrayCommand),
    /// Far-field receive beam pattern as CSV.
    Beampattern(BeampatternArgs),
    /// Simulate the IQ cube of an experiment config.
    Simulate(SimulateArgs),
    /// Compound and beamform an IQ cube into a volume.
    Beamform(BeamformArgs),
    /// Contrast ratio and FWHM of a volume as a CSV row.
    Metrics(MetricsArgs),
    /// Log-compressed plane of a volume as an 8-bit image.
    Render(RenderArgs),
    /// Full experiment: simulate, beamform, metrics, render, manifest.
    Run(RunArgs),
    /// Run several configs and tabulate them against the first method.
    Compare(CompareArgs),
    /// Direct vs Fourier self-convolution timing.
    Bench(BenchArgs),
}

#[derive(Subcommand)]
enum ArrayCommand {
    /// Write a descriptor for a standard layout.
    Generate(GenerateArgs),
    /// Element count, co-array size and design checks.
    Inspect(InspectArgs),
    /// Recursive fractal expansion of a generator.
    Fractal(FractalArgs),
    /// Check that a thinned array is sparse with respect to a full one.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    Upa,
    Plus,
    X,
    Box,
}

#[derive(Args)]
struct Pitch {
    #[arg(long, default_value_t = PITCH)]
    pitch_x_m: f64,
    #[arg(long, default_value_t = PITCH)]
    pitch_y_m: f64,
}

#[derive(Args)]
struct GenerateArgs {
    /// Standard shape inside a (2K+1) x (2K+1) aperture.
    #[arg(long, value_enum, conflicts_with = "preset")]
    shape: Option<Shape>,
    /// Half extent K (x and y).
    #[arg(long, default_value_t = 15)]
    half_extent: u32,
    /// Half extent in y for UPAs, when different from x.
    #[arg(long)]
    half_extent_y: Option<u32>,
    /// Nested layout: array_i, array_ii or array_iii.
    #[arg(long)]
    preset: Option<String>,
    #[command(flatten)]
    pitch: Pitch,
    /// Output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    array: PathBuf,
    /// Also write the intrinsic apodization as `n,m,count` rows.
    #[arg(long)]
    coarray_csv: Option<PathBuf>,
}

#[derive(Args)]
struct FractalArgs {
    #[arg(long)]
    generator: PathBuf,
    #[arg(long)]
    order: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    thinned: PathBuf,
    #[arg(long)]
    full: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PatternMethod {
    Das,
    Coba,
}

#[derive(Clone, Copy, ValueEnum)]
enum Weights {
    UnityEffective,
    UnityActing,
}

impl From<Weights> for WeightMode {
    fn from(w: Weights) -> Self {
        match w {
            Weights::UnityEffective => WeightMode::UnityEffective,
            Weights::UnityActing => WeightMode::UnityActing,
        }
    }
}

#[derive(Args)]
struct BeampatternArgs {
    #[arg(long)]
    array: PathBuf,
    #[arg(long, value_enum, default_value = "coba")]
    method: PatternMethod,
    #[arg(long, value_enum, default_value = "unity-effective")]
    weights: Weights,
    #[arg(long, default_value_t = CENTER_FREQ)]
    center_freq_hz: f64,
    #[arg(long, default_value_t = SOUND_SPEED)]
    sound_speed_mps: f64,
    /// Azimuth slices in degrees.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 45.0, 90.0])]
    phis_deg: Vec<f64>,
    /// Polar angle step in degrees over [-90, 90].
    #[arg(long, default_value_t = 0.5)]
    theta_step_deg: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Cube file; the transmit scheme goes next to it as `<out>.scheme.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BeamformMethod {
    Das,
    Coba,
    Scoba,
}

#[derive(Clone, Copy, ValueEnum)]
enum PathArg {
    Pairwise,
    ZeroFill,
}

#[derive(Args)]
struct BeamformArgs {
    #[arg(long, value_enum)]
    method: BeamformMethod,
    /// Receive elements to use; their pitch also applies to the cube.
    #[arg(long)]
    array: PathBuf,
    /// Imaging grid spec (JSON).
    #[arg(long)]
    grid: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Transmit scheme JSON; defaults to the cube's sidecar.
    #[arg(long)]
    scheme: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "unity-effective")]
    weights: Weights,
    #[arg(long, value_enum, default_value = "zero-fill")]
    scoba_path: PathArg,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Region spec: `{ "dynamic_range_db", "cyst": {...}, "point": {...} }`.
    #[arg(long)]
    regions: PathBuf,
    /// Method name for the row; defaults to the volume's beamformer.
    #[arg(long)]
    label: Option<String>,
    /// Descriptor of the receive elements, for the element count.
    #[arg(long)]
    array: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SliceArg {
    Xz,
    Yz,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "xz")]
    slice: SliceArg,
    #[arg(long, default_value_t = 80.0)]
    dynamic_range_db: f64,
    /// `.png` or `.pgm`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long, env = ENV_OUT_DIR)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Two or more experiment configs; the first method of the first is the baseline.
    #[arg(long = "config", required = true)]
    configs: Vec<PathBuf>,
    #[arg(long, env = ENV_OUT_DIR, default_value = "out")]
    out_dir: PathBuf,
    /// Report file (default `<out-dir>/compare.csv`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Aperture sizes N (inputs are N x N).
    #[arg(long, value_delimiter = ',', default_values_t = [3usize, 7, 15, 31])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_array(path: &Path) -> CliResult<ElementSet> {
    scoba::io::load_descriptor(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str, stage: &str) -> CliResult<()> {
    match out {
        Some(p) => fs::write(p, text).stage(stage),
        None => std::io::stdout().write_all(text.as_bytes()).stage(stage),
    }
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).stage("report")?;
    for r in rows {
        w.write_record(r).stage("report")?;
    }
    String::from_utf8(w.into_inner().stage("report")?).stage("report")
}

fn array_cmd(cmd: ArrayCommand) -> CliResult<()> {
    match cmd {
        ArrayCommand::Generate(a) => {
            let (px, py) = (a.pitch.pitch_x_m, a.pitch.pitch_y_m);
            let k = a.half_extent;
            let set = match (a.preset, a.shape) {
                (Some(name), _) => named_sparse(&preset(&name)?, px, py),
                (None, Some(Shape::Upa)) | (None, None) => make_upa(k, a.half_extent_y.unwrap_or(k), px, py),
                (None, Some(Shape::Plus)) => named_sparse(&NamedSparse::Plus { half_extent: k }, px, py),
                (None, Some(Shape::X)) => named_sparse(&NamedSparse::X { half_extent: k }, px, py),
                (None, Some(Shape::Box)) => named_sparse(&NamedSparse::Box { half_extent: k }, px, py),
            }
            .map_err(CliError::config)?;
            let text = scoba::io::descriptor_to_string(&set).stage("array generate")? + "\n";
            emit(a.out.as_deref(), &text, "array generate")
        }
        ArrayCommand::Inspect(a) => {
            let set = load_array(&a.array)?;
            let co = sum_coarray(&set).stage("array inspect")?;
            let counts = intrinsic_counts(&set).stage("array inspect")?;
            let b = set.bounds().expect("non-empty descriptor");
            let cb = co.bounds().expect("non-empty co-array");
            let report = json!({
                "elements": set.len(),
                "pitch_x_m": set.pitch_x(),
                "pitch_y_m": set.pitch_y(),
                "bounds": [b.n_min, b.n_max, b.m_min, b.m_max],
                "is_upa": set.is_upa(),
                "symmetric": is_symmetric(&set),
                "coarray_elements": co.len(),
                "coarray_bounds": [cb.n_min, cb.n_max, cb.m_min, cb.m_max],
                "full_coarray": is_full_coarray(&set),
                "max_intrinsic_apodization": counts.values().max(),
            });
            println!("{}", serde_json::to_string_pretty(&report).stage("array inspect")?);
            if let Some(p) = a.coarray_csv {
                let rows: Vec<Vec<String>> =
                    counts.iter().map(|(&(n, m), c)| vec![n.to_string(), m.to_string(), c.to_string()]).collect();
                fs::write(p, csv_text(&["n", "m", "count"], &rows)?).stage("array inspect")?;
            }
            Ok(())
        }
        ArrayCommand::Fractal(a) => {
            let g = load_array(&a.generator)?;
            let f = fractal_expand(&g, a.order).map_err(CliError::config)?;
            for w in &f.warnings {
                log::warn!("{w}");
            }
            eprintln!("order {}: {} elements, scale {:?}", a.order, f.elements.len(), f.scale);
            let text = scoba::io::descriptor_to_string(&f.elements).stage("array fractal")? + "\n";
            emit(a.out.as_deref(), &text, "array fractal")
        }
        ArrayCommand::Validate(a) => {
            let t = load_array(&a.thinned)?;
            let e = load_array(&a.full)?;
            let sparse = is_sparse_wrt(&t, &e).map_err(CliError::config)?;
            println!(
                "{}",
                json!({ "thinned_elements": t.len(), "full_elements": e.len(), "sparse": sparse,
                        "symmetric": is_symmetric(&t), "full_coarray": is_full_coarray(&t) })
            );
            if sparse {
                Ok(())
            } else {
                Err(CliError::runtime("array validate", "thinned array is not sparse with respect to the full array"))
            }
        }
    }
}

fn beampattern_cmd(a: BeampatternArgs) -> CliResult<()> {
    let set = load_array(&a.array)?;
    if !(a.theta_step_deg > 0.0) {
        return Err(CliError::config("theta step must be positive"));
    }
    let n = (180.0 / a.theta_step_deg).round() as usize;
    let thetas: Vec<f64> = (0..=n).map(|i| (-90.0 + i as f64 * 180.0 / n as f64).to_radians()).collect();
    let grid = AngleGrid::new(thetas, a.phis_deg.iter().map(|p| p.to_radians()).collect()).map_err(CliError::config)?;
    let wavelength = a.sound_speed_mps / a.center_freq_hz;
    let bp = match a.method {
        PatternMethod::Das => receive_beam_pattern(
            &ApodizationMap::<f64>::unity(&set, ApodizationKind::User),
            &grid,
            wavelength,
            set.pitch_x(),
            set.pitch_y(),
        ),
        PatternMethod::Coba => default_user_weights::<f64>(&set, a.weights.into())
            .and_then(|w| effective_weights(&w, &set))
            .and_then(|acting| coba_receive_beam_pattern(&set, &acting, &grid, wavelength)),
    }
    .stage("beampattern")?;
    let db = bp.magnitude_db();
    let mut rows = Vec::with_capacity(db.len());
    for (i, t) in grid.thetas.iter().enumerate() {
        for (j, p) in grid.phis.iter().enumerate() {
            rows.push(vec![
                format!("{:.4}", t.to_degrees()),
                format!("{:.4}", p.to_degrees()),
                format!("{:.6}", db[[i, j]]),
            ]);
        }
    }
    emit(a.out.as_deref(), &csv_text(&["theta_deg", "phi_deg", "magnitude_db"], &rows)?, "beampattern")?;
    let m = pattern_metrics(&bp).stage("beampattern")?;
    eprintln!(
        "mainlobe {:.3} deg (-3 dB {:.3} deg), peak sidelobe {}",
        m.mainlobe_width_deg,
        m.mainlobe_width_3db_deg,
        m.peak_sidelobe_db.map(|v| format!("{v:.2} dB")).unwrap_or_else(|| "none".into())
    );
    Ok(())
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn simulate_cmd(a: SimulateArgs) -> CliResult<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let r = cfg.resolve(&config_dir(&a.config))?;
    let cube = pipeline::simulate_cube(&r).stage("simulate")?;
    scoba::io::save_iq_cube(&a.out, &cube).stage("simulate")?;
    eprintln!("{} events x {} elements x {} samples", cube.n_events(), cube.n_elements(), cube.n_samples());
    Ok(())
}

fn beamform_cmd(a: BeamformArgs) -> CliResult<()> {
    let array = load_array(&a.array)?;
    let grid = pipeline::load_grid(&a.grid)?;
    let scheme = match &a.scheme {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
            Some(serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    let cube = scoba::io::load_iq_cube::<f32>(&a.input, array.pitch_x(), array.pitch_y(), scheme)
        .map_err(|e| CliError::config(format!("{}: {e}", a.input.display())))?;
    pipeline::check_subset(&array, &cube.rx_array)?;
    let method = match a.method {
        BeamformMethod::Das => Method::Das,
        BeamformMethod::Coba => Method::Coba,
        BeamformMethod::Scoba => Method::Scoba,
    };
    if method == Method::Coba && !array.is_upa() {
        return Err(CliError::config("coba needs a fully populated array; use --method scoba"));
    }
    let bf = ResolvedBeamformer {
        label: format!("{:?}", method.kind()),
        method,
        array: array.clone(),
        weights: a.weights.into(),
        scoba_path: match a.scoba_path {
            PathArg::Pairwise => ScobaPath::Pairwise,
            PathArg::ZeroFill => ScobaPath::ZeroFill,
        },
    };
    let field = compound_subset(&cube.cast::<f64>(), &grid, &array).stage("compound")?;
    let vol = pipeline::beamform_one(&field, &bf).stage("beamform")?;
    scoba::io::save_volume(&a.out, &vol).stage("beamform")
}

fn metrics_cmd(a: MetricsArgs) -> CliResult<()> {
    let vol =
        scoba::io::load_volume::<f64>(&a.input).map_err(|e| CliError::config(format!("{}: {e}", a.input.display())))?;
    let text = fs::read_to_string(&a.regions).map_err(|e| CliError::config(format!("{}: {e}", a.regions.display())))?;
    let spec: MetricsSpec =
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", a.regions.display())))?;
    let elements = match &a.array {
        Some(p) => load_array(p)?.len(),
        None => 0,
    };
    let label = a.label.unwrap_or_else(|| format!("{:?}", vol.beamformer));
    let row = pipeline::volume_metrics(&vol, &spec, &label, elements);
    let mut buf = Vec::new();
    pipeline::write_metrics_csv(&mut buf, &[row]).stage("metrics")?;
    emit(a.out.as_deref(), &String::from_utf8_lossy(&buf), "metrics")
}

fn render_cmd(a: RenderArgs) -> CliResult<()> {
    let vol =
        scoba::io::load_volume::<f64>(&a.input).map_err(|e| CliError::config(format!("{}: {e}", a.input.display())))?;
    let format = match a.out.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => ImageFormat::Png,
        Some("pgm") => ImageFormat::Pgm,
        _ => return Err(CliError::config("render output must end in .png or .pgm")),
    };
    let slice = match a.slice {
        SliceArg::Xz => SliceSpec::Xz,
        SliceArg::Yz => SliceSpec::Yz,
    };
    let f = std::io::BufWriter::new(fs::File::create(&a.out).stage("render")?);
    pipeline::encode_slice(&vol, slice, a.dynamic_range_db, format, f)
}

fn run_cmd(a: RunArgs) -> CliResult<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let base = config_dir(&a.config);
    let out = a.out_dir.unwrap_or_else(|| base.join(&cfg.output.dir));
    let manifest = pipeline::run(&cfg, &base, &out)?;
    eprintln!(
        "{} events, {} volumes, config {} -> {}",
        manifest.n_events,
        manifest.beamformers.len(),
        &manifest.config_hash[..12],
        out.display()
    );
    let mut buf = Vec::new();
    pipeline::write_metrics_csv(&mut buf, &manifest.metrics).stage("metrics")?;
    print!("{}", String::from_utf8_lossy(&buf));
    Ok(())
}

fn compare_cmd(a: CompareArgs) -> CliResult<()> {
    let rows = pipeline::compare(&a.configs, &a.out_dir)?;
    let text = csv_text(&pipeline::COMPARE_HEADER, &rows)?;
    let out = a.out.unwrap_or_else(|| a.out_dir.join("compare.csv"));
    fs::write(&out, &text).stage("compare")?;
    print!("{text}");
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> CliResult<()> {
    let rows: Vec<Vec<String>> = pipeline::bench(&a.sizes, a.reps)
        .into_iter()
        .map(|r| {
            vec![
                r.size.to_string(),
                format!("{:.2}", r.direct_us),
                format!("{:.2}", r.fourier_us),
                format!("{:.3}", r.direct_us / r.fourier_us),
            ]
        })
        .collect();
    emit(a.out.as_deref(), &csv_text(&["size", "direct_us", "fourier_us", "speedup"], &rows)?, "bench")
}

fn dispatch(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::config("worker count must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(CliError::config)?;
    }
    match cli.command {
        Command::Array(c) => array_cmd(c),
        Command::Beampattern(a) => beampattern_cmd(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Beamform(a) => beamform_cmd(a),
        Command::Metrics(a) => metrics_cmd(a),
        Command::Render(a) => render_cmd(a),
        Command::Run(a) => run_cmd(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Bench(a) => bench_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
