//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scoba::array_geometry::{
    fractal_expand, intrinsic_apodization, intrinsic_counts, is_full_coarray, is_sparse_wrt, is_symmetric, make_upa,
    named_sparse, sum_coarray, ApodizationMap, NamedSparse,
};
use scoba::beam_pattern::{coba_receive_beam_pattern, receive_beam_pattern, AngleGrid};
use scoba::beamformers::{
    coba3d, conv2d_self, default_user_weights, scoba3d, CompoundField, ConvMethod, ImagingGrid, ScobaPath, WeightMode,
};
use scoba::{ApodizationKind, Cx, ElementSet, Index2};
use scoba_cli::config::ExperimentConfig;
use scoba_cli::pipeline::{self, Manifest, MetricsRow};

const P: f64 = 300e-6;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn random_cx(rng: &mut ChaCha8Rng) -> Cx<f64> {
    Cx::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

fn random_field(rng: &mut ChaCha8Rng, rx: &ElementSet, depths: usize) -> CompoundField<f64> {
    let grid = ImagingGrid::new(vec![(0.0, 0.0)], (1..=depths).map(|i| 0.01 * i as f64).collect()).unwrap();
    let y = Array2::from_shape_simple_fn((depths, rx.len()), || random_cx(rng));
    CompoundField::new(y, rx.clone(), grid).unwrap()
}

fn max_rel_diff(a: &Array2<Cx<f64>>, b: &Array2<Cx<f64>>) -> f64 {
    let scale = a.iter().chain(b.iter()).map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / scale
}

fn pair_counts(set: &ElementSet) -> BTreeMap<Index2, u64> {
    let mut out = BTreeMap::new();
    for &(a, b) in set.positions() {
        for &(c, d) in set.positions() {
            *out.entry((a + c, b + d)).or_insert(0) += 1;
        }
    }
    out
}

fn subsets_of_box(half: i32) -> impl Iterator<Item = ElementSet> {
    let cells: Vec<Index2> = (-half..=half).flat_map(|n| (-half..=half).map(move |m| (n, m))).collect();
    (1u64..(1 << cells.len())).map(move |mask| {
        let ps = cells.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &p)| p).collect();
        ElementSet::new(ps, P, P).unwrap()
    })
}

fn within(start: Instant, limit: Duration) -> Result<Duration, String> {
    let t = start.elapsed();
    ensure!(t <= limit, "took {:.1} s, limit {} s", t.as_secs_f64(), limit.as_secs());
    Ok(t)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let upa = make_upa(15, 15, P, P).unwrap();
    let co = sum_coarray(&upa).unwrap();
    ensure!(co.len() == 3721, "co-array has {} elements", co.len());
    ensure!(co == make_upa(30, 30, P, P).unwrap(), "co-array is not UPA(30,30)");

    let mut checked = 0usize;
    let mut check = |set: &ElementSet| -> Result<(), String> {
        let brute = pair_counts(set);
        ensure!(intrinsic_counts(set).unwrap() == brute, "counts differ on {:?}", set.positions());
        let a = intrinsic_apodization::<f64>(set).unwrap();
        ensure!(a.len() == brute.len(), "apodization support differs on {:?}", set.positions());
        for (p, c) in &brute {
            ensure!(a.get(*p) == Some(*c as f64), "apodization at {p:?} differs");
        }
        checked += 1;
        Ok(())
    };
    for set in subsets_of_box(1) {
        check(&set)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..3000 {
        let n = rng.random_range(1..=49usize);
        let half = rng.random_range(3..=20i32);
        let ps: Vec<Index2> =
            (0..n).map(|_| (rng.random_range(-half..=half), rng.random_range(-half..=half))).collect();
        check(&ElementSet::from_iter_dedup(ps, P, P).unwrap())?;
    }
    for shape in
        [NamedSparse::Plus { half_extent: 12 }, NamedSparse::X { half_extent: 12 }, NamedSparse::Box { half_extent: 6 }]
    {
        check(&named_sparse(&shape, P, P).unwrap())?;
    }
    let t = within(start, Duration::from_secs(10))?;
    Ok(format!("co-array 3721 = UPA(30,30); {checked} arrays match pair enumeration; {:.2} s", t.as_secs_f64()))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let upa = make_upa(1, 1, P, P).unwrap();
    for (r, want) in [(1u32, 25usize), (2, 625), (3, 15625)] {
        let f = fractal_expand(&upa, r).unwrap().elements;
        ensure!(f.len() == 9usize.pow(r), "order {r}: {} elements", f.len());
        let co = sum_coarray(&f).unwrap().len();
        ensure!(co == want, "order {r}: co-array {co}, expected {want}");
    }
    let generators: Vec<ElementSet> = subsets_of_box(1).filter(|g| is_symmetric(g) && is_full_coarray(g)).collect();
    ensure!(!generators.is_empty(), "no generators found");
    for g in &generators {
        for r in 1..=3 {
            let f = fractal_expand(g, r).unwrap().elements;
            ensure!(is_symmetric(&f), "order {r} of {:?} not symmetric", g.positions());
            ensure!(is_full_coarray(&f), "order {r} of {:?} lost a full co-array", g.positions());
        }
    }
    let t = within(start, Duration::from_secs(10))?;
    Ok(format!(
        "9^r elements, co-arrays 25/625/15625; {} generators keep symmetry and fullness; {:.2} s",
        generators.len(),
        t.as_secs_f64()
    ))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let (r, c) = if i < 4 { (31, 31) } else { (rng.random_range(1..=31), rng.random_range(1..=31)) };
        let m = Array2::from_shape_simple_fn((r, c), || random_cx(&mut rng));
        let d = conv2d_self(&m, ConvMethod::Direct);
        let f = conv2d_self(&m, ConvMethod::Fourier);
        ensure!(d.dim() == f.dim(), "shapes differ for {r}x{c}");
        let e = max_rel_diff(&d, &f);
        ensure!(e <= 1e-10, "{r}x{c}: relative difference {e:e}");
        worst = worst.max(e);
    }
    let t = within(start, Duration::from_secs(30))?;
    Ok(format!("200 matrices, worst relative difference {worst:.1e}; {:.2} s", t.as_secs_f64()))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_eq = 0.0f64;
    for n in 0..=3 {
        for m in 0..=3 {
            let upa = make_upa(n, m, P, P).unwrap();
            let f = random_field(&mut rng, &upa, 3);
            for mode in [WeightMode::UnityEffective, WeightMode::UnityActing] {
                let w = default_user_weights(&upa, mode).unwrap();
                let c = coba3d(&f, &w).unwrap();
                for path in [ScobaPath::ZeroFill, ScobaPath::Pairwise] {
                    let s = scoba3d(&f, &upa, &w, path).unwrap();
                    let e = max_rel_diff(&c.values, &s.values);
                    ensure!(e <= 1e-12, "{}x{} {mode:?} {path:?}: {e:e}", 2 * n + 1, 2 * m + 1);
                    worst_eq = worst_eq.max(e);
                }
            }
        }
    }
    let upa = make_upa(15, 15, P, P).unwrap();
    let f = random_field(&mut rng, &upa, 4);
    let w = default_user_weights(&upa, WeightMode::UnityEffective).unwrap();
    let c = coba3d(&f, &w).unwrap();
    let s = scoba3d(&f, &upa, &w, ScobaPath::ZeroFill).unwrap();
    let e = max_rel_diff(&c.values, &s.values);
    ensure!(e <= 1e-12, "31x31: {e:e}");
    worst_eq = worst_eq.max(e);

    let mut worst_path = 0.0f64;
    let layouts = [
        NamedSparse::Plus { half_extent: 15 },
        NamedSparse::X { half_extent: 15 },
        NamedSparse::Box { half_extent: 15 },
        NamedSparse::ARRAY_I,
        NamedSparse::ARRAY_II,
        NamedSparse::ARRAY_III,
    ];
    for layout in &layouts {
        let set = named_sparse(layout, P, P).unwrap();
        let f = random_field(&mut rng, &upa, 3);
        for mode in [WeightMode::UnityEffective, WeightMode::UnityActing] {
            let w = default_user_weights(&set, mode).unwrap();
            let a = scoba3d(&f, &set, &w, ScobaPath::Pairwise).unwrap();
            let b = scoba3d(&f, &set, &w, ScobaPath::ZeroFill).unwrap();
            let e = max_rel_diff(&a.values, &b.values);
            ensure!(e <= 1e-10, "{layout:?} {mode:?}: pairwise vs zero-fill {e:e}");
            worst_path = worst_path.max(e);
        }
    }
    Ok(format!("scoba(T=E) = coba to {worst_eq:.1e}; pairwise = zero-fill to {worst_path:.1e} on + X box I II III"))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let upa = make_upa(7, 7, P, P).unwrap();
    let coarray = sum_coarray(&upa).unwrap();
    let omega = std::f64::consts::TAU * 3e6;
    let c = 1540.0;
    let w = ApodizationMap::unity(&coarray, ApodizationKind::User);
    let times = [0.0, 0.7e-7, 2.9e-7];
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let theta: f64 = rng.random_range(-1.2..1.2);
        let phi: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let (ux, uy) = (theta.sin() * phi.cos(), theta.sin() * phi.sin());
        let tau = |(n, m): Index2| (n as f64 * P * ux + m as f64 * P * uy) / c;
        let grid = ImagingGrid::new(vec![(0.0, 0.0)], vec![0.01, 0.02, 0.03]).unwrap();
        let y = Array2::from_shape_fn((times.len(), upa.len()), |(k, e)| {
            Cx::from_polar(1.0, omega * times[k] - omega * tau(upa.positions()[e]))
        });
        let field = CompoundField::new(y, upa.clone(), grid).unwrap();
        let b = coba3d(&field, &w).unwrap();
        let sum: Cx<f64> = w.iter().map(|(p, wv)| Cx::from_polar(wv, -omega * tau(p))).sum();
        for (k, &t) in times.iter().enumerate() {
            let expect = Cx::from_polar(1.0, 2.0 * omega * t) * sum;
            let got = b.values[[0, k]];
            let e = (got - expect).norm() / expect.norm().max(got.norm());
            ensure!(e <= 1e-9, "θ={theta:.3} φ={phi:.3} t={t:e}: {got} vs {expect}");
            worst = worst.max(e);
        }
    }

    let lambda = c / 3e6;
    let angles = AngleGrid::default_slices();
    let upa15 = make_upa(15, 15, P, P).unwrap();
    let a = intrinsic_apodization::<f64>(&upa15).unwrap();
    let acting = a.map_values(ApodizationKind::User, |_, v| 1.0 / v);
    let coba = coba_receive_beam_pattern(&upa15, &acting, &angles, lambda).unwrap();
    let doubled = make_upa(30, 30, P, P).unwrap();
    let das =
        receive_beam_pattern(&ApodizationMap::unity(&doubled, ApodizationKind::User), &angles, lambda, P, P).unwrap();
    let e = max_rel_diff(&coba.values, &das.values);
    ensure!(e <= 1e-9, "COBA pattern vs doubled-UPA DAS pattern: {e:e}");
    Ok(format!("closed form over 50 directions to {worst:.1e}; COBA(31x31) pattern = DAS(61x61) to {e:.1e}"))
}

fn run_config(name: &str, out: &Path) -> Result<Manifest, String> {
    let path = configs_dir().join(name);
    let cfg = ExperimentConfig::load(&path).map_err(|e| e.to_string())?;
    pipeline::run(&cfg, &configs_dir(), out).map_err(|e| e.to_string())
}

fn row<'a>(rows: &'a [MetricsRow], label: &str) -> Result<&'a MetricsRow, String> {
    rows.iter().find(|r| r.method == label).ok_or_else(|| format!("no metrics for {label}"))
}

fn fwhm_x(rows: &[MetricsRow], label: &str) -> Result<f64, String> {
    row(rows, label)?.fwhm_x_mm.ok_or_else(|| format!("{label}: lateral FWHM unavailable"))
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let m = run_config("point.json", dir.path())?;
    ensure!(m.n_events == 81, "{} events", m.n_events);
    let das = fwhm_x(&m.metrics, "DAS")?;
    let coba = fwhm_x(&m.metrics, "COBA")?;
    let scoba = fwhm_x(&m.metrics, "SCOBA II")?;
    let elements = row(&m.metrics, "SCOBA II")?.elements;
    let ratio = coba / das;
    let t = within(start, Duration::from_secs(300));
    let detail = format!(
        "lateral FWHM DAS {das:.2} mm, COBA {coba:.2} mm (ratio {ratio:.2}), SCOBA II ({elements}) {scoba:.2} mm"
    );
    ensure!(elements == 169, "SCOBA II uses {elements} elements");
    ensure!(ratio < 0.75, "{detail}: ratio not below 0.75");
    ensure!(scoba < das, "{detail}: SCOBA II not narrower than DAS");
    Ok(format!("{detail}; {:.1} s", t?.as_secs_f64()))
}

fn cr(rows: &[MetricsRow], label: &str) -> Result<f64, String> {
    row(rows, label)?.cr_db.ok_or_else(|| format!("{label}: CR unavailable"))
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let m = run_config("cyst.json", dir.path())?;
    let das = cr(&m.metrics, "DAS")?;
    let coba = cr(&m.metrics, "COBA")?;
    let s1 = cr(&m.metrics, "SCOBA I")?;
    let s2 = cr(&m.metrics, "SCOBA II")?;
    let diag = format!(
        "[intrinsic weights kept: COBA {:.2}, SCOBA I {:.2}, SCOBA II {:.2}]",
        cr(&m.metrics, "COBA acting")?,
        cr(&m.metrics, "SCOBA I acting")?,
        cr(&m.metrics, "SCOBA II acting")?
    );
    let detail = format!(
        "CR dB: DAS {das:.2}, COBA {coba:.2}, SCOBA I {s1:.2}, SCOBA II {s2:.2} over {} scatterers {diag}",
        m.n_scatterers
    );
    let t = within(start, Duration::from_secs(600)).map_err(|e| format!("{detail}; {e}"))?;
    let mut failed = Vec::new();
    if coba > das - 2.0 {
        failed.push("COBA not 2 dB below DAS");
    }
    if s1 > das {
        failed.push("SCOBA I above DAS");
    }
    if s2 > das {
        failed.push("SCOBA II above DAS");
    }
    ensure!(failed.is_empty(), "{detail}: {}", failed.join(", "));
    Ok(format!("{detail}; {:.1} s", t.as_secs_f64()))
}

fn criterion_8() -> Outcome {
    let full = make_upa(15, 15, P, P).unwrap();
    let layouts = [
        ("plus", NamedSparse::Plus { half_extent: 15 }, 61),
        ("x", NamedSparse::X { half_extent: 15 }, 61),
        ("box", NamedSparse::Box { half_extent: 15 }, 120),
        ("I", NamedSparse::ARRAY_I, 225),
        ("II", NamedSparse::ARRAY_II, 169),
        ("III", NamedSparse::ARRAY_III, 121),
    ];
    let mut parts = Vec::new();
    let mut failed = Vec::new();
    for (name, layout, want) in &layouts {
        let set = named_sparse(layout, P, P).unwrap();
        let sparse = is_sparse_wrt(&set, &full).unwrap();
        parts.push(format!("{name} {}{}", set.len(), if sparse { "" } else { " (not sparse)" }));
        if set.len() != *want {
            failed.push(format!("{name} has {} elements, expected {want}", set.len()));
        }
        if !sparse {
            failed.push(format!("{name} co-array does not cover the 31x31 UPA"));
        }
    }
    let detail = parts.join(", ");
    ensure!(failed.is_empty(), "{detail}: {}", failed.join("; "));
    Ok(detail)
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect()
}

fn without_timings(bytes: &[u8]) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
    v.as_object_mut().unwrap().remove("stages");
    v
}

fn criterion_9() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_config("point.json", a.path())?;
    run_config("point.json", b.path())?;
    let (fa, fb) = (files(a.path()), files(b.path()));
    ensure!(fa.keys().eq(fb.keys()), "file sets differ: {:?} vs {:?}", fa.keys(), fb.keys());
    ensure!(!fa.keys().any(|k| k.ends_with(".partial")), "partial files left behind");
    for (name, bytes) in &fa {
        if name == pipeline::MANIFEST {
            ensure!(without_timings(bytes) == without_timings(&fb[name]), "manifest differs beyond stage timings");
        } else {
            ensure!(bytes == &fb[name], "{name} differs between runs");
        }
    }

    let dir = a.path();
    let rx_text = &fa["rx.json"];
    let rx = scoba::io::load_descriptor(dir.join("rx.json")).map_err(|e| e.to_string())?;
    ensure!(
        (scoba::io::descriptor_to_string(&rx).unwrap() + "\n").as_bytes() == rx_text.as_slice(),
        "descriptor round-trip"
    );

    let cube = scoba::io::load_iq_cube::<f32>(dir.join(pipeline::CUBE), rx.pitch_x(), rx.pitch_y(), None)
        .map_err(|e| e.to_string())?;
    let mut bytes = Vec::new();
    scoba::io::write_iq_cube(&mut bytes, &cube).unwrap();
    ensure!(bytes == fa[pipeline::CUBE], "IQ cube round-trip");
    let scheme_name = format!("{}.scheme.json", pipeline::CUBE);
    let scheme: scoba::acoustic_sim::TransmitScheme = serde_json::from_slice(&fa[&scheme_name]).unwrap();
    ensure!(
        serde_json::to_string_pretty(&scheme).unwrap().as_bytes() == fa[&scheme_name].as_slice(),
        "scheme round-trip"
    );

    let mut volumes = 0;
    for name in fa.keys().filter(|n| n.ends_with(".bvol")) {
        let v32 = scoba::io::load_volume::<f32>(dir.join(name)).map_err(|e| e.to_string())?;
        let v64 = scoba::io::load_volume::<f64>(dir.join(name)).map_err(|e| e.to_string())?;
        for bytes in [
            {
                let mut b = Vec::new();
                scoba::io::write_volume(&mut b, &v32).unwrap();
                b
            },
            {
                let mut b = Vec::new();
                scoba::io::write_volume(&mut b, &v64).unwrap();
                b
            },
        ] {
            ensure!(bytes == fa[name], "{name} round-trip");
        }
        volumes += 1;
    }

    let rows = pipeline::read_metrics_csv(&dir.join(pipeline::METRICS_CSV)).map_err(|e| e.to_string())?;
    let mut csv = Vec::new();
    pipeline::write_metrics_csv(&mut csv, &rows).unwrap();
    ensure!(csv == fa[pipeline::METRICS_CSV], "metrics CSV round-trip");
    Ok(format!("{} files identical across runs (manifest up to stage timings); descriptor, cube, scheme, {volumes} volumes and CSV round-trip bitwise", fa.len()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "co-array algebra", criterion_1),
        (2, "fractal design", criterion_2),
        (3, "convolution oracle", criterion_3),
        (4, "beamformer equivalences", criterion_4),
        (5, "closed-form oracle", criterion_5),
        (6, "point-target resolution", criterion_6),
        (7, "cyst contrast", criterion_7),
        (8, "element counts", criterion_8),
        (9, "determinism and round-trips", criterion_9),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (id, name, f) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("criterion {id} ({name}): PASS: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("criterion {id} ({name}): FAIL: {detail}");
            }
        }
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
