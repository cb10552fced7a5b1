//! Far-field narrow-band beam patterns.
//!
//! A receive pattern is the 2D spatial DTFT of the aperture weights,
//! `H(θ, φ) = Σ w[n,m] exp(-j (s_x n + s_y m))`, with the spatial frequencies
//! `s_x = 2π/λ · d_x sinθ cosφ` and `s_y = 2π/λ · d_y sinθ sinφ`.
//! These closed forms are design tools and analytic oracles for the
//! beamformers; the simulator and beamformers use exact near-field delays.

use ndarray::Array2;
use rayon::prelude::*;

use crate::array_geometry::{intrinsic_apodization, ApodizationKind, ApodizationMap, ElementSet};
use crate::error::{Error, Result};
use crate::scalar::{Cx, Real};

/// Azimuth `θ` and elevation `φ` samples, in radians.
#[derive(Clone, Debug, PartialEq)]
pub struct AngleGrid {
    pub thetas: Vec<f64>,
    pub phis: Vec<f64>,
}

impl AngleGrid {
    pub fn new(thetas: Vec<f64>, phis: Vec<f64>) -> Result<Self> {
        if thetas.is_empty() || phis.is_empty() {
            return Err(Error::GridMismatch("angle grid must be non-empty".into()));
        }
        let half_pi = std::f64::consts::FRAC_PI_2 + 1e-12;
        if thetas.iter().any(|t| !t.is_finite() || t.abs() > half_pi) {
            return Err(Error::GridMismatch("theta must lie within [-90°, 90°]".into()));
        }
        Ok(Self { thetas, phis })
    }

    /// θ from -90° to 90° in 0.5° steps, φ at 0°, 45° and 90°.
    pub fn default_slices() -> Self {
        let thetas = (0..=360).map(|i| (-90.0 + 0.5 * i as f64).to_radians()).collect();
        let phis = [0.0f64, 45.0, 90.0].iter().map(|d| d.to_radians()).collect();
        Self { thetas, phis }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.thetas.len(), self.phis.len())
    }
}

/// Complex pattern sampled on an [`AngleGrid`], indexed `[θ, φ]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamPattern<T> {
    pub values: Array2<Cx<T>>,
    pub grid: AngleGrid,
    pub wavelength: f64,
}

impl<T: Real> BeamPattern<T> {
    pub fn magnitude(&self) -> Array2<f64> {
        self.values.mapv(|v| v.norm().f64())
    }

    /// `20 log10(|H| / max |H|)`; `-inf` where `|H| = 0`.
    pub fn magnitude_db(&self) -> Array2<f64> {
        let mag = self.magnitude();
        let peak = mag.iter().copied().fold(0.0, f64::max);
        mag.mapv(|v| 20.0 * (v / peak).log10())
    }
}

/// Spatial frequencies `(s_x, s_y)` in radians per lattice step.
pub fn spatial_frequencies(theta: f64, phi: f64, wavelength: f64, pitch_x: f64, pitch_y: f64) -> (f64, f64) {
    let k = std::f64::consts::TAU / wavelength;
    let st = theta.sin();
    (k * pitch_x * st * phi.cos(), k * pitch_y * st * phi.sin())
}

/// `Σ w[n,m] exp(-j (s_x n + s_y m))` by explicit summation.
pub fn dtft<T: Real>(weights: &ApodizationMap<T>, s_x: f64, s_y: f64) -> Cx<T> {
    weights.iter().fold(Cx::new(T::zero(), T::zero()), |acc, ((n, m), w)| {
        let phase = -(s_x * n as f64 + s_y * m as f64);
        acc + Cx::from_polar(T::one(), T::of(phase)) * w
    })
}

fn evaluate<T: Real>(
    weights: &ApodizationMap<T>,
    grid: &AngleGrid,
    wavelength: f64,
    pitch_x: f64,
    pitch_y: f64,
) -> BeamPattern<T> {
    let (nt, np) = grid.shape();
    let flat: Vec<Cx<T>> = (0..nt * np)
        .into_par_iter()
        .map(|k| {
            let (s_x, s_y) = spatial_frequencies(grid.thetas[k / np], grid.phis[k % np], wavelength, pitch_x, pitch_y);
            dtft(weights, s_x, s_y)
        })
        .collect();
    BeamPattern {
        values: Array2::from_shape_vec((nt, np), flat).expect("shape matches grid"),
        grid: grid.clone(),
        wavelength,
    }
}

/// Receive (DAS) beam pattern of an aperture with the given weights.
pub fn receive_beam_pattern<T: Real>(
    weights: &ApodizationMap<T>,
    grid: &AngleGrid,
    wavelength: f64,
    pitch_x: f64,
    pitch_y: f64,
) -> Result<BeamPattern<T>> {
    if weights.is_empty() {
        return Err(Error::InvalidParams("receive pattern needs at least one weight".into()));
    }
    if !(wavelength > 0.0) {
        return Err(Error::InvalidParams(format!("wavelength must be positive, got {wavelength}")));
    }
    Ok(evaluate(weights, grid, wavelength, pitch_x, pitch_y))
}

/// Receive pattern of the convolutional beamformer on `array`.
///
/// `acting_weights` are the weights applied to the convolution signals. The
/// pattern is the DTFT over the sum co-array of `acting_weights * a`, where `a`
/// is the intrinsic apodization of `array`.
pub fn coba_receive_beam_pattern<T: Real>(
    array: &ElementSet,
    acting_weights: &ApodizationMap<T>,
    grid: &AngleGrid,
    wavelength: f64,
) -> Result<BeamPattern<T>> {
    let intrinsic = intrinsic_apodization::<T>(array)?;
    for p in acting_weights.support() {
        if intrinsic.get(p).is_none() {
            return Err(Error::WeightOutsideSupport(p.0, p.1));
        }
    }
    let effective = intrinsic.map_values(ApodizationKind::User, |p, a| acting_weights.weight(p) * a);
    receive_beam_pattern(&effective, grid, wavelength, array.pitch_x(), array.pitch_y())
}

/// Pointwise product of transmit and receive patterns.
pub fn two_way_pattern<T: Real>(tx: &BeamPattern<T>, rx: &BeamPattern<T>) -> Result<BeamPattern<T>> {
    if tx.grid != rx.grid {
        return Err(Error::GridMismatch("transmit and receive angle grids differ".into()));
    }
    if tx.wavelength != rx.wavelength {
        return Err(Error::GridMismatch(format!("wavelengths differ: {} vs {}", tx.wavelength, rx.wavelength)));
    }
    Ok(BeamPattern { values: &tx.values * &rx.values, grid: tx.grid.clone(), wavelength: tx.wavelength })
}

/// Main-lobe and side-lobe summary along θ at the φ slice holding the peak.
#[derive(Clone, Debug, PartialEq)]
pub struct PatternMetrics {
    /// Angular distance between the first minima bracketing the peak.
    pub mainlobe_width_deg: f64,
    /// Width where `|H|` crosses `peak / sqrt(2)`, linearly interpolated.
    pub mainlobe_width_3db_deg: f64,
    /// `20 log10(max side lobe / peak)`; `None` when nothing lies outside the main lobe.
    pub peak_sidelobe_db: Option<f64>,
    pub no_sidelobes: bool,
    pub peak_theta_deg: f64,
    pub peak_phi_deg: f64,
}

pub fn pattern_metrics<T: Real>(bp: &BeamPattern<T>) -> Result<PatternMetrics> {
    let mag = bp.magnitude();
    let (nt, _) = mag.dim();
    let ((ip, jp), peak) =
        mag.indexed_iter().fold(((0, 0), f64::NEG_INFINITY), |best, (ij, &v)| if v > best.1 { (ij, v) } else { best });
    if !(peak > 0.0) {
        return Err(Error::InvalidParams("pattern has no positive maximum".into()));
    }
    let thetas_deg: Vec<f64> = bp.grid.thetas.iter().map(|t| t.to_degrees()).collect();
    let span = thetas_deg[nt - 1] - thetas_deg[0];
    let row: Vec<f64> = (0..nt).map(|i| mag[[i, jp]]).collect();

    let flat = row.iter().all(|&v| (peak - v).abs() <= 1e-12 * peak);
    let mut left = ip;
    while left > 0 && row[left - 1] <= row[left] {
        left -= 1;
    }
    let mut right = ip;
    while right + 1 < nt && row[right + 1] <= row[right] {
        right += 1;
    }

    let sidelobe = row
        .iter()
        .enumerate()
        .filter(|&(i, _)| i < left || i > right)
        .map(|(_, &v)| v)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
    let no_sidelobes = flat || sidelobe.is_none();

    let half = peak / std::f64::consts::SQRT_2;
    let crossing = |from: usize, step: isize| -> f64 {
        let mut i = from as isize;
        loop {
            let j = i + step;
            if j < 0 || j >= nt as isize {
                return thetas_deg[i as usize];
            }
            let (a, b) = (row[i as usize], row[j as usize]);
            if b < half {
                let frac = if a > b { (a - half) / (a - b) } else { 0.0 };
                let (ta, tb) = (thetas_deg[i as usize], thetas_deg[j as usize]);
                return ta + frac * (tb - ta);
            }
            i = j;
        }
    };
    let width_3db = crossing(ip, 1) - crossing(ip, -1);

    Ok(PatternMetrics {
        mainlobe_width_deg: if no_sidelobes { span } else { thetas_deg[right] - thetas_deg[left] },
        mainlobe_width_3db_deg: width_3db,
        peak_sidelobe_db: if flat { None } else { sidelobe.map(|s| 20.0 * (s / peak).log10()) },
        no_sidelobes,
        peak_theta_deg: thetas_deg[ip],
        peak_phi_deg: bp.grid.phis[jp].to_degrees(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array_geometry::{make_upa, sum_coarray};
    use approx::assert_relative_eq;

    const P: f64 = 300e-6;
    const LAMBDA: f64 = 1540.0 / 3e6;

    fn unity(set: &ElementSet) -> ApodizationMap<f64> {
        ApodizationMap::unity(set, ApodizationKind::User)
    }

    #[test]
    fn spatial_frequency_cases() {
        assert_eq!(spatial_frequencies(0.0, 0.7, LAMBDA, P, P), (0.0, 0.0));
        let (sx, sy) = spatial_frequencies(std::f64::consts::FRAC_PI_2, 0.0, LAMBDA, P, P);
        assert_relative_eq!(sx, std::f64::consts::TAU * P / LAMBDA, max_relative = 1e-15);
        assert_eq!(sy, 0.0);
        assert_relative_eq!(LAMBDA, 513.333e-6, max_relative = 1e-5);
    }

    #[test]
    fn broadside_is_weight_sum() {
        let upa = make_upa(15, 15, P, P).unwrap();
        let grid = AngleGrid::new(vec![0.0], vec![0.0, 0.3, 1.2]).unwrap();
        let bp = receive_beam_pattern(&unity(&upa), &grid, LAMBDA, P, P).unwrap();
        for v in bp.values.iter() {
            assert_relative_eq!(v.re, 961.0, max_relative = 1e-12);
            assert!(v.im.abs() < 1e-9);
        }
    }

    #[test]
    fn line_matches_dirichlet_kernel() {
        let line = make_upa(4, 0, P, P).unwrap();
        let w = unity(&line);
        for k in 1..20 {
            let s = 0.137 * k as f64;
            let direct = dtft(&w, s, 0.0);
            let closed = (9.0 * s / 2.0).sin() / (s / 2.0).sin();
            assert_relative_eq!(direct.re, closed, epsilon = 1e-12);
            assert!(direct.im.abs() < 1e-12);
        }
    }

    #[test]
    fn coba_pattern_matches_doubled_upa() {
        let upa = make_upa(3, 2, P, P).unwrap();
        let acting = intrinsic_apodization::<f64>(&upa).unwrap().map_values(ApodizationKind::Effective, |_, a| 1.0 / a);
        let grid = AngleGrid::new((0..37).map(|i| -1.5 + 0.083 * i as f64).collect(), vec![0.0, 0.5, 1.5]).unwrap();
        let coba = coba_receive_beam_pattern(&upa, &acting, &grid, LAMBDA).unwrap();
        let doubled = make_upa(6, 4, P, P).unwrap();
        let das = receive_beam_pattern(&unity(&doubled), &grid, LAMBDA, P, P).unwrap();
        for (a, b) in coba.values.iter().zip(das.values.iter()) {
            assert!((a - b).norm() <= 1e-9 * b.norm().max(1.0));
        }
        assert_eq!(sum_coarray(&upa).unwrap(), doubled);
    }

    #[test]
    fn coba_pattern_rejects_weights_off_coarray() {
        let upa = make_upa(1, 1, P, P).unwrap();
        let mut w = std::collections::BTreeMap::new();
        w.insert((5, 0), 1.0);
        let acting = ApodizationMap::new(w, ApodizationKind::Effective);
        let grid = AngleGrid::new(vec![0.0], vec![0.0]).unwrap();
        assert!(matches!(
            coba_receive_beam_pattern(&upa, &acting, &grid, LAMBDA),
            Err(Error::WeightOutsideSupport(5, 0))
        ));
    }

    #[test]
    fn single_element_pattern_is_constant() {
        let one = make_upa(0, 0, P, P).unwrap();
        let acting = ApodizationMap::<f64>::unity(&one, ApodizationKind::Effective)
            .map_values(ApodizationKind::Effective, |_, _| 2.5);
        let bp = coba_receive_beam_pattern(&one, &acting, &AngleGrid::default_slices(), LAMBDA).unwrap();
        assert!(bp.values.iter().all(|v| (v.re - 2.5).abs() < 1e-12 && v.im.abs() < 1e-12));
        let m = pattern_metrics(&bp).unwrap();
        assert!(m.no_sidelobes);
        assert_relative_eq!(m.mainlobe_width_deg, 180.0);
    }

    #[test]
    fn two_way_identities() {
        let upa = make_upa(2, 2, P, P).unwrap();
        let grid = AngleGrid::default_slices();
        let rx = receive_beam_pattern(&unity(&upa), &grid, LAMBDA, P, P).unwrap();
        let ones = BeamPattern { values: rx.values.mapv(|_| Cx::new(1.0, 0.0)), ..rx.clone() };
        assert_eq!(two_way_pattern(&rx, &ones).unwrap().values, rx.values);
        let sq = two_way_pattern(&rx, &rx).unwrap();
        for (a, b) in sq.values.iter().zip(rx.values.iter()) {
            assert!((a - b * b).norm() < 1e-9);
        }
        // transmit-receive product equals the pattern of the auto-convolved aperture
        let conv = intrinsic_apodization::<f64>(&upa).unwrap();
        let direct = receive_beam_pattern(&conv, &grid, LAMBDA, P, P).unwrap();
        for (a, b) in sq.values.iter().zip(direct.values.iter()) {
            assert!((a - b).norm() <= 1e-9 * b.norm().max(1.0));
        }
        let other = AngleGrid::new(vec![0.0], vec![0.0]).unwrap();
        let small = receive_beam_pattern(&unity(&upa), &other, LAMBDA, P, P).unwrap();
        assert!(two_way_pattern(&rx, &small).is_err());
    }

    #[test]
    fn doubled_aperture_narrows_mainlobe() {
        let grid = AngleGrid::default_slices();
        let small = receive_beam_pattern(&unity(&make_upa(15, 15, P, P).unwrap()), &grid, LAMBDA, P, P).unwrap();
        let large = receive_beam_pattern(&unity(&make_upa(30, 30, P, P).unwrap()), &grid, LAMBDA, P, P).unwrap();
        let (ms, ml) = (pattern_metrics(&small).unwrap(), pattern_metrics(&large).unwrap());
        assert!(ml.mainlobe_width_deg < ms.mainlobe_width_deg, "{ml:?} vs {ms:?}");
        assert!(ml.mainlobe_width_3db_deg < ms.mainlobe_width_3db_deg);
    }

    #[test]
    fn triangular_weights_lower_sidelobes() {
        let line = make_upa(7, 0, P, P).unwrap();
        let tri = intrinsic_apodization::<f64>(&line).unwrap();
        let flat = unity(&sum_coarray(&line).unwrap());
        let grid =
            AngleGrid::new((0..=720).map(|i| (-90.0 + 0.25 * i as f64).to_radians()).collect(), vec![0.0]).unwrap();
        let st = pattern_metrics(&receive_beam_pattern(&tri, &grid, LAMBDA, P, P).unwrap()).unwrap();
        let sf = pattern_metrics(&receive_beam_pattern(&flat, &grid, LAMBDA, P, P).unwrap()).unwrap();
        assert!(st.peak_sidelobe_db.unwrap() < sf.peak_sidelobe_db.unwrap(), "{st:?} {sf:?}");
    }
}
