//! Envelope display, contrast ratio and full width at half maximum.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::acoustic_sim::Point3;
use crate::beamformers::{ImagingGrid, Volume};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Grid point `(direction index, depth index)`.
pub type GridPoint = (usize, usize);

const ANGLE_EPS: f64 = 1e-9;

/// Orthogonal plane through the array axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceSpec {
    /// `y = 0`: directions with φ = 0 (or π for negative x).
    Xz,
    /// `x = 0`: directions with φ = π/2 (or -π/2).
    Yz,
}

fn wrap(a: f64) -> f64 {
    let t = std::f64::consts::TAU;
    let r = a.rem_euclid(t);
    if r > std::f64::consts::PI {
        r - t
    } else {
        r
    }
}

/// Signed in-plane angle of a direction if it lies in `slice`.
fn in_plane_angle(slice: SliceSpec, (theta, phi): (f64, f64)) -> Option<f64> {
    if theta.abs() < ANGLE_EPS {
        return Some(0.0);
    }
    let axis = match slice {
        SliceSpec::Xz => 0.0,
        SliceSpec::Yz => std::f64::consts::FRAC_PI_2,
    };
    let d = wrap(phi - axis);
    if d.abs() < ANGLE_EPS {
        Some(theta)
    } else if (d.abs() - std::f64::consts::PI).abs() < ANGLE_EPS {
        Some(-theta)
    } else {
        None
    }
}

/// Directions of `grid` lying in `slice`, sorted by signed in-plane angle,
/// one per angle.
pub fn slice_directions(grid: &ImagingGrid, slice: SliceSpec) -> Vec<(usize, f64)> {
    let mut dirs: Vec<(usize, f64)> =
        grid.directions.iter().enumerate().filter_map(|(i, &d)| in_plane_angle(slice, d).map(|a| (i, a))).collect();
    dirs.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    dirs.dedup_by(|b, a| (a.1 - b.1).abs() < ANGLE_EPS);
    dirs
}

/// Log-compressed envelope over one plane, indexed `[lateral, depth]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BModeImage {
    pub db_values: Array2<f64>,
    pub dynamic_range_db: f64,
    pub slice: SliceSpec,
    /// Signed in-plane steering angle of each row, radians.
    pub lateral_angles: Vec<f64>,
    pub depths: Vec<f64>,
}

impl BModeImage {
    /// Maps `[-dynamic_range, 0]` dB onto `0..=255`, depth along rows.
    pub fn to_gray(&self) -> (usize, usize, Vec<u8>) {
        let (n_lat, n_depth) = self.db_values.dim();
        let mut pixels = Vec::with_capacity(n_lat * n_depth);
        for z in 0..n_depth {
            for x in 0..n_lat {
                let v = (self.db_values[[x, z]] + self.dynamic_range_db) / self.dynamic_range_db;
                pixels.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        (n_lat, n_depth, pixels)
    }
}

/// `20 log10(|v| / max |v|)` over a plane of `vol`, clamped at `-dynamic_range_db`.
pub fn envelope_logcompress<T: Real>(vol: &Volume<T>, dynamic_range_db: f64, slice: SliceSpec) -> Result<BModeImage> {
    if !(dynamic_range_db > 0.0) {
        return Err(Error::InvalidParams(format!("dynamic range must be positive, got {dynamic_range_db}")));
    }
    let dirs = slice_directions(&vol.grid, slice);
    if dirs.is_empty() {
        return Err(Error::GridMismatch(format!("grid has no directions in the {slice:?} plane")));
    }
    let env = vol.envelope();
    let n_depth = vol.grid.depths.len();
    let plane = Array2::from_shape_fn((dirs.len(), n_depth), |(i, z)| env[[dirs[i].0, z]]);
    let peak = plane.iter().copied().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::ZeroVolume);
    }
    let floor = -dynamic_range_db;
    let db_values = plane.mapv(|v| if v > 0.0 { (20.0 * (v / peak).log10()).max(floor).min(0.0) } else { floor });
    Ok(BModeImage {
        db_values,
        dynamic_range_db,
        slice,
        lateral_angles: dirs.iter().map(|d| d.1).collect(),
        depths: vol.grid.depths.clone(),
    })
}

fn distance(a: Point3, b: Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Grid points within `radius` of `center`, optionally restricted to a plane.
pub fn sphere_region(grid: &ImagingGrid, center: Point3, radius: f64, slice: Option<SliceSpec>) -> Vec<GridPoint> {
    let dirs: Vec<usize> = match slice {
        Some(s) => slice_directions(grid, s).into_iter().map(|d| d.0).collect(),
        None => (0..grid.directions.len()).collect(),
    };
    dirs.iter()
        .flat_map(|&d| (0..grid.depths.len()).map(move |z| (d, z)))
        .filter(|&(d, z)| distance(grid.point(d, z), center) <= radius)
        .collect()
}

/// Inside/background regions for a spherical cyst.
#[derive(Clone, Debug, PartialEq)]
pub struct CrRegions {
    pub cyst: Vec<GridPoint>,
    pub background: Vec<GridPoint>,
}

impl CrRegions {
    /// Disk of `inner_fraction * radius` at the cyst centre and an equal disk
    /// at the same depth, shifted laterally by `offset` within `slice`.
    pub fn around_cyst(
        grid: &ImagingGrid,
        center: Point3,
        radius: f64,
        inner_fraction: f64,
        offset: f64,
        slice: SliceSpec,
    ) -> Self {
        let r = inner_fraction * radius;
        let mut bg_center = center;
        match slice {
            SliceSpec::Xz => bg_center[0] += offset,
            SliceSpec::Yz => bg_center[1] += offset,
        }
        Self {
            cyst: sphere_region(grid, center, r, Some(slice)),
            background: sphere_region(grid, bg_center, r, Some(slice)),
        }
    }

    /// 60% inner radius, background centred two cyst radii to the side.
    pub fn default_for(grid: &ImagingGrid, center: Point3, radius: f64, slice: SliceSpec) -> Self {
        Self::around_cyst(grid, center, radius, 0.6, 2.0 * radius, slice)
    }
}

/// `20 log10(mean |v| in cyst / mean |v| in background)`, before log compression.
pub fn contrast_ratio<T: Real>(vol: &Volume<T>, cyst: &[GridPoint], background: &[GridPoint]) -> Result<f64> {
    if cyst.is_empty() || background.is_empty() {
        return Err(Error::InvalidRegion("cyst and background regions must be non-empty".into()));
    }
    let bg: std::collections::HashSet<&GridPoint> = background.iter().collect();
    if cyst.iter().any(|p| bg.contains(p)) {
        return Err(Error::InvalidRegion("cyst and background regions overlap".into()));
    }
    let (nd, nz) = vol.grid.shape();
    let mean = |pts: &[GridPoint]| -> Result<f64> {
        let mut s = 0.0;
        for &(d, z) in pts {
            if d >= nd || z >= nz {
                return Err(Error::InvalidRegion(format!("grid point ({d}, {z}) outside the volume")));
            }
            s += vol.values[[d, z]].norm().f64();
        }
        Ok(s / pts.len() as f64)
    };
    let (mc, mb) = (mean(cyst)?, mean(background)?);
    if !(mb > 0.0) {
        return Err(Error::ZeroBackground);
    }
    Ok(20.0 * (mc / mb).log10())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FwhmAxis {
    LateralX,
    LateralY,
    Axial,
}

/// Upsampling factor applied to profiles before the width measurement.
pub const FWHM_UPSAMPLE: usize = 10;

/// Width at half the peak of a sampled profile; `positions` increasing.
pub fn profile_fwhm(positions: &[f64], values: &[f64], peak_index: usize) -> Result<f64> {
    let n = positions.len();
    if n != values.len() || peak_index >= n {
        return Err(Error::InvalidParams("profile positions, values and peak index disagree".into()));
    }
    // Linear upsampling onto a finer axis.
    let mut xs = Vec::with_capacity((n - 1) * FWHM_UPSAMPLE + 1);
    let mut vs = Vec::with_capacity(xs.capacity());
    for i in 0..n {
        if i + 1 == n {
            xs.push(positions[i]);
            vs.push(values[i]);
            break;
        }
        for s in 0..FWHM_UPSAMPLE {
            let f = s as f64 / FWHM_UPSAMPLE as f64;
            xs.push(positions[i] + f * (positions[i + 1] - positions[i]));
            vs.push(values[i] + f * (values[i + 1] - values[i]));
        }
    }
    let peak_at = peak_index * FWHM_UPSAMPLE;
    let peak = vs[peak_at];
    if !(peak > 0.0) {
        return Err(Error::InvalidParams("profile peak must be positive".into()));
    }
    let half = 0.5 * peak;
    let cross = |step: isize| -> Result<f64> {
        let mut i = peak_at as isize;
        loop {
            let j = i + step;
            if j < 0 || j >= vs.len() as isize {
                return Err(Error::Unresolved);
            }
            let (a, b) = (vs[i as usize], vs[j as usize]);
            if b <= half {
                let f = if a > b { (a - half) / (a - b) } else { 0.0 };
                let (xa, xb) = (xs[i as usize], xs[j as usize]);
                return Ok(xa + f * (xb - xa));
            }
            i = j;
        }
    };
    Ok(cross(1)? - cross(-1)?)
}

/// FWHM of the envelope through `through` along `axis`, in meters.
///
/// Lateral profiles run across the xz (or yz) plane at fixed range with the
/// lateral coordinate `r sinθ`; axial profiles run along range.
pub fn fwhm<T: Real>(vol: &Volume<T>, axis: FwhmAxis, through: GridPoint) -> Result<f64> {
    let env = vol.envelope();
    let (d0, z0) = through;
    let (nd, nz) = env.dim();
    if d0 >= nd || z0 >= nz {
        return Err(Error::InvalidParams(format!("grid point {through:?} outside the volume")));
    }
    match axis {
        FwhmAxis::Axial => {
            let values: Vec<f64> = (0..nz).map(|z| env[[d0, z]]).collect();
            profile_fwhm(&vol.grid.depths, &values, z0)
        }
        FwhmAxis::LateralX | FwhmAxis::LateralY => {
            let slice = if axis == FwhmAxis::LateralX { SliceSpec::Xz } else { SliceSpec::Yz };
            let dirs = slice_directions(&vol.grid, slice);
            let angle = in_plane_angle(slice, vol.grid.directions[d0])
                .ok_or_else(|| Error::InvalidParams(format!("direction {d0} is not in the {slice:?} plane")))?;
            let at =
                dirs.iter().position(|d| (d.1 - angle).abs() < ANGLE_EPS).expect("direction present in its own plane");
            let r = vol.grid.depths[z0];
            let positions: Vec<f64> = dirs.iter().map(|d| r * d.1.sin()).collect();
            let values: Vec<f64> = dirs.iter().map(|d| env[[d.0, z0]]).collect();
            profile_fwhm(&positions, &values, at)
        }
    }
}

/// Grid point with the largest envelope within `radius` of `near`,
/// optionally restricted to a plane.
pub fn peak_near<T: Real>(vol: &Volume<T>, near: Point3, radius: f64, slice: Option<SliceSpec>) -> Option<GridPoint> {
    let env = vol.envelope();
    sphere_region(&vol.grid, near, radius, slice).into_iter().max_by(|a, b| env[[a.0, a.1]].total_cmp(&env[[b.0, b.1]]))
}
