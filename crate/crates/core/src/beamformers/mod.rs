//! Delay-and-sum, COBA-3D and SCOBA-3D reconstruction.
//!
//! All three beamformers start from a [`CompoundField`]: per-element signals
//! already delayed and compounded over transmit events for every imaging grid
//! point. DAS is a weighted sum over elements. COBA-3D takes a modulus square
//! root of each signal (keeping its phase), convolves the element matrix with
//! itself and sums the result with weights over the sum co-array. SCOBA-3D is
//! the same on a thinned receive array, either by explicit pairwise products
//! or by zero-filling the missing elements.

mod compound;
mod conv;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acoustic_sim::Point3;
use crate::array_geometry::{intrinsic_counts, sum_coarray, ApodizationKind, ApodizationMap, Bounds, ElementSet};
use crate::error::{Error, Result};
use crate::scalar::{Cx, Real};

pub use compound::{compound, compound_subset};
pub use conv::{conv2d_self, fast_len, ConvMethod, SelfConvolver};

/// Scan directions and ranges of a volumetric image.
///
/// Grid point `(d, z)` lies at distance `depths[z]` from the array centre
/// along direction `directions[d] = (θ, φ)`, i.e. at
/// `depth * (sinθ cosφ, sinθ sinφ, cosθ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImagingGrid {
    pub directions: Vec<(f64, f64)>,
    pub depths: Vec<f64>,
}

impl ImagingGrid {
    pub fn new(directions: Vec<(f64, f64)>, depths: Vec<f64>) -> Result<Self> {
        if directions.is_empty() || depths.is_empty() {
            return Err(Error::GridMismatch("imaging grid needs directions and depths".into()));
        }
        if !(depths[0] > 0.0) || depths.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::GridMismatch("depths must be positive and strictly increasing".into()));
        }
        Ok(Self { directions, depths })
    }

    /// Every `(θ, φ)` combination, θ varying slowest.
    pub fn planes(thetas: &[f64], phis: &[f64], depths: Vec<f64>) -> Result<Self> {
        let directions = thetas.iter().flat_map(|&t| phis.iter().map(move |&p| (t, p))).collect();
        Self::new(directions, depths)
    }

    pub fn unit(theta: f64, phi: f64) -> Point3 {
        let (st, ct) = theta.sin_cos();
        [st * phi.cos(), st * phi.sin(), ct]
    }

    pub fn point(&self, direction: usize, depth: usize) -> Point3 {
        let (theta, phi) = self.directions[direction];
        let u = Self::unit(theta, phi);
        let r = self.depths[depth];
        [r * u[0], r * u[1], r * u[2]]
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.directions.len() * self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.directions.len(), self.depths.len())
    }
}

/// Delayed and compounded element signals, indexed `[grid point, element]`.
///
/// Grid points are flattened direction-major; elements follow
/// `rx_array.positions()`.
#[derive(Clone, Debug, PartialEq)]
pub struct CompoundField<T> {
    pub y: Array2<Cx<T>>,
    pub rx_array: ElementSet,
    pub grid: ImagingGrid,
    /// Samples that fell outside the acquisition window.
    pub zero_filled: usize,
}

impl<T: Real> CompoundField<T> {
    pub fn new(y: Array2<Cx<T>>, rx_array: ElementSet, grid: ImagingGrid) -> Result<Self> {
        if y.dim() != (grid.len(), rx_array.len()) {
            return Err(Error::GridMismatch(format!(
                "field shape {:?} does not match grid {} x elements {}",
                y.dim(),
                grid.len(),
                rx_array.len()
            )));
        }
        Ok(Self { y, rx_array, grid, zero_filled: 0 })
    }

    /// Field restricted to the elements of `subset`.
    pub fn restrict(&self, subset: &ElementSet) -> Result<Self> {
        let cols: Vec<usize> = subset
            .positions()
            .iter()
            .map(|&p| self.rx_array.position_of(p).ok_or(Error::WeightOutsideSupport(p.0, p.1)))
            .collect::<Result<_>>()?;
        let y = Array2::from_shape_fn((self.grid.len(), cols.len()), |(g, e)| self.y[[g, cols[e]]]);
        Ok(Self { y, rx_array: subset.clone(), grid: self.grid.clone(), zero_filled: self.zero_filled })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamformerKind {
    Das,
    Coba3d,
    Scoba3d,
}

impl BeamformerKind {
    pub fn code(self) -> u32 {
        match self {
            BeamformerKind::Das => 0,
            BeamformerKind::Coba3d => 1,
            BeamformerKind::Scoba3d => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(BeamformerKind::Das),
            1 => Some(BeamformerKind::Coba3d),
            2 => Some(BeamformerKind::Scoba3d),
            _ => None,
        }
    }
}

/// Beamformed complex samples, indexed `[direction, depth]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    pub values: Array2<Cx<T>>,
    pub grid: ImagingGrid,
    pub beamformer: BeamformerKind,
    /// Hash of the configuration that produced the volume; zero when unknown.
    pub provenance: u64,
}

impl<T: Real> Volume<T> {
    fn from_flat(flat: Vec<Cx<T>>, grid: &ImagingGrid, beamformer: BeamformerKind) -> Self {
        Volume {
            values: Array2::from_shape_vec(grid.shape(), flat).expect("one value per grid point"),
            grid: grid.clone(),
            beamformer,
            provenance: 0,
        }
    }

    pub fn envelope(&self) -> Array2<f64> {
        self.values.mapv(|v| v.norm().f64())
    }
}

/// `Σ w[n,m] y_{n,m}` at every grid point.
pub fn das<T: Real>(field: &CompoundField<T>, weights: &ApodizationMap<T>) -> Result<Volume<T>> {
    for p in weights.support() {
        if !field.rx_array.contains(p) {
            return Err(Error::WeightOutsideSupport(p.0, p.1));
        }
    }
    let w: Vec<T> = field.rx_array.positions().iter().map(|&p| weights.weight(p)).collect();
    let flat: Vec<Cx<T>> = field
        .y
        .outer_iter()
        .into_par_iter()
        .map(|row| row.iter().zip(&w).fold(Cx::new(T::zero(), T::zero()), |acc, (&y, &w)| acc + y * w))
        .collect();
    Ok(Volume::from_flat(flat, &field.grid, BeamformerKind::Das))
}

/// `sqrt(|y|) exp(j∠y)` for a single sample.
#[inline]
pub fn signed_sqrt<T: Real>(y: Cx<T>) -> Cx<T> {
    let m = y.norm();
    if m == T::zero() {
        Cx::new(T::zero(), T::zero())
    } else {
        y / m.sqrt()
    }
}

/// Elementwise modulus square root with the phase preserved.
pub fn sqrt_transform<T: Real>(field: &CompoundField<T>) -> CompoundField<T> {
    CompoundField { y: field.y.mapv(signed_sqrt), ..field.clone() }
}

/// Weights to apply to the convolution signals so the aperture seen by the
/// beam pattern equals `user_weights`: `w / a` on the sum co-array of `array`.
///
/// Zero weights on co-array holes are dropped; non-zero ones are an error.
pub fn effective_weights<T: Real>(user_weights: &ApodizationMap<T>, array: &ElementSet) -> Result<ApodizationMap<T>> {
    let counts = intrinsic_counts(array)?;
    let mut out = std::collections::BTreeMap::new();
    for (p, w) in user_weights.iter() {
        match counts.get(&p) {
            Some(&a) => {
                out.insert(p, w / T::of(a as f64));
            }
            None if w == T::zero() => {}
            None => return Err(Error::CoarrayHole(p.0, p.1)),
        }
    }
    Ok(ApodizationMap::new(out, ApodizationKind::Effective))
}

/// How the default receive weights of COBA/SCOBA are chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Effective aperture weight one over the whole sum co-array; the
    /// intrinsic apodization is divided out.
    #[default]
    UnityEffective,
    /// Unit weight on every convolution signal; the intrinsic apodization
    /// stays in the effective aperture.
    UnityActing,
}

/// User (effective-aperture) weights realizing `mode` on `array`.
pub fn default_user_weights<T: Real>(array: &ElementSet, mode: WeightMode) -> Result<ApodizationMap<T>> {
    let coarray = sum_coarray(array)?;
    Ok(match mode {
        WeightMode::UnityEffective => ApodizationMap::unity(&coarray, ApodizationKind::User),
        WeightMode::UnityActing => {
            let counts = intrinsic_counts(array)?;
            ApodizationMap::from_fn(&coarray, ApodizationKind::User, |p| T::of(counts[&p] as f64))
        }
    })
}

/// Zero-filled dense convolution of the elements of `field` followed by a
/// weighted sum with `acting` (dense over the co-array box).
fn convolutional_sum<T: Real>(
    field: &CompoundField<T>,
    bounds: &Bounds,
    acting: &[T],
    kind: BeamformerKind,
) -> Volume<T> {
    let offsets: Vec<usize> = field.rx_array.positions().iter().map(|&p| bounds.offset(p)).collect();
    let proto = SelfConvolver::<T>::new(bounds.width(), bounds.height());
    let (or, oc) = proto.output_shape();
    let zero = Cx::new(T::zero(), T::zero());
    let flat: Vec<Cx<T>> = field
        .y
        .outer_iter()
        .into_par_iter()
        .map_init(
            || (proto.clone(), vec![zero; bounds.area()], vec![zero; or * oc]),
            |(conv, r, c), row| {
                r.fill(zero);
                for (&o, &y) in offsets.iter().zip(row.iter()) {
                    r[o] = signed_sqrt(y);
                }
                conv.convolve(r, c);
                c.iter().zip(acting).fold(zero, |acc, (&v, &w)| if w == T::zero() { acc } else { acc + v * w })
            },
        )
        .collect();
    Volume::from_flat(flat, &field.grid, kind)
}

fn dense_acting<T: Real>(user_weights: &ApodizationMap<T>, array: &ElementSet) -> Result<(Bounds, Vec<T>)> {
    let acting = effective_weights(user_weights, array)?;
    let b = array.bounds().ok_or(Error::EmptyElementSet)?;
    let out = b.minkowski_sum(&b);
    Ok((b, acting.to_dense(&out)?))
}

/// COBA-3D on a fully populated receive array.
pub fn coba3d<T: Real>(field: &CompoundField<T>, user_weights: &ApodizationMap<T>) -> Result<Volume<T>> {
    if !field.rx_array.is_upa() {
        return Err(Error::NotUpa);
    }
    let (b, acting) = dense_acting(user_weights, &field.rx_array)?;
    Ok(convolutional_sum(field, &b, &acting, BeamformerKind::Coba3d))
}

/// How SCOBA-3D forms the co-array signals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScobaPath {
    /// Explicit products over all ordered element pairs.
    Pairwise,
    /// Zero-fill missing elements and use the FFT self-convolution.
    #[default]
    ZeroFill,
}

/// SCOBA-3D on the thinned array `sparse`, whose elements must be present in
/// `field`.
pub fn scoba3d<T: Real>(
    field: &CompoundField<T>,
    sparse: &ElementSet,
    user_weights: &ApodizationMap<T>,
    path: ScobaPath,
) -> Result<Volume<T>> {
    let field = if field.rx_array == *sparse { field.clone() } else { field.restrict(sparse)? };
    let (b, acting) = dense_acting(user_weights, sparse)?;
    Ok(match path {
        ScobaPath::ZeroFill => convolutional_sum(&field, &b, &acting, BeamformerKind::Scoba3d),
        ScobaPath::Pairwise => {
            let out = b.minkowski_sum(&b);
            let ps = sparse.positions();
            let pair_w: Vec<T> = ps
                .iter()
                .flat_map(|&(u, v)| ps.iter().map(move |&(k, l)| (u + k, v + l)))
                .map(|p| acting[out.offset(p)])
                .collect();
            let n = ps.len();
            let zero = Cx::new(T::zero(), T::zero());
            let flat: Vec<Cx<T>> = field
                .y
                .outer_iter()
                .into_par_iter()
                .map(|row| {
                    let r: Vec<Cx<T>> = row.iter().map(|&y| signed_sqrt(y)).collect();
                    r.iter().enumerate().fold(zero, |acc, (i, &ri)| {
                        let inner = r.iter().zip(&pair_w[i * n..(i + 1) * n]).fold(zero, |s, (&rj, &w)| s + rj * w);
                        acc + ri * inner
                    })
                })
                .collect();
            Volume::from_flat(flat, &field.grid, BeamformerKind::Scoba3d)
        }
    })
}
