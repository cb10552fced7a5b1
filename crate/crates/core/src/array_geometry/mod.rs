//! Element-set algebra for planar arrays on a rectangular lattice.
//!
//! An [`ElementSet`] is a duplicate-free set of integer lattice indices
//! `(n, m)`; element `(n, m)` sits at `(n * pitch_x, m * pitch_y, 0)`. The sum
//! co-array of `E` is the set of all pairwise index sums and the intrinsic
//! apodization counts how many ordered pairs land on each co-array position.
//!
//! Sets are kept as sorted coordinate lists. Dense indicator matrices only
//! appear inside the convolution routine that computes co-array counts.

mod fractal;
mod named;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub use fractal::{fractal_expand, FractalExpansion};
pub use named::{named_sparse, NamedSparse};

/// Lattice index of an element, `(n, m)`.
pub type Index2 = (i32, i32);

/// Inclusive bounding box of a set of lattice indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bounds {
    pub n_min: i32,
    pub n_max: i32,
    pub m_min: i32,
    pub m_max: i32,
}

impl Bounds {
    pub fn width(&self) -> usize {
        (self.n_max - self.n_min + 1) as usize
    }

    pub fn height(&self) -> usize {
        (self.m_max - self.m_min + 1) as usize
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, (n, m): Index2) -> bool {
        n >= self.n_min && n <= self.n_max && m >= self.m_min && m <= self.m_max
    }

    /// Row-major offset of `(n, m)` inside the box, `n` varying slowest.
    #[inline]
    pub fn offset(&self, (n, m): Index2) -> usize {
        (n - self.n_min) as usize * self.height() + (m - self.m_min) as usize
    }

    #[inline]
    pub fn index_at(&self, offset: usize) -> Index2 {
        let h = self.height();
        (self.n_min + (offset / h) as i32, self.m_min + (offset % h) as i32)
    }

    /// Box of all pairwise sums of indices in `self` and `other`.
    pub fn minkowski_sum(&self, other: &Bounds) -> Bounds {
        Bounds {
            n_min: self.n_min + other.n_min,
            n_max: self.n_max + other.n_max,
            m_min: self.m_min + other.m_min,
            m_max: self.m_max + other.m_max,
        }
    }
}

/// Transducer element positions on a lattice with physical pitch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ElementSetDoc", into = "ElementSetDoc")]
pub struct ElementSet {
    positions: Vec<Index2>,
    pitch_x: f64,
    pitch_y: f64,
}

/// On-disk layout of an array descriptor.
#[derive(Serialize, Deserialize)]
struct ElementSetDoc {
    pitch_x_m: f64,
    pitch_y_m: f64,
    positions: Vec<Index2>,
}

impl TryFrom<ElementSetDoc> for ElementSet {
    type Error = Error;

    fn try_from(doc: ElementSetDoc) -> Result<Self> {
        ElementSet::new(doc.positions, doc.pitch_x_m, doc.pitch_y_m)
    }
}

impl From<ElementSet> for ElementSetDoc {
    fn from(set: ElementSet) -> Self {
        ElementSetDoc { pitch_x_m: set.pitch_x, pitch_y_m: set.pitch_y, positions: set.positions }
    }
}

fn check_pitch(pitch_x: f64, pitch_y: f64) -> Result<()> {
    if pitch_x.is_finite() && pitch_y.is_finite() && pitch_x > 0.0 && pitch_y > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidPitch { pitch_x, pitch_y })
    }
}

impl ElementSet {
    /// Builds a set from explicit positions. Duplicates are rejected.
    pub fn new(mut positions: Vec<Index2>, pitch_x: f64, pitch_y: f64) -> Result<Self> {
        check_pitch(pitch_x, pitch_y)?;
        positions.sort_unstable();
        if let Some(w) = positions.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicatePosition(w[0].0, w[0].1));
        }
        Ok(Self { positions, pitch_x, pitch_y })
    }

    /// Builds a set from positions that may repeat; duplicates collapse.
    pub fn from_iter_dedup<I>(positions: I, pitch_x: f64, pitch_y: f64) -> Result<Self>
    where
        I: IntoIterator<Item = Index2>,
    {
        check_pitch(pitch_x, pitch_y)?;
        let mut positions: Vec<Index2> = positions.into_iter().collect();
        positions.sort_unstable();
        positions.dedup();
        Ok(Self { positions, pitch_x, pitch_y })
    }

    /// Sorted lattice indices.
    pub fn positions(&self) -> &[Index2] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn pitch_x(&self) -> f64 {
        self.pitch_x
    }

    pub fn pitch_y(&self) -> f64 {
        self.pitch_y
    }

    pub fn contains(&self, idx: Index2) -> bool {
        self.positions.binary_search(&idx).is_ok()
    }

    /// Position of `idx` inside [`positions`](Self::positions), if present.
    pub fn position_of(&self, idx: Index2) -> Option<usize> {
        self.positions.binary_search(&idx).ok()
    }

    /// Physical location in meters.
    pub fn location(&self, (n, m): Index2) -> [f64; 3] {
        [n as f64 * self.pitch_x, m as f64 * self.pitch_y, 0.0]
    }

    pub fn bounds(&self) -> Option<Bounds> {
        let first = self.positions.first()?;
        let last = self.positions.last()?;
        let (m_min, m_max) =
            self.positions.iter().fold((i32::MAX, i32::MIN), |(lo, hi), &(_, m)| (lo.min(m), hi.max(m)));
        Some(Bounds { n_min: first.0, n_max: last.0, m_min, m_max })
    }

    /// `(max |n|, max |m|)`, the half extents of a centred aperture.
    pub fn half_extents(&self) -> (u32, u32) {
        self.positions.iter().fold((0, 0), |(a, b), &(n, m)| (a.max(n.unsigned_abs()), b.max(m.unsigned_abs())))
    }

    /// True when the set fills its bounding box.
    pub fn is_upa(&self) -> bool {
        self.bounds().is_some_and(|b| b.area() == self.len())
    }

    /// True when `self` and `other` share pitches (relative tolerance 1e-12).
    pub fn same_pitch(&self, other: &ElementSet) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
        close(self.pitch_x, other.pitch_x) && close(self.pitch_y, other.pitch_y)
    }

    fn ensure_same_pitch(&self, other: &ElementSet) -> Result<()> {
        if self.same_pitch(other) {
            Ok(())
        } else {
            Err(Error::PitchMismatch(self.pitch_x, self.pitch_y, other.pitch_x, other.pitch_y))
        }
    }

    /// True when every element of `self` is in `other`.
    pub fn is_subset_of(&self, other: &ElementSet) -> bool {
        self.positions.iter().all(|&p| other.contains(p))
    }

    /// Set with the same pitch holding only the elements for which `keep` holds.
    pub fn filter(&self, mut keep: impl FnMut(Index2) -> bool) -> ElementSet {
        ElementSet {
            positions: self.positions.iter().copied().filter(|&p| keep(p)).collect(),
            pitch_x: self.pitch_x,
            pitch_y: self.pitch_y,
        }
    }
}

/// Fully populated `(2N+1) x (2M+1)` uniform planar array centred on the origin.
pub fn make_upa(half_extent_x: u32, half_extent_y: u32, pitch_x: f64, pitch_y: f64) -> Result<ElementSet> {
    check_pitch(pitch_x, pitch_y)?;
    let (nx, ny) = (half_extent_x as i32, half_extent_y as i32);
    let positions = (-nx..=nx).flat_map(|n| (-ny..=ny).map(move |m| (n, m))).collect();
    Ok(ElementSet { positions, pitch_x, pitch_y })
}

/// Full 2D self-convolution of the indicator matrix of `set`, returned as
/// exact pair counts over the box of the sum co-array.
fn indicator_autoconvolution(set: &ElementSet) -> Result<(Bounds, Vec<u64>)> {
    let b = set.bounds().ok_or(Error::EmptyElementSet)?;
    let indicator: Vec<u64> = {
        let mut dense = vec![0u64; b.area()];
        for &p in set.positions() {
            dense[b.offset(p)] = 1;
        }
        dense
    };
    let out = b.minkowski_sum(&b);
    let mut counts = vec![0u64; out.area()];
    let (w, h) = (b.width(), b.height());
    let oh = out.height();
    for i in 0..w {
        for j in 0..h {
            let a = indicator[i * h + j];
            if a == 0 {
                continue;
            }
            for k in 0..w {
                let row = &indicator[k * h..(k + 1) * h];
                let dst = &mut counts[(i + k) * oh + j..(i + k) * oh + j + h];
                for (d, &v) in dst.iter_mut().zip(row) {
                    *d += a * v;
                }
            }
        }
    }
    Ok((out, counts))
}

/// Sum co-array: all pairwise index sums of `set`, with inherited pitch.
pub fn sum_coarray(set: &ElementSet) -> Result<ElementSet> {
    let (b, counts) = indicator_autoconvolution(set)?;
    let positions = counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(o, _)| b.index_at(o)).collect();
    Ok(ElementSet { positions, pitch_x: set.pitch_x, pitch_y: set.pitch_y })
}

/// What a weight map represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApodizationKind {
    /// Exact pair multiplicities of a sum co-array.
    IntrinsicCount,
    /// Caller-chosen effective aperture weights.
    User,
    /// Weights applied to convolution signals, i.e. user weights divided by
    /// the intrinsic counts.
    Effective,
}

/// Real weights indexed by lattice position.
#[derive(Clone, Debug, PartialEq)]
pub struct ApodizationMap<T> {
    weights: BTreeMap<Index2, T>,
    kind: ApodizationKind,
}

impl<T: Real> ApodizationMap<T> {
    pub fn new(weights: BTreeMap<Index2, T>, kind: ApodizationKind) -> Self {
        Self { weights, kind }
    }

    /// Unit weight on every element of `set`.
    pub fn unity(set: &ElementSet, kind: ApodizationKind) -> Self {
        Self::from_fn(set, kind, |_| T::one())
    }

    pub fn from_fn(set: &ElementSet, kind: ApodizationKind, mut f: impl FnMut(Index2) -> T) -> Self {
        let weights = set.positions().iter().map(|&p| (p, f(p))).collect();
        Self { weights, kind }
    }

    pub fn kind(&self) -> ApodizationKind {
        self.kind
    }

    pub fn get(&self, idx: Index2) -> Option<T> {
        self.weights.get(&idx).copied()
    }

    /// Weight at `idx`, zero outside the support.
    pub fn weight(&self, idx: Index2) -> T {
        self.get(idx).unwrap_or_else(T::zero)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Index2, T)> + '_ {
        self.weights.iter().map(|(&k, &v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn sum(&self) -> T {
        self.weights.values().fold(T::zero(), |acc, &v| acc + v)
    }

    /// Positions carrying a weight, including explicit zeros.
    pub fn support(&self) -> impl Iterator<Item = Index2> + '_ {
        self.weights.keys().copied()
    }

    pub fn map_values(&self, kind: ApodizationKind, mut f: impl FnMut(Index2, T) -> T) -> Self {
        let weights = self.weights.iter().map(|(&k, &v)| (k, f(k, v))).collect();
        Self { weights, kind }
    }

    /// Dense row-major copy over `bounds` (zero outside the support).
    pub fn to_dense(&self, bounds: &Bounds) -> Result<Vec<T>> {
        let mut dense = vec![T::zero(); bounds.area()];
        for (&p, &v) in &self.weights {
            if !bounds.contains(p) {
                return Err(Error::WeightOutsideSupport(p.0, p.1));
            }
            dense[bounds.offset(p)] = v;
        }
        Ok(dense)
    }
}

/// Exact intrinsic apodization counts of `set`, keyed by co-array position.
pub fn intrinsic_counts(set: &ElementSet) -> Result<BTreeMap<Index2, u64>> {
    let (b, counts) = indicator_autoconvolution(set)?;
    Ok(counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(o, &c)| (b.index_at(o), c)).collect())
}

/// Intrinsic apodization: the auto-convolution of the indicator matrix of `set`.
///
/// The support equals [`sum_coarray`] and the values sum to `|set|^2`.
pub fn intrinsic_apodization<T: Real>(set: &ElementSet) -> Result<ApodizationMap<T>> {
    let weights = intrinsic_counts(set)?.into_iter().map(|(p, c)| (p, T::of(c as f64))).collect();
    Ok(ApodizationMap { weights, kind: ApodizationKind::IntrinsicCount })
}

/// `thinned` is a proper subset of `full` whose sum co-array covers `full`.
pub fn is_sparse_wrt(thinned: &ElementSet, full: &ElementSet) -> Result<bool> {
    thinned.ensure_same_pitch(full)?;
    if thinned.len() >= full.len() || !thinned.is_subset_of(full) {
        return Ok(false);
    }
    if thinned.is_empty() {
        return Ok(full.is_empty());
    }
    let coarray = sum_coarray(thinned)?;
    Ok(full.is_subset_of(&coarray))
}

/// Invariance under 180 degree rotation, `(n, m) -> (-n, -m)`.
pub fn is_symmetric(set: &ElementSet) -> bool {
    set.positions().iter().all(|&(n, m)| set.contains((-n, -m)))
}

/// True when the sum co-array fills its bounding box (a UPA).
pub fn is_full_coarray(set: &ElementSet) -> bool {
    match indicator_autoconvolution(set) {
        Ok((_, counts)) => counts.iter().all(|&c| c > 0),
        Err(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: f64 = 300e-6;

    fn set(ps: &[Index2]) -> ElementSet {
        ElementSet::new(ps.to_vec(), P, P).unwrap()
    }

    #[test]
    fn upa_sizes() {
        assert_eq!(make_upa(0, 0, P, P).unwrap().positions(), &[(0, 0)]);
        assert_eq!(make_upa(15, 15, P, P).unwrap().len(), 961);
        assert_eq!(make_upa(1, 0, P, P).unwrap().positions(), &[(-1, 0), (0, 0), (1, 0)]);
        assert!(make_upa(1, 1, 0.0, P).is_err());
    }

    #[test]
    fn rejects_duplicates() {
        assert!(matches!(ElementSet::new(vec![(0, 0), (1, 0), (0, 0)], P, P), Err(Error::DuplicatePosition(0, 0))));
    }

    #[test]
    fn coarray_of_singleton_and_empty() {
        let s = set(&[(0, 0)]);
        assert_eq!(sum_coarray(&s).unwrap(), s);
        let empty = ElementSet::new(vec![], P, P).unwrap();
        assert!(matches!(sum_coarray(&empty), Err(Error::EmptyElementSet)));
        assert!(intrinsic_apodization::<f64>(&empty).is_err());
    }

    #[test]
    fn line_apodization_is_triangle() {
        let a = intrinsic_apodization::<f64>(&set(&[(-1, 0), (0, 0), (1, 0)])).unwrap();
        let vals: Vec<f64> = (-2..=2).map(|n| a.weight((n, 0))).collect();
        assert_eq!(vals, vec![1.0, 2.0, 3.0, 2.0, 1.0]);
        assert_eq!(a.kind(), ApodizationKind::IntrinsicCount);
    }

    #[test]
    fn upa_apodization_closed_form() {
        let a = intrinsic_counts(&make_upa(15, 15, P, P).unwrap()).unwrap();
        assert_eq!(a[&(0, 0)], 961);
        for (&(n, m), &c) in &a {
            assert_eq!(c, ((31 - n.abs()) * (31 - m.abs())) as u64);
        }
    }

    #[test]
    fn sparse_predicate() {
        let upa = make_upa(15, 15, P, P).unwrap();
        assert!(!is_sparse_wrt(&upa, &upa).unwrap());
        let plus = upa.filter(|(n, m)| n == 0 || m == 0);
        assert!(is_sparse_wrt(&plus, &upa).unwrap());
        let corners = set(&[(-15, -15), (15, 15)]);
        assert!(!is_sparse_wrt(&corners, &upa).unwrap());
        let other_pitch = ElementSet::new(vec![(0, 0)], 2.0 * P, P).unwrap();
        assert!(matches!(is_sparse_wrt(&other_pitch, &upa), Err(Error::PitchMismatch(..))));
    }

    #[test]
    fn symmetry_and_fullness() {
        assert!(is_symmetric(&set(&[(0, 0)])));
        assert!(is_symmetric(&make_upa(3, 2, P, P).unwrap()));
        assert!(!is_symmetric(&set(&[(0, 0), (1, 0)])));
        assert!(is_full_coarray(&make_upa(1, 1, P, P).unwrap()));
        assert!(!is_full_coarray(&set(&[(0, 0), (3, 0), (-3, 0)])));
    }

    #[test]
    fn descriptor_json_layout() {
        let s = set(&[(1, 0), (0, 0)]);
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(text, r#"{"pitch_x_m":0.0003,"pitch_y_m":0.0003,"positions":[[0,0],[1,0]]}"#);
        let back: ElementSet = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<ElementSet>(r#"{"pitch_x_m":-1,"pitch_y_m":1,"positions":[]}"#).is_err());
    }
}
