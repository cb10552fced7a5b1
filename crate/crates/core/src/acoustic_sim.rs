//! Synthetic baseband acquisition from point-scatterer phantoms.
//!
//! Echoes are generated directly as complex IQ: every scatterer contributes
//! `amplitude * envelope(t - τ) * exp(-j 2π f0 τ)` to each (event, element)
//! trace, where `τ` is the exact two-way travel time. No RF stage or
//! demodulation filter is involved.

use ndarray::{Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array_geometry::{ElementSet, Index2};
use crate::error::{Error, Result};
use crate::scalar::{Cx, Real};

pub type Point3 = [f64; 3];

/// Default speed of sound in soft tissue, m/s.
pub const SOUND_SPEED: f64 = 1540.0;
/// Default transmit centre frequency, Hz.
pub const CENTER_FREQ: f64 = 3e6;
/// Default IQ sampling rate, Hz.
pub const SAMPLE_RATE: f64 = 12e6;
/// Default element pitch in both directions, m.
pub const PITCH: f64 = 300e-6;
/// Default virtual source depth for diverging waves, m (half the 9.6 mm probe aperture).
pub const VIRTUAL_SOURCE_DEPTH: f64 = -4.8e-3;

/// Envelope support in standard deviations; beyond this the pulse is below -108 dB.
const ENVELOPE_SIGMAS: f64 = 5.0;

fn norm(v: Point3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub position: Point3,
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    pub scatterers: Vec<Scatterer>,
    pub label: String,
}

impl Phantom {
    pub fn new(scatterers: Vec<Scatterer>, label: impl Into<String>) -> Result<Self> {
        for s in &scatterers {
            if !(s.position[2] > 0.0) || !s.amplitude.is_finite() || s.position.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidParams(format!("scatterer {:?} must have z > 0 and finite values", s)));
            }
        }
        Ok(Self { scatterers, label: label.into() })
    }

    /// A single unit-amplitude point target.
    pub fn point(position: Point3) -> Result<Self> {
        Self::new(vec![Scatterer { position, amplitude: 1.0 }], "point")
    }

    pub fn len(&self) -> usize {
        self.scatterers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scatterers.is_empty()
    }

    /// Scatterers of `self` followed by those of `other`.
    pub fn union(&self, other: &Phantom) -> Phantom {
        let mut scatterers = self.scatterers.clone();
        scatterers.extend_from_slice(&other.scatterers);
        Phantom { scatterers, label: format!("{}+{}", self.label, other.label) }
    }
}

/// Axis-aligned box in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn volume(&self) -> f64 {
        (0..3).map(|i| (self.max[i] - self.min[i]).max(0.0)).product()
    }

    pub fn contains(&self, p: Point3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// Uniform random speckle in `bounds` with an anechoic sphere removed.
///
/// Amplitudes are uniform on `[0, 2)` (unit mean). Identical seeds give
/// identical phantoms.
pub fn make_cyst_phantom(
    background_density: f64,
    cyst_center: Point3,
    cyst_radius: f64,
    bounds: Aabb,
    seed: u64,
) -> Result<Phantom> {
    if !(cyst_radius > 0.0) {
        return Err(Error::InvalidParams(format!("cyst radius must be positive, got {cyst_radius}")));
    }
    if !bounds.contains(cyst_center) || !(bounds.min[2] > 0.0) {
        return Err(Error::InvalidParams("box must lie in front of the array and contain the cyst centre".into()));
    }
    let count = (background_density * bounds.volume()).round();
    if !(count >= 1.0) {
        return Err(Error::EmptyPhantom);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scatterers = Vec::with_capacity(count as usize);
    for _ in 0..count as usize {
        let position: Point3 = std::array::from_fn(|i| rng.random_range(bounds.min[i]..=bounds.max[i]));
        let amplitude = rng.random_range(0.0..2.0);
        if norm(sub(position, cyst_center)) > cyst_radius {
            scatterers.push(Scatterer { position, amplitude });
        }
    }
    if scatterers.is_empty() {
        return Err(Error::EmptyPhantom);
    }
    Phantom::new(scatterers, "cyst")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransmitMode {
    Focused,
    Diverging,
}

/// Steering of one transmit event: `beta` rotates about x, then `alpha` about y.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransmitEvent {
    pub alpha: f64,
    pub beta: f64,
}

impl TransmitEvent {
    /// Rotates `v` by `beta` about x, then by `alpha` about y.
    pub fn rotate(&self, v: Point3) -> Point3 {
        let (sb, cb) = self.beta.sin_cos();
        let (sa, ca) = self.alpha.sin_cos();
        let r = [v[0], v[1] * cb - v[2] * sb, v[1] * sb + v[2] * cb];
        [r[0] * ca + r[2] * sa, r[1], -r[0] * sa + r[2] * ca]
    }

    /// Unit steering direction.
    pub fn direction(&self) -> Point3 {
        self.rotate([0.0, 0.0, 1.0])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransmitScheme {
    pub mode: TransmitMode,
    pub events: Vec<TransmitEvent>,
    /// Positive focal depth (focused) or negative virtual-source depth (diverging), m.
    pub focal_z: f64,
    pub aperture: ElementSet,
}

/// `count` evenly spaced values over `[lo, hi]`; a single value sits at the midpoint.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect(),
    }
}

impl TransmitScheme {
    pub fn new(mode: TransmitMode, events: Vec<TransmitEvent>, focal_z: f64, aperture: ElementSet) -> Result<Self> {
        let s = Self { mode, events, focal_z, aperture };
        s.validate()?;
        Ok(s)
    }

    /// Every combination of `alphas` (rotation about y) and `betas` (about x).
    pub fn grid(mode: TransmitMode, alphas: &[f64], betas: &[f64], focal_z: f64, aperture: ElementSet) -> Result<Self> {
        let events =
            alphas.iter().flat_map(|&alpha| betas.iter().map(move |&beta| TransmitEvent { alpha, beta })).collect();
        Self::new(mode, events, focal_z, aperture)
    }

    pub fn validate(&self) -> Result<()> {
        if self.events.is_empty() {
            return Err(Error::InvalidParams("transmit scheme has no events".into()));
        }
        match self.mode {
            TransmitMode::Focused if !(self.focal_z > 0.0) => {
                Err(Error::InvalidParams(format!("focused transmission needs focal_z > 0, got {}", self.focal_z)))
            }
            TransmitMode::Diverging if !(self.focal_z < 0.0) => {
                Err(Error::InvalidParams(format!("diverging waves need focal_z < 0, got {}", self.focal_z)))
            }
            _ => Ok(()),
        }
    }

    /// Focal point (focused) or virtual source (diverging) of an event.
    pub fn source(&self, event: &TransmitEvent) -> Point3 {
        event.rotate([0.0, 0.0, self.focal_z])
    }
}

/// Transmit travel time from the array to `voxel`.
///
/// Time zero is when the wavefront passes the array centre. Diverging waves:
/// `(|voxel - p_v| - |z_v|) / c` with `p_v` the steered virtual source.
/// Focused: `(|F| ± |voxel - F|) / c` with the sign positive beyond the
/// focus `F` along the steering direction.
pub fn tx_delay(event: &TransmitEvent, scheme: &TransmitScheme, voxel: Point3, sound_speed: f64) -> f64 {
    let src = scheme.source(event);
    let d = norm(sub(voxel, src));
    match scheme.mode {
        TransmitMode::Diverging => (d - scheme.focal_z.abs()) / sound_speed,
        TransmitMode::Focused => {
            let dir = event.direction();
            let rel = sub(voxel, src);
            let along = rel[0] * dir[0] + rel[1] * dir[1] + rel[2] * dir[2];
            let sign = if along >= 0.0 { 1.0 } else { -1.0 };
            (norm(src) + sign * d) / sound_speed
        }
    }
}

/// Exact receive travel time from `voxel` back to element `(n, m)`.
pub fn rx_delay(element: Index2, pitch_x: f64, pitch_y: f64, voxel: Point3, sound_speed: f64) -> f64 {
    let e = [element.0 as f64 * pitch_x, element.1 as f64 * pitch_y, 0.0];
    norm(sub(voxel, e)) / sound_speed
}

/// Standard deviation of the Gaussian envelope whose half-amplitude (-6 dB)
/// full duration is `n_cycles / f0`.
pub fn pulse_sigma(f0: f64, n_cycles: f64) -> f64 {
    let duration = n_cycles / f0;
    duration / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
}

/// Complex baseband transmit pulse centred at `t = 0` with unit peak.
pub fn pulse(t: f64, f0: f64, n_cycles: f64) -> Cx<f64> {
    let sigma = pulse_sigma(f0, n_cycles);
    let x = t / sigma;
    Cx::new((-0.5 * x * x).exp(), 0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Acquisition {
    pub sample_rate_hz: f64,
    pub center_freq_hz: f64,
    pub n_cycles: f64,
    pub sound_speed_mps: f64,
    /// First sample time, s.
    pub start_time_s: f64,
    /// Last sample time, s.
    pub t_max_s: f64,
    /// Apply `1 / (r_tx r_rx)` spreading.
    #[serde(default)]
    pub spreading: bool,
}

impl Acquisition {
    /// Standard acquisition (3 MHz, 2 cycles, 12 MHz, 1540 m/s) over `[start, t_max]`.
    pub fn standard(start_time_s: f64, t_max_s: f64) -> Self {
        Self {
            sample_rate_hz: SAMPLE_RATE,
            center_freq_hz: CENTER_FREQ,
            n_cycles: 2.0,
            sound_speed_mps: SOUND_SPEED,
            start_time_s,
            t_max_s,
            spreading: false,
        }
    }

    /// Window covering every two-way path to voxels at ranges `[r_near, r_far]`
    /// from the array centre, with a pulse-length margin on both sides.
    pub fn for_ranges(r_near: f64, r_far: f64, scheme: &TransmitScheme) -> Self {
        Self::standard(0.0, 1.0).with_window(r_near, r_far, scheme)
    }

    /// Same parameters with the sampling window set as in [`Acquisition::for_ranges`].
    pub fn with_window(self, r_near: f64, r_far: f64, scheme: &TransmitScheme) -> Self {
        let c = self.sound_speed_mps;
        let margin = ENVELOPE_SIGMAS * pulse_sigma(self.center_freq_hz, self.n_cycles) + 2.0 / self.sample_rate_hz;
        let (ax, ay) = scheme.aperture.half_extents();
        let reach = (ax as f64 * scheme.aperture.pitch_x()).hypot(ay as f64 * scheme.aperture.pitch_y());
        let f = scheme.focal_z.abs();
        let start_time_s = ((2.0 * r_near - 2.0 * f - reach) / c - margin).max(0.0);
        let t_max_s = (2.0 * r_far + reach + 2.0 * f) / c + margin;
        Self { start_time_s, t_max_s, ..self }
    }

    pub fn n_samples(&self) -> usize {
        ((self.t_max_s - self.start_time_s) * self.sample_rate_hz).floor() as usize + 1
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.sample_rate_hz > 0.0
            && self.center_freq_hz > 0.0
            && self.n_cycles > 0.0
            && self.sound_speed_mps > 0.0
            && self.start_time_s >= 0.0
            && self.t_max_s > self.start_time_s;
        if !ok {
            return Err(Error::InvalidParams(format!("invalid acquisition parameters {self:?}")));
        }
        // Gaussian envelope: -6 dB bandwidth is about 2 f0 / n_cycles.
        let bandwidth = 2.0 * self.center_freq_hz / self.n_cycles;
        if self.sample_rate_hz <= 2.0 * bandwidth {
            return Err(Error::InvalidParams(format!(
                "sample rate {} Hz does not exceed twice the pulse bandwidth {} Hz",
                self.sample_rate_hz, bandwidth
            )));
        }
        Ok(())
    }
}

/// Per-event, per-element complex baseband traces.
#[derive(Clone, Debug, PartialEq)]
pub struct IqCube<T> {
    /// Indexed `[event, element, time]`; elements follow `rx_array.positions()`.
    pub samples: Array3<Cx<T>>,
    pub sample_rate: f64,
    pub center_freq: f64,
    pub start_time: f64,
    pub sound_speed: f64,
    pub rx_array: ElementSet,
    pub scheme: TransmitScheme,
}

impl<T: Real> IqCube<T> {
    pub fn n_events(&self) -> usize {
        self.samples.dim().0
    }

    pub fn n_elements(&self) -> usize {
        self.samples.dim().1
    }

    pub fn n_samples(&self) -> usize {
        self.samples.dim().2
    }

    pub fn time_of(&self, index: usize) -> f64 {
        self.start_time + index as f64 / self.sample_rate
    }

    /// Same data in another scalar type.
    pub fn cast<U: Real>(&self) -> IqCube<U> {
        IqCube {
            samples: self.samples.mapv(|v| Cx::new(U::of(v.re.f64()), U::of(v.im.f64()))),
            sample_rate: self.sample_rate,
            center_freq: self.center_freq,
            start_time: self.start_time,
            sound_speed: self.sound_speed,
            rx_array: self.rx_array.clone(),
            scheme: self.scheme.clone(),
        }
    }
}

/// Simulates the echoes of `phantom` for every event of `scheme` on `rx_array`.
///
/// Errors when a scatterer's two-way arrival falls outside the acquisition
/// window.
pub fn simulate<T: Real>(
    phantom: &Phantom,
    scheme: &TransmitScheme,
    rx_array: &ElementSet,
    acq: &Acquisition,
) -> Result<IqCube<T>> {
    acq.validate()?;
    scheme.validate()?;
    if rx_array.is_empty() {
        return Err(Error::EmptyElementSet);
    }
    let c = acq.sound_speed_mps;
    let fs = acq.sample_rate_hz;
    let f0 = acq.center_freq_hz;
    let n_t = acq.n_samples();
    let t_end = acq.start_time_s + (n_t - 1) as f64 / fs;
    let sigma = pulse_sigma(f0, acq.n_cycles);
    let half_support = ENVELOPE_SIGMAS * sigma;
    let n_ev = scheme.events.len();
    let n_el = rx_array.len();
    let elements: Vec<Point3> = rx_array.positions().iter().map(|&p| rx_array.location(p)).collect();

    // Transmit delays and ranges, [event][scatterer].
    let tx: Vec<Vec<(f64, f64)>> = scheme
        .events
        .iter()
        .map(|ev| {
            let src = scheme.source(ev);
            phantom
                .scatterers
                .iter()
                .map(|s| (tx_delay(ev, scheme, s.position, c), norm(sub(s.position, src))))
                .collect()
        })
        .collect();

    // Receive ranges [element][scatterer]; the extremes bound every arrival.
    let rx_range = |e: Point3| -> Vec<f64> { phantom.scatterers.iter().map(|s| norm(sub(s.position, e))).collect() };
    let (rx_min, rx_max) = elements
        .par_iter()
        .map(|&e| {
            let r = rx_range(e);
            (r.clone(), r)
        })
        .reduce_with(|(mut lo, mut hi), (l2, h2)| {
            for (a, b) in lo.iter_mut().zip(&l2) {
                *a = a.min(*b);
            }
            for (a, b) in hi.iter_mut().zip(&h2) {
                *a = a.max(*b);
            }
            (lo, hi)
        })
        .expect("non-empty receive array");
    let truncated: Vec<usize> = (0..phantom.len())
        .filter(|&i| {
            phantom.scatterers[i].amplitude != 0.0
                && tx.iter().any(|row| row[i].0 + rx_min[i] / c < acq.start_time_s || row[i].0 + rx_max[i] / c > t_end)
        })
        .collect();
    if let Some(&first) = truncated.first() {
        return Err(Error::TruncatedScatterers { count: truncated.len(), first });
    }

    let omega = std::f64::consts::TAU * f0;
    let tx_phase: Vec<Vec<Cx<f64>>> =
        tx.iter().map(|row| row.iter().map(|&(t, _)| Cx::from_polar(1.0, -omega * t)).collect()).collect();

    let dt = 1.0 / fs;
    let inv_two_sigma2 = 0.5 / (sigma * sigma);
    // Gaussian recurrence: g[i+1] = g[i] * q[i], q[i+1] = q[i] * exp(-dt^2 / sigma^2).
    let q_step = (-dt * dt / (sigma * sigma)).exp();

    // One element at a time: its ranges and phasors serve every event.
    let mut samples = Array3::<Cx<T>>::from_elem((n_ev, n_el, n_t), Cx::new(T::zero(), T::zero()));
    samples.axis_iter_mut(Axis(1)).into_par_iter().zip(elements.par_iter()).for_each(|(mut lane, &elem)| {
        let r_rx = rx_range(elem);
        let rx_phase: Vec<Cx<f64>> = r_rx.iter().map(|&r| Cx::from_polar(1.0, -omega * r / c)).collect();
        let mut acc = vec![Cx::new(0.0f64, 0.0f64); n_t];
        for k in 0..n_ev {
            acc.fill(Cx::new(0.0, 0.0));
            for (i, s) in phantom.scatterers.iter().enumerate() {
                if s.amplitude == 0.0 {
                    continue;
                }
                let (t_tx, r_tx) = tx[k][i];
                let tau = t_tx + r_rx[i] / c;
                let mut amp = s.amplitude;
                if acq.spreading {
                    amp /= r_tx.max(f64::MIN_POSITIVE) * r_rx[i].max(f64::MIN_POSITIVE);
                }
                let phasor = tx_phase[k][i] * rx_phase[i] * amp;
                let lo = ((tau - half_support - acq.start_time_s) * fs).ceil().max(0.0) as usize;
                let hi = (((tau + half_support - acq.start_time_s) * fs).floor().max(-1.0) + 1.0) as usize;
                let hi = hi.min(n_t);
                if lo >= hi {
                    continue;
                }
                let x0 = acq.start_time_s + lo as f64 * dt - tau;
                let mut g = (-x0 * x0 * inv_two_sigma2).exp();
                let mut q = (-(2.0 * x0 * dt + dt * dt) * inv_two_sigma2).exp();
                for a in &mut acc[lo..hi] {
                    *a += phasor * g;
                    g *= q;
                    q *= q_step;
                }
            }
            for (o, a) in lane.row_mut(k).iter_mut().zip(&acc) {
                *o = Cx::new(T::of(a.re), T::of(a.im));
            }
        }
    });

    Ok(IqCube {
        samples,
        sample_rate: fs,
        center_freq: f0,
        start_time: acq.start_time_s,
        sound_speed: c,
        rx_array: rx_array.clone(),
        scheme: scheme.clone(),
    })
}
