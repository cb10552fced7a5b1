use ndarray::Array2;
use rayon::prelude::*;

use super::{CompoundField, ImagingGrid};
use crate::acoustic_sim::{rx_delay, tx_delay, IqCube, TransmitMode};
use crate::array_geometry::ElementSet;
use crate::error::{Error, Result};
use crate::scalar::{Cx, Real};

/// Coherent compounding of every event onto every grid point, for all
/// elements of the cube's receive array.
pub fn compound<T: Real>(cube: &IqCube<T>, grid: &ImagingGrid) -> Result<CompoundField<T>> {
    compound_subset(cube, grid, &cube.rx_array)
}

/// Coherent compounding restricted to `elements`, a subset of the cube's
/// receive array.
///
/// Each element trace is delayed to the exact round-trip time of the grid
/// point, linearly interpolated between IQ samples, rotated by
/// `exp(+j 2π f0 τ)` and summed over transmit events. In focused mode only
/// the event steered closest to the grid direction contributes. Samples
/// outside the acquisition window contribute zero and are counted in
/// [`CompoundField::zero_filled`].
pub fn compound_subset<T: Real>(
    cube: &IqCube<T>,
    grid: &ImagingGrid,
    elements: &ElementSet,
) -> Result<CompoundField<T>> {
    if !cube.rx_array.same_pitch(elements) {
        return Err(Error::PitchMismatch(
            cube.rx_array.pitch_x(),
            cube.rx_array.pitch_y(),
            elements.pitch_x(),
            elements.pitch_y(),
        ));
    }
    let columns: Vec<usize> = elements
        .positions()
        .iter()
        .map(|&p| cube.rx_array.position_of(p).ok_or(Error::WeightOutsideSupport(p.0, p.1)))
        .collect::<Result<_>>()?;

    let scheme = &cube.scheme;
    let c = cube.sound_speed;
    let fs = cube.sample_rate;
    let omega = std::f64::consts::TAU * cube.center_freq;
    let n_t = cube.n_samples();
    let n_el = columns.len();
    let n_depth = grid.depths.len();
    let samples = cube.samples.as_slice().expect("standard layout");
    let stride_event = cube.n_elements() * n_t;

    // Focused transmissions are already focused; one event per direction.
    let event_for_direction: Vec<Option<usize>> = grid
        .directions
        .iter()
        .map(|&(theta, phi)| match scheme.mode {
            TransmitMode::Diverging => None,
            TransmitMode::Focused => {
                let u = ImagingGrid::unit(theta, phi);
                scheme
                    .events
                    .iter()
                    .enumerate()
                    .map(|(k, ev)| {
                        let d = ev.direction();
                        (k, d[0] * u[0] + d[1] * u[1] + d[2] * u[2])
                    })
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(k, _)| k)
            }
        })
        .collect();

    let n_grid = grid.len();
    let points: Vec<_> = (0..n_grid).map(|g| grid.point(g / n_depth, g % n_depth)).collect();
    // Per-event transmit delays and carrier phasors, indexed [event][grid point].
    // In focused mode only the active event of each direction is filled in.
    let active: Vec<Vec<bool>> = (0..scheme.events.len())
        .map(|k| (0..n_grid).map(|g| event_for_direction[g / n_depth].is_none_or(|e| e == k)).collect())
        .collect();
    let tx: Vec<Vec<(f64, Cx<f64>)>> = (0..scheme.events.len())
        .into_par_iter()
        .map(|k| {
            points
                .iter()
                .zip(&active[k])
                .map(|(&p, &on)| {
                    if on {
                        let t = tx_delay(&scheme.events[k], scheme, p, c);
                        (t, Cx::from_polar(1.0, omega * t))
                    } else {
                        (f64::NAN, Cx::new(0.0, 0.0))
                    }
                })
                .collect()
        })
        .collect();

    // One column per element; each trace is read while it is hot in cache.
    let columns_out: Vec<(Vec<Cx<T>>, usize)> = elements
        .positions()
        .par_iter()
        .zip(columns.par_iter())
        .map(|(&p, &col)| {
            let t_rx: Vec<f64> =
                points.iter().map(|&v| rx_delay(p, elements.pitch_x(), elements.pitch_y(), v, c)).collect();
            let mut acc = vec![Cx::new(0.0f64, 0.0f64); n_grid];
            let mut missed = 0usize;
            for (k, tx_k) in tx.iter().enumerate() {
                let base = k * stride_event + col * n_t;
                let trace = &samples[base..base + n_t];
                for (g, ((&(t_tx, ph), &on), &tr)) in tx_k.iter().zip(&active[k]).zip(&t_rx).enumerate() {
                    if !on {
                        continue;
                    }
                    let f = (t_tx + tr - cube.start_time) * fs;
                    if !(f >= 0.0) || f > (n_t - 1) as f64 {
                        missed += 1;
                        continue;
                    }
                    let i0 = (f.floor() as usize).min(n_t - 1);
                    let i1 = (i0 + 1).min(n_t - 1);
                    let frac = f - i0 as f64;
                    let (a, b) = (trace[i0], trace[i1]);
                    let v = Cx::new(a.re.f64(), a.im.f64()) * (1.0 - frac) + Cx::new(b.re.f64(), b.im.f64()) * frac;
                    acc[g] += v * ph;
                }
            }
            let out = acc
                .iter()
                .zip(&t_rx)
                .map(|(&a, &tr)| {
                    let v = a * Cx::from_polar(1.0, omega * tr);
                    Cx::new(T::of(v.re), T::of(v.im))
                })
                .collect();
            (out, missed)
        })
        .collect();

    let zero_filled = columns_out.iter().map(|r| r.1).sum();
    let y = Array2::from_shape_fn((n_grid, n_el), |(g, e)| columns_out[e].0[g]);
    if zero_filled > 0 {
        log::warn!("compounding zero-filled {zero_filled} samples outside the acquisition window");
    }
    Ok(CompoundField { y, rx_array: elements.clone(), grid: grid.clone(), zero_filled })
}
