//! Array descriptors and the binary IQ cube (`IQC1`) and volume (`BVL1`) formats.
//!
//! Both binary formats are little-endian. Complex samples are stored as
//! interleaved `f32` pairs, so an `f32` cube or volume round-trips bitwise
//! and wider types are rounded on save.
//!
//! `IQC1`: magic, `u32` events / elements / samples, `f64` sample rate,
//! centre frequency, start time and sound speed, the element table as `i32`
//! pairs, then samples in `(event, element, time)` order. The transmit scheme
//! is not part of the header; file helpers keep it in a JSON sidecar next to
//! the cube.
//!
//! `BVL1`: magic, `u32` direction and depth counts, `u32` beamformer code,
//! `u64` provenance hash, the direction table as `f64` `(θ, φ)` pairs, the
//! depth table as `f64`, then values in `(direction, depth)` order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};

use crate::acoustic_sim::{IqCube, TransmitScheme};
use crate::array_geometry::ElementSet;
use crate::beamformers::{BeamformerKind, ImagingGrid, Volume};
use crate::error::{Error, Result};
use crate::scalar::{Cx, Real};

pub const IQC_MAGIC: &[u8; 4] = b"IQC1";
pub const BVL_MAGIC: &[u8; 4] = b"BVL1";

pub fn descriptor_to_string(array: &ElementSet) -> Result<String> {
    Ok(serde_json::to_string_pretty(array)?)
}

pub fn descriptor_from_str(text: &str) -> Result<ElementSet> {
    Ok(serde_json::from_str(text)?)
}

pub fn save_descriptor(path: impl AsRef<Path>, array: &ElementSet) -> Result<()> {
    std::fs::write(path, descriptor_to_string(array)? + "\n")?;
    Ok(())
}

pub fn load_descriptor(path: impl AsRef<Path>) -> Result<ElementSet> {
    descriptor_from_str(&std::fs::read_to_string(path)?)
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_f64(w: &mut impl Write, v: f64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_cx<T: Real>(w: &mut impl Write, v: Cx<T>) -> Result<()> {
    w.write_all(&(v.re.f64() as f32).to_le_bytes())?;
    Ok(w.write_all(&(v.im.f64() as f32).to_le_bytes())?)
}

fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("file truncated".into()),
        _ => Error::Io(e),
    })?;
    Ok(b)
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(take(r)?))
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_le_bytes(take(r)?))
}

fn get_cx<T: Real>(r: &mut impl Read) -> Result<Cx<T>> {
    let re = f32::from_le_bytes(take(r)?);
    let im = f32::from_le_bytes(take(r)?);
    Ok(Cx::new(T::of(re as f64), T::of(im as f64)))
}

fn check_magic(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let got: [u8; 4] = take(r)?;
    if &got != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

fn count(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{what} count {n} does not fit in u32")))
}

fn ensure_eof(r: &mut impl Read) -> Result<()> {
    let mut b = [0u8; 1];
    match r.read(&mut b)? {
        0 => Ok(()),
        _ => Err(Error::Format("trailing bytes after payload".into())),
    }
}

pub fn write_iq_cube<T: Real>(w: &mut impl Write, cube: &IqCube<T>) -> Result<()> {
    let (ne, nel, nt) = cube.samples.dim();
    if nel != cube.rx_array.len() {
        return Err(Error::Format("element count disagrees with the receive array".into()));
    }
    w.write_all(IQC_MAGIC)?;
    put_u32(w, count(ne, "event")?)?;
    put_u32(w, count(nel, "element")?)?;
    put_u32(w, count(nt, "sample")?)?;
    for v in [cube.sample_rate, cube.center_freq, cube.start_time, cube.sound_speed] {
        put_f64(w, v)?;
    }
    for &(n, m) in cube.rx_array.positions() {
        w.write_all(&n.to_le_bytes())?;
        w.write_all(&m.to_le_bytes())?;
    }
    for &v in cube.samples.iter() {
        put_cx(w, v)?;
    }
    Ok(())
}

/// Reads a cube; the pitch and scheme are not stored and come from the caller.
pub fn read_iq_cube<T: Real>(
    r: &mut impl Read,
    pitch_x: f64,
    pitch_y: f64,
    scheme: TransmitScheme,
) -> Result<IqCube<T>> {
    check_magic(r, IQC_MAGIC)?;
    let ne = get_u32(r)? as usize;
    let nel = get_u32(r)? as usize;
    let nt = get_u32(r)? as usize;
    let sample_rate = get_f64(r)?;
    let center_freq = get_f64(r)?;
    let start_time = get_f64(r)?;
    let sound_speed = get_f64(r)?;
    let mut positions = Vec::with_capacity(nel.min(1 << 20));
    for _ in 0..nel {
        let n = i32::from_le_bytes(take(r)?);
        let m = i32::from_le_bytes(take(r)?);
        positions.push((n, m));
    }
    if positions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Format("element table is not strictly sorted".into()));
    }
    let rx_array = ElementSet::new(positions, pitch_x, pitch_y)?;
    if scheme.events.len() != ne {
        return Err(Error::Format(format!("scheme has {} events, cube has {ne}", scheme.events.len())));
    }
    let total = ne
        .checked_mul(nel)
        .and_then(|v| v.checked_mul(nt))
        .ok_or_else(|| Error::Format("cube dimensions overflow".into()))?;
    let mut flat = Vec::with_capacity(total.min(1 << 26));
    for _ in 0..total {
        flat.push(get_cx(r)?);
    }
    ensure_eof(r)?;
    let samples = Array3::from_shape_vec((ne, nel, nt), flat).expect("length checked");
    Ok(IqCube { samples, sample_rate, center_freq, start_time, sound_speed, rx_array, scheme })
}

/// Sidecar path holding the transmit scheme of a cube file.
pub fn scheme_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".scheme.json");
    PathBuf::from(s)
}

/// Writes `path` and its scheme sidecar.
pub fn save_iq_cube<T: Real>(path: impl AsRef<Path>, cube: &IqCube<T>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    write_iq_cube(&mut w, cube)?;
    w.flush()?;
    std::fs::write(scheme_sidecar(path), serde_json::to_string_pretty(&cube.scheme)?)?;
    Ok(())
}

/// Reads `path`, taking the scheme from `scheme` or else the sidecar.
pub fn load_iq_cube<T: Real>(
    path: impl AsRef<Path>,
    pitch_x: f64,
    pitch_y: f64,
    scheme: Option<TransmitScheme>,
) -> Result<IqCube<T>> {
    let path = path.as_ref();
    let scheme = match scheme {
        Some(s) => s,
        None => {
            let side = scheme_sidecar(path);
            let text = std::fs::read_to_string(&side).map_err(|e| {
                Error::Format(format!("no transmit scheme given and {} unreadable: {e}", side.display()))
            })?;
            serde_json::from_str(&text)?
        }
    };
    let mut r = BufReader::new(File::open(path)?);
    read_iq_cube(&mut r, pitch_x, pitch_y, scheme)
}

pub fn write_volume<T: Real>(w: &mut impl Write, vol: &Volume<T>) -> Result<()> {
    let (nd, nz) = vol.values.dim();
    if (nd, nz) != vol.grid.shape() {
        return Err(Error::GridMismatch("volume values disagree with the grid".into()));
    }
    w.write_all(BVL_MAGIC)?;
    put_u32(w, count(nd, "direction")?)?;
    put_u32(w, count(nz, "depth")?)?;
    put_u32(w, vol.beamformer.code())?;
    w.write_all(&vol.provenance.to_le_bytes())?;
    for &(theta, phi) in &vol.grid.directions {
        put_f64(w, theta)?;
        put_f64(w, phi)?;
    }
    for &z in &vol.grid.depths {
        put_f64(w, z)?;
    }
    for &v in vol.values.iter() {
        put_cx(w, v)?;
    }
    Ok(())
}

pub fn read_volume<T: Real>(r: &mut impl Read) -> Result<Volume<T>> {
    check_magic(r, BVL_MAGIC)?;
    let nd = get_u32(r)? as usize;
    let nz = get_u32(r)? as usize;
    let code = get_u32(r)?;
    let beamformer =
        BeamformerKind::from_code(code).ok_or_else(|| Error::Format(format!("unknown beamformer code {code}")))?;
    let provenance = u64::from_le_bytes(take(r)?);
    let mut directions = Vec::with_capacity(nd.min(1 << 20));
    for _ in 0..nd {
        directions.push((get_f64(r)?, get_f64(r)?));
    }
    let mut depths = Vec::with_capacity(nz.min(1 << 20));
    for _ in 0..nz {
        depths.push(get_f64(r)?);
    }
    let grid = ImagingGrid::new(directions, depths).map_err(|e| Error::Format(format!("invalid grid tables: {e}")))?;
    let mut flat = Vec::with_capacity((nd * nz).min(1 << 26));
    for _ in 0..nd * nz {
        flat.push(get_cx(r)?);
    }
    ensure_eof(r)?;
    let values = Array2::from_shape_vec((nd, nz), flat).expect("length checked");
    Ok(Volume { values, grid, beamformer, provenance })
}

pub fn save_volume<T: Real>(path: impl AsRef<Path>, vol: &Volume<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_volume(&mut w, vol)?;
    w.flush()?;
    Ok(())
}

pub fn load_volume<T: Real>(path: impl AsRef<Path>) -> Result<Volume<T>> {
    read_volume(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustic_sim::{TransmitEvent, TransmitMode};
    use crate::array_geometry::make_upa;

    fn scheme(n: usize) -> TransmitScheme {
        let events = (0..n).map(|i| TransmitEvent { alpha: i as f64 * 0.01, beta: 0.0 }).collect();
        TransmitScheme::new(TransmitMode::Diverging, events, -4.8e-3, make_upa(3, 2, 3e-4, 3e-4).unwrap()).unwrap()
    }

    #[test]
    fn cube_roundtrip_bitwise() {
        let rx = ElementSet::new(vec![(-1, 0), (-1, 1), (0, 0), (0, 1), (1, 0), (1, 1)], 3e-4, 3e-4).unwrap();
        let samples = Array3::from_shape_fn((2, 6, 5), |(e, el, t)| {
            Cx::new((e * 31 + el * 7 + t) as f32 * 0.37 - 3.0, f32::from_bits(0x3f80_0001 + t as u32))
        });
        let cube = IqCube {
            samples,
            sample_rate: 12e6,
            center_freq: 3e6,
            start_time: 1.25e-5,
            sound_speed: 1540.0,
            rx_array: rx,
            scheme: scheme(2),
        };
        let mut buf = Vec::new();
        write_iq_cube(&mut buf, &cube).unwrap();
        assert_eq!(buf.len(), 4 + 12 + 32 + 6 * 8 + 60 * 8);
        let back: IqCube<f32> = read_iq_cube(&mut buf.as_slice(), 3e-4, 3e-4, scheme(2)).unwrap();
        assert_eq!(back, cube);
        assert!(read_iq_cube::<f32>(&mut &buf[..buf.len() - 1], 3e-4, 3e-4, scheme(2)).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_iq_cube::<f32>(&mut bad.as_slice(), 3e-4, 3e-4, scheme(2)), Err(Error::Format(_))));
    }

    #[test]
    fn volume_roundtrip_bitwise() {
        let grid = ImagingGrid::planes(&[-0.1, 0.0, 0.1], &[0.0], vec![0.03, 0.031]).unwrap();
        let values = Array2::from_shape_fn((3, 2), |(d, z)| Cx::new(d as f32 - 0.5, z as f32 * 1e-7));
        let vol = Volume { values, grid, beamformer: BeamformerKind::Scoba3d, provenance: 0xdead_beef_0123 };
        let mut buf = Vec::new();
        write_volume(&mut buf, &vol).unwrap();
        let back: Volume<f32> = read_volume(&mut buf.as_slice()).unwrap();
        assert_eq!(back, vol);
        assert_eq!(
            back.values.as_slice().unwrap().iter().map(|c| c.re.to_bits()).collect::<Vec<_>>(),
            vol.values.as_slice().unwrap().iter().map(|c| c.re.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn descriptor_roundtrip() {
        let a = ElementSet::new(vec![(0, 0), (1, 0), (-2, 5)], 3e-4, 2.5e-4).unwrap();
        let back = descriptor_from_str(&descriptor_to_string(&a).unwrap()).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.pitch_x().to_bits(), a.pitch_x().to_bits());
    }
}
