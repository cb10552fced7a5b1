use super::{is_full_coarray, sum_coarray, ElementSet, Index2};
use crate::error::{Error, Result};

/// Result of a recursive fractal expansion.
#[derive(Clone, Debug, PartialEq)]
pub struct FractalExpansion {
    pub elements: ElementSet,
    /// Row/column element counts `(C_x, C_y)` of the generator's co-array box.
    pub scale: (i64, i64),
    /// Generator design checks that did not hold. Expansion still proceeds.
    pub warnings: Vec<String>,
}

/// Expands `generator` recursively `order` times.
///
/// `F_0 = {(0,0)}` and `F_{r+1}` is the union over generator elements `(n, m)`
/// of `F_r` shifted by `(n * C_x^r, m * C_y^r)`, where `C_x, C_y` are the side
/// lengths of the generator's sum co-array box. `F_1` is the generator itself.
pub fn fractal_expand(generator: &ElementSet, order: u32) -> Result<FractalExpansion> {
    let coarray = sum_coarray(generator)?;
    let b = coarray.bounds().ok_or(Error::EmptyElementSet)?;
    let (cx, cy) = (b.width() as i64, b.height() as i64);

    let mut warnings = Vec::new();
    if !is_full_coarray(generator) {
        warnings.push(format!(
            "generator sum co-array is not full: {} of {} positions in its {}x{} box",
            coarray.len(),
            b.area(),
            cx,
            cy
        ));
    }

    let overflow = || Error::InvalidParams(format!("fractal order {order} overflows lattice indices"));
    let mut current: Vec<(i64, i64)> = vec![(0, 0)];
    let (mut sx, mut sy) = (1i64, 1i64);
    for r in 0..order {
        if r > 0 {
            sx = sx.checked_mul(cx).ok_or_else(overflow)?;
            sy = sy.checked_mul(cy).ok_or_else(overflow)?;
        }
        let mut next = Vec::with_capacity(current.len() * generator.len());
        for &(n, m) in generator.positions() {
            let (dx, dy) = (n as i64 * sx, m as i64 * sy);
            next.extend(current.iter().map(|&(a, c)| (a + dx, c + dy)));
        }
        current = next;
    }

    let positions = current
        .into_iter()
        .map(|(a, c)| {
            Ok::<Index2, Error>((i32::try_from(a).map_err(|_| overflow())?, i32::try_from(c).map_err(|_| overflow())?))
        })
        .collect::<Result<Vec<_>>>()?;
    let expected = positions.len();
    let elements = ElementSet::from_iter_dedup(positions, generator.pitch_x(), generator.pitch_y())?;
    if elements.len() != expected {
        warnings.push(format!("{} replicas overlapped", expected - elements.len()));
    }
    Ok(FractalExpansion { elements, scale: (cx, cy), warnings })
}
