use serde::{Deserialize, Serialize};

use super::{ElementSet, Index2};
use crate::error::{Error, Result};

/// Hand-designed sparse receive layouts inside a `(2N+1) x (2N+1)` aperture.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum NamedSparse {
    /// Central row plus central column.
    Plus { half_extent: u32 },
    /// Both diagonals.
    X { half_extent: u32 },
    /// Perimeter ring.
    Box { half_extent: u32 },
    /// Product of a 1D nested layout with itself: a dense inner segment
    /// `[-inner, inner]` plus `outer_per_side` points per side at multiples of
    /// `stride`.
    Nested { inner_half_extent: u32, stride: u32, outer_per_side: u32 },
}

impl NamedSparse {
    /// 225-element nested layout (15 x 15) for the 31 x 31 aperture.
    pub const ARRAY_I: NamedSparse = NamedSparse::Nested { inner_half_extent: 6, stride: 13, outer_per_side: 1 };
    /// 169-element nested layout (13 x 13).
    pub const ARRAY_II: NamedSparse = NamedSparse::Nested { inner_half_extent: 5, stride: 11, outer_per_side: 1 };
    /// 121-element nested layout (11 x 11).
    pub const ARRAY_III: NamedSparse = NamedSparse::Nested { inner_half_extent: 2, stride: 5, outer_per_side: 3 };

    fn positions(&self) -> Result<Vec<Index2>> {
        let ps = match *self {
            NamedSparse::Plus { half_extent } => {
                let n = half_extent as i32;
                (-n..=n).map(|k| (k, 0)).chain((-n..=n).filter(|&k| k != 0).map(|k| (0, k))).collect()
            }
            NamedSparse::X { half_extent } => {
                let n = half_extent as i32;
                (-n..=n).map(|k| (k, k)).chain((-n..=n).filter(|&k| k != 0).map(|k| (k, -k))).collect()
            }
            NamedSparse::Box { half_extent } => {
                let n = half_extent as i32;
                (-n..=n)
                    .flat_map(|a| (-n..=n).map(move |b| (a, b)))
                    .filter(|&(a, b)| a.abs() == n || b.abs() == n)
                    .collect()
            }
            NamedSparse::Nested { inner_half_extent, stride, outer_per_side } => {
                if stride <= inner_half_extent {
                    return Err(Error::InvalidParams(format!(
                        "nested stride {stride} must exceed inner half extent {inner_half_extent}"
                    )));
                }
                let reach = stride as i64 * outer_per_side as i64;
                if reach > i32::MAX as i64 / 4 {
                    return Err(Error::InvalidParams(format!("nested reach {reach} too large")));
                }
                let a = inner_half_extent as i32;
                let s = stride as i32;
                let line: Vec<i32> =
                    (-a..=a).chain((1..=outer_per_side as i32).flat_map(|j| [-j * s, j * s])).collect();
                line.iter().flat_map(|&u| line.iter().map(move |&v| (u, v))).collect()
            }
        };
        Ok(ps)
    }
}

/// Builds the named layout with the given pitch.
pub fn named_sparse(shape: &NamedSparse, pitch_x: f64, pitch_y: f64) -> Result<ElementSet> {
    ElementSet::from_iter_dedup(shape.positions()?, pitch_x, pitch_y)
}
