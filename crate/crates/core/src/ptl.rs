//! Most Common Bin and two-step range-bin tracking.
//!
//! Step one finds the range bin that most often holds the strongest
//! reflection over the whole recording. Step two restricts attention to a
//! `w_b`-bin neighbourhood around it and re-runs the same vote on consecutive
//! `w_t`-chirp windows, so the selection follows reflections that move
//! between neighbouring bins.

use std::ops::{Range, RangeInclusive};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::radar::{magnitude, BinSelection, CirMatrix, RealMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PtlParams {
    /// Chirps per time window.
    pub w_t: usize,
    /// Range bins in the neighbourhood.
    pub w_b: usize,
}

impl Default for PtlParams {
    /// One second of frames at 200 Hz, nine bins.
    fn default() -> Self {
        Self { w_t: 200, w_b: 9 }
    }
}

impl PtlParams {
    pub fn validate(&self) -> Result<()> {
        if self.w_t == 0 || self.w_b == 0 {
            return invalid("w_t and w_b must be at least 1");
        }
        Ok(())
    }
}

/// Index of the largest value in `rows` of column `col`; ties go to the lower row.
fn column_argmax(m: &RealMatrix, rows: &Range<usize>, col: usize) -> usize {
    let mut best = rows.start;
    let mut best_v = m.get(best, col);
    for r in rows.start + 1..rows.end {
        let v = m.get(r, col);
        if v > best_v {
            best = r;
            best_v = v;
        }
    }
    best
}

/// Mode of the per-column argmax over a sub-window, as an absolute row index.
/// Ties in the mode go to the lower row.
fn mcb_window(m: &RealMatrix, rows: Range<usize>, cols: Range<usize>) -> usize {
    let mut counts = vec![0usize; rows.len()];
    for c in cols {
        counts[column_argmax(m, &rows, c) - rows.start] += 1;
    }
    let mut best = 0;
    for (i, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = i;
        }
    }
    rows.start + best
}

/// Mode over chirps of the per-chirp argmax-magnitude bin.
pub fn most_common_bin(m: &RealMatrix) -> Result<usize> {
    if m.rows == 0 || m.cols == 0 {
        return invalid("most_common_bin needs a non-empty matrix");
    }
    Ok(mcb_window(m, 0..m.rows, 0..m.cols))
}

/// Clamp the window `[t - floor(w_b/2), t + ceil(w_b/2) - 1]` to `0..num_bins`.
pub fn neighbourhood_around(t: usize, w_b: usize, num_bins: usize) -> RangeInclusive<usize> {
    let first = t.saturating_sub(w_b / 2);
    let last = (t + w_b.div_ceil(2)).saturating_sub(1).min(num_bins - 1);
    first..=last
}

/// Step one of the tracker: the target bin and its clamped neighbourhood.
pub fn neighbourhood(cir: &CirMatrix, params: &PtlParams) -> Result<(usize, RangeInclusive<usize>)> {
    params.validate()?;
    if params.w_b > cir.num_samples() {
        return invalid(format!("w_b {} exceeds {} range bins", params.w_b, cir.num_samples()));
    }
    let m = magnitude(cir);
    let t = most_common_bin(&m)?;
    Ok((t, neighbourhood_around(t, params.w_b, m.rows)))
}

/// Per-chirp bin selection.
pub fn ptl(cir: &CirMatrix, params: &PtlParams) -> Result<BinSelection> {
    params.validate()?;
    if params.w_b > cir.num_samples() {
        return invalid(format!("w_b {} exceeds {} range bins", params.w_b, cir.num_samples()));
    }
    let m = magnitude(cir);
    Ok(ptl_magnitude(&m, params))
}

/// [`ptl`] on a precomputed magnitude matrix.
pub fn ptl_magnitude(m: &RealMatrix, params: &PtlParams) -> BinSelection {
    let t = mcb_window(m, 0..m.rows, 0..m.cols);
    let hood = neighbourhood_around(t, params.w_b, m.rows);
    let rows = *hood.start()..*hood.end() + 1;
    let mut bins = Vec::with_capacity(m.cols);
    let mut start = 0;
    while start < m.cols {
        let end = (start + params.w_t).min(m.cols);
        let pick = mcb_window(m, rows.clone(), start..end);
        bins.extend(std::iter::repeat_n(pick, end - start));
        start = end;
    }
    BinSelection { bins }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radar::RadarConfig;
    use num_complex::Complex32;

    fn matrix(rows: &[Vec<f64>]) -> RealMatrix {
        RealMatrix::from_rows(rows).unwrap()
    }

    /// bins x chirps magnitude matrix whose per-chirp argmax follows `argmax`.
    fn from_argmax(bins: usize, argmax: &[usize]) -> RealMatrix {
        let mut data = vec![0.1; bins * argmax.len()];
        for (c, &a) in argmax.iter().enumerate() {
            data[a * argmax.len() + c] = 1.0;
        }
        RealMatrix::new(data, bins, argmax.len()).unwrap()
    }

    #[test]
    fn mcb_examples() {
        assert_eq!(most_common_bin(&matrix(&[vec![1.0, 1.0], vec![5.0, 5.0]])).unwrap(), 1);
        assert_eq!(most_common_bin(&from_argmax(4, &[2, 2, 3])).unwrap(), 2);
        assert_eq!(most_common_bin(&from_argmax(4, &[3, 1, 3, 1])).unwrap(), 1);
        // argmax ties within a column go low
        assert_eq!(most_common_bin(&matrix(&[vec![2.0], vec![2.0]])).unwrap(), 0);
        assert!(most_common_bin(&RealMatrix::new(vec![], 0, 0).unwrap()).is_err());
    }

    #[test]
    fn neighbourhood_is_clamped() {
        assert_eq!(neighbourhood_around(10, 9, 64), 6..=14);
        assert_eq!(neighbourhood_around(10, 4, 64), 8..=11);
        assert_eq!(neighbourhood_around(1, 9, 64), 0..=5);
        assert_eq!(neighbourhood_around(62, 9, 64), 58..=63);
        assert_eq!(neighbourhood_around(5, 1, 64), 5..=5);
    }

    fn cir_from_magnitude(m: &RealMatrix) -> CirMatrix {
        let config = RadarConfig { samples_per_chirp: m.rows, ..RadarConfig::default() };
        let data = m.data.iter().map(|&v| Complex32::new(v as f32, 0.0)).collect();
        CirMatrix::new(data, m.cols, config).unwrap()
    }

    #[test]
    fn degenerate_neighbourhood_selects_target_everywhere() {
        let m = from_argmax(6, &[1, 4, 4, 2, 4, 3, 4]);
        let cir = cir_from_magnitude(&m);
        for w_t in [1, 2, 3, 100] {
            let s = ptl(&cir, &PtlParams { w_t, w_b: 1 }).unwrap();
            assert!(s.bins.iter().all(|&b| b == 4));
        }
    }

    #[test]
    fn single_window_is_constant() {
        let m = from_argmax(8, &[3, 4, 4, 4, 3, 1, 4]);
        let cir = cir_from_magnitude(&m);
        let s = ptl(&cir, &PtlParams { w_t: 7, w_b: 3 }).unwrap();
        assert_eq!(s.bins, vec![4; 7]);
    }

    #[test]
    fn windows_track_and_partial_window_is_kept() {
        let argmax = [5, 5, 5, 6, 6, 6, 4, 4];
        let cir = cir_from_magnitude(&from_argmax(10, &argmax));
        let s = ptl(&cir, &PtlParams { w_t: 3, w_b: 5 }).unwrap();
        assert_eq!(s.bins, vec![5, 5, 5, 6, 6, 6, 4, 4]);
    }

    #[test]
    fn oversized_neighbourhood_is_rejected() {
        let cir = cir_from_magnitude(&from_argmax(4, &[1, 2]));
        assert!(ptl(&cir, &PtlParams { w_t: 1, w_b: 5 }).is_err());
        assert!(ptl(&cir, &PtlParams { w_t: 0, w_b: 1 }).is_err());
    }
}
