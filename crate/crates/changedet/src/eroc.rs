//! Region-of-change extraction. Directional mean-squared-difference
//! profiles are scanned from each side of the frame; the first ascent
//! that reaches a significant peak marks where change begins from that
//! side, and the four scan results bound a rectangular region so later
//! stages can skip quiet parts of the frame.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::imgcore::{check_dims, Image};

/// Per-row and per-column mean squared difference curves for an image
/// pair, in all four scan directions.
///
/// `bottom_up` is `top_down` reversed and `right_left` is `left_right`
/// reversed; they are materialized so each scan reads its own curve
/// forward.
#[derive(Debug, Clone, PartialEq)]
pub struct MsdCurves {
    pub top_down: Vec<f64>,
    pub bottom_up: Vec<f64>,
    pub left_right: Vec<f64>,
    pub right_left: Vec<f64>,
}

/// Inclusive rectangular region of interest, `empty` when no side scan
/// found significant change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
    pub empty: bool,
}

impl Roi {
    pub fn new(top: usize, bottom: usize, left: usize, right: usize) -> Self {
        assert!(top <= bottom && left <= right, "inverted roi bounds");
        Roi {
            top,
            bottom,
            left,
            right,
            empty: false,
        }
    }

    pub fn empty() -> Self {
        Roi {
            top: 0,
            bottom: 0,
            left: 0,
            right: 0,
            empty: true,
        }
    }

    /// Whole-frame region for a `width` x `height` image.
    pub fn full(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0);
        Roi::new(0, height - 1, 0, width - 1)
    }

    pub fn is_empty(&self) -> bool {
        self.empty
    }

    pub fn width(&self) -> usize {
        if self.empty {
            0
        } else {
            self.right - self.left + 1
        }
    }

    pub fn height(&self) -> usize {
        if self.empty {
            0
        } else {
            self.bottom - self.top + 1
        }
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        !self.empty
            && (self.top..=self.bottom).contains(&row)
            && (self.left..=self.right).contains(&col)
    }

    pub fn row_range(&self) -> std::ops::Range<usize> {
        if self.empty {
            0..0
        } else {
            self.top..self.bottom + 1
        }
    }

    pub fn col_range(&self) -> std::ops::Range<usize> {
        if self.empty {
            0..0
        } else {
            self.left..self.right + 1
        }
    }

    /// True when every cell of `other` lies inside `self`.
    pub fn contains_roi(&self, other: &Roi) -> bool {
        other.empty
            || (!self.empty
                && self.top <= other.top
                && self.bottom >= other.bottom
                && self.left <= other.left
                && self.right >= other.right)
    }
}

/// Directional MSD curves of a registered pair.
pub fn msd_curves(a: &Image, b: &Image) -> Result<MsdCurves> {
    check_dims(a, b)?;
    let (w, h) = (a.width(), a.height());

    let sq = |r: usize, c: usize| {
        let d = a.get(r, c) as f64 - b.get(r, c) as f64;
        d * d
    };

    let top_down: Vec<f64> = (0..h)
        .map(|r| (0..w).map(|c| sq(r, c)).sum::<f64>() / w as f64)
        .collect();
    let left_right: Vec<f64> = (0..w)
        .map(|c| (0..h).map(|r| sq(r, c)).sum::<f64>() / h as f64)
        .collect();

    let bottom_up = top_down.iter().rev().copied().collect();
    let right_left = left_right.iter().rev().copied().collect();
    Ok(MsdCurves {
        top_down,
        bottom_up,
        left_right,
        right_left,
    })
}

/// Significance threshold for a scan: the mean of the curve.
pub fn ffp_threshold(curve: &[f64]) -> f64 {
    assert!(!curve.is_empty(), "threshold of an empty curve");
    curve.iter().sum::<f64>() / curve.len() as f64
}

/// First point of significant change along a curve.
///
/// Returns the smallest index starting a maximal strictly-increasing run
/// whose final value exceeds `t`; a first element that itself exceeds `t`
/// with no ascent counts as index 0. `None` when no peak exceeds `t`.
pub fn find_first_point(curve: &[f64], t: f64) -> Option<usize> {
    let n = curve.len();
    let mut i = 0;
    while i < n {
        let start = i;
        while i + 1 < n && curve[i] < curve[i + 1] {
            i += 1;
        }
        // curve[i] is the run's peak: the next value (if any) is <= it
        if curve[i] > t {
            return Some(start);
        }
        i += 1;
    }
    None
}

/// Combine the four scans into a rectangle, mapping the reversed scans
/// back to frame coordinates.
pub fn roi_from_curves(curves: &MsdCurves, t_row: f64, t_col: f64) -> Roi {
    let n = curves.top_down.len();
    let m = curves.left_right.len();
    let top = find_first_point(&curves.top_down, t_row);
    let bottom_rev = find_first_point(&curves.bottom_up, t_row);
    let left = find_first_point(&curves.left_right, t_col);
    let right_rev = find_first_point(&curves.right_left, t_col);
    match (top, bottom_rev, left, right_rev) {
        (Some(top), Some(b), Some(left), Some(r)) => {
            let bottom = n - 1 - b;
            let right = m - 1 - r;
            if top > bottom || left > right {
                Roi::empty()
            } else {
                Roi::new(top, bottom, left, right)
            }
        }
        _ => Roi::empty(),
    }
}

/// Region of candidate change for a registered pair.
pub fn extract_roi(a: &Image, b: &Image) -> Result<Roi> {
    extract_roi_scaled(a, b, 1.0)
}

/// [`extract_roi`] with the significance threshold scaled by
/// `threshold_scale` (1.0 keeps the plain curve mean).
pub fn extract_roi_scaled(a: &Image, b: &Image, threshold_scale: f64) -> Result<Roi> {
    let curves = msd_curves(a, b)?;
    let t_row = ffp_threshold(&curves.top_down) * threshold_scale;
    let t_col = ffp_threshold(&curves.left_right) * threshold_scale;
    Ok(roi_from_curves(&curves, t_row, t_col))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_by_two_curves_have_known_values() {
        let a = Image::new(2, 2);
        let mut b = Image::new(2, 2);
        b.set(0, 0, 10);
        let c = msd_curves(&a, &b).unwrap();
        assert_eq!(c.top_down, vec![50.0, 0.0]);
        assert_eq!(c.bottom_up, vec![0.0, 50.0]);
        assert_eq!(c.left_right, vec![50.0, 0.0]);
        assert_eq!(c.right_left, vec![0.0, 50.0]);
    }

    #[test]
    fn identical_images_give_all_zero_curves() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let img = Image::from_fn(20, 14, |_, _| rng.random());
        let c = msd_curves(&img, &img).unwrap();
        assert!(c.top_down.iter().all(|&v| v == 0.0));
        assert!(c.left_right.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reversed_curves_mirror_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..20 {
            let a = Image::from_fn(17, 11, |_, _| rng.random());
            let b = Image::from_fn(17, 11, |_, _| rng.random());
            let c = msd_curves(&a, &b).unwrap();
            let n = c.top_down.len();
            let m = c.left_right.len();
            for i in 0..n {
                assert_eq!(c.bottom_up[i].to_bits(), c.top_down[n - 1 - i].to_bits());
            }
            for j in 0..m {
                assert_eq!(c.right_left[j].to_bits(), c.left_right[m - 1 - j].to_bits());
            }
        }
    }

    #[test]
    fn first_point_of_a_mid_curve_ascent() {
        let curve = [0.0, 0.0, 1.0, 5.0, 9.0, 2.0];
        assert_eq!(find_first_point(&curve, 4.0), Some(1));
    }

    #[test]
    fn peak_at_the_start_returns_index_zero() {
        let curve = [6.0, 1.0, 0.0, 0.0];
        assert_eq!(find_first_point(&curve, 2.0), Some(0));
    }

    #[test]
    fn flat_zero_curve_has_no_first_point() {
        let curve = [0.0; 8];
        assert_eq!(find_first_point(&curve, 0.0), None);
    }

    #[test]
    fn threshold_is_the_curve_mean() {
        assert_eq!(ffp_threshold(&[1.0, 2.0, 3.0, 6.0]), 3.0);
    }

    #[test]
    fn identical_pair_yields_empty_roi() {
        let img = Image::from_fn(16, 16, |r, c| (r * c) as u8);
        let roi = extract_roi(&img, &img).unwrap();
        assert!(roi.is_empty());
        assert_eq!(roi.area(), 0);
    }

    #[test]
    fn uniform_block_change_is_bracketed_within_one_line() {
        let a = Image::from_fn(40, 30, |r, c| (60 + (r + c) % 5) as u8);
        let mut b = a.clone();
        for r in 10..13 {
            for c in 20..26 {
                b.set(r, c, a.get(r, c) + 80);
            }
        }
        let roi = extract_roi(&a, &b).unwrap();
        assert!(!roi.is_empty());
        assert!(roi.top + 1 >= 10 && roi.top <= 10);
        assert!(roi.bottom >= 12 && roi.bottom <= 13);
        assert!(roi.left + 1 >= 20 && roi.left <= 20);
        assert!(roi.right >= 25 && roi.right <= 26);
    }

    #[test]
    fn lowering_the_threshold_never_shrinks_the_roi() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..200 {
            let n = rng.random_range(4..24);
            let m = rng.random_range(4..24);
            let top_down: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 10.0).collect();
            let left_right: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * 10.0).collect();
            let curves = MsdCurves {
                bottom_up: top_down.iter().rev().copied().collect(),
                right_left: left_right.iter().rev().copied().collect(),
                top_down,
                left_right,
            };
            let t1 = rng.random::<f64>() * 10.0;
            let t2 = t1 + rng.random::<f64>() * 5.0;
            let wide = roi_from_curves(&curves, t1, t1);
            let narrow = roi_from_curves(&curves, t2, t2);
            assert!(
                wide.contains_roi(&narrow),
                "roi at t={t2} not inside roi at t={t1}: {narrow:?} vs {wide:?}"
            );
        }
    }

    #[test]
    fn threshold_scale_flag_reaches_the_scan() {
        let a = Image::from_fn(30, 30, |_, _| 50);
        let mut b = a.clone();
        for r in 12..18 {
            for c in 12..18 {
                b.set(r, c, 140);
            }
        }
        let strict = extract_roi_scaled(&a, &b, 1.0).unwrap();
        let loose = extract_roi_scaled(&a, &b, 0.1).unwrap();
        assert!(loose.contains_roi(&strict));
        assert!(loose.area() >= strict.area());
    }

    #[test]
    fn roi_geometry_helpers() {
        let roi = Roi::new(2, 5, 3, 9);
        assert_eq!(roi.height(), 4);
        assert_eq!(roi.width(), 7);
        assert_eq!(roi.area(), 28);
        assert!(roi.contains(2, 3));
        assert!(!roi.contains(1, 3));
        assert!(Roi::full(10, 8).contains(7, 9));
        assert!(Roi::full(10, 8).contains_roi(&roi));
        assert_eq!(Roi::empty().area(), 0);
    }
}
