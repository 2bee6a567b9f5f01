//! Per-pixel change features. Each pixel of the candidate region gets a
//! score from a small window around it: either a mutual-information
//! similarity rate (plain or center-weighted) or a generalized
//! likelihood-ratio statistic on the window means.
//!
//! The similarity rate compares a window pair against the baseline
//! window paired with itself, as a percentage in [0, 100]; low values
//! mean change. The likelihood-ratio statistic runs the other way:
//! high values mean change. [`MapKind`] records which way a finished
//! map points.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eroc::Roi;
use crate::imgcore::{check_dims, DiffImage, Image};

/// Window-feature parameters shared by the mutual-information features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureParams {
    /// Window side length, odd.
    pub window: usize,
    /// Pairs whose values differ by at most this are treated as noise
    /// and snapped onto the histogram diagonal.
    pub delta_thresh: u8,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            window: 3,
            delta_thresh: 4,
        }
    }
}

/// Which per-pixel feature scores the candidate region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMethod {
    Glrt,
    Lmi,
    Wlmi,
}

impl std::str::FromStr for FeatureMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "glrt" => Ok(FeatureMethod::Glrt),
            "lmi" => Ok(FeatureMethod::Lmi),
            "wlmi" => Ok(FeatureMethod::Wlmi),
            other => Err(Error::InvalidConfig(format!(
                "unknown feature method `{other}` (expected glrt, lmi or wlmi)"
            ))),
        }
    }
}

impl std::fmt::Display for FeatureMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FeatureMethod::Glrt => "glrt",
            FeatureMethod::Lmi => "lmi",
            FeatureMethod::Wlmi => "wlmi",
        };
        f.write_str(s)
    }
}

/// The two mutual-information window features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiFeature {
    Plain,
    Weighted,
}

/// Joint intensity histogram of a paired sample, with near-equal pairs
/// snapped to the diagonal.
///
/// A pair whose values differ by at most `delta` is recorded as
/// `(m, m)` with `m = min(x, y)`, so registration noise lands on the
/// diagonal and swapping the two samples transposes the histogram
/// exactly. Marginals are taken from the snapped pairs.
#[derive(Debug, Clone)]
pub struct JointHistogram {
    counts: BTreeMap<(u8, u8), u64>,
    x_counts: BTreeMap<u8, u64>,
    y_counts: BTreeMap<u8, u64>,
    snapped: Vec<(u8, u8)>,
    n_change: u64,
    total: u64,
}

impl JointHistogram {
    pub fn new(xs: &[u8], ys: &[u8], delta: u8) -> Self {
        assert_eq!(xs.len(), ys.len(), "paired samples differ in length");
        assert!(!xs.is_empty(), "empty paired sample");
        let mut counts = BTreeMap::new();
        let mut x_counts = BTreeMap::new();
        let mut y_counts = BTreeMap::new();
        let mut snapped = Vec::with_capacity(xs.len());
        let mut n_change = 0;
        for (&x, &y) in xs.iter().zip(ys) {
            let pair = if x.abs_diff(y) <= delta {
                let m = x.min(y);
                (m, m)
            } else {
                n_change += 1;
                (x, y)
            };
            snapped.push(pair);
            *counts.entry(pair).or_insert(0) += 1;
            *x_counts.entry(pair.0).or_insert(0) += 1;
            *y_counts.entry(pair.1).or_insert(0) += 1;
        }
        JointHistogram {
            counts,
            x_counts,
            y_counts,
            snapped,
            n_change,
            total: xs.len() as u64,
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Number of pairs left off the diagonal (value gap above `delta`).
    pub fn n_change(&self) -> u64 {
        self.n_change
    }

    pub fn count(&self, pair: (u8, u8)) -> u64 {
        self.counts.get(&pair).copied().unwrap_or(0)
    }

    /// Snapped pair for input index `idx`.
    pub fn pair_at(&self, idx: usize) -> (u8, u8) {
        self.snapped[idx]
    }

    pub fn pairs(&self) -> impl Iterator<Item = ((u8, u8), u64)> + '_ {
        self.counts.iter().map(|(&p, &c)| (p, c))
    }

    /// Pointwise information of one joint bin:
    /// log2(p(pair) / (p(x) * q(y))).
    pub fn information(&self, pair: (u8, u8)) -> f64 {
        let joint = self.count(pair);
        assert!(joint > 0, "information of an unoccupied bin");
        let cx = self.x_counts[&pair.0];
        let cy = self.y_counts[&pair.1];
        ((joint * self.total) as f64 / (cx * cy) as f64).log2()
    }

    /// Mutual information of the snapped sample, in bits.
    pub fn mutual_information(&self) -> f64 {
        let m = self.total as f64;
        self.pairs()
            .map(|(pair, count)| count as f64 / m * self.information(pair))
            .sum()
    }
}

/// Mutual information between two paired samples after diagonal
/// snapping, in bits. Order-free: position within the slices carries no
/// weight.
pub fn lmi(wa: &[u8], wb: &[u8], delta: u8) -> f64 {
    JointHistogram::new(wa, wb, delta).mutual_information()
}

/// Center-weighted mutual information over a square window pair.
///
/// Each cell contributes its joint bin's information term weighted by
/// distance from the window center: the center cell gets
/// `2 / (max(changed, 1) * exp(gap / 255))` where `changed` counts
/// off-diagonal pairs and `gap` is the center's value gap (0 when the
/// center pair was snapped); every other cell gets the reciprocal of
/// its Chebyshev distance to the center.
pub fn wlmi(wa: &[u8], wb: &[u8], side: usize, delta: u8) -> f64 {
    assert!(side % 2 == 1, "window side must be odd");
    assert_eq!(wa.len(), side * side, "window size mismatch");
    let hist = JointHistogram::new(wa, wb, delta);
    let m = hist.total() as f64;
    let half = side / 2;
    let center = half * side + half;

    let center_gap = if wa[center].abs_diff(wb[center]) <= delta {
        0.0
    } else {
        wa[center].abs_diff(wb[center]) as f64
    };
    let n_c = hist.n_change().max(1) as f64;
    let beta_center = 2.0 / (n_c * (center_gap / 255.0).exp());

    let mut sum = 0.0;
    for (idx, _) in wa.iter().enumerate() {
        let (r, c) = (idx / side, idx % side);
        let beta = if idx == center {
            beta_center
        } else {
            let cheb = r.abs_diff(half).max(c.abs_diff(half));
            1.0 / cheb as f64
        };
        let pair = hist.pair_at(idx);
        sum += beta * (hist.count(pair) as f64 / m) * hist.information(pair);
    }
    sum
}

/// Shannon entropy of a sample, in bits.
pub fn entropy(values: &[u8]) -> f64 {
    assert!(!values.is_empty());
    let mut counts = BTreeMap::new();
    for &v in values {
        *counts.entry(v).or_insert(0u64) += 1;
    }
    let n = values.len() as f64;
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// `100 * num / den`, or `None` when the denominator is effectively
/// zero.
pub fn percent_of(num: f64, den: f64) -> Option<f64> {
    if den.abs() <= 1e-12 {
        None
    } else {
        Some(100.0 * num / den)
    }
}

/// Square window of side `side` (odd) around `(row, col)`, row-major,
/// edge-replicated past the frame border.
pub fn extract_window(img: &Image, row: usize, col: usize, side: usize) -> Vec<u8> {
    assert!(side % 2 == 1, "window side must be odd");
    let h = (side / 2) as isize;
    let mut out = Vec::with_capacity(side * side);
    for dr in -h..=h {
        for dc in -h..=h {
            out.push(img.get_clamped(row as isize + dr, col as isize + dc));
        }
    }
    out
}

/// Similarity rate of the windows around one pixel, in [0, 100].
///
/// The feature value of the cross pair is expressed as a percentage of
/// the baseline window paired with itself. A structureless baseline
/// window makes that reference zero; the rate then falls back to 100
/// when every pair sits within the noise gap and 0 otherwise.
pub fn window_similarity(
    a: &Image,
    b: &Image,
    row: usize,
    col: usize,
    feature: MiFeature,
    params: &FeatureParams,
) -> f64 {
    let wa = extract_window(a, row, col, params.window);
    let wb = extract_window(b, row, col, params.window);
    let f = |x: &[u8], y: &[u8]| match feature {
        MiFeature::Plain => lmi(x, y, params.delta_thresh),
        MiFeature::Weighted => wlmi(x, y, params.window, params.delta_thresh),
    };
    let num = f(&wa, &wb);
    let den = f(&wa, &wa);
    match percent_of(num, den) {
        Some(rate) => rate.clamp(0.0, 100.0),
        None => {
            let all_near = wa
                .iter()
                .zip(&wb)
                .all(|(&x, &y)| x.abs_diff(y) <= params.delta_thresh);
            if all_near {
                100.0
            } else {
                0.0
            }
        }
    }
}

/// Detection threshold on the likelihood-ratio statistic giving a 5%
/// two-sided false alarm rate on unit-variance noise.
pub const DEFAULT_GAMMA: f64 = 1.959964 * std::f64::consts::FRAC_1_SQRT_2;

/// Likelihood-ratio test configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlrtConfig {
    /// Window side length, odd.
    pub window: usize,
    /// Per-image noise standard deviation.
    pub sigma: f64,
    /// Decision threshold: statistic >= gamma flags change.
    pub gamma: f64,
}

impl GlrtConfig {
    pub fn new(sigma: f64) -> Self {
        assert!(sigma > 0.0, "sigma must be positive");
        GlrtConfig {
            window: 3,
            sigma,
            gamma: DEFAULT_GAMMA,
        }
    }
}

/// Likelihood-ratio statistic for one window pair:
/// `sqrt(n) / (2 sigma) * |mean(b) - mean(a)|`.
pub fn glrt_statistic(wa: &[u8], wb: &[u8], sigma: f64) -> f64 {
    assert_eq!(wa.len(), wb.len());
    assert!(!wa.is_empty());
    assert!(sigma > 0.0, "sigma must be positive");
    let n = wa.len() as f64;
    let mean = |w: &[u8]| w.iter().map(|&v| v as f64).sum::<f64>() / n;
    n.sqrt() / (2.0 * sigma) * (mean(wb) - mean(wa)).abs()
}

/// Per-image noise standard deviation estimated from a difference
/// image: the difference of two images with independent noise carries
/// both noise terms, so its spread is split by sqrt(2).
pub fn estimate_noise_sigma(diff: &DiffImage) -> f64 {
    let vals = diff.values();
    let n = vals.len() as f64;
    let mean = vals.iter().map(|&d| d as f64).sum::<f64>() / n;
    let var = vals
        .iter()
        .map(|&d| {
            let e = d as f64 - mean;
            e * e
        })
        .sum::<f64>()
        / n;
    var.sqrt() / std::f64::consts::SQRT_2
}

/// Score direction of a similarity map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MapKind {
    /// Similarity percentage; change sits below the threshold.
    SimRate,
    /// Likelihood-ratio statistic; change sits at or above the
    /// threshold.
    GlrtStat,
}

impl MapKind {
    pub fn change_when_below(&self) -> bool {
        matches!(self, MapKind::SimRate)
    }

    /// Does `value` flag change at threshold `t`?
    pub fn is_change(&self, value: f64, t: f64) -> bool {
        match self {
            MapKind::SimRate => value < t,
            MapKind::GlrtStat => value >= t,
        }
    }
}

/// Per-pixel feature scores over a region of interest, tagged with the
/// frame geometry the region was cut from.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMap {
    roi: Roi,
    kind: MapKind,
    values: Vec<f64>,
    frame_width: usize,
    frame_height: usize,
}

impl SimilarityMap {
    pub fn new(
        roi: Roi,
        kind: MapKind,
        values: Vec<f64>,
        frame_width: usize,
        frame_height: usize,
    ) -> Self {
        assert_eq!(values.len(), roi.area(), "value buffer must fill the roi");
        assert!(
            roi.is_empty() || (roi.bottom < frame_height && roi.right < frame_width),
            "roi sticks out of the frame"
        );
        SimilarityMap {
            roi,
            kind,
            values,
            frame_width,
            frame_height,
        }
    }

    pub fn roi(&self) -> &Roi {
        &self.roi
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    /// Width and height of the source frame.
    pub fn frame_dims(&self) -> (usize, usize) {
        (self.frame_width, self.frame_height)
    }

    /// Score at frame coordinates; the pixel must lie inside the roi.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        assert!(self.roi.contains(row, col), "pixel outside the roi");
        self.values[(row - self.roi.top) * self.roi.width() + (col - self.roi.left)]
    }

    /// Scores in roi-local row-major order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Similarity-rate map over `roi` using a mutual-information feature.
/// Rows are scored in parallel; the result is deterministic.
pub fn sim_rate_map(
    a: &Image,
    b: &Image,
    roi: &Roi,
    feature: MiFeature,
    params: &FeatureParams,
) -> Result<SimilarityMap> {
    check_dims(a, b)?;
    let mut values = vec![0.0; roi.area()];
    let width = roi.width();
    values
        .par_chunks_mut(width.max(1))
        .enumerate()
        .for_each(|(ri, row_buf)| {
            let r = roi.top + ri;
            for (ci, out) in row_buf.iter_mut().enumerate() {
                *out = window_similarity(a, b, r, roi.left + ci, feature, params);
            }
        });
    Ok(SimilarityMap::new(
        *roi,
        MapKind::SimRate,
        values,
        a.width(),
        a.height(),
    ))
}

/// Likelihood-ratio statistic map over `roi`, parallel over rows.
pub fn glrt_map(a: &Image, b: &Image, roi: &Roi, cfg: &GlrtConfig) -> Result<SimilarityMap> {
    check_dims(a, b)?;
    if cfg.sigma <= 0.0 {
        return Err(Error::NonpositiveSigma(cfg.sigma));
    }
    let mut values = vec![0.0; roi.area()];
    let width = roi.width();
    values
        .par_chunks_mut(width.max(1))
        .enumerate()
        .for_each(|(ri, row_buf)| {
            let r = roi.top + ri;
            for (ci, out) in row_buf.iter_mut().enumerate() {
                let wa = extract_window(a, r, roi.left + ci, cfg.window);
                let wb = extract_window(b, r, roi.left + ci, cfg.window);
                *out = glrt_statistic(&wa, &wb, cfg.sigma);
            }
        });
    Ok(SimilarityMap::new(
        *roi,
        MapKind::GlrtStat,
        values,
        a.width(),
        a.height(),
    ))
}
