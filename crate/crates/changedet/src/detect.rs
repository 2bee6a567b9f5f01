//! Seed selection and region growing. Seeds are the most suspicious
//! pixel per row of a band around the tumor edge; growing pulls the
//! lowest-similarity pixel first and spreads through 8-neighbors while
//! they stay under the growth threshold, so isolated noisy pixels away
//! from any seed never enter the mask.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::eroc::{extract_roi_scaled, Roi};
use crate::features::{
    estimate_noise_sigma, glrt_map, sim_rate_map, FeatureMethod, FeatureParams, GlrtConfig,
    MapKind, MiFeature, SimilarityMap, DEFAULT_GAMMA,
};
use crate::imgcore::{check_dims, difference, ChangeMask, DiffImage, Image};
use crate::normalize::hhm_normalize_with;

/// Seed and growth parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectConfig {
    /// Similarity percentage below which a pixel may join the mask,
    /// in (0, 100].
    pub grow_threshold: f64,
    /// Seed search band: tumor edge dilated by this many pixels.
    pub tumor_dilation_radius: usize,
    /// Neighborhood connectivity; only 8 is supported.
    pub connectivity: u8,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            grow_threshold: 50.0,
            tumor_dilation_radius: 10,
            connectivity: 8,
        }
    }
}

impl DetectConfig {
    fn validate(&self) {
        assert!(
            self.grow_threshold > 0.0 && self.grow_threshold <= 100.0,
            "grow threshold must lie in (0, 100]"
        );
        assert_eq!(self.connectivity, 8, "only 8-connectivity is supported");
    }
}

/// One selected seed pixel with its similarity rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Seed {
    pub row: usize,
    pub col: usize,
    pub rate: f64,
}

/// Seeds ordered by row; every seed lies inside the map's region and
/// rates below the growth threshold.
pub type SeedSet = Vec<Seed>;

/// Pick at most one seed per region row: the minimum-rate pixel of the
/// row's slice of the search band (tumor edge dilated by the config
/// radius), ties to the lowest column. Seeds at or above the growth
/// threshold are discarded. `diff` pins the frame geometry the map and
/// mask must share.
pub fn select_seeds(
    simmap: &SimilarityMap,
    diff: &DiffImage,
    tumor_mask: &ChangeMask,
    cfg: &DetectConfig,
) -> Result<SeedSet> {
    cfg.validate();
    if tumor_mask.count() == 0 {
        return Err(Error::EmptyTumorMask);
    }
    let (fw, fh) = simmap.frame_dims();
    for (w, h) in [
        (diff.width(), diff.height()),
        (tumor_mask.width(), tumor_mask.height()),
    ] {
        if (w, h) != (fw, fh) {
            return Err(Error::DimensionMismatch {
                a_width: fw,
                a_height: fh,
                b_width: w,
                b_height: h,
            });
        }
    }

    let mut band = ChangeMask::new(fw, fh);
    for (r, c) in tumor_mask.edge_pixels() {
        band.set(r, c, true);
    }
    let band = band.dilate(cfg.tumor_dilation_radius);
    let roi = simmap.roi();
    let mut seeds = Vec::new();
    for r in roi.row_range() {
        let mut best: Option<Seed> = None;
        for c in roi.col_range() {
            if !band.get(r, c) {
                continue;
            }
            let rate = simmap.get(r, c);
            if best.map_or(true, |b| rate < b.rate) {
                best = Some(Seed { row: r, col: c, rate });
            }
        }
        if let Some(seed) = best {
            if seed.rate < cfg.grow_threshold {
                seeds.push(seed);
            }
        }
    }
    Ok(seeds)
}

/// Worklist entry ordered by (rate, column, insertion order).
struct Candidate {
    rate: f64,
    row: usize,
    col: usize,
    seq: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap and the worklist pops the
        // smallest (rate, col, seq) triple first
        let key = |c: &Candidate| (c.rate, c.col, c.seq);
        key(other)
            .partial_cmp(&key(self))
            .expect("similarity rates are finite")
    }
}

/// Grow a change mask from the seeds over the similarity map.
///
/// The worklist pops the lowest-rate pixel, flags it, and enqueues each
/// unvisited 8-neighbor inside the region whose rate is under the
/// threshold. The final mask equals the seed-connected components of
/// the thresholded map; the pop order only shapes the traversal.
pub fn region_grow(simmap: &SimilarityMap, seeds: &SeedSet, cfg: &DetectConfig) -> ChangeMask {
    cfg.validate();
    let (fw, fh) = simmap.frame_dims();
    let mut mask = ChangeMask::new(fw, fh);
    let roi = simmap.roi();
    if roi.is_empty() {
        return mask;
    }

    let mut queued = vec![false; roi.area()];
    let local = |r: usize, c: usize| (r - roi.top) * roi.width() + (c - roi.left);
    let mut heap = BinaryHeap::new();
    let mut seq = 0;
    let push = |heap: &mut BinaryHeap<Candidate>,
                    queued: &mut Vec<bool>,
                    seq: &mut usize,
                    r: usize,
                    c: usize,
                    rate: f64| {
        if !queued[local(r, c)] && rate < cfg.grow_threshold {
            queued[local(r, c)] = true;
            heap.push(Candidate {
                rate,
                row: r,
                col: c,
                seq: *seq,
            });
            *seq += 1;
        }
    };

    for seed in seeds {
        assert!(
            roi.contains(seed.row, seed.col),
            "seed outside the map region"
        );
        push(&mut heap, &mut queued, &mut seq, seed.row, seed.col, seed.rate);
    }

    while let Some(cand) = heap.pop() {
        mask.set(cand.row, cand.col, true);
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let nr = cand.row as i64 + dr;
                let nc = cand.col as i64 + dc;
                if nr < 0 || nc < 0 {
                    continue;
                }
                let (nr, nc) = (nr as usize, nc as usize);
                if roi.contains(nr, nc) {
                    push(&mut heap, &mut queued, &mut seq, nr, nc, simmap.get(nr, nc));
                }
            }
        }
    }
    mask
}

/// Full detection options; [`Default`] gives the standard pipeline
/// (mutual normalization, region extraction, center-weighted feature,
/// seeded growing).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectOptions {
    pub feature: FeatureMethod,
    pub params: FeatureParams,
    pub detect: DetectConfig,
    /// Mutually normalize the pair before differencing.
    pub normalize: bool,
    /// Ignore intensity 0 (background) during normalization.
    pub exclude_zero: bool,
    /// Restrict scoring to the extracted region instead of the whole
    /// frame.
    pub use_roi: bool,
    /// Scale on the region extraction significance threshold.
    pub roi_threshold_scale: f64,
    /// Noise level for the likelihood-ratio feature; estimated from the
    /// difference image when absent.
    pub glrt_sigma: Option<f64>,
    /// Decision threshold for the likelihood-ratio feature.
    pub glrt_gamma: f64,
}

impl Default for DetectOptions {
    fn default() -> Self {
        DetectOptions {
            feature: FeatureMethod::Wlmi,
            params: FeatureParams::default(),
            detect: DetectConfig::default(),
            normalize: true,
            exclude_zero: false,
            use_roi: true,
            roi_threshold_scale: 1.0,
            glrt_sigma: None,
            glrt_gamma: DEFAULT_GAMMA,
        }
    }
}

/// Wall time spent in each stage of a detection run.
#[derive(Debug, Clone, Copy, Default)]
pub struct StageTimings {
    pub normalize: Duration,
    pub roi: Duration,
    pub feature: Duration,
    pub decide: Duration,
}

/// Everything a detection run produces.
#[derive(Debug, Clone)]
pub struct Detection {
    pub mask: ChangeMask,
    pub roi: Roi,
    pub map: SimilarityMap,
    pub seeds: SeedSet,
    pub timings: StageTimings,
}

/// Run the full detection chain on a registered pair and return all
/// intermediate products.
pub fn run_detection(
    a: &Image,
    b: &Image,
    tumor_mask: &ChangeMask,
    opts: &DetectOptions,
) -> Result<Detection> {
    check_dims(a, b)?;
    opts.detect.validate();
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let (na, nb) = if opts.normalize {
        hhm_normalize_with(a, b, opts.exclude_zero)?
    } else {
        (a.clone(), b.clone())
    };
    timings.normalize = t.elapsed();

    let t = Instant::now();
    let roi = if opts.use_roi {
        extract_roi_scaled(&na, &nb, opts.roi_threshold_scale)?
    } else {
        Roi::full(na.width(), na.height())
    };
    timings.roi = t.elapsed();

    if roi.is_empty() {
        // nothing significant anywhere: empty mask, no scoring
        let kind = match opts.feature {
            FeatureMethod::Glrt => MapKind::GlrtStat,
            _ => MapKind::SimRate,
        };
        return Ok(Detection {
            mask: ChangeMask::new(na.width(), na.height()),
            roi,
            map: SimilarityMap::new(roi, kind, Vec::new(), na.width(), na.height()),
            seeds: Vec::new(),
            timings,
        });
    }

    let diff = difference(&na, &nb)?;

    let t = Instant::now();
    let map = match opts.feature {
        FeatureMethod::Glrt => {
            let sigma = opts
                .glrt_sigma
                .unwrap_or_else(|| estimate_noise_sigma(&diff).max(1e-6));
            let cfg = GlrtConfig {
                window: opts.params.window,
                sigma,
                gamma: opts.glrt_gamma,
            };
            glrt_map(&na, &nb, &roi, &cfg)?
        }
        FeatureMethod::Lmi => sim_rate_map(&na, &nb, &roi, MiFeature::Plain, &opts.params)?,
        FeatureMethod::Wlmi => sim_rate_map(&na, &nb, &roi, MiFeature::Weighted, &opts.params)?,
    };
    timings.feature = t.elapsed();

    let t = Instant::now();
    let (mask, seeds) = match opts.feature {
        FeatureMethod::Glrt => {
            let mut mask = ChangeMask::new(na.width(), na.height());
            for r in roi.row_range() {
                for c in roi.col_range() {
                    if map.kind().is_change(map.get(r, c), opts.glrt_gamma) {
                        mask.set(r, c, true);
                    }
                }
            }
            (mask, Vec::new())
        }
        _ => {
            let seeds = select_seeds(&map, &diff, tumor_mask, &opts.detect)?;
            let mask = region_grow(&map, &seeds, &opts.detect);
            (mask, seeds)
        }
    };
    timings.decide = t.elapsed();

    Ok(Detection {
        mask,
        roi,
        map,
        seeds,
        timings,
    })
}

/// Change mask for a registered pair using default options with the
/// given seed and growth settings.
pub fn detect_changes(
    a: &Image,
    b: &Image,
    tumor_mask: &ChangeMask,
    cfg: &DetectConfig,
    feature: FeatureMethod,
) -> Result<ChangeMask> {
    let opts = DetectOptions {
        feature,
        detect: *cfg,
        ..DetectOptions::default()
    };
    Ok(run_detection(a, b, tumor_mask, &opts)?.mask)
}
