//! Pixel-level scoring of predicted change masks against ground truth:
//! confusion counts, the standard ratio measures, ROC sweeps with
//! trapezoidal area, and per-size aggregation. Where a ratio's
//! denominator is empty the measure is explicitly undefined, never a
//! silent zero; undefined measures serialize as null.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eroc::Roi;
use crate::features::SimilarityMap;
use crate::imgcore::ChangeMask;

/// Pixel tallies of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub r#fn: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.r#fn + self.tn
    }
}

/// Simulated-change size bands, by the fraction of tumor volume that
/// was requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SizeBand {
    #[serde(rename = "<10%TV")]
    Small,
    #[serde(rename = "10-30%TV")]
    Mid,
    #[serde(rename = ">30%TV")]
    Large,
    #[serde(rename = "overall")]
    Overall,
}

impl SizeBand {
    pub fn label(&self) -> &'static str {
        match self {
            SizeBand::Small => "<10%TV",
            SizeBand::Mid => "10-30%TV",
            SizeBand::Large => ">30%TV",
            SizeBand::Overall => "overall",
        }
    }
}

impl std::fmt::Display for SizeBand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Band of a requested change fraction.
pub fn band_for(fraction: f64) -> SizeBand {
    if fraction < 0.10 {
        SizeBand::Small
    } else if fraction <= 0.30 {
        SizeBand::Mid
    } else {
        SizeBand::Large
    }
}

/// The ratio measures; `None` marks an undefined (0/0) measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub ppv: Option<f64>,
    pub spc: Option<f64>,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub vor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auc: Option<f64>,
}

/// One scored run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
    pub band: SizeBand,
}

/// Tally predictions against ground truth over the evaluation region.
/// An empty region means extraction found nothing; scoring then covers
/// the whole frame so misses still count.
pub fn confusion(pred: &ChangeMask, gt: &ChangeMask, roi: &Roi) -> Result<ConfusionCounts> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(Error::DimensionMismatch {
            a_width: pred.width(),
            a_height: pred.height(),
            b_width: gt.width(),
            b_height: gt.height(),
        });
    }
    let universe = if roi.is_empty() {
        Roi::full(pred.width(), pred.height())
    } else {
        *roi
    };
    let mut c = ConfusionCounts::default();
    for r in universe.row_range() {
        for col in universe.col_range() {
            match (pred.get(r, col), gt.get(r, col)) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.r#fn += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// The six ratio measures from a confusion tally.
pub fn metrics(c: &ConfusionCounts) -> Result<Metrics> {
    let total = c.total();
    if total == 0 {
        return Err(Error::EmptyConfusion);
    }
    Ok(Metrics {
        acc: (c.tp + c.tn) as f64 / total as f64,
        ppv: ratio(c.tp, c.tp + c.fp),
        spc: ratio(c.tn, c.tn + c.fp),
        tpr: ratio(c.tp, c.tp + c.r#fn),
        fpr: ratio(c.fp, c.fp + c.tn),
        vor: ratio(c.tp, c.tp + c.fp + c.r#fn),
        auc: None,
    })
}

/// Score a run end to end: tally, measures, band.
pub fn evaluate(
    pred: &ChangeMask,
    gt: &ChangeMask,
    roi: &Roi,
    band: SizeBand,
) -> Result<EvalReport> {
    let counts = confusion(pred, gt, roi)?;
    Ok(EvalReport {
        counts,
        metrics: metrics(&counts)?,
        band,
    })
}

/// Operating points of a threshold sweep, ordered by false positive
/// rate; endpoints (0,0) and (1,1) always included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
}

impl RocCurve {
    fn from_raw(mut points: Vec<(f64, f64)>) -> Self {
        points.push((0.0, 0.0));
        points.push((1.0, 1.0));
        points.sort_by(|a, b| a.partial_cmp(b).expect("rates are finite"));
        points.dedup();
        RocCurve { points }
    }

    /// Trapezoidal area under the curve.
    pub fn auc(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
            .sum()
    }
}

/// Operating point of one fixed threshold over a similarity map.
fn tally_at(map: &SimilarityMap, gt: &ChangeMask, t: f64) -> (u64, u64) {
    let mut tp = 0;
    let mut fp = 0;
    let roi = map.roi();
    for r in roi.row_range() {
        for c in roi.col_range() {
            if map.kind().is_change(map.get(r, c), t) {
                if gt.get(r, c) {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
    }
    (tp, fp)
}

fn class_counts(map: &SimilarityMap, gt: &ChangeMask) -> Result<(u64, u64)> {
    let roi = map.roi();
    let mut pos = 0u64;
    let mut neg = 0u64;
    for r in roi.row_range() {
        for c in roi.col_range() {
            if gt.get(r, c) {
                pos += 1;
            } else {
                neg += 1;
            }
        }
    }
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClassGroundTruth);
    }
    Ok((pos, neg))
}

/// Sweep the decision threshold over a similarity map. The map's kind
/// sets the decision direction; ground truth must show both classes
/// inside the map's region.
pub fn roc_curve(map: &SimilarityMap, gt: &ChangeMask, thresholds: &[f64]) -> Result<RocCurve> {
    let (pos, neg) = class_counts(map, gt)?;
    let points = thresholds
        .iter()
        .map(|&t| {
            let (tp, fp) = tally_at(map, gt, t);
            (fp as f64 / neg as f64, tp as f64 / pos as f64)
        })
        .collect();
    Ok(RocCurve::from_raw(points))
}

/// Exact ROC from labeled scores: every achievable operating point,
/// one per distinct score. `change_when_below` gives the decision
/// direction (true for similarity rates, false for statistics).
pub fn roc_from_scores(scores: &[(f64, bool)], change_when_below: bool) -> Result<RocCurve> {
    let pos = scores.iter().filter(|s| s.1).count() as u64;
    let neg = scores.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClassGroundTruth);
    }
    let mut sorted: Vec<(f64, bool)> = scores.to_vec();
    // most change-like first, so each prefix is one threshold's
    // positive set
    if change_when_below {
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("scores are finite"));
    } else {
        sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("scores are finite"));
    }
    let mut points = Vec::new();
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == score {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(RocCurve::from_raw(points))
}

/// Mean measures of one band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandSummary {
    pub band: SizeBand,
    pub runs: usize,
    pub mean: Metrics,
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

fn summarize(band: SizeBand, reports: &[&EvalReport]) -> BandSummary {
    let n = reports.len();
    BandSummary {
        band,
        runs: n,
        mean: Metrics {
            acc: reports.iter().map(|r| r.metrics.acc).sum::<f64>() / n as f64,
            ppv: mean_opt(reports.iter().map(|r| r.metrics.ppv)),
            spc: mean_opt(reports.iter().map(|r| r.metrics.spc)),
            tpr: mean_opt(reports.iter().map(|r| r.metrics.tpr)),
            fpr: mean_opt(reports.iter().map(|r| r.metrics.fpr)),
            vor: mean_opt(reports.iter().map(|r| r.metrics.vor)),
            auc: mean_opt(reports.iter().map(|r| r.metrics.auc)),
        },
    }
}

/// Mean of each measure per band, plus an overall row; bands with no
/// runs are absent. Undefined measures are averaged over the runs
/// where they are defined.
pub fn aggregate(reports: &[EvalReport]) -> Vec<BandSummary> {
    let mut out = Vec::new();
    for band in [SizeBand::Small, SizeBand::Mid, SizeBand::Large] {
        let members: Vec<&EvalReport> = reports.iter().filter(|r| r.band == band).collect();
        if !members.is_empty() {
            out.push(summarize(band, &members));
        }
    }
    if !reports.is_empty() {
        let all: Vec<&EvalReport> = reports.iter().collect();
        out.push(summarize(SizeBand::Overall, &all));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::MapKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionCounts {
        ConfusionCounts {
            tp,
            fp,
            r#fn: fn_,
            tn,
        }
    }

    #[test]
    fn confusion_matches_a_per_pixel_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        for _ in 0..100 {
            let pred = ChangeMask::from_fn(8, 8, |_, _| rng.random::<bool>());
            let gt = ChangeMask::from_fn(8, 8, |_, _| rng.random::<bool>());
            let roi = Roi::new(
                rng.random_range(0..4),
                rng.random_range(4..8),
                rng.random_range(0..4),
                rng.random_range(4..8),
            );
            let got = confusion(&pred, &gt, &roi).unwrap();
            let mut want = ConfusionCounts::default();
            for r in 0..8 {
                for c in 0..8 {
                    if !roi.contains(r, c) {
                        continue;
                    }
                    match (pred.get(r, c), gt.get(r, c)) {
                        (true, true) => want.tp += 1,
                        (true, false) => want.fp += 1,
                        (false, true) => want.r#fn += 1,
                        (false, false) => want.tn += 1,
                    }
                }
            }
            assert_eq!(got, want);
            assert_eq!(got.total(), roi.area() as u64);
        }
    }

    #[test]
    fn exact_prediction_has_no_errors() {
        let gt = ChangeMask::from_fn(10, 10, |r, c| r > 4 && c > 4);
        let c = confusion(&gt, &gt, &Roi::full(10, 10)).unwrap();
        assert_eq!(c.fp, 0);
        assert_eq!(c.r#fn, 0);
        assert_eq!(c.tp, gt.count() as u64);
    }

    #[test]
    fn empty_everything_is_all_true_negatives() {
        let empty = ChangeMask::new(6, 7);
        let c = confusion(&empty, &empty, &Roi::full(6, 7)).unwrap();
        assert_eq!(c, counts(0, 0, 0, 42));
    }

    #[test]
    fn empty_region_falls_back_to_the_frame() {
        let empty = ChangeMask::new(5, 5);
        let c = confusion(&empty, &empty, &Roi::empty()).unwrap();
        assert_eq!(c.tn, 25);
        let m = metrics(&c).unwrap();
        assert_eq!(m.acc, 1.0);
        assert_eq!(m.ppv, None);
    }

    #[test]
    fn measures_match_the_hand_tuple() {
        let m = metrics(&counts(3, 1, 1, 5)).unwrap();
        assert_eq!(m.acc, 0.8);
        assert_eq!(m.ppv, Some(0.75));
        assert_eq!(m.tpr, Some(0.75));
        assert!((m.spc.unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert!((m.fpr.unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(m.vor, Some(0.6));
    }

    #[test]
    fn perfect_prediction_scores_cleanly() {
        let m = metrics(&counts(10, 0, 0, 30)).unwrap();
        assert_eq!(m.acc, 1.0);
        assert_eq!(m.vor, Some(1.0));
        assert_eq!(m.fpr, Some(0.0));
        assert_eq!(m.spc, Some(1.0));
    }

    #[test]
    fn all_changed_on_half_changed_truth() {
        let m = metrics(&counts(50, 50, 0, 0)).unwrap();
        assert_eq!(m.spc, Some(0.0));
        assert_eq!(m.tpr, Some(1.0));
        assert_eq!(m.fpr, Some(1.0));
    }

    #[test]
    fn zero_denominators_are_undefined_not_zero() {
        // nothing predicted positive, nothing truly positive
        let m = metrics(&counts(0, 0, 0, 9)).unwrap();
        assert_eq!(m.ppv, None);
        assert_eq!(m.tpr, None);
        assert_eq!(m.vor, None);
        assert_eq!(m.spc, Some(1.0));
        // everything positive: no negatives to rate
        let m = metrics(&counts(9, 0, 0, 0)).unwrap();
        assert_eq!(m.spc, None);
        assert_eq!(m.fpr, None);
        // empty tally is an error, not a report of zeros
        assert!(matches!(
            metrics(&counts(0, 0, 0, 0)),
            Err(Error::EmptyConfusion)
        ));
    }

    #[test]
    fn undefined_measures_serialize_as_null_and_auc_vanishes() {
        let m = metrics(&counts(0, 0, 0, 9)).unwrap();
        let json = serde_json::to_value(m).unwrap();
        assert!(json["ppv"].is_null());
        assert_eq!(json["acc"], 1.0);
        assert!(json.get("auc").is_none(), "unset auc must not appear");
    }

    #[test]
    fn identities_hold_over_random_tallies() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for _ in 0..10_000 {
            let c = counts(
                rng.random_range(0..50),
                rng.random_range(0..50),
                rng.random_range(0..50),
                rng.random_range(0..50),
            );
            if c.total() == 0 {
                continue;
            }
            let m = metrics(&c).unwrap();
            assert!((0.0..=1.0).contains(&m.acc));
            if let (Some(fpr), Some(spc)) = (m.fpr, m.spc) {
                assert!((fpr - (1.0 - spc)).abs() < 1e-15);
            }
            if let (Some(vor), Some(ppv), Some(tpr)) = (m.vor, m.ppv, m.tpr) {
                assert!(vor <= ppv + 1e-15);
                assert!(vor <= tpr + 1e-15);
            }
        }
    }

    #[test]
    fn bands_split_at_ten_and_thirty_percent() {
        assert_eq!(band_for(0.05), SizeBand::Small);
        assert_eq!(band_for(0.0999), SizeBand::Small);
        assert_eq!(band_for(0.10), SizeBand::Mid);
        assert_eq!(band_for(0.30), SizeBand::Mid);
        assert_eq!(band_for(0.31), SizeBand::Large);
        assert_eq!(band_for(0.9), SizeBand::Large);
        assert_eq!(SizeBand::Small.label(), "<10%TV");
        assert_eq!(SizeBand::Overall.to_string(), "overall");
    }

    fn rate_map(values: Vec<f64>, side: usize) -> SimilarityMap {
        SimilarityMap::new(
            Roi::full(side, side),
            MapKind::SimRate,
            values,
            side,
            side,
        )
    }

    #[test]
    fn separable_map_has_perfect_area() {
        // low rates exactly on the truth
        let gt = ChangeMask::from_fn(4, 4, |r, _| r < 2);
        let values: Vec<f64> = (0..16).map(|i| if i < 8 { 10.0 } else { 90.0 }).collect();
        let map = rate_map(values, 4);
        let curve = roc_curve(&map, &gt, &[0.0, 20.0, 50.0, 95.0, 101.0]).unwrap();
        assert!(curve.points.contains(&(0.0, 1.0)));
        assert!((curve.auc() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_map_is_chance_level() {
        let gt = ChangeMask::from_fn(4, 4, |r, _| r == 0);
        let map = rate_map(vec![55.0; 16], 4);
        let curve = roc_curve(&map, &gt, &[10.0, 30.0, 55.0, 70.0]).unwrap();
        assert!((curve.auc() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sweep_matches_an_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        for _ in 0..50 {
            let values: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..100.0)).collect();
            let gt = ChangeMask::from_fn(4, 4, |r, c| (r * 4 + c) % 3 == 0);
            let map = rate_map(values.clone(), 4);
            // exhaustive threshold set: every distinct value plus one
            // beyond each end
            let mut ts: Vec<f64> = values.clone();
            ts.push(-1.0);
            ts.push(101.0);
            ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let swept = roc_curve(&map, &gt, &ts).unwrap();
            let scores: Vec<(f64, bool)> = values
                .iter()
                .enumerate()
                .map(|(i, &v)| (v, (i % 3) == 0))
                .collect();
            let exact = roc_from_scores(&scores, true).unwrap();
            assert!(
                (swept.auc() - exact.auc()).abs() < 1e-12,
                "sweep {} vs exact {}",
                swept.auc(),
                exact.auc()
            );
        }
    }

    #[test]
    fn duplicate_thresholds_change_nothing() {
        let gt = ChangeMask::from_fn(4, 4, |r, _| r < 1);
        let values: Vec<f64> = (0..16).map(|i| i as f64 * 6.0).collect();
        let map = rate_map(values, 4);
        let a = roc_curve(&map, &gt, &[20.0, 50.0, 80.0]).unwrap();
        let b = roc_curve(&map, &gt, &[20.0, 20.0, 50.0, 50.0, 50.0, 80.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn curve_is_monotone_after_sorting() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        for _ in 0..50 {
            let scores: Vec<(f64, bool)> = (0..40)
                .map(|_| (rng.random_range(0.0..100.0), rng.random::<bool>()))
                .collect();
            if scores.iter().all(|s| s.1) || scores.iter().all(|s| !s.1) {
                continue;
            }
            let curve = roc_from_scores(&scores, true).unwrap();
            for w in curve.points.windows(2) {
                assert!(w[1].0 >= w[0].0);
                assert!(w[1].1 >= w[0].1, "tpr fell along the sweep: {curve:?}");
            }
        }
    }

    #[test]
    fn statistic_maps_flag_above_threshold() {
        let gt = ChangeMask::from_fn(2, 2, |r, c| r == 0 && c == 0);
        let map = SimilarityMap::new(
            Roi::full(2, 2),
            MapKind::GlrtStat,
            vec![5.0, 0.1, 0.2, 0.3],
            2,
            2,
        );
        let curve = roc_curve(&map, &gt, &[1.0]).unwrap();
        // statistic 5.0 >= 1.0 flags only the true positive
        assert!(curve.points.contains(&(0.0, 1.0)));
        assert!((curve.auc() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_class_truth_is_rejected() {
        let gt = ChangeMask::new(4, 4);
        let map = rate_map(vec![50.0; 16], 4);
        assert!(matches!(
            roc_curve(&map, &gt, &[50.0]),
            Err(Error::SingleClassGroundTruth)
        ));
        let scores = vec![(10.0, false), (20.0, false)];
        assert!(matches!(
            roc_from_scores(&scores, true),
            Err(Error::SingleClassGroundTruth)
        ));
    }

    #[test]
    fn hand_curve_integrates_to_the_hand_area() {
        let curve = RocCurve {
            points: vec![(0.0, 0.0), (0.1, 0.6), (0.3, 0.8), (0.6, 0.9), (1.0, 1.0)],
        };
        assert!((curve.auc() - 0.805).abs() < 1e-12);
    }

    fn report(band: SizeBand, acc: f64, vor: Option<f64>) -> EvalReport {
        EvalReport {
            counts: counts(1, 1, 1, 1),
            metrics: Metrics {
                acc,
                ppv: Some(0.5),
                spc: Some(0.5),
                tpr: Some(0.5),
                fpr: Some(0.5),
                vor,
                auc: None,
            },
            band,
        }
    }

    #[test]
    fn aggregation_averages_per_band_and_overall() {
        let reports = vec![
            report(SizeBand::Small, 0.8, Some(0.6)),
            report(SizeBand::Small, 0.6, None),
            report(SizeBand::Large, 1.0, Some(1.0)),
        ];
        let table = aggregate(&reports);
        assert_eq!(table.len(), 3, "small, large, overall");
        let small = &table[0];
        assert_eq!(small.band, SizeBand::Small);
        assert_eq!(small.runs, 2);
        assert!((small.mean.acc - 0.7).abs() < 1e-15);
        // vor averaged over the single defined run
        assert_eq!(small.mean.vor, Some(0.6));
        assert!(table.iter().all(|s| s.band != SizeBand::Mid));
        let overall = table.last().unwrap();
        assert_eq!(overall.band, SizeBand::Overall);
        assert_eq!(overall.runs, 3);
        assert!((overall.mean.acc - 0.8).abs() < 1e-15);
    }

    #[test]
    fn aggregating_one_report_reproduces_it() {
        let r = report(SizeBand::Mid, 0.9, Some(0.7));
        let table = aggregate(&[r]);
        assert_eq!(table.len(), 2);
        assert_eq!(table[0].mean.acc, 0.9);
        assert_eq!(table[0].mean.vor, Some(0.7));
        assert_eq!(table[1].band, SizeBand::Overall);
        assert_eq!(table[1].mean.acc, 0.9);
    }

    #[test]
    fn aggregating_nothing_yields_nothing() {
        assert!(aggregate(&[]).is_empty());
    }
}
