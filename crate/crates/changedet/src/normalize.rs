//! Mutual intensity normalization of an image pair by two-step histogram
//! matching: the first image is matched against the second's histogram,
//! then the second is matched against the result. Two registered
//! acquisitions of the same scene end up on a shared intensity scale
//! without either histogram being treated as ground truth.

use crate::error::{Error, Result};
use crate::imgcore::{check_dims, histogram, Histogram, Image};

/// Monotone intensity remapping table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntensityLut {
    map: [u8; 256],
}

impl IntensityLut {
    pub fn get(&self, value: u8) -> u8 {
        self.map[value as usize]
    }

    pub fn as_array(&self) -> &[u8; 256] {
        &self.map
    }

    pub fn apply(&self, img: &Image) -> Image {
        Image::from_fn(img.width(), img.height(), |r, c| self.get(img.get(r, c)))
    }
}

/// Remap `source` so its cumulative distribution tracks `reference`.
///
/// Each level v maps to the smallest level w whose reference CDF reaches
/// the source CDF at v, which keeps the table monotone and sends ties to
/// the smallest qualifying intensity. Comparisons use exact integer
/// cross-products, so equal histograms yield the identity on occupied bins.
pub fn match_histogram(source: &Image, reference: &Histogram) -> Result<(Image, IntensityLut)> {
    match_histogram_with(source, reference, false)
}

/// Like [`match_histogram`], optionally ignoring bin 0 on both sides.
///
/// With `exclude_zero`, level 0 pixels pass through unchanged; this keeps
/// a dominant empty background from dragging the mapping of real tissue.
pub fn match_histogram_with(
    source: &Image,
    reference: &Histogram,
    exclude_zero: bool,
) -> Result<(Image, IntensityLut)> {
    let lut = build_lut(&histogram(source), reference, exclude_zero)?;
    Ok((lut.apply(source), lut))
}

fn build_lut(src: &Histogram, reference: &Histogram, exclude_zero: bool) -> Result<IntensityLut> {
    let lo: usize = if exclude_zero { 1 } else { 0 };

    let mut cum_src = [0u64; 256];
    let mut cum_ref = [0u64; 256];
    let mut acc_s = 0u64;
    let mut acc_r = 0u64;
    for v in lo..256 {
        acc_s += src.bin(v as u8);
        acc_r += reference.bin(v as u8);
        cum_src[v] = acc_s;
        cum_ref[v] = acc_r;
    }
    let (total_src, total_ref) = (acc_s as u128, acc_r as u128);
    if total_ref == 0 {
        return Err(Error::EmptyReferenceHistogram);
    }

    let mut map = [0u8; 256];
    let mut w = lo;
    for v in lo..256 {
        // smallest w with CDF_ref(w) >= CDF_src(v); w is monotone in v
        while w < 255 && (cum_ref[w] as u128) * total_src < (cum_src[v] as u128) * total_ref {
            w += 1;
        }
        map[v] = w as u8;
    }
    // map[0] stays 0 when bin 0 is excluded
    Ok(IntensityLut { map })
}

/// Normalize a registered pair onto a shared intensity scale.
///
/// Step one matches `i1` to the histogram of `i2`; step two matches `i2`
/// to the histogram of the step-one result. Pixel intensity ordering is
/// preserved within each image, and the cumulative distributions of the
/// outputs are at least as close as those of the inputs.
pub fn hhm_normalize(i1: &Image, i2: &Image) -> Result<(Image, Image)> {
    hhm_normalize_with(i1, i2, false)
}

/// [`hhm_normalize`] with optional exclusion of intensity 0 (see
/// [`match_histogram_with`]).
pub fn hhm_normalize_with(i1: &Image, i2: &Image, exclude_zero: bool) -> Result<(Image, Image)> {
    check_dims(i1, i2)?;
    let (i1n, _) = match_histogram_with(i1, &histogram(i2), exclude_zero)?;
    let (i2n, _) = match_histogram_with(i2, &histogram(&i1n), exclude_zero)?;
    Ok((i1n, i2n))
}

/// L1 distance between the normalized CDFs of two histograms.
/// Zero means identical intensity distributions.
pub fn cdf_distance(a: &Histogram, b: &Histogram) -> f64 {
    let (ta, tb) = (a.total() as f64, b.total() as f64);
    if ta == 0.0 || tb == 0.0 {
        return f64::NAN;
    }
    let mut acc_a = 0u64;
    let mut acc_b = 0u64;
    let mut dist = 0.0;
    for v in 0..256 {
        acc_a += a.bin(v as u8);
        acc_b += b.bin(v as u8);
        dist += (acc_a as f64 / ta - acc_b as f64 / tb).abs();
    }
    dist
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::histogram;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn img_of(values: &[u8]) -> Image {
        Image::from_vec(values.len(), 1, values.to_vec())
    }

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |_, _| rng.random())
    }

    /// Plain quantile-matching oracle: for each level, walk the reference
    /// CDF from the bottom until it reaches the source CDF.
    fn brute_force_match(source: &Image, reference: &Histogram) -> Image {
        let hs = histogram(source);
        let ts = hs.total() as f64;
        let tr = reference.total() as f64;
        let cdf = |h: &Histogram, t: f64, v: u8| -> f64 {
            (0..=v as usize).map(|u| h.bin(u as u8)).sum::<u64>() as f64 / t
        };
        Image::from_fn(source.width(), source.height(), |r, c| {
            let target = cdf(&hs, ts, source.get(r, c));
            (0..=255u8)
                .find(|&w| cdf(reference, tr, w) >= target - 1e-12)
                .unwrap_or(255)
        })
    }

    #[test]
    fn four_level_example_matches_reference_exactly() {
        let source = img_of(&[0, 85, 170, 255]);
        let reference = histogram(&img_of(&[0, 0, 128, 255]));
        let (matched, lut) = match_histogram(&source, &reference).unwrap();
        assert_eq!(matched.pixels(), &[0, 0, 128, 255]);
        assert_eq!(lut.get(85), 0);
        assert_eq!(lut.get(170), 128);
    }

    #[test]
    fn matching_to_own_histogram_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let img = random_image(&mut rng, 16, 16);
            let (matched, _) = match_histogram(&img, &histogram(&img)).unwrap();
            assert_eq!(matched, img);
        }
    }

    #[test]
    fn empty_reference_histogram_is_rejected() {
        let img = img_of(&[1, 2, 3]);
        assert!(matches!(
            match_histogram(&img, &Histogram::zero()),
            Err(Error::EmptyReferenceHistogram)
        ));
    }

    #[test]
    fn matches_brute_force_oracle_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..25 {
            let src = random_image(&mut rng, 12, 9);
            let reference = histogram(&random_image(&mut rng, 12, 9));
            let (fast, _) = match_histogram(&src, &reference).unwrap();
            let slow = brute_force_match(&src, &reference);
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn degenerate_constant_pair_collapses_to_one_level() {
        let i1 = Image::from_vec(4, 4, vec![50; 16]);
        let i2 = Image::from_vec(4, 4, vec![200; 16]);
        let (n1, n2) = hhm_normalize(&i1, &i2).unwrap();
        assert!(n1.pixels().iter().all(|&v| v == 200));
        assert!(n2.pixels().iter().all(|&v| v == 200));
    }

    #[test]
    fn uniform_shift_is_fully_removed_on_a_ramp() {
        // 8x8 ramp and the same ramp shifted by +40: after mutual matching
        // the mean gap closes to zero (identical histogram shapes).
        let ramp = Image::from_fn(8, 8, |r, c| (r * 8 + c) as u8);
        let shifted = Image::from_fn(8, 8, |r, c| (r * 8 + c) as u8 + 40);
        let (n1, n2) = hhm_normalize(&ramp, &shifted).unwrap();
        let mean = |im: &Image| im.pixels().iter().map(|&v| v as f64).sum::<f64>() / 64.0;
        let gap = (mean(&n1) - mean(&n2)).abs();
        assert!(gap < 2.0, "mean gap {gap} after normalization");
        assert_eq!(gap, 0.0, "ramp shift should cancel exactly");
    }

    #[test]
    fn normalization_never_increases_cdf_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let a = random_image(&mut rng, 24, 24);
            let b = random_image(&mut rng, 24, 24);
            let before = cdf_distance(&histogram(&a), &histogram(&b));
            let (na, nb) = hhm_normalize(&a, &b).unwrap();
            let after = cdf_distance(&histogram(&na), &histogram(&nb));
            assert!(
                after <= before + 1e-9,
                "cdf distance grew: {before} -> {after}"
            );
        }
    }

    #[test]
    fn second_application_barely_moves_the_pixels() {
        // Once a pair is normalized its quantiles agree, so a second pass
        // can only jitter pixels by bin-rounding, far below the first
        // pass's correction of a real mismatch.
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let mean_shift = |x: &Image, y: &Image| {
            x.pixels()
                .iter()
                .zip(y.pixels())
                .map(|(p, q)| p.abs_diff(*q) as f64)
                .sum::<f64>()
                / x.pixels().len() as f64
        };
        for _ in 0..20 {
            let a = random_image(&mut rng, 24, 24);
            let b = Image::from_fn(24, 24, |r, c| a.get(r, c) / 2 + rng.random_range(0..20));
            let (n1, n2) = hhm_normalize(&a, &b).unwrap();
            let (m1, m2) = hhm_normalize(&n1, &n2).unwrap();
            let first = mean_shift(&a, &n1);
            let second = mean_shift(&n1, &m1);
            assert!(first > 20.0, "fixture should need real correction: {first}");
            assert!(second < 2.0, "second pass moved pixels by {second}");
            assert!(second < first / 10.0);
            assert!(mean_shift(&n2, &m2) < 2.0);
        }
    }

    #[test]
    fn zero_bin_exclusion_leaves_zero_pixels_alone() {
        let src = img_of(&[0, 0, 0, 10, 20, 30]);
        let reference = histogram(&img_of(&[0, 100, 150, 250]));
        let (matched, lut) = match_histogram_with(&src, &reference, true).unwrap();
        assert_eq!(lut.get(0), 0);
        assert_eq!(&matched.pixels()[..3], &[0, 0, 0]);
        // the three nonzero levels spread over the nonzero reference levels
        assert_eq!(&matched.pixels()[3..], &[100, 150, 250]);
    }

    proptest! {
        #[test]
        fn lut_is_monotone(src in proptest::collection::vec(any::<u8>(), 1..300),
                           reference in proptest::collection::vec(any::<u8>(), 1..300)) {
            let src_img = Image::from_vec(src.len(), 1, src);
            let ref_hist = histogram(&Image::from_vec(reference.len(), 1, reference));
            let (_, lut) = match_histogram(&src_img, &ref_hist).unwrap();
            for v in 0..255u8 {
                prop_assert!(lut.get(v) <= lut.get(v + 1));
            }
        }

        #[test]
        fn pixel_ordering_is_preserved(pairs in proptest::collection::vec(any::<(u8, u8)>(), 2..200)) {
            let (a, b): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let i1 = Image::from_vec(a.len(), 1, a);
            let i2 = Image::from_vec(b.len(), 1, b);
            let (n1, _) = hhm_normalize(&i1, &i2).unwrap();
            for p in 0..i1.width() {
                for q in 0..i1.width() {
                    if i1.get(0, p) <= i1.get(0, q) {
                        prop_assert!(n1.get(0, p) <= n1.get(0, q));
                    }
                }
            }
        }
    }
}
