//! Ground-truthed follow-up synthesis. A tumor is shrunk or grown by a
//! fraction of its pixel count: shrink rewrites an inward band of tumor
//! pixels with healthy tissue mirrored across the nearest edge point,
//! growth rewrites a healthy ring with mirrored tumor tissue. The
//! rewritten set is the exact ground truth. A smooth random deformation
//! can be layered on top to mimic residual misregistration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{ChangeMask, Image};

/// Physical pixel pitch of the imaging setup.
pub const PIXEL_SIZE_MM: f64 = 0.35;

/// Default deformation strength: variance of three pixels.
pub const DEFAULT_DEFORM_SIGMA: f64 = 1.7320508075688772;

/// Control grid spacing of the deformation field, in pixels. Coarse
/// enough that the warp stays smooth across a 3x3 analysis window.
const GRID_SPACING: usize = 16;

/// Tumor protection margin for deformation, in pixels.
const PROTECT_RADIUS: usize = 10;

/// Which way the simulated tumor evolves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Shrink,
    Grow,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shrink" => Ok(Direction::Shrink),
            "grow" => Ok(Direction::Grow),
            other => Err(Error::InvalidConfig(format!(
                "unknown direction `{other}` (expected shrink or grow)"
            ))),
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::Shrink => "shrink",
            Direction::Grow => "grow",
        })
    }
}

/// Follow-up synthesis parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSpec {
    pub direction: Direction,
    /// Fraction of the tumor pixel count to rewrite, in [0, 0.9].
    pub fraction: f64,
    /// Std of the random control-point displacements, in pixels;
    /// 0 disables the deformation.
    pub deform_sigma: f64,
    pub rng_seed: u64,
}

impl SimSpec {
    pub fn new(direction: Direction, fraction: f64) -> Self {
        SimSpec {
            direction,
            fraction,
            deform_sigma: DEFAULT_DEFORM_SIGMA,
            rng_seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=0.9).contains(&self.fraction) {
            return Err(Error::InvalidConfig(format!(
                "fraction {} outside [0, 0.9]",
                self.fraction
            )));
        }
        if self.deform_sigma < 0.0 || !self.deform_sigma.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "deform sigma {} must be a finite nonnegative number",
                self.deform_sigma
            )));
        }
        Ok(())
    }
}

/// One rewritten pixel with the geometry that produced its value:
/// `mirror` is `target` reflected across `edge`, clamped in frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MirrorRecord {
    pub target: (usize, usize),
    pub edge: (usize, usize),
    pub mirror: (usize, usize),
}

/// A synthesized follow-up with its exact ground truth.
#[derive(Debug, Clone)]
pub struct SimResult {
    pub image: Image,
    /// Exactly the rewritten pixels.
    pub ground_truth: ChangeMask,
    /// Maximum diameter of the change, in millimeters.
    pub md_mm: f64,
    /// Reflection geometry of every rewrite.
    pub mirrors: Vec<MirrorRecord>,
}

fn centroid(mask: &ChangeMask) -> (f64, f64) {
    let mut sr = 0.0;
    let mut sc = 0.0;
    let mut n = 0.0;
    for (r, c) in mask.iter_set() {
        sr += r as f64;
        sc += c as f64;
        n += 1.0;
    }
    (sr / n, sc / n)
}

/// Order a partially-consumed layer: angle around the tumor centroid,
/// then distance from it, then row-major position.
fn layer_order(layer: &mut [(usize, usize)], center: (f64, f64)) {
    layer.sort_by(|&(ar, ac), &(br, bc)| {
        let key = |r: usize, c: usize| {
            let dy = r as f64 - center.0;
            let dx = c as f64 - center.1;
            (dy.atan2(dx), dx * dx + dy * dy)
        };
        let (aa, ad) = key(ar, ac);
        let (ba, bd) = key(br, bc);
        aa.partial_cmp(&ba)
            .unwrap()
            .then(ad.partial_cmp(&bd).unwrap())
            .then(ar.cmp(&br))
            .then(ac.cmp(&bc))
    });
}

fn nearest_edge(p: (usize, usize), edges: &[(usize, usize)]) -> (usize, usize) {
    *edges
        .iter()
        .min_by_key(|&&(er, ec)| {
            let dr = er as i64 - p.0 as i64;
            let dc = ec as i64 - p.1 as i64;
            (dr * dr + dc * dc, er, ec)
        })
        .expect("tumor edge cannot be empty")
}

fn mirror_point(p: (usize, usize), e: (usize, usize), width: usize, height: usize) -> (usize, usize) {
    let mr = 2 * e.0 as i64 - p.0 as i64;
    let mc = 2 * e.1 as i64 - p.1 as i64;
    (
        mr.clamp(0, height as i64 - 1) as usize,
        mc.clamp(0, width as i64 - 1) as usize,
    )
}

/// 3x3 binomial smoothing of one pixel's neighborhood,
/// edge-replicated.
fn smoothed_at(img: &Image, row: usize, col: usize) -> u8 {
    const K: [[u32; 3]; 3] = [[1, 2, 1], [2, 4, 2], [1, 2, 1]];
    let mut sum = 0u32;
    for (dr, krow) in K.iter().enumerate() {
        for (dc, &k) in krow.iter().enumerate() {
            let v = img.get_clamped(row as isize + dr as isize - 1, col as isize + dc as isize - 1);
            sum += k * v as u32;
        }
    }
    ((sum + 8) / 16).min(255) as u8
}

fn rewrite(
    img: &Image,
    targets: &[(usize, usize)],
    edges: &[(usize, usize)],
) -> (Image, Vec<MirrorRecord>) {
    let mut out = img.clone();
    let mut mirrors = Vec::with_capacity(targets.len());
    for &p in targets {
        let e = nearest_edge(p, edges);
        let m = mirror_point(p, e, img.width(), img.height());
        out.set(p.0, p.1, smoothed_at(img, m.0, m.1));
        mirrors.push(MirrorRecord {
            target: p,
            edge: e,
            mirror: m,
        });
    }
    (out, mirrors)
}

fn budget_of(fraction: f64, tv: usize) -> usize {
    ((fraction * tv as f64).ceil() as usize).min(tv)
}

fn finish(img: &Image, selected: Vec<(usize, usize)>, edges: &[(usize, usize)]) -> SimResult {
    let (image, mirrors) = rewrite(img, &selected, edges);
    let mut gt = ChangeMask::new(img.width(), img.height());
    for &(r, c) in &selected {
        gt.set(r, c, true);
    }
    let md_mm = max_diameter(&gt);
    SimResult {
        image,
        ground_truth: gt,
        md_mm,
        mirrors,
    }
}

/// Shrink the tumor by rewriting an inward band of its pixels with
/// mirrored healthy tissue.
///
/// The band is peeled from the edge layer by layer until
/// `ceil(fraction * TV)` pixels are collected; a partially-used layer
/// is consumed in deterministic angular order. Each collected pixel P
/// takes the 3x3-smoothed intensity at its mirror point across the
/// nearest original edge pixel.
pub fn shrink_tumor(img: &Image, tumor_mask: &ChangeMask, spec: &SimSpec) -> Result<SimResult> {
    spec.validate()?;
    check_mask(img, tumor_mask)?;
    let tv = tumor_mask.count();
    if tv == 0 {
        return Err(Error::EmptyTumorMask);
    }
    let budget = budget_of(spec.fraction, tv);
    let edges = tumor_mask.edge_pixels();
    let center = centroid(tumor_mask);

    let mut remaining = tumor_mask.clone();
    let mut selected = Vec::with_capacity(budget);
    while selected.len() < budget {
        let mut layer = remaining.edge_pixels();
        debug_assert!(!layer.is_empty(), "nonempty mask has a nonempty edge");
        let need = budget - selected.len();
        if layer.len() > need {
            layer_order(&mut layer, center);
            layer.truncate(need);
        }
        for &(r, c) in &layer {
            remaining.set(r, c, false);
        }
        selected.extend(layer);
    }
    Ok(finish(img, selected, &edges))
}

/// Grow the tumor by rewriting a healthy ring around its edge with
/// mirrored tumor tissue; the symmetric counterpart of
/// [`shrink_tumor`].
pub fn grow_tumor(img: &Image, tumor_mask: &ChangeMask, spec: &SimSpec) -> Result<SimResult> {
    spec.validate()?;
    check_mask(img, tumor_mask)?;
    let tv = tumor_mask.count();
    if tv == 0 {
        return Err(Error::EmptyTumorMask);
    }
    let budget = budget_of(spec.fraction, tv);
    let edges = tumor_mask.edge_pixels();
    let center = centroid(tumor_mask);

    let mut occupied = tumor_mask.clone();
    let mut selected = Vec::with_capacity(budget);
    while selected.len() < budget {
        let mut layer = ring_layer(&occupied);
        if layer.is_empty() {
            return Err(Error::NoHealthyRing(format!(
                "needed {budget} ring pixels, found only {}",
                selected.len()
            )));
        }
        let need = budget - selected.len();
        if layer.len() > need {
            layer_order(&mut layer, center);
            layer.truncate(need);
        }
        for &(r, c) in &layer {
            occupied.set(r, c, true);
        }
        selected.extend(layer);
    }
    Ok(finish(img, selected, &edges))
}

/// In-frame pixels outside `occupied` that touch it through an
/// 8-neighbor.
fn ring_layer(occupied: &ChangeMask) -> Vec<(usize, usize)> {
    let (w, h) = (occupied.width(), occupied.height());
    let mut layer = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if occupied.get(r, c) {
                continue;
            }
            'probe: for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr >= 0
                        && nc >= 0
                        && (nr as usize) < h
                        && (nc as usize) < w
                        && occupied.get(nr as usize, nc as usize)
                    {
                        layer.push((r, c));
                        break 'probe;
                    }
                }
            }
        }
    }
    layer
}

fn check_mask(img: &Image, mask: &ChangeMask) -> Result<()> {
    if (img.width(), img.height()) != (mask.width(), mask.height()) {
        return Err(Error::DimensionMismatch {
            a_width: img.width(),
            a_height: img.height(),
            b_width: mask.width(),
            b_height: mask.height(),
        });
    }
    Ok(())
}

/// Cubic uniform B-spline basis, `t` in [0, 1).
fn bspline_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        (1.0 - t).powi(3) / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t3 / 6.0,
    ]
}

/// Dense displacement field `(dx, dy)` per pixel for the given frame,
/// deformation strength, and seed.
///
/// Control points on a 16 px grid draw i.i.d. zero-mean Gaussian
/// displacements with std `sigma`, each clamped to norm `4 * sigma`;
/// cubic B-spline interpolation spreads them smoothly, and since the
/// basis is a partition of unity the interpolated magnitude never
/// exceeds the clamp.
pub fn deformation_field(width: usize, height: usize, sigma: f64, seed: u64) -> Vec<(f64, f64)> {
    assert!(sigma >= 0.0 && sigma.is_finite());
    if sigma == 0.0 {
        return vec![(0.0, 0.0); width * height];
    }
    let s = GRID_SPACING;
    // control nodes at grid indices -1 ..= last+2 so every pixel has
    // full spline support
    let rows = (height - 1) / s + 4;
    let cols = (width - 1) / s + 4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma is positive and finite");
    let cap = 4.0 * sigma;
    let mut nodes = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        let dx: f64 = normal.sample(&mut rng);
        let dy: f64 = normal.sample(&mut rng);
        let norm = (dx * dx + dy * dy).sqrt();
        if norm > cap {
            let k = cap / norm;
            nodes.push((dx * k, dy * k));
        } else {
            nodes.push((dx, dy));
        }
    }

    let mut field = Vec::with_capacity(width * height);
    for r in 0..height {
        let gr = r as f64 / s as f64;
        let i0 = gr.floor() as usize;
        let wu = bspline_weights(gr - i0 as f64);
        for c in 0..width {
            let gc = c as f64 / s as f64;
            let j0 = gc.floor() as usize;
            let wv = bspline_weights(gc - j0 as f64);
            let mut dx = 0.0;
            let mut dy = 0.0;
            for (k, &wk) in wu.iter().enumerate() {
                // node index i0-1+k, shifted by the leading -1 node
                let ni = i0 + k;
                for (l, &wl) in wv.iter().enumerate() {
                    let nj = j0 + l;
                    let (ndx, ndy) = nodes[ni * cols + nj];
                    let w = wk * wl;
                    dx += w * ndx;
                    dy += w * ndy;
                }
            }
            field.push((dx, dy));
        }
    }
    field
}

fn bilinear(img: &Image, row: f64, col: f64) -> u8 {
    let r = row.clamp(0.0, img.height() as f64 - 1.0);
    let c = col.clamp(0.0, img.width() as f64 - 1.0);
    let r0 = r.floor() as usize;
    let c0 = c.floor() as usize;
    let r1 = (r0 + 1).min(img.height() - 1);
    let c1 = (c0 + 1).min(img.width() - 1);
    let fr = r - r0 as f64;
    let fc = c - c0 as f64;
    let v00 = img.get(r0, c0) as f64;
    let v01 = img.get(r0, c1) as f64;
    let v10 = img.get(r1, c0) as f64;
    let v11 = img.get(r1, c1) as f64;
    let v = v00 * (1.0 - fr) * (1.0 - fc)
        + v01 * (1.0 - fr) * fc
        + v10 * fr * (1.0 - fc)
        + v11 * fr * fc;
    v.round().clamp(0.0, 255.0) as u8
}

/// Warp the image with a smooth random displacement field, leaving the
/// tumor and a protective margin around it untouched.
///
/// Backward mapping: each output pixel samples the input at its own
/// position plus the field vector, bilinearly, clamped at the frame.
/// Deterministic for a given seed; `deform_sigma` 0 returns the input
/// unchanged.
pub fn apply_deformation(img: &Image, tumor_mask: &ChangeMask, spec: &SimSpec) -> Result<Image> {
    spec.validate()?;
    check_mask(img, tumor_mask)?;
    if spec.deform_sigma == 0.0 {
        return Ok(img.clone());
    }
    let field = deformation_field(img.width(), img.height(), spec.deform_sigma, spec.rng_seed);
    let protected = tumor_mask.dilate(PROTECT_RADIUS);
    let mut out = img.clone();
    for r in 0..img.height() {
        for c in 0..img.width() {
            if protected.get(r, c) {
                continue;
            }
            let (dx, dy) = field[r * img.width() + c];
            out.set(r, c, bilinear(img, r as f64 + dy, c as f64 + dx));
        }
    }
    Ok(out)
}

/// Synthesize a follow-up: evolve the tumor per the spec's direction,
/// then overlay the random deformation when `deform_sigma > 0`. The
/// ground truth tracks the rewrite exactly; under deformation it stays
/// exact inside the protected tumor region.
pub fn simulate_followup(
    img: &Image,
    tumor_mask: &ChangeMask,
    spec: &SimSpec,
) -> Result<SimResult> {
    let mut result = match spec.direction {
        Direction::Shrink => shrink_tumor(img, tumor_mask, spec)?,
        Direction::Grow => grow_tumor(img, tumor_mask, spec)?,
    };
    if spec.deform_sigma > 0.0 {
        result.image = apply_deformation(&result.image, tumor_mask, spec)?;
    }
    Ok(result)
}

/// Maximum diameter of a change region in millimeters: the largest
/// center-to-center distance between flagged pixels plus one pixel
/// width, so a single pixel measures one pixel across. Empty masks
/// measure 0.
pub fn max_diameter(mask: &ChangeMask) -> f64 {
    let pts: Vec<(usize, usize)> = mask.iter_set().collect();
    if pts.is_empty() {
        return 0.0;
    }
    let hull = convex_hull(&pts);
    let mut best = 0u64;
    for i in 0..hull.len() {
        for j in i + 1..hull.len() {
            best = best.max(dist2(hull[i], hull[j]));
        }
    }
    ((best as f64).sqrt() + 1.0) * PIXEL_SIZE_MM
}

fn dist2(a: (usize, usize), b: (usize, usize)) -> u64 {
    let dr = a.0 as i64 - b.0 as i64;
    let dc = a.1 as i64 - b.1 as i64;
    (dr * dr + dc * dc) as u64
}

/// Andrew's monotone chain; input points are already sorted row-major,
/// which is lexicographic order.
fn convex_hull(pts: &[(usize, usize)]) -> Vec<(usize, usize)> {
    if pts.len() <= 2 {
        return pts.to_vec();
    }
    let cross = |o: (usize, usize), a: (usize, usize), b: (usize, usize)| {
        let (or_, oc) = (o.0 as i64, o.1 as i64);
        (a.0 as i64 - or_) * (b.1 as i64 - oc) - (a.1 as i64 - oc) * (b.0 as i64 - or_)
    };
    let half = |iter: &mut dyn Iterator<Item = (usize, usize)>| {
        let mut chain: Vec<(usize, usize)> = Vec::new();
        for p in iter {
            while chain.len() >= 2 && cross(chain[chain.len() - 2], chain[chain.len() - 1], p) <= 0
            {
                chain.pop();
            }
            chain.push(p);
        }
        chain.pop();
        chain
    };
    let mut hull = half(&mut pts.iter().copied());
    hull.extend(half(&mut pts.iter().rev().copied()));
    hull
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk_mask(w: usize, h: usize, cy: usize, cx: usize, radius: usize) -> ChangeMask {
        ChangeMask::from_fn(w, h, |r, c| {
            let dr = r as i64 - cy as i64;
            let dc = c as i64 - cx as i64;
            dr * dr + dc * dc <= (radius * radius) as i64
        })
    }

    fn textured(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |r, c| (40 + (r * 5 + c * 3) % 60) as u8)
    }

    fn spec(direction: Direction, fraction: f64) -> SimSpec {
        SimSpec {
            direction,
            fraction,
            deform_sigma: 0.0,
            rng_seed: 7,
        }
    }

    #[test]
    fn zero_fraction_changes_nothing() {
        let img = textured(48, 48);
        let tumor = disk_mask(48, 48, 24, 24, 8);
        for dir in [Direction::Shrink, Direction::Grow] {
            let res = simulate_followup(&img, &tumor, &spec(dir, 0.0)).unwrap();
            assert_eq!(res.image, img);
            assert_eq!(res.ground_truth.count(), 0);
            assert_eq!(res.md_mm, 0.0);
            assert!(res.mirrors.is_empty());
        }
    }

    #[test]
    fn fraction_outside_range_is_rejected() {
        let img = textured(16, 16);
        let tumor = disk_mask(16, 16, 8, 8, 3);
        for bad in [-0.1, 0.91, 2.0] {
            let err = shrink_tumor(&img, &tumor, &spec(Direction::Shrink, bad));
            assert!(matches!(err, Err(Error::InvalidConfig(_))), "{bad}");
        }
    }

    #[test]
    fn mirror_reflects_across_the_edge_point() {
        assert_eq!(mirror_point((5, 5), (5, 8), 64, 64), (5, 11));
        assert_eq!(mirror_point((10, 10), (10, 10), 64, 64), (10, 10));
        // clamped at the frame
        assert_eq!(mirror_point((5, 5), (5, 62), 64, 64), (5, 63));
        assert_eq!(mirror_point((50, 3), (62, 3), 64, 64), (63, 3));
    }

    #[test]
    fn shrink_budget_tracks_the_requested_fraction() {
        let img = textured(64, 64);
        let tumor = disk_mask(64, 64, 32, 32, 10);
        let tv = tumor.count() as f64;
        let res = shrink_tumor(&img, &tumor, &spec(Direction::Shrink, 0.3)).unwrap();
        let got = res.ground_truth.count() as f64;
        assert_eq!(got, (0.3 * tv).ceil());
        assert!((got - 0.3 * tv).abs() <= 0.02 * 0.3 * tv);
        // selection stays inside the tumor
        for (r, c) in res.ground_truth.iter_set() {
            assert!(tumor.get(r, c));
        }
        // the core survives a 30% shrink
        assert!(!res.ground_truth.get(32, 32));
    }

    #[test]
    fn shrink_peels_from_the_boundary_inward() {
        let img = textured(48, 48);
        let tumor = disk_mask(48, 48, 24, 24, 8);
        let res = shrink_tumor(&img, &tumor, &spec(Direction::Shrink, 0.5)).unwrap();
        // every unselected tumor pixel is closer to the center than
        // the farthest selected pixel
        let d2 = |r: usize, c: usize| dist2((r, c), (24, 24));
        let max_kept = tumor
            .iter_set()
            .filter(|&(r, c)| !res.ground_truth.get(r, c))
            .map(|(r, c)| d2(r, c))
            .max()
            .unwrap();
        let min_selected = res
            .ground_truth
            .iter_set()
            .map(|(r, c)| d2(r, c))
            .min()
            .unwrap();
        // a digital boundary layer is about two pixels thick, and a
        // partially-consumed layer may straddle the kept set
        assert!(
            (max_kept as f64).sqrt() <= (min_selected as f64).sqrt() + 2.5,
            "kept {max_kept} vs selected {min_selected}"
        );
    }

    #[test]
    fn rewrites_match_the_ground_truth_exactly() {
        let img = textured(64, 64);
        let tumor = disk_mask(64, 64, 30, 34, 9);
        for dir in [Direction::Shrink, Direction::Grow] {
            let res = simulate_followup(&img, &tumor, &spec(dir, 0.4)).unwrap();
            for r in 0..64 {
                for c in 0..64 {
                    if !res.ground_truth.get(r, c) {
                        assert_eq!(res.image.get(r, c), img.get(r, c), "({r},{c}) drifted");
                    }
                }
            }
            assert_eq!(res.mirrors.len(), res.ground_truth.count());
        }
    }

    #[test]
    fn reflection_distances_agree_on_an_interior_tumor() {
        let img = textured(64, 64);
        let tumor = disk_mask(64, 64, 32, 32, 9);
        let res = shrink_tumor(&img, &tumor, &spec(Direction::Shrink, 0.35)).unwrap();
        assert!(!res.mirrors.is_empty());
        for m in &res.mirrors {
            assert_eq!(
                dist2(m.target, m.edge),
                dist2(m.mirror, m.edge),
                "mirror {m:?} broke the reflection identity"
            );
        }
    }

    #[test]
    fn grown_ring_is_disjoint_and_attached() {
        let img = textured(64, 64);
        let tumor = disk_mask(64, 64, 32, 32, 10);
        let tv = tumor.count() as f64;
        let res = grow_tumor(&img, &tumor, &spec(Direction::Grow, 0.2)).unwrap();
        let got = res.ground_truth.count() as f64;
        assert_eq!(got, (0.2 * tv).ceil());
        assert!((got - 0.2 * tv).abs() <= 0.02 * 0.2 * tv);
        for (r, c) in res.ground_truth.iter_set() {
            assert!(!tumor.get(r, c), "({r},{c}) grew inside the tumor");
        }
        // the ring is reachable from the tumor through selected pixels
        let mut reach = tumor.clone();
        let mut changed = true;
        while changed {
            changed = false;
            for (r, c) in res.ground_truth.iter_set() {
                if reach.get(r, c) {
                    continue;
                }
                'adj: for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                        if nr >= 0
                            && nc >= 0
                            && nr < 64
                            && nc < 64
                            && reach.get(nr as usize, nc as usize)
                        {
                            reach.set(r, c, true);
                            changed = true;
                            break 'adj;
                        }
                    }
                }
            }
        }
        for (r, c) in res.ground_truth.iter_set() {
            assert!(reach.get(r, c), "({r},{c}) detached from the tumor");
        }
    }

    #[test]
    fn growth_fails_without_healthy_tissue() {
        let img = textured(16, 16);
        let tumor = ChangeMask::from_fn(16, 16, |_, _| true);
        let err = grow_tumor(&img, &tumor, &spec(Direction::Grow, 0.1));
        assert!(matches!(err, Err(Error::NoHealthyRing(_))));
    }

    #[test]
    fn smoothing_kernel_matches_hand_values() {
        let mut img = Image::new(5, 5);
        img.set(2, 2, 16);
        // center taps the 4/16 weight: 16*4/16 = 4, plus rounding bias
        assert_eq!(smoothed_at(&img, 2, 2), 4);
        let flat = Image::from_fn(5, 5, |_, _| 255);
        assert_eq!(smoothed_at(&flat, 2, 2), 255);
        assert_eq!(smoothed_at(&flat, 0, 0), 255);
        let ramp = Image::from_fn(5, 5, |_, c| (c * 10) as u8);
        // columns 1,2,3 weighted 4:8:4 -> exactly the center column
        assert_eq!(smoothed_at(&ramp, 2, 2), 20);
    }

    #[test]
    fn simulation_is_deterministic() {
        let img = textured(64, 64);
        let tumor = disk_mask(64, 64, 30, 30, 9);
        let sp = SimSpec {
            direction: Direction::Shrink,
            fraction: 0.4,
            deform_sigma: DEFAULT_DEFORM_SIGMA,
            rng_seed: 1234,
        };
        let a = simulate_followup(&img, &tumor, &sp).unwrap();
        let b = simulate_followup(&img, &tumor, &sp).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.ground_truth, b.ground_truth);
        assert_eq!(a.md_mm.to_bits(), b.md_mm.to_bits());
        assert_eq!(a.mirrors, b.mirrors);
    }

    #[test]
    fn zero_sigma_deformation_is_identity() {
        let img = textured(40, 40);
        let tumor = disk_mask(40, 40, 20, 20, 6);
        let out = apply_deformation(&img, &tumor, &spec(Direction::Shrink, 0.0)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn deformation_spares_the_protected_tumor() {
        let img = textured(64, 64);
        let tumor = disk_mask(64, 64, 32, 32, 8);
        let sp = SimSpec {
            direction: Direction::Shrink,
            fraction: 0.0,
            deform_sigma: 3.0,
            rng_seed: 99,
        };
        let out = apply_deformation(&img, &tumor, &sp).unwrap();
        let protected = tumor.dilate(10);
        let mut moved_outside = 0;
        for r in 0..64 {
            for c in 0..64 {
                if protected.get(r, c) {
                    assert_eq!(out.get(r, c), img.get(r, c), "({r},{c}) inside the margin");
                } else if out.get(r, c) != img.get(r, c) {
                    moved_outside += 1;
                }
            }
        }
        assert!(moved_outside > 0, "sigma 3 should visibly warp the frame");
    }

    #[test]
    fn field_magnitude_respects_the_clamp() {
        for seed in 0..100 {
            let sigma = 1.0 + (seed % 7) as f64 * 0.5;
            let field = deformation_field(48, 40, sigma, seed);
            let max = field
                .iter()
                .map(|(dx, dy)| (dx * dx + dy * dy).sqrt())
                .fold(0.0f64, f64::max);
            assert!(
                max <= 4.0 * sigma + 1e-9,
                "seed {seed}: max displacement {max} over cap {}",
                4.0 * sigma
            );
        }
    }

    #[test]
    fn constant_images_survive_any_deformation() {
        let img = Image::from_fn(50, 44, |_, _| 77);
        let tumor = disk_mask(50, 44, 20, 25, 5);
        let sp = SimSpec {
            direction: Direction::Grow,
            fraction: 0.0,
            deform_sigma: 2.5,
            rng_seed: 5,
        };
        let out = apply_deformation(&img, &tumor, &sp).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn diameter_of_simple_shapes() {
        assert_eq!(max_diameter(&ChangeMask::new(10, 10)), 0.0);

        let mut single = ChangeMask::new(10, 10);
        single.set(4, 4, true);
        assert!((max_diameter(&single) - PIXEL_SIZE_MM).abs() < 1e-12);

        let line = ChangeMask::from_fn(12, 3, |r, c| r == 1 && c < 10);
        assert!((max_diameter(&line) - 3.5).abs() < 1e-12);
    }

    #[test]
    fn diameter_matches_the_brute_force_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(60);
        for _ in 0..100 {
            let mask = ChangeMask::from_fn(40, 40, |_, _| rng.random::<f64>() < 0.08);
            let pts: Vec<(usize, usize)> = mask.iter_set().collect();
            let mut best = 0u64;
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    best = best.max(dist2(pts[i], pts[j]));
                }
            }
            let want = if pts.is_empty() {
                0.0
            } else {
                ((best as f64).sqrt() + 1.0) * PIXEL_SIZE_MM
            };
            assert_eq!(max_diameter(&mask).to_bits(), want.to_bits());
        }
    }
}
