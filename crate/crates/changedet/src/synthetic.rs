//! Synthetic test data: smooth random textures, elliptical masks, and
//! a gentle periodic intensity bias. Examples and tests use these to
//! build realistic registered pairs without shipping image assets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imgcore::{ChangeMask, Image};

/// Smooth random texture: a coarse grid of uniform random levels in
/// `[lo, hi]` upsampled bilinearly, so neighboring pixels share values
/// the way tissue does. `cell` is the grid pitch in pixels.
/// Deterministic per seed.
pub fn smooth_texture(width: usize, height: usize, lo: u8, hi: u8, cell: usize, seed: u64) -> Image {
    assert!(width > 0 && height > 0 && cell > 0);
    assert!(lo <= hi);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gw = width / cell + 2;
    let gh = height / cell + 2;
    let grid: Vec<f64> = (0..gw * gh)
        .map(|_| rng.random_range(lo as f64..=hi as f64))
        .collect();
    Image::from_fn(width, height, |r, c| {
        let gr = r as f64 / cell as f64;
        let gc = c as f64 / cell as f64;
        let r0 = gr.floor() as usize;
        let c0 = gc.floor() as usize;
        let fr = gr - r0 as f64;
        let fc = gc - c0 as f64;
        let at = |rr: usize, cc: usize| grid[rr.min(gh - 1) * gw + cc.min(gw - 1)];
        let v = at(r0, c0) * (1.0 - fr) * (1.0 - fc)
            + at(r0, c0 + 1) * (1.0 - fr) * fc
            + at(r0 + 1, c0) * fr * (1.0 - fc)
            + at(r0 + 1, c0 + 1) * fr * fc;
        v.round().clamp(0.0, 255.0) as u8
    })
}

/// Filled ellipse mask centered at `(cy, cx)` with semi-axes
/// `(ry, rx)` in pixels.
pub fn elliptical_mask(
    width: usize,
    height: usize,
    cy: usize,
    cx: usize,
    ry: usize,
    rx: usize,
) -> ChangeMask {
    assert!(ry > 0 && rx > 0);
    ChangeMask::from_fn(width, height, |r, c| {
        let dy = (r as f64 - cy as f64) / ry as f64;
        let dx = (c as f64 - cx as f64) / rx as f64;
        dy * dy + dx * dx <= 1.0
    })
}

/// Overlay a diagonal sinusoidal intensity bias:
/// `amplitude * sin(2 pi (r + c) / period)` added per pixel, rounded
/// and clamped. Models slow acquisition drift between visits.
pub fn with_periodic_bias(img: &Image, amplitude: f64, period: f64) -> Image {
    assert!(period > 0.0);
    Image::from_fn(img.width(), img.height(), |r, c| {
        let bias = amplitude * (std::f64::consts::TAU * (r + c) as f64 / period).sin();
        (img.get(r, c) as f64 + bias).round().clamp(0.0, 255.0) as u8
    })
}

/// Rewrite the masked region with a second texture, blended at the
/// mask edge by nothing: a hard paste. Convenient for planting a
/// lesion of a different intensity family into a background.
pub fn paste_region(base: &Image, overlay: &Image, mask: &ChangeMask) -> Image {
    assert_eq!(base.width(), overlay.width());
    assert_eq!(base.height(), overlay.height());
    Image::from_fn(base.width(), base.height(), |r, c| {
        if mask.get(r, c) {
            overlay.get(r, c)
        } else {
            base.get(r, c)
        }
    })
}
