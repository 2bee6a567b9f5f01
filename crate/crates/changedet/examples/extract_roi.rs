// Region extraction narrows the expensive feature stage to a rectangle
// that brackets the change. Plant a block change in a smooth texture
// and watch the directional difference profiles find it.

use changedet::eroc::{extract_roi, ffp_threshold, msd_curves};
use changedet::imgcore::Image;
use changedet::synthetic::smooth_texture;

fn main() {
    let baseline = smooth_texture(120, 120, 50, 90, 16, 21);
    // darken a 18x24 block: rows 40..58, cols 66..90
    let followup = Image::from_fn(120, 120, |r, c| {
        let v = baseline.get(r, c);
        if (40..58).contains(&r) && (66..90).contains(&c) {
            v.saturating_sub(35)
        } else {
            v
        }
    });

    let curves = msd_curves(&baseline, &followup).unwrap();
    let t = ffp_threshold(&curves.top_down);
    println!("top-down mean squared profile (threshold {t:.1}):");
    for (row, v) in curves.top_down.iter().enumerate() {
        if *v > 0.0 {
            println!("  row {row:3}  {v:8.1}");
        }
    }

    let roi = extract_roi(&baseline, &followup).unwrap();
    println!(
        "extracted rows {}..={} cols {}..={} ({} px of {})",
        roi.top,
        roi.bottom,
        roi.left,
        roi.right,
        roi.area(),
        120 * 120
    );
    assert!(roi.top <= 40 && roi.bottom >= 57);
    assert!(roi.left <= 66 && roi.right >= 89);
    println!("block is fully inside the region");
}
