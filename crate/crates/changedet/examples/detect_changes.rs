// The whole detection chain on a fabricated case: normalize, extract
// the candidate region, score similarity, seed around the tumor edge,
// and grow the change mask.

use changedet::detect::{run_detection, DetectOptions};
use changedet::simulate::{simulate_followup, Direction, SimSpec};
use changedet::synthetic::{elliptical_mask, paste_region, smooth_texture};

fn main() {
    // baseline: bright tumor on a dimmer background
    let background = smooth_texture(128, 128, 52, 72, 16, 5);
    let tumor_tex = smooth_texture(128, 128, 78, 98, 16, 1005);
    let tumor = elliptical_mask(128, 128, 64, 64, 22, 18);
    let baseline = paste_region(&background, &tumor_tex, &tumor);

    // the tumor shrinks by 30%
    let mut spec = SimSpec::new(Direction::Shrink, 0.30);
    spec.deform_sigma = 0.0;
    let sim = simulate_followup(&baseline, &tumor, &spec).unwrap();
    println!(
        "simulated {} changed pixels, max diameter {:.1} mm",
        sim.ground_truth.count(),
        sim.md_mm
    );

    let detection = run_detection(
        &baseline,
        &sim.image,
        &tumor,
        &DetectOptions::default(),
    )
    .unwrap();

    println!(
        "region: rows {}..={} cols {}..={} ({} px)",
        detection.roi.top,
        detection.roi.bottom,
        detection.roi.left,
        detection.roi.right,
        detection.roi.area()
    );
    println!("seeds: {}", detection.seeds.len());
    for s in detection.seeds.iter().take(5) {
        println!("  ({}, {}) rate {:.1}", s.row, s.col, s.rate);
    }
    println!("grown mask: {} px", detection.mask.count());

    let overlap = sim
        .ground_truth
        .iter_set()
        .filter(|&(r, c)| detection.mask.get(r, c))
        .count();
    println!(
        "overlap with ground truth: {overlap} px ({:.0}% of the truth)",
        100.0 * overlap as f64 / sim.ground_truth.count() as f64
    );
    println!(
        "stage times: normalize {:?}, region {:?}, feature {:?}, decide {:?}",
        detection.timings.normalize,
        detection.timings.roi,
        detection.timings.feature,
        detection.timings.decide
    );
}
