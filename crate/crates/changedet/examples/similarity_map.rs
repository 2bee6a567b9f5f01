// Renders a weighted mutual-information similarity map as ASCII art.
// Rates near 100 mean the two windows tell the same story; a change
// punches a hole of low rates into the map.

use changedet::eroc::Roi;
use changedet::features::{sim_rate_map, FeatureParams, MiFeature};
use changedet::imgcore::Image;
use changedet::synthetic::{elliptical_mask, smooth_texture};

fn main() {
    let baseline = smooth_texture(64, 64, 55, 80, 16, 33);
    // a blob near the center brightens by 60
    let blob = elliptical_mask(64, 64, 30, 34, 7, 9);
    let followup = Image::from_fn(64, 64, |r, c| {
        let v = baseline.get(r, c);
        if blob.get(r, c) {
            v.saturating_add(60)
        } else {
            v
        }
    });

    let roi = Roi::full(64, 64);
    let map = sim_rate_map(
        &baseline,
        &followup,
        &roi,
        MiFeature::Weighted,
        &FeatureParams::default(),
    )
    .unwrap();

    // four shades: '#' high similarity down to '.' for likely change
    println!("similarity rates (one char per 2x2 cell):");
    for r in (0..64).step_by(2) {
        let mut line = String::new();
        for c in (0..64).step_by(2) {
            let rate = map.get(r, c);
            line.push(match rate {
                x if x >= 90.0 => '#',
                x if x >= 50.0 => '+',
                x if x >= 25.0 => ':',
                _ => '.',
            });
        }
        println!("{line}");
    }

    let low = map.values().iter().filter(|&&v| v < 50.0).count();
    println!(
        "{low} of {} pixels fall under the 50% change rule",
        map.len()
    );
}
