// Fabricates a follow-up scan with known ground truth and writes the
// whole set as PNGs. Pass an output directory, or get ./sim_out.
//
//   cargo run --example simulate_followup -- [out_dir]

use std::env;
use std::fs;
use std::path::PathBuf;

use changedet::imgcore::{save_image, save_mask};
use changedet::simulate::{max_diameter, simulate_followup, Direction, SimSpec};
use changedet::synthetic::{elliptical_mask, paste_region, smooth_texture};

fn main() {
    let out_dir = env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("sim_out"));
    fs::create_dir_all(&out_dir).expect("create output directory");

    let background = smooth_texture(128, 128, 52, 72, 16, 7);
    let tumor_tex = smooth_texture(128, 128, 78, 98, 16, 1007);
    let tumor = elliptical_mask(128, 128, 64, 64, 20, 16);
    let baseline = paste_region(&background, &tumor_tex, &tumor);
    println!(
        "tumor: {} px, max diameter {:.1} mm",
        tumor.count(),
        max_diameter(&tumor)
    );

    for (name, direction, fraction) in [
        ("shrink20", Direction::Shrink, 0.20),
        ("grow08", Direction::Grow, 0.08),
    ] {
        let mut spec = SimSpec::new(direction, fraction);
        spec.rng_seed = 42;
        let sim = simulate_followup(&baseline, &tumor, &spec).unwrap();
        let img_path = out_dir.join(format!("{name}_followup.png"));
        let gt_path = out_dir.join(format!("{name}_gt.png"));
        save_image(&sim.image, &img_path).unwrap();
        save_mask(&sim.ground_truth, &gt_path).unwrap();
        println!(
            "{name}: rewrote {} px ({:.1}% of tumor), change diameter {:.1} mm",
            sim.ground_truth.count(),
            100.0 * sim.ground_truth.count() as f64 / tumor.count() as f64,
            sim.md_mm
        );
        println!("  wrote {}", img_path.display());
        println!("  wrote {}", gt_path.display());
    }

    save_image(&baseline, out_dir.join("baseline.png")).unwrap();
    save_mask(&tumor, out_dir.join("tumor.png")).unwrap();
    println!("wrote {}/baseline.png and tumor.png", out_dir.display());
}
