// A miniature batch experiment: simulate six follow-ups across three
// size bands, score each with both feature methods, and print the
// aggregate table that the sweep writes to disk.
//
//   cargo run --example roc_sweep -- [out_dir]

use std::env;
use std::fs;
use std::path::PathBuf;

use changedet::imgcore::{save_image, save_mask};
use changedet::pipeline::{run_sweep, PipelineConfig, SweepManifest};
use changedet::synthetic::{elliptical_mask, paste_region, smooth_texture};

fn main() {
    let out_dir = env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("sweep_out"));
    fs::create_dir_all(&out_dir).expect("create output directory");

    // one shared base case on disk, six simulations of it
    let background = smooth_texture(96, 96, 52, 72, 16, 17);
    let tumor_tex = smooth_texture(96, 96, 78, 98, 16, 1017);
    let tumor = elliptical_mask(96, 96, 48, 48, 17, 14);
    let baseline = paste_region(&background, &tumor_tex, &tumor);
    let base_path = out_dir.join("base.png");
    let tumor_path = out_dir.join("tumor.png");
    save_image(&baseline, &base_path).unwrap();
    save_mask(&tumor, &tumor_path).unwrap();

    let entries: Vec<serde_json::Value> = [
        ("shrink", 0.05),
        ("grow", 0.08),
        ("shrink", 0.20),
        ("grow", 0.30),
        ("shrink", 0.50),
        ("grow", 0.70),
    ]
    .iter()
    .enumerate()
    .map(|(i, (direction, fraction))| {
        serde_json::json!({
            "base_image": base_path,
            "tumor_mask": tumor_path,
            "direction": direction,
            "fraction": fraction,
            "seed": 100 + i as u64,
        })
    })
    .collect();
    let manifest_path = out_dir.join("manifest.json");
    fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&serde_json::json!({ "entries": entries })).unwrap(),
    )
    .unwrap();

    let manifest = SweepManifest::load(&manifest_path).unwrap();
    let outcome = run_sweep(&manifest, &PipelineConfig::default(), &out_dir, None).unwrap();
    assert!(outcome.failures.is_empty());

    println!("{}", fs::read_to_string(out_dir.join("aggregate.csv")).unwrap());
    for path in &outcome.files {
        println!("wrote {}", path.display());
    }
}
