// Scores a detection against its ground truth: confusion counts, the
// ratio measures, and an ROC sweep of the underlying similarity map.

use changedet::detect::{run_detection, DetectOptions};
use changedet::evaluate::{evaluate, roc_curve, SizeBand};
use changedet::pipeline::report_doc;
use changedet::pipeline::PipelineConfig;
use changedet::simulate::{simulate_followup, Direction, SimSpec};
use changedet::synthetic::{elliptical_mask, paste_region, smooth_texture};

fn main() {
    let background = smooth_texture(128, 128, 52, 72, 16, 11);
    let tumor_tex = smooth_texture(128, 128, 78, 98, 16, 1011);
    let tumor = elliptical_mask(128, 128, 64, 64, 22, 18);
    let baseline = paste_region(&background, &tumor_tex, &tumor);

    let mut spec = SimSpec::new(Direction::Shrink, 0.25);
    spec.deform_sigma = 0.0;
    let sim = simulate_followup(&baseline, &tumor, &spec).unwrap();

    let detection =
        run_detection(&baseline, &sim.image, &tumor, &DetectOptions::default()).unwrap();

    let report = evaluate(
        &detection.mask,
        &sim.ground_truth,
        &detection.roi,
        SizeBand::Mid,
    )
    .unwrap();
    let doc = report_doc(&report, &PipelineConfig::default());
    println!("{}", serde_json::to_string_pretty(&doc).unwrap());

    // sweep the 50% rule across the whole rate range
    let thresholds: Vec<f64> = (0..=20).map(|i| i as f64 * 5.0).collect();
    match roc_curve(&detection.map, &sim.ground_truth, &thresholds) {
        Ok(curve) => {
            println!("roc ({} operating points):", curve.points.len());
            for (fpr, tpr) in &curve.points {
                println!("  fpr {fpr:.3}  tpr {tpr:.3}");
            }
            println!("auc {:.3}", curve.auc());
        }
        Err(e) => println!("no roc: {e}"),
    }
}
