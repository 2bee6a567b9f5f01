//! Thin command-line front end over the library. Exit codes: 0 on
//! success, 1 on usage errors, 2 when a stage fails, 3 when a sweep
//! finishes with some entries failed.

use std::path::PathBuf;
use std::process::exit;

use clap::{Args, Parser, Subcommand};

use changedet::error::Error;
use changedet::eroc::extract_roi_scaled;
use changedet::evaluate::{band_for, evaluate, SizeBand};
use changedet::imgcore::{load_image, load_mask, save_image, save_mask};
use changedet::normalize::hhm_normalize_with;
use changedet::pipeline::{
    layered_config, report_doc, run_pipeline, run_sweep, ConfigPatch, PipelineConfig,
    SweepManifest,
};
use changedet::simulate::{simulate_followup, Direction, SimSpec, DEFAULT_DEFORM_SIGMA};
use changedet::{ChangeMask, Roi};

#[derive(Parser)]
#[command(
    name = "changedet",
    version,
    about = "Change detection for registered serial grayscale images"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mutually normalize the intensities of an image pair.
    Normalize(NormalizeCmd),
    /// Extract the rectangular region of likely change.
    Roi(RoiCmd),
    /// Detect changes between a baseline and a follow-up.
    Detect(DetectCmd),
    /// Fabricate a follow-up with known ground truth.
    Simulate(SimulateCmd),
    /// Score a predicted change mask against ground truth.
    Evaluate(EvaluateCmd),
    /// Simulate and score a whole manifest with both feature methods.
    Sweep(SweepCmd),
}

/// Detection knobs shared by `detect` and `sweep`; every flag overrides
/// the config file, which overrides the defaults.
#[derive(Args, Debug, Default)]
struct Knobs {
    /// Config file of key = value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Feature method: wlmi, lmi, or glrt.
    #[arg(long)]
    feature: Option<String>,
    /// Odd feature window side.
    #[arg(long)]
    window: Option<usize>,
    /// Intensity gap treated as identical.
    #[arg(long)]
    delta_thresh: Option<u8>,
    /// Scale on the region extraction threshold.
    #[arg(long)]
    eroc_threshold_scale: Option<f64>,
    /// Run the feature stage on the whole frame.
    #[arg(long)]
    no_eroc: bool,
    /// Similarity percentage below which pixels join the mask.
    #[arg(long)]
    grow_threshold: Option<f64>,
    /// Seed search band width around the tumor edge, in pixels.
    #[arg(long)]
    seed_radius: Option<usize>,
    /// Decision threshold for the likelihood-ratio feature.
    #[arg(long)]
    glrt_gamma: Option<f64>,
    /// Noise level for the likelihood-ratio feature; estimated when
    /// absent.
    #[arg(long)]
    glrt_sigma: Option<f64>,
    /// Skip intensity normalization.
    #[arg(long)]
    no_normalize: bool,
    /// Drop intensity 0 from the normalization histograms.
    #[arg(long)]
    exclude_zero: bool,
    /// Gaussian pre-blur radius; 0 disables it.
    #[arg(long)]
    pre_blur: Option<usize>,
    /// Score against the whole frame even with extraction on.
    #[arg(long)]
    full_frame_eval: bool,
    #[arg(long)]
    rng_seed: Option<u64>,
    /// Directory for output artifacts.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl Knobs {
    fn to_patch(&self) -> Result<ConfigPatch, Error> {
        let mut p = ConfigPatch::default();
        if let Some(v) = &self.feature {
            p.set("feature", v)?;
        }
        p.window = self.window;
        p.delta_thresh = self.delta_thresh;
        p.eroc_threshold_scale = self.eroc_threshold_scale;
        if self.no_eroc {
            p.use_eroc = Some(false);
        }
        p.grow_threshold = self.grow_threshold;
        p.seed_radius = self.seed_radius;
        p.glrt_gamma = self.glrt_gamma;
        p.glrt_sigma = self.glrt_sigma;
        if self.no_normalize {
            p.normalize = Some(false);
        }
        if self.exclude_zero {
            p.exclude_zero = Some(true);
        }
        p.pre_blur = self.pre_blur;
        if self.full_frame_eval {
            p.full_frame_eval = Some(true);
        }
        p.rng_seed = self.rng_seed;
        p.out_dir = self.out_dir.clone();
        Ok(p)
    }

    fn resolve(&self) -> Result<PipelineConfig, Error> {
        let file = match &self.config {
            Some(path) => Some(ConfigPatch::from_file(path)?),
            None => None,
        };
        layered_config(file.as_ref(), &self.to_patch()?)
    }
}

#[derive(Args)]
struct NormalizeCmd {
    /// Baseline image (PNG or PGM).
    #[arg(long)]
    baseline: PathBuf,
    /// Follow-up image.
    #[arg(long)]
    followup: PathBuf,
    /// Drop intensity 0 from the histograms.
    #[arg(long)]
    exclude_zero: bool,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RoiCmd {
    #[arg(long)]
    baseline: PathBuf,
    #[arg(long)]
    followup: PathBuf,
    /// Scale on the extraction threshold.
    #[arg(long, default_value_t = 1.0)]
    eroc_threshold_scale: f64,
    /// Skip intensity normalization first.
    #[arg(long)]
    no_normalize: bool,
    #[arg(long)]
    exclude_zero: bool,
}

#[derive(Args)]
struct DetectCmd {
    #[arg(long)]
    baseline: PathBuf,
    #[arg(long)]
    followup: PathBuf,
    /// Tumor segmentation mask; seeds are searched around its edge.
    #[arg(long)]
    tumor_mask: PathBuf,
    /// Score the result against this mask.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[command(flatten)]
    knobs: Knobs,
}

#[derive(Args)]
struct SimulateCmd {
    /// Baseline image to derive the follow-up from.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    tumor_mask: PathBuf,
    /// Fraction of the tumor pixel count to rewrite, in [0, 0.9].
    #[arg(long)]
    fraction: f64,
    /// shrink or grow.
    #[arg(long)]
    direction: Direction,
    /// Std of the deformation control points, in pixels; 0 disables.
    #[arg(long, default_value_t = DEFAULT_DEFORM_SIGMA)]
    deform_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output prefix; writes <p>_followup.png, <p>_gt.png, <p>.json.
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Args)]
struct EvaluateCmd {
    /// Predicted change mask.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    ground_truth: PathBuf,
    /// Restrict scoring to top,bottom,left,right (inclusive).
    #[arg(long, value_name = "T,B,L,R")]
    roi: Option<String>,
    /// Simulated change fraction, for the size band.
    #[arg(long)]
    fraction: Option<f64>,
}

#[derive(Args)]
struct SweepCmd {
    /// JSON manifest of simulation entries.
    #[arg(long)]
    manifest: PathBuf,
    /// Worker threads; defaults to the core count.
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    knobs: Knobs,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            exit(code);
        }
    };
    match run(cli) {
        Ok(code) => exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            exit(match e {
                Error::InvalidConfig(_) => 1,
                _ => 2,
            });
        }
    }
}

fn run(cli: Cli) -> Result<i32, Error> {
    match cli.command {
        Command::Normalize(cmd) => {
            let a = load_image(&cmd.baseline)?;
            let b = load_image(&cmd.followup)?;
            let (na, nb) = hhm_normalize_with(&a, &b, cmd.exclude_zero)?;
            std::fs::create_dir_all(&cmd.out_dir).map_err(|e| Error::Io {
                path: cmd.out_dir.clone(),
                source: e,
            })?;
            let pa = cmd.out_dir.join("normalized_baseline.png");
            let pb = cmd.out_dir.join("normalized_followup.png");
            save_image(&na, &pa)?;
            save_image(&nb, &pb)?;
            println!("{}", pa.display());
            println!("{}", pb.display());
            Ok(0)
        }
        Command::Roi(cmd) => {
            let a = load_image(&cmd.baseline)?;
            let b = load_image(&cmd.followup)?;
            let (a, b) = if cmd.no_normalize {
                (a, b)
            } else {
                hhm_normalize_with(&a, &b, cmd.exclude_zero)?
            };
            let roi = extract_roi_scaled(&a, &b, cmd.eroc_threshold_scale)?;
            println!("{}", serde_json::to_string(&roi).expect("roi serializes"));
            Ok(0)
        }
        Command::Detect(cmd) => {
            let mut patch = cmd.knobs.to_patch()?;
            patch.baseline = Some(cmd.baseline);
            patch.followup = Some(cmd.followup);
            patch.tumor_mask = Some(cmd.tumor_mask);
            patch.ground_truth = cmd.ground_truth;
            let file = match &cmd.knobs.config {
                Some(path) => Some(ConfigPatch::from_file(path)?),
                None => None,
            };
            let cfg = layered_config(file.as_ref(), &patch)?;
            let (outcome, artifacts) = run_pipeline(&cfg)?;
            println!(
                "changed pixels: {}",
                outcome.detection.mask.count()
            );
            println!("report: {}", artifacts.report.display());
            Ok(0)
        }
        Command::Simulate(cmd) => {
            let base = load_image(&cmd.input)?;
            let tumor = load_mask(&cmd.tumor_mask)?;
            let spec = SimSpec {
                direction: cmd.direction,
                fraction: cmd.fraction,
                deform_sigma: cmd.deform_sigma,
                rng_seed: cmd.seed,
            };
            let sim = simulate_followup(&base, &tumor, &spec)?;
            let prefix = cmd.out_prefix.display();
            let image_path = PathBuf::from(format!("{prefix}_followup.png"));
            let gt_path = PathBuf::from(format!("{prefix}_gt.png"));
            let sidecar_path = PathBuf::from(format!("{prefix}.json"));
            save_image(&sim.image, &image_path)?;
            save_mask(&sim.ground_truth, &gt_path)?;
            let sidecar = serde_json::json!({
                "tv": tumor.count(),
                "md_mm": sim.md_mm,
                "fraction": cmd.fraction,
                "direction": cmd.direction,
                "deform_sigma": cmd.deform_sigma,
                "seed": cmd.seed,
                "changed_pixels": sim.ground_truth.count(),
            });
            std::fs::write(
                &sidecar_path,
                serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes"),
            )
            .map_err(|e| Error::Io {
                path: sidecar_path.clone(),
                source: e,
            })?;
            println!("{}", image_path.display());
            println!("{}", gt_path.display());
            println!("{}", sidecar_path.display());
            Ok(0)
        }
        Command::Evaluate(cmd) => {
            let pred = load_mask(&cmd.pred)?;
            let gt = load_mask(&cmd.ground_truth)?;
            let roi = match &cmd.roi {
                Some(s) => parse_roi(s, &pred)?,
                None => Roi::full(pred.width(), pred.height()),
            };
            let band = cmd.fraction.map_or(SizeBand::Overall, band_for);
            let report = evaluate(&pred, &gt, &roi, band)?;
            let doc = report_doc(&report, &PipelineConfig::default());
            println!(
                "{}",
                serde_json::to_string_pretty(&doc).expect("report serializes")
            );
            Ok(0)
        }
        Command::Sweep(cmd) => {
            let cfg = cmd.knobs.resolve()?;
            let manifest = SweepManifest::load(&cmd.manifest)?;
            let out_dir = cfg.out_dir.clone();
            let outcome = run_sweep(&manifest, &cfg, &out_dir, cmd.jobs)?;
            for path in &outcome.files {
                println!("{}", path.display());
            }
            if outcome.failures.is_empty() {
                Ok(0)
            } else {
                for f in &outcome.failures {
                    eprintln!("entry {} failed: {}", f.entry, f.error);
                }
                Ok(3)
            }
        }
    }
}

fn parse_roi(s: &str, pred: &ChangeMask) -> Result<Roi, Error> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| Error::InvalidConfig(format!("roi: expected T,B,L,R integers, got {s:?}")))?;
    let [top, bottom, left, right] = parts[..] else {
        return Err(Error::InvalidConfig(format!(
            "roi: expected four fields, got {s:?}"
        )));
    };
    if top > bottom || left > right || bottom >= pred.height() || right >= pred.width() {
        return Err(Error::InvalidConfig(format!("roi out of bounds: {s:?}")));
    }
    Ok(Roi::new(top, bottom, left, right))
}
