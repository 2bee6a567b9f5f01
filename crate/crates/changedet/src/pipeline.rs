//! End-to-end orchestration: layered configuration, the single-pair
//! run (preprocess, detect, optionally score, write artifacts), and a
//! batch sweep that simulates follow-ups from a manifest and scores
//! two feature methods side by side.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::detect::{run_detection, DetectConfig, DetectOptions, Detection};
use crate::error::{Error, Result};
use crate::eroc::Roi;
use crate::evaluate::{
    aggregate, band_for, evaluate, roc_from_scores, BandSummary, EvalReport, SizeBand,
};
use crate::features::{FeatureMethod, FeatureParams, SimilarityMap, DEFAULT_GAMMA};
use crate::imgcore::{
    gaussian_blur, load_image, load_mask, save_mask, save_overlay, ChangeMask, Image,
};
use crate::simulate::{simulate_followup, Direction, SimSpec};

/// Every knob of a detection run. Serialized verbatim into each report
/// as the configuration echo.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub feature: FeatureMethod,
    /// Odd feature window side.
    pub window: usize,
    /// Intensity gap treated as identical when pairing values.
    pub delta_thresh: u8,
    /// Restrict the feature stage to the extracted region.
    pub use_eroc: bool,
    pub eroc_threshold_scale: f64,
    /// Similarity percentage below which pixels join the mask.
    pub grow_threshold: f64,
    /// Seed search band width around the tumor edge, in pixels.
    pub seed_radius: usize,
    pub glrt_gamma: f64,
    /// Noise level override; estimated from the pair when absent.
    pub glrt_sigma: Option<f64>,
    /// Mutually normalize intensities before differencing.
    pub normalize: bool,
    /// Drop intensity 0 from the normalization histograms.
    pub exclude_zero: bool,
    /// Gaussian pre-blur kernel radius; 0 disables it.
    pub pre_blur: usize,
    /// Score against the whole frame even when extraction is on.
    pub full_frame_eval: bool,
    pub rng_seed: u64,
    pub baseline: Option<PathBuf>,
    pub followup: Option<PathBuf>,
    pub tumor_mask: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            feature: FeatureMethod::Wlmi,
            window: 3,
            delta_thresh: 4,
            use_eroc: true,
            eroc_threshold_scale: 1.0,
            grow_threshold: 50.0,
            seed_radius: 10,
            glrt_gamma: DEFAULT_GAMMA,
            glrt_sigma: None,
            normalize: true,
            exclude_zero: false,
            pre_blur: 0,
            full_frame_eval: false,
            rng_seed: 0,
            baseline: None,
            followup: None,
            tumor_mask: None,
            ground_truth: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window % 2 == 0 || self.window == 0 {
            return Err(Error::InvalidConfig(format!(
                "window must be odd, got {}",
                self.window
            )));
        }
        if !(self.grow_threshold > 0.0 && self.grow_threshold <= 100.0) {
            return Err(Error::InvalidConfig(format!(
                "grow_threshold must be in (0, 100], got {}",
                self.grow_threshold
            )));
        }
        if !(self.eroc_threshold_scale > 0.0 && self.eroc_threshold_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "eroc_threshold_scale must be positive, got {}",
                self.eroc_threshold_scale
            )));
        }
        if let Some(s) = self.glrt_sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "glrt_sigma must be positive, got {s}"
                )));
            }
        }
        if !(self.glrt_gamma >= 0.0 && self.glrt_gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "glrt_gamma must be nonnegative, got {}",
                self.glrt_gamma
            )));
        }
        Ok(())
    }
}

/// A partial configuration: one layer of the flags > file > defaults
/// stack. Unset fields leave the lower layer untouched.
#[derive(Debug, Clone, Default)]
pub struct ConfigPatch {
    pub feature: Option<FeatureMethod>,
    pub window: Option<usize>,
    pub delta_thresh: Option<u8>,
    pub use_eroc: Option<bool>,
    pub eroc_threshold_scale: Option<f64>,
    pub grow_threshold: Option<f64>,
    pub seed_radius: Option<usize>,
    pub glrt_gamma: Option<f64>,
    pub glrt_sigma: Option<f64>,
    pub normalize: Option<bool>,
    pub exclude_zero: Option<bool>,
    pub pre_blur: Option<usize>,
    pub full_frame_eval: Option<bool>,
    pub rng_seed: Option<u64>,
    pub baseline: Option<PathBuf>,
    pub followup: Option<PathBuf>,
    pub tumor_mask: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

fn parse_as<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::InvalidConfig(format!(
            "{key}: expected true or false, got {value:?}"
        ))),
    }
}

impl ConfigPatch {
    /// Parse a flat key = value config file. Blank lines and lines
    /// starting with '#' are skipped.
    pub fn from_file(path: impl AsRef<Path>) -> Result<ConfigPatch> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut patch = ConfigPatch::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "{}:{}: expected key = value, got {line:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            patch.set(key.trim(), value.trim())?;
        }
        Ok(patch)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "feature" => self.feature = Some(parse_as(key, value)?),
            "window" => self.window = Some(parse_as(key, value)?),
            "delta_thresh" => self.delta_thresh = Some(parse_as(key, value)?),
            "use_eroc" => self.use_eroc = Some(parse_bool(key, value)?),
            "eroc_threshold_scale" => self.eroc_threshold_scale = Some(parse_as(key, value)?),
            "grow_threshold" => self.grow_threshold = Some(parse_as(key, value)?),
            "seed_radius" => self.seed_radius = Some(parse_as(key, value)?),
            "glrt_gamma" => self.glrt_gamma = Some(parse_as(key, value)?),
            "glrt_sigma" => self.glrt_sigma = Some(parse_as(key, value)?),
            "normalize" => self.normalize = Some(parse_bool(key, value)?),
            "exclude_zero" => self.exclude_zero = Some(parse_bool(key, value)?),
            "pre_blur" => self.pre_blur = Some(parse_as(key, value)?),
            "full_frame_eval" => self.full_frame_eval = Some(parse_bool(key, value)?),
            "rng_seed" => self.rng_seed = Some(parse_as(key, value)?),
            "baseline" => self.baseline = Some(PathBuf::from(value)),
            "followup" => self.followup = Some(PathBuf::from(value)),
            "tumor_mask" => self.tumor_mask = Some(PathBuf::from(value)),
            "ground_truth" => self.ground_truth = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            _ => {
                return Err(Error::InvalidConfig(format!("unknown config key {key:?}")));
            }
        }
        Ok(())
    }

    pub fn apply(&self, cfg: &mut PipelineConfig) {
        macro_rules! take {
            ($($field:ident),+ $(,)?) => {
                $(if let Some(v) = self.$field.clone() { cfg.$field = v; })+
            };
        }
        take!(
            feature,
            window,
            delta_thresh,
            use_eroc,
            eroc_threshold_scale,
            grow_threshold,
            seed_radius,
            glrt_gamma,
            normalize,
            exclude_zero,
            pre_blur,
            full_frame_eval,
            rng_seed,
        );
        if self.glrt_sigma.is_some() {
            cfg.glrt_sigma = self.glrt_sigma;
        }
        macro_rules! take_path {
            ($($field:ident),+ $(,)?) => {
                $(if let Some(v) = &self.$field { cfg.$field = Some(v.clone()); })+
            };
        }
        take_path!(baseline, followup, tumor_mask, ground_truth);
        if let Some(v) = &self.out_dir {
            cfg.out_dir = v.clone();
        }
    }
}

/// Resolve the effective configuration: defaults, then the config
/// file, then command-line flags.
pub fn layered_config(file: Option<&ConfigPatch>, flags: &ConfigPatch) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Some(patch) = file {
        patch.apply(&mut cfg);
    }
    flags.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn detect_options(cfg: &PipelineConfig) -> DetectOptions {
    DetectOptions {
        feature: cfg.feature,
        params: FeatureParams {
            window: cfg.window,
            delta_thresh: cfg.delta_thresh,
        },
        detect: DetectConfig {
            grow_threshold: cfg.grow_threshold,
            tumor_dilation_radius: cfg.seed_radius,
            connectivity: 8,
        },
        normalize: cfg.normalize,
        exclude_zero: cfg.exclude_zero,
        use_roi: cfg.use_eroc,
        roi_threshold_scale: cfg.eroc_threshold_scale,
        glrt_sigma: cfg.glrt_sigma,
        glrt_gamma: cfg.glrt_gamma,
    }
}

/// Detection plus, when ground truth was supplied, its score.
#[derive(Debug, Clone)]
pub struct PairOutcome {
    pub detection: Detection,
    pub report: Option<EvalReport>,
}

/// Run the chain on an in-memory pair. Scoring is restricted to the
/// extracted region unless the config asks for full-frame evaluation;
/// an empty extraction falls back to the whole frame so misses still
/// count against the detector.
pub fn run_pair(
    baseline: &Image,
    followup: &Image,
    tumor: &ChangeMask,
    gt: Option<&ChangeMask>,
    band: SizeBand,
    cfg: &PipelineConfig,
) -> Result<PairOutcome> {
    cfg.validate()?;
    let a = gaussian_blur(baseline, cfg.pre_blur);
    let b = gaussian_blur(followup, cfg.pre_blur);
    let detection = run_detection(&a, &b, tumor, &detect_options(cfg))?;
    let report = match gt {
        Some(gt) => {
            let universe = if cfg.full_frame_eval {
                Roi::full(baseline.width(), baseline.height())
            } else {
                detection.roi
            };
            Some(evaluate(&detection.mask, gt, &universe, band)?)
        }
        None => None,
    };
    Ok(PairOutcome { detection, report })
}

fn json_pretty(v: &Value) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(v).expect("json value serializes");
    bytes.push(b'\n');
    bytes
}

/// Write via a temp file in the same directory, then rename, so a
/// reader never sees a half-written file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// The scored report document: counts, measures, band, and the full
/// effective configuration.
pub fn report_doc(report: &EvalReport, cfg: &PipelineConfig) -> Value {
    let mut doc = serde_json::to_value(report).expect("report serializes");
    doc.as_object_mut()
        .expect("report is an object")
        .insert("config_echo".into(), config_echo(cfg));
    doc
}

fn config_echo(cfg: &PipelineConfig) -> Value {
    serde_json::to_value(cfg).expect("config serializes")
}

/// Paths produced by a path-driven run.
#[derive(Debug, Clone)]
pub struct PipelineArtifacts {
    pub mask: PathBuf,
    pub overlay: PathBuf,
    pub report: PathBuf,
}

/// Run the chain from configured paths and write the artifacts: mask
/// and overlay images plus a JSON report.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<(PairOutcome, PipelineArtifacts)> {
    cfg.validate()?;
    let need = |p: &Option<PathBuf>, what: &str| {
        p.clone()
            .ok_or_else(|| Error::InvalidConfig(format!("{what} path is required")))
    };
    let baseline = load_image(&need(&cfg.baseline, "baseline image")?)?;
    let followup = load_image(&need(&cfg.followup, "follow-up image")?)?;
    let tumor = load_mask(&need(&cfg.tumor_mask, "tumor mask")?)?;
    let gt = match &cfg.ground_truth {
        Some(p) => Some(load_mask(p)?),
        None => None,
    };
    let outcome = run_pair(
        &baseline,
        &followup,
        &tumor,
        gt.as_ref(),
        SizeBand::Overall,
        cfg,
    )?;

    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let artifacts = PipelineArtifacts {
        mask: cfg.out_dir.join("mask.png"),
        overlay: cfg.out_dir.join("overlay.png"),
        report: cfg.out_dir.join("report.json"),
    };
    save_mask(&outcome.detection.mask, &artifacts.mask)?;
    save_overlay(&followup, &outcome.detection.mask, &artifacts.overlay)?;
    let doc = match &outcome.report {
        Some(report) => report_doc(report, cfg),
        // nothing to score without ground truth; record what ran
        None => json!({
            "roi": outcome.detection.roi,
            "changed_pixels": outcome.detection.mask.count(),
            "config_echo": config_echo(cfg),
        }),
    };
    write_atomic(&artifacts.report, &json_pretty(&doc))?;
    Ok((outcome, artifacts))
}

/// One simulation in a sweep manifest.
#[derive(Debug, Clone, Deserialize)]
pub struct SweepEntry {
    pub base_image: PathBuf,
    pub tumor_mask: PathBuf,
    pub direction: Direction,
    pub fraction: f64,
    #[serde(default)]
    pub deform_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SweepManifest {
    pub entries: Vec<SweepEntry>,
}

impl SweepManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<SweepManifest> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: SweepManifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
            path: path.into(),
            detail: e.to_string(),
        })?;
        if manifest.entries.is_empty() {
            return Err(Error::Manifest {
                path: path.into(),
                detail: "manifest has no entries".into(),
            });
        }
        Ok(manifest)
    }
}

/// The two methods every sweep compares.
pub const SWEEP_METHODS: [FeatureMethod; 2] = [FeatureMethod::Wlmi, FeatureMethod::Glrt];

#[derive(Debug, Clone, Serialize)]
pub struct SweepFailure {
    pub entry: usize,
    pub error: String,
}

/// Aggregate tables per method, collected per-entry failures, and the
/// files written.
#[derive(Debug)]
pub struct SweepOutcome {
    pub tables: Vec<(FeatureMethod, Vec<BandSummary>)>,
    pub failures: Vec<SweepFailure>,
    pub files: Vec<PathBuf>,
}

struct EntryRun {
    report: EvalReport,
    /// Per-pixel feature score and truth over the scored region, for
    /// pooled threshold sweeps.
    scores: Vec<(f64, bool)>,
}

fn collect_scores(map: &SimilarityMap, gt: &ChangeMask) -> Vec<(f64, bool)> {
    let roi = map.roi();
    if roi.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(roi.area());
    for r in roi.row_range() {
        for c in roi.col_range() {
            out.push((map.get(r, c), gt.get(r, c)));
        }
    }
    out
}

fn run_entry(
    idx: usize,
    entry: &SweepEntry,
    cfg: &PipelineConfig,
    runs_dir: &Path,
) -> Result<Vec<EntryRun>> {
    let base = load_image(&entry.base_image)?;
    let tumor = load_mask(&entry.tumor_mask)?;
    let spec = SimSpec {
        direction: entry.direction,
        fraction: entry.fraction,
        deform_sigma: entry.deform_sigma,
        rng_seed: entry.seed,
    };
    let sim = simulate_followup(&base, &tumor, &spec)?;
    let band = band_for(entry.fraction);

    let mut runs = Vec::with_capacity(SWEEP_METHODS.len());
    for method in SWEEP_METHODS {
        let mut run_cfg = cfg.clone();
        run_cfg.feature = method;
        run_cfg.baseline = Some(entry.base_image.clone());
        run_cfg.tumor_mask = Some(entry.tumor_mask.clone());
        let outcome = run_pair(&base, &sim.image, &tumor, Some(&sim.ground_truth), band, &run_cfg)?;
        let report = outcome.report.expect("ground truth was supplied");
        write_atomic(
            &runs_dir.join(format!("entry{idx:03}_{method}.json")),
            &json_pretty(&report_doc(&report, &run_cfg)),
        )?;
        runs.push(EntryRun {
            report,
            scores: collect_scores(&outcome.detection.map, &sim.ground_truth),
        });
    }
    Ok(runs)
}

const BAND_ORDER: [SizeBand; 4] = [
    SizeBand::Small,
    SizeBand::Mid,
    SizeBand::Large,
    SizeBand::Overall,
];

fn band_index(band: SizeBand) -> usize {
    BAND_ORDER.iter().position(|b| *b == band).unwrap()
}

fn band_slug(band: SizeBand) -> &'static str {
    match band {
        SizeBand::Small => "small",
        SizeBand::Mid => "mid",
        SizeBand::Large => "large",
        SizeBand::Overall => "overall",
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Simulate and score every manifest entry with both methods, then
/// write `aggregate.csv`, pooled `roc_<band>_<method>.csv` files, and
/// `summary.json` under `out_dir`. Entry failures are collected, not
/// fatal; per-entry reports land in `out_dir/runs/`.
pub fn run_sweep(
    manifest: &SweepManifest,
    cfg: &PipelineConfig,
    out_dir: &Path,
    jobs: Option<usize>,
) -> Result<SweepOutcome> {
    cfg.validate()?;
    let runs_dir = out_dir.join("runs");
    fs::create_dir_all(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let results: Vec<Result<Vec<EntryRun>>> = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .enumerate()
            .map(|(idx, entry)| run_entry(idx, entry, cfg, &runs_dir))
            .collect()
    });

    let mut failures = Vec::new();
    let mut reports: Vec<Vec<EvalReport>> = vec![Vec::new(); SWEEP_METHODS.len()];
    // pooled[method][band] holds every scored pixel of that band
    let mut pooled: Vec<Vec<Vec<(f64, bool)>>> =
        vec![vec![Vec::new(); BAND_ORDER.len()]; SWEEP_METHODS.len()];
    for (idx, result) in results.into_iter().enumerate() {
        match result {
            Ok(runs) => {
                for (mi, run) in runs.into_iter().enumerate() {
                    reports[mi].push(run.report);
                    let bi = band_index(run.report.band);
                    pooled[mi][bi].extend_from_slice(&run.scores);
                    pooled[mi][band_index(SizeBand::Overall)].extend(run.scores);
                }
            }
            Err(e) => failures.push(SweepFailure {
                entry: idx,
                error: e.to_string(),
            }),
        }
    }

    let mut files = Vec::new();
    let mut tables = Vec::new();
    for (mi, method) in SWEEP_METHODS.into_iter().enumerate() {
        let change_when_below = method != FeatureMethod::Glrt;
        let mut table = aggregate(&reports[mi]);
        for summary in &mut table {
            let samples = &pooled[mi][band_index(summary.band)];
            let curve = roc_from_scores(samples, change_when_below).ok();
            summary.mean.auc = curve.as_ref().map(|c| c.auc());
            if let Some(curve) = curve {
                let path = out_dir.join(format!("roc_{}_{}.csv", band_slug(summary.band), method));
                let mut csv = String::from("fpr,tpr\n");
                for (fpr, tpr) in &curve.points {
                    csv.push_str(&format!("{fpr},{tpr}\n"));
                }
                write_atomic(&path, csv.as_bytes())?;
                files.push(path);
            }
        }
        tables.push((method, table));
    }

    let mut csv = String::from("band,method,runs,acc,ppv,spc,tpr,fpr,vor,auc\n");
    for band in BAND_ORDER {
        for (method, table) in &tables {
            if let Some(s) = table.iter().find(|s| s.band == band) {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{}\n",
                    s.band,
                    method,
                    s.runs,
                    s.mean.acc,
                    fmt_opt(s.mean.ppv),
                    fmt_opt(s.mean.spc),
                    fmt_opt(s.mean.tpr),
                    fmt_opt(s.mean.fpr),
                    fmt_opt(s.mean.vor),
                    fmt_opt(s.mean.auc),
                ));
            }
        }
    }
    let aggregate_path = out_dir.join("aggregate.csv");
    write_atomic(&aggregate_path, csv.as_bytes())?;
    files.push(aggregate_path);

    let summary = json!({
        "aggregate": Value::Object(
            tables
                .iter()
                .map(|(method, table)| {
                    (method.to_string(), serde_json::to_value(table).expect("table serializes"))
                })
                .collect(),
        ),
        "failures": failures,
        "config_echo": config_echo(cfg),
    });
    let summary_path = out_dir.join("summary.json");
    write_atomic(&summary_path, &json_pretty(&summary))?;
    files.push(summary_path);

    Ok(SweepOutcome {
        tables,
        failures,
        files,
    })
}
