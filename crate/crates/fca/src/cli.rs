//! The `fca` command line.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use fca_core::features::ExtractorKind;
use fca_core::metrics::LabeledScores;
use fca_core::pipeline::{center_crop_masks, localize, localize_features};
use fca_core::{AnomalyMap, Comparator, EvalReport, Mask, PipelineConfig};

use crate::bench::{run_bench, BenchSpec};
use crate::config::{self, Entries};
use crate::dataset_io::{self as io, AitexSpec, ClassIndex, Layout, Sample};
use crate::error::{Error, Result};
use crate::report::{write_file, Report, RunManifest};

pub const THREADS_ENV: &str = "FCA_NUM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "fca", version, about = "Zero-shot anomaly localization for textures")]
pub struct Cli {
    /// Worker threads; falls back to FCA_NUM_THREADS, then to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score one image (or one feature file) and write `<name>.fmap` and `<name>.png`.
    Localize(LocalizeArgs),
    /// Score a dataset and write per-class and mean metrics.
    Evaluate(EvaluateArgs),
    /// Time comparators on synthetic inputs of growing size.
    Bench(BenchArgs),
    /// Cut Aitex strips into square defective frames (Flat layout).
    PrepareAitex(AitexArgs),
}

/// Pipeline settings shared by all commands. Flags override `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct PipelineArgs {
    /// key = value file, applied before the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// prelim-256, lowres-320 or fullres.
    #[arg(long)]
    pub preset: Option<String>,
    /// colors, random, steerable or laws.
    #[arg(long)]
    pub extractor: Option<String>,
    /// moments, histogram, sww or fca.
    #[arg(long)]
    pub comparator: Option<String>,
    /// global-mean, global-histogram, median-order, random, knn or all.
    #[arg(long)]
    pub reference: Option<String>,
    #[arg(long)]
    pub reference_count: Option<usize>,
    #[arg(long)]
    pub knn_k: Option<usize>,
    #[arg(long)]
    pub allow_all_patches: bool,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub sigma_p: Option<f64>,
    #[arg(long)]
    pub sigma_s: Option<f64>,
    #[arg(long)]
    pub sigma_w: Option<f64>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `N`, `HxW` or `none`.
    #[arg(long)]
    pub resize: Option<String>,
    #[arg(long)]
    pub crop_fraction: Option<f64>,
}

impl PipelineArgs {
    pub fn entries(&self) -> Result<Entries> {
        let mut e = match &self.config {
            Some(path) => config::parse_text(&std::fs::read_to_string(path).map_err(Error::io(path))?)?,
            None => Entries::default(),
        };
        let mut set = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                e.push(k, v);
            }
        };
        let s = |v: &Option<String>| v.clone();
        let n = |v: Option<usize>| v.map(|v| v.to_string());
        let f = |v: Option<f64>| v.map(|v| v.to_string());
        set("preset", s(&self.preset));
        set("extractor", s(&self.extractor));
        set("comparator", s(&self.comparator));
        set("reference", s(&self.reference));
        set("reference-count", n(self.reference_count));
        set("knn-k", n(self.knn_k));
        set("allow-all-patches", self.allow_all_patches.then(|| "true".into()));
        set("patch-size", n(self.patch_size));
        set("sigma-p", f(self.sigma_p));
        set("sigma-s", f(self.sigma_s));
        set("sigma-w", f(self.sigma_w));
        set("bins", n(self.bins));
        set("seed", self.seed.map(|v| v.to_string()));
        set("resize", s(&self.resize));
        set("crop-fraction", f(self.crop_fraction));
        Ok(e)
    }
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    /// Input PNG. Optional with --features, where it only fixes the output size.
    pub input: Option<PathBuf>,
    /// Precomputed FMP1 features; skips extraction.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub root: PathBuf,
    /// mvtec or flat.
    #[arg(long, default_value = "mvtec")]
    pub layout: String,
    /// Directory mirroring the dataset with one `.fmap` per test image.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, default_value = "fca-out")]
    pub out: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Square input sides.
    #[arg(long, value_delimiter = ',', default_value = "128,256,512")]
    pub sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "fca")]
    pub methods: Vec<String>,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, default_value_t = 3)]
    pub repetitions: usize,
    /// Also write the table as comma-separated values.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct AitexArgs {
    /// Directory of defect strips.
    #[arg(long)]
    pub images: PathBuf,
    /// Directory of `<id>_mask.png` annotations.
    #[arg(long)]
    pub masks: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Columns at each strip end not covered by fabric.
    #[arg(long)]
    pub margin: usize,
    #[arg(long, default_value_t = 320)]
    pub size: u32,
}

/// `--threads`, else `FCA_NUM_THREADS`, else 0 (all cores).
pub fn thread_count(flag: Option<usize>) -> Result<usize> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("{THREADS_ENV} must be a thread count, got '{v}'"))),
        Err(_) => Ok(0),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = thread_count(cli.threads)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Localize(a) => cmd_localize(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::PrepareAitex(a) => cmd_prepare_aitex(&a),
    })
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn external_path(cfg: &PipelineConfig) -> Option<&Path> {
    match cfg.extractor.kind {
        ExtractorKind::External => cfg.extractor.external_path.as_deref().map(Path::new),
        _ => None,
    }
}

fn output_size(cfg: &PipelineConfig, natural: (usize, usize)) -> (usize, usize) {
    cfg.resize_to.unwrap_or(natural)
}

fn image_size(path: &Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(path).map_err(Error::image(path))?;
    Ok((h as usize, w as usize))
}

pub fn cmd_localize(a: &LocalizeArgs) -> Result<()> {
    let mut entries = a.pipeline.entries()?;
    if let Some(f) = &a.features {
        entries.push("features", f.display());
    }
    let cfg = config::resolve(&entries)?;
    let features = external_path(&cfg);
    let am = match (features, &a.input) {
        (Some(f), input) => {
            let fm = io::load_external_features(f)?;
            let natural = match input {
                Some(p) => image_size(p)?,
                None => (fm.height(), fm.width()),
            };
            let (h, w) = output_size(&cfg, natural);
            localize_features(&fm, &cfg, h, w)?
        }
        (None, Some(p)) => localize(&io::load_rgb(p)?, &cfg)?,
        (None, None) => return Err(Error::config("localize needs an input image or --features")),
    };
    let name = stem(features.or(a.input.as_deref()).unwrap());
    io::create_dir(&a.out)?;
    let fmap = a.out.join(format!("{name}.fmap"));
    let png = a.out.join(format!("{name}.png"));
    io::write_scores(&am, &fmap)?;
    io::write_heatmap(&am, am.min(), am.max(), &png)?;
    println!("max_score={}", am.max());
    println!("scores={}", fmap.display());
    println!("heatmap={}", png.display());
    Ok(())
}

/// Scores one test image at pipeline resolution and returns the matching
/// ground truth.
fn score_sample(
    sample: &Sample,
    root: &Path,
    features: Option<&Path>,
    cfg: &PipelineConfig,
) -> Result<(AnomalyMap, Mask)> {
    let am = match features {
        Some(dir) => {
            let rel = sample.image.strip_prefix(root).unwrap_or(&sample.image);
            let fm = io::load_external_features(&dir.join(rel).with_extension("fmap"))?;
            let (h, w) = output_size(cfg, image_size(&sample.image)?);
            localize_features(&fm, cfg, h, w)?
        }
        None => localize(&io::load_rgb(&sample.image)?, cfg)?,
    };
    let gt = match &sample.mask {
        Some(m) => io::load_mask(m)?,
        None => {
            let (h, w) = image_size(&sample.image)?;
            Mask::zeros(h, w)
        }
    };
    let gt = io::resize_mask_nearest(&gt, am.height(), am.width());
    Ok((am, gt))
}

struct ClassRun {
    report: EvalReport,
    maps: Vec<PathBuf>,
}

fn evaluate_class(
    class: &ClassIndex,
    root: &Path,
    features: Option<&Path>,
    cfg: &PipelineConfig,
    maps_dir: &Path,
) -> Result<ClassRun> {
    let mut ls = LabeledScores::default();
    let mut image_scores = Vec::new();
    let mut image_labels = Vec::new();
    let mut maps = Vec::new();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for sample in &class.samples {
        let (am, gt) = score_sample(sample, root, features, cfg)?;
        let (cam, cgt) = center_crop_masks(&am, &gt, cfg.crop_fraction)?;
        ls.push(&cam, &cgt)?;
        image_scores.push(cam.max());
        image_labels.push(sample.is_anomalous());
        lo = lo.min(am.min());
        hi = hi.max(am.max());
        let path = maps_dir.join(format!("{}.fmap", sample.key()));
        io::create_dir(path.parent().unwrap())?;
        io::write_scores(&am, &path)?;
        maps.push(path);
    }
    // heatmaps share one scale per class so that images are comparable
    for path in &maps {
        let am = io::read_scores(path)?;
        io::write_heatmap(&am, lo, hi, &path.with_extension("png"))?;
    }
    let report = EvalReport::from_image_scores(&ls, &image_scores, &image_labels)?;
    Ok(ClassRun { report, maps })
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let layout = Layout::parse(&a.layout).ok_or_else(|| Error::config(format!("unknown layout '{}'", a.layout)))?;
    let mut entries = a.pipeline.entries()?;
    if let Some(dir) = &a.features {
        entries.push("features", dir.display());
    }
    let cfg = config::resolve(&entries)?;
    let index = io::discover_dataset(&a.root, layout)?;
    if index.is_empty() {
        return Err(Error::Index(format!("no test images under {}", a.root.display())));
    }
    io::create_dir(&a.out)?;
    let features = external_path(&cfg);
    let mut per_class = Vec::new();
    let mut score_maps = Vec::new();
    for class in index.classes.iter().filter(|c| !c.samples.is_empty()) {
        let run = evaluate_class(class, &index.root, features, &cfg, &a.out.join("maps").join(&class.name))?;
        per_class.push((class.name.clone(), run.report));
        score_maps.extend(run.maps);
    }
    let report = Report::from_classes(&per_class).unwrap();
    report.write(&a.out)?;
    let resolved = config::to_entries(&cfg);
    write_file(&a.out.join("config.txt"), &config::to_text(&resolved))?;
    let manifest = RunManifest {
        config: resolved.0.into_iter().collect(),
        dataset_root: a.root.clone(),
        layout: layout.name().into(),
        seed: cfg.reference.seed,
        threads: rayon::current_num_threads(),
        timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        output_dir: a.out.clone(),
        features_dir: features.map(Path::to_path_buf),
        score_maps,
        report: report.clone(),
    };
    manifest.write(&a.out.join("manifest.json"))?;
    print!("{}", report.to_text());
    Ok(())
}

pub fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let cfg = config::resolve(&a.pipeline.entries()?)?;
    let methods = a
        .methods
        .iter()
        .map(|m| Comparator::parse(m).ok_or_else(|| Error::config(format!("unknown comparator '{m}'"))))
        .collect::<Result<Vec<_>>>()?;
    if a.sizes.is_empty() || methods.is_empty() {
        return Err(Error::config("bench needs at least one size and one method"));
    }
    let spec = BenchSpec {
        sides: a.sizes.clone(),
        methods,
        patch: cfg.patch.clone(),
        channels: a.channels,
        repetitions: a.repetitions,
        seed: cfg.reference.seed,
    };
    let report = run_bench(&spec)?;
    print!("{}", report.to_table());
    if let Some(path) = &a.csv {
        write_file(path, &report.to_csv())?;
    }
    Ok(())
}

pub fn cmd_prepare_aitex(a: &AitexArgs) -> Result<()> {
    let spec = AitexSpec {
        margin: a.margin,
        size: a.size,
    };
    let n = io::prepare_aitex(&a.images, &a.masks, &a.out, &spec)?;
    println!("frames={n}");
    Ok(())
}
