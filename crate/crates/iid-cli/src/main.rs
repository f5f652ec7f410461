//! Command-line surface for the decomposition pipelines. Every run resolves
//! its configuration (defaults < config file < flags), executes one module
//! pipeline, and emits a JSON report carrying the resolved config so runs
//! are reproducible byte for byte.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use iid_core::cluster::{adaptive_k, build_features, kmeans, labels_to_reflectance};
use iid_core::config::{KChoice, PipelineConfig};
use iid_core::crf;
use iid_core::error::Error;
use iid_core::eval::{central_tendency, lmse, load_iiw_judgments, load_mit_case, whdr, CentralTendency};
use iid_core::io::{load_raster, save_raster, write_png16_gray};
use iid_core::raster::{LinearImage, Linearization, ScalarField};
use iid_core::ratios::{ratio_field, significance_mask_from};
use iid_core::retinex::retinex_decompose;
use iid_core::synth::{gen_scene, ShadingKind};

#[derive(Parser)]
#[command(name = "iid", version, about = "Intrinsic image decomposition via color ratios")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Full decomposition: clustering refined by the dense pairwise model.
    Decompose(DecomposeArgs),
    /// Gradient-classification decomposition with least-squares reintegration.
    Retinex(RetinexArgs),
    /// Neighbor cross-ratio maps and significance masks.
    Ratios(RatiosArgs),
    /// Feature clustering only: initial piecewise-constant reflectance.
    Cluster(ClusterArgs),
    /// Generate a synthetic scene with ground truth.
    Synth(SynthArgs),
    /// Score decompositions against a dataset.
    #[command(subcommand)]
    Eval(EvalCmd),
}

/// Flags shared by pipeline subcommands; each one overrides the matching
/// config field after the config file is applied.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON config file (partial files allowed; missing fields keep defaults).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named parameter preset: "mit" or "iiw".
    #[arg(long)]
    preset: Option<String>,
    /// Cluster count: "auto" or a positive integer.
    #[arg(long)]
    k: Option<String>,
    /// Weight of ratio features in the clustering metric.
    #[arg(long)]
    ratio_weight: Option<f64>,
    /// Use ratio features in clustering (true/false).
    #[arg(long)]
    ratio_features: Option<bool>,
    /// Add the fused-ratio channel to the pairwise kernel (true/false).
    #[arg(long)]
    ratio_pairwise: Option<bool>,
    /// OR ratio evidence into the gradient classifier (true/false).
    #[arg(long)]
    ccr: Option<bool>,
    /// Guided-filter post-processing of reflectance (true/false).
    #[arg(long)]
    guided: Option<bool>,
    /// Clustering seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Pre-smoothing sigma for ratio maps.
    #[arg(long)]
    sigma: Option<f64>,
    /// Mean-field sweep count.
    #[arg(long)]
    iterations: Option<usize>,
    /// Input transfer curve: "srgb" or "identity".
    #[arg(long)]
    linear: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig, Error> {
        let mut config = if let Some(name) = &self.preset {
            PipelineConfig::preset(name)?
        } else if let Some(path) = &self.config {
            PipelineConfig::from_file(path)?
        } else {
            PipelineConfig::default()
        };
        if let Some(k) = &self.k {
            config.cluster.k = if k == "auto" {
                KChoice::Adaptive
            } else {
                let n: usize = k.parse().map_err(|_| {
                    Error::InvalidParameter(format!("--k expects \"auto\" or a count, got {k:?}"))
                })?;
                if n == 0 {
                    return Err(Error::InvalidParameter("--k must be positive".into()));
                }
                KChoice::Fixed(n)
            };
        }
        if let Some(w) = self.ratio_weight {
            config.cluster.ratio_weight = w;
        }
        if let Some(v) = self.ratio_features {
            config.cluster.use_ratio_features = v;
        }
        if let Some(v) = self.ratio_pairwise {
            config.crf_ratio_feature = v;
        }
        if let Some(v) = self.ccr {
            config.use_ccr = v;
        }
        if let Some(v) = self.guided {
            config.use_guided_filter = v;
        }
        if let Some(s) = self.seed {
            config.cluster.seed = s;
        }
        if let Some(s) = self.sigma {
            config.retinex.sigma = s;
        }
        if let Some(n) = self.iterations {
            config.crf.iterations = n;
        }
        if let Some(mode) = &self.linear {
            config.linearization = match mode.as_str() {
                "srgb" => Linearization::Srgb,
                "identity" => Linearization::Identity,
                other => {
                    return Err(Error::InvalidParameter(format!(
                        "--linear expects \"srgb\" or \"identity\", got {other:?}"
                    )))
                }
            };
        }
        Ok(config)
    }
}

#[derive(Args)]
struct DecomposeArgs {
    input: PathBuf,
    /// Reflectance output (.png or .iidf).
    #[arg(long)]
    out_r: Option<PathBuf>,
    /// Shading output (.png or .iidf).
    #[arg(long)]
    out_s: Option<PathBuf>,
    /// JSON report path (stdout when omitted).
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct RetinexArgs {
    input: PathBuf,
    #[arg(long)]
    out_r: Option<PathBuf>,
    #[arg(long)]
    out_s: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct RatiosArgs {
    input: PathBuf,
    /// Fused ratio magnitude map (16-bit gray PNG, clipped to [0,1]).
    #[arg(long)]
    out_fused: Option<PathBuf>,
    /// Significance mask (16-bit gray PNG).
    #[arg(long)]
    out_mask: Option<PathBuf>,
    /// Significance threshold on the fused magnitude.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ClusterArgs {
    input: PathBuf,
    /// Clustered reflectance output.
    #[arg(long)]
    out_r: Option<PathBuf>,
    /// Label map output (16-bit gray PNG, labels scaled to [0,1]).
    #[arg(long)]
    out_labels: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SynthArgs {
    /// Image size as WxH, e.g. 128x128.
    #[arg(long)]
    size: String,
    /// Number of distinct reflectance colors.
    #[arg(long)]
    colors: usize,
    /// Shading kind.
    #[arg(long, value_enum)]
    shading: ShadingArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Illuminant color as r,g,b.
    #[arg(long, default_value = "1,1,1")]
    illuminant: String,
    /// Output directory for image, ground truth and manifest.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ShadingArg {
    Smooth,
    Shadow,
    Mixed,
}

impl From<ShadingArg> for ShadingKind {
    fn from(v: ShadingArg) -> Self {
        match v {
            ShadingArg::Smooth => ShadingKind::Smooth,
            ShadingArg::Shadow => ShadingKind::Shadow,
            ShadingArg::Mixed => ShadingKind::Mixed,
        }
    }
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Dense ground truth: directory of case subdirectories, each holding
    /// diffuse/reflectance/shading/mask.png.
    Mit(EvalMitArgs),
    /// Sparse judgments: directory of <name>.png with <name>.json beside.
    Iiw(EvalIiwArgs),
}

#[derive(Args)]
struct EvalMitArgs {
    dir: PathBuf,
    /// Which pipeline produces the scored reflectance.
    #[arg(long, default_value = "final")]
    method: String,
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalIiwArgs {
    dir: PathBuf,
    #[arg(long, default_value = "final")]
    method: String,
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

fn emit_report<T: Serialize>(report: &T, path: Option<&Path>) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::InvalidParameter(format!("report serialization: {e}")))?;
    text.push('\n');
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct DecomposeReport<'a> {
    command: &'static str,
    input: String,
    width: usize,
    height: usize,
    k: usize,
    energy: crf::EnergyBreakdown,
    reverted: bool,
    config: &'a PipelineConfig,
}

fn run_decompose(args: &DecomposeArgs) -> Result<(), Error> {
    let config = args.config.resolve()?;
    let img = load_raster(&args.input, config.linearization)?;
    let out = crf::decompose(&img, &config)?;
    if let Some(p) = &args.out_r {
        save_raster(&out.reflectance, p, config.linearization)?;
    }
    if let Some(p) = &args.out_s {
        save_raster(&out.shading, p, config.linearization)?;
    }
    emit_report(
        &DecomposeReport {
            command: "decompose",
            input: args.input.display().to_string(),
            width: img.width(),
            height: img.height(),
            k: out.k,
            energy: out.energy,
            reverted: out.reverted,
            config: &config,
        },
        args.report.as_deref(),
    )
}

#[derive(Serialize)]
struct RetinexReport<'a> {
    command: &'static str,
    input: String,
    width: usize,
    height: usize,
    kept_gradients: usize,
    degraded: bool,
    residual: f64,
    config: &'a PipelineConfig,
}

fn run_retinex(args: &RetinexArgs) -> Result<(), Error> {
    let config = args.config.resolve()?;
    let img = load_raster(&args.input, config.linearization)?;
    let out = retinex_decompose(&img, &config.retinex, config.use_ccr)?;
    if let Some(p) = &args.out_r {
        save_raster(&out.reflectance, p, config.linearization)?;
    }
    if let Some(p) = &args.out_s {
        save_raster(&out.shading, p, config.linearization)?;
    }
    emit_report(
        &RetinexReport {
            command: "retinex",
            input: args.input.display().to_string(),
            width: img.width(),
            height: img.height(),
            kept_gradients: out.keep.count(),
            degraded: out.degraded,
            residual: out.residual,
            config: &config,
        },
        args.report.as_deref(),
    )
}

#[derive(Serialize)]
struct RatiosReport<'a> {
    command: &'static str,
    input: String,
    width: usize,
    height: usize,
    sigma: f64,
    threshold: f64,
    significant: usize,
    total: usize,
    config: &'a PipelineConfig,
}

fn run_ratios(args: &RatiosArgs) -> Result<(), Error> {
    let config = args.config.resolve()?;
    let threshold = args.threshold.unwrap_or(config.retinex.ccr_threshold);
    let img = load_raster(&args.input, config.linearization)?;
    let field = ratio_field(&img, config.retinex.sigma)?;
    let mask = significance_mask_from(&field.fused, threshold);
    if let Some(p) = &args.out_fused {
        let clipped = ScalarField::from_vec(
            field.width(),
            field.height(),
            field.fused.data().iter().map(|v| v.min(1.0)).collect(),
        )?;
        write_png16_gray(&clipped, p)?;
    }
    if let Some(p) = &args.out_mask {
        write_png16_gray(&mask, p)?;
    }
    let significant = mask.data().iter().filter(|&&v| v > 0.5).count();
    emit_report(
        &RatiosReport {
            command: "ratios",
            input: args.input.display().to_string(),
            width: img.width(),
            height: img.height(),
            sigma: config.retinex.sigma,
            threshold,
            significant,
            total: img.n_pixels(),
            config: &config,
        },
        args.report.as_deref(),
    )
}

#[derive(Serialize)]
struct ClusterReport<'a> {
    command: &'static str,
    input: String,
    width: usize,
    height: usize,
    k: usize,
    iterations: usize,
    converged: bool,
    config: &'a PipelineConfig,
}

fn run_cluster(args: &ClusterArgs) -> Result<(), Error> {
    let config = args.config.resolve()?;
    let img = load_raster(&args.input, config.linearization)?;
    let feats = build_features(&img, config.cluster.use_ratio_features, config.cluster.ratio_weight)?;
    let k = match config.cluster.k {
        KChoice::Adaptive => adaptive_k(&img),
        KChoice::Fixed(k) => k,
    };
    let model = kmeans(&feats, k, config.cluster.seed)?;
    if let Some(p) = &args.out_r {
        let refl = labels_to_reflectance(&img, &model.labels, k)?;
        save_raster(&refl, p, config.linearization)?;
    }
    if let Some(p) = &args.out_labels {
        let denom = (k - 1).max(1) as f64;
        let data = model.labels.iter().map(|&l| l as f64 / denom).collect();
        let field = ScalarField::from_vec(img.width(), img.height(), data)?;
        write_png16_gray(&field, p)?;
    }
    emit_report(
        &ClusterReport {
            command: "cluster",
            input: args.input.display().to_string(),
            width: img.width(),
            height: img.height(),
            k,
            iterations: model.iterations,
            converged: model.converged,
            config: &config,
        },
        args.report.as_deref(),
    )
}

#[derive(Serialize)]
struct SynthManifest {
    command: &'static str,
    seed: u64,
    width: usize,
    height: usize,
    n_colors: usize,
    shading: ShadingKind,
    illuminant: [f64; 3],
    /// Distinct reflectance colors, sorted for determinism.
    palette: Vec<[f64; 3]>,
    files: Vec<String>,
    /// PNG outputs carry this transfer curve.
    encoding: &'static str,
}

fn parse_size(text: &str) -> Result<(usize, usize), Error> {
    let parts: Vec<&str> = text.split('x').collect();
    let bad = || Error::InvalidParameter(format!("--size expects WxH, got {text:?}"));
    if parts.len() != 2 {
        return Err(bad());
    }
    let w: usize = parts[0].parse().map_err(|_| bad())?;
    let h: usize = parts[1].parse().map_err(|_| bad())?;
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

fn parse_illuminant(text: &str) -> Result<[f64; 3], Error> {
    let bad = || Error::InvalidParameter(format!("--illuminant expects r,g,b, got {text:?}"));
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    if parts.len() != 3 {
        return Err(bad());
    }
    Ok([parts[0], parts[1], parts[2]])
}

fn palette_of(img: &LinearImage) -> Vec<[f64; 3]> {
    let mut seen = std::collections::BTreeSet::new();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let p = img.pixel(x, y);
            seen.insert((p[0].to_bits(), p[1].to_bits(), p[2].to_bits()));
        }
    }
    seen.iter()
        .map(|&(r, g, b)| [f64::from_bits(r), f64::from_bits(g), f64::from_bits(b)])
        .collect()
}

fn run_synth(args: &SynthArgs) -> Result<(), Error> {
    let (w, h) = parse_size(&args.size)?;
    let illuminant = parse_illuminant(&args.illuminant)?;
    let scene = gen_scene(w, h, args.colors, args.shading.into(), illuminant, args.seed)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let encode = Linearization::Srgb;
    save_raster(&scene.image, &args.out_dir.join("image.png"), encode)?;
    save_raster(&scene.reflectance, &args.out_dir.join("reflectance.png"), encode)?;
    let shading_rgb = {
        let mut img = LinearImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let s = scene.shading.get(x, y);
                img.set_pixel(x, y, [s, s, s]);
            }
        }
        img
    };
    save_raster(&shading_rgb, &args.out_dir.join("shading.png"), encode)?;
    let manifest = SynthManifest {
        command: "synth",
        seed: args.seed,
        width: w,
        height: h,
        n_colors: args.colors,
        shading: args.shading.into(),
        illuminant,
        palette: palette_of(&scene.reflectance),
        files: vec!["image.png".into(), "reflectance.png".into(), "shading.png".into()],
        encoding: "srgb",
    };
    emit_report(&manifest, Some(&args.out_dir.join("manifest.json")))
}

fn decompose_reflectance(
    img: &LinearImage,
    method: &str,
    config: &PipelineConfig,
) -> Result<LinearImage, Error> {
    match method {
        "final" | "crf" => Ok(crf::decompose(img, config)?.reflectance),
        "retinex" => Ok(retinex_decompose(img, &config.retinex, config.use_ccr)?.reflectance),
        other => Err(Error::InvalidParameter(format!(
            "--method expects \"final\", \"crf\" or \"retinex\", got {other:?}"
        ))),
    }
}

#[derive(Serialize)]
struct MitCaseReport {
    case: String,
    lmse_reflectance: f64,
    lmse_shading: f64,
}

#[derive(Serialize)]
struct EvalMitReport<'a> {
    command: &'static str,
    dataset: String,
    method: String,
    cases: Vec<MitCaseReport>,
    reflectance: CentralTendency,
    shading: CentralTendency,
    config: &'a PipelineConfig,
}

fn sorted_entries(dir: &Path, want_dir: bool) -> Result<Vec<PathBuf>, Error> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() == want_dir)
        .collect();
    entries.sort();
    Ok(entries)
}

fn run_eval_mit(args: &EvalMitArgs) -> Result<(), Error> {
    let config = args.config.resolve()?;
    let case_dirs = sorted_entries(&args.dir, true)?;
    if case_dirs.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no case directories under {}",
            args.dir.display()
        )));
    }
    let mut cases = Vec::with_capacity(case_dirs.len());
    for dir in &case_dirs {
        let case = load_mit_case(dir)?;
        let refl = decompose_reflectance(&case.diffuse, &args.method, &config)?;
        let shading = crf::estimate_shading(&case.diffuse, &refl)?;
        cases.push(MitCaseReport {
            case: dir.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            lmse_reflectance: lmse(&refl, &case.reflectance, Some(&case.mask))?,
            lmse_shading: lmse(&shading, &case.shading, Some(&case.mask))?,
        });
    }
    let refl_scores: Vec<f64> = cases.iter().map(|c| c.lmse_reflectance).collect();
    let shading_scores: Vec<f64> = cases.iter().map(|c| c.lmse_shading).collect();
    emit_report(
        &EvalMitReport {
            command: "eval-mit",
            dataset: args.dir.display().to_string(),
            method: args.method.clone(),
            cases,
            reflectance: central_tendency(&refl_scores)?,
            shading: central_tendency(&shading_scores)?,
            config: &config,
        },
        args.report.as_deref(),
    )
}

#[derive(Serialize)]
struct IiwCaseReport {
    case: String,
    whdr: f64,
    judgments: usize,
}

#[derive(Serialize)]
struct EvalIiwReport<'a> {
    command: &'static str,
    dataset: String,
    method: String,
    cases: Vec<IiwCaseReport>,
    whdr: CentralTendency,
    config: &'a PipelineConfig,
}

fn run_eval_iiw(args: &EvalIiwArgs) -> Result<(), Error> {
    let config = args.config.resolve()?;
    let images: Vec<PathBuf> = sorted_entries(&args.dir, false)?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    if images.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no .png images under {}",
            args.dir.display()
        )));
    }
    let mut cases = Vec::with_capacity(images.len());
    for png in &images {
        let judgments_path = png.with_extension("json");
        let judgments = load_iiw_judgments(&judgments_path)?;
        let img = load_raster(png, config.linearization)?;
        let refl = decompose_reflectance(&img, &args.method, &config)?;
        cases.push(IiwCaseReport {
            case: png.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
            whdr: whdr(&refl, &judgments)?,
            judgments: judgments.len(),
        });
    }
    let scores: Vec<f64> = cases.iter().map(|c| c.whdr).collect();
    emit_report(
        &EvalIiwReport {
            command: "eval-iiw",
            dataset: args.dir.display().to_string(),
            method: args.method.clone(),
            cases,
            whdr: central_tendency(&scores)?,
            config: &config,
        },
        args.report.as_deref(),
    )
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.cmd {
        Cmd::Decompose(args) => run_decompose(args),
        Cmd::Retinex(args) => run_retinex(args),
        Cmd::Ratios(args) => run_ratios(args),
        Cmd::Cluster(args) => run_cluster(args),
        Cmd::Synth(args) => run_synth(args),
        Cmd::Eval(EvalCmd::Mit(args)) => run_eval_mit(args),
        Cmd::Eval(EvalCmd::Iiw(args)) => run_eval_iiw(args),
    }
}

fn main() -> ExitCode {
    // Worker cap: IID_THREADS bounds the global pool before any use.
    if let Ok(text) = std::env::var("IID_THREADS") {
        if let Ok(n) = text.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
