//! Command-line front-end: synthetic phantom generation, bias/noise
//! correction, metric evaluation, and batched method comparison with
//! paired significance tests.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
//! failure. The environment variable `NCBC_THREADS` caps the worker
//! count (0 = auto); outputs are byte-identical regardless of worker
//! count. Every report echoes the effective configuration and seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use ncbc::error::NcbcError;
use ncbc::field::{Field, LatticeDims, ObservedImage};
use ncbc::inference::{lowpass_baseline, ncbc_reconstruct, NcbcConfig, NcbcResult};
use ncbc::io;
use ncbc::metrics::{self, MetricSet, MetricsReport, Roi};
use ncbc::phantom::{make_synthetic_phantom, test_card, BiasParams, NoiseParams};

#[derive(Parser)]
#[command(
    name = "ncbc",
    version,
    about = "Joint bias-field correction and noise compensation for MR images"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom: observed, truth, and bias images.
    Phantom(PhantomArgs),
    /// Correct one observed image and write the estimated fields.
    Correct(CorrectArgs),
    /// Compute quality metrics for one image against ROIs (and truth).
    Evaluate(EvaluateArgs),
    /// Correct a batch of cases with several methods and compare them
    /// with paired significance tests against the uncorrected input.
    Compare(CompareArgs),
}

#[derive(Args)]
struct PhantomArgs {
    /// Clean input image (.raw or .pgm) to corrupt.
    #[arg(long, conflicts_with = "testcard", required_unless_present = "testcard")]
    clean: Option<PathBuf>,
    /// Generate the procedural test card at this size instead.
    #[arg(long, value_name = "WxH", value_parser = parse_dims)]
    testcard: Option<(usize, usize)>,
    /// Bias blob center in pixels (default: bottom center).
    #[arg(long, value_name = "X,Y", value_parser = parse_point)]
    bias_center: Option<(f64, f64)>,
    /// Bias blob sigma in pixels (default: 0.6 × the larger dimension).
    #[arg(long)]
    bias_sigma: Option<f64>,
    /// Bias gain far from the blob center.
    #[arg(long, default_value_t = 0.3)]
    gain_min: f64,
    /// Bias gain at the blob center.
    #[arg(long, default_value_t = 1.0)]
    gain_max: f64,
    /// Rician noise sigma as a fraction of the max noise-free intensity.
    #[arg(long, default_value_t = 0.05)]
    noise_sigma: f64,
    /// Seed for noise synthesis.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (created if needed).
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CorrectMethod {
    Ncbc,
    Lowpass,
}

#[derive(Args)]
struct CorrectArgs {
    /// Observed image to correct.
    #[arg(long)]
    input: PathBuf,
    /// JSON configuration file (defaults apply when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the configuration's clique seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = CorrectMethod::Ncbc)]
    method: CorrectMethod,
    /// Output path for the corrected (latent) image.
    #[arg(long)]
    out_image: PathBuf,
    /// Output path for the estimated bias field.
    #[arg(long)]
    out_bias: Option<PathBuf>,
    /// Output path for the convergence diagnostics JSON.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    /// Gaussian sigma (pixels) for --method lowpass.
    #[arg(long, default_value_t = 24.0)]
    lowpass_sigma: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Image to score.
    #[arg(long)]
    image: PathBuf,
    /// Ground-truth image; enables the correlation metric.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// ROI JSON file. Roles by name: "prostate" (signal), "background",
    /// and "homogeneous" (coefficient of variation).
    #[arg(long)]
    rois: PathBuf,
    /// Two-ROI JSON overriding the class pair for fisher / p_error.
    #[arg(long)]
    class_rois: Option<PathBuf>,
    /// Output path for the metrics report JSON.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Comma-separated paths or glob patterns (*, ? in file names).
    #[arg(long)]
    inputs: String,
    /// Comma-separated subset of {ncbc, lowpass, none}.
    #[arg(long, default_value = "ncbc,lowpass,none")]
    methods: String,
    /// ROI JSON file applied to every case.
    #[arg(long)]
    rois: PathBuf,
    /// Two-ROI JSON overriding the class pair for fisher / p_error.
    #[arg(long)]
    class_rois: Option<PathBuf>,
    /// JSON configuration file (defaults apply when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the configuration's clique seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Gaussian sigma (pixels) for the lowpass method.
    #[arg(long, default_value_t = 24.0)]
    lowpass_sigma: f64,
    /// Output path for the aggregate report JSON.
    #[arg(long)]
    report: PathBuf,
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return 1;
    }
    let result = match cli.command {
        Command::Phantom(args) => cmd_phantom(args),
        Command::Correct(args) => cmd_correct(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Compare(args) => cmd_compare(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Apply NCBC_THREADS to the global worker pool. 0 or unset = auto.
fn configure_threads() -> Result<(), String> {
    let value = match std::env::var("NCBC_THREADS") {
        Err(std::env::VarError::NotPresent) => return Ok(()),
        Err(e) => return Err(format!("NCBC_THREADS: {e}")),
        Ok(v) => v,
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| format!("NCBC_THREADS must be a nonnegative integer, got '{value}'"))?;
    if n == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("could not size the thread pool: {e}"))
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH (e.g. 64x64), got '{s}'"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width '{w}'"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height '{h}'"))?;
    if w == 0 || h == 0 {
        return Err("dimensions must be positive".into());
    }
    Ok((w, h))
}

fn parse_point(s: &str) -> Result<(f64, f64), String> {
    let (x, y) = s.split_once(',').ok_or_else(|| format!("expected X,Y, got '{s}'"))?;
    let x: f64 = x.trim().parse().map_err(|_| format!("bad coordinate '{x}'"))?;
    let y: f64 = y.trim().parse().map_err(|_| format!("bad coordinate '{y}'"))?;
    Ok((x, y))
}

fn write_json(path: &Path, doc: &serde_json::Value) -> ncbc::Result<()> {
    let mut text = serde_json::to_vec_pretty(doc).expect("report serializes");
    text.push(b'\n');
    io::atomic_write(path, &text)
}

fn stem_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "case".into())
}

// ---------------------------------------------------------------------------
// phantom
// ---------------------------------------------------------------------------

fn cmd_phantom(args: PhantomArgs) -> ncbc::Result<()> {
    let clean = match (&args.clean, args.testcard) {
        (Some(path), None) => ObservedImage::new(io::load_image(path)?)?,
        (None, Some((w, h))) => test_card(LatticeDims::new(w, h)?)?,
        _ => unreachable!("clap enforces exactly one of --clean / --testcard"),
    };
    let dims = clean.dims();
    let center = args
        .bias_center
        .unwrap_or(((dims.width - 1) as f64 / 2.0, (dims.height - 1) as f64));
    let sigma = args.bias_sigma.unwrap_or(0.6 * dims.width.max(dims.height) as f64);
    let bias_params =
        BiasParams { center, sigma, gain_max: args.gain_max, gain_min: args.gain_min };
    if !args.noise_sigma.is_finite() || args.noise_sigma < 0.0 {
        return Err(NcbcError::Config(format!(
            "noise-sigma must be a nonnegative fraction, got {}",
            args.noise_sigma
        )));
    }
    // The flag is a fraction of the maximum noise-free biased intensity;
    // turn it into the absolute sigma the generator expects.
    let (noise_free, _, _) =
        make_synthetic_phantom(&clean, &bias_params, &NoiseParams { sigma: 0.0, seed: args.seed })?;
    let abs_sigma = args.noise_sigma * noise_free.field().max();
    let (observed, truth, bias) = make_synthetic_phantom(
        &clean,
        &bias_params,
        &NoiseParams { sigma: abs_sigma, seed: args.seed },
    )?;

    fs::create_dir_all(&args.out_dir)
        .map_err(|source| NcbcError::Io { path: args.out_dir.clone(), source })?;
    io::save_image(observed.field(), &args.out_dir.join("observed.raw"))?;
    io::save_image(truth.field(), &args.out_dir.join("truth.raw"))?;
    io::save_image(bias.field(), &args.out_dir.join("bias.raw"))?;
    let doc = serde_json::json!({
        "command": "phantom",
        "clean": args.clean,
        "testcard": args.testcard.map(|(w, h)| format!("{w}x{h}")),
        "bias_center": [center.0, center.1],
        "bias_sigma": sigma,
        "gain_min": args.gain_min,
        "gain_max": args.gain_max,
        "noise_sigma_fraction": args.noise_sigma,
        "noise_sigma_absolute": abs_sigma,
        "seed": args.seed,
        "outputs": {
            "observed": "observed.raw",
            "truth": "truth.raw",
            "bias": "bias.raw",
        },
    });
    write_json(&args.out_dir.join("provenance.json"), &doc)
}

// ---------------------------------------------------------------------------
// correct
// ---------------------------------------------------------------------------

fn load_effective_config(path: Option<&Path>, seed: Option<u64>) -> ncbc::Result<NcbcConfig> {
    let mut cfg = match path {
        Some(p) => io::load_config(p)?,
        None => NcbcConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn cmd_correct(args: CorrectArgs) -> ncbc::Result<()> {
    let observed = ObservedImage::new(io::load_image(&args.input)?)?;
    let cfg = load_effective_config(args.config.as_deref(), args.seed)?;
    let (method_name, result): (&str, NcbcResult) = match args.method {
        CorrectMethod::Ncbc => ("ncbc", ncbc_reconstruct(&observed, &cfg)?),
        CorrectMethod::Lowpass => ("lowpass", lowpass_baseline(&observed, args.lowpass_sigma)?),
    };
    io::save_image(result.latent.field(), &args.out_image)?;
    if let Some(path) = &args.out_bias {
        io::save_image(result.bias.field(), path)?;
    }
    if let Some(path) = &args.diagnostics {
        let doc = serde_json::json!({
            "command": "correct",
            "input": args.input,
            "method": method_name,
            "lowpass_sigma": args.lowpass_sigma,
            "config": cfg,
            "diagnostics": result.diagnostics,
        });
        write_json(path, &doc)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

fn load_class_pair(path: Option<&Path>, dims: LatticeDims) -> ncbc::Result<Option<(Roi, Roi)>> {
    let Some(path) = path else { return Ok(None) };
    let rois = io::load_rois(path, dims)?;
    let [a, b]: [Roi; 2] = rois.try_into().map_err(|v: Vec<Roi>| {
        NcbcError::Validation(format!(
            "class rois file must contain exactly two rois (class, background), got {}",
            v.len()
        ))
    })?;
    Ok(Some((a, b)))
}

/// Compute every metric whose inputs are present; leave the rest unset.
fn compute_metric_set(
    img: &Field,
    truth: Option<&Field>,
    rois: &[Roi],
    class_pair: Option<&(Roi, Roi)>,
) -> ncbc::Result<MetricSet> {
    let find = |name: &str| rois.iter().find(|r| r.name == name);
    let prostate = find("prostate");
    let background = find("background");
    let homogeneous = find("homogeneous");

    let mut set = MetricSet::default();
    if let Some(t) = truth {
        set.r = Some(metrics::correlation_coefficient(img, t)?);
    }
    if let Some(p) = prostate {
        set.snr_db = Some(metrics::snr_db(img, p)?);
    }
    if let (Some(p), Some(b)) = (prostate, background) {
        set.cnr_db = Some(metrics::cnr_db(img, p, b)?);
    }
    if let Some(h) = homogeneous {
        set.cv = Some(metrics::cv(img, h)?);
    }
    let pair = match (class_pair, prostate, background) {
        (Some((a, b)), _, _) => Some((a, b)),
        (None, Some(p), Some(b)) => Some((p, b)),
        _ => None,
    };
    if let Some((cp, cb)) = pair {
        set.fisher = Some(metrics::fisher_criterion(img, cp, cb)?);
        let sp = metrics::roi_values(img, cp)?;
        let sb = metrics::roi_values(img, cb)?;
        // Priors default to the sample proportions of the two classes.
        let prior_p = sp.len() as f64 / (sp.len() + sb.len()) as f64;
        set.p_error = Some(metrics::probability_of_error(&sp, &sb, prior_p)?);
    }
    Ok(set)
}

fn cmd_evaluate(args: EvaluateArgs) -> ncbc::Result<()> {
    let img = io::load_image(&args.image)?;
    let truth = args.truth.as_ref().map(|p| io::load_image(p)).transpose()?;
    let rois = io::load_rois(&args.rois, img.dims())?;
    let class_pair = load_class_pair(args.class_rois.as_deref(), img.dims())?;
    let set = compute_metric_set(&img, truth.as_ref(), &rois, class_pair.as_ref())?;
    let mut report = MetricsReport::default();
    report.images.insert(stem_of(&args.image), set);
    let doc = serde_json::json!({
        "command": "evaluate",
        "inputs": {
            "image": args.image,
            "truth": args.truth,
            "rois": args.rois,
            "class_rois": args.class_rois,
        },
        "report": report,
    });
    write_json(&args.report, &doc)
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

/// Match `*` (any run) and `?` (any one character) against a file name.
fn glob_match(pattern: &str, name: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let n: Vec<char> = name.chars().collect();
    let (mut pi, mut ni) = (0usize, 0usize);
    let mut star = usize::MAX;
    let mut mark = 0usize;
    while ni < n.len() {
        if pi < p.len() && (p[pi] == '?' || p[pi] == n[ni]) {
            pi += 1;
            ni += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = pi;
            mark = ni;
            pi += 1;
        } else if star != usize::MAX {
            pi = star + 1;
            mark += 1;
            ni = mark;
        } else {
            return false;
        }
    }
    while pi < p.len() && p[pi] == '*' {
        pi += 1;
    }
    pi == p.len()
}

/// Expand one pattern, matching `*`/`?` segment by segment (no `**`).
fn expand_pattern(part: &str) -> ncbc::Result<Vec<PathBuf>> {
    use std::path::Component;
    let mut frontier: Vec<PathBuf> = vec![PathBuf::new()];
    for comp in Path::new(part).components() {
        match comp {
            Component::RootDir => {
                for f in &mut frontier {
                    f.push("/");
                }
            }
            Component::CurDir => {}
            Component::ParentDir => {
                for f in &mut frontier {
                    f.push("..");
                }
            }
            Component::Prefix(_) => {
                return Err(NcbcError::Validation(format!("unsupported path prefix in '{part}'")))
            }
            Component::Normal(os) => {
                let seg = os.to_str().ok_or_else(|| {
                    NcbcError::Validation(format!("non-UTF-8 input pattern '{part}'"))
                })?;
                if !seg.contains(['*', '?']) {
                    for f in &mut frontier {
                        f.push(seg);
                    }
                    continue;
                }
                let mut next = Vec::new();
                for base in &frontier {
                    let dir: &Path =
                        if base.as_os_str().is_empty() { Path::new(".") } else { base };
                    let Ok(entries) = fs::read_dir(dir) else { continue };
                    let mut names: Vec<String> = entries
                        .filter_map(|e| e.ok())
                        .filter_map(|e| e.file_name().to_str().map(String::from))
                        .filter(|n| glob_match(seg, n))
                        .collect();
                    names.sort();
                    for name in names {
                        next.push(base.join(name));
                    }
                }
                frontier = next;
            }
        }
        if frontier.is_empty() {
            break;
        }
    }
    let mut out: Vec<PathBuf> = frontier.into_iter().filter(|p| p.exists()).collect();
    out.sort();
    Ok(out)
}

/// Expand comma-separated paths and glob patterns; matches within each
/// pattern are sorted so the case list is deterministic.
fn resolve_inputs(spec: &str) -> ncbc::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for part in spec.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        if !part.contains(['*', '?']) {
            out.push(PathBuf::from(part));
            continue;
        }
        let matches = expand_pattern(part)?;
        if matches.is_empty() {
            return Err(NcbcError::Data(format!("pattern '{part}' matched no files")));
        }
        out.extend(matches);
    }
    if out.is_empty() {
        return Err(NcbcError::Data("no input files given".into()));
    }
    Ok(out)
}

fn parse_methods(spec: &str) -> ncbc::Result<Vec<String>> {
    let mut out: Vec<String> = Vec::new();
    for part in spec.split(',') {
        let name = part.trim();
        match name {
            "ncbc" | "lowpass" | "none" => {
                if !out.iter().any(|m| m == name) {
                    out.push(name.to_string());
                }
            }
            "" => {}
            other => {
                return Err(NcbcError::Validation(format!(
                    "unknown method '{other}' (expected ncbc, lowpass, none)"
                )))
            }
        }
    }
    if out.is_empty() {
        return Err(NcbcError::Validation("no methods requested".into()));
    }
    Ok(out)
}

fn cmd_compare(args: CompareArgs) -> ncbc::Result<()> {
    let inputs = resolve_inputs(&args.inputs)?;
    let methods = parse_methods(&args.methods)?;
    let cfg = load_effective_config(args.config.as_deref(), args.seed)?;
    let wants_p_values = methods.iter().any(|m| m != "none");
    if wants_p_values && inputs.len() < 2 {
        return Err(NcbcError::Data(format!(
            "paired p-values need at least 2 input cases, got {}",
            inputs.len()
        )));
    }

    // Unique, deterministic case names from the file stems; when stems
    // collide (e.g. many case directories holding observed.raw), qualify
    // every name with its parent directory.
    let stems: Vec<String> = inputs.iter().map(|p| stem_of(p)).collect();
    let has_dupes = {
        let mut sorted = stems.clone();
        sorted.sort();
        sorted.windows(2).any(|w| w[0] == w[1])
    };
    let mut case_names: Vec<String> = Vec::with_capacity(inputs.len());
    for (path, stem) in inputs.iter().zip(&stems) {
        let base = if has_dupes {
            let parent = path
                .parent()
                .and_then(|d| d.file_name())
                .map(|n| n.to_string_lossy().into_owned());
            match parent {
                Some(dir) => format!("{dir}_{stem}"),
                None => stem.clone(),
            }
        } else {
            stem.clone()
        };
        let mut name = base.clone();
        let mut k = 2;
        while case_names.contains(&name) {
            name = format!("{base}~{k}");
            k += 1;
        }
        case_names.push(name);
    }

    // Per-case work is independent; order is preserved by the collect.
    let per_case: Vec<BTreeMap<String, MetricSet>> = inputs
        .par_iter()
        .map(|path| -> ncbc::Result<BTreeMap<String, MetricSet>> {
            let img = io::load_image(path)?;
            let rois = io::load_rois(&args.rois, img.dims())?;
            let class_pair = load_class_pair(args.class_rois.as_deref(), img.dims())?;
            let observed = ObservedImage::new(img)?;
            let mut sets = BTreeMap::new();
            // The uncorrected metrics anchor the paired tests even when
            // "none" is not a requested report column.
            sets.insert(
                "none".to_string(),
                compute_metric_set(observed.field(), None, &rois, class_pair.as_ref())?,
            );
            for method in &methods {
                let corrected = match method.as_str() {
                    "ncbc" => ncbc_reconstruct(&observed, &cfg)?.latent,
                    "lowpass" => lowpass_baseline(&observed, args.lowpass_sigma)?.latent,
                    _ => continue,
                };
                sets.insert(
                    method.clone(),
                    compute_metric_set(corrected.field(), None, &rois, class_pair.as_ref())?,
                );
            }
            Ok(sets)
        })
        .collect::<ncbc::Result<Vec<_>>>()?;

    // Merge in sorted case order for a deterministic report.
    let mut order: Vec<usize> = (0..case_names.len()).collect();
    order.sort_by(|&a, &b| case_names[a].cmp(&case_names[b]));

    let mut report = MetricsReport::default();
    for &i in &order {
        for method in &methods {
            report
                .images
                .insert(format!("{method}/{}", case_names[i]), per_case[i][method].clone());
        }
    }

    if wants_p_values {
        let metric_of = |set: &MetricSet, name: &str| -> Option<f64> {
            match name {
                "snr_db" => set.snr_db,
                "cnr_db" => set.cnr_db,
                "cv" => set.cv,
                "fisher" => set.fisher,
                "p_error" => set.p_error,
                _ => None,
            }
        };
        let mut p_values: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for method in methods.iter().filter(|m| *m != "none") {
            let mut per_metric = BTreeMap::new();
            for metric in ["snr_db", "cnr_db", "cv", "fisher", "p_error"] {
                let before: Vec<f64> = order
                    .iter()
                    .filter_map(|&i| metric_of(&per_case[i]["none"], metric))
                    .collect();
                let after: Vec<f64> = order
                    .iter()
                    .filter_map(|&i| metric_of(&per_case[i][method.as_str()], metric))
                    .collect();
                if before.len() == inputs.len() && after.len() == inputs.len() {
                    per_metric
                        .insert(metric.to_string(), metrics::paired_p_value(&before, &after)?);
                }
            }
            p_values.insert(method.clone(), per_metric);
        }
        report.p_values = Some(p_values);
    }

    let sorted_cases: Vec<&String> = order.iter().map(|&i| &case_names[i]).collect();
    let doc = serde_json::json!({
        "command": "compare",
        "inputs": inputs,
        "methods": methods,
        "rois": args.rois,
        "class_rois": args.class_rois,
        "lowpass_sigma": args.lowpass_sigma,
        "config": cfg,
        "seed": cfg.seed,
        "cases": sorted_cases,
        "report": report,
    });
    write_json(&args.report, &doc)
}
