//! Command-line front end. [`run`] parses arguments, executes one
//! subcommand and returns the process exit code:
//! 0 on success, 1 on a domain error, 2 on a usage error.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::HashMap;
use std::ffi::OsString;
use std::io::IsTerminal;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use diskcover::fitter::{ablate, fit_corpus};
use diskcover::io::{self as dio, GrayImage};
use diskcover::losses::gradient_check;
use diskcover::metrics::{average_precision, default_thresholds, GroundTruth, ScoredInstance};
use diskcover::postprocess::{extract_contours, rasterize_polygon, simplify_contours, SimplifyParams};
use diskcover::projection::{gaussian_field, render_mask, RenderParams};
use diskcover::synth::standard_suite;
use diskcover::types::*;
use diskcover::{BinaryMask, Error, FitConfig, LossKind, Polyline};

/// Largest relative gradient error `grad-check` accepts.
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "diskcover", version, about = "Approximate binary masks by sets of Gaussian disks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a disk set to one mask
    Fit(FitArgs),
    /// Render a disk set to a mask, a field image or an overlay
    Render(RenderArgs),
    /// Trace, simplify and refill a mask
    Simplify(SimplifyArgs),
    /// Average precision of predictions (or of fresh fits) against a corpus
    Eval(EvalArgs),
    /// Sweep disk counts, radius counts and losses over a corpus
    Ablate(AblateArgs),
    /// Compare analytic and finite-difference gradients
    GradCheck(GradCheckArgs),
    /// Write the standard synthetic suite as a corpus
    GenSuite(GenSuiteArgs),
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Threshold on the raw field at inference
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Maximum optimizer iterations per restart
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    iters: usize,
    /// Independent restarts; the best by IoU is kept
    #[arg(long, default_value_t = DEFAULT_RESTARTS)]
    restarts: usize,
    /// Base random seed
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Adam step size
    #[arg(long, default_value_t = DEFAULT_STEP_SIZE)]
    step: f64,
    /// Dice smoothing term
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// Worker threads [default: all cores]
    #[arg(long)]
    threads: Option<usize>,
    /// Report wall-clock times (outputs are then no longer reproducible)
    #[arg(long)]
    timing: bool,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Number of disks N
    #[arg(long, default_value_t = DEFAULT_N_DISKS)]
    n: usize,
    /// Number of distinct radii M
    #[arg(long, default_value_t = DEFAULT_N_RADII)]
    m: usize,
    /// Training loss: dice or bce
    #[arg(long, default_value_t = LossKind::Dice)]
    loss: LossKind,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Ground-truth mask (binary PGM)
    #[arg(long = "in")]
    input: PathBuf,
    /// Disk-set JSON output
    #[arg(long)]
    out: PathBuf,
    /// Also write the thresholded fitted mask (PGM)
    #[arg(long)]
    mask_out: Option<PathBuf>,
    /// Also write the tanh-normalized field (PGM)
    #[arg(long)]
    field_out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug)]
struct RenderArgs {
    /// Disk-set JSON
    #[arg(long)]
    disks: PathBuf,
    #[arg(long)]
    width: usize,
    #[arg(long)]
    height: usize,
    /// Threshold on the raw field
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Thresholded mask output (PGM)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Tanh-normalized field output (PGM)
    #[arg(long)]
    field_out: Option<PathBuf>,
    /// Color overlay output (PPM)
    #[arg(long)]
    overlay: Option<PathBuf>,
    /// Grayscale background for the overlay (PGM) [default: black]
    #[arg(long)]
    background: Option<PathBuf>,
    /// Category used to color the overlay
    #[arg(long, default_value_t = 0)]
    category: u32,
}

#[derive(Args, Debug)]
struct SimplifyArgs {
    /// Input mask (binary PGM)
    #[arg(long = "in")]
    input: PathBuf,
    /// Smoothed mask output (PGM)
    #[arg(long)]
    out: PathBuf,
    /// Tolerance as a fraction of each contour's perimeter
    #[arg(long, default_value_t = 0.01)]
    beta: f64,
    /// Also write the simplified contours as JSON
    #[arg(long)]
    contours_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Ground-truth corpus directory
    #[arg(long)]
    gt: PathBuf,
    /// Prediction corpus directory; scores come from its manifest [default: fit the ground truth]
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Per-category CSV report
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Full JSON report
    #[arg(long)]
    json: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug)]
struct AblateArgs {
    /// Corpus directory [default: the standard synthetic suite]
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Seed of the synthetic suite when no corpus is given
    #[arg(long, default_value_t = 0)]
    suite_seed: u64,
    /// Disk counts to sweep
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,24,32")]
    ns: Vec<usize>,
    /// Radius counts to sweep [default: M = N]
    #[arg(long, value_delimiter = ',')]
    ms: Vec<usize>,
    /// Losses to sweep
    #[arg(long, value_delimiter = ',', default_value = "dice")]
    losses: Vec<LossKind>,
    /// CSV report
    #[arg(long)]
    csv: PathBuf,
    /// Tab-separated report for plotting [default: CSV path with .tsv extension]
    #[arg(long)]
    tsv: Option<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Finite-difference step (log space for radii)
    #[arg(long, default_value_t = 1e-4)]
    h: f64,
}

#[derive(Args, Debug)]
struct GenSuiteArgs {
    /// Output corpus directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum Failure {
    Usage(String),
    Domain(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(v) => Failure::Usage(format!("invalid configuration: {}", v.join("; "))),
            e => Failure::Domain(e),
        }
    }
}

type Outcome = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn diagnostic(msg: &str) {
    let color = std::env::var_os("NO_COLOR").is_none_or(|v| v.is_empty()) && std::io::stderr().is_terminal();
    let label = if color { "\x1b[1;31merror\x1b[0m" } else { "error" };
    // one line per diagnostic
    eprintln!("{label}: {}", msg.replace('\n', " "));
}

/// Parse `argv` (program name first) and run. Returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            diagnostic(&msg);
            2
        }
        Err(Failure::Domain(e)) => {
            diagnostic(&e.to_string());
            1
        }
    }
}

fn dispatch(cmd: Command) -> Outcome {
    let threads = match &cmd {
        Command::Fit(a) => a.run.threads,
        Command::Eval(a) => a.run.threads,
        Command::Ablate(a) => a.run.threads,
        _ => None,
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| usage(format!("thread pool: {e}")))?;
    pool.install(|| match cmd {
        Command::Fit(a) => cmd_fit(a),
        Command::Render(a) => cmd_render(a),
        Command::Simplify(a) => cmd_simplify(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::GradCheck(a) => cmd_grad_check(a),
        Command::GenSuite(a) => cmd_gen_suite(a),
    })
}

fn config(model: &ModelArgs, run: &RunArgs) -> Result<FitConfig, Failure> {
    let cfg = FitConfig {
        loss_kind: model.loss,
        ..config_for(model.n, model.m, run)
    };
    cfg.validate()
        .map_err(|v| usage(format!("invalid configuration: {}", v.join("; "))))?;
    Ok(cfg)
}

fn config_for(n: usize, m: usize, run: &RunArgs) -> FitConfig {
    FitConfig {
        alpha: run.alpha,
        max_iters: run.iters,
        restarts: run.restarts,
        seed: run.seed,
        step_size: run.step,
        epsilon: run.epsilon,
        ..FitConfig::with_counts(n, m)
    }
}

fn print_config(command: &str, cfg: &FitConfig, extra: &[(&str, String)]) {
    let mut line = format!("{command}: {}", serde_json::to_string(cfg).expect("config serializes"));
    for (k, v) in extra {
        line.push_str(&format!(" {k}={v}"));
    }
    println!("{line}");
}

fn show(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or("-".to_string(), |p| p.display().to_string())
}

fn cmd_fit(a: FitArgs) -> Outcome {
    let cfg = config(&a.model, &a.run)?;
    print_config(
        "fit",
        &cfg,
        &[
            ("in", a.input.display().to_string()),
            ("out", a.out.display().to_string()),
            ("threads", a.run.threads.map_or("auto".into(), |t| t.to_string())),
        ],
    );
    let gt = dio::read_mask_pgm(&a.input)?;
    let res = diskcover::fit(&gt, &cfg)?;
    dio::write_diskset_json(&res.disks, &a.out)?;
    if let Some(p) = &a.mask_out {
        dio::write_mask_pgm(&res.mask(gt.width(), gt.height(), cfg.alpha)?, p)?;
    }
    if let Some(p) = &a.field_out {
        let field = gaussian_field(&res.disks, gt.width(), gt.height())?;
        dio::write_field_pgm(&field, p)?;
    }
    println!(
        "iou={:.6} loss={:.6} iterations={} seed={}",
        res.final_iou,
        res.best_loss(),
        res.iterations_used,
        res.seed
    );
    if a.run.timing {
        println!("wall_time={:.6}s", res.wall_time.as_secs_f64());
    }
    Ok(())
}

fn cmd_render(a: RenderArgs) -> Outcome {
    if a.out.is_none() && a.field_out.is_none() && a.overlay.is_none() {
        return Err(usage("nothing to write: give --out, --field-out or --overlay"));
    }
    let params = RenderParams::new(a.width, a.height, a.alpha).map_err(|e| usage(e.to_string()))?;
    println!(
        "render: disks={} width={} height={} alpha={} out={} field_out={} overlay={}",
        a.disks.display(),
        a.width,
        a.height,
        a.alpha,
        show(&a.out),
        show(&a.field_out),
        show(&a.overlay)
    );
    let disks = dio::read_diskset_json(&a.disks)?;
    let mask = render_mask(&disks, &params)?;
    if let Some(p) = &a.out {
        dio::write_mask_pgm(&mask, p)?;
    }
    if let Some(p) = &a.field_out {
        dio::write_field_pgm(&gaussian_field(&disks, a.width, a.height)?, p)?;
    }
    if let Some(p) = &a.overlay {
        let bg: Option<GrayImage> = a.background.as_deref().map(dio::read_gray_pgm).transpose()?;
        dio::write_overlay_ppm(bg.as_ref(), &[(mask.clone(), a.category)], a.width, a.height, p)?;
    }
    println!("area={}", mask.area());
    Ok(())
}

fn contours_json(contours: &[diskcover::postprocess::Contour]) -> String {
    let items: Vec<serde_json::Value> = contours
        .iter()
        .map(|c| {
            let pts: Vec<[f64; 2]> = c.polyline.points().iter().map(|p| [p.x, p.y]).collect();
            serde_json::json!({ "hole": c.is_hole, "points": pts })
        })
        .collect();
    let mut s = serde_json::to_string(&items).expect("contours serialize");
    s.push('\n');
    s
}

fn cmd_simplify(a: SimplifyArgs) -> Outcome {
    let params = SimplifyParams::new(a.beta).map_err(|e| usage(e.to_string()))?;
    println!(
        "simplify: in={} out={} beta={} contours_out={}",
        a.input.display(),
        a.out.display(),
        a.beta,
        show(&a.contours_out)
    );
    let mask = dio::read_mask_pgm(&a.input)?;
    let contours = extract_contours(&mask);
    let simplified = simplify_contours(&contours, params)?;
    let polys: Vec<Polyline> = simplified.iter().map(|c| c.polyline.clone()).collect();
    let out = rasterize_polygon(&polys, mask.width(), mask.height())?;
    dio::write_mask_pgm(&out, &a.out)?;
    if let Some(p) = &a.contours_out {
        dio::write_atomic(p, contours_json(&simplified).as_bytes())?;
    }
    let before: usize = contours.iter().map(|c| c.polyline.len()).sum();
    let after: usize = simplified.iter().map(|c| c.polyline.len()).sum();
    println!(
        "contours={} vertices={before}->{after} iou={:.6}",
        contours.len(),
        diskcover::metrics::iou(&mask, &out)?
    );
    Ok(())
}

fn corpus(dir: &Path) -> Result<Vec<(dio::CorpusEntry, BinaryMask)>, Failure> {
    if !dir.is_dir() {
        return Err(usage(format!("{} is not a directory", dir.display())));
    }
    let items = dio::load_corpus(dir)?;
    if items.is_empty() {
        return Err(usage(format!("corpus {} contains no masks", dir.display())));
    }
    Ok(items)
}

fn cmd_eval(a: EvalArgs) -> Outcome {
    let cfg = config(&a.model, &a.run)?;
    print_config(
        "eval",
        &cfg,
        &[
            ("gt", a.gt.display().to_string()),
            ("pred", show(&a.pred)),
            ("csv", show(&a.csv)),
            ("json", show(&a.json)),
        ],
    );
    let gt_items = corpus(&a.gt)?;
    let mut images: HashMap<String, usize> = HashMap::new();
    let mut image_id = |name: &str| {
        let next = images.len();
        *images.entry(name.to_string()).or_insert(next)
    };
    let gts: Vec<GroundTruth> = gt_items
        .iter()
        .map(|(e, m)| GroundTruth {
            image: image_id(&e.image),
            category: e.category,
            mask: m.clone(),
        })
        .collect();

    let preds: Vec<ScoredInstance> = match &a.pred {
        Some(dir) => corpus(dir)?
            .into_iter()
            .map(|(e, mask)| ScoredInstance {
                image: image_id(&e.image),
                category: e.category,
                score: e.score.unwrap_or(1.0),
                mask,
            })
            .collect(),
        None => {
            let masks: Vec<BinaryMask> = gts.iter().map(|g| g.mask.clone()).collect();
            let mut preds = Vec::new();
            for ((res, g), (e, _)) in fit_corpus(&masks, &cfg).into_iter().zip(&gts).zip(&gt_items) {
                match res {
                    Ok(r) => preds.push(ScoredInstance {
                        image: g.image,
                        category: g.category,
                        score: (1.0 - r.best_loss()).clamp(0.0, 1.0),
                        mask: r.mask(g.mask.width(), g.mask.height(), cfg.alpha)?,
                    }),
                    Err(err) => diagnostic(&format!("{}: {err}", e.path.display())),
                }
            }
            preds
        }
    };
    let report = average_precision(&preds, &gts, &default_thresholds())?;
    let csv = report.to_csv();
    match &a.csv {
        Some(p) => dio::write_atomic(p, csv.as_bytes())?,
        None if a.json.is_none() => print!("{csv}"),
        None => {}
    }
    if let Some(p) = &a.json {
        let mut text = report.to_json();
        text.push('\n');
        dio::write_atomic(p, text.as_bytes())?;
    }
    println!(
        "AP={:.6} AP50={:.6} dropped_empty={}",
        report.mean_ap, report.mean_ap50, report.dropped_empty
    );
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Outcome {
    if a.ns.is_empty() || a.losses.is_empty() {
        return Err(usage("--ns and --losses must not be empty"));
    }
    let mut grid = Vec::new();
    for &loss in &a.losses {
        for &n in &a.ns {
            let ms = if a.ms.is_empty() { vec![n] } else { a.ms.clone() };
            for m in ms {
                let cfg = FitConfig {
                    loss_kind: loss,
                    ..config_for(n, m, &a.run)
                };
                cfg.validate()
                    .map_err(|v| usage(format!("invalid grid cell N={n} M={m}: {}", v.join("; "))))?;
                grid.push(cfg);
            }
        }
    }
    let tsv = a.tsv.clone().unwrap_or_else(|| a.csv.with_extension("tsv"));
    println!(
        "ablate: base={} cells={} corpus={} suite_seed={} csv={} tsv={}",
        serde_json::to_string(&grid[0]).expect("config serializes"),
        grid.len(),
        show(&a.corpus),
        a.suite_seed,
        a.csv.display(),
        tsv.display()
    );
    let masks: Vec<BinaryMask> = match &a.corpus {
        Some(dir) => corpus(dir)?.into_iter().map(|(_, m)| m).collect(),
        None => standard_suite(a.suite_seed).into_iter().map(|s| s.mask).collect(),
    };
    let report = ablate(&masks, &grid)?;
    dio::write_atomic(&a.csv, report.to_csv(a.run.timing).as_bytes())?;
    dio::write_atomic(&tsv, report.to_tsv(a.run.timing).as_bytes())?;
    for row in &report.rows {
        println!(
            "N={} M={} {} mean_iou={:.6} fits={} errors={}",
            row.n_disks,
            row.n_radii,
            row.loss,
            row.mean_iou,
            row.n_fits,
            row.errors.len()
        );
    }
    Ok(())
}

fn cmd_grad_check(a: GradCheckArgs) -> Outcome {
    if !(a.h > 0.0) {
        return Err(usage("--h must be positive"));
    }
    if a.trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    println!("grad-check: seed={} trials={} h={} tolerance={GRAD_TOLERANCE}", a.seed, a.trials, a.h);
    let report = gradient_check(a.seed, a.trials, a.h)?;
    println!("max_rel_error={:.3e} worst=({})", report.max_rel_error, report.worst);
    if report.max_rel_error < GRAD_TOLERANCE {
        Ok(())
    } else {
        Err(Failure::Domain(Error::Contract(format!(
            "gradient mismatch {:.3e} exceeds {GRAD_TOLERANCE}",
            report.max_rel_error
        ))))
    }
}

fn cmd_gen_suite(a: GenSuiteArgs) -> Outcome {
    println!("gen-suite: out={} seed={}", a.out.display(), a.seed);
    let items: Vec<(String, String, u32, BinaryMask)> = standard_suite(a.seed)
        .into_iter()
        .enumerate()
        .map(|(k, s)| (format!("{}{k:02}", s.spec.kind.name()), "0".to_string(), s.category, s.mask))
        .collect();
    dio::write_corpus(&a.out, &items)?;
    println!("wrote {} masks", items.len());
    Ok(())
}
