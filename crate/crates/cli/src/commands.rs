use std::fmt::Write as _;
use std::io::Write as _;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use osu_core::bench::{run_pipeline_bench, BenchConfig};
use osu_core::geometry::Point;
use osu_core::metrics::{evaluate_dataset, format_report, report_json, Averaging, EvalConfig, FrameMatch, Setting};
use osu_core::numerics::{run_convergence_lab, ActivationKind, ConvergenceConfig, Optimizer};
use osu_core::pipeline::{build_scene, load_bundle, save_bundle, BuildOptions, GroundedSituation, SceneInput};
use osu_core::roi::{ambiguity_report, resolve_center, resolve_point, resolve_region, QueryMode};
use osu_core::swig::{parse_annotations, parse_predictions, ParseMode};
use osu_core::{BoundingBox, FrameLexicon};

use crate::config::Config;
use crate::service;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(i32)]
pub enum ExitCode {
    Ok = 0,
    /// Unreadable or invalid input, bad flags or configuration.
    Input = 2,
    /// Strict mode found annotations and predictions that do not pair up.
    Mismatch = 3,
    /// The segmenter backend failed and a real backend was required.
    Backend = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub code: ExitCode,
    pub message: String,
}

impl CliError {
    fn input(message: impl std::fmt::Display) -> Self {
        CliError {
            code: ExitCode::Input,
            message: message.to_string(),
        }
    }
}

type CliResult = Result<(), CliError>;

#[derive(Debug, Parser)]
#[command(name = "osu", version, about = "Grounded scene understanding toolkit")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "OSU_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score predictions against SWiG annotations.
    Evaluate(EvaluateArgs),
    /// Render a caption from a verb frame.
    Caption(CaptionArgs),
    /// Build a scene bundle.
    Build(BuildArgs),
    /// Resolve a point or region against a bundle.
    Query(QueryArgs),
    /// Time each pipeline stage on a synthetic scene.
    Bench(BenchArgs),
    /// Train a small MLP with ReLU and GELU and compare convergence.
    BenchActivation(ActivationArgs),
    /// Serve bundles over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SettingArg {
    All,
    Top1,
    Top5,
    Gt,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AveragingArg {
    Micro,
    Macro,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FrameMatchArg {
    PerRole,
    SingleAnnotator,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    pub setting: SettingArg,
    #[arg(long, default_value_t = 0.5)]
    pub iou_threshold: f64,
    #[arg(long, value_enum, default_value = "micro")]
    pub averaging: AveragingArg,
    #[arg(long, value_enum, default_value = "per-role")]
    pub frame_match: FrameMatchArg,
    /// Directory for report.txt and report.json.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Fail (exit 3) when image ids do not pair up.
    #[arg(long)]
    pub strict: bool,
    /// Skip malformed records instead of failing.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct LexiconArgs {
    /// Verb frame table: `verb<TAB>Role,Role<TAB>template`.
    #[arg(long)]
    pub lexicon: PathBuf,
    /// Noun display table: `id<TAB>display`.
    #[arg(long)]
    pub nouns: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CaptionArgs {
    #[command(flatten)]
    pub lexicon: LexiconArgs,
    /// Scene input JSON; alternative to --verb/--role.
    #[arg(long, conflicts_with_all = ["verb", "role"])]
    pub scene: Option<PathBuf>,
    #[arg(long, required_unless_present = "scene")]
    pub verb: Option<String>,
    /// `Role=noun`, repeatable.
    #[arg(long)]
    pub role: Vec<String>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[command(flatten)]
    pub lexicon: LexiconArgs,
    /// Scene input JSON.
    #[arg(long, required_unless_present = "annotations")]
    pub scene: Option<PathBuf>,
    /// SWiG annotation file; use with --image-id.
    #[arg(long, conflicts_with = "scene", requires = "image_id")]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub image_id: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Fixed creation time and zeroed timings, for byte-stable output.
    #[arg(long)]
    pub reproducible: bool,
    /// Exit 4 instead of falling back to box-fill when the backend fails.
    #[arg(long)]
    pub require_backend: bool,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, requires = "y", conflicts_with = "region")]
    pub x: Option<f64>,
    #[arg(long, requires = "x")]
    pub y: Option<f64>,
    /// `x1,y1,x2,y2`
    #[arg(long, value_parser = parse_box)]
    pub region: Option<BoundingBox>,
    /// Report ambiguity over a grid with this spacing instead of one query.
    #[arg(long, conflicts_with_all = ["x", "region"])]
    pub ambiguity: Option<NonZeroUsize>,
    #[arg(long, default_value = "mask")]
    pub mode: QueryMode,
    /// Print the JSON result.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 1042)]
    pub width: usize,
    #[arg(long, default_value_t = 1042)]
    pub height: usize,
    #[arg(long, default_value_t = 5)]
    pub entities: usize,
    #[arg(long, default_value_t = 10)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 100)]
    pub queries: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write per-stage records as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OptimizerArg {
    Adamw,
    Sgd,
}

#[derive(Debug, Args)]
pub struct ActivationArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    /// Hidden layer widths, comma separated.
    #[arg(long, default_value = "16,16", value_delimiter = ',')]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 0.01)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.01)]
    pub loss_threshold: f64,
    #[arg(long, default_value_t = 128)]
    pub samples: usize,
    #[arg(long, value_enum, default_value = "adamw")]
    pub optimizer: OptimizerArg,
    /// Write the full report, including loss curves, as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub addr: Option<String>,
    #[arg(long)]
    pub bundle_dir: Option<PathBuf>,
    #[arg(long)]
    pub allow_build: bool,
}

fn parse_box(s: &str) -> Result<BoundingBox, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    let arr: [f64; 4] = v.try_into().map_err(|_| "expected x1,y1,x2,y2".to_string())?;
    BoundingBox::try_from(arr).map_err(|e| e.to_string())
}

fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>, CliError> {
    std::fs::File::open(path)
        .map(std::io::BufReader::new)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> CliResult {
    std::fs::write(path, contents).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn load_lexicon(args: &LexiconArgs) -> Result<FrameLexicon, CliError> {
    let mut lex = FrameLexicon::load(open(&args.lexicon)?).map_err(|e| CliError::input(format!("{}: {e}", args.lexicon.display())))?;
    if let Some(n) = &args.nouns {
        lex.load_nouns(open(n)?).map_err(|e| CliError::input(format!("{}: {e}", n.display())))?;
    }
    Ok(lex)
}

fn print(text: &str) -> CliResult {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| CliError::input(format!("stdout: {e}")))
}

pub fn run(cli: Cli) -> CliResult {
    let config = Config::load(cli.config.as_deref()).map_err(CliError::input)?;
    match cli.command {
        Command::Evaluate(a) => evaluate(&a),
        Command::Caption(a) => caption(&a),
        Command::Build(a) => build(&a, &config),
        Command::Query(a) => query(&a),
        Command::Bench(a) => bench(&a),
        Command::BenchActivation(a) => bench_activation(&a),
        Command::Serve(a) => serve(&a, config),
    }
}

fn evaluate(a: &EvaluateArgs) -> CliResult {
    let mode = if a.lenient { ParseMode::Lenient } else { ParseMode::Strict };
    let anns = parse_annotations(open(&a.annotations)?, mode)
        .map_err(|e| CliError::input(format!("{}: {e}", a.annotations.display())))?;
    let preds = parse_predictions(open(&a.predictions)?, mode)
        .map_err(|e| CliError::input(format!("{}: {e}", a.predictions.display())))?;
    for issue in anns.issues.iter().chain(&preds.issues) {
        eprintln!("warning: skipped record {issue}");
    }
    if !(0.0..=1.0).contains(&a.iou_threshold) {
        return Err(CliError::input(format!("--iou-threshold {} outside [0, 1]", a.iou_threshold)));
    }
    let settings: Vec<Setting> = match a.setting {
        SettingArg::All => Setting::ALL.to_vec(),
        SettingArg::Top1 => vec![Setting::Top1],
        SettingArg::Top5 => vec![Setting::Top5],
        SettingArg::Gt => vec![Setting::GtVerb],
    };
    let config = EvalConfig {
        iou_threshold: a.iou_threshold,
        averaging: match a.averaging {
            AveragingArg::Micro => Averaging::Micro,
            AveragingArg::Macro => Averaging::PerVerbMacro,
        },
        frame_match: match a.frame_match {
            FrameMatchArg::PerRole => FrameMatch::AnyAnnotatorPerRole,
            FrameMatchArg::SingleAnnotator => FrameMatch::SingleAnnotator,
        },
    };
    let eval = evaluate_dataset(&anns.records, &preds.records, &settings, &config);
    for w in &eval.warnings {
        eprintln!("warning: {w}");
    }
    if preds.records.is_empty() {
        eprintln!("warning: no predictions, every metric is undefined");
    }
    for id in &eval.unmatched_annotations {
        eprintln!("unmatched annotation: {id}");
    }
    for id in &eval.unmatched_predictions {
        eprintln!("unmatched prediction: {id}");
    }
    let text = format_report(&eval.report);
    std::fs::create_dir_all(&a.out_dir).map_err(|e| CliError::input(format!("{}: {e}", a.out_dir.display())))?;
    write_file(&a.out_dir.join("report.txt"), &text)?;
    write_file(&a.out_dir.join("report.json"), &(report_json(&eval.report) + "\n"))?;
    print(&text)?;
    let unmatched = eval.unmatched_annotations.len() + eval.unmatched_predictions.len();
    if a.strict && unmatched > 0 {
        return Err(CliError {
            code: ExitCode::Mismatch,
            message: format!("{unmatched} image ids without a counterpart"),
        });
    }
    Ok(())
}

fn read_scene(path: &Path) -> Result<SceneInput, CliError> {
    serde_json::from_reader(open(path)?).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn caption(a: &CaptionArgs) -> CliResult {
    let lex = load_lexicon(&a.lexicon)?;
    let situation = match &a.scene {
        Some(p) => read_scene(p)?.situation,
        None => {
            let entries = a
                .role
                .iter()
                .map(|r| {
                    let (role, noun) = r
                        .split_once('=')
                        .ok_or_else(|| CliError::input(format!("--role {r:?}: expected Role=noun")))?;
                    Ok(osu_core::pipeline::SituationEntry {
                        role: role.to_string(),
                        noun: noun.to_string(),
                        bbox: None,
                    })
                })
                .collect::<Result<_, CliError>>()?;
            GroundedSituation {
                verb: a.verb.clone().unwrap_or_default(),
                entries,
            }
        }
    };
    let violations = lex.validate_situation(&situation);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(CliError::input(list.join("; ")));
    }
    let pairs: Vec<(&str, &str)> = situation.entries.iter().map(|e| (e.role.as_str(), e.noun.as_str())).collect();
    let text = lex.render_caption(&situation.verb, &pairs).map_err(CliError::input)?;
    print(&(text + "\n"))
}

fn build(a: &BuildArgs, config: &Config) -> CliResult {
    let lex = load_lexicon(&a.lexicon)?;
    let input = match (&a.scene, &a.annotations, &a.image_id) {
        (Some(p), _, _) => read_scene(p)?,
        (None, Some(p), Some(id)) => {
            let anns = parse_annotations(open(p)?, ParseMode::Strict).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?;
            let ann = anns
                .records
                .iter()
                .find(|r| &r.image_id == id)
                .ok_or_else(|| CliError::input(format!("{}: no image {id:?}", p.display())))?;
            SceneInput::from_annotation(ann, Some(id.clone()))
        }
        _ => return Err(CliError::input("either --scene or --annotations with --image-id is required")),
    };
    let backend = config.backend().map_err(CliError::input)?;
    let options = BuildOptions {
        created_unix_ms: a.reproducible.then_some(0),
    };
    let mut bundle = build_scene(&input, &lex, backend.as_ref(), options).map_err(CliError::input)?;
    for w in &bundle.provenance.warnings {
        eprintln!("warning: {w}");
    }
    if bundle.provenance.degraded && a.require_backend && backend.is_some() {
        return Err(CliError {
            code: ExitCode::Backend,
            message: format!("segmenter failed: {}", bundle.provenance.warnings.join("; ")),
        });
    }
    if a.reproducible {
        bundle.provenance.segment_ms = 0.0;
    }
    let file = std::fs::File::create(&a.out).map_err(|e| CliError::input(format!("{}: {e}", a.out.display())))?;
    save_bundle(&bundle, std::io::BufWriter::new(file)).map_err(CliError::input)?;
    print(&format!("{}\n", bundle.caption))
}

fn query(a: &QueryArgs) -> CliResult {
    let bundle = load_bundle(open(&a.bundle)?).map_err(|e| CliError::input(format!("{}: {e}", a.bundle.display())))?;
    let out = if let Some(spacing) = a.ambiguity {
        let r = ambiguity_report(&bundle, spacing);
        if a.json {
            serde_json::to_string_pretty(&r).expect("summary serializes") + "\n"
        } else {
            format!(
                "{} points at spacing {}: bbox ambiguous {} ({:.4}), mask ambiguous {} ({:.4})\n",
                r.points, r.spacing, r.bbox_ambiguous, r.bbox_fraction, r.mask_ambiguous, r.mask_fraction
            )
        }
    } else if let Some(region) = &a.region {
        let hits = resolve_region(&bundle, region).map_err(CliError::input)?;
        if a.json {
            serde_json::to_string_pretty(&hits).expect("hits serialize") + "\n"
        } else if hits.is_empty() {
            "background\n".to_string()
        } else {
            hits.iter().fold(String::new(), |mut s, h| {
                let _ = writeln!(s, "{:.4}\t{}\t{}", h.fraction, h.role, h.display);
                s
            })
        }
    } else {
        let r = match (a.x, a.y) {
            (Some(x), Some(y)) => resolve_point(&bundle, Point::new(x, y), a.mode),
            _ => resolve_center(&bundle, a.mode),
        }
        .map_err(CliError::input)?;
        if a.json {
            serde_json::to_string_pretty(&r).expect("result serializes") + "\n"
        } else {
            r.spoken_text + "\n"
        }
    };
    print(&out)
}

fn bench(a: &BenchArgs) -> CliResult {
    if a.width == 0 || a.height == 0 || a.entities == 0 {
        return Err(CliError::input("width, height and entities must be positive"));
    }
    let config = BenchConfig {
        width: a.width,
        height: a.height,
        entities: a.entities,
        repetitions: a.repetitions.max(1),
        queries: a.queries,
        seed: a.seed,
    };
    let run = run_pipeline_bench(&config);
    let mut text = format!(
        "{}x{}, {} entities, {} repetitions, {} queries [{}]\n{:<10} {:>10} {:>10}\n",
        config.width,
        config.height,
        config.entities,
        config.repetitions,
        config.queries,
        osu_core::par::mode(),
        "stage",
        "median_ms",
        "p95_ms"
    );
    for s in &run.stages {
        let name = serde_json::to_value(s.stage).expect("stage serializes");
        let _ = writeln!(text, "{:<10} {:>10.3} {:>10.3}", name.as_str().unwrap_or("?"), s.median_ms, s.p95_ms);
    }
    let _ = writeln!(text, "{:<10} {:>10.3} {:>10.3}", "total", run.total_median_ms, run.total_p95_ms);
    if let Some(out) = &a.out {
        write_file(out, &(serde_json::to_string_pretty(&run).expect("bench serializes") + "\n"))?;
    }
    print(&text)
}

fn bench_activation(a: &ActivationArgs) -> CliResult {
    let config = ConvergenceConfig {
        seed: a.seed,
        hidden: a.hidden.clone(),
        learning_rate: a.learning_rate,
        epochs: a.epochs,
        loss_threshold: a.loss_threshold,
        samples: a.samples,
        optimizer: match a.optimizer {
            OptimizerArg::Adamw => Optimizer::adamw(),
            OptimizerArg::Sgd => Optimizer::GradientDescent,
        },
    };
    let report = run_convergence_lab(&config).map_err(CliError::input)?;
    let mut text = format!("{:<6} {:>12} {:>14} {:>10}\n", "act", "final_loss", "epochs_to_thr", "diverged");
    for kind in [ActivationKind::Relu, ActivationKind::Gelu] {
        let Some(r) = report.run(kind) else { continue };
        let last = r.losses.last().map_or("-".to_string(), |l| format!("{l:.6}"));
        let reach = r.epochs_to_threshold.map_or("-".to_string(), |e| e.to_string());
        let div = r.diverged_at.map_or("-".to_string(), |e| e.to_string());
        let _ = writeln!(text, "{:<6} {last:>12} {reach:>14} {div:>10}", kind.name());
    }
    if let Some(out) = &a.out {
        write_file(out, &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"))?;
    }
    print(&text)
}

fn serve(a: &ServeArgs, mut config: Config) -> CliResult {
    if let Some(addr) = &a.addr {
        config.serve.addr = addr.clone();
    }
    if let Some(dir) = &a.bundle_dir {
        config.serve.bundle_dir = dir.clone();
    }
    config.serve.allow_build |= a.allow_build;
    let scenes = service::load_scene_dir(&config.serve.bundle_dir).map_err(CliError::input)?;
    let mut state = service::AppState::new(scenes, config.serve.bundle_dir.clone());
    if config.serve.allow_build {
        let lexicon = config
            .serve
            .lexicon
            .clone()
            .ok_or_else(|| CliError::input("serve.allow_build needs serve.lexicon"))?;
        let lex = load_lexicon(&LexiconArgs {
            lexicon,
            nouns: config.serve.nouns.clone(),
        })?;
        state = state.with_builder(lex, config.backend().map_err(CliError::input)?);
    }
    let state = Arc::new(state);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::input(format!("runtime: {e}")))?;
    runtime.block_on(async {
        let listener = service::bind(&config.serve.addr)
            .await
            .map_err(|e| CliError::input(format!("cannot listen on {}: {e}", config.serve.addr)))?;
        eprintln!(
            "serving {} scenes from {} on {}",
            state.snapshot().len(),
            config.serve.bundle_dir.display(),
            config.serve.addr
        );
        service::serve(listener, state)
            .await
            .map_err(|e| CliError::input(format!("server: {e}")))
    })
}
