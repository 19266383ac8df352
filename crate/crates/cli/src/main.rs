//! `rxndp`: one binary for every pipeline stage.
//!
//! Exit status is 0 on success, 1 when input data is bad and 2 for usage
//! errors.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use rxndp_core::evaluate::evaluate_corpus;
use rxndp_core::idmap::IdentifierMap;
use rxndp_core::join::{join_all, visual_from_predictions};
use rxndp_core::lines::{read_annotations, read_json_lines, read_maps, read_predictions_as, validate_annotations};
use rxndp_core::matching::Thresholds;
use rxndp_core::model::DiagramAnnotation;
use rxndp_core::order::analyze_records;
use rxndp_core::prediction::OutputFormat;
use rxndp_core::refine::{refine_stream, StandardReaction};
use rxndp_core::render::{encode_png, render_all, RenderConfig, RenderJob, DEFAULT_INK_THRESHOLD, DEFAULT_MIN_GLYPH};
use rxndp_core::reward::{sample_reward, RewardResult, RewardSpec};
use rxndp_core::join::DEFAULT_NED_GATE;
use rxndp_service::{resolve_port, ServiceState, DEFAULT_MAX_BATCH, DEFAULT_PORT};

#[derive(Parser)]
#[command(name = "rxndp", version, about = "Reaction diagram parsing toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// IoU threshold for box matches (strict).
    #[arg(long, global = true, default_value_t = 0.5)]
    iou: f64,
    /// Normalized edit distance threshold for text matches.
    #[arg(long, global = true, default_value_t = 0.2)]
    ned: f64,
    /// Reward weighting as <soft>:<hybrid>.
    #[arg(long, global = true, default_value = "1:1")]
    ratio: String,
    /// Print machine-readable JSON instead of tables.
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Check ground-truth (and optionally prediction) files.
    Validate {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        map: Option<PathBuf>,
    },
    /// Soft and Hybrid precision/recall/F1 over a corpus.
    Evaluate {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Overrides the format field of every prediction line.
        #[arg(long)]
        format: Option<OutputFormat>,
        #[arg(long)]
        map: Option<PathBuf>,
    },
    /// Per-sample rewards and their mean.
    Reward {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        format: Option<OutputFormat>,
        #[arg(long)]
        map: Option<PathBuf>,
    },
    /// Run the HTTP reward service.
    Serve {
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = DEFAULT_MAX_BATCH)]
        max_batch: usize,
    },
    /// Stamp identifier labels onto diagram images.
    Render {
        /// A PNG file, or a directory holding `<image_id>.png` files.
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_INK_THRESHOLD)]
        ink_threshold: f64,
        #[arg(long, default_value_t = DEFAULT_MIN_GLYPH)]
        min_glyph: u32,
        /// Fixed glyph height instead of the inferred one.
        #[arg(long)]
        glyph_height: Option<u32>,
    },
    /// Validate, repair and standardize text-extracted reaction records.
    Refine {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        drops: PathBuf,
        #[arg(long)]
        changelog: PathBuf,
    },
    /// Join visual parses with standardized textual records.
    Join {
        #[arg(long)]
        visual: PathBuf,
        #[arg(long)]
        textual: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_NED_GATE)]
        ned_gate: f64,
        /// Where to write unjoined reactions and records.
        #[arg(long)]
        orphans: Option<PathBuf>,
    },
    /// Order inconsistency of set-perfect predictions.
    AnalyzeOrder {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        format: Option<OutputFormat>,
        #[arg(long)]
        map: Option<PathBuf>,
    },
}

type Res = Result<(), String>;

fn open(path: &Path) -> Result<BufReader<File>, String> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, String> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| format!("{}: {e}", path.display()))
}

fn with_path<E: std::fmt::Display>(path: &Path) -> impl Fn(E) -> String + '_ {
    move |e| format!("{}: {e}", path.display())
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Res {
    let mut w = create(path)?;
    for it in items {
        let line = serde_json::to_string(it).map_err(|e| e.to_string())?;
        writeln!(w, "{line}").map_err(with_path(path))?;
    }
    w.flush().map_err(with_path(path))
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("report serializes"));
}

fn load_gt(path: &Path) -> Result<Vec<DiagramAnnotation>, String> {
    read_annotations(open(path)?).map_err(with_path(path))
}

fn load_maps(path: Option<&PathBuf>) -> Result<HashMap<String, IdentifierMap>, String> {
    match path {
        Some(p) => read_maps(open(p)?).map_err(with_path(p)),
        None => Ok(HashMap::new()),
    }
}

fn thresholds(g: &Global) -> Result<Thresholds, String> {
    Thresholds::new(g.iou, g.ned)
}

fn validate(g: &Global, gt: &Path, pred: Option<&PathBuf>, map: Option<&PathBuf>) -> Res {
    let (ok, bad) = validate_annotations(open(gt)?).map_err(with_path(gt))?;
    let mut problems: Vec<String> = bad.iter().map(|e| format!("{}: {e}", gt.display())).collect();
    let mut preds = 0;
    if let Some(p) = pred {
        match read_predictions_as(open(p)?, None) {
            Ok(v) => preds = v.len(),
            Err(e) => problems.push(format!("{}: {e}", p.display())),
        }
    }
    if let Err(e) = load_maps(map) {
        problems.push(e);
    }
    if g.json {
        print_json(&serde_json::json!({ "valid_annotations": ok, "predictions": preds, "problems": problems }));
    } else {
        println!("{ok} valid annotations");
        if pred.is_some() {
            println!("{preds} prediction lines");
        }
        for p in &problems {
            println!("error: {p}");
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(format!("{} problem(s) found", problems.len()))
    }
}

fn evaluate(g: &Global, gt: &Path, pred: &Path, format: Option<OutputFormat>, map: Option<&PathBuf>) -> Res {
    let gts = load_gt(gt)?;
    let preds = read_predictions_as(open(pred)?, format).map_err(with_path(pred))?;
    let maps = load_maps(map)?;
    let report = evaluate_corpus(&gts, &preds, &maps, thresholds(g)?).map_err(|e| e.to_string())?;
    if g.json {
        print_json(&report);
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

#[derive(Serialize)]
struct SampleLine {
    sample_id: String,
    image_id: String,
    #[serde(flatten)]
    result: RewardResult,
}

fn reward(g: &Global, gt: &Path, pred: &Path, format: Option<OutputFormat>, map: Option<&PathBuf>) -> Res {
    let spec = g.ratio.parse::<RewardSpec>()?.with_thresholds(thresholds(g)?);
    let gts = load_gt(gt)?;
    let by_id: HashMap<&str, &DiagramAnnotation> = gts.iter().map(|a| (a.image_id.as_str(), a)).collect();
    let preds = read_predictions_as(open(pred)?, format).map_err(with_path(pred))?;
    let maps = load_maps(map)?;
    if let Some(p) = preds.iter().find(|p| !by_id.contains_key(p.image_id.as_str())) {
        return Err(format!("prediction for image_id {:?} has no ground truth", p.image_id));
    }
    let lines: Vec<SampleLine> = preds
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let a = by_id[p.image_id.as_str()];
            let result = match maps.get(&p.image_id) {
                Some(m) => sample_reward(&p.raw, a, m, p.format, &spec),
                None => sample_reward(&p.raw, a, &IdentifierMap::from_annotation(a), p.format, &spec),
            };
            SampleLine {
                sample_id: p.sample_id.clone().unwrap_or_else(|| i.to_string()),
                image_id: p.image_id.clone(),
                result,
            }
        })
        .collect();
    let mean = if lines.is_empty() {
        0.0
    } else {
        lines.iter().map(|l| l.result.reward).sum::<f64>() / lines.len() as f64
    };
    if g.json {
        print_json(&serde_json::json!({ "spec": spec, "samples": lines, "mean": mean }));
    } else {
        for l in &lines {
            println!("{}\t{}\t{:.6}", l.sample_id, l.image_id, l.result.reward);
        }
        println!("mean\t{:.6}\t({} samples)", mean, lines.len());
    }
    Ok(())
}

fn serve(g: &Global, gt: Option<PathBuf>, port: u16, host: &str, max_batch: usize) -> Res {
    let spec = g.ratio.parse::<RewardSpec>()?.with_thresholds(thresholds(g)?);
    if max_batch == 0 {
        return Err("--max-batch must be positive".into());
    }
    let port = resolve_port(port)?;
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| format!("bad listen address {host}:{port}: {e}"))?;
    let state = Arc::new(ServiceState::new(spec, max_batch));
    rxndp_service::run(state, gt, addr).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct RenderLine<'a> {
    image_id: &'a str,
    output: String,
    font: rxndp_core::render::FontSpec,
    placements: &'a [rxndp_core::render::placement::Placement],
    errors: &'a [rxndp_core::render::RenderError],
}

fn render(g: &Global, image: &Path, manifest: &Path, out_dir: &Path, cfg: RenderConfig) -> Res {
    let jobs: Vec<RenderJob> = read_json_lines(open(manifest)?).map_err(with_path(manifest))?;
    fs::create_dir_all(out_dir).map_err(with_path(out_dir))?;
    let results: Vec<Result<String, String>> = jobs
        .par_iter()
        .map(|job| {
            let src = if image.is_dir() {
                image.join(format!("{}.png", job.image_id))
            } else {
                image.to_path_buf()
            };
            let img = image::open(&src).map_err(with_path(&src))?;
            let outcome = render_all(&img, job, &cfg);
            let out = out_dir.join(format!("{}.png", job.image_id));
            let bytes = encode_png(&outcome.image).map_err(|e| e.to_string())?;
            fs::write(&out, bytes).map_err(with_path(&out))?;
            for e in &outcome.errors {
                log::warn!("{}: {e}", job.image_id);
            }
            let line = RenderLine {
                image_id: &job.image_id,
                output: out.display().to_string(),
                font: outcome.font,
                placements: &outcome.placements,
                errors: &outcome.errors,
            };
            serde_json::to_string(&line).map_err(|e| e.to_string())
        })
        .collect();
    let manifest_out = out_dir.join("placements.jsonl");
    let mut w = create(&manifest_out)?;
    let mut placed_images = 0;
    for r in results {
        writeln!(w, "{}", r?).map_err(with_path(&manifest_out))?;
        placed_images += 1;
    }
    w.flush().map_err(with_path(&manifest_out))?;
    if !g.json {
        println!("rendered {placed_images} image(s); placements in {}", manifest_out.display());
    } else {
        print_json(&serde_json::json!({ "images": placed_images, "manifest": manifest_out }));
    }
    Ok(())
}

fn refine(g: &Global, input: &Path, out: &Path, drops: &Path, changelog: &Path) -> Res {
    let lines: Vec<String> = open(input)?
        .lines()
        .collect::<Result<_, _>>()
        .map_err(with_path(input))?;
    let r = refine_stream(&lines);
    let mut w = create(out)?;
    for s in &r.standard {
        writeln!(w, "{}", s.to_json_line()).map_err(with_path(out))?;
    }
    w.flush().map_err(with_path(out))?;
    write_lines(drops, &r.dropped)?;
    write_lines(changelog, &r.changelog)?;
    if g.json {
        print_json(&r.stats);
    } else {
        let s = r.stats;
        println!(
            "inputs {}  dropped {}  survivors {}  standard records {}",
            s.inputs, s.dropped, s.survivors, s.standards
        );
    }
    Ok(())
}

fn join(g: &Global, visual: &Path, textual: &Path, out: &Path, gate: f64, orphans: Option<&PathBuf>) -> Res {
    if !(0.0..=1.0).contains(&gate) {
        return Err(format!("--ned-gate {gate} must be within [0, 1]"));
    }
    let preds = read_predictions_as(open(visual)?, None).map_err(with_path(visual))?;
    let records: Vec<StandardReaction> = read_json_lines(open(textual)?).map_err(with_path(textual))?;
    let (vis, failures) = visual_from_predictions(&preds);
    for (id, f) in &failures {
        log::warn!("{id}: visual parse skipped: {}", f.message);
    }
    let (joined, orph) = join_all(&vis, &records, gate);
    write_lines(out, &joined)?;
    if let Some(p) = orphans {
        let mut w = create(p)?;
        let v = serde_json::to_string(&orph).map_err(|e| e.to_string())?;
        writeln!(w, "{v}").map_err(with_path(p))?;
        w.flush().map_err(with_path(p))?;
    }
    let summary = serde_json::json!({
        "joined": joined.len(),
        "visual_orphans": orph.visual.len(),
        "textual_orphans": orph.textual.len(),
        "unparsed_visual": failures.len(),
    });
    if g.json {
        print_json(&summary);
    } else {
        println!(
            "joined {}  visual orphans {}  textual orphans {}  unparsed {}",
            joined.len(),
            orph.visual.len(),
            orph.textual.len(),
            failures.len()
        );
    }
    Ok(())
}

fn analyze_order(
    g: &Global,
    gt: &Path,
    pred: &Path,
    report: &Path,
    format: Option<OutputFormat>,
    map: Option<&PathBuf>,
) -> Res {
    let gts = load_gt(gt)?;
    let preds = read_predictions_as(open(pred)?, format).map_err(with_path(pred))?;
    let maps = load_maps(map)?;
    let r = analyze_records(&gts, &preds, &maps, thresholds(g)?);
    let body = if g.json {
        serde_json::to_string_pretty(&r).map_err(|e| e.to_string())? + "\n"
    } else {
        r.to_table(&pred.file_stem().map_or("pred".into(), |s| s.to_string_lossy().into_owned()))
    };
    fs::write(report, &body).map_err(with_path(report))?;
    print!("{body}");
    Ok(())
}

fn dispatch(cli: Cli) -> Res {
    let g = &cli.global;
    match cli.command {
        Command::Validate { gt, pred, map } => validate(g, &gt, pred.as_ref(), map.as_ref()),
        Command::Evaluate { gt, pred, format, map } => evaluate(g, &gt, &pred, format, map.as_ref()),
        Command::Reward { gt, pred, format, map } => reward(g, &gt, &pred, format, map.as_ref()),
        Command::Serve {
            gt,
            port,
            host,
            max_batch,
        } => serve(g, gt, port, &host, max_batch),
        Command::Render {
            image,
            manifest,
            out_dir,
            ink_threshold,
            min_glyph,
            glyph_height,
        } => {
            if !(0.0..=1.0).contains(&ink_threshold) {
                return Err(format!("--ink-threshold {ink_threshold} must be within [0, 1]"));
            }
            let cfg = RenderConfig {
                ink_threshold,
                min_glyph: min_glyph.max(1),
                glyph_height,
                ..RenderConfig::default()
            };
            render(g, &image, &manifest, &out_dir, cfg)
        }
        Command::Refine {
            input,
            out,
            drops,
            changelog,
        } => refine(g, &input, &out, &drops, &changelog),
        Command::Join {
            visual,
            textual,
            out,
            ned_gate,
            orphans,
        } => join(g, &visual, &textual, &out, ned_gate, orphans.as_ref()),
        Command::AnalyzeOrder {
            gt,
            pred,
            report,
            format,
            map,
        } => analyze_order(g, &gt, &pred, &report, format, map.as_ref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    if let Some(n) = cli.global.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("--jobs ignored: {e}");
        }
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
