use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use textpose::data::{import_openpose_dir, load_captions, write_jsonl, Corpus, ImportOptions, Split};
use textpose::model::{PoseGenConfig, PoseGenModel};
use textpose::render::{layout, load_poses, render_to_file, RenderFormat};
use textpose::skeleton::{denormalize_coords, SkeletonTopology, IMAGE_SIDE};
use textpose::synthcorpus::{generate_corpus, SynthSpec};
use textpose::textenc::{embed_hashed, load_embedding_table, EmbeddingTable, TextEmbedding, EMBED_DIM};
use textpose::trainer::{self, AblationFlags, EmbeddedCorpus, GradCheckOptions, SweepGrid, Timings, TrainConfig};

use crate::config;
use crate::error::{CliError, CliResult};
use crate::{
    AblateArgs, DataArgs, EvalArgs, GradCheckArgs, ImportArgs, InferArgs, RenderArgs, SweepArgs, SynthArgs, TrainArgs,
    TrainOverrides,
};

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::runtime(format!("{}: {e}", path.display()))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn json_text<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::runtime(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    fs::write(path, json_text(value)?).map_err(|e| io_err(path, e))
}

/// Writes to `path`, or to stdout when absent.
fn emit(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| io_err(p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::runtime(format!("stdout: {e}"))),
    }
}

fn timings_path(out: &Path) -> PathBuf {
    out.with_extension("timings.json")
}

#[derive(Serialize)]
struct TimingRow<'a> {
    run: &'a str,
    value: f64,
    seconds: f64,
}

fn write_timings(out: &Path, timings: &Timings) -> CliResult<()> {
    let rows: Vec<_> = timings
        .iter()
        .map(|(run, value, seconds)| TimingRow {
            run,
            value: *value,
            seconds: *seconds,
        })
        .collect();
    write_json(&timings_path(out), &rows)
}

fn parse_split(s: &str) -> CliResult<Split> {
    s.parse::<Split>()
        .map_err(|_| CliError::usage(format!("invalid value {s:?} for --split, expected train, val or test")))
}

fn parse_format(s: &str) -> CliResult<RenderFormat> {
    s.parse::<RenderFormat>()
        .map_err(|_| CliError::usage(format!("invalid value {s:?} for --format, expected svg or png")))
}

fn load_table(path: Option<&Path>) -> CliResult<Option<EmbeddingTable>> {
    let Some(p) = path else { return Ok(None) };
    let table = load_embedding_table(p, Some(EMBED_DIM))?;
    log::info!("loaded {} embeddings from {}", table.len(), p.display());
    Ok(Some(table))
}

fn load_data(args: &DataArgs) -> CliResult<(Corpus, EmbeddedCorpus)> {
    let corpus = Corpus::load(&args.corpus)?;
    let table = load_table(args.embeddings.as_deref())?;
    let data = EmbeddedCorpus::new(&corpus, table.as_ref(), !args.no_fallback)?;
    Ok((corpus, data))
}

fn train_config(args: &TrainOverrides) -> CliResult<TrainConfig> {
    let (mut cfg, from_file): (TrainConfig, bool) = config::load_or_default(args.config.as_deref())?;
    config::apply("epochs", args.epochs.as_ref(), &mut cfg.epochs, from_file);
    config::apply("batch-size", args.batch_size.as_ref(), &mut cfg.batch_size, from_file);
    config::apply("lr", args.lr.as_ref(), &mut cfg.learning_rate, from_file);
    config::apply("seed", args.seed.as_ref(), &mut cfg.seed, from_file);
    cfg.validate()?;
    Ok(cfg)
}

pub fn synth(a: SynthArgs) -> CliResult<()> {
    let spec = SynthSpec {
        seed: a.seed,
        n_samples: a.n,
        jitter_sigma: a.jitter,
        occlusion_rate: a.occlusion,
        caption_paraphrase_count: a.paraphrases,
    };
    spec.validate()?;
    let corpus = generate_corpus(&spec)?;
    create_dir(&a.out)?;
    corpus.store(&a.out)?;
    write_json(&a.out.join("spec.json"), &spec)?;
    log::info!(
        "wrote {} samples ({} train, {} val, {} test) to {}",
        corpus.len(),
        corpus.train.len(),
        corpus.val.len(),
        corpus.test.len(),
        a.out.display()
    );
    Ok(())
}

pub fn import_openpose(a: ImportArgs) -> CliResult<()> {
    if !(a.conf_threshold.is_finite() && (0.0..=1.0).contains(&a.conf_threshold)) {
        return Err(CliError::usage(format!(
            "invalid value {} for --conf-threshold, expected a number in [0, 1]",
            a.conf_threshold
        )));
    }
    if a.width == 0 || a.height == 0 {
        return Err(CliError::usage("--width and --height must be positive"));
    }
    let captions = load_captions(&a.captions)?;
    let opts = ImportOptions {
        conf_threshold: a.conf_threshold,
        width: a.width,
        height: a.height,
    };
    let (records, stats) = import_openpose_dir(&a.input, &captions, &opts)?;
    for (file, err) in &stats.failed {
        log::warn!("{file}: {err}");
    }
    let mut buf = Vec::new();
    write_jsonl(&records, &mut buf)?;
    fs::write(&a.out, buf).map_err(|e| io_err(&a.out, e))?;
    emit(None, &json_text(&stats)?)
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    let cfg = train_config(&a.train)?;
    let (corpus, data) = load_data(&a.data)?;
    create_dir(&a.out)?;
    let outcome = trainer::train(&data, &cfg)?;
    let last = a.out.join("final.pgck");
    outcome.model.save(&last)?;
    outcome.best.save(a.out.join("best.pgck"))?;
    write_json(&a.out.join("config.json"), &cfg)?;
    write_json(&a.out.join("history.json"), &outcome.history)?;
    let bytes = fs::read(&last).map_err(|e| io_err(&last, e))?;
    write_json(
        &a.out.join("manifest.json"),
        &trainer::run_manifest(&cfg, &corpus, &bytes)?,
    )?;
    log::info!("wrote checkpoints and history to {}", a.out.display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> CliResult<()> {
    let split = parse_split(&a.split)?;
    let model = PoseGenModel::<f32>::load(&a.checkpoint)?;
    let (_, data) = load_data(&a.data)?;
    let (report, clamped) = trainer::evaluate_split(&model, data.split(split))?;
    if clamped > 0 {
        log::warn!("{clamped} predictions hit the coordinate clamp");
    }
    emit(a.out.as_deref(), &json_text(&report)?)
}

pub fn sweep(a: SweepArgs) -> CliResult<()> {
    let base = train_config(&a.train)?;
    let grid: SweepGrid = match &a.grid {
        Some(p) => config::load(p)?,
        None => SweepGrid::published(),
    };
    let (_, data) = load_data(&a.data)?;
    let (report, timings) = trainer::sweep(&data, &grid, &base)?;
    write_json(&a.out, &report)?;
    write_timings(&a.out, &timings)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FlagFile {
    rows: Vec<AblationFlags>,
}

pub fn ablate(a: AblateArgs) -> CliResult<()> {
    let split = parse_split(&a.split)?;
    let base = train_config(&a.train)?;
    let flags = match &a.flags {
        Some(p) => config::load::<FlagFile>(p)?.rows,
        None => AblationFlags::preset(),
    };
    let (_, data) = load_data(&a.data)?;
    let (report, timings) = trainer::ablate(&data, &flags, &base, split)?;
    write_json(&a.out, &report)?;
    write_timings(&a.out, &timings)
}

/// One inference result, in pixels of the 256 × 256 frame.
#[derive(Serialize)]
struct Prediction<'a> {
    id: &'a str,
    caption: &'a str,
    keypoints: Vec<[f64; 2]>,
    visibility: Vec<f64>,
    width: u32,
    height: u32,
}

#[derive(Deserialize)]
struct CaptionLine {
    id: String,
    caption: String,
}

/// Captions in file order. Lines are `{id, caption}` objects or plain text,
/// which get positional ids.
fn read_caption_lines(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if line.starts_with('{') {
            let c: CaptionLine = serde_json::from_str(line)
                .map_err(|e| CliError::data(format!("{}:{}: {e}", path.display(), out.len() + 1)))?;
            out.push((c.id, c.caption));
        } else {
            out.push((format!("caption-{:05}", out.len()), line.to_owned()));
        }
    }
    Ok(out)
}

fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn infer(a: InferArgs) -> CliResult<()> {
    let format = parse_format(&a.format)?;
    let model = PoseGenModel::<f32>::load(&a.checkpoint)?;
    let captions = match (&a.caption, &a.captions) {
        (Some(c), _) => vec![("caption-00000".to_owned(), c.clone())],
        (None, Some(p)) => read_caption_lines(p)?,
        (None, None) => return Err(CliError::usage("one of --caption or --captions is required")),
    };
    let table = load_table(a.embeddings.as_deref())?;
    if let Some(dir) = &a.render_dir {
        create_dir(dir)?;
    }
    let topo = SkeletonTopology::openpose18();
    let mut lines = String::new();
    let mut timings = Vec::with_capacity(captions.len());
    for (id, caption) in &captions {
        let start = Instant::now();
        let emb = match table.as_ref().and_then(|t| t.get(id)) {
            Some(v) => TextEmbedding::new(v.to_vec())?,
            None => embed_hashed(caption)?,
        };
        let out = trainer::predict(&model, std::slice::from_ref(&emb))?.remove(0);
        let seconds = start.elapsed().as_secs_f64();
        timings.push((id.clone(), 0.0, seconds));
        log::info!("{id}: {:.3} ms", seconds * 1e3);
        let visibility = out.vis_probs();
        let pred = Prediction {
            id,
            caption,
            keypoints: out
                .coords
                .joints()
                .iter()
                .map(|&k| {
                    let (x, y) = denormalize_coords(k, IMAGE_SIDE, IMAGE_SIDE);
                    [x, y]
                })
                .collect(),
            visibility: visibility.clone(),
            width: IMAGE_SIDE as u32,
            height: IMAGE_SIDE as u32,
        };
        lines.push_str(&serde_json::to_string(&pred).map_err(|e| CliError::runtime(e.to_string()))?);
        lines.push('\n');
        if let Some(dir) = &a.render_dir {
            let path = dir.join(format!("{}.{}", file_stem_for(id), format.extension()));
            render_to_file(&layout(&out.coords, &visibility, &topo)?, format, &path)?;
        }
    }
    emit(a.out.as_deref(), &lines)?;
    if let Some(out) = &a.out {
        write_timings(out, &timings)?;
    }
    Ok(())
}

pub fn render(a: RenderArgs) -> CliResult<()> {
    let format = parse_format(&a.format)?;
    let entries = load_poses(&a.poses)?;
    create_dir(&a.out)?;
    let topo = SkeletonTopology::openpose18();
    for e in &entries {
        let path = a.out.join(format!("{}.{}", file_stem_for(&e.id), format.extension()));
        render_to_file(&layout(&e.pose, &e.visibility, &topo)?, format, &path)?;
    }
    log::info!("rendered {} poses to {}", entries.len(), a.out.display());
    Ok(())
}

fn small_model() -> PoseGenConfig {
    PoseGenConfig {
        hidden_dim: 32,
        num_layers: 1,
        num_heads: 2,
        proj_dim: 16,
        seed: 1,
        ..PoseGenConfig::default()
    }
}

pub fn grad_check(a: GradCheckArgs) -> CliResult<()> {
    let cfg = match &a.config {
        Some(p) => config::load::<TrainConfig>(p)?,
        None => TrainConfig {
            model: small_model(),
            ..TrainConfig::default()
        },
    };
    cfg.validate()?;
    if !(a.tolerance.is_finite() && a.tolerance >= 0.0) {
        return Err(CliError::usage(format!(
            "invalid value {} for --tolerance, expected a non-negative number",
            a.tolerance
        )));
    }
    let opts = GradCheckOptions {
        tolerance: a.tolerance,
        max_entries_per_group: a.max_entries,
        seed: a.seed,
        ..GradCheckOptions::default()
    };
    let report = trainer::grad_check(&cfg.model, &cfg.weights, &opts)?;
    emit(a.out.as_deref(), &json_text(&report)?)?;
    if report.passed {
        Ok(())
    } else {
        let failed: Vec<_> = report
            .groups
            .iter()
            .filter(|g| !g.passed)
            .map(|g| g.name.as_str())
            .collect();
        Err(CliError::runtime(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )))
    }
}
