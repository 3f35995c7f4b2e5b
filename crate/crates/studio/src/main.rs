//! `callig`: command-line front end for the glyph artwork pipeline.
//!
//! Exit status is 0 on success, 1 on a usage error and 2 when a command
//! fails. JSON results go to stdout, logs to stderr.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use callig_core::aesthetics::{StyleEngine, StyleRegistry};
use callig_core::composer::CompositionMetadata;
use callig_core::corpus::{scan_corpus, select_vocabulary, DatasetManifest, GlyphDataset, Split, Vocabulary};
use callig_core::raster::{load_rgb, GrayImage};
use callig_core::synth::{fixture_characters, write_corpus};
use callig_core::text_mapper::{embed_vocabulary, text_to_condition, EmbeddingProvider};
use callig_gan::{train, EpochLosses, TrainControl, TrainError};
use callig_gan::{Checkpoint, GanConfig};
use callig_studio::config::{parse_size, StudioConfig};
use callig_studio::engine::{compose, finish_glyph, provider_from_spec, stylize, Engine, GenerationRequest, StylizeParams};
use callig_studio::service::{serve, Studio};

#[derive(Parser)]
#[command(name = "callig", version, about = "Calligraphy glyph artwork generator")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Index a glyph corpus and assign train/holdout splits.
    Scan {
        #[arg(long)]
        data: PathBuf,
        /// Write the manifest here (the engine reads `<data>/manifest.json`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the conditional generator.
    Train(TrainArgs),
    /// Rank vocabulary characters against a text.
    MapText {
        #[arg(long)]
        text: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        provider: Option<String>,
        #[arg(long, conflicts_with = "ckpt", required_unless_present = "ckpt")]
        vocab: Option<PathBuf>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Comma-separated per-rank weights.
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
    },
    /// Sample glyphs for a text.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
    },
    /// Generate candidates and keep the one closest to real glyphs.
    Curate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        group: usize,
        #[arg(long, value_enum, default_value = "holdout")]
        ref_split: RefSplit,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
    },
    /// Denoise, recolor and style a glyph image.
    Stylize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        dish: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        style: Option<String>,
        #[arg(long, default_value_t = 0.7)]
        strength: f64,
        #[arg(long)]
        styles_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Lay out artwork, caption and logo on a canvas.
    Compose {
        #[arg(long)]
        art: PathBuf,
        #[arg(long, default_value = "")]
        caption: String,
        #[arg(long)]
        logo: Option<PathBuf>,
        #[arg(long, default_value_t = 0.3)]
        ratio: f64,
        #[arg(long, default_value = "512x512")]
        size: String,
        /// PNG path; a `.json` sidecar is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Text (and optional dish photo) to finished artwork.
    Pipeline(PipelineArgs),
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Write a synthetic glyph corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        chars: usize,
        #[arg(long, default_value_t = 30)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        side: u32,
        #[arg(long, default_value_t = 3)]
        calligraphers: usize,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum RefSplit {
    Holdout,
    Train,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1000)]
    vocab_size: usize,
    #[arg(long, default_value_t = 25)]
    min_images: usize,
    #[arg(long, default_value_t = 64)]
    side: u32,
    #[arg(long, default_value_t = 25)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Checkpoint path; the vocabulary goes to `<out>.vocab.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    text: String,
    #[arg(long)]
    dish: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    size: Option<String>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0.3)]
    ratio: f64,
    #[arg(long)]
    style: Option<String>,
    #[arg(long, default_value_t = 0.7)]
    strength: f64,
    #[arg(long)]
    caption: Option<String>,
    #[arg(long)]
    logo: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn print_json(value: &serde_json::Value) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(value)?) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn load_manifest(data: &Path) -> anyhow::Result<DatasetManifest> {
    let saved = data.join("manifest.json");
    Ok(if saved.exists() {
        DatasetManifest::load(&saved)?
    } else {
        scan_corpus(data)?
    })
}

/// Configuration with command-line paths layered on top.
fn engine_config(
    config: &StudioConfig,
    ckpt: Option<&Path>,
    data: Option<&Path>,
) -> anyhow::Result<StudioConfig> {
    let mut c = config.clone();
    if let Some(p) = ckpt {
        c.checkpoint_path = Some(p.to_path_buf());
    }
    if let Some(p) = data {
        c.corpus_dir = Some(p.to_path_buf());
    }
    c.validate()?;
    Ok(c)
}

fn load_model(config: &StudioConfig, ckpt: &Path) -> anyhow::Result<(Checkpoint, Box<dyn EmbeddingProvider>)> {
    let checkpoint = Checkpoint::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    if let Some(vp) = &config.vocab_path {
        checkpoint.check_vocabulary(&Vocabulary::load(vp)?)?;
    }
    let provider = provider_from_spec(&config.embedding_provider).map_err(anyhow::Error::msg)?;
    Ok((checkpoint, provider))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = StudioConfig::load(cli.config.as_deref())?;
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Scan { data, out } => {
            let manifest = scan_corpus(&data)?;
            if let Some(out) = &out {
                manifest.save(out)?;
            }
            print_json(&json!({
                "total_images": manifest.total_images,
                "distinct_characters": manifest.distinct_characters,
                "per_character_counts": manifest.per_character_counts,
                "train": manifest.paths_in(Split::Train).count(),
                "holdout": manifest.paths_in(Split::Holdout).count(),
                "unreadable": manifest.unreadable.len(),
                "manifest": out,
            }))
        }
        Command::Train(a) => run_train(a, seed),
        Command::MapText {
            text,
            k,
            provider,
            vocab,
            ckpt,
            weights,
        } => {
            let vocab = match (vocab, ckpt) {
                (Some(v), _) => Vocabulary::load(&v)?,
                (None, Some(c)) => Checkpoint::load(&c)?.vocabulary().clone(),
                (None, None) => unreachable!("clap requires one"),
            };
            let spec = provider.unwrap_or(config.embedding_provider.clone());
            let provider = provider_from_spec(&spec).map_err(anyhow::Error::msg)?;
            let embeddings = embed_vocabulary(provider.as_ref(), &vocab, Some(&config.data_dir.join("embeddings")))?;
            let (condition, scores) =
                text_to_condition(&text, provider.as_ref(), &vocab, &embeddings, k, weights.as_deref())?;
            let support: Vec<_> = condition
                .support()
                .into_iter()
                .map(|(i, w)| json!({ "class_index": i, "character": vocab.character(i), "weight": w }))
                .collect();
            print_json(&json!({ "provider": provider.id(), "characters": scores, "condition": support }))
        }
        Command::Generate {
            ckpt,
            text,
            n,
            out_dir,
            weights,
        } => {
            let (checkpoint, provider) = load_model(&config, &ckpt)?;
            let vocab = checkpoint.vocabulary().clone();
            let embeddings = embed_vocabulary(provider.as_ref(), &vocab, Some(&config.data_dir.join("embeddings")))?;
            let k = callig_studio::engine::TOP_K.min(vocab.size());
            let (condition, scores) =
                text_to_condition(&text, provider.as_ref(), &vocab, &embeddings, k, weights.as_deref())?;
            std::fs::create_dir_all(&out_dir)?;
            let mut files = Vec::with_capacity(n);
            for (i, img) in checkpoint.generate_batch(&condition, n, seed)?.iter().enumerate() {
                let path = out_dir.join(format!("sample_{i:03}.png"));
                img.save_png(&path)?;
                files.push(path);
            }
            print_json(&json!({ "seed": seed, "characters": scores, "files": files }))
        }
        Command::Curate {
            ckpt,
            text,
            n,
            group,
            ref_split,
            data,
            out,
            weights,
        } => {
            let mut c = engine_config(&config, Some(&ckpt), Some(&data))?;
            c.candidates = n;
            c.group_size = group;
            c.validate()?;
            let engine = Engine::from_config(&c)?;
            let (condition, scores) = engine.select(&text, weights.as_deref())?;
            let chars: Vec<char> = scores.iter().map(|s| s.character).collect();
            let candidates = engine.generate(&condition, n, seed)?;
            let split = match ref_split {
                RefSplit::Holdout => Split::Holdout,
                RefSplit::Train => Split::Train,
            };
            let references = engine.references(&chars, split)?;
            let result = engine.curate(&candidates, &references, group)?;
            if let Some(out) = &out {
                finish_glyph(&result.chosen_image).save_png(out)?;
            }
            print_json(&json!({
                "seed": seed,
                "characters": scores,
                "references": references.len(),
                "curation": result.summary(),
                "out": out,
            }))
        }
        Command::Stylize {
            input,
            dish,
            k,
            style,
            strength,
            styles_dir,
            out,
        } => {
            let glyph = GrayImage::load(&input)?;
            let dish = dish.as_deref().map(load_rgb).transpose()?;
            let styles_dir = styles_dir.or(config.styles_dir.clone());
            let styles = StyleEngine::new(match &styles_dir {
                Some(dir) => StyleRegistry::load_dir(dir)?,
                None => StyleRegistry::builtin(),
            });
            let (art, palette) = stylize(
                &glyph,
                &styles,
                &StylizeParams {
                    dish: dish.as_ref(),
                    palette_k: k,
                    style_id: style.as_deref(),
                    style_strength: strength,
                    seed,
                },
            )?;
            art.save(&out).with_context(|| format!("writing {}", out.display()))?;
            print_json(&json!({ "seed": seed, "palette": palette, "out": out }))
        }
        Command::Compose {
            art,
            caption,
            logo,
            ratio,
            size,
            out,
        } => {
            let canvas = parse_size(&size).map_err(anyhow::Error::msg)?;
            let art = load_rgb(&art)?;
            let logo = logo.as_deref().map(load_rgb).transpose()?;
            let metadata = CompositionMetadata {
                seed,
                ..Default::default()
            };
            let composition = compose(&art, &caption, logo.as_ref(), ratio, canvas, seed, metadata)?;
            composition.write(&out)?;
            print_json(&json!({
                "out": out,
                "layout": composition.spec,
                "caption_truncated": composition.caption_truncated,
            }))
        }
        Command::Pipeline(a) => run_pipeline(a, &config, seed),
        Command::Serve { host, port, ckpt, data } => {
            let mut c = engine_config(&config, ckpt.as_deref(), data.as_deref())?;
            if let Some(h) = host {
                c.host = h;
            }
            if let Some(p) = port {
                c.port = p;
            }
            let studio = Arc::new(Studio::open(c)?);
            tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()?
                .block_on(serve(studio))
        }
        Command::Synth {
            out,
            chars,
            count,
            side,
            calligraphers,
        } => {
            let characters = fixture_characters(chars, count);
            if characters.len() < chars {
                bail!("only {} fixture characters are available", characters.len());
            }
            write_corpus(&out, &characters, side, calligraphers, seed)?;
            print_json(&json!({ "out": out, "characters": characters.len(), "images": chars * count }))
        }
    }
}

fn run_train(a: TrainArgs, seed: u64) -> anyhow::Result<()> {
    let manifest = load_manifest(&a.data)?;
    let vocab = select_vocabulary(&manifest, a.min_images, a.vocab_size)?;
    log::info!("vocabulary of {} characters", vocab.size());
    let dataset = GlyphDataset::load_train(&manifest, &vocab, a.side)?;
    let config = GanConfig {
        image_side: a.side,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed,
        ..GanConfig::default()
    };
    let vocab_path = a.out.with_extension("vocab.json");
    vocab.save(&vocab_path)?;
    let mut report = |l: &EpochLosses, _: &Checkpoint| {
        log::info!("epoch {} generator {:.4} discriminator {:.4}", l.epoch, l.generator, l.discriminator);
        TrainControl::Continue
    };
    match train(&dataset, &vocab, config, &mut report) {
        Ok(ckpt) => {
            ckpt.save(&a.out)?;
            let last = ckpt.history.last();
            print_json(&json!({
                "checkpoint": a.out,
                "vocabulary": vocab_path,
                "vocabulary_size": vocab.size(),
                "train_images": dataset.len(),
                "epochs": ckpt.epoch,
                "final_losses": last,
            }))
        }
        Err(TrainError::NonFinite { checkpoint, .. }) => {
            let diag = a.out.with_extension("diverged.ckpt");
            checkpoint.save(&diag)?;
            bail!("training diverged; diagnostic checkpoint written to {}", diag.display())
        }
        Err(e) => Err(e.into()),
    }
}

fn run_pipeline(a: PipelineArgs, config: &StudioConfig, seed: u64) -> anyhow::Result<()> {
    let mut c = engine_config(config, a.ckpt.as_deref(), a.data.as_deref())?;
    if let Some(size) = a.size {
        c.canvas_size = size;
    }
    c.validate()?;
    let engine = Engine::from_config(&c)?;
    let request = GenerationRequest {
        palette_k: a.k,
        whitespace_ratio: a.ratio,
        style_id: a.style,
        style_strength: a.strength,
        weights: a.weights,
        seed: Some(seed),
        caption: a.caption,
        ..GenerationRequest::new(a.text)
    };
    let dish = a.dish.as_deref().map(load_rgb).transpose()?;
    let logo = a.logo.as_deref().map(load_rgb).transpose()?;
    let output = engine.run(&request, seed, dish.as_ref(), logo.as_ref(), "cli")?;
    output.composition.write(&a.out)?;
    print_json(&json!({
        "out": a.out,
        "seed": seed,
        "characters": output.characters,
        "curation": output.curation,
        "palette": output.palette,
        "layout": output.composition.spec,
        "caption_truncated": output.composition.caption_truncated,
    }))
}
