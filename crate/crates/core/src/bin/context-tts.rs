use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use context_tts::acoustic::DurationSource;
use context_tts::corpus::{load_corpus, CorpusBundle, CorpusFormat};
use context_tts::error::{Error, Result};
use context_tts::pipeline::fixture::{bundled_dialogues, default_tts_dialogues, write_tts_fixture};
use context_tts::pipeline::{
    load_tts, read_manifest, resolve_checkpoint, run_checks, run_pretrain, run_tts_train, split_corpus, sweep_t,
    synthesize, write_sweep_csv, FeatureCache, Profile, RunConfig, RunLayout, Split, StageDir, Synthesizer, TtsRun,
};

#[derive(Parser)]
#[command(name = "context-tts", version, about = "Conversational TTS with dialogue context encoders")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML config merged over the profile defaults (default: <run>/config.toml when present).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_profile)]
    profile: Option<Profile>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dialogue turn window: the current turn plus up to T - 1 predecessors.
    #[arg(long = "T", global = true)]
    turn_window: Option<usize>,
    #[arg(long = "allow-any-T", global = true)]
    allow_any_t: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Durations {
    Aligner,
    GroundTruth,
}

#[derive(Clone, Copy, ValueEnum)]
enum FixtureKind {
    /// The eight bundled dialogues.
    Dialogues,
    /// Two short conversations.
    Small,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic corpus with audio, phonemes and durations.
    MakeFixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "dialogues")]
        kind: FixtureKind,
    },
    /// Load a corpus, build the vocabulary, split it and cache acoustic features.
    Ingest {
        /// A JSONL file or a directory of them.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "jsonl")]
        format: String,
    },
    /// Dialogue-BERT pretraining.
    Pretrain {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        resume: bool,
    },
    /// TTS training.
    Train {
        #[arg(long)]
        run: PathBuf,
        /// Pretraining checkpoint (default: newest under <run>/pretrain when present).
        #[arg(long)]
        pretrain: Option<PathBuf>,
        /// Train with a randomly initialised fine encoder.
        #[arg(long, conflicts_with = "pretrain")]
        no_pretrain: bool,
        #[arg(long, value_enum)]
        durations: Option<Durations>,
        /// Fuse only phoneme and speaker encodings.
        #[arg(long)]
        no_context: bool,
        #[arg(long)]
        resume: bool,
    },
    /// Synthesize manifest rows to wav, mel and sidecar files.
    Synth {
        #[arg(long)]
        run: PathBuf,
        /// JSONL rows of {"conversation_id", "turn_index", "id"?}.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// TTS checkpoint (default: newest under <run>/tts).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Synthesize each manifest row under several T values and write a CSV report.
    SweepT {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long = "T-values", value_delimiter = ',', default_value = "1,2,4,6,8,10,12,14")]
        t_values: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the built-in property checks.
    Check,
}

fn parse_profile(s: &str) -> std::result::Result<Profile, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_config(g: &Global, run: Option<&Path>) -> Result<RunConfig> {
    let profile = g.profile.unwrap_or(Profile::Toy);
    let file = g.config.clone().or_else(|| run.map(|r| RunLayout::new(r).config()).filter(|p| p.exists()));
    let mut cfg = match file {
        Some(p) => RunConfig::load(&p, profile)?,
        None => RunConfig::profile(profile),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(t) = g.turn_window {
        cfg.turn_window = t;
    }
    cfg.allow_any_t |= g.allow_any_t;
    cfg.validate()?;
    Ok(cfg)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    Ok(serde_json::from_str(&text)?)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn features(run: &RunLayout) -> Result<FeatureCache> {
    let p = run.features();
    if p.exists() {
        FeatureCache::load(&p)
    } else {
        Ok(FeatureCache::default())
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::MakeFixture { out, kind } => {
            match kind {
                FixtureKind::Dialogues => write_tts_fixture(&out, &bundled_dialogues()?)?,
                FixtureKind::Small => write_tts_fixture(&out, &default_tts_dialogues())?,
            }
            println!("wrote {}", out.join("dialogues.jsonl").display());
        }
        Command::Ingest { corpus, run, format } => {
            let layout = RunLayout::new(&run);
            let cfg = load_config(g, None)?;
            let format: CorpusFormat = format.parse()?;
            let bundle = CorpusBundle::from_loaded(load_corpus(&corpus, format)?, cfg.encoder.max_seq_len);
            std::fs::create_dir_all(&run).map_err(|e| Error::Io { path: run.clone(), source: e })?;
            let split = split_corpus(&bundle.conversations, cfg.split, cfg.seed)?;
            let feats = FeatureCache::extract(&bundle.conversations)?;
            bundle.save(&layout.corpus())?;
            feats.save(&layout.features())?;
            write_file(&layout.split(), &serde_json::to_string_pretty(&split)?)?;
            write_file(&layout.config(), &cfg.to_toml_string()?)?;
            println!(
                "{} conversations, {} turns, {} speakers, vocabulary {}, {} utterances with audio; split {}/{}/{}",
                bundle.report.conversations,
                bundle.report.turns,
                bundle.num_speakers(),
                bundle.vocab.len(),
                feats.items.len(),
                split.train.len(),
                split.valid.len(),
                split.test.len()
            );
        }
        Command::Pretrain { run, resume } => {
            let layout = RunLayout::new(&run);
            let cfg = load_config(g, Some(&run))?;
            let bundle = CorpusBundle::load(&layout.corpus())?;
            let split: Split = read_json(&layout.split())?;
            let ck = run_pretrain(&cfg, &bundle, &split, &StageDir::new(layout.pretrain()), resume)?;
            println!("pretraining finished at step {}", ck.meta.step);
        }
        Command::Train { run, pretrain, no_pretrain, durations, no_context, resume } => {
            let layout = RunLayout::new(&run);
            let mut cfg = load_config(g, Some(&run))?;
            if let Some(d) = durations {
                cfg.acoustic.duration_source = match d {
                    Durations::Aligner => DurationSource::Aligner,
                    Durations::GroundTruth => DurationSource::GroundTruth,
                };
            }
            if no_context {
                cfg.tts.use_context = false;
            }
            let bundle = CorpusBundle::load(&layout.corpus())?;
            let split: Split = read_json(&layout.split())?;
            let feats = features(&layout)?;
            let pre_dir = pretrain.or_else(|| Some(layout.pretrain()).filter(|p| p.exists()));
            let pre = match (no_pretrain, pre_dir) {
                (false, Some(d)) => Some(resolve_checkpoint(&d)?),
                _ => None,
            };
            if pre.is_none() {
                log::warn!("no pretraining checkpoint; the fine encoder starts from random weights");
            }
            let stage = StageDir::new(layout.tts());
            let ck = run_tts_train(&TtsRun {
                config: &cfg,
                bundle: &bundle,
                features: &feats,
                split: &split,
                stage: &stage,
                pretrained: pre.as_ref(),
                resume,
            })?;
            println!("TTS training finished at step {}", ck.meta.step);
        }
        Command::Synth { run, manifest, out, checkpoint } => {
            let layout = RunLayout::new(&run);
            let cfg = load_config(g, Some(&run))?;
            let bundle = CorpusBundle::load(&layout.corpus())?;
            let ck = resolve_checkpoint(&checkpoint.unwrap_or_else(|| layout.tts()))?;
            let (mut model, store, stats) = load_tts(&ck, &bundle.vocab)?;
            model.config.allow_any_t |= cfg.allow_any_t;
            let synth = Synthesizer::new(&model, &store, stats, &bundle);
            let rows = read_manifest(&manifest)?;
            let results = synthesize(&synth, &rows, cfg.turn_window, &out, cfg.synth.griffin_lim_iters)?;
            let failed = results.iter().filter(|r| r.is_err()).count();
            for r in &results {
                match r {
                    Ok(o) => println!("{}", o.wav.display()),
                    Err((row, e)) => eprintln!("{}: {e}", row.name()),
                }
            }
            if failed > 0 {
                return Err(Error::Data(format!("{failed} of {} rows failed", results.len())));
            }
        }
        Command::SweepT { run, manifest, t_values, out, checkpoint } => {
            let layout = RunLayout::new(&run);
            let cfg = load_config(g, Some(&run))?;
            let bundle = CorpusBundle::load(&layout.corpus())?;
            let ck = resolve_checkpoint(&checkpoint.unwrap_or_else(|| layout.tts()))?;
            let (mut model, store, stats) = load_tts(&ck, &bundle.vocab)?;
            model.config.allow_any_t |= cfg.allow_any_t;
            let feats = features(&layout)?;
            let synth = Synthesizer::new(&model, &store, stats, &bundle);
            let report = sweep_t(&synth, &read_manifest(&manifest)?, &t_values, Some(&feats))?;
            write_sweep_csv(&report, &out)?;
            println!("{} rows written to {}", report.len(), out.display());
        }
        Command::Check => {
            let results = run_checks();
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            if results.iter().any(|r| !r.passed) {
                return Err(Error::Validation("property checks failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
