//! `seqseg`: train, decode, ensemble-decode, eval and inspect.

use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use seqseg_core::corpus::{parse_line, parse_raw_line, read_corpus};
use seqseg_core::metrics::{affix_prf, diff_report, segment_prf, Level};
use seqseg_core::training::{load, save, train_ensemble, train_with_log};
use seqseg_core::{Checkpoint, Error, Segmenter, Sentence, TagScheme, TrainConfig};

#[derive(Parser)]
#[command(name = "seqseg", version, about = "BiGRU-CRF word and morpheme segmenter")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Bies,
    Biesx,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Word,
    Morph,
    Affix,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model (or one model per seed with --seeds).
    Train {
        /// Segmented training corpus.
        #[arg(long)]
        train: PathBuf,
        /// Segmented development corpus used for model selection.
        #[arg(long)]
        dev: PathBuf,
        /// Checkpoint path; the training log goes to `<out>.log`.
        #[arg(long)]
        out: PathBuf,
        /// key=value configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Train independent models, one per seed, written to `<out stem>-<seed>.ckpt`.
        #[arg(long, value_delimiter = ',', conflicts_with = "seed")]
        seeds: Vec<u64>,
        #[arg(long, value_enum)]
        scheme: Option<SchemeArg>,
        /// Units are space-separated in raw text and `_`-joined inside words.
        #[arg(long)]
        unit_mode: bool,
        /// Extra configuration override, e.g. `--set epochs=10`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Segment raw text with one model.
    Decode {
        checkpoint: PathBuf,
        /// One sentence per line; `-` reads standard input.
        #[arg(long)]
        input: PathBuf,
        /// Output file (standard output by default).
        #[arg(long)]
        out: Option<PathBuf>,
        /// The input is already segmented; its segmentation is discarded.
        #[arg(long)]
        segmented: bool,
    },
    /// Segment raw text with the averaged scores of several models.
    EnsembleDecode {
        #[arg(required = true, num_args = 2..)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        segmented: bool,
    },
    /// Score a segmented prediction file against gold.
    Eval {
        gold: PathBuf,
        pred: PathBuf,
        #[arg(long, value_enum, default_value = "word")]
        level: LevelArg,
        #[arg(long)]
        unit_mode: bool,
        /// Write a per-sentence TSV of mismatches.
        #[arg(long)]
        diff: Option<PathBuf>,
    },
    /// Print checkpoint metadata.
    Inspect { checkpoint: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads().and_then(|_| run(cli.command)) {
        eprintln!("seqseg: error: {e:#}");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("SEQSEG_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("SEQSEG_THREADS must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the thread pool")
}

fn require_files<'a>(paths: impl IntoIterator<Item = &'a PathBuf>) -> Result<()> {
    for p in paths {
        if p.as_os_str() != "-" && !p.is_file() {
            bail!("{}: no such file", p.display());
        }
    }
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train {
            train,
            dev,
            out,
            config,
            seed,
            seeds,
            scheme,
            unit_mode,
            overrides,
        } => {
            require_files([&train, &dev].into_iter().chain(config.as_ref()))?;
            let mut c = TrainConfig::default();
            if let Some(path) = &config {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("{}: cannot read", path.display()))?;
                c.apply_text(&text)
                    .with_context(|| format!("{}", path.display()))?;
            }
            if let Some(s) = scheme {
                c.scheme = match s {
                    SchemeArg::Bies => TagScheme::Bies,
                    SchemeArg::Biesx => TagScheme::Biesx,
                };
            }
            if unit_mode {
                c.unit_mode = true;
            }
            if let Some(s) = seed {
                c.seed = s;
            }
            for o in &overrides {
                let (k, v) = o
                    .split_once('=')
                    .with_context(|| format!("--set expects KEY=VALUE, got {o:?}"))?;
                c.set(k, v)?;
            }
            c.validate()?;
            let train_set = read_corpus(&train, c.scheme, c.unit_mode)?;
            let dev_set = read_corpus(&dev, c.scheme, c.unit_mode)?;
            if seeds.is_empty() {
                train_one(&c, &train_set, &dev_set, &out)
            } else {
                train_many(&c, &train_set, &dev_set, &seeds, &out)
            }
        }
        Command::Decode {
            checkpoint,
            input,
            out,
            segmented,
        } => {
            require_files([&checkpoint, &input])?;
            let models = [load(&checkpoint)?];
            decode(&models, &input, out.as_deref(), segmented)
        }
        Command::EnsembleDecode {
            checkpoints,
            input,
            out,
            segmented,
        } => {
            require_files(checkpoints.iter().chain([&input]))?;
            let models = checkpoints
                .iter()
                .map(|p| load(p).map_err(anyhow::Error::from))
                .collect::<Result<Vec<_>>>()?;
            decode(&models, &input, out.as_deref(), segmented)
        }
        Command::Eval {
            gold,
            pred,
            level,
            unit_mode,
            diff,
        } => {
            require_files([&gold, &pred])?;
            // the morph format is a superset of the word format
            let g = read_corpus(&gold, TagScheme::Biesx, unit_mode)?;
            let p = read_corpus(&pred, TagScheme::Biesx, unit_mode)?;
            if g.len() != p.len() {
                bail!(
                    "{} has {} sentences but {} has {}",
                    gold.display(),
                    g.len(),
                    pred.display(),
                    p.len()
                );
            }
            let result = match level {
                LevelArg::Word => segment_prf(&g, &p, Level::Word)?,
                LevelArg::Morph => segment_prf(&g, &p, Level::Morph)?,
                LevelArg::Affix => affix_prf(&g, &p)?,
            };
            if let Some(path) = diff {
                let lvl = match level {
                    LevelArg::Word => Level::Word,
                    _ => Level::Morph,
                };
                fs::write(&path, diff_report(&g, &p, lvl, unit_mode)?)
                    .with_context(|| format!("{}: cannot write", path.display()))?;
            }
            println!("{result}");
            Ok(())
        }
        Command::Inspect { checkpoint } => {
            require_files([&checkpoint])?;
            inspect(&load(&checkpoint)?);
            Ok(())
        }
    }
}

fn log_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".log");
    PathBuf::from(s)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("{}: cannot create", path.display()))?;
    Ok(BufWriter::new(f))
}

fn train_one(c: &TrainConfig, train: &[Sentence], dev: &[Sentence], out: &Path) -> Result<()> {
    let log = log_path(out);
    let mut writer = create(&log)?;
    let mut write_error = None;
    let result = train_with_log(c, train, dev, |record| {
        eprintln!("{record}");
        if let Err(e) = writeln!(writer, "{record}").and_then(|_| writer.flush()) {
            write_error.get_or_insert(e);
        }
    });
    if let Some(e) = write_error {
        return Err(e).with_context(|| format!("{}: cannot write", log.display()));
    }
    match result {
        Ok(ckpt) => {
            save(&ckpt, out)?;
            eprintln!(
                "best epoch {} dev F1 {:.4}, saved {}",
                ckpt.best_epoch,
                ckpt.best_dev_f1,
                out.display()
            );
            Ok(())
        }
        Err(Error::NonFiniteLoss {
            last_good: Some(snapshot),
        }) => {
            let mut partial = out.as_os_str().to_owned();
            partial.push(".partial");
            let partial = PathBuf::from(partial);
            save(&snapshot, &partial)?;
            bail!(
                "training diverged (non-finite loss); last good parameters saved to {}",
                partial.display()
            )
        }
        Err(e) => Err(e.into()),
    }
}

/// `<dir>/<stem>-<seed>.ckpt` for output `<dir>/<stem>[.ckpt]`.
fn seed_path(out: &Path, seed: u64) -> PathBuf {
    let stem = if out.extension().is_some_and(|e| e == "ckpt") {
        out.with_extension("")
    } else {
        out.to_path_buf()
    };
    let mut s = stem.into_os_string();
    s.push(format!("-{seed}.ckpt"));
    PathBuf::from(s)
}

fn train_many(
    c: &TrainConfig,
    train: &[Sentence],
    dev: &[Sentence],
    seeds: &[u64],
    out: &Path,
) -> Result<()> {
    let models = train_ensemble(c, train, dev, seeds)?;
    for (seed, ckpt) in seeds.iter().zip(&models) {
        let path = seed_path(out, *seed);
        save(ckpt, &path)?;
        let log = log_path(&path);
        let mut w = create(&log)?;
        for record in &ckpt.log {
            writeln!(w, "{record}").with_context(|| format!("{}: cannot write", log.display()))?;
        }
        w.flush()
            .with_context(|| format!("{}: cannot write", log.display()))?;
        eprintln!(
            "seed {seed}: best epoch {} dev F1 {:.4}, saved {}",
            ckpt.best_epoch,
            ckpt.best_dev_f1,
            path.display()
        );
    }
    Ok(())
}

fn read_input(path: &Path) -> Result<String> {
    if path.as_os_str() == "-" {
        let mut s = String::new();
        io::stdin()
            .read_to_string(&mut s)
            .context("reading standard input")?;
        Ok(s)
    } else {
        fs::read_to_string(path).with_context(|| format!("{}: cannot read", path.display()))
    }
}

fn decode(models: &[Checkpoint], input: &Path, out: Option<&Path>, segmented: bool) -> Result<()> {
    let segmenter = Segmenter::from_checkpoints(models)?;
    let config = &models[0].config;
    let (scheme, unit_mode) = (config.scheme, config.unit_mode);
    let text = read_input(input)?;
    // blank lines are kept so output lines align with input lines
    let mut slots: Vec<Option<Sentence>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            slots.push(None);
            continue;
        }
        let parsed = if segmented {
            parse_line(line, scheme, unit_mode)
                .map(|s| s.to_raw_line(scheme, unit_mode))
                .and_then(|raw| parse_raw_line(&raw, scheme, unit_mode))
        } else {
            parse_raw_line(line, scheme, unit_mode)
        };
        let s = parsed.map_err(|e| Error::AtLine {
            path: input.to_path_buf(),
            line: i + 1,
            source: Box::new(e),
        })?;
        slots.push(Some(s));
    }
    let sentences: Vec<Sentence> = slots.iter().flatten().cloned().collect();
    let mut segmented_out = segmenter.segment_all(&sentences)?.into_iter();

    let mut w: Box<dyn Write> = match out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let target = out.map_or_else(|| "standard output".to_string(), |p| p.display().to_string());
    for slot in &slots {
        let line = match slot {
            None => String::new(),
            Some(_) => {
                let s = segmented_out.next().expect("one result per sentence");
                match scheme {
                    TagScheme::Bies => s.to_word_line(unit_mode),
                    TagScheme::Biesx => s.to_morph_line(unit_mode),
                }
            }
        };
        writeln!(w, "{line}").with_context(|| format!("{target}: cannot write"))?;
    }
    w.flush().with_context(|| format!("{target}: cannot write"))?;
    Ok(())
}

fn inspect(c: &Checkpoint) {
    let (uni, bi, tri) = c.vocab.sizes();
    println!("[config]");
    print!("{}", c.config);
    println!("[vocabulary]");
    println!("unigrams={uni}");
    println!("bigrams={bi}");
    println!("trigrams={tri}");
    println!("[model]");
    println!("parameters={}", c.params.num_values());
    println!("best_epoch={}", c.best_epoch);
    println!("best_dev_f1={}", c.best_dev_f1);
    println!("[log]");
    for record in &c.log {
        println!("{record}");
    }
}
