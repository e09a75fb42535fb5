//! `kbgen`: synthesize corpora, train, generate and evaluate.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand};
use kbgen::checkpoint;
use kbgen::corpus::{load_corpus, split, stats, synth_corpus, write_corpus, Schema, VocabSet};
use kbgen::generator::train;
use kbgen::inference::{beam_decode, dump_attention, greedy_decode, read_generations, write_generations, Generation};
use kbgen::metrics::evaluate;
use kbgen::{KbError, Model, ModelMode, RunConfig};

/// Environment variable supplying a seed when no flag or config sets one.
const SEED_ENV: &str = "KBGEN_SEED";

#[derive(Parser)]
#[command(name = "kbgen", version, about = "Describe knowledge-base entities in text with a slot-aware pointer-generator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic footballer corpus as JSONL.
    Synth {
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a corpus 80/10/10 into train.jsonl, dev.jsonl and test.jsonl.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Print corpus statistics as JSON.
    Stats {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train a model and save the checkpoint with the best dev loss.
    Train(TrainArgs),
    /// Describe every entity of a corpus with a trained model.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Beam width; 1 is greedy decoding. Defaults to the checkpoint's.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        beam: Option<u64>,
        #[arg(long)]
        max_len: Option<usize>,
        /// Vocabulary file that must match the checkpoint's.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Write per-entity attention matrices as CSV into this directory.
        #[arg(long)]
        dump_attn: Option<PathBuf>,
    },
    /// Score generations against gold examples.
    Evaluate {
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Report file; the report goes to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective configuration, or the one stored in a checkpoint.
    Config {
        #[arg(long, conflicts_with_all = ["config", "set"])]
        ckpt: Option<PathBuf>,
        #[command(flatten)]
        overrides: ConfigArgs,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` file; see `kbgen config` for the keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set lr=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, value_parser = mode_parser())]
    mode: Option<ModelMode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Dev corpus for checkpoint selection; train loss decides without it.
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the vocabulary here.
    #[arg(long)]
    vocab_out: Option<PathBuf>,
    /// Per-epoch log as JSON lines.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigArgs,
}

fn mode_parser() -> impl TypedValueParser<Value = ModelMode> {
    PossibleValuesParser::new(ModelMode::ALL.map(ModelMode::name)).map(|s| s.parse::<ModelMode>().expect("listed mode parses"))
}

enum Failure {
    Usage(String),
    Kb(KbError),
}

impl From<KbError> for Failure {
    fn from(e: KbError) -> Self {
        match e {
            KbError::Config(_) | KbError::UnknownMode(_) => Failure::Usage(e.to_string()),
            e => Failure::Kb(e),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Kb(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Defaults, then the seed from the environment, the config file, `--set`
/// pairs and finally the dedicated flags.
fn resolve_config(args: &ConfigArgs) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::default();
    if let Some(seed) = env_seed()? {
        cfg.seed = seed;
    }
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for pair in &args.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {pair:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(mode) = args.mode {
        cfg.mode = mode;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        cfg.epochs = epochs;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn seed_or_default(flag: Option<u64>) -> Result<u64, Failure> {
    Ok(match flag {
        Some(s) => s,
        None => env_seed()?.unwrap_or(RunConfig::default().seed),
    })
}

fn write_json(path: Option<&Path>, value: &impl serde::Serialize) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(KbError::from)? + "\n";
    match path {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> CmdResult {
    let cfg = resolve_config(&args.overrides)?;
    let train_set = load_corpus(&args.data)?;
    let dev_set = match &args.dev {
        Some(p) => load_corpus(p)?,
        None => Vec::new(),
    };
    let vocab = VocabSet::build(&train_set, cfg.min_freq)?;
    if let Some(p) = &args.vocab_out {
        vocab.save(p)?;
    }
    eprintln!(
        "training {} on {} examples ({} dev); vocabulary {} words",
        cfg.mode,
        train_set.len(),
        dev_set.len(),
        vocab.words.len()
    );
    let mut model = Model::new(cfg, vocab)?;
    let mut log_lines = String::new();
    let report = train(&mut model, &train_set, &dev_set, |log| {
        let dev = log.dev_nll.map_or("-".to_string(), |d| format!("{d:.4}"));
        eprintln!(
            "epoch {:>3}  loss {:.4}  nll {:.4}  dev nll {dev}",
            log.epoch, log.train_loss, log.train_nll
        );
        let line = serde_json::json!({
            "epoch": log.epoch,
            "train_loss": log.train_loss,
            "train_nll": log.train_nll,
            "dev_nll": log.dev_nll,
        });
        log_lines.push_str(&line.to_string());
        log_lines.push('\n');
    })?;
    if let Some(p) = &args.log {
        fs::write(p, log_lines)?;
    }
    if report.unk_targets > 0 {
        eprintln!("{} reference tokens were scored as <unk> in the last epoch", report.unk_targets);
    }
    checkpoint::save(&model, &args.out)?;
    eprintln!("kept epoch {}; wrote {}", report.best_epoch, args.out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_generate(
    ckpt: &Path,
    data: &Path,
    out: &Path,
    beam: Option<u64>,
    max_len: Option<usize>,
    vocab: Option<&Path>,
    dump_attn: Option<&Path>,
) -> CmdResult {
    let model = checkpoint::load(ckpt)?;
    if let Some(p) = vocab {
        let expected = VocabSet::load(p)?.hash();
        if expected != model.vocab.hash() {
            return Err(Failure::Kb(KbError::Checkpoint(format!(
                "vocabulary {} (hash {}) does not match the checkpoint's (hash {})",
                p.display(),
                &expected[..12],
                &model.vocab.hash()[..12]
            ))));
        }
    }
    let examples = load_corpus(data)?;
    let beam = beam.map_or(model.config.beam, |b| b as usize);
    let max_len = max_len.unwrap_or(model.config.max_len);
    if let Some(dir) = dump_attn {
        fs::create_dir_all(dir)?;
    }
    let mut gens = Vec::with_capacity(examples.len());
    for ex in &examples {
        let decoded = if beam == 1 {
            greedy_decode(&model, &ex.kb, max_len)?
        } else {
            beam_decode(&model, &ex.kb, beam, max_len)?
        };
        if let Some(dir) = dump_attn {
            dump_attention(&decoded, dir, ex.kb.entity_id())?;
        }
        gens.push(Generation {
            entity_id: ex.kb.entity_id().to_string(),
            output: decoded.text,
            logprob: decoded.logprob,
        });
    }
    write_generations(out, &gens)?;
    eprintln!("wrote {} generations to {}", gens.len(), out.display());
    Ok(())
}

fn cmd_evaluate(gen: &Path, gold: &Path, out: Option<&Path>) -> CmdResult {
    let gens = read_generations(gen)?;
    let gold = load_corpus(gold)?;
    let report = evaluate(&gens, &gold)?;
    let r = &report.reconstruction;
    eprintln!(
        "BLEU {:.4}  ROUGE-L {:.4}  overall P/R/F1 {:.1}/{:.1}/{:.1}  inter-dependent P/R/F1 {:.1}/{:.1}/{:.1}",
        report.bleu,
        report.rouge_l,
        100.0 * r.overall.precision,
        100.0 * r.overall.recall,
        100.0 * r.overall.f1,
        100.0 * r.interdependent.precision,
        100.0 * r.interdependent.recall,
        100.0 * r.interdependent.f1,
    );
    if report.no_predictions {
        eprintln!("warning: the generations mention no KB values");
    }
    if report.missing_generations > 0 {
        eprintln!("warning: {} gold entities have no generation", report.missing_generations);
    }
    write_json(out, &report)
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Synth { n, seed, out } => {
            let corpus = synth_corpus(n as usize, seed_or_default(seed)?, &Schema::person())?;
            write_corpus(&out, &corpus)?;
            eprintln!("wrote {} examples to {}", corpus.len(), out.display());
            Ok(())
        }
        Command::Split { data, seed, out_dir } => {
            let corpus = load_corpus(&data)?;
            let (tr, dev, test) = split(&corpus, seed_or_default(seed)?)?;
            fs::create_dir_all(&out_dir)?;
            for (name, part) in [("train", &tr), ("dev", &dev), ("test", &test)] {
                write_corpus(&out_dir.join(format!("{name}.jsonl")), part)?;
            }
            eprintln!("train {} / dev {} / test {}", tr.len(), dev.len(), test.len());
            Ok(())
        }
        Command::Stats { data } => write_json(None, &stats(&load_corpus(&data)?)?),
        Command::Train(args) => cmd_train(&args),
        Command::Generate {
            ckpt,
            data,
            out,
            beam,
            max_len,
            vocab,
            dump_attn,
        } => cmd_generate(&ckpt, &data, &out, beam, max_len, vocab.as_deref(), dump_attn.as_deref()),
        Command::Evaluate { gen, gold, out } => cmd_evaluate(&gen, &gold, out.as_deref()),
        Command::Config { ckpt, overrides } => {
            let cfg = match ckpt {
                Some(p) => checkpoint::load(&p)?.config,
                None => resolve_config(&overrides)?,
            };
            print!("{}", cfg.to_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nRun `kbgen --help` for usage.");
            ExitCode::from(1)
        }
        Err(Failure::Kb(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, KbError::Divergence { .. }) { 3 } else { 2 })
        }
    }
}
