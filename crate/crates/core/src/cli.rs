//! Command-line front end.
//!
//! Every subcommand reads its inputs, runs one library operation and writes
//! its outputs through a temporary file that is renamed into place. Flags can
//! also come from a `key = value` file given with `--config`; flags on the
//! command line win over the file, and the file wins over profile defaults.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{self, LmConfig, LmTrainConfig, TokenReduce};
use crate::miner::{self, MiningParams, MorphSequence};
use crate::morphnet::io::{sidecar_path, write_model};
use crate::morphnet::{self, GradientCheck, ModelConfig, MorphModel, MorphOptions, TrainConfig};
use crate::simindex::{LshIndex, LshParams};
use crate::tensorcore::FloatWidth;
use crate::textcore::{self, NormalizeOptions, Sentence, Vocabulary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Full-size hyperparameters: hidden 512, emb 300, edit 256, attn 512, batch 128, vocab 30000.
    Paper,
    /// Small dimensions for quick runs: hidden 64, emb 32, edit 16, attn 64, batch 16, vocab 2000.
    Desk,
}

#[derive(Debug, Parser, Serialize)]
#[command(name = "morphkit", version, about = "Mine, train, generate and score text morphing paths")]
pub struct Cli {
    /// File of `key = value` lines supplying flags for the subcommand
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Default set for model sizes and batch size
    #[arg(long, global = true, value_enum, default_value_t = Profile::Paper)]
    pub profile: Profile,
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads; 0 uses one per core
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Print reports as JSON
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Tokenize and normalize a raw corpus, one sentence per line
    #[command(args_override_self = true)]
    Normalize(NormalizeArgs),
    /// Build the MinHash/LSH index of a normalized corpus
    #[command(args_override_self = true)]
    BuildIndex(BuildIndexArgs),
    /// Extract morphing sequences by constrained random walks
    #[command(args_override_self = true)]
    Mine(MineArgs),
    /// Shuffle sequences into train/valid/test files
    #[command(args_override_self = true)]
    Split(SplitArgs),
    /// Train the fluency language model
    #[command(args_override_self = true)]
    TrainLm(TrainLmArgs),
    /// Train the morphing network on mined sequences
    #[command(args_override_self = true)]
    TrainMorph(TrainMorphArgs),
    /// Generate morphing paths between sentence pairs
    #[command(args_override_self = true)]
    Morph(MorphArgs),
    /// Score paths for fluency and smoothness
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Compare network gradients against finite differences
    #[command(args_override_self = true)]
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct NormalizeArgs {
    /// Raw text, `-` for stdin
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "-")]
    pub output: PathBuf,
    /// Keep the original letter case
    #[arg(long)]
    pub keep_case: bool,
    /// Keep numbers and multi-word names instead of `<num>`/`<ent>`
    #[arg(long)]
    pub no_placeholders: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildIndexArgs {
    /// Normalized corpus
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// MinHash permutations
    #[arg(long, default_value_t = 50)]
    pub perms: usize,
    #[arg(long, default_value_t = 25)]
    pub bands: usize,
    /// Signature rows per band
    #[arg(long, default_value_t = 2)]
    pub rows: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct MineArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Index built from the same corpus
    #[arg(long)]
    pub index: PathBuf,
    /// Sequences as JSON Lines
    #[arg(long, default_value = "-")]
    pub output: PathBuf,
    /// Minimum Jaccard similarity between neighbouring sentences (exclusive)
    #[arg(long, default_value_t = 0.5)]
    pub eps: f64,
    #[arg(long, visible_alias = "tmin", default_value_t = 4)]
    pub t_min: usize,
    #[arg(long, visible_alias = "tmax", default_value_t = 8)]
    pub t_max: usize,
    /// Walks per source sentence
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    /// Stop after this many sequences
    #[arg(long, default_value_t = 10_000_000)]
    pub count: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub valid: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub valid_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    pub test_fraction: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct VocabArgs {
    /// Vocabulary file (`token<TAB>count`); built from --corpus when absent
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Normalized corpus to build the vocabulary from
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Vocabulary size cap including special symbols [desk: 2000]
    #[arg(long, default_value_t = textcore::DEFAULT_VOCAB_SIZE)]
    pub vocab_size: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainLmArgs {
    /// Training sentences (normalized)
    #[arg(long)]
    pub train: PathBuf,
    /// Held-out sentences for early stopping; the training data when absent
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    #[command(flatten)]
    pub vocab: VocabArgs,
    /// [desk: 32]
    #[arg(long, default_value_t = 300)]
    pub emb: usize,
    /// [desk: 64]
    #[arg(long, default_value_t = 512)]
    pub hidden: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// [desk: 16]
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 2)]
    pub patience: usize,
    /// Checkpoint path; the sidecar goes to `<output>.json`
    #[arg(long)]
    pub output: PathBuf,
    /// Store parameters as 32-bit floats
    #[arg(long)]
    pub f32: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainMorphArgs {
    /// Training sequences (JSON Lines)
    #[arg(long)]
    pub train: PathBuf,
    /// Validation sequences; the training data when absent
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[command(flatten)]
    pub vocab: VocabArgs,
    /// [desk: 32]
    #[arg(long, default_value_t = 300)]
    pub emb: usize,
    /// [desk: 64]
    #[arg(long, default_value_t = 512)]
    pub hidden: usize,
    /// Edit vector size [desk: 16]
    #[arg(long, default_value_t = 256)]
    pub edit: usize,
    /// Attention size [desk: 64]
    #[arg(long, default_value_t = 512)]
    pub attn: usize,
    /// Separate embedding tables for encoder, decoder and edit table
    #[arg(long)]
    pub unshared_embeddings: bool,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// [desk: 16]
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Stop once the per-token training NLL is below this
    #[arg(long)]
    pub target_nll: Option<f64>,
    /// Global gradient-norm clip
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    /// Train with the edit vector held at zero
    #[arg(long)]
    pub zero_edit_vector: bool,
    #[arg(long)]
    pub output: PathBuf,
    /// Per-epoch losses as JSON
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub f32: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct MorphArgs {
    /// Checkpoint written by train-morph
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, requires = "target", conflicts_with = "pairs")]
    pub source: Option<String>,
    #[arg(long, requires = "source")]
    pub target: Option<String>,
    /// `source<TAB>target` per line, tokens separated by spaces
    #[arg(long, required_unless_present = "source")]
    pub pairs: Option<PathBuf>,
    /// Paths as JSON Lines
    #[arg(long, default_value = "-")]
    pub output: PathBuf,
    /// Attention weights per step as JSON Lines
    #[arg(long)]
    pub dumps: Option<PathBuf>,
    /// Beam width; 1 decodes greedily
    #[arg(long, default_value_t = 1)]
    pub beam: usize,
    #[arg(long, default_value_t = 10)]
    pub max_intermediates: usize,
    #[arg(long, default_value_t = 0.8)]
    pub stop_jaccard: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Paths as JSON Lines
    #[arg(long)]
    pub paths: PathBuf,
    /// Fluency language model checkpoint
    #[arg(long)]
    pub lm: Option<PathBuf>,
    /// Score sentences by summed instead of mean token NLL
    #[arg(long)]
    pub sum_nll: bool,
    /// Row label in the text table
    #[arg(long, default_value = "paths")]
    pub label: String,
}

#[derive(Debug, Args, Serialize)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 8)]
    pub hidden: usize,
    #[arg(long, default_value_t = 8)]
    pub emb: usize,
    #[arg(long, default_value_t = 4)]
    pub edit: usize,
    #[arg(long, default_value_t = 8)]
    pub attn: usize,
    /// Vocabulary size including special symbols
    #[arg(long, default_value_t = 20)]
    pub vocab: usize,
    /// Coordinates sampled per parameter
    #[arg(long, default_value_t = 200)]
    pub per_group: usize,
    /// Finite-difference step
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Largest acceptable relative error
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .try_init();
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match with_config_file(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let matches = match Cli::command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let mut cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_USAGE;
        }
    };
    if let Some((_, sub)) = matches.subcommand() {
        apply_profile(&mut cli, sub);
    }
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        e if e.is_numerical() => EXIT_NUMERICAL,
        Error::InvalidParam(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Splices `--key value` pairs from the config file right after the
/// subcommand name, so that flags typed later override them.
fn with_config_file(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        let a = a.to_string_lossy();
        if a == "--config" {
            path = argv.get(i + 1).map(PathBuf::from);
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let cmd = Cli::command();
    let Some(pos) = argv
        .iter()
        .position(|a| cmd.get_subcommands().any(|s| a.to_str() == Some(s.get_name())))
    else {
        return Ok(argv);
    };
    let sub = cmd.find_subcommand(argv[pos].to_str().unwrap_or_default()).expect("matched above");
    let text = fs::read_to_string(&path)?;
    let mut extra: Vec<OsString> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::InvalidParam(format!("{}:{}: expected `key = value`", path.display(), n + 1))
        })?;
        let key = key.trim().replace('_', "-");
        let value = value.trim().trim_matches('"');
        let arg = sub
            .get_arguments()
            .chain(cmd.get_arguments())
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| Error::InvalidParam(format!("{}: unknown key `{key}`", path.display())))?;
        if key == "config" {
            continue;
        }
        if arg.get_action().takes_values() {
            extra.push(format!("--{key}={value}").into());
        } else if value.parse::<bool>().map_err(|_| {
            Error::InvalidParam(format!("{}: `{key}` expects true or false", path.display()))
        })? {
            extra.push(format!("--{key}").into());
        }
    }
    let mut out = argv[..=pos].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[pos + 1..]);
    Ok(out)
}

fn apply_profile(cli: &mut Cli, sub: &ArgMatches) {
    if cli.profile != Profile::Desk {
        return;
    }
    let default = |id: &str| sub.value_source(id) == Some(ValueSource::DefaultValue);
    let set = |v: &mut usize, id: &str, desk: usize| {
        if default(id) {
            *v = desk;
        }
    };
    match &mut cli.command {
        Command::TrainLm(a) => {
            set(&mut a.emb, "emb", 32);
            set(&mut a.hidden, "hidden", 64);
            set(&mut a.batch, "batch", 16);
            set(&mut a.vocab.vocab_size, "vocab_size", 2000);
        }
        Command::TrainMorph(a) => {
            set(&mut a.emb, "emb", 32);
            set(&mut a.hidden, "hidden", 64);
            set(&mut a.edit, "edit", 16);
            set(&mut a.attn, "attn", 64);
            set(&mut a.batch, "batch", 16);
            set(&mut a.vocab.vocab_size, "vocab_size", 2000);
        }
        _ => {}
    }
}

fn execute(cli: &Cli) -> Result<i32> {
    info!("resolved config: {}", serde_json::to_string(cli)?);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build()
        .map_err(|e| Error::InvalidParam(format!("worker pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Normalize(a) => normalize(a),
        Command::BuildIndex(a) => build_index(cli, a),
        Command::Mine(a) => mine(cli, a),
        Command::Split(a) => split(cli, a),
        Command::TrainLm(a) => train_lm(cli, a),
        Command::TrainMorph(a) => train_morph(cli, a),
        Command::Morph(a) => morph(a),
        Command::Eval(a) => eval(cli, a),
        Command::GradCheck(a) => grad_check(cli, a),
    })
}

fn is_stdio(p: &Path) -> bool {
    p.as_os_str() == "-"
}

fn open(p: &Path) -> Result<Box<dyn BufRead>> {
    if is_stdio(p) {
        return Ok(Box::new(BufReader::new(io::stdin())));
    }
    let f = File::open(p).map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", p.display()))))?;
    Ok(Box::new(BufReader::new(f)))
}

fn temp_path(p: &Path) -> PathBuf {
    let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    p.with_file_name(format!(".{name}.{}.tmp", std::process::id()))
}

/// Writes all `paths` through temporary siblings, renaming them into place
/// only once every writer has finished. `-` writes to stdout.
fn write_atomic<F>(paths: &[&Path], f: F) -> Result<()>
where
    F: FnOnce(&mut [&mut dyn Write]) -> Result<()>,
{
    let temps: Vec<Option<PathBuf>> = paths.iter().map(|p| (!is_stdio(p)).then(|| temp_path(p))).collect();
    let result = (|| {
        let mut files: Vec<Box<dyn Write>> = Vec::new();
        for t in &temps {
            files.push(match t {
                Some(t) => Box::new(BufWriter::new(File::create(t)?)),
                None => Box::new(io::stdout().lock()),
            });
        }
        let mut refs: Vec<&mut dyn Write> = files.iter_mut().map(|b| b.as_mut() as &mut dyn Write).collect();
        f(&mut refs)?;
        for w in refs {
            w.flush()?;
        }
        Ok(())
    })();
    match result {
        Ok(()) => {
            for (t, p) in temps.iter().zip(paths) {
                if let Some(t) = t {
                    fs::rename(t, p)?;
                }
            }
            Ok(())
        }
        Err(e) => {
            temps.iter().flatten().for_each(|t| {
                let _ = fs::remove_file(t);
            });
            Err(e)
        }
    }
}

fn report<T: Serialize>(cli: &Cli, value: &T, text: impl FnOnce() -> String) -> Result<()> {
    let mut out = io::stdout().lock();
    if cli.json {
        serde_json::to_writer(&mut out, value)?;
        writeln!(out)?;
    } else {
        write!(out, "{}", text())?;
    }
    Ok(())
}

fn width(f32: bool) -> FloatWidth {
    if f32 {
        FloatWidth::F32
    } else {
        FloatWidth::F64
    }
}

fn read_corpus(p: &Path) -> Result<Vec<Sentence>> {
    textcore::read_normalized_corpus(open(p)?)
}

fn read_sequences(p: &Path) -> Result<Vec<MorphSequence>> {
    miner::read_sequences(open(p)?)
}

fn normalize(a: &NormalizeArgs) -> Result<i32> {
    let opts = NormalizeOptions { lowercase: !a.keep_case, placeholders: !a.no_placeholders };
    let corpus = textcore::read_raw_corpus(open(&a.input)?, opts)?;
    info!("normalized {} sentences", corpus.len());
    write_atomic(&[&a.output], |w| textcore::write_normalized_corpus(&mut w[0], &corpus))?;
    Ok(EXIT_OK)
}

fn build_index(cli: &Cli, a: &BuildIndexArgs) -> Result<i32> {
    let corpus = read_corpus(&a.corpus)?;
    let params = LshParams { num_perm: a.perms, bands: a.bands, rows: a.rows, seed: cli.seed };
    params.validate()?;
    let index = LshIndex::build(&corpus, params)?;
    info!("indexed {} sentences", index.len());
    write_atomic(&[&a.output], |w| index.write_to(&mut w[0]))?;
    Ok(EXIT_OK)
}

fn mine(cli: &Cli, a: &MineArgs) -> Result<i32> {
    let params = MiningParams {
        eps: a.eps,
        t_min: a.t_min,
        t_max: a.t_max,
        repeats: a.repeats,
        count: a.count,
        seed: cli.seed,
    };
    params.validate()?;
    let corpus = read_corpus(&a.corpus)?;
    let index = LshIndex::read_from(open(&a.index)?, &corpus)?;
    let (seqs, stats) = miner::mine(&corpus, &index, &params)?;
    info!("mined {} sequences from {} sources", stats.sequences, stats.sources);
    write_atomic(&[&a.output], |w| miner::write_sequences(&mut w[0], &seqs))?;
    if !is_stdio(&a.output) {
        report(cli, &stats, || {
            format!(
                "sequences {}\nsources {}\nwalks {} ({} accepted)\nmean steps {:.3}\nmean sentence length {:.3}\ntoward target {:.3}\n",
                stats.sequences,
                stats.sources,
                stats.walks,
                stats.accepted_walks,
                stats.mean_steps,
                stats.mean_sentence_len,
                stats.toward_target_fraction
            )
        })?;
    }
    Ok(EXIT_OK)
}

fn split(cli: &Cli, a: &SplitArgs) -> Result<i32> {
    let ok = |f: f64| (0.0..1.0).contains(&f);
    if !ok(a.valid_fraction) || !ok(a.test_fraction) || a.valid_fraction + a.test_fraction >= 1.0 {
        return Err(Error::InvalidParam("fractions must be in [0, 1) and sum below 1".into()));
    }
    let seqs = read_sequences(&a.input)?;
    let n = seqs.len();
    let valid = (n as f64 * a.valid_fraction).floor() as usize;
    let test = (n as f64 * a.test_fraction).floor() as usize;
    let parts = miner::split(&seqs, (n - valid - test, valid, test), cli.seed)?;
    for (path, part) in [(&a.train, &parts.train), (&a.valid, &parts.valid), (&a.test, &parts.test)] {
        write_atomic(&[path], |w| miner::write_sequences(&mut w[0], part))?;
    }
    info!("split {n} sequences into {}/{}/{}", parts.train.len(), parts.valid.len(), parts.test.len());
    Ok(EXIT_OK)
}

fn load_vocab(a: &VocabArgs, fallback: impl FnOnce() -> Vec<Sentence>) -> Result<Vocabulary> {
    if let Some(p) = &a.vocab {
        return Vocabulary::read_tsv(open(p)?);
    }
    let corpus = match &a.corpus {
        Some(p) => read_corpus(p)?,
        None => fallback(),
    };
    textcore::build_vocab(&corpus, a.vocab_size)
}

fn train_lm(cli: &Cli, a: &TrainLmArgs) -> Result<i32> {
    let corpus = read_corpus(&a.train)?;
    let heldout = match &a.heldout {
        Some(p) => read_corpus(p)?,
        None => Vec::new(),
    };
    let vocab = load_vocab(&a.vocab, || corpus.clone())?;
    let config = LmConfig { emb_dim: a.emb, hidden_dim: a.hidden, seed: cli.seed, ..LmConfig::default() };
    let cfg = LmTrainConfig {
        lr: a.lr,
        batch_size: a.batch,
        max_epochs: a.epochs,
        patience: a.patience,
        seed: cli.seed,
    };
    let (lm, history) = metrics::train_lm(&corpus, &heldout, vocab, config, &cfg)?;
    let side = sidecar_path(&a.output);
    write_atomic(&[&a.output, &side], |w| {
        let (p, rest) = w.split_at_mut(1);
        metrics::write_lm(&lm, &mut p[0], &mut rest[0], width(a.f32))
    })?;
    report(cli, &history, || {
        format!(
            "best epoch {}\nheld-out perplexity {:.4}\n",
            history.best_epoch, history.heldout_ppl[history.best_epoch]
        )
    })?;
    Ok(EXIT_OK)
}

fn train_morph(cli: &Cli, a: &TrainMorphArgs) -> Result<i32> {
    let train_set = read_sequences(&a.train)?;
    let valid_set = match &a.valid {
        Some(p) => read_sequences(p)?,
        None => Vec::new(),
    };
    let vocab = load_vocab(&a.vocab, || {
        train_set.iter().flat_map(|s| s.sentences().iter().cloned()).collect()
    })?;
    let config = ModelConfig {
        emb_dim: a.emb,
        hidden_dim: a.hidden,
        edit_dim: a.edit,
        attn_dim: a.attn,
        share_embeddings: !a.unshared_embeddings,
        seed: cli.seed,
        ..ModelConfig::full()
    };
    let cfg = TrainConfig {
        lr: a.lr,
        batch_size: a.batch,
        max_epochs: a.epochs,
        patience: a.patience,
        max_steps: a.max_steps,
        target_nll: a.target_nll,
        clip_norm: a.clip_norm,
        dropout: a.dropout,
        zero_edit_vector: a.zero_edit_vector,
        seed: cli.seed,
    };
    let mut model = MorphModel::new(config, vocab)?;
    let history = morphnet::train(&mut model, &train_set, &valid_set, &cfg)?;
    let side = sidecar_path(&a.output);
    write_atomic(&[&a.output, &side], |w| {
        let (p, rest) = w.split_at_mut(1);
        write_model(&model, &mut p[0], &mut rest[0], width(a.f32))
    })?;
    if let Some(h) = &a.history {
        write_atomic(&[h], |w| {
            serde_json::to_writer_pretty(&mut w[0], &history)?;
            Ok(writeln!(w[0])?)
        })?;
    }
    report(cli, &history, || {
        format!(
            "steps {}\nbest epoch {}\nbest validation nll {:.4}\nstopped by {:?}\n",
            history.steps, history.best_epoch, history.best_valid_nll, history.stop
        )
    })?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct DumpLine<'a> {
    pair: usize,
    #[serde(flatten)]
    dump: &'a morphnet::StepDump,
}

fn morph(a: &MorphArgs) -> Result<i32> {
    let model = morphnet::load_model(&a.model)?;
    let pairs: Vec<(Sentence, Sentence)> = match (&a.source, &a.target, &a.pairs) {
        (Some(s), Some(t), _) => vec![(Sentence::from_tokenized(s)?, Sentence::from_tokenized(t)?)],
        (_, _, Some(p)) => open(p)?
            .lines()
            .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
            .map(|l| {
                let l = l?;
                let (s, t) = l
                    .split_once('\t')
                    .ok_or_else(|| Error::format("pairs", format!("no tab in line {l:?}")))?;
                Ok((Sentence::from_tokenized(s)?, Sentence::from_tokenized(t)?))
            })
            .collect::<Result<_>>()?,
        _ => return Err(Error::InvalidParam("give --source and --target, or --pairs".into())),
    };
    let opts = MorphOptions { beam: a.beam, max_intermediates: a.max_intermediates, stop_jaccard: a.stop_jaccard };
    let outputs = pairs
        .par_iter()
        .map(|(s, t)| {
            if s.same_set(t) {
                return Err(Error::format("pairs", format!("source and target share a token set: {s}")));
            }
            morphnet::morph(&model, s, t, &opts)
        })
        .collect::<Result<Vec<_>>>()?;
    let seqs: Vec<MorphSequence> = outputs.iter().map(|o| o.sequence.clone()).collect();
    write_atomic(&[&a.output], |w| miner::write_sequences(&mut w[0], &seqs))?;
    if let Some(d) = &a.dumps {
        write_atomic(&[d], |w| {
            for (pair, o) in outputs.iter().enumerate() {
                for dump in &o.dumps {
                    serde_json::to_writer(&mut w[0], &DumpLine { pair, dump })?;
                    writeln!(w[0])?;
                }
            }
            Ok(())
        })?;
    }
    info!("generated {} paths", seqs.len());
    Ok(EXIT_OK)
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<i32> {
    let paths = read_sequences(&a.paths)?;
    let lm = a.lm.as_deref().map(metrics::load_lm).transpose()?;
    let reduce = if a.sum_nll { TokenReduce::Sum } else { TokenReduce::Mean };
    let r = metrics::evaluate(&paths, lm.as_ref(), reduce)?;
    report(cli, &r, || metrics::render_table(&[(a.label.as_str(), &r)]))?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct GradCheckSummary {
    max_rel_error: f64,
    checked: usize,
    tolerance: f64,
    passed: bool,
    groups: Vec<crate::tensorcore::GroupReport>,
}

fn grad_check(cli: &Cli, a: &GradCheckArgs) -> Result<i32> {
    let check = GradientCheck {
        config: ModelConfig {
            emb_dim: a.emb,
            hidden_dim: a.hidden,
            edit_dim: a.edit,
            attn_dim: a.attn,
            ..ModelConfig::desk()
        },
        vocab_size: a.vocab,
        per_group: a.per_group,
        step: a.step,
        seed: cli.seed,
    };
    let r = check.run()?;
    let passed = r.passed(a.tolerance);
    let summary = GradCheckSummary {
        max_rel_error: r.max_rel_error,
        checked: r.checked,
        tolerance: a.tolerance,
        passed,
        groups: r.groups,
    };
    report(cli, &summary, || {
        format!(
            "max relative error {:.3e} over {} coordinates ({})\n",
            summary.max_rel_error,
            summary.checked,
            if passed { "pass" } else { "FAIL" }
        )
    })?;
    Ok(if passed { EXIT_OK } else { EXIT_NUMERICAL })
}
