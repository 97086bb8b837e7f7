//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use parcrf_core::corpus::{build_vocab, CorpusError};
use parcrf_core::eval::{span_f1, token_accuracy, EvalError, EvalReport};
use parcrf_core::labels::{bio_to_bioes, detect_scheme, SchemeKind};
use parcrf_core::model::ConfigError;
use parcrf_core::synth::{generate_synthetic, SynthConfig, SynthError, SynthSpec};
use parcrf_core::train::{self, Metric, TrainConfig, TrainError};
use parcrf_core::{DecoderKind, EncoderConfig, EncoderKind, ModelBundle, TaggedSentence};
use thiserror::Error;

use crate::bench::{bench_run, BenchError, BenchSpec, TimingMode};
use crate::conll::{self, Block, Columns, ConllError};
use crate::embeddings::{load_embeddings, EmbeddingError};
use crate::model_io::{load_model, save_model, ModelIoError};
use crate::parallel::{available_cores, Pool};
use crate::report::{eval_kv, eval_table};

#[derive(Debug, Parser)]
#[command(name = "parcrf", version, about = "Sequence labeling with exact and mean-field CRF decoders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a tagger on a column file and save it.
    Train(TrainArgs),
    /// Tag a column file, appending one label column.
    Predict(PredictArgs),
    /// Score predictions against gold labels.
    Eval(EvalArgs),
    /// Write a corpus sampled from a random HMM.
    GenSynth(GenSynthArgs),
    /// Time the decoders on random inputs.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long, default_value = "linear")]
    pub encoder: EncoderKind,
    #[arg(long, default_value = "ain1")]
    pub decoder: DecoderKind,
    /// Mean-field iterations.
    #[arg(long, default_value_t = 3)]
    pub iters: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 64)]
    pub embedding_dim: usize,
    #[arg(long, default_value_t = 128)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 3)]
    pub kernel_width: usize,
    /// Words seen fewer times map to `<unk>`.
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// auto, f1 or accuracy.
    #[arg(long, default_value = "auto", value_parser = parse_metric)]
    pub metric: Metric,
    /// Pretrained word vectors in text format.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Per-epoch key=value log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Keep BIO labels instead of converting to BIOES.
    #[arg(long)]
    pub keep_bio: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Defaults to standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, requires = "pred", conflicts_with_all = ["model", "input"])]
    pub gold: Option<PathBuf>,
    #[arg(long, requires = "gold")]
    pub pred: Option<PathBuf>,
    #[arg(long, requires = "input")]
    pub model: Option<PathBuf>,
    #[arg(long, requires = "model")]
    pub input: Option<PathBuf>,
    #[arg(long, default_value = "auto", value_parser = parse_metric)]
    pub metric: Metric,
    /// Print key=value lines instead of a table.
    #[arg(long)]
    pub kv: bool,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// `separable` or key=value settings: labels, vocab, min_len, max_len,
    /// alpha, diagonal, seed.
    #[arg(long = "spec")]
    pub spec: Vec<String>,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [32usize, 128, 512])]
    pub lengths: Vec<usize>,
    #[arg(long, default_value_t = 10_000)]
    pub count: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [DecoderKind::Crf, DecoderKind::Ain1, DecoderKind::Ain2])]
    pub decoders: Vec<DecoderKind>,
    /// Worker counts to sweep; 0 means all cores.
    #[arg(long, value_delimiter = ',', default_values_t = [0usize])]
    pub workers: Vec<usize>,
    /// decoder_only, full_model or both.
    #[arg(long, default_value = "decoder_only")]
    pub mode: String,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long, default_value_t = 17)]
    pub labels: usize,
    #[arg(long, default_value_t = 2000)]
    pub vocab: usize,
    #[arg(long, default_value_t = 3)]
    pub iters: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "linear")]
    pub encoder: EncoderKind,
    #[arg(long, default_value_t = 64)]
    pub embedding_dim: usize,
    #[arg(long, default_value_t = 128)]
    pub hidden_dim: usize,
    /// Benchmark a saved model instead of a random one.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Print key=value lines instead of a table.
    #[arg(long)]
    pub kv: bool,
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    match s {
        "auto" => Ok(Metric::Auto),
        "f1" | "span_f1" => Ok(Metric::SpanF1),
        "accuracy" | "acc" => Ok(Metric::Accuracy),
        _ => Err(format!("unknown metric {s:?} (auto, f1, accuracy)")),
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Conll(#[from] ConllError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelIoError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },
    #[error("cannot start worker threads: {0}")]
    Threads(#[from] rayon::ThreadPoolBuildError),
    #[error("writing output: {0}")]
    Output(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Train(a) => cmd_train(a, out, err),
        Command::Predict(a) => cmd_predict(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::GenSynth(a) => cmd_gen_synth(a, out),
        Command::Bench(a) => cmd_bench(a, out, err),
    }
}

fn pool(workers: usize) -> Result<Pool, CliError> {
    Ok(Pool::new(if workers == 0 { available_cores() } else { workers })?)
}

fn read_labeled(path: &Path) -> Result<Vec<TaggedSentence>, CliError> {
    let data = conll::read_conll(path, Columns::default())?;
    if data.is_empty() {
        return Err(CliError::Data {
            path: path.to_path_buf(),
            message: "no sentences".into(),
        });
    }
    Ok(data)
}

fn to_bioes(data: &mut [TaggedSentence]) {
    for s in data {
        s.labels = bio_to_bioes(&s.labels);
    }
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let mut train_data = read_labeled(&a.train)?;
    let mut dev = read_labeled(&a.dev)?;
    let all_labels = || train_data.iter().chain(&dev).flat_map(|s| s.labels.iter().map(String::as_str));
    if !a.keep_bio && detect_scheme(all_labels()) == SchemeKind::Bio {
        to_bioes(&mut train_data);
        to_bioes(&mut dev);
        writeln!(err, "converted BIO labels to BIOES")?;
    }
    let (words, _) = build_vocab(&train_data, a.min_count);
    let both: Vec<TaggedSentence> = train_data.iter().chain(&dev).cloned().collect();
    let (_, labels) = build_vocab(&both, 1);
    for (path, data) in [(&a.train, &mut train_data), (&a.dev, &mut dev)] {
        for (i, s) in data.iter_mut().enumerate() {
            s.assign_ids(&words, &labels).map_err(|e| CliError::Data {
                path: path.clone(),
                message: format!("sentence {}: {e}", i + 1),
            })?;
        }
    }
    let mut enc = EncoderConfig::new(a.encoder, words.len(), labels.len());
    enc.embedding_dim = a.embedding_dim;
    enc.hidden_dim = a.hidden_dim;
    enc.kernel_width = a.kernel_width;
    let mut model = ModelBundle::new(enc, a.decoder, a.iters, words, labels, a.seed)?;
    if let Some(p) = &a.embeddings {
        let n = load_embeddings(p, &model.words, &mut model.params.embedding)?;
        writeln!(err, "loaded {n} pretrained vectors")?;
    }
    let cfg = TrainConfig {
        learning_rate: a.lr,
        batch_size: a.batch,
        patience: a.patience,
        max_epochs: a.epochs,
        metric: a.metric,
        seed: a.seed,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let exec = pool(a.workers)?;
    let mut log_file = match &a.log {
        Some(p) => Some(io::BufWriter::new(
            fs::File::create(p).map_err(|source| ConllError::Io { path: p.clone(), source })?,
        )),
        None => None,
    };
    let t0 = Instant::now();
    let clock = move || t0.elapsed().as_secs_f64();
    let mut log_err = None;
    let (model, log) = train::train(model, &train_data, &dev, &cfg, &exec, &clock, &mut |rec| {
        let line = rec.kv_line();
        let _ = writeln!(err, "{line}");
        if let Some(f) = log_file.as_mut() {
            if let Err(e) = writeln!(f, "{line}") {
                log_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(mut f) = log_file {
        f.flush()?;
    }
    if let Some(e) = log_err {
        return Err(e.into());
    }
    save_model(&a.out, &model)?;
    writeln!(
        out,
        "best_epoch={} best_dev={:.6} metric={} epochs={} model={}",
        log.best_epoch.unwrap_or(0),
        log.best_metric,
        log.metric.unwrap_or("auto"),
        log.epochs.len(),
        a.out.display()
    )?;
    Ok(())
}

/// Reads blocks and tags them with the model.
fn tag_file(model: &ModelBundle, input: &Path, workers: usize) -> Result<(Vec<Block>, Vec<Vec<usize>>), CliError> {
    let blocks = conll::read_blocks(input)?;
    let mut data = blocks
        .iter()
        .map(|b| conll::block_to_unlabeled(b, 0))
        .collect::<Result<Vec<_>, _>>()?;
    for s in &mut data {
        s.assign_token_ids(&model.words);
    }
    let preds = train::predict(model, &data, &pool(workers)?)?;
    Ok((blocks, preds))
}

fn cmd_predict(a: PredictArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let (blocks, preds) = tag_file(&model, &a.input, a.workers)?;
    let names: Vec<Vec<&str>> = preds.iter().map(|p| p.iter().map(|&y| model.labels.label(y)).collect()).collect();
    match &a.output {
        Some(p) => conll::write_file(p, |w| conll::write_predictions(w, &blocks, &names))?,
        None => conll::write_predictions(&mut *out, &blocks, &names)?,
    }
    Ok(())
}

fn score(gold: &[Vec<String>], pred: &[Vec<String>], metric: Metric) -> Result<EvalReport, CliError> {
    let inventory: Vec<String> = gold.iter().flatten().cloned().collect();
    Ok(match metric.resolve(&inventory) {
        Metric::SpanF1 => span_f1(gold, pred)?,
        _ => token_accuracy(gold, pred)?,
    })
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (gold, pred) = match (&a.gold, &a.pred, &a.model, &a.input) {
        (Some(g), Some(p), None, None) => {
            let gold: Vec<Vec<String>> = conll::read_conll(g, Columns::default())?.into_iter().map(|s| s.labels).collect();
            let pred: Vec<Vec<String>> = conll::read_conll(p, Columns::default())?.into_iter().map(|s| s.labels).collect();
            (gold, pred)
        }
        (None, None, Some(m), Some(i)) => {
            let model = load_model(m)?;
            let gold: Vec<Vec<String>> = conll::read_conll(i, Columns::default())?.into_iter().map(|s| s.labels).collect();
            let (_, preds) = tag_file(&model, i, a.workers)?;
            let pred = preds
                .iter()
                .map(|p| p.iter().map(|&y| model.labels.label(y).to_string()).collect())
                .collect();
            (gold, pred)
        }
        _ => {
            return Err(CliError::Usage(
                "eval needs either --gold and --pred, or --model and --input".into(),
            ))
        }
    };
    let report = score(&gold, &pred, a.metric)?;
    if a.kv {
        write!(out, "{}", eval_kv(&report))?;
    } else {
        write!(out, "{}", eval_table(&report))?;
    }
    Ok(())
}

fn synth_spec(settings: &[String], seed: Option<u64>) -> Result<SynthSpec, CliError> {
    let mut cfg = SynthConfig::default();
    let mut separable = false;
    for s in settings.iter().flat_map(|s| s.split(',')).filter(|s| !s.is_empty()) {
        if s == "separable" {
            separable = true;
            continue;
        }
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--spec expects key=value or `separable`, got {s:?}")))?;
        let int = || {
            v.parse::<usize>()
                .map_err(|_| CliError::Usage(format!("{k}: {v:?} is not an integer")))
        };
        let float = || v.parse::<f64>().map_err(|_| CliError::Usage(format!("{k}: {v:?} is not a number")));
        match k {
            "labels" | "label_count" => cfg.label_count = int()?,
            "vocab" | "vocab_size" => cfg.vocab_size = int()?,
            "min_len" => cfg.min_len = int()?,
            "max_len" => cfg.max_len = int()?,
            "alpha" => cfg.alpha = float()?,
            "diagonal" => cfg.diagonal = float()?,
            "seed" => cfg.seed = v.parse().map_err(|_| CliError::Usage(format!("seed: {v:?} is not an integer")))?,
            _ => return Err(CliError::Usage(format!("unknown --spec key {k:?}"))),
        }
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(if separable {
        SynthSpec::separable(cfg.label_count, cfg.min_len, cfg.max_len, cfg.seed)?
    } else {
        cfg.build()?
    })
}

fn cmd_gen_synth(a: GenSynthArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = synth_spec(&a.spec, a.seed)?;
    let data = generate_synthetic(&spec, a.count);
    conll::write_file(&a.out, |w| conll::write_conll(w, &data))?;
    let tokens: usize = data.iter().map(TaggedSentence::len).sum();
    writeln!(out, "sentences={} tokens={} out={}", data.len(), tokens, a.out.display())?;
    Ok(())
}

fn cmd_bench(a: BenchArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let modes = match a.mode.as_str() {
        "both" => vec![TimingMode::DecoderOnly, TimingMode::FullModel],
        m => vec![m.parse::<TimingMode>().map_err(CliError::Usage)?],
    };
    let model = a.model.as_deref().map(load_model).transpose()?;
    let spec = BenchSpec {
        lengths: a.lengths,
        count: a.count,
        decoders: a.decoders,
        workers: a.workers.iter().map(|&w| if w == 0 { available_cores() } else { w }).collect(),
        modes,
        repetitions: a.reps,
        iterations: a.iters,
        seed: a.seed,
        labels: a.labels,
        vocab: a.vocab,
        encoder: a.encoder,
        embedding_dim: a.embedding_dim,
        hidden_dim: a.hidden_dim,
        ..BenchSpec::default()
    };
    if let Err(BenchError::Spec(m)) = spec.validate() {
        return Err(CliError::Usage(m));
    }
    let report = bench_run(&spec, model.as_ref(), &mut |line| {
        let _ = writeln!(err, "{line}");
    })?;
    if a.kv {
        write!(out, "{}", report.kv_lines())?;
    } else {
        write!(out, "{}", report.table())?;
    }
    Ok(())
}
