//! Decoding-speed benchmark over random token streams.
//!
//! Token ids are drawn uniformly from the model vocabulary, so timings do not
//! depend on any corpus. Work proceeds in chunks of sentences: for each chunk
//! the inputs (and, in decoder-only mode, the potentials) are prepared
//! outside the timed region, then every decoder configuration decodes the
//! chunk once per repetition. A configuration's time for one repetition is
//! the sum over chunks; the report gives the median over repetitions. The
//! first chunk is decoded once untimed per configuration as a warm-up.
//! Sentences are decoded one after another; the worker count only
//! parallelises positions inside each mean-field iteration.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use parcrf_core::encoder::{compute_potentials, EncoderError};
use parcrf_core::rng::SplitMix64;
use parcrf_core::train::decode_potentials;
use parcrf_core::{DecoderKind, EncoderConfig, EncoderKind, Executor, LabelVocab, ModelBundle, Potentials, Vocab};
use thiserror::Error;

use crate::model_io::fnv1a;
use crate::parallel::Pool;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark setting: {0}")]
    Spec(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Config(#[from] parcrf_core::model::ConfigError),
    #[error("cannot start {workers} worker threads: {source}")]
    Pool {
        workers: usize,
        source: rayon::ThreadPoolBuildError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimingMode {
    /// Decoding only, from precomputed potentials.
    DecoderOnly,
    /// Encoder, emission scores and decoding.
    FullModel,
}

impl TimingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TimingMode::DecoderOnly => "decoder_only",
            TimingMode::FullModel => "full_model",
        }
    }
}

impl FromStr for TimingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "decoder_only" | "dec" => Ok(TimingMode::DecoderOnly),
            "full_model" | "all" => Ok(TimingMode::FullModel),
            _ => Err(format!("unknown timing mode {s:?} (decoder_only, full_model)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub lengths: Vec<usize>,
    pub count: usize,
    pub decoders: Vec<DecoderKind>,
    pub workers: Vec<usize>,
    pub modes: Vec<TimingMode>,
    pub repetitions: usize,
    pub iterations: usize,
    /// Sentences prepared at a time.
    pub chunk: usize,
    pub seed: u64,
    /// Shape of the random model used when none is supplied.
    pub labels: usize,
    pub vocab: usize,
    pub encoder: EncoderKind,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            lengths: vec![32, 128, 512],
            count: 10_000,
            decoders: vec![DecoderKind::Crf, DecoderKind::Ain1, DecoderKind::Ain2],
            workers: vec![1],
            modes: vec![TimingMode::DecoderOnly],
            repetitions: 3,
            iterations: 3,
            chunk: 1000,
            seed: 1,
            labels: 17,
            vocab: 2000,
            encoder: EncoderKind::WordOnlyLinear,
            embedding_dim: 64,
            hidden_dim: 128,
        }
    }
}

impl BenchSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::Spec(m.to_string()));
        if self.lengths.is_empty() || self.lengths.contains(&0) {
            return bad("lengths must be non-empty and at least 1");
        }
        if self.count == 0 {
            return bad("count must be at least 1");
        }
        if self.decoders.is_empty() || self.modes.is_empty() || self.workers.is_empty() {
            return bad("decoders, modes and workers must be non-empty");
        }
        if self.workers.contains(&0) {
            return bad("worker counts must be at least 1");
        }
        if self.repetitions == 0 || self.iterations == 0 || self.chunk == 0 {
            return bad("repetitions, iterations and chunk must be at least 1");
        }
        Ok(())
    }

    /// Random model with small random transition tables.
    pub fn random_model(&self) -> Result<ModelBundle, BenchError> {
        let words = Vocab::from_items(
            std::iter::once(Vocab::UNK.to_string())
                .chain((1..self.vocab.max(2)).map(|i| format!("w{i}")))
                .collect(),
        )
        .expect("distinct words");
        let labels = LabelVocab::from_labels(parcrf_core::synth::label_names(self.labels.max(1))).expect("distinct labels");
        let mut enc = EncoderConfig::new(self.encoder, words.len(), labels.len());
        enc.embedding_dim = self.embedding_dim;
        enc.hidden_dim = self.hidden_dim;
        let mut m = ModelBundle::new(enc, DecoderKind::Ain2, self.iterations, words, labels, self.seed)?;
        let mut rng = SplitMix64::new(self.seed ^ 0xB0_0B);
        for t in [&mut m.params.transition, &mut m.params.transition2] {
            t.data_mut().iter_mut().for_each(|v| *v = rng.uniform(-0.5, 0.5));
        }
        Ok(m)
    }
}

/// Token ids of one chunk of benchmark sentences. The stream depends only
/// on the seed, the length, the vocabulary size and the chunk index.
pub fn bench_inputs(seed: u64, length: usize, vocab: usize, first: usize, count: usize) -> Vec<Vec<usize>> {
    (first..first + count)
        .map(|s| {
            let mut rng =
                SplitMix64::new(seed ^ (length as u64).wrapping_mul(0x9E37_79B9) ^ (s as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
            (0..length).map(|_| if vocab > 1 { 1 + rng.below(vocab - 1) } else { 0 }).collect()
        })
        .collect()
}

/// Order-sensitive FNV-1a over label ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Checksum(u64);

impl Default for Checksum {
    fn default() -> Self {
        Checksum(fnv1a(&[]))
    }
}

impl Checksum {
    pub fn add(&mut self, labels: &[usize]) {
        for &y in labels {
            for b in (y as u32).to_le_bytes() {
                self.0 ^= b as u64;
                self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        // sentence separator
        self.0 ^= 0xff;
        self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
    }

    pub fn of(preds: &[Vec<usize>]) -> Self {
        let mut c = Self::default();
        for p in preds {
            c.add(p);
        }
        c
    }

    pub fn value(self) -> u64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub decoder: DecoderKind,
    pub length: usize,
    pub workers: usize,
    pub mode: TimingMode,
    pub sentences: usize,
    pub median_seconds: f64,
    pub tokens_per_second: f64,
    /// Median CRF time at the same length and mode over this row's median.
    pub speedup_vs_crf: Option<f64>,
    pub checksum: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub cores: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn find(&self, decoder: DecoderKind, length: usize, workers: usize, mode: TimingMode) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.decoder == decoder && r.length == length && r.workers == workers && r.mode == mode)
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<13} {:<7} {:>6} {:>7} {:>12} {:>14} {:>9}",
            "mode", "decoder", "length", "workers", "median_s", "tokens/s", "speedup"
        );
        for r in &self.rows {
            let sp = r.speedup_vs_crf.map_or("-".to_string(), |v| format!("{v:.2}"));
            let _ = writeln!(
                s,
                "{:<13} {:<7} {:>6} {:>7} {:>12.4} {:>14.0} {:>9}",
                r.mode.as_str(),
                r.decoder.as_str(),
                r.length,
                r.workers,
                r.median_seconds,
                r.tokens_per_second,
                sp
            );
        }
        s
    }

    pub fn kv_lines(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "bench mode={} decoder={} length={} workers={} sentences={} median_s={:.6} tokens_per_s={:.1} speedup_vs_crf={} checksum={:016x} cores={}",
                r.mode.as_str(),
                r.decoder.as_str(),
                r.length,
                r.workers,
                r.sentences,
                r.median_seconds,
                r.tokens_per_second,
                r.speedup_vs_crf.map_or("na".to_string(), |v| format!("{v:.4}")),
                r.checksum,
                self.cores
            );
        }
        s
    }
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Potentials for every sentence; `transition2` is always present so that
/// one set serves every decoder.
pub fn potentials_for(model: &ModelBundle, inputs: &[Vec<usize>]) -> Result<Vec<Potentials>, EncoderError> {
    inputs
        .iter()
        .map(|t| {
            let mut p = compute_potentials(model, t)?;
            if p.transition2.is_none() {
                p.transition2 = Some(model.params.transition2.clone());
            }
            Ok(p)
        })
        .collect()
}

pub fn decode_all<E: Executor>(kind: DecoderKind, iterations: usize, pots: &[Potentials], exec: &E) -> Vec<Vec<usize>> {
    pots.iter()
        .map(|p| decode_potentials(kind, kind.mfvi(iterations), p, exec))
        .collect()
}

struct Config {
    decoder: DecoderKind,
    workers: usize,
    times: Vec<f64>,
    checksum: Checksum,
}

fn decode_timed<E: Executor>(
    model: &ModelBundle,
    mode: TimingMode,
    kind: DecoderKind,
    iterations: usize,
    inputs: &[Vec<usize>],
    pots: &[Potentials],
    exec: &E,
) -> Result<(f64, Vec<Vec<usize>>), BenchError> {
    let start = Instant::now();
    let preds = match mode {
        TimingMode::DecoderOnly => decode_all(kind, iterations, pots, exec),
        TimingMode::FullModel => {
            let mut out = Vec::with_capacity(inputs.len());
            for t in inputs {
                let pot = compute_potentials(model, t)?;
                out.push(decode_potentials(kind, kind.mfvi(iterations), &pot, exec));
            }
            out
        }
    };
    Ok((start.elapsed().as_secs_f64(), preds))
}

/// Runs the benchmark. Without a model, a random one is built from the
/// spec. Progress lines go to `progress`.
pub fn bench_run(spec: &BenchSpec, model: Option<&ModelBundle>, progress: &mut dyn FnMut(&str)) -> Result<BenchReport, BenchError> {
    spec.validate()?;
    let owned;
    let model = match model {
        Some(m) => {
            let mut m = m.clone();
            m.iterations = spec.iterations;
            owned = m;
            &owned
        }
        None => {
            owned = spec.random_model()?;
            &owned
        }
    };
    let vocab = model.words.len();
    let mut pools = Vec::new();
    for &w in &spec.workers {
        pools.push((w, Pool::new(w).map_err(|source| BenchError::Pool { workers: w, source })?));
    }
    let mut report = BenchReport {
        cores: crate::parallel::available_cores(),
        rows: Vec::new(),
    };
    for &mode in &spec.modes {
        for &length in &spec.lengths {
            // Decoders that do not use worker threads are timed once.
            let mut configs: Vec<Config> = Vec::new();
            for &decoder in &spec.decoders {
                let ws: Vec<usize> = match decoder {
                    DecoderKind::Ain1 | DecoderKind::Ain2 => spec.workers.clone(),
                    _ => vec![1],
                };
                for workers in ws {
                    configs.push(Config {
                        decoder,
                        workers,
                        times: vec![0.0; spec.repetitions],
                        checksum: Checksum::default(),
                    });
                }
            }
            let fallback = Pool::new(1).map_err(|source| BenchError::Pool { workers: 1, source })?;
            let mut first = 0;
            while first < spec.count {
                let n = spec.chunk.min(spec.count - first);
                let inputs = bench_inputs(spec.seed, length, vocab, first, n);
                let pots = match mode {
                    TimingMode::DecoderOnly => potentials_for(model, &inputs)?,
                    TimingMode::FullModel => Vec::new(),
                };
                for c in &mut configs {
                    let exec = pools.iter().find(|(w, _)| *w == c.workers).map_or(&fallback, |(_, p)| p);
                    if first == 0 {
                        decode_timed(model, mode, c.decoder, spec.iterations, &inputs, &pots, exec)?;
                    }
                    for rep in 0..spec.repetitions {
                        let (t, preds) = decode_timed(model, mode, c.decoder, spec.iterations, &inputs, &pots, exec)?;
                        c.times[rep] += t;
                        if rep == 0 {
                            for p in &preds {
                                c.checksum.add(p);
                            }
                        }
                    }
                }
                first += n;
            }
            let crf = configs.iter().find(|c| c.decoder == DecoderKind::Crf).map(|c| median(&c.times));
            for c in configs {
                let med = median(&c.times);
                let row = BenchRow {
                    decoder: c.decoder,
                    length,
                    workers: c.workers,
                    mode,
                    sentences: spec.count,
                    median_seconds: med,
                    tokens_per_second: (spec.count * length) as f64 / med,
                    speedup_vs_crf: crf.map(|t| t / med),
                    checksum: c.checksum.value(),
                };
                progress(&format!(
                    "{} {} n={} workers={} median={:.4}s",
                    mode.as_str(),
                    row.decoder.as_str(),
                    length,
                    row.workers,
                    med
                ));
                report.rows.push(row);
            }
        }
    }
    Ok(report)
}
