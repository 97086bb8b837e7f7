//! SGD training for every decoder, dev-set model selection and learning-rate
//! annealing, plus batch prediction and evaluation helpers.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::autodiff::{Graph, GraphError, NodeId};
use crate::corpus::TaggedSentence;
use crate::encoder::{compute_potentials, potential_nodes, EncoderError, ParamNodes, PotentialNodes, Potentials};
use crate::eval::{span_f1, token_accuracy, EvalError, EvalReport};
use crate::exact::{self, InferenceError};
use crate::exec::{Executor, Sequential};
use crate::labels::{detect_scheme, SchemeKind};
use crate::math;
use crate::mfvi::{self, MfviConfig};
use crate::model::{ConfigError, DecoderKind, ModelBundle, ParamName, Params};
use crate::rng::SplitMix64;
use crate::tensor::TensorError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("loss for sentence {sentence} is not finite")]
    NonFinite { sentence: usize },
    #[error("sentence {sentence}: {source}")]
    Encoder { sentence: usize, source: EncoderError },
    #[error("sentence {sentence}: {source}")]
    Inference { sentence: usize, source: InferenceError },
    #[error("sentence {sentence} has no token or label ids assigned")]
    MissingIds { sentence: usize },
    #[error("{0} data is empty")]
    Empty(&'static str),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn graph_non_finite(e: &GraphError) -> bool {
    matches!(e, GraphError::Tensor(TensorError::NonFinite { .. }))
}

impl TrainError {
    fn encoder(sentence: usize, source: EncoderError) -> Self {
        match &source {
            EncoderError::Graph(g) if graph_non_finite(g) => TrainError::NonFinite { sentence },
            _ => TrainError::Encoder { sentence, source },
        }
    }

    fn inference(sentence: usize, source: InferenceError) -> Self {
        match &source {
            InferenceError::Graph(g) if graph_non_finite(g) => TrainError::NonFinite { sentence },
            _ => TrainError::Inference { sentence, source },
        }
    }
}

/// Which dev metric drives model selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    /// Span F1 for BIO/BIOES label sets, token accuracy otherwise.
    #[default]
    Auto,
    SpanF1,
    Accuracy,
}

impl Metric {
    pub fn resolve(self, labels: &[String]) -> Metric {
        match self {
            Metric::Auto => match detect_scheme(labels.iter().map(String::as_str)) {
                SchemeKind::Bio | SchemeKind::Bioes => Metric::SpanF1,
                SchemeKind::Plain => Metric::Accuracy,
            },
            m => m,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Auto => "auto",
            Metric::SpanF1 => "f1",
            Metric::Accuracy => "accuracy",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub anneal_factor: f64,
    pub patience: usize,
    pub max_epochs: usize,
    /// Training stops once the learning rate falls below this.
    pub min_learning_rate: f64,
    /// Probability of replacing a training-set singleton by `<unk>`.
    pub unk_replace: f64,
    /// Rescale each batch gradient to at most this L2 norm. Off by default.
    pub clip_norm: Option<f64>,
    pub metric: Metric,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 32,
            anneal_factor: 0.5,
            patience: 10,
            max_epochs: 100,
            min_learning_rate: 1e-4,
            unk_replace: 0.5,
            clip_norm: None,
            metric: Metric::Auto,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |what: &str, value: f64| ConfigError::Unknown {
            what: "training setting",
            value: format!("{what}={value}"),
        };
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(bad("learning_rate", self.learning_rate));
        }
        if !(self.anneal_factor > 0.0 && self.anneal_factor < 1.0) {
            return Err(bad("anneal_factor", self.anneal_factor));
        }
        if !(0.0..=1.0).contains(&self.unk_replace) {
            return Err(bad("unk_replace", self.unk_replace));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::Zero("batch_size"));
        }
        if self.patience == 0 {
            return Err(ConfigError::Zero("patience"));
        }
        Ok(())
    }
}

/// Dev-driven learning-rate schedule: after `patience` epochs without a new
/// best, multiply the rate by `factor` and start counting again.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub lr: f64,
    pub best: f64,
    pub best_epoch: Option<usize>,
    stale: usize,
    patience: usize,
    factor: f64,
    min_lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    pub improved: bool,
    pub annealed: bool,
}

impl Schedule {
    pub fn new(lr: f64, patience: usize, factor: f64, min_lr: f64) -> Self {
        Self {
            lr,
            best: f64::NEG_INFINITY,
            best_epoch: None,
            stale: 0,
            patience,
            factor,
            min_lr,
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.learning_rate, cfg.patience, cfg.anneal_factor, cfg.min_learning_rate)
    }

    pub fn observe(&mut self, epoch: usize, metric: f64) -> Step {
        if metric > self.best {
            self.best = metric;
            self.best_epoch = Some(epoch);
            self.stale = 0;
            return Step {
                improved: true,
                annealed: false,
            };
        }
        self.stale += 1;
        let annealed = self.stale >= self.patience;
        if annealed {
            self.lr *= self.factor;
            self.stale = 0;
        }
        Step { improved: false, annealed }
    }

    pub fn exhausted(&self) -> bool {
        self.lr < self.min_lr
    }
}

/// Training objective for one sentence as a graph node.
pub fn loss_for(
    kind: DecoderKind,
    g: &mut Graph<'_>,
    pot: &PotentialNodes,
    gold: &[usize],
    mfvi_cfg: Option<MfviConfig>,
) -> Result<NodeId, InferenceError> {
    match kind {
        DecoderKind::MaxEnt => {
            let v = g.value(pot.unary);
            exact::check_gold(gold, v.rows(), v.cols())?;
            mfvi::nll_of_scores(g, pot.unary, gold)
        }
        DecoderKind::Crf => exact::crf_nll(g, pot, gold),
        DecoderKind::Ain1 | DecoderKind::Ain2 => {
            let cfg = mfvi_cfg.unwrap_or_else(|| kind.mfvi(MfviConfig::DEFAULT_ITERATIONS).unwrap());
            mfvi::ain_nll(g, pot, cfg, gold)
        }
    }
}

/// One training example: its position in the corpus, the (possibly
/// `<unk>`-substituted) token ids and the gold label ids.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub index: usize,
    pub tokens: &'a [usize],
    pub gold: &'a [usize],
}

/// Summed loss and summed parameter gradients over `batch`, computed in one
/// graph.
pub fn batch_gradient(model: &ModelBundle, batch: &[Example<'_>]) -> Result<(f64, Params), TrainError> {
    let mut g = Graph::new();
    let p = ParamNodes::attach(&mut g, &model.params);
    let cfg = model.mfvi();
    let order = cfg.map(|c| c.order);
    let mut total: Option<NodeId> = None;
    for ex in batch {
        let pot = potential_nodes(&mut g, &p, &model.encoder, ex.tokens, order).map_err(|e| TrainError::encoder(ex.index, e))?;
        let loss = loss_for(model.decoder, &mut g, &pot, ex.gold, cfg).map_err(|e| TrainError::inference(ex.index, e))?;
        if !g.value(loss).item().is_finite() {
            return Err(TrainError::NonFinite { sentence: ex.index });
        }
        total = Some(match total {
            None => loss,
            Some(t) => g.add(t, loss)?,
        });
    }
    let Some(total) = total else {
        return Ok((0.0, model.params.zeros_like()));
    };
    let value = g.value(total).item();
    g.backward(total)?;
    Ok((value, p.collect_grads(&mut g, &model.params)))
}

struct Slot<'a> {
    batch: &'a [Example<'a>],
    out: Option<Result<(f64, Params), TrainError>>,
}

/// [`batch_gradient`] split into one group per worker. Group results are
/// reduced in group order.
pub fn batch_gradient_parallel<E: Executor>(model: &ModelBundle, batch: &[Example<'_>], exec: &E) -> Result<(f64, Params), TrainError> {
    let workers = exec.workers().min(batch.len()).max(1);
    if workers == 1 {
        return batch_gradient(model, batch);
    }
    let per = batch.len().div_ceil(workers);
    let mut slots: Vec<Slot<'_>> = batch.chunks(per).map(|b| Slot { batch: b, out: None }).collect();
    exec.run_chunks(&mut slots, 1, &|_, chunk| {
        for s in chunk {
            s.out = Some(batch_gradient(model, s.batch));
        }
    });
    let mut loss = 0.0;
    let mut grads: Option<Params> = None;
    for s in slots {
        let (l, gr) = s.out.expect("every group runs")?;
        loss += l;
        match &mut grads {
            None => grads = Some(gr),
            Some(acc) => acc.add_assign(&gr),
        }
    }
    Ok((loss, grads.expect("batch is non-empty")))
}

fn check_ids(data: &[TaggedSentence]) -> Result<(), TrainError> {
    for (sentence, s) in data.iter().enumerate() {
        if s.token_ids.len() != s.len() || s.gold_labels.len() != s.len() || s.is_empty() {
            return Err(TrainError::MissingIds { sentence });
        }
    }
    Ok(())
}

/// Word ids seen exactly once in `data`.
pub fn singletons(data: &[TaggedSentence], vocab_size: usize) -> Vec<bool> {
    let mut counts = alloc::vec![0u32; vocab_size];
    for s in data {
        for &t in &s.token_ids {
            if let Some(c) = counts.get_mut(t) {
                *c = c.saturating_add(1);
            }
        }
    }
    counts.into_iter().map(|c| c == 1).collect()
}

fn clip(grads: &mut Params, max_norm: f64) {
    let norm = math::sqrt(grads.iter().flat_map(|(_, t)| t.data().iter()).map(|v| v * v).sum::<f64>());
    if norm > max_norm {
        let s = max_norm / norm;
        for name in ParamName::ALL {
            grads.get_mut(name).scale(s);
        }
    }
}

/// One pass over `data` in a seeded random order. Returns the mean
/// per-sentence loss.
pub fn sgd_epoch<E: Executor>(
    model: &mut ModelBundle,
    data: &[TaggedSentence],
    cfg: &TrainConfig,
    lr: f64,
    rng: &mut SplitMix64,
    exec: &E,
) -> Result<f64, TrainError> {
    if data.is_empty() {
        return Err(TrainError::Empty("training"));
    }
    check_ids(data)?;
    let single = singletons(data, model.encoder.vocab_size);
    let tokens: Vec<Vec<usize>> = data
        .iter()
        .map(|s| {
            s.token_ids
                .iter()
                .map(|&t| {
                    if cfg.unk_replace > 0.0 && single.get(t).copied().unwrap_or(false) && rng.bernoulli(cfg.unk_replace) {
                        0
                    } else {
                        t
                    }
                })
                .collect()
        })
        .collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    rng.shuffle(&mut order);
    let examples: Vec<Example<'_>> = order
        .iter()
        .map(|&i| Example {
            index: i,
            tokens: &tokens[i],
            gold: &data[i].gold_labels,
        })
        .collect();
    let mut total = 0.0;
    for batch in examples.chunks(cfg.batch_size) {
        let (loss, mut grads) = batch_gradient_parallel(model, batch, exec)?;
        total += loss;
        if let Some(max) = cfg.clip_norm {
            clip(&mut grads, max * batch.len() as f64);
        }
        let step = lr / batch.len() as f64;
        for name in ParamName::ALL {
            if !model.decoder.uses(name) {
                continue;
            }
            let p = model.params.get_mut(name);
            for (w, g) in p.data_mut().iter_mut().zip(grads.get(name).data()) {
                *w -= step * g;
            }
        }
    }
    Ok(total / data.len() as f64)
}

/// Labels from potentials with the model's decoder.
pub fn decode_potentials<E: Executor>(kind: DecoderKind, cfg: Option<MfviConfig>, pot: &Potentials, exec: &E) -> Vec<usize> {
    match kind {
        DecoderKind::MaxEnt => (0..pot.len()).map(|i| math::argmax(pot.unary.row(i))).collect(),
        DecoderKind::Crf => exact::viterbi(pot).path,
        DecoderKind::Ain1 | DecoderKind::Ain2 => {
            let cfg = cfg.unwrap_or_else(|| kind.mfvi(MfviConfig::DEFAULT_ITERATIONS).unwrap());
            mfvi::ain_decode(pot, cfg, exec)
        }
    }
}

pub fn decode_sentence(model: &ModelBundle, tokens: &[usize]) -> Result<Vec<usize>, EncoderError> {
    let pot = compute_potentials(model, tokens)?;
    Ok(decode_potentials(model.decoder, model.mfvi(), &pot, &Sequential))
}

/// Label ids for every sentence (from `token_ids`), parallel over
/// sentences.
pub fn predict<E: Executor>(model: &ModelBundle, data: &[TaggedSentence], exec: &E) -> Result<Vec<Vec<usize>>, TrainError> {
    let mut slots: Vec<(usize, Option<Result<Vec<usize>, TrainError>>)> = (0..data.len()).map(|i| (i, None)).collect();
    let chunk = crate::exec::chunk_len_for(data.len(), exec.workers(), 8);
    exec.run_chunks(&mut slots, chunk, &|_, part| {
        for (i, out) in part {
            let s = &data[*i];
            *out = Some(if s.token_ids.len() != s.len() || s.is_empty() {
                Err(TrainError::MissingIds { sentence: *i })
            } else {
                decode_sentence(model, &s.token_ids).map_err(|e| TrainError::encoder(*i, e))
            });
        }
    });
    slots.into_iter().map(|(_, r)| r.expect("every sentence decoded")).collect()
}

/// Scores the model's predictions on `data` against its gold label strings.
pub fn evaluate<E: Executor>(model: &ModelBundle, data: &[TaggedSentence], metric: Metric, exec: &E) -> Result<EvalReport, TrainError> {
    let pred = predict(model, data, exec)?;
    let pred: Vec<Vec<&str>> = pred.iter().map(|p| p.iter().map(|&y| model.labels.label(y)).collect()).collect();
    let gold: Vec<Vec<&str>> = data.iter().map(|s| s.labels.iter().map(String::as_str).collect()).collect();
    Ok(match metric.resolve(model.labels.labels()) {
        Metric::SpanF1 => span_f1(&gold, &pred)?,
        _ => token_accuracy(&gold, &pred)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_metric: f64,
    pub lr: f64,
    pub seconds: f64,
    pub improved: bool,
}

impl EpochRecord {
    /// `key=value` pairs separated by spaces, one record per line.
    pub fn kv_line(&self) -> String {
        format!(
            "epoch={} train_loss={:.6} dev_metric={:.6} lr={} seconds={:.3} improved={}",
            self.epoch, self.train_loss, self.dev_metric, self.lr, self.seconds, self.improved
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_metric: f64,
    pub metric: Option<&'static str>,
}

/// Trains with SGD, evaluating on `dev` after every epoch and keeping the
/// parameters with the best dev metric. `clock` returns seconds from any
/// fixed origin; `on_epoch` sees each record as it is produced.
pub fn train<E: Executor>(
    mut model: ModelBundle,
    train_data: &[TaggedSentence],
    dev: &[TaggedSentence],
    cfg: &TrainConfig,
    exec: &E,
    clock: &dyn Fn() -> f64,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(ModelBundle, TrainLog), TrainError> {
    cfg.validate()?;
    model.validate()?;
    if dev.is_empty() {
        return Err(TrainError::Empty("development"));
    }
    check_ids(dev)?;
    let metric = cfg.metric.resolve(model.labels.labels());
    let mut rng = SplitMix64::new(cfg.seed);
    let mut schedule = Schedule::from_config(cfg);
    let mut best = model.params.clone();
    let mut log = TrainLog {
        metric: Some(metric.as_str()),
        best_metric: f64::NEG_INFINITY,
        ..Default::default()
    };
    let start = clock();
    for epoch in 1..=cfg.max_epochs {
        let lr = schedule.lr;
        let train_loss = sgd_epoch(&mut model, train_data, cfg, lr, &mut rng, exec)?;
        let dev_metric = evaluate(&model, dev, metric, exec)?.headline();
        let step = schedule.observe(epoch, dev_metric);
        if step.improved {
            best.clone_from(&model.params);
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            dev_metric,
            lr,
            seconds: clock() - start,
            improved: step.improved,
        };
        on_epoch(&record);
        log.epochs.push(record);
        if schedule.exhausted() {
            break;
        }
    }
    log.best_epoch = schedule.best_epoch;
    log.best_metric = schedule.best;
    model.params = best;
    Ok((model, log))
}
