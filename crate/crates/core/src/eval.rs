//! Token accuracy and conlleval-style span precision/recall/F1.
//!
//! Span segmentation follows the conlleval chunk rules extended to BIOES:
//! a chunk ends after any `E`/`S`, before any `B`/`S`/`O` that follows a
//! `B`/`I`, and on any type change; a chunk starts at any `B`/`S`, at an
//! `E`/`I` that cannot continue the previous chunk, and on any type change.
//! Malformed predictions are segmented greedily by the same rules.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("gold has {gold} sentences but predictions have {pred}")]
    SentenceCount { gold: usize, pred: usize },
    #[error("sentence {sentence}: gold has {gold} labels but prediction has {pred}")]
    LengthMismatch { sentence: usize, gold: usize, pred: usize },
    #[error("no tokens")]
    NoTokens,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub start: usize,
    /// Inclusive.
    pub end: usize,
    pub ty: String,
}

/// Chunk tag (first character) and type (text after the first `-`, or `_`).
fn tag_and_type(label: &str) -> (char, &str) {
    let mut chars = label.chars();
    let tag = chars.next().unwrap_or('O');
    let rest = chars.as_str();
    let ty = match rest.split_once('-') {
        Some((_, after)) => after,
        None => rest,
    };
    (tag, if ty.is_empty() { "_" } else { ty })
}

fn end_of_chunk(prev_tag: char, tag: char, prev_ty: &str, ty: &str) -> bool {
    matches!(prev_tag, 'E' | 'S')
        || (matches!(prev_tag, 'B' | 'I') && matches!(tag, 'B' | 'S' | 'O'))
        || (prev_tag != 'O' && prev_tag != '.' && prev_ty != ty)
}

fn start_of_chunk(prev_tag: char, tag: char, prev_ty: &str, ty: &str) -> bool {
    matches!(tag, 'B' | 'S')
        || (matches!(prev_tag, 'E' | 'S' | 'O') && matches!(tag, 'E' | 'I'))
        || (tag != 'O' && tag != '.' && prev_ty != ty)
}

/// Spans of one label sequence, in order of their start position.
pub fn extract_spans<S: AsRef<str>>(labels: &[S]) -> Vec<Span> {
    let mut spans = Vec::new();
    let (mut prev_tag, mut prev_ty) = ('O', "");
    let mut begin = 0;
    for i in 0..=labels.len() {
        let (tag, ty) = labels.get(i).map_or(('O', "_"), |l| tag_and_type(l.as_ref()));
        if end_of_chunk(prev_tag, tag, prev_ty, ty) {
            spans.push(Span {
                start: begin,
                end: i - 1,
                ty: prev_ty.to_string(),
            });
        }
        if start_of_chunk(prev_tag, tag, prev_ty, ty) {
            begin = i;
        }
        prev_tag = tag;
        prev_ty = ty;
    }
    spans
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Span,
    Token,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TypeScore {
    pub ty: String,
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub tokens: usize,
    pub correct_tokens: usize,
    pub accuracy: f64,
    pub gold_spans: usize,
    pub predicted_spans: usize,
    pub correct_spans: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_type: Vec<TypeScore>,
}

impl EvalReport {
    /// F1 in span mode, accuracy in token mode.
    pub fn headline(&self) -> f64 {
        match self.mode {
            EvalMode::Span => self.f1,
            EvalMode::Token => self.accuracy,
        }
    }
}

fn prf(correct: usize, predicted: usize, gold: usize) -> (f64, f64, f64) {
    let p = if predicted > 0 { correct as f64 / predicted as f64 } else { 0.0 };
    let r = if gold > 0 { correct as f64 / gold as f64 } else { 0.0 };
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f)
}

fn check_shapes<A: AsRef<[T]>, B: AsRef<[U]>, T, U>(gold: &[A], pred: &[B]) -> Result<usize, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::SentenceCount {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let mut tokens = 0;
    for (sentence, (g, p)) in gold.iter().zip(pred).enumerate() {
        let (g, p) = (g.as_ref(), p.as_ref());
        if g.len() != p.len() {
            return Err(EvalError::LengthMismatch {
                sentence,
                gold: g.len(),
                pred: p.len(),
            });
        }
        tokens += g.len();
    }
    Ok(tokens)
}

/// Micro-averaged span scores over exact `(start, end, type)` matches.
pub fn span_f1<A, B, S, T>(gold: &[A], pred: &[B]) -> Result<EvalReport, EvalError>
where
    A: AsRef<[S]>,
    B: AsRef<[T]>,
    S: AsRef<str>,
    T: AsRef<str>,
{
    let tokens = check_shapes(gold, pred)?;
    let mut by_type: BTreeMap<String, TypeScore> = BTreeMap::new();
    let mut correct_tokens = 0;
    for (g, p) in gold.iter().zip(pred) {
        let (g, p) = (g.as_ref(), p.as_ref());
        correct_tokens += g.iter().zip(p).filter(|(a, b)| a.as_ref() == b.as_ref()).count();
        let gs = extract_spans(g);
        let ps = extract_spans(p);
        for s in &gs {
            by_type.entry(s.ty.clone()).or_default().gold += 1;
        }
        for s in &ps {
            let e = by_type.entry(s.ty.clone()).or_default();
            e.predicted += 1;
            if gs.binary_search(s).is_ok() || gs.contains(s) {
                e.correct += 1;
            }
        }
    }
    let mut per_type = Vec::with_capacity(by_type.len());
    let (mut gold_spans, mut predicted_spans, mut correct_spans) = (0, 0, 0);
    for (ty, mut t) in by_type {
        gold_spans += t.gold;
        predicted_spans += t.predicted;
        correct_spans += t.correct;
        (t.precision, t.recall, t.f1) = prf(t.correct, t.predicted, t.gold);
        t.ty = ty;
        per_type.push(t);
    }
    let (precision, recall, f1) = prf(correct_spans, predicted_spans, gold_spans);
    Ok(EvalReport {
        mode: EvalMode::Span,
        tokens,
        correct_tokens,
        accuracy: if tokens > 0 { correct_tokens as f64 / tokens as f64 } else { 0.0 },
        gold_spans,
        predicted_spans,
        correct_spans,
        precision,
        recall,
        f1,
        per_type,
    })
}

/// Fraction of positions whose labels agree.
pub fn token_accuracy<A, B, T>(gold: &[A], pred: &[B]) -> Result<EvalReport, EvalError>
where
    A: AsRef<[T]>,
    B: AsRef<[T]>,
    T: PartialEq,
{
    let tokens = check_shapes(gold, pred)?;
    if tokens == 0 {
        return Err(EvalError::NoTokens);
    }
    let correct_tokens: usize = gold
        .iter()
        .zip(pred)
        .map(|(g, p)| g.as_ref().iter().zip(p.as_ref()).filter(|(a, b)| a == b).count())
        .sum();
    Ok(EvalReport {
        mode: EvalMode::Token,
        tokens,
        correct_tokens,
        accuracy: correct_tokens as f64 / tokens as f64,
        gold_spans: 0,
        predicted_spans: 0,
        correct_spans: 0,
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        per_type: Vec::new(),
    })
}
