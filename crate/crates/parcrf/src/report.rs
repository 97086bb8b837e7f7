//! Text renderings of evaluation results.

use std::fmt::Write as _;

use parcrf_core::eval::{EvalMode, EvalReport};

/// Overall scores followed by one line per entity type.
pub fn eval_table(r: &EvalReport) -> String {
    let mut s = String::new();
    match r.mode {
        EvalMode::Token => {
            let _ = writeln!(
                s,
                "tokens: {}  correct: {}  accuracy: {:.2}%",
                r.tokens,
                r.correct_tokens,
                100.0 * r.accuracy
            );
        }
        EvalMode::Span => {
            let _ = writeln!(
                s,
                "processed {} tokens with {} phrases; found: {} phrases; correct: {}.",
                r.tokens, r.gold_spans, r.predicted_spans, r.correct_spans
            );
            let _ = writeln!(
                s,
                "accuracy: {:6.2}%; precision: {:6.2}%; recall: {:6.2}%; FB1: {:6.2}",
                100.0 * r.accuracy,
                100.0 * r.precision,
                100.0 * r.recall,
                100.0 * r.f1
            );
            let width = r.per_type.iter().map(|t| t.ty.len()).max().unwrap_or(0).max(4);
            for t in &r.per_type {
                let _ = writeln!(
                    s,
                    "{:>width$}: precision: {:6.2}%; recall: {:6.2}%; FB1: {:6.2}  {}",
                    t.ty,
                    100.0 * t.precision,
                    100.0 * t.recall,
                    100.0 * t.f1,
                    t.predicted
                );
            }
        }
    }
    s
}

/// `key=value` lines: one `overall` line, then one `type` line per entity
/// type. Scores are fractions printed with full precision.
pub fn eval_kv(r: &EvalReport) -> String {
    let mode = match r.mode {
        EvalMode::Span => "span",
        EvalMode::Token => "token",
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        "overall mode={mode} tokens={} correct_tokens={} accuracy={} gold_spans={} predicted_spans={} correct_spans={} precision={} recall={} f1={}",
        r.tokens, r.correct_tokens, r.accuracy, r.gold_spans, r.predicted_spans, r.correct_spans, r.precision, r.recall, r.f1
    );
    for t in &r.per_type {
        let _ = writeln!(
            s,
            "type name={} gold={} predicted={} correct={} precision={} recall={} f1={}",
            t.ty, t.gold, t.predicted, t.correct, t.precision, t.recall, t.f1
        );
    }
    s
}
