//! Label schemes and BIO to BIOES conversion.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    Bio,
    Bioes,
    Plain,
}

/// Splits `B-PER` into `('B', "PER")`. Labels without a recognised prefix
/// return `None`.
pub fn split_label(label: &str) -> Option<(char, &str)> {
    if label == "O" {
        return Some(('O', ""));
    }
    let mut chars = label.chars();
    let pos = chars.next()?;
    if !matches!(pos, 'B' | 'I' | 'E' | 'S') || chars.next() != Some('-') {
        return None;
    }
    let ty = &label[2..];
    if ty.is_empty() {
        None
    } else {
        Some((pos, ty))
    }
}

/// Guesses the scheme of a label inventory: any `E-`/`S-` label makes it
/// BIOES, otherwise `B-`/`I-` labels make it BIO, anything unparseable makes
/// it plain.
pub fn detect_scheme<'a>(labels: impl IntoIterator<Item = &'a str>) -> SchemeKind {
    let mut saw_span = false;
    let mut saw_es = false;
    for l in labels {
        match split_label(l) {
            None => return SchemeKind::Plain,
            Some(('O', _)) => {}
            Some(('E' | 'S', _)) => {
                saw_span = true;
                saw_es = true;
            }
            Some(_) => saw_span = true,
        }
    }
    match (saw_span, saw_es) {
        (_, true) => SchemeKind::Bioes,
        (true, false) => SchemeKind::Bio,
        (false, false) => SchemeKind::Plain,
    }
}

/// Converts BIO labels to BIOES. A lone `I-X` that does not continue a
/// `B-X`/`I-X` is treated as `B-X` first. Labels outside the BIO alphabet
/// pass through unchanged.
pub fn bio_to_bioes(labels: &[String]) -> Vec<String> {
    // Repair pass: every I-X not preceded by B-X/I-X becomes B-X.
    let repaired: Vec<Option<(char, &str)>> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| match split_label(l) {
            Some(('I', ty)) => {
                let continues = i > 0 && matches!(split_label(&labels[i - 1]), Some(('B' | 'I', pty)) if pty == ty);
                Some((if continues { 'I' } else { 'B' }, ty))
            }
            other => other,
        })
        .collect();
    repaired
        .iter()
        .enumerate()
        .map(|(i, cur)| {
            let next_continues = |ty: &str| matches!(repaired.get(i + 1), Some(Some(('I', nty))) if *nty == ty);
            match *cur {
                Some(('B', ty)) if next_continues(ty) => format!("B-{ty}"),
                Some(('B', ty)) => format!("S-{ty}"),
                Some(('I', ty)) if next_continues(ty) => format!("I-{ty}"),
                Some(('I', ty)) => format!("E-{ty}"),
                _ => labels[i].clone(),
            }
        })
        .collect()
}

/// Inverse map: `S-X` to `B-X`, `E-X` to `I-X`.
pub fn bioes_to_bio(labels: &[String]) -> Vec<String> {
    labels
        .iter()
        .map(|l| match split_label(l) {
            Some(('S', ty)) => format!("B-{ty}"),
            Some(('E', ty)) => format!("I-{ty}"),
            _ => l.to_string(),
        })
        .collect()
}

/// BIOES label inventory for the given entity types, `O` first.
pub fn bioes_inventory(types: &[&str]) -> Vec<String> {
    let mut out = Vec::with_capacity(1 + 4 * types.len());
    out.push("O".to_string());
    for ty in types {
        for pos in ['B', 'I', 'E', 'S'] {
            out.push(format!("{pos}-{ty}"));
        }
    }
    out
}
