//! Plain-text word vectors (`word v1 v2 ...`, optional `count dim` header).

use std::path::Path;

use parcrf_core::{Tensor, Vocab};
use thiserror::Error;

use crate::conll::{read_text, ConllError};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error(transparent)]
    Read(#[from] ConllError),
    #[error("line {line}: expected {expected} values, found {found}")]
    Dimension { line: usize, expected: usize, found: usize },
    #[error("line {line}: {value:?} is not a number")]
    Number { line: usize, value: String },
}

/// Overwrites rows of `table` (|vocab|×d) for every vocabulary word that has
/// a vector in `text`. Returns how many rows were replaced.
pub fn apply_embeddings(text: &str, vocab: &Vocab, table: &mut Tensor) -> Result<usize, EmbeddingError> {
    let dim = table.cols();
    let mut replaced = 0;
    for (k, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if k == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<u64>().is_ok()) {
            continue;
        }
        let line_no = k + 1;
        if fields.len() - 1 != dim {
            return Err(EmbeddingError::Dimension {
                line: line_no,
                expected: dim,
                found: fields.len() - 1,
            });
        }
        let Some(id) = vocab.get(fields[0]) else { continue };
        let row = table.row_mut(id);
        for (slot, f) in row.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|_| EmbeddingError::Number {
                line: line_no,
                value: f.to_string(),
            })?;
        }
        replaced += 1;
    }
    Ok(replaced)
}

pub fn load_embeddings(path: &Path, vocab: &Vocab, table: &mut Tensor) -> Result<usize, EmbeddingError> {
    apply_embeddings(&read_text(path)?, vocab, table)
}
