//! CoNLL-style column files: one token per line, whitespace-separated
//! columns, blank lines between sentences.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use parcrf_core::TaggedSentence;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConllError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: expected at least {needed} columns, found {found}")]
    MissingColumn { line: usize, needed: usize, found: usize },
}

/// One sentence as raw rows of columns, plus the line number of its first
/// row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub first_line: usize,
    pub rows: Vec<Vec<String>>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn columns(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

/// Splits text into sentence blocks. `-DOCSTART-` lines are dropped, as are
/// sentences left empty.
pub fn parse_blocks(text: &str) -> Vec<Block> {
    let mut out = Vec::new();
    let mut cur = Block {
        first_line: 1,
        rows: Vec::new(),
    };
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        let cols: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if cols.is_empty() || cols[0] == "-DOCSTART-" {
            if !cur.rows.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            continue;
        }
        if cur.rows.is_empty() {
            cur.first_line = k + 1;
        }
        cur.rows.push(cols);
    }
    if !cur.rows.is_empty() {
        out.push(cur);
    }
    out
}

impl Default for Block {
    fn default() -> Self {
        Self {
            first_line: 1,
            rows: Vec::new(),
        }
    }
}

/// Which columns hold tokens and labels. `label: None` means the last column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Columns {
    pub token: usize,
    pub label: Option<usize>,
}

fn column(block: &Block, row: usize, col: usize) -> Result<&str, ConllError> {
    let r = &block.rows[row];
    r.get(col).map(String::as_str).ok_or(ConllError::MissingColumn {
        line: block.first_line + row,
        needed: col + 1,
        found: r.len(),
    })
}

/// Tokens and labels of a block. With `label: None` the label is the last
/// column, which must not be the token column.
pub fn block_to_sentence(block: &Block, cols: Columns) -> Result<TaggedSentence, ConllError> {
    let mut tokens = Vec::with_capacity(block.len());
    let mut labels = Vec::with_capacity(block.len());
    for (i, r) in block.rows.iter().enumerate() {
        tokens.push(column(block, i, cols.token)?.to_string());
        let lc = match cols.label {
            Some(c) => c,
            None if r.len() >= 2 && r.len() - 1 != cols.token => r.len() - 1,
            None => {
                return Err(ConllError::MissingColumn {
                    line: block.first_line + i,
                    needed: cols.token + 2,
                    found: r.len(),
                })
            }
        };
        labels.push(column(block, i, lc)?.to_string());
    }
    Ok(TaggedSentence::new(tokens, labels).expect("block rows are non-empty"))
}

/// Tokens only, labels left as `O` placeholders.
pub fn block_to_unlabeled(block: &Block, token_column: usize) -> Result<TaggedSentence, ConllError> {
    let tokens = (0..block.len())
        .map(|i| column(block, i, token_column).map(str::to_string))
        .collect::<Result<Vec<_>, _>>()?;
    let n = tokens.len();
    Ok(TaggedSentence::new(tokens, vec!["O".to_string(); n]).expect("block rows are non-empty"))
}

pub fn read_text(path: &Path) -> Result<String, ConllError> {
    fs::read_to_string(path).map_err(|source| ConllError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse_conll(text: &str, cols: Columns) -> Result<Vec<TaggedSentence>, ConllError> {
    parse_blocks(text).iter().map(|b| block_to_sentence(b, cols)).collect()
}

pub fn read_conll(path: &Path, cols: Columns) -> Result<Vec<TaggedSentence>, ConllError> {
    parse_conll(&read_text(path)?, cols)
}

pub fn read_blocks(path: &Path) -> Result<Vec<Block>, ConllError> {
    Ok(parse_blocks(&read_text(path)?))
}

/// `token label` per line, blank line after each sentence.
pub fn write_conll<W: Write>(mut w: W, sentences: &[TaggedSentence]) -> io::Result<()> {
    for s in sentences {
        for (t, l) in s.tokens.iter().zip(&s.labels) {
            writeln!(w, "{t} {l}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// The input rows with one predicted label appended to each.
pub fn write_predictions<W: Write>(mut w: W, blocks: &[Block], labels: &[Vec<&str>]) -> io::Result<()> {
    for (b, ls) in blocks.iter().zip(labels) {
        for (row, l) in b.rows.iter().zip(ls) {
            writeln!(w, "{} {l}", row.join(" "))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_file(path: &Path, f: impl FnOnce(&mut io::BufWriter<fs::File>) -> io::Result<()>) -> Result<(), ConllError> {
    let wrap = |source| ConllError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(wrap)?;
    let mut w = io::BufWriter::new(file);
    f(&mut w).map_err(wrap)?;
    w.flush().map_err(wrap)
}
