//! Work-splitting abstraction so the core stays free of threading.

/// Runs a closure over disjoint chunks of a mutable slice, possibly in
/// parallel. Implementations must call `f` exactly once per chunk; callers
/// must not depend on the order in which chunks run.
pub trait Executor: Sync {
    fn workers(&self) -> usize;

    /// `f(offset, chunk)` for each `chunk_len`-sized piece of `items`, where
    /// `offset` is the index of the chunk's first element.
    fn run_chunks<T: Send>(&self, items: &mut [T], chunk_len: usize, f: &(dyn Fn(usize, &mut [T]) + Sync));
}

/// Runs every chunk on the calling thread, in order.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn workers(&self) -> usize {
        1
    }

    fn run_chunks<T: Send>(&self, items: &mut [T], chunk_len: usize, f: &(dyn Fn(usize, &mut [T]) + Sync)) {
        let chunk_len = chunk_len.max(1);
        for (c, chunk) in items.chunks_mut(chunk_len).enumerate() {
            f(c * chunk_len, chunk);
        }
    }
}

/// Chunk length that splits `len` items over `workers` with each chunk a
/// multiple of `granule`.
pub fn chunk_len_for(len: usize, workers: usize, granule: usize) -> usize {
    let units = len.div_ceil(granule.max(1));
    units.div_ceil(workers.max(1)).max(1) * granule.max(1)
}
