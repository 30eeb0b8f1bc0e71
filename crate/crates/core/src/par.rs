//! Data-parallel helpers. With the default `parallel` feature the maps run on
//! the rayon pool; without it they fall back to the sequential versions.
//!
//! Results are collected in input order and chunked reductions use fixed
//! chunk boundaries, so outputs are bit-identical across thread counts and
//! across the parallel/sequential builds.

/// Fixed chunk width for order-stable reductions.
pub const REDUCE_CHUNK: usize = 32;

/// Maps `f` over `items`, preserving order.
#[cfg(feature = "parallel")]
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

/// Maps `f` over `items`, preserving order.
#[cfg(not(feature = "parallel"))]
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    map_seq(items, f)
}

/// Always-sequential map; the baseline the benches compare against.
pub fn map_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Folds per-item values into an accumulator with a fixed association order:
/// items are grouped into [`REDUCE_CHUNK`]-sized chunks, each chunk is folded
/// left-to-right into a fresh accumulator (in parallel when enabled), and the
/// chunk partials are then folded left-to-right. Chunk boundaries depend only
/// on the item count, never on thread scheduling.
pub fn chunked_fold<T, A>(
    items: &[T],
    make_acc: impl Fn() -> A + Sync + Send,
    fold: impl Fn(&mut A, &T) + Sync + Send,
    merge: impl FnMut(&mut A, A),
) -> A
where
    T: Sync,
    A: Send,
{
    let partials = chunk_partials(items, &make_acc, &fold);
    let mut acc = make_acc();
    let mut merge = merge;
    for p in partials {
        merge(&mut acc, p);
    }
    acc
}

#[cfg(feature = "parallel")]
fn chunk_partials<T, A>(
    items: &[T],
    make_acc: &(impl Fn() -> A + Sync + Send),
    fold: &(impl Fn(&mut A, &T) + Sync + Send),
) -> Vec<A>
where
    T: Sync,
    A: Send,
{
    use rayon::prelude::*;
    items
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut acc = make_acc();
            for item in chunk {
                fold(&mut acc, item);
            }
            acc
        })
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn chunk_partials<T, A>(
    items: &[T],
    make_acc: &impl Fn() -> A,
    fold: &impl Fn(&mut A, &T),
) -> Vec<A> {
    items
        .chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut acc = make_acc();
            for item in chunk {
                fold(&mut acc, item);
            }
            acc
        })
        .collect()
}
