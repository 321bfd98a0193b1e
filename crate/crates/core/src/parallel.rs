//! Row-partitioned scoped threading shared by the kernels.

use std::thread;

/// Splits `out` (a row-major buffer with `row_len` elements per row) into at
/// most `threads` contiguous row blocks and runs `f(first_row, block)` on each.
///
/// Every output element is produced by exactly one call, so results do not
/// depend on the thread count as long as `f` treats rows independently.
pub(crate) fn for_each_row_block<T, F>(out: &mut [T], row_len: usize, threads: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    let rows = out.len().checked_div(row_len).unwrap_or(0);
    let threads = threads.clamp(1, rows.max(1));
    if threads == 1 {
        f(0, out);
        return;
    }
    let rows_per_block = rows.div_ceil(threads);
    thread::scope(|scope| {
        for (block, chunk) in out.chunks_mut(rows_per_block * row_len).enumerate() {
            let f = &f;
            scope.spawn(move || f(block * rows_per_block, chunk));
        }
    });
}
