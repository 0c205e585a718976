use alloc::vec::Vec;

/// Row-parallel map used by the forward passes. `map(n, width, f)` returns
/// the concatenation of `f(0)..f(n-1)`, each of length `width`, in order.
pub trait Executor: Sync {
    fn map(&self, n: usize, width: usize, f: &(dyn Fn(usize) -> Vec<f64> + Sync)) -> Vec<f64>;
}

/// Single-threaded executor.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map(&self, n: usize, width: usize, f: &(dyn Fn(usize) -> Vec<f64> + Sync)) -> Vec<f64> {
        let mut out = Vec::with_capacity(n * width);
        for i in 0..n {
            let row = f(i);
            debug_assert_eq!(row.len(), width);
            out.extend(row);
        }
        out
    }
}
