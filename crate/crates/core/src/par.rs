//! Order-preserving data-parallel map.
//!
//! All fan-outs in the crate (rollout collection, batch gradients,
//! evaluation) go through [`map_ordered`]. Results come back in input
//! order and every reduction over them happens sequentially in that order,
//! so the parallel build produces bit-identical floats to the sequential
//! one regardless of thread count. The `parallel` feature (on by default)
//! selects the rayon path; without it the crate is single-threaded.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Sequential reference path.
pub fn map_ordered_seq<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Rayon path; `collect` on an indexed parallel iterator preserves order.
#[cfg(feature = "parallel")]
pub fn map_ordered_par<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map_ordered_par(items, f)
}

#[cfg(not(feature = "parallel"))]
pub fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map_ordered_seq(items, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_input_order() {
        let items: Vec<u64> = (0..1000).collect();
        let out = map_ordered(&items, |x| x * 3);
        assert_eq!(out, items.iter().map(|x| x * 3).collect::<Vec<_>>());
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn par_matches_seq_bitwise_on_floats() {
        let items: Vec<f64> = (0..500).map(|i| (i as f64).sin()).collect();
        let f = |x: &f64| (x * 1.000001).exp().ln_1p();
        let seq = map_ordered_seq(&items, f);
        let par = map_ordered_par(&items, f);
        assert!(seq.iter().zip(&par).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
