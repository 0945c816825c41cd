//! Data-parallel helpers.
//!
//! The training stages split a batch into `k` contiguous shards, run the
//! encoder forwards in parallel (one scoped thread per shard), compute the
//! batch-level loss on a single central tape, then backpropagate each shard
//! independently. The pieces here are deliberately small: index math, an
//! ordered parallel map, and an order-fixed gradient reduction, so the
//! equivalence with the single-process step is easy to see in the stage code.

use super::scalar::Real;
use super::tensor::Tensor;
use std::collections::BTreeMap;
use std::ops::Range;

/// Splits `0..n` into `k` contiguous ranges. Earlier shards take the
/// remainder, so sizes differ by at most one and concatenating the ranges in
/// shard order reproduces `0..n` exactly.
pub fn shard_ranges(n: usize, k: usize) -> Vec<Range<usize>> {
    assert!(k > 0, "need at least one shard");
    let base = n / k;
    let extra = n % k;
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for s in 0..k {
        let len = base + usize::from(s < extra);
        out.push(start..start + len);
        start += len;
    }
    debug_assert_eq!(start, n);
    out
}

/// Runs `f(0), f(1), ..., f(k-1)` and returns the results in shard order.
/// With `k == 1` the closure runs inline; otherwise each shard gets a scoped
/// thread. Result order is by shard index, never by completion time.
pub fn run_shards<R, F>(k: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync,
{
    assert!(k > 0);
    if k == 1 {
        return vec![f(0)];
    }
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..k).map(|s| scope.spawn(move || f(s))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("shard thread panicked"))
            .collect()
    })
}

/// Sums per-shard gradient maps in shard order. Every map must contain the
/// same parameter names; summation order is shard 0, 1, 2, ... for every
/// name, which keeps the reduction deterministic for a fixed shard count.
pub fn sum_grads<T: Real>(mut maps: Vec<BTreeMap<String, Tensor<T>>>) -> BTreeMap<String, Tensor<T>> {
    assert!(!maps.is_empty());
    let mut total = maps.remove(0);
    for map in maps {
        assert_eq!(map.len(), total.len(), "shard gradient maps disagree");
        for (name, grad) in map {
            let acc = total
                .get_mut(&name)
                .unwrap_or_else(|| panic!("shard missing gradient {}", name));
            assert_eq!(acc.shape, grad.shape);
            for (a, &b) in acc.data.iter_mut().zip(&grad.data) {
                *a += b;
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_cover_exactly() {
        for n in [0usize, 1, 7, 64, 65, 100] {
            for k in [1usize, 2, 3, 4, 7] {
                let ranges = shard_ranges(n, k);
                assert_eq!(ranges.len(), k);
                let mut expect = 0;
                for r in &ranges {
                    assert_eq!(r.start, expect);
                    expect = r.end;
                }
                assert_eq!(expect, n);
                let sizes: Vec<usize> = ranges.iter().map(|r| r.len()).collect();
                let min = sizes.iter().min().unwrap();
                let max = sizes.iter().max().unwrap();
                assert!(max - min <= 1, "n={} k={} sizes={:?}", n, k, sizes);
            }
        }
    }

    #[test]
    fn ranges_64_by_4() {
        let ranges = shard_ranges(64, 4);
        assert_eq!(ranges, vec![0..16, 16..32, 32..48, 48..64]);
    }

    #[test]
    fn run_shards_preserves_order() {
        let got = run_shards(8, |s| {
            // stagger completion so order would scramble if it followed time
            std::thread::sleep(std::time::Duration::from_millis((8 - s as u64) * 2));
            s * 10
        });
        assert_eq!(got, vec![0, 10, 20, 30, 40, 50, 60, 70]);
    }

    #[test]
    fn grad_sum_is_shard_ordered() {
        let mk = |v: f64| {
            let mut m = BTreeMap::new();
            m.insert("w".to_string(), Tensor::from_vec(&[2], vec![v, v * 2.0]));
            m
        };
        let total = sum_grads(vec![mk(1.0), mk(10.0), mk(100.0)]);
        assert_eq!(total["w"].data, vec![111.0, 222.0]);
    }
}
