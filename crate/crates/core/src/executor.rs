//! Parallel execution over contiguous groups of blocks.
//!
//! Sums over blocks use a fixed binary tree over block indices: a range is
//! split at `start + ceil(len / 2)`. When every group range is a node of that
//! tree (for instance `G` a power of two dividing `N`), summing group
//! results with the same tree reproduces the single-group result bit for bit.

use std::ops::Range;
use std::sync::Mutex;

use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::DenseMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error("cannot split {n_blocks} blocks into {groups} groups")]
    Partition { n_blocks: usize, groups: usize },
    #[error("worker count must be positive")]
    Workers,
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Contiguous split of `0..N` into `G` ranges; earlier ranges take the extra
/// block when `G` does not divide `N`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    n_blocks: usize,
    ranges: Vec<Range<usize>>,
}

pub fn partition(n_blocks: usize, groups: usize) -> Result<Partition, ExecError> {
    if groups == 0 || groups > n_blocks {
        return Err(ExecError::Partition { n_blocks, groups });
    }
    let (q, r) = (n_blocks / groups, n_blocks % groups);
    let mut ranges = Vec::with_capacity(groups);
    let mut start = 0;
    for g in 0..groups {
        let len = q + usize::from(g < r);
        ranges.push(start..start + len);
        start += len;
    }
    Ok(Partition { n_blocks, ranges })
}

impl Partition {
    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    pub fn n_groups(&self) -> usize {
        self.ranges.len()
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn group(&self, g: usize) -> Range<usize> {
        self.ranges[g].clone()
    }

    pub fn max_group_len(&self) -> usize {
        self.ranges.iter().map(|r| r.len()).max().unwrap_or(0)
    }

    /// True when every group range is a node of the canonical block tree.
    pub fn is_tree_aligned(&self) -> bool {
        fn nodes(r: Range<usize>, out: &mut Vec<Range<usize>>) {
            out.push(r.clone());
            if r.len() > 1 {
                let mid = r.start + r.len().div_ceil(2);
                nodes(r.start..mid, out);
                nodes(mid..r.end, out);
            }
        }
        let mut all = Vec::new();
        nodes(0..self.n_blocks, &mut all);
        self.ranges.iter().all(|g| all.contains(g))
    }
}

/// Reduces `leaf(i)` for `i` in `range` with the canonical tree.
pub fn tree_reduce<T>(
    range: Range<usize>,
    leaf: &mut impl FnMut(usize) -> T,
    combine: &mut impl FnMut(T, T) -> T,
) -> Option<T> {
    match range.len() {
        0 => None,
        1 => Some(leaf(range.start)),
        n => {
            let mid = range.start + n.div_ceil(2);
            let a = tree_reduce(range.start..mid, leaf, combine)?;
            let b = tree_reduce(mid..range.end, leaf, combine)?;
            Some(combine(a, b))
        }
    }
}

/// Tree sum of per-index vectors of length `len`.
pub fn tree_sum(
    range: Range<usize>,
    len: usize,
    mut leaf: impl FnMut(usize) -> Vec<f64>,
) -> Vec<f64> {
    tree_reduce(range, &mut leaf, &mut |mut a: Vec<f64>, b: Vec<f64>| {
        for (x, y) in a.iter_mut().zip(&b) {
            *x += y;
        }
        a
    })
    .unwrap_or_else(|| vec![0.0; len])
}

/// Tree sum of per-index scalars.
pub fn tree_sum_scalar(range: Range<usize>, mut leaf: impl FnMut(usize) -> f64) -> f64 {
    tree_reduce(range, &mut leaf, &mut |a, b| a + b).unwrap_or(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ReduceMode {
    /// Fixed tree order; bitwise reproducible.
    #[default]
    Deterministic,
    /// Sums group results in the order workers finish.
    Fast,
}

/// Results of a group map, indexed by group, with the order groups finished.
#[derive(Debug)]
pub struct GroupResults<R> {
    pub values: Vec<R>,
    pub completion: Vec<usize>,
}

pub struct Executor {
    workers: usize,
    mode: ReduceMode,
    pool: rayon::ThreadPool,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor")
            .field("workers", &self.workers)
            .field("mode", &self.mode)
            .finish()
    }
}

impl Executor {
    pub fn new(workers: usize, mode: ReduceMode) -> Result<Self, ExecError> {
        if workers == 0 {
            return Err(ExecError::Workers);
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| ExecError::Pool(e.to_string()))?;
        Ok(Self {
            workers,
            mode,
            pool,
        })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn mode(&self) -> ReduceMode {
        self.mode
    }

    /// Runs `f(g, range)` for every group in parallel. On failure, the error
    /// of the lowest-indexed failing group is returned.
    pub fn map_groups<R, E, F>(&self, part: &Partition, f: F) -> Result<GroupResults<R>, E>
    where
        R: Send,
        E: Send,
        F: Fn(usize, Range<usize>) -> Result<R, E> + Sync,
    {
        let order = Mutex::new(Vec::with_capacity(part.n_groups()));
        let out: Vec<Result<R, E>> = self.pool.install(|| {
            part.ranges
                .par_iter()
                .enumerate()
                .map(|(g, r)| {
                    let res = f(g, r.clone());
                    order.lock().expect("completion log poisoned").push(g);
                    res
                })
                .collect()
        });
        let mut values = Vec::with_capacity(out.len());
        for r in out {
            values.push(r?);
        }
        Ok(GroupResults {
            values,
            completion: order.into_inner().expect("completion log poisoned"),
        })
    }

    /// Sums per-group matrices. `parts` pairs each matrix with its group
    /// index and may arrive in any order.
    pub fn all_reduce(&self, mut parts: Vec<(usize, DenseMatrix)>) -> Option<DenseMatrix> {
        match self.mode {
            ReduceMode::Deterministic => {
                parts.sort_by_key(|p| p.0);
                let mut slots: Vec<Option<DenseMatrix>> =
                    parts.into_iter().map(|p| Some(p.1)).collect();
                let n = slots.len();
                tree_reduce(
                    0..n,
                    &mut |i| slots[i].take().expect("each group reduced once"),
                    &mut |mut a: DenseMatrix, b: DenseMatrix| {
                        a.add_assign(&b);
                        a
                    },
                )
            }
            ReduceMode::Fast => {
                let mut it = parts.into_iter();
                let mut acc = it.next()?.1;
                for (_, m) in it {
                    acc.add_assign(&m);
                }
                Some(acc)
            }
        }
    }

    /// Orders group results for [`all_reduce`](Self::all_reduce): group
    /// order in deterministic mode, completion order in fast mode.
    pub fn arrival_order(&self, completion: &[usize]) -> Vec<usize> {
        match self.mode {
            ReduceMode::Deterministic => {
                let mut v = completion.to_vec();
                v.sort_unstable();
                v
            }
            ReduceMode::Fast => completion.to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn partition_examples() {
        let p = partition(5, 2).unwrap();
        assert_eq!(p.ranges(), &[0..3, 3..5]);
        assert_eq!(partition(4, 4).unwrap().ranges(), &[0..1, 1..2, 2..3, 3..4]);
        assert!(partition(3, 4).is_err());
        assert!(partition(3, 0).is_err());
        assert!(partition(16, 4).unwrap().is_tree_aligned());
        assert!(!partition(6, 3).unwrap().is_tree_aligned());
    }

    proptest! {
        #[test]
        fn partition_covers_contiguously(n in 1usize..200, g in 1usize..50) {
            prop_assume!(g <= n);
            let p = partition(n, g).unwrap();
            prop_assert_eq!(p.n_groups(), g);
            let mut next = 0;
            let (mut lo, mut hi) = (usize::MAX, 0);
            for (k, r) in p.ranges().iter().enumerate() {
                prop_assert_eq!(r.start, next);
                prop_assert!(!r.is_empty());
                if k > 0 {
                    prop_assert!(r.len() <= p.ranges()[k - 1].len());
                }
                lo = lo.min(r.len());
                hi = hi.max(r.len());
                next = r.end;
            }
            prop_assert_eq!(next, n);
            prop_assert!(hi - lo <= 1);
        }
    }

    #[test]
    fn tree_sum_is_group_invariant_when_aligned() {
        let vals: Vec<f64> = (0..16)
            .map(|i| 1.0 / (i as f64 + 3.0) + 1e-17 * i as f64)
            .collect();
        let whole = tree_sum_scalar(0..16, |i| vals[i]);
        for g in [1, 2, 4, 8, 16] {
            let p = partition(16, g).unwrap();
            let exec = Executor::new(2, ReduceMode::Deterministic).unwrap();
            let parts: Vec<(usize, DenseMatrix)> = p
                .ranges()
                .iter()
                .enumerate()
                .map(|(k, r)| {
                    (
                        k,
                        DenseMatrix::from_col_major(
                            1,
                            1,
                            vec![tree_sum_scalar(r.clone(), |i| vals[i])],
                        ),
                    )
                })
                .collect();
            let s = exec.all_reduce(parts).unwrap()[(0, 0)];
            assert_eq!(s.to_bits(), whole.to_bits(), "G = {g}");
        }
    }

    #[test]
    fn deterministic_reduce_ignores_arrival_order() {
        let exec = Executor::new(3, ReduceMode::Deterministic).unwrap();
        let mats: Vec<DenseMatrix> = (0..7)
            .map(|k| DenseMatrix::from_fn(2, 2, |i, j| ((k * 7 + i * 3 + j) as f64).sin() * 1e3))
            .collect();
        let inorder = exec
            .all_reduce(mats.iter().cloned().enumerate().collect())
            .unwrap();
        let perms = [[6, 5, 4, 3, 2, 1, 0], [3, 0, 6, 1, 5, 2, 4]];
        for perm in perms {
            let shuffled = perm.iter().map(|&k| (k, mats[k].clone())).collect();
            assert_eq!(exec.all_reduce(shuffled).unwrap(), inorder);
        }
    }

    #[test]
    fn map_groups_runs_every_group_once() {
        let exec = Executor::new(4, ReduceMode::Fast).unwrap();
        let p = partition(10, 4).unwrap();
        let r = exec
            .map_groups(&p, |g, range| Ok::<_, ()>((g, range.len())))
            .unwrap();
        assert_eq!(r.values, vec![(0, 3), (1, 3), (2, 2), (3, 2)]);
        let mut c = r.completion.clone();
        c.sort_unstable();
        assert_eq!(c, vec![0, 1, 2, 3]);
        let err = exec.map_groups(&p, |g, _| if g >= 2 { Err(g) } else { Ok(g) });
        assert_eq!(err.unwrap_err(), 2);
    }
}
