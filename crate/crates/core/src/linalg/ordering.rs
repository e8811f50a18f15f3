//! Fill-reducing orderings for sparse factorizations.

use std::collections::BTreeSet;

use super::SparseMatrix;

/// Minimum-degree ordering of the symmetric pattern A + Aᵀ.
///
/// Returns `perm` with `perm[k]` the original index eliminated at step `k`.
/// Ties go to the smallest index, so the ordering is deterministic.
pub fn minimum_degree(a: &SparseMatrix) -> Vec<usize> {
    minimum_degree_delayed(a, &vec![false; a.nrows()])
}

/// Minimum degree where a `delayed` node (one with a structurally zero
/// diagonal, such as a constraint row of a KKT matrix) only becomes eligible
/// once all of its original neighbours have been eliminated. Falls back to
/// eliminating a delayed node when nothing else is left.
pub fn minimum_degree_delayed(a: &SparseMatrix, delayed: &[bool]) -> Vec<usize> {
    assert_eq!(a.nrows(), a.ncols(), "ordering needs a square pattern");
    assert_eq!(delayed.len(), a.nrows());
    let n = a.nrows();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, j, _) in a.entries() {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for row in adj.iter_mut() {
        row.sort_unstable();
        row.dedup();
    }
    let mut pending: Vec<usize> = (0..n)
        .map(|i| if delayed[i] { adj[i].len() } else { 0 })
        .collect();
    let original = adj.clone();
    let mut blocked: Vec<bool> = delayed.to_vec();
    let mut queue: BTreeSet<(bool, usize, usize)> =
        (0..n).map(|i| (blocked[i], adj[i].len(), i)).collect();
    let mut eliminated = vec![false; n];
    let mut perm = Vec::with_capacity(n);
    let mut merged = Vec::new();
    while let Some((_, _, v)) = queue.pop_first() {
        eliminated[v] = true;
        perm.push(v);
        for &a in &original[v] {
            if blocked[a] && !eliminated[a] {
                pending[a] -= 1;
                if pending[a] == 0 {
                    queue.remove(&(true, adj[a].len(), a));
                    blocked[a] = false;
                    queue.insert((false, adj[a].len(), a));
                }
            }
        }
        let nbrs = std::mem::take(&mut adj[v]);
        for &a in &nbrs {
            queue.remove(&(blocked[a], adj[a].len(), a));
            merged.clear();
            let (x, y) = (&adj[a], &nbrs);
            let (mut p, mut q) = (0, 0);
            while p < x.len() || q < y.len() {
                let next = if q == y.len() || (p < x.len() && x[p] < y[q]) {
                    p += 1;
                    x[p - 1]
                } else if p == x.len() || y[q] < x[p] {
                    q += 1;
                    y[q - 1]
                } else {
                    p += 1;
                    q += 1;
                    x[p - 1]
                };
                if next != a && next != v && !eliminated[next] {
                    merged.push(next);
                }
            }
            std::mem::swap(&mut adj[a], &mut merged);
            queue.insert((blocked[a], adj[a].len(), a));
        }
    }
    perm
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    inv
}

pub fn is_permutation(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    perm.iter()
        .all(|&p| p < perm.len() && !std::mem::replace(&mut seen[p], true))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arrowhead_hub_goes_last() {
        let n = 6;
        let mut t = vec![];
        for i in 0..n {
            t.push((i, i, 1.0));
            if i > 0 {
                t.push((0, i, 1.0));
                t.push((i, 0, 1.0));
            }
        }
        let a = SparseMatrix::from_triplets(n, n, &t);
        let p = minimum_degree(&a);
        assert!(is_permutation(&p));
        let hub_pos = p.iter().position(|&v| v == 0).unwrap();
        assert!(hub_pos >= n - 2);
        let inv = invert_permutation(&p);
        for (k, &v) in p.iter().enumerate() {
            assert_eq!(inv[v], k);
        }
    }

    #[test]
    fn delayed_node_waits_for_its_neighbours() {
        // Path 0 - 1 - 2 where node 0 has the smallest degree but is delayed.
        let a = SparseMatrix::from_triplets(
            3,
            3,
            &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)],
        );
        assert_eq!(minimum_degree(&a)[0], 0);
        let p = minimum_degree_delayed(&a, &[true, false, false]);
        assert_eq!(p[0], 2);
        assert!(is_permutation(&p));
    }

    #[test]
    fn empty_and_diagonal() {
        assert!(minimum_degree(&SparseMatrix::zeros(0, 0)).is_empty());
        assert_eq!(minimum_degree(&SparseMatrix::identity(3)), vec![0, 1, 2]);
    }
}
