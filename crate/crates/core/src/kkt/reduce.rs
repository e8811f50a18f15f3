//! Elimination of block states and adjoints through `G_x`.
//!
//! With `T = −G_x⁻¹ G_u` the reduced matrix is
//!
//! ```text
//! K̂ = K_uu + Σᵢ [ K_uxᵢ T + K_uuᵢ − G_uᵢᵀ G_xᵢ⁻ᵀ (K_xxᵢ T + K_xuᵢ) ]
//! ```
//!
//! built `n_batch` columns of the identity at a time. Each block contributes
//! one leaf per column tile; leaves are summed with the canonical block tree.

use std::ops::Range;

use crate::executor::{tree_reduce, tree_sum, Executor, Partition};
use crate::linalg::{BlockLu, DenseMatrix, LinalgError, LuPhase};

use super::{CondensedRhs, CondensedSystem, KktError};

/// Sparse kernel invocations for one column tile.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounts {
    /// Triangular solves with a tile of right-hand sides.
    pub spsm: usize,
    /// Sparse times dense-tile products, permutations included.
    pub spmm: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReductionStats {
    pub n_batch: usize,
    pub ops_per_tile: Vec<OpCounts>,
    /// Tile buffers `T_x`, `L_x` (each `M n_x × n_batch`) and the `n_u × n_batch` leaf tile.
    pub workspace_elements: usize,
    /// Peak partial tiles held by the tree sum.
    pub tree_scratch_elements: usize,
}

/// LU factors of the `G_x` blocks of one group.
#[derive(Clone, Debug)]
pub struct GroupFactor {
    pub range: Range<usize>,
    pub lu: BlockLu,
}

#[derive(Clone, Debug)]
pub struct ReducedSystem {
    /// `n_u × n_u`, including `diag(kuu_diag)`.
    pub khat: DenseMatrix,
    pub factors: Vec<GroupFactor>,
    pub stats: Vec<ReductionStats>,
}

fn map_lu(e: LinalgError) -> KktError {
    match e {
        LinalgError::SingularBlock { block } => KktError::SingularBlock { block },
        other => KktError::Linalg(other),
    }
}

/// Factors the group's `G_x` blocks and returns its contribution
/// `Σᵢ [K_uxᵢ T + K_uuᵢ − G_uᵢᵀ G_xᵢ⁻ᵀ (K_xxᵢ T + K_xuᵢ)]` to `K̂`.
pub fn reduce_group(
    sys: &CondensedSystem,
    range: Range<usize>,
    n_batch: usize,
) -> Result<(GroupFactor, DenseMatrix, ReductionStats), KktError> {
    let (nx, nu) = (sys.n_x, sys.n_u);
    let nb = n_batch.clamp(1, nu.max(1));
    let blocks = &sys.blocks[range.clone()];
    let gx: Vec<_> = blocks.iter().map(|b| &b.gx).collect();
    let lu = BlockLu::factor(&gx, range.start).map_err(map_lu)?;
    let gu_cols: Vec<_> = blocks.iter().map(|b| b.gu.transpose()).collect();
    let kxu_cols: Vec<_> = blocks.iter().map(|b| b.kxu.transpose()).collect();
    let mb = blocks.len();

    let mut tx = DenseMatrix::zeros(mb * nx, nb);
    let mut lx = DenseMatrix::zeros(mb * nx, nb);
    let mut khat = DenseMatrix::zeros(nu, nu);
    let mut ops_per_tile = Vec::new();

    for j0 in (0..nu).step_by(nb) {
        let w = nb.min(nu - j0);
        let mut ops = OpCounts::default();

        tx.fill(0.0);
        for (k, gt) in gu_cols.iter().enumerate() {
            for c in 0..w {
                let (idx, val) = gt.row(j0 + c);
                let col = tx.col_mut(c);
                for (&r, &v) in idx.iter().zip(val) {
                    col[k * nx + r] = v;
                }
            }
        }
        ops.spmm += 1;
        for ph in [
            LuPhase::RowPerm,
            LuPhase::Lower,
            LuPhase::Upper,
            LuPhase::ColPerm,
        ] {
            lu.apply(ph, &mut tx);
            if ph.is_triangular() {
                ops.spsm += 1;
            } else {
                ops.spmm += 1;
            }
        }
        tx.scale(-1.0);

        lx.fill(0.0);
        for (k, b) in blocks.iter().enumerate() {
            for c in 0..w {
                let t = &tx.col(c)[k * nx..(k + 1) * nx];
                let out = &mut lx.col_mut(c)[k * nx..(k + 1) * nx];
                b.kxx.matvec_add(1.0, t, out);
                let (idx, val) = kxu_cols[k].row(j0 + c);
                for (&r, &v) in idx.iter().zip(val) {
                    out[r] += v;
                }
            }
        }
        ops.spmm += 1;
        for ph in [
            LuPhase::ColPermT,
            LuPhase::UpperT,
            LuPhase::LowerT,
            LuPhase::RowPermT,
        ] {
            lu.apply(ph, &mut lx);
            if ph.is_triangular() {
                ops.spsm += 1;
            } else {
                ops.spmm += 1;
            }
        }

        let start = range.start;
        let tile = tree_reduce(
            range.clone(),
            &mut |i| {
                let k = i - start;
                let b = &blocks[k];
                let mut leaf = DenseMatrix::zeros(nu, w);
                for c in 0..w {
                    let out = leaf.col_mut(c);
                    b.kxu
                        .tmatvec_add(1.0, &tx.col(c)[k * nx..(k + 1) * nx], out);
                    let (idx, val) = b.kuu.row(j0 + c);
                    for (&r, &v) in idx.iter().zip(val) {
                        out[r] += v;
                    }
                    b.gu.tmatvec_add(-1.0, &lx.col(c)[k * nx..(k + 1) * nx], out);
                }
                leaf
            },
            &mut |mut a: DenseMatrix, b: DenseMatrix| {
                a.add_assign(&b);
                a
            },
        )
        .unwrap_or_else(|| DenseMatrix::zeros(nu, w));
        ops.spmm += 1;
        for c in 0..w {
            khat.col_mut(j0 + c).copy_from_slice(tile.col(c));
        }
        ops_per_tile.push(ops);
    }

    let depth = usize::BITS as usize - mb.saturating_sub(1).leading_zeros() as usize;
    let stats = ReductionStats {
        n_batch: nb,
        ops_per_tile,
        workspace_elements: (2 * mb * nx + nu) * nb,
        tree_scratch_elements: (depth + 1) * nu * nb,
    };
    Ok((GroupFactor { range, lu }, khat, stats))
}

/// Builds `K̂` over all groups.
pub fn reduce(
    sys: &CondensedSystem,
    exec: &Executor,
    part: &Partition,
    n_batch: usize,
) -> Result<ReducedSystem, KktError> {
    let res = exec.map_groups(part, |_, r| reduce_group(sys, r, n_batch))?;
    let order = exec.arrival_order(&res.completion);
    let mut factors = Vec::with_capacity(res.values.len());
    let mut stats = Vec::with_capacity(res.values.len());
    let mut slots: Vec<Option<DenseMatrix>> = Vec::with_capacity(res.values.len());
    for (f, k, s) in res.values {
        factors.push(f);
        stats.push(s);
        slots.push(Some(k));
    }
    let parts = order
        .into_iter()
        .map(|g| (g, slots[g].take().expect("group result")))
        .collect();
    let mut khat = exec
        .all_reduce(parts)
        .unwrap_or_else(|| DenseMatrix::zeros(sys.n_u, sys.n_u));
    for (j, d) in sys.kuu_diag.iter().enumerate() {
        khat[(j, j)] += d;
    }
    Ok(ReducedSystem {
        khat,
        factors,
        stats,
    })
}

/// The group's part of `Σᵢ [K_uxᵢ a + G_uᵢᵀ G_xᵢ⁻ᵀ (r̂₁ − K_xxᵢ a)]`, `a = G_x⁻¹ r̂₃`.
pub fn reduce_rhs_group(sys: &CondensedSystem, gf: &GroupFactor, rhs: &CondensedRhs) -> Vec<f64> {
    let start = gf.range.start;
    tree_sum(gf.range.clone(), sys.n_u, |i| {
        let b = &sys.blocks[i];
        let f = gf.lu.factor_of(i - start);
        let a = f.solve(rhs.r3.col(i));
        let mut c = rhs.r1.col(i).to_vec();
        b.kxx.matvec_add(-1.0, &a, &mut c);
        f.solve_transpose_in_place(&mut c);
        let mut leaf = b.kxu.tmatvec(&a);
        b.gu.tmatvec_add(1.0, &c, &mut leaf);
        leaf
    })
}

/// `p_x = −G_x⁻¹ (r̂₃ + G_u p_u)`, `p_y = −G_x⁻ᵀ (r̂₁ + K_xx p_x + K_xu p_u)` for
/// each block of the group, as `n_x × M` matrices.
pub fn recover_group(
    sys: &CondensedSystem,
    gf: &GroupFactor,
    rhs: &CondensedRhs,
    pu: &[f64],
) -> (DenseMatrix, DenseMatrix) {
    let nx = sys.n_x;
    let mb = gf.range.len();
    let mut px = DenseMatrix::zeros(nx, mb);
    let mut py = DenseMatrix::zeros(nx, mb);
    for (k, i) in gf.range.clone().enumerate() {
        let b = &sys.blocks[i];
        let f = gf.lu.factor_of(k);
        let mut x = rhs.r3.col(i).to_vec();
        b.gu.matvec_add(1.0, pu, &mut x);
        f.solve_in_place(&mut x);
        x.iter_mut().for_each(|v| *v = -*v);
        let mut y = rhs.r1.col(i).to_vec();
        b.kxx.matvec_add(1.0, &x, &mut y);
        b.kxu.matvec_add(1.0, pu, &mut y);
        f.solve_transpose_in_place(&mut y);
        y.iter_mut().for_each(|v| *v = -*v);
        px.col_mut(k).copy_from_slice(&x);
        py.col_mut(k).copy_from_slice(&y);
    }
    (px, py)
}

#[cfg(test)]
mod tests {
    use super::super::tests::random_system;
    use super::super::{condense, schur_oracle, ArrowheadBlocks};
    use super::*;
    use crate::executor::{partition, ReduceMode};

    #[test]
    fn tile_counts_and_workspace() {
        let cs = condense(&random_system(1, 3, 5, 7, 4));
        for nb in [1, 3, 7, 20] {
            let (_, _, st) = reduce_group(&cs, 0..3, nb).unwrap();
            let w = nb.min(7);
            assert_eq!(st.ops_per_tile.len(), 7usize.div_ceil(w));
            assert!(st
                .ops_per_tile
                .iter()
                .all(|o| *o == OpCounts { spsm: 4, spmm: 7 }));
            assert_eq!(st.workspace_elements, (2 * 3 * 5 + 7) * w);
        }
    }

    #[test]
    fn khat_matches_schur_complement() {
        let cs = condense(&random_system(8, 4, 6, 5, 3));
        let oracle = schur_oracle(&ArrowheadBlocks::from_condensed(&cs)).unwrap();
        let exec = Executor::new(2, ReduceMode::Deterministic).unwrap();
        for (g, nb) in [(1, 1), (2, 2), (4, 5), (3, 16)] {
            let red = reduce(&cs, &exec, &partition(4, g).unwrap(), nb).unwrap();
            let err = red.khat.sub(&oracle).max_abs() / oracle.max_abs();
            assert!(err < 1e-12, "G = {g}, batch = {nb}: {err:e}");
        }
    }

    #[test]
    fn khat_is_bitwise_invariant_in_groups_and_batch() {
        let cs = condense(&random_system(2, 8, 4, 6, 3));
        let exec = Executor::new(4, ReduceMode::Deterministic).unwrap();
        let base = reduce(&cs, &exec, &partition(8, 1).unwrap(), 6)
            .unwrap()
            .khat;
        for g in [2, 4, 8] {
            for nb in [1, 4] {
                let k = reduce(&cs, &exec, &partition(8, g).unwrap(), nb)
                    .unwrap()
                    .khat;
                assert_eq!(k, base, "G = {g}, batch = {nb}");
            }
        }
    }

    #[test]
    fn singular_state_block_is_reported() {
        let mut sys = random_system(5, 3, 3, 2, 2);
        sys.blocks[2].gx = crate::linalg::SparseMatrix::zeros(3, 3);
        let cs = condense(&sys);
        let exec = Executor::new(1, ReduceMode::Deterministic).unwrap();
        let err = reduce(&cs, &exec, &partition(3, 2).unwrap(), 2).unwrap_err();
        assert_eq!(err, KktError::SingularBlock { block: 2 });
    }
}
