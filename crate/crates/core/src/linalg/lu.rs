//! LU factorization of square blocks with row pivoting.
//!
//! Blocks up to [`DENSE_LU_LIMIT`] use a dense partial-pivot LU. Larger blocks
//! use a left-looking sparse LU with a minimum-degree column order and
//! threshold partial pivoting. Both produce `P A Q = L U` and share the solve
//! code, which is exposed phase by phase.

use super::ordering::{invert_permutation, minimum_degree};
use super::{DenseMatrix, LinalgError, SparseMatrix};

pub const DENSE_LU_LIMIT: usize = 64;
/// A pivot is rejected when it is below this fraction of its row's largest entry.
pub const PIVOT_REL_TOL: f64 = 1e-12;
const DIAG_PREFERENCE: f64 = 0.1;

#[derive(Clone, Debug)]
struct Csc {
    colptr: Vec<usize>,
    rows: Vec<usize>,
    vals: Vec<f64>,
}

impl Csc {
    fn col(&self, j: usize) -> (&[usize], &[f64]) {
        let r = self.colptr[j]..self.colptr[j + 1];
        (&self.rows[r.clone()], &self.vals[r])
    }
}

#[derive(Clone, Debug)]
pub struct LuFactor {
    n: usize,
    /// Row `k` of `P A` is row `p[k]` of `A`.
    p: Vec<usize>,
    /// Column `k` of `A Q` is column `q[k]` of `A`.
    q: Vec<usize>,
    l: Csc,
    u: Csc,
    udiag: Vec<f64>,
}

fn row_max(a: &SparseMatrix) -> Vec<f64> {
    (0..a.nrows())
        .map(|i| a.row(i).1.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .collect()
}

impl LuFactor {
    pub fn factor(a: &SparseMatrix) -> Result<Self, LinalgError> {
        if a.nrows() != a.ncols() {
            return Err(LinalgError::DimensionMismatch {
                expected: a.nrows(),
                found: a.ncols(),
            });
        }
        if !a.is_finite() {
            return Err(LinalgError::NonFinite);
        }
        if a.nrows() <= DENSE_LU_LIMIT {
            Self::factor_dense(a)
        } else {
            Self::factor_sparse(a)
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Fill count of L and U including the diagonal.
    pub fn nnz(&self) -> usize {
        self.l.rows.len() + self.u.rows.len() + self.n
    }

    fn factor_dense(a: &SparseMatrix) -> Result<Self, LinalgError> {
        let n = a.nrows();
        let rmax = row_max(a);
        let mut m = a.to_dense();
        let mut p: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (mut piv, mut best) = (k, -1.0);
            for i in k..n {
                if m[(i, k)].abs() > best {
                    best = m[(i, k)].abs();
                    piv = i;
                }
            }
            if n > 0 && (best == 0.0 || best < PIVOT_REL_TOL * rmax[p[piv]]) {
                return Err(LinalgError::Singular { pivot: k });
            }
            if piv != k {
                p.swap(piv, k);
                for j in 0..n {
                    let t = m[(k, j)];
                    m[(k, j)] = m[(piv, j)];
                    m[(piv, j)] = t;
                }
            }
            let d = m[(k, k)];
            for i in k + 1..n {
                let f = m[(i, k)] / d;
                m[(i, k)] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        let v = m[(k, j)];
                        m[(i, j)] -= f * v;
                    }
                }
            }
        }
        let mut l = Csc {
            colptr: vec![0],
            rows: vec![],
            vals: vec![],
        };
        let mut u = Csc {
            colptr: vec![0],
            rows: vec![],
            vals: vec![],
        };
        let mut udiag = vec![0.0; n];
        for j in 0..n {
            for i in 0..j {
                if m[(i, j)] != 0.0 {
                    u.rows.push(i);
                    u.vals.push(m[(i, j)]);
                }
            }
            u.colptr.push(u.rows.len());
            udiag[j] = m[(j, j)];
            for i in j + 1..n {
                if m[(i, j)] != 0.0 {
                    l.rows.push(i);
                    l.vals.push(m[(i, j)]);
                }
            }
            l.colptr.push(l.rows.len());
        }
        Ok(Self {
            n,
            p,
            q: (0..n).collect(),
            l,
            u,
            udiag,
        })
    }

    fn factor_sparse(a: &SparseMatrix) -> Result<Self, LinalgError> {
        const NONE: usize = usize::MAX;
        let n = a.nrows();
        let rmax = row_max(a);
        let at = a.transpose();
        let q = minimum_degree(a);
        let mut pinv = vec![NONE; n];
        let mut l = Csc {
            colptr: vec![0],
            rows: vec![],
            vals: vec![],
        };
        let mut u = Csc {
            colptr: vec![0],
            rows: vec![],
            vals: vec![],
        };
        let mut udiag = vec![0.0; n];
        let mut x = vec![0.0; n];
        let mut mark = vec![NONE; n];
        let mut stack: Vec<(usize, usize)> = Vec::new();
        let mut post: Vec<usize> = Vec::with_capacity(n);
        for k in 0..n {
            let col = q[k];
            let (brows, bvals) = at.row(col);
            // Reach of the column's pattern in the graph of L, in postorder.
            post.clear();
            for &start in brows {
                if mark[start] == k {
                    continue;
                }
                mark[start] = k;
                stack.push((start, 0));
                while let Some(top) = stack.last_mut() {
                    let (node, pos) = *top;
                    let children: &[usize] = if pinv[node] != NONE {
                        let j = pinv[node];
                        &l.rows[l.colptr[j]..l.colptr[j + 1]]
                    } else {
                        &[]
                    };
                    if pos < children.len() {
                        top.1 += 1;
                        let c = children[pos];
                        if mark[c] != k {
                            mark[c] = k;
                            stack.push((c, 0));
                        }
                    } else {
                        stack.pop();
                        post.push(node);
                    }
                }
            }
            for (&i, &v) in brows.iter().zip(bvals) {
                x[i] = v;
            }
            for &i in post.iter().rev() {
                let j = pinv[i];
                if j == NONE {
                    continue;
                }
                let xi = x[i];
                if xi != 0.0 {
                    for p in l.colptr[j]..l.colptr[j + 1] {
                        x[l.rows[p]] -= l.vals[p] * xi;
                    }
                }
            }
            let (mut piv, mut best) = (NONE, 0.0f64);
            for &i in &post {
                if pinv[i] == NONE && x[i].abs() > best {
                    best = x[i].abs();
                    piv = i;
                }
            }
            if pinv[col] == NONE && mark[col] == k && x[col].abs() >= DIAG_PREFERENCE * best {
                piv = col;
            }
            if piv == NONE || x[piv] == 0.0 || x[piv].abs() < PIVOT_REL_TOL * rmax[piv] {
                return Err(LinalgError::Singular { pivot: k });
            }
            let d = x[piv];
            pinv[piv] = k;
            udiag[k] = d;
            for &i in &post {
                if i == piv {
                    continue;
                }
                if pinv[i] == NONE {
                    l.rows.push(i);
                    l.vals.push(x[i] / d);
                } else {
                    u.rows.push(pinv[i]);
                    u.vals.push(x[i]);
                }
            }
            for &i in &post {
                x[i] = 0.0;
            }
            l.colptr.push(l.rows.len());
            u.colptr.push(u.rows.len());
        }
        for r in l.rows.iter_mut() {
            *r = pinv[*r];
        }
        Ok(Self {
            n,
            p: invert_permutation(&pinv),
            q,
            l,
            u,
            udiag,
        })
    }

    /// b ← P b
    pub fn permute_rows(&self, b: &mut [f64], scratch: &mut Vec<f64>) {
        scratch.clear();
        scratch.extend(self.p.iter().map(|&i| b[i]));
        b.copy_from_slice(scratch);
    }

    /// b ← Pᵀ b
    pub fn permute_rows_t(&self, b: &mut [f64], scratch: &mut Vec<f64>) {
        scratch.clear();
        scratch.extend_from_slice(b);
        for (k, &i) in self.p.iter().enumerate() {
            b[i] = scratch[k];
        }
    }

    /// b ← Q b
    pub fn permute_cols(&self, b: &mut [f64], scratch: &mut Vec<f64>) {
        scratch.clear();
        scratch.extend_from_slice(b);
        for (k, &j) in self.q.iter().enumerate() {
            b[j] = scratch[k];
        }
    }

    /// b ← Qᵀ b
    pub fn permute_cols_t(&self, b: &mut [f64], scratch: &mut Vec<f64>) {
        scratch.clear();
        scratch.extend(self.q.iter().map(|&j| b[j]));
        b.copy_from_slice(scratch);
    }

    /// b ← L⁻¹ b
    pub fn solve_l(&self, b: &mut [f64]) {
        for j in 0..self.n {
            let bj = b[j];
            if bj != 0.0 {
                let (rows, vals) = self.l.col(j);
                for (&r, &v) in rows.iter().zip(vals) {
                    b[r] -= v * bj;
                }
            }
        }
    }

    /// b ← U⁻¹ b
    pub fn solve_u(&self, b: &mut [f64]) {
        for k in (0..self.n).rev() {
            b[k] /= self.udiag[k];
            let bk = b[k];
            if bk != 0.0 {
                let (rows, vals) = self.u.col(k);
                for (&r, &v) in rows.iter().zip(vals) {
                    b[r] -= v * bk;
                }
            }
        }
    }

    /// b ← U⁻ᵀ b
    pub fn solve_ut(&self, b: &mut [f64]) {
        for k in 0..self.n {
            let (rows, vals) = self.u.col(k);
            let mut s = b[k];
            for (&r, &v) in rows.iter().zip(vals) {
                s -= v * b[r];
            }
            b[k] = s / self.udiag[k];
        }
    }

    /// b ← L⁻ᵀ b
    pub fn solve_lt(&self, b: &mut [f64]) {
        for j in (0..self.n).rev() {
            let (rows, vals) = self.l.col(j);
            let mut s = b[j];
            for (&r, &v) in rows.iter().zip(vals) {
                s -= v * b[r];
            }
            b[j] = s;
        }
    }

    /// b ← A⁻¹ b
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let mut s = Vec::with_capacity(self.n);
        self.permute_rows(b, &mut s);
        self.solve_l(b);
        self.solve_u(b);
        self.permute_cols(b, &mut s);
    }

    /// b ← A⁻ᵀ b
    pub fn solve_transpose_in_place(&self, b: &mut [f64]) {
        let mut s = Vec::with_capacity(self.n);
        self.permute_cols_t(b, &mut s);
        self.solve_ut(b);
        self.solve_lt(b);
        self.permute_rows_t(b, &mut s);
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_transpose_in_place(&mut x);
        x
    }
}

/// One phase of a block-diagonal LU solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LuPhase {
    RowPerm,
    RowPermT,
    ColPerm,
    ColPermT,
    Lower,
    Upper,
    UpperT,
    LowerT,
}

impl LuPhase {
    pub fn is_triangular(self) -> bool {
        matches!(
            self,
            LuPhase::Lower | LuPhase::Upper | LuPhase::UpperT | LuPhase::LowerT
        )
    }
}

/// LU factors of a sequence of equally sized diagonal blocks.
#[derive(Clone, Debug)]
pub struct BlockLu {
    block_size: usize,
    factors: Vec<LuFactor>,
}

impl BlockLu {
    /// Factors each block. `first_block` offsets the index reported on failure.
    pub fn factor(blocks: &[&SparseMatrix], first_block: usize) -> Result<Self, LinalgError> {
        let block_size = blocks.first().map_or(0, |b| b.nrows());
        let mut factors = Vec::with_capacity(blocks.len());
        for (i, b) in blocks.iter().enumerate() {
            if b.nrows() != block_size {
                return Err(LinalgError::DimensionMismatch {
                    expected: block_size,
                    found: b.nrows(),
                });
            }
            let f = LuFactor::factor(b).map_err(|e| match e {
                LinalgError::Singular { .. } | LinalgError::NonFinite => {
                    LinalgError::SingularBlock {
                        block: first_block + i,
                    }
                }
                other => other,
            })?;
            factors.push(f);
        }
        Ok(Self {
            block_size,
            factors,
        })
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn num_blocks(&self) -> usize {
        self.factors.len()
    }

    pub fn factor_of(&self, i: usize) -> &LuFactor {
        &self.factors[i]
    }

    /// Applies one phase to every block row of every column of `b`.
    pub fn apply(&self, phase: LuPhase, b: &mut DenseMatrix) {
        let n = self.block_size;
        assert_eq!(
            b.nrows(),
            n * self.factors.len(),
            "stacked rhs has wrong height"
        );
        let mut s = Vec::with_capacity(n);
        for c in 0..b.ncols() {
            let col = b.col_mut(c);
            for (i, f) in self.factors.iter().enumerate() {
                let seg = &mut col[i * n..(i + 1) * n];
                match phase {
                    LuPhase::RowPerm => f.permute_rows(seg, &mut s),
                    LuPhase::RowPermT => f.permute_rows_t(seg, &mut s),
                    LuPhase::ColPerm => f.permute_cols(seg, &mut s),
                    LuPhase::ColPermT => f.permute_cols_t(seg, &mut s),
                    LuPhase::Lower => f.solve_l(seg),
                    LuPhase::Upper => f.solve_u(seg),
                    LuPhase::UpperT => f.solve_ut(seg),
                    LuPhase::LowerT => f.solve_lt(seg),
                }
            }
        }
    }

    /// b ← blockdiag(A)⁻¹ b, or the transpose solve.
    pub fn solve(&self, b: &mut DenseMatrix, transpose: bool) {
        let phases: [LuPhase; 4] = if transpose {
            [
                LuPhase::ColPermT,
                LuPhase::UpperT,
                LuPhase::LowerT,
                LuPhase::RowPermT,
            ]
        } else {
            [
                LuPhase::RowPerm,
                LuPhase::Lower,
                LuPhase::Upper,
                LuPhase::ColPerm,
            ]
        };
        for ph in phases {
            self.apply(ph, b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dense::norm_inf;

    fn lcg_matrix(n: usize, density: f64, seed: u64) -> SparseMatrix {
        let mut s = seed;
        let mut next = || {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut t = vec![];
        for i in 0..n {
            t.push((i, i, 4.0 + next()));
            for j in 0..n {
                if i != j && next() < density {
                    t.push((i, j, next() * 2.0 - 1.0));
                }
            }
        }
        SparseMatrix::from_triplets(n, n, &t)
    }

    fn check_solves(a: &SparseMatrix) {
        let f = LuFactor::factor(a).unwrap();
        let b: Vec<f64> = (0..a.nrows()).map(|i| (i as f64 * 0.7).sin()).collect();
        let x = f.solve(&b);
        let r: Vec<f64> = a.matvec(&x).iter().zip(&b).map(|(p, q)| p - q).collect();
        assert!(norm_inf(&r) < 1e-10, "residual {}", norm_inf(&r));
        let y = f.solve_transpose(&b);
        let r: Vec<f64> = a.tmatvec(&y).iter().zip(&b).map(|(p, q)| p - q).collect();
        assert!(norm_inf(&r) < 1e-10, "transpose residual {}", norm_inf(&r));
    }

    #[test]
    fn dense_path_solves() {
        check_solves(&lcg_matrix(20, 0.3, 1));
    }

    #[test]
    fn sparse_path_solves() {
        check_solves(&lcg_matrix(150, 0.02, 7));
    }

    #[test]
    fn sparse_path_pivots_off_diagonal() {
        // Zero diagonal forces row interchanges.
        let n = 80;
        let mut t = vec![];
        for i in 0..n {
            t.push((i, (i + 1) % n, 3.0));
            t.push((i, (i + 7) % n, 1.0));
        }
        check_solves(&SparseMatrix::from_triplets(n, n, &t));
    }

    #[test]
    fn singular_is_reported() {
        let a = SparseMatrix::from_triplets(
            2,
            2,
            &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 4.0)],
        );
        assert!(matches!(
            LuFactor::factor(&a),
            Err(LinalgError::Singular { .. })
        ));
        let n = 100;
        let mut t: Vec<_> = (0..n - 1).map(|i| (i, i, 1.0)).collect();
        t.push((n - 1, 0, 1.0));
        let s = SparseMatrix::from_triplets(n, n, &t);
        assert!(LuFactor::factor(&s).is_err());
    }

    #[test]
    fn block_solve_reports_block_index() {
        let good = SparseMatrix::identity(2);
        let bad = SparseMatrix::zeros(2, 2);
        let err = BlockLu::factor(&[&good, &bad], 10).unwrap_err();
        assert!(matches!(err, LinalgError::SingularBlock { block: 11 }));
    }

    #[test]
    fn block_solve_matches_per_block() {
        let a = lcg_matrix(5, 0.5, 3);
        let b = lcg_matrix(5, 0.5, 4);
        let f = BlockLu::factor(&[&a, &b], 0).unwrap();
        let mut rhs = DenseMatrix::from_fn(10, 2, |i, j| (i + 3 * j) as f64);
        let orig = rhs.clone();
        f.solve(&mut rhs, false);
        for c in 0..2 {
            let x = rhs.col(c);
            let r0 = a.matvec(&x[..5]);
            let r1 = b.matvec(&x[5..]);
            for i in 0..5 {
                assert!((r0[i] - orig[(i, c)]).abs() < 1e-12);
                assert!((r1[i] - orig[(i + 5, c)]).abs() < 1e-12);
            }
        }
    }
}
