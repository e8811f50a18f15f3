//! Sparse symmetric LDLᵀ with 1×1 pivots.
//!
//! Symbolic analysis (ordering and elimination tree) is done once per
//! pattern and reused. Tiny pivots are replaced by a signed regularization
//! when an expected sign is supplied; otherwise they are reported.

use super::ordering::{invert_permutation, minimum_degree_delayed};
use super::{Inertia, LinalgError, SparseMatrix};

const NONE: usize = usize::MAX;

#[derive(Clone, Debug)]
pub struct LdlSymbolic {
    n: usize,
    perm: Vec<usize>,
    pinv: Vec<usize>,
    parent: Vec<usize>,
    colptr: Vec<usize>,
}

impl LdlSymbolic {
    /// Analyzes a symmetric matrix stored in full (both triangles).
    pub fn analyze(a: &SparseMatrix) -> Result<Self, LinalgError> {
        Self::analyze_delayed(a, &vec![false; a.nrows()])
    }

    /// As [`analyze`](Self::analyze), postponing nodes with a zero diagonal
    /// until a neighbour has been eliminated.
    pub fn analyze_delayed(a: &SparseMatrix, delayed: &[bool]) -> Result<Self, LinalgError> {
        let n = a.nrows();
        if a.ncols() != n || delayed.len() != n {
            return Err(LinalgError::DimensionMismatch {
                expected: n,
                found: a.ncols(),
            });
        }
        let perm = minimum_degree_delayed(a, delayed);
        let pinv = invert_permutation(&perm);
        let mut parent = vec![NONE; n];
        let mut flag = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            let (cols, _) = a.row(perm[k]);
            for &c in cols {
                let mut i = pinv[c];
                if i < k {
                    while flag[i] != k {
                        if parent[i] == NONE {
                            parent[i] = k;
                        }
                        lnz[i] += 1;
                        flag[i] = k;
                        i = parent[i];
                    }
                }
            }
        }
        let mut colptr = vec![0; n + 1];
        for k in 0..n {
            colptr[k + 1] = colptr[k] + lnz[k];
        }
        Ok(Self {
            n,
            perm,
            pinv,
            parent,
            colptr,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Strictly lower nonzeros of L.
    pub fn factor_nnz(&self) -> usize {
        self.colptr[self.n]
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LdlOptions {
    /// Pivots with |d| below `pivot_tol · max|A|` are treated as zero.
    pub pivot_tol: f64,
    /// Magnitude of the replacement for a zero pivot, relative to max|A|.
    pub regularization: f64,
}

impl Default for LdlOptions {
    fn default() -> Self {
        Self {
            pivot_tol: 1e-13,
            regularization: 1e-9,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LdlFactor {
    sym: LdlSymbolic,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    inertia: Inertia,
    regularized: usize,
}

impl LdlFactor {
    /// Numeric factorization. `signs[i]` is the expected sign (+1/-1) of the
    /// pivot for original index `i`; without it, a tiny pivot is an error.
    pub fn factor(
        sym: &LdlSymbolic,
        a: &SparseMatrix,
        signs: Option<&[i8]>,
        opts: LdlOptions,
    ) -> Result<Self, LinalgError> {
        let n = sym.n;
        if a.nrows() != n || a.ncols() != n {
            return Err(LinalgError::DimensionMismatch {
                expected: n,
                found: a.nrows(),
            });
        }
        if !a.is_finite() {
            return Err(LinalgError::NonFinite);
        }
        let amax = a.max_abs().max(1e-300);
        let eps = opts.pivot_tol * amax;
        let delta = opts.regularization * amax.max(1.0);
        let total = sym.colptr[n];
        let mut li = vec![0usize; total];
        let mut lx = vec![0.0; total];
        let mut d = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut pattern = vec![0usize; n];
        let mut flag = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut inertia = Inertia::default();
        let mut regularized = 0;
        for k in 0..n {
            y[k] = 0.0;
            let mut top = n;
            flag[k] = k;
            let (cols, vals) = a.row(sym.perm[k]);
            for (&c, &v) in cols.iter().zip(vals) {
                let mut i = sym.pinv[c];
                if i <= k {
                    y[i] += v;
                    let mut len = 0;
                    while flag[i] != k {
                        pattern[len] = i;
                        len += 1;
                        flag[i] = k;
                        i = sym.parent[i];
                    }
                    while len > 0 {
                        top -= 1;
                        len -= 1;
                        pattern[top] = pattern[len];
                    }
                }
            }
            let mut dk = y[k];
            y[k] = 0.0;
            for &i in &pattern[top..n] {
                let yi = y[i];
                y[i] = 0.0;
                let p2 = sym.colptr[i] + lnz[i];
                for p in sym.colptr[i]..p2 {
                    y[li[p]] -= lx[p] * yi;
                }
                let lki = yi / d[i];
                dk -= lki * yi;
                li[p2] = k;
                lx[p2] = lki;
                lnz[i] += 1;
            }
            if !dk.is_finite() {
                return Err(LinalgError::NonFinite);
            }
            if dk.abs() <= eps {
                match signs {
                    Some(s) => {
                        dk = if s[sym.perm[k]] >= 0 { delta } else { -delta };
                        regularized += 1;
                    }
                    None => return Err(LinalgError::ZeroPivot { index: sym.perm[k] }),
                }
            }
            if dk > 0.0 {
                inertia.positive += 1;
            } else {
                inertia.negative += 1;
            }
            d[k] = dk;
        }
        Ok(Self {
            sym: sym.clone(),
            li,
            lx,
            d,
            inertia,
            regularized,
        })
    }

    pub fn inertia(&self) -> Inertia {
        self.inertia
    }

    /// Number of pivots replaced by the signed regularization.
    pub fn regularized_pivots(&self) -> usize {
        self.regularized
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let sym = &self.sym;
        let n = sym.n;
        let mut x: Vec<f64> = sym.perm.iter().map(|&p| b[p]).collect();
        for j in 0..n {
            let xj = x[j];
            if xj != 0.0 {
                for p in sym.colptr[j]..sym.colptr[j + 1] {
                    x[self.li[p]] -= self.lx[p] * xj;
                }
            }
        }
        for j in 0..n {
            x[j] /= self.d[j];
        }
        for j in (0..n).rev() {
            let mut s = x[j];
            for p in sym.colptr[j]..sym.colptr[j + 1] {
                s -= self.lx[p] * x[self.li[p]];
            }
            x[j] = s;
        }
        for (k, &p) in sym.perm.iter().enumerate() {
            b[p] = x[k];
        }
    }

    /// Solve with iterative refinement against `a` (which may differ from the
    /// factored matrix by regularization). Returns the final residual norm.
    pub fn solve_refined(
        &self,
        a: &SparseMatrix,
        b: &[f64],
        max_steps: usize,
        tol: f64,
    ) -> (Vec<f64>, f64) {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        let bnorm = super::norm_inf(b).max(1.0);
        let mut res = residual(a, &x, b);
        let mut rnorm = super::norm_inf(&res);
        for _ in 0..max_steps {
            if rnorm <= tol * bnorm {
                break;
            }
            self.solve_in_place(&mut res);
            let cand: Vec<f64> = x.iter().zip(&res).map(|(xi, ci)| xi + ci).collect();
            let cres = residual(a, &cand, b);
            let cnorm = super::norm_inf(&cres);
            if !(cnorm < rnorm) {
                break;
            }
            x = cand;
            res = cres;
            rnorm = cnorm;
        }
        (x, rnorm)
    }

    pub fn symbolic(&self) -> &LdlSymbolic {
        &self.sym
    }
}

fn residual(a: &SparseMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    let mut r = b.to_vec();
    a.matvec_add(-1.0, x, &mut r);
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;
    use nalgebra::DMatrix;

    fn kkt_like(n: usize, m: usize) -> SparseMatrix {
        let mut t = vec![];
        for i in 0..n {
            t.push((i, i, 2.0 + i as f64 * 0.1));
            if i + 1 < n {
                t.push((i, i + 1, 0.5));
                t.push((i + 1, i, 0.5));
            }
        }
        for r in 0..m {
            for c in [r, (r * 3 + 2) % n] {
                t.push((n + r, c, 1.0 + c as f64));
                t.push((c, n + r, 1.0 + c as f64));
            }
        }
        SparseMatrix::from_triplets(n + m, n + m, &t)
    }

    fn eig_inertia(a: &DenseMatrix) -> Inertia {
        let n = a.nrows();
        let ev = DMatrix::from_fn(n, n, |i, j| a[(i, j)])
            .symmetric_eigen()
            .eigenvalues;
        let mut inertia = Inertia::default();
        for &v in ev.iter() {
            if v > 1e-10 {
                inertia.positive += 1;
            } else if v < -1e-10 {
                inertia.negative += 1;
            } else {
                inertia.zero += 1;
            }
        }
        inertia
    }

    #[test]
    fn quasidefinite_solve_and_inertia() {
        let a = kkt_like(12, 5);
        let delayed: Vec<bool> = (0..17).map(|i| i >= 12).collect();
        let sym = LdlSymbolic::analyze_delayed(&a, &delayed).unwrap();
        let f = LdlFactor::factor(&sym, &a, None, LdlOptions::default()).unwrap();
        assert_eq!(f.inertia(), eig_inertia(&a.to_dense()));
        assert_eq!(
            f.inertia(),
            Inertia {
                positive: 12,
                negative: 5,
                zero: 0
            }
        );
        let b: Vec<f64> = (0..17).map(|i| (i as f64).cos()).collect();
        let (x, r) = f.solve_refined(&a, &b, 3, 1e-14);
        assert!(r < 1e-10);
        let ax = a.matvec(&x);
        for i in 0..17 {
            assert!((ax[i] - b[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn indefinite_primal_block_inertia() {
        let mut a = kkt_like(6, 2).to_dense();
        a[(0, 0)] = -5.0;
        let a = SparseMatrix::from_dense(&a, 0.0);
        let delayed: Vec<bool> = (0..8).map(|i| i >= 6).collect();
        let sym = LdlSymbolic::analyze_delayed(&a, &delayed).unwrap();
        let f = LdlFactor::factor(&sym, &a, None, LdlOptions::default()).unwrap();
        assert_eq!(f.inertia(), eig_inertia(&a.to_dense()));
    }

    #[test]
    fn zero_pivot_regularized_by_sign() {
        // Rank-deficient constraint rows make the dual block singular.
        let a = SparseMatrix::from_triplets(
            3,
            3,
            &[
                (0, 0, 1.0),
                (0, 1, 1.0),
                (1, 0, 1.0),
                (0, 2, 1.0),
                (2, 0, 1.0),
            ],
        );
        let sym = LdlSymbolic::analyze(&a).unwrap();
        assert!(LdlFactor::factor(&sym, &a, None, LdlOptions::default()).is_err());
        let f = LdlFactor::factor(&sym, &a, Some(&[1, -1, -1]), LdlOptions::default()).unwrap();
        assert_eq!(f.regularized_pivots(), 1);
        assert_eq!(
            f.inertia(),
            Inertia {
                positive: 1,
                negative: 2,
                zero: 0
            }
        );
    }

    #[test]
    fn symbolic_reuse_across_values() {
        let a = kkt_like(10, 3);
        let delayed: Vec<bool> = (0..13).map(|i| i >= 10).collect();
        let sym = LdlSymbolic::analyze_delayed(&a, &delayed).unwrap();
        let mut b = a.clone();
        b.values_mut().iter_mut().for_each(|v| *v *= 2.0);
        let f = LdlFactor::factor(&sym, &b, None, LdlOptions::default()).unwrap();
        let rhs = vec![1.0; 13];
        let mut x = rhs.clone();
        f.solve_in_place(&mut x);
        let bx = b.matvec(&x);
        for i in 0..13 {
            assert!((bx[i] - 1.0).abs() < 1e-10);
        }
    }
}
