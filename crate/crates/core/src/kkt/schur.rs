//! Dense reference for the reduced matrix.
//!
//! Ordering each block's `(x, y)` first, the condensed system is arrowhead
//! with diagonal blocks `Aᵢ = [K_xxᵢ G_xᵢᵀ; G_xᵢ 0]`, border
//! `Bᵢ = [K_uxᵢ G_uᵢᵀ]` and corner `A₀ = K_uu`; the reduced matrix is the
//! Schur complement `A₀ − Σ Bᵢ Aᵢ⁻¹ Bᵢᵀ`.

use crate::linalg::{DenseMatrix, DenseSymFactor, LinalgError};

use super::{CondensedSystem, KktError};

#[derive(Clone, Debug)]
pub struct ArrowheadBlocks {
    pub a0: DenseMatrix,
    pub a: Vec<DenseMatrix>,
    pub b: Vec<DenseMatrix>,
}

impl ArrowheadBlocks {
    pub fn from_condensed(sys: &CondensedSystem) -> Self {
        let (nx, nu) = (sys.n_x, sys.n_u);
        let mut a0 = DenseMatrix::zeros(nu, nu);
        let mut a = Vec::new();
        let mut b = Vec::new();
        for blk in &sys.blocks {
            a0.add_assign(&blk.kuu.to_dense());
            let (kxx, gx) = (blk.kxx.to_dense(), blk.gx.to_dense());
            a.push(DenseMatrix::from_fn(2 * nx, 2 * nx, |i, j| {
                match (i < nx, j < nx) {
                    (true, true) => kxx[(i, j)],
                    (true, false) => gx[(j - nx, i)],
                    (false, true) => gx[(i - nx, j)],
                    (false, false) => 0.0,
                }
            }));
            let (kxu, gu) = (blk.kxu.to_dense(), blk.gu.to_dense());
            b.push(DenseMatrix::from_fn(nu, 2 * nx, |i, j| {
                if j < nx {
                    kxu[(j, i)]
                } else {
                    gu[(j - nx, i)]
                }
            }));
        }
        for (j, d) in sys.kuu_diag.iter().enumerate() {
            a0[(j, j)] += d;
        }
        Self { a0, a, b }
    }
}

/// `A₀ − Σ Bᵢ Aᵢ⁻¹ Bᵢᵀ` by dense symmetric indefinite solves.
pub fn schur_oracle(blocks: &ArrowheadBlocks) -> Result<DenseMatrix, KktError> {
    let mut s = blocks.a0.clone();
    for (ai, bi) in blocks.a.iter().zip(&blocks.b) {
        let f = DenseSymFactor::factor(ai)?;
        let bt = bi.transpose();
        let mut x = DenseMatrix::zeros(bt.nrows(), bt.ncols());
        for c in 0..bt.ncols() {
            x.col_mut(c).copy_from_slice(&f.solve(bt.col(c))?);
        }
        let mut p = bi.matmul(&x);
        p.scale(-1.0);
        s.add_assign(&p);
    }
    Ok(s)
}

/// `[K Gᵀ; G 0]⁻¹ = [0 G⁻¹; G⁻ᵀ −G⁻ᵀ K G⁻¹]` for square invertible `G`.
pub fn closed_form_block_inverse(
    k: &DenseMatrix,
    g: &DenseMatrix,
) -> Result<DenseMatrix, KktError> {
    let n = g.nrows();
    let gi = dense_inverse(g)?;
    let git = gi.transpose();
    let mut c = git.matmul(k).matmul(&gi);
    c.scale(-1.0);
    Ok(DenseMatrix::from_fn(2 * n, 2 * n, |i, j| {
        match (i < n, j < n) {
            (true, true) => 0.0,
            (true, false) => gi[(i, j - n)],
            (false, true) => git[(i - n, j)],
            (false, false) => c[(i - n, j - n)],
        }
    }))
}

/// Gauss-Jordan inverse with partial pivoting.
fn dense_inverse(a: &DenseMatrix) -> Result<DenseMatrix, KktError> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut inv = DenseMatrix::identity(n);
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| m[(i, k)].abs().total_cmp(&m[(j, k)].abs()))
            .unwrap();
        if m[(p, k)].abs() <= 1e-14 * scale {
            return Err(LinalgError::Singular { pivot: k }.into());
        }
        for j in 0..n {
            let (t, u) = (m[(k, j)], inv[(k, j)]);
            m[(k, j)] = m[(p, j)];
            inv[(k, j)] = inv[(p, j)];
            m[(p, j)] = t;
            inv[(p, j)] = u;
        }
        let d = m[(k, k)];
        for j in 0..n {
            m[(k, j)] /= d;
            inv[(k, j)] /= d;
        }
        for i in (0..n).filter(|&i| i != k) {
            let f = m[(i, k)];
            if f != 0.0 {
                for j in 0..n {
                    m[(i, j)] -= f * m[(k, j)];
                    inv[(i, j)] -= f * inv[(k, j)];
                }
            }
        }
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::super::condense;
    use super::super::tests::random_system;
    use super::*;

    #[test]
    fn closed_form_inverse_matches_product_identity() {
        let cs = condense(&random_system(6, 2, 5, 3, 4));
        let ab = ArrowheadBlocks::from_condensed(&cs);
        for (ai, blk) in ab.a.iter().zip(&cs.blocks) {
            let inv = closed_form_block_inverse(&blk.kxx.to_dense(), &blk.gx.to_dense()).unwrap();
            let id = ai.matmul(&inv);
            assert!(id.sub(&DenseMatrix::identity(10)).max_abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_equals_closed_form_complement() {
        let cs = condense(&random_system(7, 3, 4, 3, 2));
        let ab = ArrowheadBlocks::from_condensed(&cs);
        let s = schur_oracle(&ab).unwrap();
        let mut t = ab.a0.clone();
        for ((bi, blk), _) in ab.b.iter().zip(&cs.blocks).zip(&ab.a) {
            let inv = closed_form_block_inverse(&blk.kxx.to_dense(), &blk.gx.to_dense()).unwrap();
            let mut p = bi.matmul(&inv).matmul(&bi.transpose());
            p.scale(-1.0);
            t.add_assign(&p);
        }
        assert!(s.sub(&t).max_abs() < 1e-11 * t.max_abs());
        assert!(s.is_symmetric(1e-11 * s.max_abs()));
    }

    #[test]
    fn singular_inverse_is_rejected() {
        let g = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(closed_form_block_inverse(&DenseMatrix::identity(2), &g).is_err());
    }
}
