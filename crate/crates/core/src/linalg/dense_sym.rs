//! Dense symmetric factorizations: Cholesky and Bunch–Kaufman LDLᵀ.

use super::{DenseMatrix, Inertia, LinalgError};

/// Relative size below which a Cholesky pivot counts as non-positive.
const CHOL_REL_TOL: f64 = 1e-14;

#[derive(Clone, Debug)]
pub struct Cholesky {
    l: DenseMatrix,
}

impl Cholesky {
    pub fn factor(a: &DenseMatrix) -> Result<Self, LinalgError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(LinalgError::DimensionMismatch {
                expected: n,
                found: a.ncols(),
            });
        }
        let scale = (0..n).fold(0.0f64, |m, i| m.max(a[(i, i)].abs())).max(1.0);
        let mut l = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > CHOL_REL_TOL * scale) {
                return Err(LinalgError::NotPositiveDefinite { pivot: j });
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { l })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.l.nrows();
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[(i, k)] * b[k];
            }
            b[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[(k, i)] * b[k];
            }
            b[i] = s / self.l[(i, i)];
        }
    }

    pub fn factor_l(&self) -> &DenseMatrix {
        &self.l
    }
}

/// Bunch–Kaufman factorization `P A Pᵀ = L D Lᵀ` with 1×1 and 2×2 pivots.
#[derive(Clone, Debug)]
pub struct BunchKaufman {
    n: usize,
    perm: Vec<usize>,
    l: DenseMatrix,
    /// Diagonal of D.
    d: Vec<f64>,
    /// Subdiagonal of D; nonzero only inside 2×2 blocks.
    e: Vec<f64>,
    block2: Vec<bool>,
}

impl BunchKaufman {
    pub fn factor(a: &DenseMatrix) -> Result<Self, LinalgError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(LinalgError::DimensionMismatch {
                expected: n,
                found: a.ncols(),
            });
        }
        let alpha = (1.0 + 17f64.sqrt()) / 8.0;
        let mut m = a.clone();
        m.symmetrize();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut d = vec![0.0; n];
        let mut e = vec![0.0; n];
        let mut block2 = vec![false; n];
        let swap = |m: &mut DenseMatrix, perm: &mut Vec<usize>, a: usize, b: usize| {
            if a == b {
                return;
            }
            perm.swap(a, b);
            for j in 0..n {
                let t = m[(a, j)];
                m[(a, j)] = m[(b, j)];
                m[(b, j)] = t;
            }
            for i in 0..n {
                let t = m[(i, a)];
                m[(i, a)] = m[(i, b)];
                m[(i, b)] = t;
            }
        };
        let mut k = 0;
        while k < n {
            let absakk = m[(k, k)].abs();
            let (mut imax, mut colmax) = (k, 0.0);
            for i in k + 1..n {
                if m[(i, k)].abs() > colmax {
                    colmax = m[(i, k)].abs();
                    imax = i;
                }
            }
            let (kp, kstep) = if absakk.max(colmax) == 0.0 || absakk >= alpha * colmax {
                (k, 1)
            } else {
                let mut rowmax = 0.0f64;
                for j in k..n {
                    if j != imax {
                        rowmax = rowmax.max(m[(imax, j)].abs());
                    }
                }
                if absakk >= alpha * colmax * (colmax / rowmax) {
                    (k, 1)
                } else if m[(imax, imax)].abs() >= alpha * rowmax {
                    (imax, 1)
                } else {
                    (imax, 2)
                }
            };
            let kk = k + kstep - 1;
            swap(&mut m, &mut perm, kk, kp);
            if kstep == 1 {
                let dk = m[(k, k)];
                d[k] = dk;
                if dk != 0.0 {
                    for i in k + 1..n {
                        let lik = m[(i, k)] / dk;
                        for j in k + 1..=i {
                            let v = m[(i, j)] - lik * m[(j, k)];
                            m[(i, j)] = v;
                            m[(j, i)] = v;
                        }
                    }
                    for i in k + 1..n {
                        m[(i, k)] /= dk;
                    }
                }
            } else {
                let (a11, a21, a22) = (m[(k, k)], m[(k + 1, k)], m[(k + 1, k + 1)]);
                let det = a11 * a22 - a21 * a21;
                d[k] = a11;
                d[k + 1] = a22;
                e[k] = a21;
                block2[k] = true;
                block2[k + 1] = true;
                let (i11, i12, i22) = (a22 / det, -a21 / det, a11 / det);
                let mut lrows = Vec::with_capacity(n - k - 2);
                for i in k + 2..n {
                    let (c1, c2) = (m[(i, k)], m[(i, k + 1)]);
                    lrows.push((c1 * i11 + c2 * i12, c1 * i12 + c2 * i22));
                }
                for i in k + 2..n {
                    let (l1, l2) = lrows[i - k - 2];
                    for j in k + 2..=i {
                        let v = m[(i, j)] - l1 * m[(j, k)] - l2 * m[(j, k + 1)];
                        m[(i, j)] = v;
                        m[(j, i)] = v;
                    }
                }
                for i in k + 2..n {
                    let (l1, l2) = lrows[i - k - 2];
                    m[(i, k)] = l1;
                    m[(i, k + 1)] = l2;
                }
                m[(k + 1, k)] = 0.0;
            }
            k += kstep;
        }
        let mut l = DenseMatrix::identity(n);
        for j in 0..n {
            for i in j + 1..n {
                l[(i, j)] = m[(i, j)];
            }
        }
        Ok(Self {
            n,
            perm,
            l,
            d,
            e,
            block2,
        })
    }

    fn blocks(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut k = 0;
        while k < self.n {
            if self.block2[k] && k + 1 < self.n && self.e[k] != 0.0 {
                out.push((k, 2));
                k += 2;
            } else {
                out.push((k, 1));
                k += 1;
            }
        }
        out
    }

    pub fn inertia(&self) -> Inertia {
        let mut inertia = Inertia::default();
        let scale = self
            .d
            .iter()
            .chain(&self.e)
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-300);
        for (k, s) in self.blocks() {
            if s == 1 {
                inertia.add_pivot(self.d[k], scale);
            } else {
                let det = self.d[k] * self.d[k + 1] - self.e[k] * self.e[k];
                if det < 0.0 {
                    inertia.positive += 1;
                    inertia.negative += 1;
                } else {
                    let tr = self.d[k] + self.d[k + 1];
                    inertia.add_pivot(tr, scale);
                    inertia.add_pivot(tr, scale);
                }
            }
        }
        inertia
    }

    pub fn is_singular(&self) -> bool {
        self.inertia().zero > 0
    }

    pub fn solve_in_place(&self, b: &mut [f64]) -> Result<(), LinalgError> {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for j in 0..n {
            let yj = y[j];
            for i in j + 1..n {
                y[i] -= self.l[(i, j)] * yj;
            }
        }
        for (k, s) in self.blocks() {
            if s == 1 {
                if self.d[k] == 0.0 {
                    return Err(LinalgError::Singular { pivot: k });
                }
                y[k] /= self.d[k];
            } else {
                let (a, c, e) = (self.d[k], self.d[k + 1], self.e[k]);
                let det = a * c - e * e;
                if det == 0.0 {
                    return Err(LinalgError::Singular { pivot: k });
                }
                let (y1, y2) = (y[k], y[k + 1]);
                y[k] = (c * y1 - e * y2) / det;
                y[k + 1] = (a * y2 - e * y1) / det;
            }
        }
        for j in (0..n).rev() {
            let mut s = y[j];
            for i in j + 1..n {
                s -= self.l[(i, j)] * y[i];
            }
            y[j] = s;
        }
        for (k, &p) in self.perm.iter().enumerate() {
            b[p] = y[k];
        }
        Ok(())
    }
}

/// Cholesky when the matrix is positive definite, Bunch–Kaufman otherwise.
#[derive(Clone, Debug)]
pub enum DenseSymFactor {
    Cholesky(Cholesky),
    Indefinite(BunchKaufman),
}

impl DenseSymFactor {
    pub fn factor(a: &DenseMatrix) -> Result<Self, LinalgError> {
        match Cholesky::factor(a) {
            Ok(c) => Ok(Self::Cholesky(c)),
            Err(LinalgError::NotPositiveDefinite { .. }) => {
                Ok(Self::Indefinite(BunchKaufman::factor(a)?))
            }
            Err(e) => Err(e),
        }
    }

    pub fn inertia(&self) -> Inertia {
        match self {
            Self::Cholesky(c) => Inertia {
                positive: c.l.nrows(),
                negative: 0,
                zero: 0,
            },
            Self::Indefinite(b) => b.inertia(),
        }
    }

    pub fn solve_in_place(&self, b: &mut [f64]) -> Result<(), LinalgError> {
        match self {
            Self::Cholesky(c) => {
                c.solve_in_place(b);
                Ok(())
            }
            Self::Indefinite(f) => f.solve_in_place(b),
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn eig_inertia(a: &DenseMatrix) -> Inertia {
        let n = a.nrows();
        let m = DMatrix::from_fn(n, n, |i, j| a[(i, j)]);
        let ev = m.symmetric_eigen().eigenvalues;
        let scale = ev.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        let mut inertia = Inertia::default();
        for &v in ev.iter() {
            if v.abs() <= 1e-10 * scale {
                inertia.zero += 1;
            } else if v > 0.0 {
                inertia.positive += 1;
            } else {
                inertia.negative += 1;
            }
        }
        inertia
    }

    #[test]
    fn cholesky_solves_spd() {
        let a = DenseMatrix::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]);
        let c = Cholesky::factor(&a).unwrap();
        let mut b = vec![1.0, 2.0];
        c.solve_in_place(&mut b);
        assert!((b[0] - 1.0 / 11.0).abs() < 1e-15);
        assert!((b[1] - 7.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(matches!(
            Cholesky::factor(&a),
            Err(LinalgError::NotPositiveDefinite { pivot: 1 })
        ));
    }

    #[test]
    fn bunch_kaufman_zero_diagonal() {
        // Needs a 2×2 pivot immediately.
        let a = DenseMatrix::from_rows(&[
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 2.0],
            vec![0.0, 2.0, 1.0],
        ]);
        let f = BunchKaufman::factor(&a).unwrap();
        assert_eq!(f.inertia(), eig_inertia(&a));
        let mut b = vec![1.0, 2.0, 3.0];
        f.solve_in_place(&mut b).unwrap();
        let r = a.matvec(&b);
        for (ri, bi) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!((ri - bi).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn bunch_kaufman_inertia_matches_eigenvalues(
            n in 1usize..9,
            vals in proptest::collection::vec(-3.0f64..3.0, 81),
        ) {
            let a = DenseMatrix::from_fn(n, n, |i, j| {
                let (p, q) = if i >= j { (i, j) } else { (j, i) };
                vals[p * 9 + q]
            });
            let expect = eig_inertia(&a);
            prop_assume!(expect.zero == 0);
            let f = DenseSymFactor::factor(&a).unwrap();
            prop_assert_eq!(f.inertia(), expect);
            let b: Vec<f64> = (0..n).map(|i| i as f64 + 1.0).collect();
            let x = f.solve(&b).unwrap();
            let r = a.matvec(&x);
            let cond_guard = 1e-8 * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs())));
            for i in 0..n {
                prop_assert!((r[i] - b[i]).abs() < cond_guard * 10.0 * a.max_abs().max(1.0));
            }
        }
    }
}
