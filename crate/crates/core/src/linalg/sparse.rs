use super::DenseMatrix;

/// Compressed sparse row matrix with sorted, duplicate-free column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn new(
        nrows: usize,
        ncols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        assert_eq!(indptr.len(), nrows + 1, "indptr length");
        assert_eq!(indices.len(), values.len(), "indices/values length");
        assert_eq!(*indptr.last().unwrap(), indices.len(), "indptr tail");
        debug_assert!((0..nrows).all(|i| {
            let r = &indices[indptr[i]..indptr[i + 1]];
            r.windows(2).all(|w| w[0] < w[1]) && r.iter().all(|&j| j < ncols)
        }));
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: vec![],
            values: vec![],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: d.to_vec(),
        }
    }

    /// Sums duplicate entries. Explicit zeros are kept.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut count = vec![0usize; nrows + 1];
        for &(i, j, _) in triplets {
            assert!(i < nrows && j < ncols, "triplet ({i},{j}) out of bounds");
            count[i + 1] += 1;
        }
        for i in 0..nrows {
            count[i + 1] += count[i];
        }
        let mut next = count.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(i, j, v) in triplets {
            cols[next[i]] = j;
            vals[next[i]] = v;
            next[i] += 1;
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for i in 0..nrows {
            row.clear();
            row.extend((count[i]..count[i + 1]).map(|p| (cols[p], vals[p])));
            row.sort_by_key(|e| e.0);
            for &(j, v) in &row {
                if indices.len() > indptr[i] && *indices.last().unwrap() == j {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    /// Keeps entries whose magnitude exceeds `drop_tol`.
    pub fn from_dense(a: &DenseMatrix, drop_tol: f64) -> Self {
        let mut t = Vec::new();
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                if a[(i, j)].abs() > drop_tol {
                    t.push((i, j, a[(i, j)]));
                }
            }
        }
        Self::from_triplets(a.nrows(), a.ncols(), &t)
    }

    /// Structure given by (row, col) pairs, all values zero.
    pub fn from_pattern(nrows: usize, ncols: usize, entries: &[(usize, usize)]) -> Self {
        let t: Vec<_> = entries.iter().map(|&(i, j)| (i, j, 0.0)).collect();
        Self::from_triplets(nrows, ncols, &t)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows, self.ncols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[r.clone()], &self.values[r])
    }

    /// Position of entry (i, j) in the value array.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let (cols, _) = self.row(i);
        cols.binary_search(&j).ok().map(|p| self.indptr[i] + p)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.find(i, j).map_or(0.0, |p| self.values[p])
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            (self.indptr[i]..self.indptr[i + 1]).map(move |p| (i, self.indices[p], self.values[p]))
        })
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        self.entries().collect()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.entries() {
            d[(i, j)] += v;
        }
        d
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut count = vec![0usize; self.ncols + 1];
        for &j in &self.indices {
            count[j + 1] += 1;
        }
        for j in 0..self.ncols {
            count[j + 1] += count[j];
        }
        let mut next = count.clone();
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            for p in self.indptr[i]..self.indptr[i + 1] {
                let j = self.indices[p];
                indices[next[j]] = i;
                values[next[j]] = self.values[p];
                next[j] += 1;
            }
        }
        SparseMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr: count,
            indices,
            values,
        }
    }

    /// y += alpha * A x
    pub fn matvec_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for p in self.indptr[i]..self.indptr[i + 1] {
                s += self.values[p] * x[self.indices[p]];
            }
            *yi += alpha * s;
        }
    }

    /// y += alpha * Aᵀ x
    pub fn tmatvec_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let a = alpha * xi;
            for p in self.indptr[i]..self.indptr[i + 1] {
                y[self.indices[p]] += a * self.values[p];
            }
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_add(1.0, x, &mut y);
        y
    }

    pub fn tmatvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        self.tmatvec_add(1.0, x, &mut y);
        y
    }

    /// A · B for a dense right-hand side.
    pub fn mul_dense(&self, b: &DenseMatrix) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.nrows, b.ncols());
        self.mul_dense_add(1.0, b, &mut out);
        out
    }

    /// C += alpha · A · B
    pub fn mul_dense_add(&self, alpha: f64, b: &DenseMatrix, c: &mut DenseMatrix) {
        assert_eq!(self.ncols, b.nrows());
        assert_eq!((self.nrows, b.ncols()), c.shape());
        for k in 0..b.ncols() {
            self.matvec_add(alpha, b.col(k), c.col_mut(k));
        }
    }

    /// C += alpha · Aᵀ · B
    pub fn tmul_dense_add(&self, alpha: f64, b: &DenseMatrix, c: &mut DenseMatrix) {
        assert_eq!(self.nrows, b.nrows());
        assert_eq!((self.ncols, b.ncols()), c.shape());
        for k in 0..b.ncols() {
            self.tmatvec_add(alpha, b.col(k), c.col_mut(k));
        }
    }

    /// Sparse product A · B.
    pub fn mul_sparse(&self, b: &SparseMatrix) -> SparseMatrix {
        assert_eq!(self.ncols, b.nrows);
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut acc = vec![0.0; b.ncols];
        let mut mark = vec![usize::MAX; b.ncols];
        let mut cols = Vec::new();
        for i in 0..self.nrows {
            cols.clear();
            for p in self.indptr[i]..self.indptr[i + 1] {
                let k = self.indices[p];
                let a = self.values[p];
                for q in b.indptr[k]..b.indptr[k + 1] {
                    let j = b.indices[q];
                    if mark[j] != i {
                        mark[j] = i;
                        acc[j] = 0.0;
                        cols.push(j);
                    }
                    acc[j] += a * b.values[q];
                }
            }
            cols.sort_unstable();
            for &j in &cols {
                indices.push(j);
                values.push(acc[j]);
            }
            indptr.push(indices.len());
        }
        SparseMatrix {
            nrows: self.nrows,
            ncols: b.ncols,
            indptr,
            indices,
            values,
        }
    }

    /// alpha·A + beta·B over the union pattern.
    pub fn add_scaled(&self, alpha: f64, b: &SparseMatrix, beta: f64) -> SparseMatrix {
        assert_eq!(self.shape(), b.shape());
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for i in 0..self.nrows {
            let (ca, va) = self.row(i);
            let (cb, vb) = b.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ca.len() || q < cb.len() {
                if q == cb.len() || (p < ca.len() && ca[p] < cb[q]) {
                    indices.push(ca[p]);
                    values.push(alpha * va[p]);
                    p += 1;
                } else if p == ca.len() || cb[q] < ca[p] {
                    indices.push(cb[q]);
                    values.push(beta * vb[q]);
                    q += 1;
                } else {
                    indices.push(ca[p]);
                    values.push(alpha * va[p] + beta * vb[q]);
                    p += 1;
                    q += 1;
                }
            }
            indptr.push(indices.len());
        }
        SparseMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr,
            indices,
            values,
        }
    }

    /// Aᵀ · diag(d) · B
    pub fn atdb(a: &SparseMatrix, d: &[f64], b: &SparseMatrix) -> SparseMatrix {
        assert_eq!(a.nrows, d.len());
        assert_eq!(b.nrows, d.len());
        let mut db = b.clone();
        for i in 0..db.nrows {
            for p in db.indptr[i]..db.indptr[i + 1] {
                db.values[p] *= d[i];
            }
        }
        a.transpose().mul_sparse(&db)
    }

    /// A + diag(d), inserting missing diagonal entries.
    pub fn add_diagonal(&self, d: &[f64]) -> SparseMatrix {
        self.add_scaled(1.0, &SparseMatrix::diagonal(d), 1.0)
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Extracts rows `rows` and columns `cols` (both ascending ranges).
    pub fn submatrix(
        &self,
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
    ) -> SparseMatrix {
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for i in rows.clone() {
            for p in self.indptr[i]..self.indptr[i + 1] {
                let j = self.indices[p];
                if cols.contains(&j) {
                    indices.push(j - cols.start);
                    values.push(self.values[p]);
                }
            }
            indptr.push(indices.len());
        }
        SparseMatrix {
            nrows: rows.len(),
            ncols: cols.len(),
            indptr,
            indices,
            values,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SparseMatrix {
        SparseMatrix::from_triplets(
            3,
            3,
            &[
                (0, 0, 2.0),
                (0, 2, 1.0),
                (1, 1, 3.0),
                (2, 0, -1.0),
                (2, 0, 0.5),
            ],
        )
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = sample();
        assert_eq!(a.nnz(), 4);
        assert_eq!(a.get(2, 0), -0.5);
        assert_eq!(a.get(1, 0), 0.0);
    }

    #[test]
    fn products_agree_with_dense() {
        let a = sample();
        let d = a.to_dense();
        let x = [1.0, 2.0, 3.0];
        assert_eq!(a.matvec(&x), d.matvec(&x));
        assert_eq!(a.tmatvec(&x), d.transpose().matvec(&x));
        assert_eq!(a.mul_sparse(&a).to_dense(), d.matmul(&d));
        assert_eq!(a.transpose().to_dense(), d.transpose());
        let s = a
            .add_scaled(2.0, &SparseMatrix::identity(3), -1.0)
            .to_dense();
        assert_eq!(s[(1, 1)], 5.0);
        assert_eq!(s[(2, 2)], -1.0);
        let w = [1.0, 2.0, 3.0];
        let atdb = SparseMatrix::atdb(&a, &w, &a).to_dense();
        let mut dw = d.clone();
        for i in 0..3 {
            for j in 0..3 {
                dw[(i, j)] *= w[i];
            }
        }
        assert_eq!(atdb, d.transpose().matmul(&dw));
    }

    #[test]
    fn submatrix_extracts_block() {
        let a = sample();
        let s = a.submatrix(1..3, 0..2);
        assert_eq!(
            s.to_dense(),
            DenseMatrix::from_rows(&[vec![0.0, 3.0], vec![-0.5, 0.0]])
        );
    }
}
