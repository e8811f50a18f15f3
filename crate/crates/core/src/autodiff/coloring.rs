//! Graph colorings for compressed derivative evaluation.

use super::AdError;
use crate::linalg::SparseMatrix;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Coloring {
    pub colors: Vec<usize>,
    pub n_colors: usize,
}

impl Coloring {
    fn from_colors(colors: Vec<usize>) -> Self {
        let n_colors = colors.iter().map(|c| c + 1).max().unwrap_or(0);
        Self { colors, n_colors }
    }

    /// Seed matrix S with `S[j, c] = 1` when column `j` has color `c`.
    pub fn seed(&self, j: usize, c: usize) -> f64 {
        if self.colors[j] == c {
            1.0
        } else {
            0.0
        }
    }
}

/// Greedy distance-2 coloring of the column intersection graph: two columns
/// sharing a row get different colors. Columns are visited in natural order
/// and take the lowest admissible color.
pub fn color_jacobian(pattern: &SparseMatrix) -> Coloring {
    let n = pattern.ncols();
    let cols = pattern.transpose();
    let mut colors = vec![usize::MAX; n];
    let mut forbidden = vec![usize::MAX; n + 1];
    for j in 0..n {
        for &r in cols.row(j).0 {
            for &k in pattern.row(r).0 {
                if colors[k] != usize::MAX {
                    forbidden[colors[k]] = j;
                }
            }
        }
        colors[j] = (0..).find(|&c| forbidden[c] != j).unwrap();
    }
    Coloring::from_colors(colors)
}

/// Symmetric coloring for a Hessian pattern (which must include the
/// diagonal). Every nonzero `H[i,j]` is recoverable: either `color(j)` is
/// unique among the colors present in row `i`, or `color(i)` is unique in
/// row `j`. Vertices are colored greedily in natural order with the lowest
/// color that keeps every affected entry recoverable.
pub fn color_hessian(pattern: &SparseMatrix) -> Result<Coloring, AdError> {
    let n = pattern.nrows();
    if pattern.ncols() != n {
        return Err(AdError::Pattern("Hessian pattern must be square".into()));
    }
    let rows: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut r: Vec<usize> = pattern.row(i).0.to_vec();
            if r.binary_search(&i).is_err() {
                r.push(i);
                r.sort_unstable();
            }
            r
        })
        .collect();
    for i in 0..n {
        for &j in &rows[i] {
            if rows[j].binary_search(&i).is_err() {
                return Err(AdError::Pattern(format!(
                    "Hessian pattern not symmetric at ({i},{j})"
                )));
            }
        }
    }
    const NONE: usize = usize::MAX;
    let mut colors = vec![NONE; n];
    let count_in_row =
        |colors: &[usize], i: usize, c: usize| rows[i].iter().filter(|&&k| colors[k] == c).count();
    for v in 0..n {
        let mut c = 0;
        loop {
            colors[v] = c;
            let ok = rows[v].iter().filter(|&&i| colors[i] != NONE).all(|&i| {
                rows[i].iter().filter(|&&j| colors[j] != NONE).all(|&j| {
                    count_in_row(&colors, i, colors[j]) == 1
                        || count_in_row(&colors, j, colors[i]) == 1
                })
            });
            if ok {
                break;
            }
            c += 1;
        }
    }
    Ok(Coloring::from_colors(colors))
}

/// Reads `J[i,j]` from the compressed product `B = J S`.
pub fn recover_jacobian_entry(
    coloring: &Coloring,
    compressed: impl Fn(usize, usize) -> f64,
    i: usize,
    j: usize,
) -> f64 {
    compressed(i, coloring.colors[j])
}

/// Source `(row, color)` in `B = H S` holding `H[i,j]`.
pub fn hessian_source(
    pattern: &SparseMatrix,
    coloring: &Coloring,
    i: usize,
    j: usize,
) -> (usize, usize) {
    let unique = |row: usize, c: usize| {
        let (cols, _) = pattern.row(row);
        let mut n = cols.iter().filter(|&&k| coloring.colors[k] == c).count();
        if cols.binary_search(&row).is_err() && coloring.colors[row] == c {
            n += 1;
        }
        n == 1
    };
    if unique(i, coloring.colors[j]) {
        (i, coloring.colors[j])
    } else {
        (j, coloring.colors[i])
    }
}
