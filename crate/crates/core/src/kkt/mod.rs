//! Newton systems of the block-structured barrier problem.
//!
//! The augmented system in `(p_x, p_u, p_s, p_y, p_z)` is
//!
//! ```text
//! [ W + Σ_p + δ_w     0        Gᵀ      Hᵀ   ] [p_d]     [r₁]
//! [ 0             Σ_s + δ_w    0       I    ] [p_s] = − [r₂]
//! [ G                 0      −δ_c      0    ] [p_y]     [r₃]
//! [ H                 I        0     −δ_c   ] [p_z]     [r₄]
//! ```
//!
//! with `p_d = (p_x₁, …, p_x_N, p_u)`. It is solved directly
//! ([`Strategy::Augmented`]), after eliminating the slacks
//! ([`Strategy::Condensed`]), or after further eliminating every block's
//! state and adjoint through its square `G_x` block ([`Strategy::Reduced`]).

mod condense;
mod reduce;
mod schur;
mod solver;

pub use condense::{
    condense, condense_rhs, expand_step, CondensedBlock, CondensedRhs, CondensedSystem,
};
pub use reduce::{
    recover_group, reduce, reduce_group, reduce_rhs_group, GroupFactor, OpCounts, ReducedSystem,
    ReductionStats,
};
pub use schur::{closed_form_block_inverse, schur_oracle, ArrowheadBlocks};
pub use solver::{KktSolver, SolveInfo, SolverOptions, Strategy};

use thiserror::Error;

use crate::executor::tree_sum;
use crate::linalg::{DenseMatrix, Inertia, LinalgError, SparseMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KktError {
    #[error("state Jacobian of block {block} is singular")]
    SingularBlock { block: usize },
    #[error("linear algebra: {0}")]
    Linalg(#[from] LinalgError),
    #[error("inertia correction failed (δ_w reached {delta_w:e})")]
    InertiaCorrection { delta_w: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Per-block matrices and diagonals of the augmented system.
#[derive(Clone, Debug)]
pub struct BlockSystem {
    pub wxx: SparseMatrix,
    pub wxu: SparseMatrix,
    pub wuu: SparseMatrix,
    pub gx: SparseMatrix,
    pub gu: SparseMatrix,
    pub hx: SparseMatrix,
    pub hu: SparseMatrix,
    /// Bound barrier diagonal on x.
    pub sigma_x: Vec<f64>,
    /// Bound barrier diagonal on the slacks.
    pub sigma_s: Vec<f64>,
}

/// Vector with the layout of the augmented system: block columns for x, s, y
/// and z, and a shared u part. Used for both right-hand sides and steps.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockVector {
    pub x: DenseMatrix,
    pub u: Vec<f64>,
    pub s: DenseMatrix,
    pub y: DenseMatrix,
    pub z: DenseMatrix,
}

impl BlockVector {
    pub fn zeros(n_x: usize, n_u: usize, m: usize, n_blocks: usize) -> Self {
        Self {
            x: DenseMatrix::zeros(n_x, n_blocks),
            u: vec![0.0; n_u],
            s: DenseMatrix::zeros(m, n_blocks),
            y: DenseMatrix::zeros(n_x, n_blocks),
            z: DenseMatrix::zeros(m, n_blocks),
        }
    }

    fn parts(&self) -> [&[f64]; 5] {
        [
            self.x.as_slice(),
            &self.u,
            self.s.as_slice(),
            self.y.as_slice(),
            self.z.as_slice(),
        ]
    }

    fn parts_mut(&mut self) -> [&mut [f64]; 5] {
        [
            self.x.as_mut_slice(),
            &mut self.u,
            self.s.as_mut_slice(),
            self.y.as_mut_slice(),
            self.z.as_mut_slice(),
        ]
    }

    pub fn norm_inf(&self) -> f64 {
        self.parts()
            .iter()
            .map(|p| crate::linalg::norm_inf(p))
            .fold(0.0, f64::max)
    }

    /// self += alpha · other
    pub fn axpy(&mut self, alpha: f64, other: &BlockVector) {
        for (a, b) in self.parts_mut().into_iter().zip(other.parts()) {
            crate::linalg::axpy(alpha, b, a);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for p in self.parts_mut() {
            p.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.parts().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    /// Flattens in the global order `x₁…x_N, u, s₁…s_N, y₁…y_N, z₁…z_N`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.parts().concat()
    }

    pub fn from_vec(n_x: usize, n_u: usize, m: usize, n_blocks: usize, v: &[f64]) -> Self {
        let mut out = Self::zeros(n_x, n_u, m, n_blocks);
        let mut off = 0;
        for p in out.parts_mut() {
            let n = p.len();
            p.copy_from_slice(&v[off..off + n]);
            off += n;
        }
        out
    }
}

/// The full augmented system with its right-hand side residuals `r`; the
/// system solved is `A p = −r`.
#[derive(Clone, Debug)]
pub struct AugmentedSystem {
    pub n_x: usize,
    pub n_u: usize,
    pub m: usize,
    pub blocks: Vec<BlockSystem>,
    /// Bound barrier diagonal on u.
    pub sigma_u: Vec<f64>,
    pub rhs: BlockVector,
    pub delta_w: f64,
    pub delta_c: f64,
}

impl AugmentedSystem {
    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn dim(&self) -> usize {
        let n = self.n_blocks();
        n * (2 * self.n_x + 2 * self.m) + self.n_u
    }

    /// Inertia required for a descent step: positive on the primal space,
    /// negative on the constraints.
    pub fn expected_inertia(&self) -> Inertia {
        let n = self.n_blocks();
        Inertia {
            positive: n * (self.n_x + self.m) + self.n_u,
            negative: n * (self.n_x + self.m),
            zero: 0,
        }
    }

    pub fn validate(&self) -> Result<(), KktError> {
        let (nx, nu, m) = (self.n_x, self.n_u, self.m);
        let bad = |what: &str| Err(KktError::Dimension(what.to_string()));
        if self.sigma_u.len() != nu {
            return bad("sigma_u");
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let shapes = [
                (b.wxx.shape(), (nx, nx)),
                (b.wxu.shape(), (nx, nu)),
                (b.wuu.shape(), (nu, nu)),
                (b.gx.shape(), (nx, nx)),
                (b.gu.shape(), (nx, nu)),
                (b.hx.shape(), (m, nx)),
                (b.hu.shape(), (m, nu)),
            ];
            if shapes.iter().any(|(a, e)| a != e) || b.sigma_x.len() != nx || b.sigma_s.len() != m {
                return Err(KktError::Dimension(format!("block {i}")));
            }
        }
        let r = &self.rhs;
        let n = self.n_blocks();
        if r.x.shape() != (nx, n)
            || r.u.len() != nu
            || r.s.shape() != (m, n)
            || r.y.shape() != (nx, n)
            || r.z.shape() != (m, n)
        {
            return bad("right-hand side");
        }
        Ok(())
    }

    /// `A p` with the current regularization.
    pub fn apply(&self, p: &BlockVector) -> BlockVector {
        let (nx, nu, m, n) = (self.n_x, self.n_u, self.m, self.n_blocks());
        let dw = self.delta_w;
        let dc = self.delta_c;
        let mut out = BlockVector::zeros(nx, nu, m, n);
        for (i, b) in self.blocks.iter().enumerate() {
            let (px, ps, py, pz) = (p.x.col(i), p.s.col(i), p.y.col(i), p.z.col(i));
            let ox = out.x.col_mut(i);
            b.wxx.matvec_add(1.0, px, ox);
            b.wxu.matvec_add(1.0, &p.u, ox);
            b.gx.tmatvec_add(1.0, py, ox);
            b.hx.tmatvec_add(1.0, pz, ox);
            for j in 0..nx {
                ox[j] += (b.sigma_x[j] + dw) * px[j];
            }
            let os = out.s.col_mut(i);
            for j in 0..m {
                os[j] = (b.sigma_s[j] + dw) * ps[j] + pz[j];
            }
            let oy = out.y.col_mut(i);
            b.gx.matvec_add(1.0, px, oy);
            b.gu.matvec_add(1.0, &p.u, oy);
            for j in 0..nx {
                oy[j] -= dc * py[j];
            }
            let oz = out.z.col_mut(i);
            b.hx.matvec_add(1.0, px, oz);
            b.hu.matvec_add(1.0, &p.u, oz);
            for j in 0..m {
                oz[j] += ps[j] - dc * pz[j];
            }
        }
        out.u = tree_sum(0..n, nu, |i| {
            let b = &self.blocks[i];
            let mut v = vec![0.0; nu];
            b.wxu.tmatvec_add(1.0, p.x.col(i), &mut v);
            b.wuu.matvec_add(1.0, &p.u, &mut v);
            b.gu.tmatvec_add(1.0, p.y.col(i), &mut v);
            b.hu.tmatvec_add(1.0, p.z.col(i), &mut v);
            v
        });
        for j in 0..nu {
            out.u[j] += (self.sigma_u[j] + dw) * p.u[j];
        }
        out
    }

    /// `A p + r`, the residual of a computed step.
    pub fn residual(&self, p: &BlockVector) -> BlockVector {
        let mut r = self.apply(p);
        r.axpy(1.0, &self.rhs);
        r
    }

    /// `p_dᵀ (W + Σ_p + δ_w) p_d + p_sᵀ (Σ_s + δ_w) p_s`.
    pub fn primal_curvature(&self, p: &BlockVector) -> f64 {
        let mut q = BlockVector::zeros(self.n_x, self.n_u, self.m, self.n_blocks());
        q.x = p.x.clone();
        q.u = p.u.clone();
        q.s = p.s.clone();
        let ap = self.apply(&q);
        crate::linalg::dot(ap.x.as_slice(), p.x.as_slice())
            + crate::linalg::dot(&ap.u, &p.u)
            + crate::linalg::dot(ap.s.as_slice(), p.s.as_slice())
    }

    /// Assembles the full symmetric matrix (both triangles) in the global
    /// order of [`BlockVector::to_vec`]. Dual diagonals are always stored.
    pub fn assemble(&self) -> SparseMatrix {
        let (nx, nu, m, n) = (self.n_x, self.n_u, self.m, self.n_blocks());
        let ou = n * nx;
        let os = ou + nu;
        let oy = os + n * m;
        let oz = oy + n * nx;
        let dim = oz + n * m;
        let mut t: Vec<(usize, usize, f64)> = Vec::new();
        let sym = |t: &mut Vec<(usize, usize, f64)>, i: usize, j: usize, v: f64| {
            t.push((i, j, v));
            if i != j {
                t.push((j, i, v));
            }
        };
        for (b, blk) in self.blocks.iter().enumerate() {
            let (ox, osb, oyb, ozb) = (b * nx, os + b * m, oy + b * nx, oz + b * m);
            for (i, j, v) in blk.wxx.entries() {
                t.push((ox + i, ox + j, v));
            }
            for j in 0..nx {
                t.push((ox + j, ox + j, blk.sigma_x[j] + self.delta_w));
                t.push((oyb + j, oyb + j, -self.delta_c));
            }
            for (i, j, v) in blk.wxu.entries() {
                sym(&mut t, ox + i, ou + j, v);
            }
            for (i, j, v) in blk.wuu.entries() {
                t.push((ou + i, ou + j, v));
            }
            for j in 0..m {
                t.push((osb + j, osb + j, blk.sigma_s[j] + self.delta_w));
                sym(&mut t, ozb + j, osb + j, 1.0);
                t.push((ozb + j, ozb + j, -self.delta_c));
            }
            for (i, j, v) in blk.gx.entries() {
                sym(&mut t, oyb + i, ox + j, v);
            }
            for (i, j, v) in blk.gu.entries() {
                sym(&mut t, oyb + i, ou + j, v);
            }
            for (i, j, v) in blk.hx.entries() {
                sym(&mut t, ozb + i, ox + j, v);
            }
            for (i, j, v) in blk.hu.entries() {
                sym(&mut t, ozb + i, ou + j, v);
            }
        }
        for j in 0..nu {
            t.push((ou + j, ou + j, self.sigma_u[j] + self.delta_w));
        }
        SparseMatrix::from_triplets(dim, dim, &t)
    }

    /// True for the constraint rows (y and z) of the global ordering.
    pub fn dual_rows(&self) -> Vec<bool> {
        let n = self.n_blocks();
        let np = n * (self.n_x + self.m) + self.n_u;
        (0..self.dim()).map(|i| i >= np).collect()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Deterministic pseudo-random stream for building test systems.
    pub struct Lcg(pub u64);

    impl Lcg {
        pub fn next(&mut self) -> f64 {
            self.0 = self
                .0
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((self.0 >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        }

        pub fn sparse(&mut self, r: usize, c: usize, density: f64) -> SparseMatrix {
            let mut t = vec![];
            for i in 0..r {
                for j in 0..c {
                    if (self.next() + 1.0) * 0.5 < density {
                        t.push((i, j, self.next()));
                    }
                }
            }
            SparseMatrix::from_triplets(r, c, &t)
        }

        pub fn sym(&mut self, n: usize, density: f64, shift: f64) -> SparseMatrix {
            let a = self.sparse(n, n, density);
            a.add_scaled(0.5, &a.transpose(), 0.5)
                .add_diagonal(&vec![shift; n])
        }

        pub fn positive(&mut self, n: usize) -> Vec<f64> {
            (0..n).map(|_| 0.5 + (self.next() + 1.0)).collect()
        }
    }

    /// Random augmented system with a well-conditioned state Jacobian.
    pub fn random_system(
        seed: u64,
        n_blocks: usize,
        nx: usize,
        nu: usize,
        m: usize,
    ) -> AugmentedSystem {
        let mut r = Lcg(seed);
        let blocks = (0..n_blocks)
            .map(|_| {
                let gx = r.sparse(nx, nx, 0.3).add_diagonal(&vec![4.0; nx]);
                BlockSystem {
                    wxx: r.sym(nx, 0.3, 1.0),
                    wxu: r.sparse(nx, nu, 0.4),
                    wuu: r.sym(nu, 0.5, 1.0),
                    gx,
                    gu: r.sparse(nx, nu, 0.5),
                    hx: r.sparse(m, nx, 0.4),
                    hu: r.sparse(m, nu, 0.4),
                    sigma_x: r.positive(nx),
                    sigma_s: r.positive(m),
                }
            })
            .collect();
        let mut rhs = BlockVector::zeros(nx, nu, m, n_blocks);
        for p in rhs.parts_mut() {
            p.iter_mut().for_each(|v| *v = r.next());
        }
        AugmentedSystem {
            n_x: nx,
            n_u: nu,
            m,
            blocks,
            sigma_u: r.positive(nu),
            rhs,
            delta_w: 0.0,
            delta_c: 0.0,
        }
    }

    #[test]
    fn apply_matches_assembled_matrix() {
        let mut sys = random_system(11, 3, 4, 2, 3);
        sys.delta_w = 0.3;
        sys.delta_c = 1e-3;
        let a = sys.assemble();
        assert_eq!(a.to_dense(), a.to_dense().transpose());
        let mut p = BlockVector::zeros(4, 2, 3, 3);
        let mut rng = Lcg(5);
        for q in p.parts_mut() {
            q.iter_mut().for_each(|v| *v = rng.next());
        }
        let dense = a.matvec(&p.to_vec());
        let op = sys.apply(&p).to_vec();
        for (x, y) in dense.iter().zip(&op) {
            assert!((x - y).abs() < 1e-13);
        }
        assert_eq!(BlockVector::from_vec(4, 2, 3, 3, &p.to_vec()), p);
    }

    #[test]
    fn primal_curvature_matches_quadratic_form() {
        let sys = random_system(3, 2, 3, 2, 2);
        let mut p = BlockVector::zeros(3, 2, 2, 2);
        let mut rng = Lcg(9);
        for q in p.parts_mut() {
            q.iter_mut().for_each(|v| *v = rng.next());
        }
        let mut primal = p.clone();
        primal.y.fill(0.0);
        primal.z.fill(0.0);
        let a = sys.assemble();
        let v = primal.to_vec();
        let expect = crate::linalg::dot(&v, &a.matvec(&v));
        assert!((sys.primal_curvature(&p) - expect).abs() < 1e-12);
    }
}
