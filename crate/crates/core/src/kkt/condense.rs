//! Slack elimination.
//!
//! With `Σ̃ = Σ_s + δ_w` and `D = Σ̃ / (1 + δ_c Σ̃)` the s and z rows give
//! `p_z = D (H p_d + r₄ − Σ̃⁻¹ r₂)` and `p_s = −(r₄ + H p_d) + δ_c p_z`, leaving
//! `[K Gᵀ; G −δ_c]` in `(p_d, p_y)`. For `δ_c = 0`, `D = Σ̃`.

use crate::executor::tree_sum;
use crate::linalg::{DenseMatrix, SparseMatrix};

use super::{AugmentedSystem, BlockVector};

#[derive(Clone, Debug)]
pub struct CondensedBlock {
    pub kxx: SparseMatrix,
    pub kxu: SparseMatrix,
    pub kuu: SparseMatrix,
    pub gx: SparseMatrix,
    pub gu: SparseMatrix,
}

/// Condensed system `[K Gᵀ; G −δ_c]`; `K_uu = Σ K_uuᵢ + diag(kuu_diag)`.
#[derive(Clone, Debug)]
pub struct CondensedSystem {
    pub n_x: usize,
    pub n_u: usize,
    pub blocks: Vec<CondensedBlock>,
    pub kuu_diag: Vec<f64>,
    pub delta_c: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CondensedRhs {
    /// `n_x × N`
    pub r1: DenseMatrix,
    pub r2: Vec<f64>,
    /// `n_x × N`
    pub r3: DenseMatrix,
}

fn slack_weights(sys: &AugmentedSystem, i: usize) -> (Vec<f64>, Vec<f64>) {
    let b = &sys.blocks[i];
    let st: Vec<f64> = b.sigma_s.iter().map(|s| s + sys.delta_w).collect();
    let scale: Vec<f64> = st.iter().map(|s| 1.0 / (1.0 + sys.delta_c * s)).collect();
    (st, scale)
}

pub fn condense(sys: &AugmentedSystem) -> CondensedSystem {
    let blocks = (0..sys.n_blocks())
        .map(|i| {
            let b = &sys.blocks[i];
            let (st, scale) = slack_weights(sys, i);
            let d: Vec<f64> = st.iter().zip(&scale).map(|(s, c)| s * c).collect();
            let diag: Vec<f64> = b.sigma_x.iter().map(|s| s + sys.delta_w).collect();
            CondensedBlock {
                kxx: b.wxx.add_diagonal(&diag).add_scaled(
                    1.0,
                    &SparseMatrix::atdb(&b.hx, &d, &b.hx),
                    1.0,
                ),
                kxu: b
                    .wxu
                    .add_scaled(1.0, &SparseMatrix::atdb(&b.hx, &d, &b.hu), 1.0),
                kuu: b
                    .wuu
                    .add_scaled(1.0, &SparseMatrix::atdb(&b.hu, &d, &b.hu), 1.0),
                gx: b.gx.clone(),
                gu: b.gu.clone(),
            }
        })
        .collect();
    CondensedSystem {
        n_x: sys.n_x,
        n_u: sys.n_u,
        blocks,
        kuu_diag: sys.sigma_u.iter().map(|s| s + sys.delta_w).collect(),
        delta_c: sys.delta_c,
    }
}

/// Condensed right-hand side for residual `r` (laid out like `sys.rhs`).
pub fn condense_rhs(sys: &AugmentedSystem, r: &BlockVector) -> CondensedRhs {
    let n = sys.n_blocks();
    let v: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let (st, scale) = slack_weights(sys, i);
            let (r2, r4) = (r.s.col(i), r.z.col(i));
            (0..sys.m)
                .map(|j| (st[j] * r4[j] - r2[j]) * scale[j])
                .collect()
        })
        .collect();
    let mut r1 = r.x.clone();
    for i in 0..n {
        sys.blocks[i].hx.tmatvec_add(1.0, &v[i], r1.col_mut(i));
    }
    let mut r2 = tree_sum(0..n, sys.n_u, |i| sys.blocks[i].hu.tmatvec(&v[i]));
    for (a, b) in r2.iter_mut().zip(&r.u) {
        *a += b;
    }
    CondensedRhs {
        r1,
        r2,
        r3: r.y.clone(),
    }
}

/// Recovers the full step from `(p_x, p_u, p_y)` of the condensed system.
pub fn expand_step(
    sys: &AugmentedSystem,
    r: &BlockVector,
    px: DenseMatrix,
    pu: Vec<f64>,
    py: DenseMatrix,
) -> BlockVector {
    let n = sys.n_blocks();
    let mut out = BlockVector::zeros(sys.n_x, sys.n_u, sys.m, n);
    for i in 0..n {
        let b = &sys.blocks[i];
        let (st, scale) = slack_weights(sys, i);
        let mut hp = r.z.col(i).to_vec();
        b.hx.matvec_add(1.0, px.col(i), &mut hp);
        b.hu.matvec_add(1.0, &pu, &mut hp);
        let r2 = r.s.col(i);
        let pz = out.z.col_mut(i);
        for j in 0..sys.m {
            pz[j] = (st[j] * hp[j] - r2[j]) * scale[j];
        }
        let pz = out.z.col(i).to_vec();
        let ps = out.s.col_mut(i);
        for j in 0..sys.m {
            ps[j] = -hp[j] + sys.delta_c * pz[j];
        }
    }
    out.x = px;
    out.u = pu;
    out.y = py;
    out
}

impl CondensedSystem {
    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Global order `x₁…x_N, u, y₁…y_N`, both triangles.
    pub fn assemble(&self) -> SparseMatrix {
        let (nx, nu, n) = (self.n_x, self.n_u, self.n_blocks());
        let ou = n * nx;
        let oy = ou + nu;
        let dim = oy + n * nx;
        let mut t = Vec::new();
        for (b, blk) in self.blocks.iter().enumerate() {
            let (ox, oyb) = (b * nx, oy + b * nx);
            for (i, j, v) in blk.kxx.entries() {
                t.push((ox + i, ox + j, v));
            }
            for (i, j, v) in blk.kxu.entries() {
                t.push((ox + i, ou + j, v));
                t.push((ou + j, ox + i, v));
            }
            for (i, j, v) in blk.kuu.entries() {
                t.push((ou + i, ou + j, v));
            }
            for (i, j, v) in blk.gx.entries() {
                t.push((oyb + i, ox + j, v));
                t.push((ox + j, oyb + i, v));
            }
            for (i, j, v) in blk.gu.entries() {
                t.push((oyb + i, ou + j, v));
                t.push((ou + j, oyb + i, v));
            }
            for j in 0..nx {
                t.push((oyb + j, oyb + j, -self.delta_c));
            }
        }
        for j in 0..nu {
            t.push((ou + j, ou + j, self.kuu_diag[j]));
        }
        SparseMatrix::from_triplets(dim, dim, &t)
    }

    /// Number of primal unknowns `N n_x + n_u`.
    pub fn n_primal(&self) -> usize {
        self.n_blocks() * self.n_x + self.n_u
    }
}

impl CondensedRhs {
    /// Global order `x₁…x_N, u, y₁…y_N`.
    pub fn to_vec(&self) -> Vec<f64> {
        [self.r1.as_slice(), &self.r2, self.r3.as_slice()].concat()
    }
}
