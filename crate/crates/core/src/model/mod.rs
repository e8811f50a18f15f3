//! Block-structured nonlinear programs.
//!
//! Each of the `N` blocks owns local variables `xᵢ` and shares the coupling
//! variables `u`. Block functions are linear maps of a basis vector
//! `ψᵢ(xᵢ, u)`: `fᵢ = L_f ψᵢ`, `gᵢ = L_g ψᵢ`, `hᵢ = L_h ψᵢ`. Inequalities are
//! written `hᵢ + sᵢ = 0` with bounds on the slack `sᵢ`.

mod monomial;

pub use monomial::{Monomial, MonomialKernel};

use thiserror::Error;

use crate::autodiff::Scalar;
use crate::linalg::{norm_inf, DenseMatrix, SparseMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{what} bound {index} has lower {lower} > upper {upper}")]
    InvalidBounds {
        what: &'static str,
        index: usize,
        lower: f64,
        upper: f64,
    },
    #[error("model needs at least one block")]
    NoBlocks,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Problem dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub n_blocks: usize,
    pub n_x: usize,
    pub n_u: usize,
    pub m: usize,
    pub n_b: usize,
}

impl Dims {
    /// Inputs per block evaluation, `n_x + n_u`.
    pub fn n_d(&self) -> usize {
        self.n_x + self.n_u
    }

    pub fn nvar(&self) -> usize {
        self.n_blocks * self.n_x + self.n_u
    }

    pub fn ncon(&self) -> usize {
        self.n_blocks * (self.n_x + self.m)
    }
}

/// Componentwise bounds; infinite entries mean no bound on that side.
#[derive(Clone, Debug, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, ModelError> {
        if lower.len() != upper.len() {
            return Err(ModelError::Dimension {
                what: "bounds",
                expected: lower.len(),
                found: upper.len(),
            });
        }
        for (i, (&l, &u)) in lower.iter().zip(&upper).enumerate() {
            if l > u || l.is_nan() || u.is_nan() || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(ModelError::InvalidBounds {
                    what: "variable",
                    index: i,
                    lower: l,
                    upper: u,
                });
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn free(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn num_finite(&self) -> usize {
        self.lower.iter().filter(|l| l.is_finite()).count()
            + self.upper.iter().filter(|u| u.is_finite()).count()
    }
}

/// Evaluates the basis vector of one block and its adjoint.
pub trait BasisKernel: Send + Sync {
    fn n_basis(&self) -> usize;

    /// Writes `ψᵢ(x, u)` into `psi` (length `n_basis`).
    fn eval<S: Scalar>(&self, block: usize, x: &[S], u: &[S], psi: &mut [S]);

    /// Accumulates `(∂ψᵢ/∂x)ᵀ ω` into `grad_x` and `(∂ψᵢ/∂u)ᵀ ω` into `grad_u`.
    fn adjoint<S: Scalar>(
        &self,
        block: usize,
        x: &[S],
        u: &[S],
        omega: &[S],
        grad_x: &mut [S],
        grad_u: &mut [S],
    );
}

#[derive(Clone, Debug)]
pub struct BlockNlp<K> {
    pub kernel: K,
    pub n_blocks: usize,
    /// 1 × n_b
    pub l_f: SparseMatrix,
    /// n_x × n_b
    pub l_g: SparseMatrix,
    /// m × n_b
    pub l_h: SparseMatrix,
    pub x_bounds: Bounds,
    pub u_bounds: Bounds,
    /// Bounds on the slack of `h + s = 0`.
    pub s_bounds: Bounds,
    /// Starting point for the block variables, n_x × N.
    pub x0: DenseMatrix,
    pub u0: Vec<f64>,
}

impl<K: BasisKernel> BlockNlp<K> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kernel: K,
        n_blocks: usize,
        l_f: SparseMatrix,
        l_g: SparseMatrix,
        l_h: SparseMatrix,
        x_bounds: Bounds,
        u_bounds: Bounds,
        s_bounds: Bounds,
        x0: DenseMatrix,
        u0: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let nlp = Self {
            kernel,
            n_blocks,
            l_f,
            l_g,
            l_h,
            x_bounds,
            u_bounds,
            s_bounds,
            x0,
            u0,
        };
        nlp.validate()?;
        Ok(nlp)
    }

    pub fn dims(&self) -> Dims {
        Dims {
            n_blocks: self.n_blocks,
            n_x: self.l_g.nrows(),
            n_u: self.u_bounds.len(),
            m: self.l_h.nrows(),
            n_b: self.kernel.n_basis(),
        }
    }

    pub fn validate(&self) -> Result<Dims, ModelError> {
        let d = self.dims();
        if d.n_blocks == 0 {
            return Err(ModelError::NoBlocks);
        }
        let check = |what, expected, found| {
            if expected == found {
                Ok(())
            } else {
                Err(ModelError::Dimension {
                    what,
                    expected,
                    found,
                })
            }
        };
        check("L_f rows", 1, self.l_f.nrows())?;
        check("L_f columns", d.n_b, self.l_f.ncols())?;
        check("L_g columns", d.n_b, self.l_g.ncols())?;
        check("L_h columns", d.n_b, self.l_h.ncols())?;
        check("x bounds", d.n_x, self.x_bounds.len())?;
        check("slack bounds", d.m, self.s_bounds.len())?;
        check("x0 rows", d.n_x, self.x0.nrows())?;
        check("x0 columns", d.n_blocks, self.x0.ncols())?;
        check("u0", d.n_u, self.u0.len())?;
        for (what, b) in [
            ("x", &self.x_bounds),
            ("u", &self.u_bounds),
            ("slack", &self.s_bounds),
        ] {
            for (i, (&l, &u)) in b.lower.iter().zip(&b.upper).enumerate() {
                if l > u || l.is_nan() || u.is_nan() {
                    return Err(ModelError::InvalidBounds {
                        what,
                        index: i,
                        lower: l,
                        upper: u,
                    });
                }
            }
        }
        if !self.x0.is_finite() || self.u0.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("starting point"));
        }
        if !(self.l_f.is_finite() && self.l_g.is_finite() && self.l_h.is_finite()) {
            return Err(ModelError::NonFinite("basis maps"));
        }
        Ok(d)
    }

    /// Values `(fᵢ, gᵢ, hᵢ)` for one block.
    pub fn eval_block(&self, i: usize, x: &[f64], u: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let mut psi = vec![0.0; self.kernel.n_basis()];
        self.kernel.eval(i, x, u, &mut psi);
        (
            self.l_f.matvec(&psi)[0],
            self.l_g.matvec(&psi),
            self.l_h.matvec(&psi),
        )
    }

    /// `∇ₓ` and `∇ᵤ` of `w·fᵢ + yᵀgᵢ + zᵀhᵢ`.
    pub fn lagrangian_gradient_block(
        &self,
        i: usize,
        x: &[f64],
        u: &[f64],
        y: &[f64],
        z: &[f64],
        w: f64,
    ) -> (Vec<f64>, Vec<f64>) {
        let omega = self.basis_weights(y, z, w);
        let mut gx = vec![0.0; x.len()];
        let mut gu = vec![0.0; u.len()];
        self.kernel.adjoint(i, x, u, &omega, &mut gx, &mut gu);
        (gx, gu)
    }

    /// `ω = w·L_fᵀ + L_gᵀ y + L_hᵀ z`
    pub fn basis_weights(&self, y: &[f64], z: &[f64], w: f64) -> Vec<f64> {
        let mut omega = vec![0.0; self.kernel.n_basis()];
        self.l_f.tmatvec_add(w, &[1.0], &mut omega);
        self.l_g.tmatvec_add(1.0, y, &mut omega);
        self.l_h.tmatvec_add(1.0, z, &mut omega);
        omega
    }

    /// Total objective `Σ fᵢ`.
    pub fn objective(&self, x: &DenseMatrix, u: &[f64]) -> f64 {
        (0..self.n_blocks)
            .map(|i| self.eval_block(i, x.col(i), u).0)
            .sum()
    }
}

/// Primal-dual point. Block quantities are stored one column per block.
#[derive(Clone, Debug, PartialEq)]
pub struct Iterate {
    pub x: DenseMatrix,
    pub u: Vec<f64>,
    pub s: DenseMatrix,
    /// Multipliers of `g = 0`.
    pub y: DenseMatrix,
    /// Multipliers of `h + s = 0`.
    pub z: DenseMatrix,
    pub zx_l: DenseMatrix,
    pub zx_u: DenseMatrix,
    pub zu_l: Vec<f64>,
    pub zu_u: Vec<f64>,
    pub zs_l: DenseMatrix,
    pub zs_u: DenseMatrix,
}

impl Iterate {
    pub fn zeros(d: &Dims) -> Self {
        let bx = || DenseMatrix::zeros(d.n_x, d.n_blocks);
        let bs = || DenseMatrix::zeros(d.m, d.n_blocks);
        Self {
            x: bx(),
            u: vec![0.0; d.n_u],
            s: bs(),
            y: bx(),
            z: bs(),
            zx_l: bx(),
            zx_u: bx(),
            zu_l: vec![0.0; d.n_u],
            zu_u: vec![0.0; d.n_u],
            zs_l: bs(),
            zs_u: bs(),
        }
    }
}

/// Lagrangian value at an iterate. Bound terms use the distance to each
/// finite bound; infinite bounds contribute nothing.
pub fn eval_lagrangian<K: BasisKernel>(nlp: &BlockNlp<K>, it: &Iterate) -> f64 {
    let mut total = 0.0;
    for i in 0..nlp.n_blocks {
        let (f, g, h) = nlp.eval_block(i, it.x.col(i), &it.u);
        let mut li = f;
        li += g.iter().zip(it.y.col(i)).map(|(a, b)| a * b).sum::<f64>();
        li += h
            .iter()
            .zip(it.s.col(i))
            .zip(it.z.col(i))
            .map(|((h, s), z)| z * (h + s))
            .sum::<f64>();
        li -= bound_terms(&nlp.x_bounds, it.x.col(i), it.zx_l.col(i), it.zx_u.col(i));
        li -= bound_terms(&nlp.s_bounds, it.s.col(i), it.zs_l.col(i), it.zs_u.col(i));
        total += li;
    }
    total - bound_terms(&nlp.u_bounds, &it.u, &it.zu_l, &it.zu_u)
}

fn bound_terms(b: &Bounds, v: &[f64], zl: &[f64], zu: &[f64]) -> f64 {
    let mut t = 0.0;
    for j in 0..v.len() {
        if b.lower[j].is_finite() {
            t += zl[j] * (v[j] - b.lower[j]);
        }
        if b.upper[j].is_finite() {
            t += zu[j] * (b.upper[j] - v[j]);
        }
    }
    t
}

/// Optimality residuals at an iterate.
#[derive(Clone, Debug)]
pub struct KktResiduals {
    /// Gradient of the Lagrangian in each block's x, n_x × N.
    pub stationarity_x: DenseMatrix,
    pub stationarity_u: Vec<f64>,
    /// `z − ν_l + ν_u`, m × N.
    pub stationarity_s: DenseMatrix,
    pub primal_g: DenseMatrix,
    /// `h + s`, m × N.
    pub primal_h: DenseMatrix,
    /// Largest |distance · multiplier − μ| over all finite bounds.
    pub complementarity: f64,
    pub dual_infeasibility: f64,
    pub primal_infeasibility: f64,
    /// Scale dividing the dual infeasibility.
    pub s_d: f64,
    /// Scale dividing the complementarity.
    pub s_c: f64,
}

impl KktResiduals {
    /// `max(dual/s_d, primal, compl/s_c)`
    pub fn scaled_error(&self) -> f64 {
        (self.dual_infeasibility / self.s_d)
            .max(self.primal_infeasibility)
            .max(self.complementarity / self.s_c)
    }
}

pub const MULTIPLIER_SCALE_MAX: f64 = 100.0;

pub fn kkt_error<K: BasisKernel>(nlp: &BlockNlp<K>, it: &Iterate, mu: f64) -> KktResiduals {
    kkt_error_weighted(nlp, it, mu, 1.0)
}

/// Residuals for the problem with objective scaled by `w`.
pub fn kkt_error_weighted<K: BasisKernel>(
    nlp: &BlockNlp<K>,
    it: &Iterate,
    mu: f64,
    w: f64,
) -> KktResiduals {
    kkt_error_with_bounds(
        nlp,
        it,
        mu,
        w,
        [&nlp.x_bounds, &nlp.u_bounds, &nlp.s_bounds],
    )
}

/// Residuals with the model's `(x, u, slack)` bounds replaced, e.g. by relaxed ones.
pub fn kkt_error_with_bounds<K: BasisKernel>(
    nlp: &BlockNlp<K>,
    it: &Iterate,
    mu: f64,
    w: f64,
    [xb, ub, sb]: [&Bounds; 3],
) -> KktResiduals {
    let d = nlp.dims();
    let mut sx = DenseMatrix::zeros(d.n_x, d.n_blocks);
    let mut ss = DenseMatrix::zeros(d.m, d.n_blocks);
    let mut pg = DenseMatrix::zeros(d.n_x, d.n_blocks);
    let mut ph = DenseMatrix::zeros(d.m, d.n_blocks);
    let mut su = vec![0.0; d.n_u];
    let mut compl = 0.0f64;
    let (mut eq_mult, mut bound_mult) = (0.0, 0.0);
    for i in 0..d.n_blocks {
        let (xi, yi, zi) = (it.x.col(i), it.y.col(i), it.z.col(i));
        let (_, g, h) = nlp.eval_block(i, xi, &it.u);
        let (gx, gu) = nlp.lagrangian_gradient_block(i, xi, &it.u, yi, zi, w);
        for (a, b) in su.iter_mut().zip(&gu) {
            *a += b;
        }
        let col = sx.col_mut(i);
        for j in 0..d.n_x {
            col[j] = gx[j] - it.zx_l[(j, i)] + it.zx_u[(j, i)];
        }
        let col = ss.col_mut(i);
        for j in 0..d.m {
            col[j] = zi[j] - it.zs_l[(j, i)] + it.zs_u[(j, i)];
        }
        pg.col_mut(i).copy_from_slice(&g);
        for j in 0..d.m {
            ph[(j, i)] = h[j] + it.s[(j, i)];
        }
        compl = compl.max(complementarity(xb, xi, it.zx_l.col(i), it.zx_u.col(i), mu));
        compl = compl.max(complementarity(
            sb,
            it.s.col(i),
            it.zs_l.col(i),
            it.zs_u.col(i),
            mu,
        ));
        eq_mult += crate::linalg::norm1(yi) + crate::linalg::norm1(zi);
        bound_mult += active_mult_norm(xb, it.zx_l.col(i), it.zx_u.col(i))
            + active_mult_norm(sb, it.zs_l.col(i), it.zs_u.col(i));
    }
    for j in 0..d.n_u {
        su[j] += -it.zu_l[j] + it.zu_u[j];
    }
    compl = compl.max(complementarity(ub, &it.u, &it.zu_l, &it.zu_u, mu));
    bound_mult += active_mult_norm(ub, &it.zu_l, &it.zu_u);
    let n_bounds = d.n_blocks * (xb.num_finite() + sb.num_finite()) + ub.num_finite();
    let n_eq = d.ncon();
    let s_d = if n_eq + n_bounds > 0 {
        MULTIPLIER_SCALE_MAX.max((eq_mult + bound_mult) / (n_eq + n_bounds) as f64)
            / MULTIPLIER_SCALE_MAX
    } else {
        1.0
    };
    let s_c = if n_bounds > 0 {
        MULTIPLIER_SCALE_MAX.max(bound_mult / n_bounds as f64) / MULTIPLIER_SCALE_MAX
    } else {
        1.0
    };
    let dual = sx.max_abs().max(norm_inf(&su)).max(ss.max_abs());
    let primal = pg.max_abs().max(ph.max_abs());
    KktResiduals {
        stationarity_x: sx,
        stationarity_u: su,
        stationarity_s: ss,
        primal_g: pg,
        primal_h: ph,
        complementarity: compl,
        dual_infeasibility: dual,
        primal_infeasibility: primal,
        s_d,
        s_c,
    }
}

fn complementarity(b: &Bounds, v: &[f64], zl: &[f64], zu: &[f64], mu: f64) -> f64 {
    let mut c = 0.0f64;
    for j in 0..v.len() {
        if b.lower[j].is_finite() {
            c = c.max(((v[j] - b.lower[j]) * zl[j] - mu).abs());
        }
        if b.upper[j].is_finite() {
            c = c.max(((b.upper[j] - v[j]) * zu[j] - mu).abs());
        }
    }
    c
}

fn active_mult_norm(b: &Bounds, zl: &[f64], zu: &[f64]) -> f64 {
    let mut t = 0.0;
    for j in 0..zl.len() {
        if b.lower[j].is_finite() {
            t += zl[j].abs();
        }
        if b.upper[j].is_finite() {
            t += zu[j].abs();
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    /// min (x−1)² + (u−1)²  s.t.  x − u = 0,  x·u − 2 ≤ 0 (so s ≥ 0),  x, u ≥ 0
    pub(crate) fn scalar_problem(n_blocks: usize) -> BlockNlp<MonomialKernel> {
        // ψ = [x², x, u², u, 1, x·u]
        let kernel = MonomialKernel::new(
            1,
            vec![
                Monomial::new(1.0, &[(0, 2)]),
                Monomial::new(1.0, &[(0, 1)]),
                Monomial::new(1.0, &[(1, 2)]),
                Monomial::new(1.0, &[(1, 1)]),
                Monomial::new(1.0, &[]),
                Monomial::new(1.0, &[(0, 1), (1, 1)]),
            ],
        );
        let nb = n_blocks as f64;
        BlockNlp::new(
            kernel,
            n_blocks,
            SparseMatrix::from_triplets(
                1,
                6,
                &[
                    (0, 0, 1.0),
                    (0, 1, -2.0),
                    (0, 2, 1.0 / nb),
                    (0, 3, -2.0 / nb),
                    (0, 4, 1.0 + 1.0 / nb),
                ],
            ),
            SparseMatrix::from_triplets(1, 6, &[(0, 1, 1.0), (0, 3, -1.0)]),
            SparseMatrix::from_triplets(1, 6, &[(0, 5, 1.0), (0, 4, -2.0)]),
            Bounds::new(vec![0.0], vec![f64::INFINITY]).unwrap(),
            Bounds::new(vec![0.0], vec![f64::INFINITY]).unwrap(),
            Bounds::new(vec![0.0], vec![f64::INFINITY]).unwrap(),
            DenseMatrix::from_fn(1, n_blocks, |_, _| 0.5),
            vec![0.5],
        )
        .unwrap()
    }

    #[test]
    fn dims_follow_from_maps() {
        let nlp = scalar_problem(3);
        let d = nlp.dims();
        assert_eq!(
            d,
            Dims {
                n_blocks: 3,
                n_x: 1,
                n_u: 1,
                m: 1,
                n_b: 6
            }
        );
        assert_eq!(d.nvar(), 4);
        assert_eq!(d.ncon(), 6);
    }

    #[test]
    fn validation_rejects_bad_shapes() {
        let mut nlp = scalar_problem(2);
        nlp.u0 = vec![];
        assert!(matches!(
            nlp.validate(),
            Err(ModelError::Dimension { what: "u0", .. })
        ));
        assert!(Bounds::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn lagrangian_matches_hand_value() {
        let nlp = scalar_problem(1);
        let mut it = Iterate::zeros(&nlp.dims());
        it.x[(0, 0)] = 2.0;
        it.u[0] = 0.5;
        it.s[(0, 0)] = 0.25;
        it.y[(0, 0)] = 3.0;
        it.z[(0, 0)] = -1.0;
        it.zx_l[(0, 0)] = 0.5;
        it.zu_l[0] = 2.0;
        it.zs_l[(0, 0)] = 4.0;
        // f = 1 + 0.25, g = 1.5, h + s = 1 − 2 + 0.25
        let expect = 1.25 + 3.0 * 1.5 + (-1.0) * (-0.75) - 0.5 * 2.0 - 4.0 * 0.25 - 2.0 * 0.5;
        assert!((eval_lagrangian(&nlp, &it) - expect).abs() < 1e-14);
    }

    #[test]
    fn residuals_match_hand_formulas() {
        let nlp = scalar_problem(1);
        let mut it = Iterate::zeros(&nlp.dims());
        let (x, u, s, y, z, kx, ku, ks) = (1.3, 0.7, 0.4, -0.2, 0.6, 0.05, 0.3, 0.9);
        it.x[(0, 0)] = x;
        it.u[0] = u;
        it.s[(0, 0)] = s;
        it.y[(0, 0)] = y;
        it.z[(0, 0)] = z;
        it.zx_l[(0, 0)] = kx;
        it.zu_l[0] = ku;
        it.zs_l[(0, 0)] = ks;
        let mu = 0.1;
        let r = kkt_error(&nlp, &it, mu);
        let dx = 2.0 * (x - 1.0) + y + z * u - kx;
        let du = 2.0 * (u - 1.0) - y + z * x - ku;
        let ds = z - ks;
        assert!((r.stationarity_x[(0, 0)] - dx).abs() < 1e-14);
        assert!((r.stationarity_u[0] - du).abs() < 1e-14);
        assert!((r.stationarity_s[(0, 0)] - ds).abs() < 1e-14);
        assert!((r.primal_g[(0, 0)] - (x - u)).abs() < 1e-14);
        assert!((r.primal_h[(0, 0)] - (x * u - 2.0 + s)).abs() < 1e-14);
        let c = [
            (x * kx - mu).abs(),
            (u * ku - mu).abs(),
            (s * ks - mu).abs(),
        ];
        assert!((r.complementarity - c.iter().fold(0.0f64, |a, b| a.max(*b))).abs() < 1e-14);
        assert_eq!(r.s_d, 1.0);
        assert!((r.dual_infeasibility - dx.abs().max(du.abs()).max(ds.abs())).abs() < 1e-14);
    }

    #[test]
    fn residual_vanishes_at_grid_minimizer() {
        // With x = u the problem is min 2(x−1)² subject to x² ≤ 2, x ≥ 0.
        // A grid search locates the minimizer; the hand-derived multipliers
        // then zero every residual there.
        let nlp = scalar_problem(1);
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..=200_000 {
            let t = k as f64 * 2f64.sqrt() / 200_000.0;
            let v = 2.0 * (t - 1.0) * (t - 1.0);
            if v < best.0 {
                best = (v, t);
            }
        }
        let t = best.1;
        assert!((t - 1.0).abs() < 1e-5);
        let mut it = Iterate::zeros(&nlp.dims());
        it.x[(0, 0)] = t;
        it.u[0] = t;
        it.s[(0, 0)] = 2.0 - t * t;
        it.y[(0, 0)] = -2.0 * (t - 1.0);
        let r = kkt_error(&nlp, &it, 0.0);
        assert!(r.scaled_error() < 1e-4);
    }
}
