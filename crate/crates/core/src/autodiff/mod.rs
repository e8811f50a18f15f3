//! Batched forward-mode derivatives of block basis kernels.
//!
//! Jacobians are obtained by pushing colored seed directions through the
//! kernel with dual numbers. Hessians of the Lagrangian use forward mode over
//! the kernel's hand-written adjoint. Both run over a group of `M` blocks at a
//! time, with tangent storage held in a [`DualWorkspace`].

mod coloring;
mod scalar;

pub use coloring::{
    color_hessian, color_jacobian, hessian_source, recover_jacobian_entry, Coloring,
};
pub use scalar::{Dual, Scalar, Tracer};

use std::ops::Range;

use thiserror::Error;

use crate::linalg::{DenseMatrix, SparseMatrix};
use crate::model::{BasisKernel, BlockNlp, Dims};

/// Tangent lanes carried per kernel sweep; colors are processed in chunks.
pub const LANES: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("non-finite derivative in block {block}")]
    NonFinite { block: usize },
    #[error("invalid sparsity pattern: {0}")]
    Pattern(String),
    #[error("group {start}..{end} is outside 0..{n_blocks}")]
    Group {
        start: usize,
        end: usize,
        n_blocks: usize,
    },
}

/// Structural nonzeros of the stacked constraint Jacobian and of the
/// Lagrangian Hessian, both over the block inputs `(x, u)`.
#[derive(Clone, Debug)]
pub struct DetectedSparsity {
    /// (n_x + m) × n_d, rows of g then rows of h.
    pub jacobian: SparseMatrix,
    /// n_d × n_d, symmetric with full diagonal.
    pub hessian: SparseMatrix,
}

pub fn detect_sparsity<K: BasisKernel>(nlp: &BlockNlp<K>) -> DetectedSparsity {
    let d = nlp.dims();
    let nd = d.n_d();
    let xs: Vec<Tracer> = (0..d.n_x).map(Tracer::var).collect();
    let us: Vec<Tracer> = (0..d.n_u).map(|j| Tracer::var(d.n_x + j)).collect();
    let mut deps: Vec<Vec<u32>> = vec![Vec::new(); d.n_b];
    let mut pairs: Vec<Vec<(u32, u32)>> = vec![Vec::new(); d.n_b];
    let mut psi = vec![Tracer::default(); d.n_b];
    for b in 0..d.n_blocks {
        nlp.kernel.eval(b, &xs, &us, &mut psi);
        for k in 0..d.n_b {
            deps[k].extend_from_slice(&psi[k].deps);
            pairs[k].extend_from_slice(&psi[k].hess);
        }
    }
    for k in 0..d.n_b {
        deps[k].sort_unstable();
        deps[k].dedup();
    }
    let mut jac = Vec::new();
    for (off, l) in [(0, &nlp.l_g), (d.n_x, &nlp.l_h)] {
        for r in 0..l.nrows() {
            for &k in l.row(r).0 {
                jac.extend(deps[k].iter().map(|&j| (off + r, j as usize)));
            }
        }
    }
    let mut used = vec![false; d.n_b];
    for l in [&nlp.l_f, &nlp.l_g, &nlp.l_h] {
        for &k in l.indices() {
            used[k] = true;
        }
    }
    let mut hess: Vec<(usize, usize)> = (0..nd).map(|i| (i, i)).collect();
    for k in (0..d.n_b).filter(|&k| used[k]) {
        for &(i, j) in &pairs[k] {
            hess.push((i as usize, j as usize));
            hess.push((j as usize, i as usize));
        }
    }
    DetectedSparsity {
        jacobian: SparseMatrix::from_pattern(d.n_x + d.m, nd, &jac),
        hessian: SparseMatrix::from_pattern(nd, nd, &hess),
    }
}

/// Derivative blocks of one block's constraints.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockJacobian {
    pub gx: SparseMatrix,
    pub gu: SparseMatrix,
    pub hx: SparseMatrix,
    pub hu: SparseMatrix,
}

/// Blocks of `∇²(w·fᵢ + yᵢᵀgᵢ + zᵢᵀhᵢ)`; `wxx` and `wuu` store both triangles.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockHessian {
    pub wxx: SparseMatrix,
    pub wxu: SparseMatrix,
    pub wuu: SparseMatrix,
}

/// Values of one group's block functions.
#[derive(Clone, Debug)]
pub struct BatchValues {
    pub f: Vec<f64>,
    /// n_x × M
    pub g: DenseMatrix,
    /// m × M
    pub h: DenseMatrix,
}

#[derive(Clone, Debug)]
struct Template {
    pattern: SparseMatrix,
    /// (row in compressed matrix, color) for each stored entry.
    source: Vec<(usize, usize)>,
}

/// Patterns, colorings and decompression maps, computed once per model.
#[derive(Clone, Debug)]
pub struct DerivativePlan {
    dims: Dims,
    pub sparsity: DetectedSparsity,
    pub jac_coloring: Coloring,
    pub hess_coloring: Coloring,
    l_gt: SparseMatrix,
    gx: Template,
    gu: Template,
    hx: Template,
    hu: Template,
    wxx: Template,
    wxu: Template,
    wuu: Template,
}

impl DerivativePlan {
    pub fn new<K: BasisKernel>(nlp: &BlockNlp<K>) -> Result<Self, AdError> {
        let d = nlp.dims();
        let sparsity = detect_sparsity(nlp);
        let jac_coloring = color_jacobian(&sparsity.jacobian);
        let hess_coloring = color_hessian(&sparsity.hessian)?;
        let (nx, nd, ncon) = (d.n_x, d.n_d(), d.n_x + d.m);
        let jt = |rows: Range<usize>, cols: Range<usize>| {
            let pattern = sparsity.jacobian.submatrix(rows.clone(), cols.clone());
            let source = pattern
                .entries()
                .map(|(i, j, _)| (i + rows.start, jac_coloring.colors[j + cols.start]))
                .collect();
            Template { pattern, source }
        };
        let ht = |rows: Range<usize>, cols: Range<usize>| {
            let pattern = sparsity.hessian.submatrix(rows.clone(), cols.clone());
            let source = pattern
                .entries()
                .map(|(i, j, _)| {
                    hessian_source(
                        &sparsity.hessian,
                        &hess_coloring,
                        i + rows.start,
                        j + cols.start,
                    )
                })
                .collect();
            Template { pattern, source }
        };
        Ok(Self {
            dims: d,
            gx: jt(0..nx, 0..nx),
            gu: jt(0..nx, nx..nd),
            hx: jt(nx..ncon, 0..nx),
            hu: jt(nx..ncon, nx..nd),
            wxx: ht(0..nx, 0..nx),
            wxu: ht(0..nx, nx..nd),
            wuu: ht(nx..nd, nx..nd),
            l_gt: nlp.l_g.transpose(),
            sparsity,
            jac_coloring,
            hess_coloring,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn p_jac(&self) -> usize {
        self.jac_coloring.n_colors
    }

    pub fn p_hess(&self) -> usize {
        self.hess_coloring.n_colors
    }

    /// Empty blocks with the detected structure.
    pub fn jacobian_template(&self) -> BlockJacobian {
        BlockJacobian {
            gx: self.gx.pattern.clone(),
            gu: self.gu.pattern.clone(),
            hx: self.hx.pattern.clone(),
            hu: self.hu.pattern.clone(),
        }
    }

    pub fn hessian_template(&self) -> BlockHessian {
        BlockHessian {
            wxx: self.wxx.pattern.clone(),
            wxu: self.wxu.pattern.clone(),
            wuu: self.wuu.pattern.clone(),
        }
    }
}

/// Dual-number tangent storage for a group of `M` blocks: `(n_x + n_b + n_d)·M·p_jac + (2n_x + n_d + n_b)·M·p_hess`.
pub fn dual_buffer_elements(d: &Dims, m: usize, p_jac: usize, p_hess: usize) -> usize {
    (d.n_x + d.n_b + d.n_d()) * m * p_jac + (2 * d.n_x + d.n_d() + d.n_b) * m * p_hess
}

/// Tangent lanes for one group. Each buffer stores entry `e`, column `c`,
/// lane `l` at `(e·M + c)·p + l`.
///
/// Jacobian pass: seeds `X̲` (n_d), basis tangents `Ψ̇` (n_b) and state
/// tangents `L_g Ψ̇` (n_x). Hessian pass: seeds `X̲` (n_d, the u part is
/// overwritten by the u gradient), multiplier duals `Y̲` (n_x), basis adjoint
/// duals `ω̲ = L_gᵀ Y̲ + …` (n_b) and the x gradient (n_x).
#[derive(Clone, Debug)]
pub struct DualWorkspace {
    m: usize,
    p_jac: usize,
    p_hess: usize,
    jac_seed: Vec<f64>,
    jac_basis: Vec<f64>,
    jac_state: Vec<f64>,
    hess_seed: Vec<f64>,
    hess_mult: Vec<f64>,
    hess_basis: Vec<f64>,
    hess_state: Vec<f64>,
}

impl DualWorkspace {
    pub fn new(d: &Dims, m: usize, p_jac: usize, p_hess: usize) -> Self {
        Self {
            m,
            p_jac,
            p_hess,
            jac_seed: vec![0.0; d.n_d() * m * p_jac],
            jac_basis: vec![0.0; d.n_b * m * p_jac],
            jac_state: vec![0.0; d.n_x * m * p_jac],
            hess_seed: vec![0.0; d.n_d() * m * p_hess],
            hess_mult: vec![0.0; d.n_x * m * p_hess],
            hess_basis: vec![0.0; d.n_b * m * p_hess],
            hess_state: vec![0.0; d.n_x * m * p_hess],
        }
    }

    pub fn for_plan(plan: &DerivativePlan, m: usize) -> Self {
        Self::new(&plan.dims, m, plan.p_jac(), plan.p_hess())
    }

    /// Total f64 elements held in tangent buffers.
    pub fn elements(&self) -> usize {
        self.jac_seed.len()
            + self.jac_basis.len()
            + self.jac_state.len()
            + self.hess_seed.len()
            + self.hess_mult.len()
            + self.hess_basis.len()
            + self.hess_state.len()
    }

    pub fn group_size(&self) -> usize {
        self.m
    }
}

fn check_group(group: &Range<usize>, n_blocks: usize) -> Result<(), AdError> {
    if group.start > group.end || group.end > n_blocks {
        return Err(AdError::Group {
            start: group.start,
            end: group.end,
            n_blocks,
        });
    }
    Ok(())
}

/// Function values for the blocks in `group`. `x` holds all N block columns.
pub fn batch_eval<K: BasisKernel>(
    nlp: &BlockNlp<K>,
    x: &DenseMatrix,
    u: &[f64],
    group: Range<usize>,
) -> Result<BatchValues, AdError> {
    let d = nlp.dims();
    check_group(&group, d.n_blocks)?;
    let m = group.len();
    let mut out = BatchValues {
        f: vec![0.0; m],
        g: DenseMatrix::zeros(d.n_x, m),
        h: DenseMatrix::zeros(d.m, m),
    };
    let mut psi = vec![0.0; d.n_b];
    for (c, b) in group.enumerate() {
        nlp.kernel.eval(b, x.col(b), u, &mut psi);
        out.f[c] = nlp.l_f.matvec(&psi)[0];
        nlp.l_g.matvec_add(1.0, &psi, out.g.col_mut(c));
        nlp.l_h.matvec_add(1.0, &psi, out.h.col_mut(c));
        if !out.f[c].is_finite()
            || out
                .g
                .col(c)
                .iter()
                .chain(out.h.col(c))
                .any(|v| !v.is_finite())
        {
            return Err(AdError::NonFinite { block: b });
        }
    }
    Ok(out)
}

/// Gradients of `w·fᵢ + yᵢᵀgᵢ + zᵢᵀhᵢ` for the group: (n_x × M, n_u × M).
#[allow(clippy::too_many_arguments)]
pub fn batch_gradient<K: BasisKernel>(
    nlp: &BlockNlp<K>,
    x: &DenseMatrix,
    u: &[f64],
    y: Option<&DenseMatrix>,
    z: Option<&DenseMatrix>,
    w: f64,
    group: Range<usize>,
) -> Result<(DenseMatrix, DenseMatrix), AdError> {
    let d = nlp.dims();
    check_group(&group, d.n_blocks)?;
    let mut gx = DenseMatrix::zeros(d.n_x, group.len());
    let mut gu = DenseMatrix::zeros(d.n_u, group.len());
    let zy = vec![0.0; d.n_x];
    let zz = vec![0.0; d.m];
    for (c, b) in group.enumerate() {
        let omega = nlp.basis_weights(
            y.map_or(&zy[..], |y| y.col(b)),
            z.map_or(&zz[..], |z| z.col(b)),
            w,
        );
        nlp.kernel
            .adjoint(b, x.col(b), u, &omega, gx.col_mut(c), gu.col_mut(c));
        if gx.col(c).iter().chain(gu.col(c)).any(|v| !v.is_finite()) {
            return Err(AdError::NonFinite { block: b });
        }
    }
    Ok((gx, gu))
}

fn lanes<const L: usize>(buf: &[f64], base: usize, c0: usize, p: usize) -> [f64; L] {
    let mut e = [0.0; L];
    for (l, v) in e.iter_mut().enumerate() {
        if c0 + l < p {
            *v = buf[base + c0 + l];
        }
    }
    e
}

fn fill_values(t: &Template, compressed: impl Fn(usize, usize) -> f64) -> SparseMatrix {
    let mut m = t.pattern.clone();
    for (v, &(r, c)) in m.values_mut().iter_mut().zip(&t.source) {
        *v = compressed(r, c);
    }
    m
}

/// Constraint Jacobian blocks for every block in `group`.
pub fn batch_jacobian<K: BasisKernel>(
    nlp: &BlockNlp<K>,
    x: &DenseMatrix,
    u: &[f64],
    group: Range<usize>,
    plan: &DerivativePlan,
    ws: &mut DualWorkspace,
) -> Result<Vec<BlockJacobian>, AdError> {
    let d = nlp.dims();
    check_group(&group, d.n_blocks)?;
    let mm = group.len();
    if ws.m != mm || ws.p_jac != plan.p_jac() || ws.p_hess != plan.p_hess() {
        *ws = DualWorkspace::for_plan(plan, mm);
    }
    let p = plan.p_jac();
    let (nx, nd, nb) = (d.n_x, d.n_d(), d.n_b);
    for e in 0..nd {
        for c in 0..mm {
            for l in 0..p {
                ws.jac_seed[(e * mm + c) * p + l] = plan.jac_coloring.seed(e, l);
            }
        }
    }
    let mut xd = vec![Dual::<LANES>::constant(0.0); nx];
    let mut ud = vec![Dual::<LANES>::constant(0.0); d.n_u];
    let mut psi = vec![Dual::<LANES>::constant(0.0); nb];
    let mut out = Vec::with_capacity(mm);
    let mut hc = vec![0.0; d.m * p];
    for (c, b) in group.enumerate() {
        for c0 in (0..p).step_by(LANES) {
            for j in 0..nx {
                xd[j] = Dual::new(x[(j, b)], lanes(&ws.jac_seed, (j * mm + c) * p, c0, p));
            }
            for j in 0..d.n_u {
                ud[j] = Dual::new(u[j], lanes(&ws.jac_seed, ((nx + j) * mm + c) * p, c0, p));
            }
            nlp.kernel.eval(b, &xd, &ud, &mut psi);
            for (k, v) in psi.iter().enumerate() {
                if !v.is_finite() {
                    return Err(AdError::NonFinite { block: b });
                }
                for l in 0..LANES.min(p - c0) {
                    ws.jac_basis[(k * mm + c) * p + c0 + l] = v.eps[l];
                }
            }
        }
        for r in 0..nx {
            let (ks, vs) = nlp.l_g.row(r);
            for l in 0..p {
                let mut s = 0.0;
                for (&k, &v) in ks.iter().zip(vs) {
                    s += v * ws.jac_basis[(k * mm + c) * p + l];
                }
                ws.jac_state[(r * mm + c) * p + l] = s;
            }
        }
        for r in 0..d.m {
            let (ks, vs) = nlp.l_h.row(r);
            for l in 0..p {
                let mut s = 0.0;
                for (&k, &v) in ks.iter().zip(vs) {
                    s += v * ws.jac_basis[(k * mm + c) * p + l];
                }
                hc[r * p + l] = s;
            }
        }
        let js = &ws.jac_state;
        let g = |r: usize, l: usize| js[(r * mm + c) * p + l];
        let h = |r: usize, l: usize| hc[(r - nx) * p + l];
        out.push(BlockJacobian {
            gx: fill_values(&plan.gx, g),
            gu: fill_values(&plan.gu, g),
            hx: fill_values(&plan.hx, h),
            hu: fill_values(&plan.hu, h),
        });
    }
    Ok(out)
}

/// Lagrangian Hessian blocks of `w·fᵢ + yᵢᵀgᵢ + zᵢᵀhᵢ` for every block in `group`.
#[allow(clippy::too_many_arguments)]
pub fn batch_hessian<K: BasisKernel>(
    nlp: &BlockNlp<K>,
    x: &DenseMatrix,
    u: &[f64],
    y: &DenseMatrix,
    z: &DenseMatrix,
    w: f64,
    group: Range<usize>,
    plan: &DerivativePlan,
    ws: &mut DualWorkspace,
) -> Result<Vec<BlockHessian>, AdError> {
    let d = nlp.dims();
    check_group(&group, d.n_blocks)?;
    let mm = group.len();
    if ws.m != mm || ws.p_jac != plan.p_jac() || ws.p_hess != plan.p_hess() {
        *ws = DualWorkspace::for_plan(plan, mm);
    }
    let p = plan.p_hess();
    let (nx, nd, nb) = (d.n_x, d.n_d(), d.n_b);
    let mut xd = vec![Dual::<LANES>::constant(0.0); nx];
    let mut ud = vec![Dual::<LANES>::constant(0.0); d.n_u];
    let mut od = vec![Dual::<LANES>::constant(0.0); nb];
    let mut gxd = vec![Dual::<LANES>::constant(0.0); nx];
    let mut gud = vec![Dual::<LANES>::constant(0.0); d.n_u];
    let mut out = Vec::with_capacity(mm);
    for (c, b) in group.enumerate() {
        let omega = nlp.basis_weights(y.col(b), z.col(b), w);
        // Multipliers enter as duals with zero tangent; ω̲ inherits L_gᵀ Ẏ.
        for r in 0..nx {
            for l in 0..p {
                ws.hess_mult[(r * mm + c) * p + l] = 0.0;
            }
        }
        for k in 0..nb {
            let (rs, vs) = plan.l_gt.row(k);
            for l in 0..p {
                let mut s = 0.0;
                for (&r, &v) in rs.iter().zip(vs) {
                    s += v * ws.hess_mult[(r * mm + c) * p + l];
                }
                ws.hess_basis[(k * mm + c) * p + l] = s;
            }
        }
        for e in 0..nd {
            for l in 0..p {
                ws.hess_seed[(e * mm + c) * p + l] = plan.hess_coloring.seed(e, l);
            }
        }
        for c0 in (0..p).step_by(LANES) {
            for j in 0..nx {
                xd[j] = Dual::new(x[(j, b)], lanes(&ws.hess_seed, (j * mm + c) * p, c0, p));
                gxd[j] = Dual::constant(0.0);
            }
            for j in 0..d.n_u {
                ud[j] = Dual::new(u[j], lanes(&ws.hess_seed, ((nx + j) * mm + c) * p, c0, p));
                gud[j] = Dual::constant(0.0);
            }
            for k in 0..nb {
                od[k] = Dual::new(omega[k], lanes(&ws.hess_basis, (k * mm + c) * p, c0, p));
            }
            nlp.kernel.adjoint(b, &xd, &ud, &od, &mut gxd, &mut gud);
            let nl = LANES.min(p - c0);
            for (j, v) in gxd.iter().enumerate() {
                if !v.is_finite() {
                    return Err(AdError::NonFinite { block: b });
                }
                for l in 0..nl {
                    ws.hess_state[(j * mm + c) * p + c0 + l] = v.eps[l];
                }
            }
            for (j, v) in gud.iter().enumerate() {
                if !v.is_finite() {
                    return Err(AdError::NonFinite { block: b });
                }
                for l in 0..nl {
                    ws.hess_seed[((nx + j) * mm + c) * p + c0 + l] = v.eps[l];
                }
            }
        }
        let (hs, hu) = (&ws.hess_state, &ws.hess_seed);
        let bmat = |r: usize, l: usize| {
            if r < nx {
                hs[(r * mm + c) * p + l]
            } else {
                hu[(r * mm + c) * p + l]
            }
        };
        out.push(BlockHessian {
            wxx: fill_values(&plan.wxx, bmat),
            wxu: fill_values(&plan.wxu, bmat),
            wuu: fill_values(&plan.wuu, bmat),
        });
    }
    Ok(out)
}

/// Central-difference step relative to `max(1, |v|)`, about `ε^{1/3}`.
pub const FD_STEP: f64 = 6e-6;

/// Largest relative discrepancies between derivatives and central
/// differences, `|a − b| / max(1, |b|)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DerivativeCheck {
    pub jacobian: f64,
    pub gradient: f64,
    pub hessian: f64,
    pub worst: Option<WorstEntry>,
}

/// Location of the largest discrepancy. Rows and columns index
/// `(g, h)` and `(x, u)` respectively; `row` is 0 for the gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorstEntry {
    pub kind: &'static str,
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub ad: f64,
    pub fd: f64,
    pub error: f64,
}

impl DerivativeCheck {
    fn record(
        &mut self,
        kind: &'static str,
        block: usize,
        row: usize,
        col: usize,
        ad: f64,
        fd: f64,
    ) {
        let error = (ad - fd).abs() / fd.abs().max(1.0);
        let slot = match kind {
            "jacobian" => &mut self.jacobian,
            "gradient" => &mut self.gradient,
            _ => &mut self.hessian,
        };
        *slot = slot.max(error);
        if self.worst.is_none_or(|w| error > w.error) {
            self.worst = Some(WorstEntry {
                kind,
                block,
                row,
                col,
                ad,
                fd,
                error,
            });
        }
    }
}

impl DerivativeCheck {
    pub fn max_error(&self) -> f64 {
        self.jacobian.max(self.gradient).max(self.hessian)
    }
}

/// Compares AD Jacobians against differences of the function values, the
/// adjoint against differences of `ωᵀψ`, and AD Hessians against differences
/// of the adjoint, for the given blocks.
#[allow(clippy::too_many_arguments)]
pub fn check_derivatives<K: BasisKernel>(
    nlp: &BlockNlp<K>,
    x: &DenseMatrix,
    u: &[f64],
    y: &DenseMatrix,
    z: &DenseMatrix,
    blocks: Range<usize>,
    step: f64,
) -> Result<DerivativeCheck, AdError> {
    let d = nlp.dims();
    let plan = DerivativePlan::new(nlp)?;
    let mut ws = DualWorkspace::for_plan(&plan, blocks.len());
    let jac = batch_jacobian(nlp, x, u, blocks.clone(), &plan, &mut ws)?;
    let hes = batch_hessian(nlp, x, u, y, z, 1.0, blocks.clone(), &plan, &mut ws)?;
    let mut out = DerivativeCheck::default();
    let nd = d.n_d();
    for (c, b) in blocks.enumerate() {
        let base: Vec<f64> = x.col(b).iter().chain(u).copied().collect();
        let split = |v: &[f64]| (v[..d.n_x].to_vec(), v[d.n_x..].to_vec());
        let eval = |v: &[f64]| {
            let (xv, uv) = split(v);
            let (_, g, h) = nlp.eval_block(b, &xv, &uv);
            g.into_iter().chain(h).collect::<Vec<f64>>()
        };
        let omega = nlp.basis_weights(y.col(b), z.col(b), 1.0);
        let phi = |v: &[f64]| {
            let (xv, uv) = split(v);
            let mut psi = vec![0.0; d.n_b];
            nlp.kernel.eval(b, &xv, &uv, &mut psi);
            psi.iter().zip(&omega).map(|(a, w)| a * w).sum::<f64>()
        };
        let grad = |v: &[f64]| {
            let (xv, uv) = split(v);
            let (gx, gu) = nlp.lagrangian_gradient_block(b, &xv, &uv, y.col(b), z.col(b), 1.0);
            gx.into_iter().chain(gu).collect::<Vec<f64>>()
        };
        let g0 = grad(&base);
        let jd = {
            let j = &jac[c];
            let mut m = DenseMatrix::zeros(d.n_x + d.m, nd);
            for (blk, ro, co) in [
                (&j.gx, 0, 0),
                (&j.gu, 0, d.n_x),
                (&j.hx, d.n_x, 0),
                (&j.hu, d.n_x, d.n_x),
            ] {
                for (r, cc, v) in blk.entries() {
                    m[(r + ro, cc + co)] = v;
                }
            }
            m
        };
        let hd = {
            let h = &hes[c];
            let mut m = DenseMatrix::zeros(nd, nd);
            for (r, cc, v) in h.wxx.entries() {
                m[(r, cc)] = v;
            }
            for (r, cc, v) in h.wxu.entries() {
                m[(r, cc + d.n_x)] = v;
                m[(cc + d.n_x, r)] = v;
            }
            for (r, cc, v) in h.wuu.entries() {
                m[(r + d.n_x, cc + d.n_x)] = v;
            }
            m
        };
        for e in 0..nd {
            let h = step * base[e].abs().max(1.0);
            let mut vp = base.clone();
            let mut vm = base.clone();
            vp[e] += h;
            vm[e] -= h;
            let (fp, fm) = (eval(&vp), eval(&vm));
            for r in 0..fp.len() {
                out.record("jacobian", b, r, e, jd[(r, e)], (fp[r] - fm[r]) / (2.0 * h));
            }
            out.record(
                "gradient",
                b,
                0,
                e,
                g0[e],
                (phi(&vp) - phi(&vm)) / (2.0 * h),
            );
            let (gp, gm) = (grad(&vp), grad(&vm));
            for r in 0..nd {
                out.record("hessian", b, r, e, hd[(r, e)], (gp[r] - gm[r]) / (2.0 * h));
            }
        }
    }
    Ok(out)
}
