//! Primal-dual interior-point method with a monotone barrier update and an
//! ℓ1-penalty merit line search. Newton systems go through [`crate::kkt`].

mod bounds;

pub use bounds::{fraction_to_boundary, BoundSet};

use std::ops::Range;
use std::sync::Mutex;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::autodiff::{
    batch_eval, batch_gradient, batch_hessian, batch_jacobian, AdError, BlockHessian,
    BlockJacobian, DerivativePlan, DualWorkspace,
};
use crate::executor::{partition, tree_sum, tree_sum_scalar, ExecError, Executor, Partition};
use crate::kkt::{
    AugmentedSystem, BlockSystem, BlockVector, KktSolver, ReductionStats, SolverOptions, Strategy,
};
use crate::linalg::{norm1, norm_inf, DenseMatrix};
use crate::model::{
    kkt_error_with_bounds, BasisKernel, BlockNlp, Bounds, Dims, Iterate, KktResiduals, ModelError,
};

use bounds::multiplier_max_step;

#[derive(Debug, Error)]
pub enum IpmError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("derivative evaluation: {0}")]
    Derivative(#[from] AdError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("invalid option: {0}")]
    Options(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Status {
    Optimal,
    MaxIter,
    Infeasible,
    LinearSolveFailure,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Optimal => "Optimal",
            Status::MaxIter => "MaxIter",
            Status::Infeasible => "Infeasible",
            Status::LinearSolveFailure => "LinearSolveFailure",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IpmOptions {
    pub tol: f64,
    pub mu_init: f64,
    pub kappa_mu: f64,
    pub theta_mu: f64,
    /// Barrier subproblem tolerance factor.
    pub kappa_eps: f64,
    pub tau: f64,
    pub max_iter: usize,
    pub strategy: Strategy,
    /// Group count for the executor.
    pub groups: usize,
    pub kkt: SolverOptions,
    pub kappa_sigma: f64,
    pub armijo: f64,
    pub alpha_min: f64,
    pub bound_frac: f64,
    pub bound_push: f64,
    pub bound_relax: f64,
    pub scale_objective: bool,
    /// Number of leading steps whose `p_d` is kept in the result.
    pub record_steps: usize,
    /// Also measure each step against the assembled sparse matrix.
    pub verify_steps: bool,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            mu_init: 0.1,
            kappa_mu: 0.2,
            theta_mu: 1.5,
            kappa_eps: 10.0,
            tau: 0.995,
            max_iter: 300,
            strategy: Strategy::Reduced,
            groups: 1,
            kkt: SolverOptions::default(),
            kappa_sigma: 1e10,
            armijo: 1e-4,
            alpha_min: 1e-12,
            bound_frac: 0.1,
            bound_push: 1e-2,
            bound_relax: 1e-8,
            scale_objective: true,
            record_steps: 0,
            verify_steps: false,
        }
    }
}

impl IpmOptions {
    pub fn validate(&self) -> Result<(), IpmError> {
        let bad = |m: &str| Err(IpmError::Options(m.to_string()));
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("tau must lie in (0, 1)");
        }
        if !(self.mu_init > 0.0) {
            return bad("mu_init must be positive");
        }
        if self.groups == 0 {
            return bad("groups must be positive");
        }
        if self.kkt.n_batch == 0 {
            return bad("n_batch must be positive");
        }
        Ok(())
    }
}

/// Monotone barrier update `max(tol/10, min(κ_μ μ, μ^θ_μ))`.
pub fn update_mu(mu: f64, opts: &IpmOptions) -> f64 {
    (opts.tol / 10.0).max((opts.kappa_mu * mu).min(mu.powf(opts.theta_mu)))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationLog {
    pub iter: usize,
    pub objective: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub mu: f64,
    pub alpha_primal: f64,
    pub alpha_dual: f64,
    pub delta_w: f64,
    pub strategy: String,
    /// `‖A p + r‖∞ / max(1, ‖r‖∞)` of the step.
    pub kkt_residual: f64,
    /// Same residual from the assembled matrix without `δ_c`, when verifying.
    pub assembled_residual: Option<f64>,
    /// Merit at the iterate and at the accepted trial point (same μ and ρ).
    pub merit: f64,
    pub merit_trial: f64,
    pub ad_s: f64,
    pub kkt_s: f64,
    pub other_s: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Timings {
    pub ad_s: f64,
    pub kkt_s: f64,
    pub total_s: f64,
}

#[derive(Clone, Debug)]
pub struct IpmResult {
    /// Final iterate with multipliers of the unscaled problem.
    pub iterate: Iterate,
    pub status: Status,
    pub objective: f64,
    pub iterations: usize,
    pub logs: Vec<IterationLog>,
    pub timings: Timings,
    /// Scaled KKT error at μ = 0 of the weighted problem, against the relaxed bounds.
    pub kkt_error: f64,
    pub obj_weight: f64,
    /// `(p_x₁, …, p_x_N, p_u)` of the first `record_steps` steps.
    pub steps: Vec<Vec<f64>>,
    pub reduction: Vec<ReductionStats>,
}

/// Values and derivatives of one block at the current iterate.
struct BlockEval {
    f: f64,
    g: Vec<f64>,
    h: Vec<f64>,
    /// ∇ of `w f + yᵀg + zᵀh`
    glx: Vec<f64>,
    glu: Vec<f64>,
    /// ∇ of `w f`
    gfx: Vec<f64>,
    gfu: Vec<f64>,
    jac: BlockJacobian,
    hes: BlockHessian,
}

struct Problem<'a, K> {
    nlp: &'a BlockNlp<K>,
    d: Dims,
    exec: &'a Executor,
    part: Partition,
    plan: DerivativePlan,
    ws: Vec<Mutex<DualWorkspace>>,
    xb: BoundSet,
    ub: BoundSet,
    sb: BoundSet,
}

impl<K: BasisKernel> Problem<'_, K> {
    /// Residuals measured against the relaxed bounds the iterates live in.
    fn residuals(&self, it: &Iterate, mu: f64, w: f64) -> KktResiduals {
        let b = |s: &BoundSet| Bounds {
            lower: s.lower.clone(),
            upper: s.upper.clone(),
        };
        kkt_error_with_bounds(
            self.nlp,
            it,
            mu,
            w,
            [&b(&self.xb), &b(&self.ub), &b(&self.sb)],
        )
    }

    fn evaluate(&self, it: &Iterate, w: f64) -> Result<Vec<BlockEval>, AdError> {
        let res = self.exec.map_groups(&self.part, |g, r: Range<usize>| {
            let mut ws = self.ws[g].lock().expect("workspace lock");
            let nlp = self.nlp;
            let vals = batch_eval(nlp, &it.x, &it.u, r.clone())?;
            let (glx, glu) =
                batch_gradient(nlp, &it.x, &it.u, Some(&it.y), Some(&it.z), w, r.clone())?;
            let (gfx, gfu) = batch_gradient(nlp, &it.x, &it.u, None, None, w, r.clone())?;
            let jac = batch_jacobian(nlp, &it.x, &it.u, r.clone(), &self.plan, &mut ws)?;
            let hes = batch_hessian(
                nlp,
                &it.x,
                &it.u,
                &it.y,
                &it.z,
                w,
                r.clone(),
                &self.plan,
                &mut ws,
            )?;
            Ok(jac
                .into_iter()
                .zip(hes)
                .enumerate()
                .map(|(c, (jac, hes))| BlockEval {
                    f: vals.f[c],
                    g: vals.g.col(c).to_vec(),
                    h: vals.h.col(c).to_vec(),
                    glx: glx.col(c).to_vec(),
                    glu: glu.col(c).to_vec(),
                    gfx: gfx.col(c).to_vec(),
                    gfu: gfu.col(c).to_vec(),
                    jac,
                    hes,
                })
                .collect::<Vec<_>>())
        })?;
        Ok(res.values.into_iter().flatten().collect())
    }

    /// `(Σ fᵢ, g, h)` at a trial point.
    fn values(
        &self,
        x: &DenseMatrix,
        u: &[f64],
    ) -> Result<(Vec<f64>, DenseMatrix, DenseMatrix), AdError> {
        let res = self
            .exec
            .map_groups(&self.part, |_, r| batch_eval(self.nlp, x, u, r))?;
        let n = self.d.n_blocks;
        let mut f = Vec::with_capacity(n);
        let mut g = DenseMatrix::zeros(self.d.n_x, n);
        let mut h = DenseMatrix::zeros(self.d.m, n);
        for (v, r) in res.values.iter().zip(self.part.ranges()) {
            f.extend_from_slice(&v.f);
            for (c, i) in r.clone().enumerate() {
                g.col_mut(i).copy_from_slice(v.g.col(c));
                h.col_mut(i).copy_from_slice(v.h.col(c));
            }
        }
        Ok((f, g, h))
    }

    fn barrier(&self, x: &DenseMatrix, u: &[f64], s: &DenseMatrix, mu: f64) -> f64 {
        let blocks = tree_sum_scalar(0..self.d.n_blocks, |i| {
            self.xb.barrier(x.col(i), mu) + self.sb.barrier(s.col(i), mu)
        });
        blocks + self.ub.barrier(u, mu)
    }

    fn is_interior(&self, it: &Iterate) -> bool {
        (0..self.d.n_blocks)
            .all(|i| self.xb.is_interior(it.x.col(i)) && self.sb.is_interior(it.s.col(i)))
            && self.ub.is_interior(&it.u)
    }
}

fn constraint_norm1(g: &DenseMatrix, h: &DenseMatrix, s: &DenseMatrix) -> f64 {
    tree_sum_scalar(0..g.ncols(), |i| {
        norm1(g.col(i))
            + h.col(i)
                .iter()
                .zip(s.col(i))
                .map(|(a, b)| (a + b).abs())
                .sum::<f64>()
    })
}

fn unscaled(it: &Iterate, w: f64) -> Iterate {
    let mut out = it.clone();
    let inv = 1.0 / w;
    for m in [
        &mut out.y,
        &mut out.z,
        &mut out.zx_l,
        &mut out.zx_u,
        &mut out.zs_l,
        &mut out.zs_u,
    ] {
        m.scale(inv);
    }
    out.zu_l
        .iter_mut()
        .chain(out.zu_u.iter_mut())
        .for_each(|v| *v *= inv);
    out
}

/// Builds the Newton system of the barrier problem at `it` from evaluated blocks.
fn build_system(
    evals: &[BlockEval],
    it: &Iterate,
    mu: f64,
    d: &Dims,
    xb: &BoundSet,
    ub: &BoundSet,
    sb: &BoundSet,
) -> AugmentedSystem {
    let n = d.n_blocks;
    let mut rhs = BlockVector::zeros(d.n_x, d.n_u, d.m, n);
    let mut blocks = Vec::with_capacity(n);
    for (i, e) in evals.iter().enumerate() {
        let (x, s) = (it.x.col(i), it.s.col(i));
        let r1 = rhs.x.col_mut(i);
        r1.copy_from_slice(&e.glx);
        xb.add_barrier_gradient(x, mu, r1);
        let r2 = rhs.s.col_mut(i);
        r2.copy_from_slice(it.z.col(i));
        sb.add_barrier_gradient(s, mu, r2);
        rhs.y.col_mut(i).copy_from_slice(&e.g);
        for (j, v) in rhs.z.col_mut(i).iter_mut().enumerate() {
            *v = e.h[j] + s[j];
        }
        blocks.push(BlockSystem {
            wxx: e.hes.wxx.clone(),
            wxu: e.hes.wxu.clone(),
            wuu: e.hes.wuu.clone(),
            gx: e.jac.gx.clone(),
            gu: e.jac.gu.clone(),
            hx: e.jac.hx.clone(),
            hu: e.jac.hu.clone(),
            sigma_x: xb.sigma(x, it.zx_l.col(i), it.zx_u.col(i)),
            sigma_s: sb.sigma(s, it.zs_l.col(i), it.zs_u.col(i)),
        });
    }
    rhs.u = tree_sum(0..n, d.n_u, |i| evals[i].glu.clone());
    ub.add_barrier_gradient(&it.u, mu, &mut rhs.u);
    AugmentedSystem {
        n_x: d.n_x,
        n_u: d.n_u,
        m: d.m,
        blocks,
        sigma_u: ub.sigma(&it.u, &it.zu_l, &it.zu_u),
        rhs,
        delta_w: 0.0,
        delta_c: 0.0,
    }
}

/// Newton system of the barrier problem at `it` with unit objective weight
/// and unrelaxed bounds.
pub fn assemble_augmented<K: BasisKernel>(
    nlp: &BlockNlp<K>,
    it: &Iterate,
    mu: f64,
) -> Result<AugmentedSystem, IpmError> {
    let d = nlp.validate()?;
    let exec = Executor::new(1, Default::default())?;
    let p = Problem {
        nlp,
        d,
        exec: &exec,
        part: partition(d.n_blocks, 1)?,
        plan: DerivativePlan::new(nlp)?,
        ws: Vec::new(),
        xb: BoundSet::new(&nlp.x_bounds, 0.0),
        ub: BoundSet::new(&nlp.u_bounds, 0.0),
        sb: BoundSet::new(&nlp.s_bounds, 0.0),
    };
    let p = Problem {
        ws: vec![Mutex::new(DualWorkspace::for_plan(&p.plan, d.n_blocks))],
        ..p
    };
    if !p.is_interior(it) {
        return Err(IpmError::Options("iterate is not strictly interior".into()));
    }
    let evals = p.evaluate(it, 1.0)?;
    Ok(build_system(&evals, it, mu, &d, &p.xb, &p.ub, &p.sb))
}

/// Runs the interior-point method from the model's starting point.
pub fn solve<K: BasisKernel>(
    nlp: &BlockNlp<K>,
    exec: &Executor,
    opts: &IpmOptions,
) -> Result<IpmResult, IpmError> {
    let t0 = Instant::now();
    let d = nlp.validate()?;
    opts.validate()?;
    let part = partition(d.n_blocks, opts.groups)?;
    let plan = DerivativePlan::new(nlp)?;
    let ws = part
        .ranges()
        .iter()
        .map(|r| Mutex::new(DualWorkspace::for_plan(&plan, r.len())))
        .collect();
    let p = Problem {
        nlp,
        d,
        exec,
        part,
        plan,
        ws,
        xb: BoundSet::new(&nlp.x_bounds, opts.bound_relax),
        ub: BoundSet::new(&nlp.u_bounds, opts.bound_relax),
        sb: BoundSet::new(&nlp.s_bounds, opts.bound_relax),
    };
    let n = d.n_blocks;
    let mut ad_s = 0.0;
    let mut kkt_s = 0.0;

    // starting point
    let mut it = Iterate::zeros(&d);
    it.x = nlp.x0.clone();
    it.u = nlp.u0.clone();
    for i in 0..n {
        p.xb.project(it.x.col_mut(i), opts.bound_frac, opts.bound_push);
    }
    p.ub.project(&mut it.u, opts.bound_frac, opts.bound_push);
    let ta = Instant::now();
    let (_, _, h0) = p.values(&it.x, &it.u)?;
    let (gfx, gfu) = {
        let r = exec.map_groups(&p.part, |_, r| {
            batch_gradient(nlp, &it.x, &it.u, None, None, 1.0, r)
        })?;
        let gx = r.values.iter().map(|v| v.0.max_abs()).fold(0.0, f64::max);
        let gu: Vec<Vec<f64>> = r
            .values
            .iter()
            .flat_map(|v| {
                (0..v.1.ncols())
                    .map(|c| v.1.col(c).to_vec())
                    .collect::<Vec<_>>()
            })
            .collect();
        (gx, norm_inf(&tree_sum(0..n, d.n_u, |i| gu[i].clone())))
    };
    ad_s += ta.elapsed().as_secs_f64();
    let gmax = gfx.max(gfu);
    let w = if opts.scale_objective && gmax > 100.0 {
        100.0 / gmax
    } else {
        1.0
    };
    for i in 0..n {
        let s = it.s.col_mut(i);
        for (j, v) in s.iter_mut().enumerate() {
            *v = -h0[(j, i)];
        }
        p.sb.project(s, opts.bound_frac, opts.bound_push);
    }
    let mut mu = opts.mu_init;
    for i in 0..n {
        p.xb.central_multipliers(it.x.col(i), mu, it.zx_l.col_mut(i), it.zx_u.col_mut(i));
        p.sb.central_multipliers(it.s.col(i), mu, it.zs_l.col_mut(i), it.zs_u.col_mut(i));
    }
    p.ub.central_multipliers(&it.u, mu, &mut it.zu_l, &mut it.zu_u);

    let mut solver = KktSolver::new(opts.strategy, opts.kkt);
    let mut logs = Vec::new();
    let mut steps = Vec::new();
    let mut reduction = Vec::new();
    let mut rho = 0.0f64;
    let mut status = Status::MaxIter;
    let mut iter = 0;

    loop {
        let t_iter = Instant::now();
        let ta = Instant::now();
        let evals = p.evaluate(&it, w)?;
        let mut t_ad = ta.elapsed().as_secs_f64();

        let err0 = p.residuals(&it, 0.0, w);
        if err0.scaled_error() <= opts.tol {
            status = Status::Optimal;
            ad_s += t_ad;
            break;
        }
        while mu > opts.tol / 10.0 && p.residuals(&it, mu, w).scaled_error() <= opts.kappa_eps * mu
        {
            mu = update_mu(mu, opts);
        }
        if iter >= opts.max_iter {
            ad_s += t_ad;
            break;
        }

        let mut sys = build_system(&evals, &it, mu, &d, &p.xb, &p.ub, &p.sb);
        let tk = Instant::now();
        let solved = solver.solve(&mut sys, exec, &p.part, mu);
        let t_kkt = tk.elapsed().as_secs_f64();
        kkt_s += t_kkt;
        let (step, info) = match solved {
            Ok(s) => s,
            Err(e) => {
                log::warn!("linear solve failed at iteration {iter}: {e}");
                status = Status::LinearSolveFailure;
                ad_s += t_ad;
                break;
            }
        };
        if let Some(b) = info.fallback_block {
            log::info!(
                "iteration {iter}: singular state Jacobian in block {b}, used augmented system"
            );
        }
        if !info.reduction.is_empty() {
            reduction = info.reduction.clone();
        }
        let assembled_residual = opts.verify_steps.then(|| {
            let exact = AugmentedSystem {
                delta_c: 0.0,
                ..sys.clone()
            };
            let mut r = exact.assemble().matvec(&step.to_vec());
            crate::linalg::axpy(1.0, &sys.rhs.to_vec(), &mut r);
            norm_inf(&r) / sys.rhs.norm_inf().max(1.0)
        });
        if steps.len() < opts.record_steps {
            steps.push([step.x.as_slice(), &step.u].concat());
        }

        // bound multiplier steps and step limits
        let mut pzx_l = DenseMatrix::zeros(d.n_x, n);
        let mut pzx_u = DenseMatrix::zeros(d.n_x, n);
        let mut pzs_l = DenseMatrix::zeros(d.m, n);
        let mut pzs_u = DenseMatrix::zeros(d.m, n);
        let mut alpha_p = p.ub.max_step(&it.u, &step.u, opts.tau);
        let (pzu_l, pzu_u) =
            p.ub.multiplier_steps(&it.u, &step.u, &it.zu_l, &it.zu_u, mu);
        let mut alpha_d =
            multiplier_max_step(&it.zu_l, &pzu_l, |j| p.ub.lower[j].is_finite(), opts.tau).min(
                multiplier_max_step(&it.zu_u, &pzu_u, |j| p.ub.upper[j].is_finite(), opts.tau),
            );
        for i in 0..n {
            let (x, s) = (it.x.col(i), it.s.col(i));
            alpha_p = alpha_p
                .min(p.xb.max_step(x, step.x.col(i), opts.tau))
                .min(p.sb.max_step(s, step.s.col(i), opts.tau));
            let (a, b) =
                p.xb.multiplier_steps(x, step.x.col(i), it.zx_l.col(i), it.zx_u.col(i), mu);
            pzx_l.col_mut(i).copy_from_slice(&a);
            pzx_u.col_mut(i).copy_from_slice(&b);
            let (a, b) =
                p.sb.multiplier_steps(s, step.s.col(i), it.zs_l.col(i), it.zs_u.col(i), mu);
            pzs_l.col_mut(i).copy_from_slice(&a);
            pzs_u.col_mut(i).copy_from_slice(&b);
            alpha_d = alpha_d
                .min(multiplier_max_step(
                    it.zx_l.col(i),
                    pzx_l.col(i),
                    |j| p.xb.lower[j].is_finite(),
                    opts.tau,
                ))
                .min(multiplier_max_step(
                    it.zx_u.col(i),
                    pzx_u.col(i),
                    |j| p.xb.upper[j].is_finite(),
                    opts.tau,
                ))
                .min(multiplier_max_step(
                    it.zs_l.col(i),
                    pzs_l.col(i),
                    |j| p.sb.lower[j].is_finite(),
                    opts.tau,
                ))
                .min(multiplier_max_step(
                    it.zs_u.col(i),
                    pzs_u.col(i),
                    |j| p.sb.upper[j].is_finite(),
                    opts.tau,
                ));
        }

        // merit and penalty
        let mut g0 = DenseMatrix::zeros(d.n_x, n);
        let mut h0 = DenseMatrix::zeros(d.m, n);
        for (i, e) in evals.iter().enumerate() {
            g0.col_mut(i).copy_from_slice(&e.g);
            h0.col_mut(i).copy_from_slice(&e.h);
        }
        let f0 = tree_sum_scalar(0..n, |i| evals[i].f);
        let c0 = constraint_norm1(&g0, &h0, &it.s);
        let dphi_b = {
            let blocks = tree_sum_scalar(0..n, |i| {
                let e = &evals[i];
                let mut gx = e.gfx.clone();
                p.xb.add_barrier_gradient(it.x.col(i), mu, &mut gx);
                let mut gs = vec![0.0; d.m];
                p.sb.add_barrier_gradient(it.s.col(i), mu, &mut gs);
                crate::linalg::dot(&gx, step.x.col(i)) + crate::linalg::dot(&gs, step.s.col(i))
            });
            let mut gu = tree_sum(0..n, d.n_u, |i| evals[i].gfu.clone());
            p.ub.add_barrier_gradient(&it.u, mu, &mut gu);
            blocks + crate::linalg::dot(&gu, &step.u)
        };
        if c0 > 0.0 {
            let curv = sys.primal_curvature(&step).max(0.0);
            let rho_req = (dphi_b + 0.5 * curv) / (0.9 * c0);
            if rho < rho_req {
                rho = rho_req.max(2.0 * rho);
            }
        }
        let phi0 = w * f0 + p.barrier(&it.x, &it.u, &it.s, mu) + rho * c0;
        let dphi = dphi_b - rho * c0;

        let ta = Instant::now();
        let mut alpha = alpha_p;
        let accepted = loop {
            if alpha < opts.alpha_min {
                break None;
            }
            let mut x = it.x.clone();
            crate::linalg::axpy(alpha, step.x.as_slice(), x.as_mut_slice());
            let mut u = it.u.clone();
            crate::linalg::axpy(alpha, &step.u, &mut u);
            let mut s = it.s.clone();
            crate::linalg::axpy(alpha, step.s.as_slice(), s.as_mut_slice());
            if let Ok((f, g, h)) = p.values(&x, &u) {
                let ft = tree_sum_scalar(0..n, |i| f[i]);
                let phi = w * ft + p.barrier(&x, &u, &s, mu) + rho * constraint_norm1(&g, &h, &s);
                if phi.is_finite()
                    && phi
                        <= phi0
                            + opts.armijo * alpha * dphi
                            + 10.0 * f64::EPSILON * phi0.abs().max(1.0)
                {
                    break Some((x, u, s, phi));
                }
            }
            alpha *= 0.5;
        };
        t_ad += ta.elapsed().as_secs_f64();
        ad_s += t_ad;
        let Some((x, u, s, phi_t)) = accepted else {
            log::warn!("step too small at iteration {iter}");
            status = Status::Infeasible;
            break;
        };
        it.x = x;
        it.u = u;
        it.s = s;
        crate::linalg::axpy(alpha, step.y.as_slice(), it.y.as_mut_slice());
        crate::linalg::axpy(alpha, step.z.as_slice(), it.z.as_mut_slice());
        for (z, pz) in [
            (&mut it.zx_l, &pzx_l),
            (&mut it.zx_u, &pzx_u),
            (&mut it.zs_l, &pzs_l),
            (&mut it.zs_u, &pzs_u),
        ] {
            crate::linalg::axpy(alpha_d, pz.as_slice(), z.as_mut_slice());
        }
        crate::linalg::axpy(alpha_d, &pzu_l, &mut it.zu_l);
        crate::linalg::axpy(alpha_d, &pzu_u, &mut it.zu_u);
        for i in 0..n {
            p.xb.safeguard(
                it.x.col(i),
                it.zx_l.col_mut(i),
                it.zx_u.col_mut(i),
                mu,
                opts.kappa_sigma,
            );
            p.sb.safeguard(
                it.s.col(i),
                it.zs_l.col_mut(i),
                it.zs_u.col_mut(i),
                mu,
                opts.kappa_sigma,
            );
        }
        p.ub.safeguard(&it.u, &mut it.zu_l, &mut it.zu_u, mu, opts.kappa_sigma);

        let total = t_iter.elapsed().as_secs_f64();
        logs.push(IterationLog {
            iter,
            objective: f0,
            primal_infeasibility: err0.primal_infeasibility,
            dual_infeasibility: err0.dual_infeasibility,
            mu,
            alpha_primal: alpha,
            alpha_dual: alpha_d,
            delta_w: info.delta_w,
            strategy: info.strategy.to_string(),
            kkt_residual: info.residual / sys.rhs.norm_inf().max(1.0),
            assembled_residual,
            merit: phi0,
            merit_trial: phi_t,
            ad_s: t_ad,
            kkt_s: t_kkt,
            other_s: (total - t_ad - t_kkt).max(0.0),
        });
        log::debug!(
            "it {iter:3} obj {:.8e} inf_pr {:.2e} inf_du {:.2e} mu {:.1e} a {:.2e} dw {:.1e}",
            f0,
            err0.primal_infeasibility,
            err0.dual_infeasibility,
            mu,
            alpha,
            info.delta_w
        );
        iter += 1;
    }

    let plain = unscaled(&it, w);
    let err = p.residuals(&it, 0.0, w).scaled_error();
    let objective = tree_sum_scalar(0..n, |i| nlp.eval_block(i, plain.x.col(i), &plain.u).0);
    Ok(IpmResult {
        iterate: plain,
        status,
        objective,
        iterations: iter,
        logs,
        timings: Timings {
            ad_s,
            kkt_s,
            total_s: t0.elapsed().as_secs_f64(),
        },
        kkt_error: err,
        obj_weight: w,
        steps,
        reduction,
    })
}
