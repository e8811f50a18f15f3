//! Factorization strategies with inertia correction.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::executor::{Executor, Partition};
use crate::linalg::{
    Cholesky, DenseMatrix, Inertia, LdlFactor, LdlOptions, LdlSymbolic, LinalgError, SparseMatrix,
};

use super::{
    condense, condense_rhs, expand_step, recover_group, reduce, reduce_rhs_group, AugmentedSystem,
    BlockVector, CondensedSystem, KktError, ReducedSystem, ReductionStats,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Sparse LDLᵀ of the full augmented system.
    Augmented,
    /// Sparse LDLᵀ after slack elimination.
    Condensed,
    /// Dense Cholesky of the reduced matrix in the shared variables.
    #[default]
    Reduced,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Augmented => "augmented",
            Strategy::Condensed => "condensed",
            Strategy::Reduced => "reduced",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "augmented" => Ok(Strategy::Augmented),
            "condensed" => Ok(Strategy::Condensed),
            "reduced" => Ok(Strategy::Reduced),
            other => Err(format!("unknown strategy '{other}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Column tile width of the reduction.
    pub n_batch: usize,
    pub delta_w_init: f64,
    pub delta_w_min: f64,
    pub delta_w_max: f64,
    pub kappa_minus: f64,
    pub kappa_plus: f64,
    pub kappa_plus_first: f64,
    /// `δ_c = delta_c_factor · μ^{1/4}` after a singular factorization.
    pub delta_c_factor: f64,
    pub refine_steps: usize,
    pub refine_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            n_batch: 64,
            delta_w_init: 1e-4,
            delta_w_min: 1e-20,
            delta_w_max: 1e40,
            kappa_minus: 1.0 / 3.0,
            kappa_plus: 8.0,
            kappa_plus_first: 100.0,
            delta_c_factor: 1e-8,
            refine_steps: 5,
            refine_tol: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveInfo {
    /// Strategy that produced the step (differs from the requested one after a fallback).
    pub strategy: Strategy,
    pub delta_w: f64,
    pub delta_c: f64,
    /// Factorizations rejected for wrong inertia.
    pub corrections: usize,
    /// Block whose singular `G_x` forced the augmented fallback.
    pub fallback_block: Option<usize>,
    pub refinement_steps: usize,
    /// `‖A p + r‖∞` of the returned step.
    pub residual: f64,
    pub reduction: Vec<ReductionStats>,
}

enum Factored {
    Augmented {
        f: LdlFactor,
    },
    Condensed {
        f: LdlFactor,
    },
    Reduced {
        cs: CondensedSystem,
        red: ReducedSystem,
        chol: Cholesky,
    },
}

enum Trial {
    Ok(Box<Factored>),
    WrongInertia,
    Singular,
}

struct SymbolicCache {
    indptr: Vec<usize>,
    indices: Vec<usize>,
    sym: LdlSymbolic,
}

impl SymbolicCache {
    fn get(
        slot: &mut Option<SymbolicCache>,
        a: &SparseMatrix,
        delayed: &[bool],
    ) -> Result<LdlSymbolic, KktError> {
        if let Some(c) = slot.as_ref() {
            if c.indptr == a.indptr() && c.indices == a.indices() {
                return Ok(c.sym.clone());
            }
        }
        let sym = LdlSymbolic::analyze_delayed(a, delayed)?;
        *slot = Some(SymbolicCache {
            indptr: a.indptr().to_vec(),
            indices: a.indices().to_vec(),
            sym: sym.clone(),
        });
        Ok(sym)
    }
}

/// Solves successive Newton systems, remembering the last primal
/// regularization and the symbolic analyses.
pub struct KktSolver {
    pub strategy: Strategy,
    pub opts: SolverOptions,
    delta_w_last: f64,
    aug_symbolic: Option<SymbolicCache>,
    cond_symbolic: Option<SymbolicCache>,
}

impl KktSolver {
    pub fn new(strategy: Strategy, opts: SolverOptions) -> Self {
        Self {
            strategy,
            opts,
            delta_w_last: 0.0,
            aug_symbolic: None,
            cond_symbolic: None,
        }
    }

    pub fn delta_w_last(&self) -> f64 {
        self.delta_w_last
    }

    /// Solves `A p = −r` for `sys.rhs`, adjusting `sys.delta_w` and
    /// `sys.delta_c` until the factorization has the required inertia.
    pub fn solve(
        &mut self,
        sys: &mut AugmentedSystem,
        exec: &Executor,
        part: &Partition,
        mu: f64,
    ) -> Result<(BlockVector, SolveInfo), KktError> {
        sys.validate()?;
        let o = self.opts;
        sys.delta_w = 0.0;
        sys.delta_c = 0.0;
        let mut strategy = self.strategy;
        let mut fallback_block = None;
        let mut corrections = 0;
        let fac = loop {
            let trial = match self.try_factor(strategy, sys, exec, part) {
                Err(KktError::SingularBlock { block }) if strategy == Strategy::Reduced => {
                    log::debug!("singular state block {block}, falling back to augmented");
                    fallback_block = Some(block);
                    strategy = Strategy::Augmented;
                    continue;
                }
                other => other?,
            };
            match trial {
                Trial::Ok(f) => break f,
                Trial::Singular if sys.delta_c == 0.0 => {
                    sys.delta_c = o.delta_c_factor * mu.max(0.0).powf(0.25);
                    continue;
                }
                Trial::Singular | Trial::WrongInertia => {}
            }
            corrections += 1;
            sys.delta_w = if sys.delta_w == 0.0 {
                if self.delta_w_last == 0.0 {
                    o.delta_w_init
                } else {
                    (o.kappa_minus * self.delta_w_last).max(o.delta_w_min)
                }
            } else if self.delta_w_last == 0.0 {
                o.kappa_plus_first * sys.delta_w
            } else {
                o.kappa_plus * sys.delta_w
            };
            if sys.delta_w > o.delta_w_max {
                return Err(KktError::InertiaCorrection {
                    delta_w: sys.delta_w,
                });
            }
        };
        if sys.delta_w > 0.0 {
            self.delta_w_last = sys.delta_w;
        }

        let p0 = solve_with(&fac, sys, &sys.rhs, exec, part)?;
        let rscale = sys.rhs.norm_inf().max(1.0);
        let mut refined = None;
        if sys.delta_c > 0.0 {
            // regularized pivots only: try to converge to the unperturbed system
            let (p, rnorm, steps) = refine(&fac, sys, p0.clone(), true, o, exec, part)?;
            if rnorm <= o.refine_tol * rscale {
                sys.delta_c = 0.0;
                refined = Some((p, rnorm, steps));
            }
        }
        let (p, rnorm, steps) = match refined {
            Some(r) => r,
            None => refine(&fac, sys, p0, false, o, exec, part)?,
        };
        if !p.is_finite() {
            return Err(LinalgError::NonFinite.into());
        }
        let reduction = match fac.as_ref() {
            Factored::Reduced { red, .. } => red.stats.clone(),
            _ => Vec::new(),
        };
        let info = SolveInfo {
            strategy,
            delta_w: sys.delta_w,
            delta_c: sys.delta_c,
            corrections,
            fallback_block,
            refinement_steps: steps,
            residual: rnorm,
            reduction,
        };
        Ok((p, info))
    }

    fn try_factor(
        &mut self,
        strategy: Strategy,
        sys: &AugmentedSystem,
        exec: &Executor,
        part: &Partition,
    ) -> Result<Trial, KktError> {
        match strategy {
            Strategy::Augmented => {
                let a = sys.assemble();
                let sym = SymbolicCache::get(&mut self.aug_symbolic, &a, &sys.dual_rows())?;
                let signs: Vec<i8> = sys
                    .dual_rows()
                    .iter()
                    .map(|&d| if d { -1 } else { 1 })
                    .collect();
                let f = LdlFactor::factor(&sym, &a, Some(&signs), LdlOptions::default())?;
                Ok(classify(
                    f.inertia(),
                    sys.expected_inertia(),
                    f.regularized_pivots(),
                    sys.delta_c,
                )
                .unwrap_or_else(|| Trial::Ok(Box::new(Factored::Augmented { f }))))
            }
            Strategy::Condensed => {
                let cs = condense(sys);
                let a = cs.assemble();
                let np = cs.n_primal();
                let delayed: Vec<bool> = (0..a.nrows()).map(|i| i >= np).collect();
                let sym = SymbolicCache::get(&mut self.cond_symbolic, &a, &delayed)?;
                let signs: Vec<i8> = delayed.iter().map(|&d| if d { -1 } else { 1 }).collect();
                let f = LdlFactor::factor(&sym, &a, Some(&signs), LdlOptions::default())?;
                let expected = Inertia {
                    positive: np,
                    negative: a.nrows() - np,
                    zero: 0,
                };
                Ok(
                    classify(f.inertia(), expected, f.regularized_pivots(), sys.delta_c)
                        .unwrap_or_else(|| Trial::Ok(Box::new(Factored::Condensed { f }))),
                )
            }
            Strategy::Reduced => {
                let cs = condense(sys);
                let red = reduce(&cs, exec, part, self.opts.n_batch)?;
                match Cholesky::factor(&red.khat) {
                    Ok(chol) => Ok(Trial::Ok(Box::new(Factored::Reduced { cs, red, chol }))),
                    Err(LinalgError::NotPositiveDefinite { .. }) => Ok(Trial::WrongInertia),
                    Err(e) => Err(e.into()),
                }
            }
        }
    }
}

/// Iterative refinement with the accepted factorization. With `exact`, the
/// residual drops the `δ_c` terms.
fn refine(
    fac: &Factored,
    sys: &AugmentedSystem,
    mut p: BlockVector,
    exact: bool,
    o: SolverOptions,
    exec: &Executor,
    part: &Partition,
) -> Result<(BlockVector, f64, usize), KktError> {
    let residual = |p: &BlockVector| {
        let mut r = sys.residual(p);
        if exact {
            crate::linalg::axpy(sys.delta_c, p.y.as_slice(), r.y.as_mut_slice());
            crate::linalg::axpy(sys.delta_c, p.z.as_slice(), r.z.as_mut_slice());
        }
        r
    };
    let rscale = sys.rhs.norm_inf().max(1.0);
    let mut res = residual(&p);
    let mut rnorm = res.norm_inf();
    let mut steps = 0;
    let max_steps = if exact {
        4 * o.refine_steps
    } else {
        o.refine_steps
    };
    while steps < max_steps && rnorm > o.refine_tol * rscale {
        let dp = solve_with(fac, sys, &res, exec, part)?;
        let mut cand = p.clone();
        cand.axpy(1.0, &dp);
        let cres = residual(&cand);
        let cnorm = cres.norm_inf();
        if !(cnorm < rnorm) {
            break;
        }
        p = cand;
        res = cres;
        rnorm = cnorm;
        steps += 1;
    }
    Ok((p, rnorm, steps))
}

fn classify(got: Inertia, want: Inertia, regularized: usize, delta_c: f64) -> Option<Trial> {
    if regularized > 0 && delta_c == 0.0 {
        Some(Trial::Singular)
    } else if got != want {
        Some(Trial::WrongInertia)
    } else {
        None
    }
}

/// Solution of `A p = −r` with an accepted factorization.
fn solve_with(
    fac: &Factored,
    sys: &AugmentedSystem,
    r: &BlockVector,
    exec: &Executor,
    part: &Partition,
) -> Result<BlockVector, KktError> {
    let (nx, nu, m, n) = (sys.n_x, sys.n_u, sys.m, sys.n_blocks());
    match fac {
        Factored::Augmented { f, .. } => {
            let mut b = r.to_vec();
            b.iter_mut().for_each(|v| *v = -*v);
            f.solve_in_place(&mut b);
            Ok(BlockVector::from_vec(nx, nu, m, n, &b))
        }
        Factored::Condensed { f, .. } => {
            let crhs = condense_rhs(sys, r);
            let mut b = crhs.to_vec();
            b.iter_mut().for_each(|v| *v = -*v);
            f.solve_in_place(&mut b);
            let px = DenseMatrix::from_col_major(nx, n, b[..n * nx].to_vec());
            let pu = b[n * nx..n * nx + nu].to_vec();
            let py = DenseMatrix::from_col_major(nx, n, b[n * nx + nu..].to_vec());
            Ok(expand_step(sys, r, px, pu, py))
        }
        Factored::Reduced { cs, red, chol } => {
            let crhs = condense_rhs(sys, r);
            let res = exec.map_groups(part, |g, _| {
                Ok::<_, KktError>(DenseMatrix::from_col_major(
                    nu,
                    1,
                    reduce_rhs_group(cs, &red.factors[g], &crhs),
                ))
            })?;
            let order = exec.arrival_order(&res.completion);
            let mut slots: Vec<Option<DenseMatrix>> = res.values.into_iter().map(Some).collect();
            let parts = order
                .into_iter()
                .map(|g| (g, slots[g].take().expect("group result")))
                .collect();
            let sum = exec
                .all_reduce(parts)
                .unwrap_or_else(|| DenseMatrix::zeros(nu, 1));
            let mut pu: Vec<f64> = sum
                .as_slice()
                .iter()
                .zip(&crhs.r2)
                .map(|(s, r2)| s - r2)
                .collect();
            chol.solve_in_place(&mut pu);
            let rec = exec.map_groups(part, |g, _| {
                Ok::<_, KktError>(recover_group(cs, &red.factors[g], &crhs, &pu))
            })?;
            let mut px = DenseMatrix::zeros(nx, n);
            let mut py = DenseMatrix::zeros(nx, n);
            for (gf, (x, y)) in red.factors.iter().zip(rec.values) {
                for (k, i) in gf.range.clone().enumerate() {
                    px.col_mut(i).copy_from_slice(x.col(k));
                    py.col_mut(i).copy_from_slice(y.col(k));
                }
            }
            Ok(expand_step(sys, r, px, pu, py))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::random_system;
    use super::*;
    use crate::executor::{partition, ReduceMode};
    use crate::linalg::{BunchKaufman, LuFactor};

    fn exec() -> Executor {
        Executor::new(2, ReduceMode::Deterministic).unwrap()
    }

    fn dense_solution(sys: &AugmentedSystem) -> Vec<f64> {
        let a = sys.assemble();
        let mut b = sys.rhs.to_vec();
        b.iter_mut().for_each(|v| *v = -*v);
        LuFactor::factor(&a).unwrap().solve(&b)
    }

    #[test]
    fn strategies_agree_on_convex_system() {
        let base = random_system(31, 4, 5, 3, 4);
        let part = partition(4, 2).unwrap();
        let mut steps = vec![];
        for st in [Strategy::Augmented, Strategy::Condensed, Strategy::Reduced] {
            let mut sys = base.clone();
            let mut solver = KktSolver::new(
                st,
                SolverOptions {
                    n_batch: 2,
                    ..Default::default()
                },
            );
            let (p, info) = solver.solve(&mut sys, &exec(), &part, 0.1).unwrap();
            assert_eq!(info.strategy, st);
            assert_eq!(info.corrections, 0);
            assert!(info.residual < 1e-10);
            steps.push((p.to_vec(), sys));
        }
        let want = dense_solution(&steps[0].1);
        for (k, (p, _)) in steps.iter().enumerate() {
            let scale = crate::linalg::norm_inf(&want);
            let err = p
                .iter()
                .zip(&want)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err <= 1e-9 * scale, "strategy {k}: {err:e} of {scale:e}");
        }
    }

    /// Negative curvature on the null space forces a positive δ_w; the
    /// corrected matrix must have the expected inertia.
    #[test]
    fn inertia_correction_recovers_expected_inertia() {
        for st in [Strategy::Augmented, Strategy::Condensed, Strategy::Reduced] {
            let mut sys = random_system(12, 3, 3, 2, 2);
            for b in &mut sys.blocks {
                b.wxx = b.wxx.add_diagonal(&[-40.0; 3]);
                b.wuu = b.wuu.add_diagonal(&[-40.0; 2]);
            }
            let mut solver = KktSolver::new(st, SolverOptions::default());
            let (_, info) = solver
                .solve(&mut sys, &exec(), &partition(3, 1).unwrap(), 1.0)
                .unwrap();
            assert!(info.delta_w > 0.0 && info.corrections > 0, "{st}");
            let inertia = BunchKaufman::factor(&sys.assemble().to_dense())
                .unwrap()
                .inertia();
            assert_eq!(inertia, sys.expected_inertia(), "{st}");
            assert_eq!(solver.delta_w_last(), info.delta_w);
        }
    }

    #[test]
    fn correction_sequence_follows_schedule() {
        let mut sys = random_system(12, 2, 3, 2, 2);
        for b in &mut sys.blocks {
            b.wxx = b.wxx.add_diagonal(&[-40.0; 3]);
            b.wuu = b.wuu.add_diagonal(&[-40.0; 2]);
        }
        let mut solver = KktSolver::new(Strategy::Reduced, SolverOptions::default());
        let (_, first) = solver
            .solve(&mut sys, &exec(), &partition(2, 1).unwrap(), 1.0)
            .unwrap();
        let k = first.corrections as i32;
        assert_eq!(first.delta_w, 1e-4 * 100f64.powi(k - 1));
        let (_, second) = solver
            .solve(&mut sys, &exec(), &partition(2, 1).unwrap(), 1.0)
            .unwrap();
        let k2 = second.corrections as i32;
        let expect = first.delta_w / 3.0 * 8f64.powi(k2 - 1);
        assert!((second.delta_w - expect).abs() <= 1e-12 * expect);
    }

    #[test]
    fn singular_state_block_falls_back_to_augmented() {
        let mut sys = random_system(40, 3, 3, 2, 3);
        sys.blocks[1].gx = SparseMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (1, 1, 1.0)]);
        sys.blocks[1].gu = sys.blocks[1].gu.add_scaled(
            1.0,
            &SparseMatrix::from_triplets(3, 2, &[(2, 0, 1.0)]),
            1.0,
        );
        let mut solver = KktSolver::new(Strategy::Reduced, SolverOptions::default());
        let (p, info) = solver
            .solve(&mut sys, &exec(), &partition(3, 3).unwrap(), 0.5)
            .unwrap();
        assert_eq!(info.fallback_block, Some(1));
        assert_eq!(info.strategy, Strategy::Augmented);
        assert!(info.residual < 1e-8 * sys.rhs.norm_inf().max(1.0));
        assert!(p.is_finite());
    }

    #[test]
    fn reduced_step_is_bitwise_invariant_in_groups() {
        let base = random_system(77, 8, 4, 3, 3);
        let mut want = None;
        for g in [1, 2, 4, 8] {
            let mut sys = base.clone();
            let mut solver = KktSolver::new(
                Strategy::Reduced,
                SolverOptions {
                    n_batch: 2,
                    ..Default::default()
                },
            );
            let (p, _) = solver
                .solve(&mut sys, &exec(), &partition(8, g).unwrap(), 0.1)
                .unwrap();
            let bits: Vec<u64> = p.to_vec().iter().map(|v| v.to_bits()).collect();
            match &want {
                None => want = Some(bits),
                Some(w) => assert_eq!(&bits, w, "G = {g}"),
            }
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in [Strategy::Augmented, Strategy::Condensed, Strategy::Reduced] {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        }
        assert!("dense".parse::<Strategy>().is_err());
    }
}
