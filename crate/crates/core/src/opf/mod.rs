//! Multi-scenario AC optimal power flow in polar form.
//!
//! Controls `u` are shared by all scenarios; each scenario has its own
//! states `xᵢ`, loads and line outages. Per scenario:
//!
//! - `gᵢ`: active balance at non-reference buses and reactive balance at
//!   buses without generators,
//! - `hᵢ`: squared apparent flow minus squared limit at both ends of each
//!   line, reactive output of each generator, active output of the
//!   reference generator,
//! - `fᵢ`: generation cost divided by `N`.

mod case;
mod kernel;
mod network;
mod scenario;

pub use case::{parse_matpower, Branch, Bus, BusType, CaseData, Gen, GenCost};
pub use kernel::{Layout, OpfKernel};
pub use network::{
    reduced_matrix_bytes, variable_map, Line, Network, OpfVariableMap, Var, UNLIMITED_RATE_MVA,
};
pub use scenario::{generate_scenarios, ScenarioSet, MULTIPLIER_RANGE};

use std::sync::Arc;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{DenseMatrix, SparseMatrix};
use crate::model::{BlockNlp, Bounds, Dims, ModelError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpfError {
    #[error("cannot read case: {0}")]
    Io(String),
    #[error("missing table mpc.{0}")]
    MissingTable(&'static str),
    #[error("malformed row in mpc.{table} at line {line}")]
    MalformedRow { table: &'static str, line: usize },
    #[error("no reference bus")]
    NoReferenceBus,
    #[error("row {row} of mpc.{table} references an unknown bus")]
    UnknownBus { table: &'static str, row: usize },
    #[error("gencost row {row}: {detail}")]
    CostModel { row: usize, detail: String },
    #[error("invalid case: {0}")]
    InvalidCase(String),
    #[error("scenario {scenario} disconnects the network")]
    Disconnected { scenario: usize },
    #[error("invalid scenario set: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

type Terms = Vec<(usize, f64)>;

/// Active injection at bus `b` as basis terms.
fn p_injection(net: &Network, ly: &Layout, b: usize) -> Terms {
    let mut t = vec![(ly.w(b), net.gs[b])];
    for (l, line) in net.lines.iter().enumerate() {
        if line.from == b {
            t.extend([
                (ly.wf(l), line.yff.0),
                (ly.c(l), line.yft.0),
                (ly.s(l), line.yft.1),
            ]);
        }
        if line.to == b {
            t.extend([
                (ly.wt(l), line.ytt.0),
                (ly.c(l), line.ytf.0),
                (ly.s(l), -line.ytf.1),
            ]);
        }
    }
    t
}

/// Reactive injection at bus `b` as basis terms.
fn q_injection(net: &Network, ly: &Layout, b: usize) -> Terms {
    let mut t = vec![(ly.w(b), -net.bs[b])];
    for (l, line) in net.lines.iter().enumerate() {
        if line.from == b {
            t.extend([
                (ly.wf(l), -line.yff.1),
                (ly.s(l), line.yft.0),
                (ly.c(l), -line.yft.1),
            ]);
        }
        if line.to == b {
            t.extend([
                (ly.wt(l), -line.ytt.1),
                (ly.s(l), -line.ytf.0),
                (ly.c(l), -line.ytf.1),
            ]);
        }
    }
    t
}

/// Reference generation as basis terms.
fn p_reference(net: &Network, ly: &Layout) -> Terms {
    let r = net.map.ref_bus;
    let mut t = p_injection(net, ly, r);
    t.push((ly.pd(r), 1.0));
    for (g, &b) in net.gen_bus.iter().enumerate() {
        if let (true, Var::Control(j)) = (b == r, net.map.pg[g]) {
            t.push((ly.p(j), -1.0));
        }
    }
    t
}

fn push_row(trip: &mut Vec<(usize, usize, f64)>, row: usize, terms: &Terms, scale: f64) {
    trip.extend(
        terms
            .iter()
            .filter(|t| t.1 != 0.0)
            .map(|&(c, v)| (row, c, v * scale)),
    );
}

/// Builds the multi-scenario model. `fault` corrupts the kernel adjoint.
pub fn build_block_opf(
    net: &Arc<Network>,
    scenarios: &ScenarioSet,
    fault: bool,
) -> Result<BlockNlp<OpfKernel>, OpfError> {
    scenarios.validate(net)?;
    let n = scenarios.len();
    let (nb, nl) = (net.n_bus(), net.n_line());
    let map = &net.map;

    let pd = DenseMatrix::from_fn(nb, n, |b, i| net.pd[b] * scenarios.multipliers[i][b]);
    let qd = DenseMatrix::from_fn(nb, n, |b, i| net.qd[b] * scenarios.multipliers[i][b]);
    let mut status = DenseMatrix::from_fn(nl, n, |_, _| 1.0);
    for (i, out) in scenarios.outages.iter().enumerate() {
        for l in scenario::line_indices(net, out).expect("validated outages") {
            status[(l, i)] = 0.0;
        }
    }
    let kernel = OpfKernel::new(Arc::clone(net), pd, qd, status).with_fault(fault);
    let ly = kernel.layout;
    let nbasis = ly.len();
    let gens_at = net.gens_at();

    // objective
    let base = net.base_mva;
    let wn = 1.0 / n as f64;
    let mut tf = Vec::new();
    for (g, &(c2, c1, c0)) in net.cost.iter().enumerate() {
        match map.pg[g] {
            Var::Control(j) => {
                tf.extend([
                    (0, ly.p2(j), c2 * base * base * wn),
                    (0, ly.p(j), c1 * base * wn),
                ]);
            }
            _ => {
                tf.push((0, ly.pref2(), c2 * base * base * wn));
                push_row(&mut tf, 0, &p_reference(net, &ly), c1 * base * wn);
            }
        }
        tf.push((0, ly.one(), c0 * wn));
    }
    let l_f = SparseMatrix::from_triplets(1, nbasis, &tf);

    // power balance
    let mut tg = Vec::new();
    for b in 0..nb {
        if let Var::State(i) = map.theta[b] {
            push_row(&mut tg, i, &p_injection(net, &ly, b), 1.0);
            tg.push((i, ly.pd(b), 1.0));
            for &g in &gens_at[b] {
                if let Var::Control(j) = map.pg[g] {
                    tg.push((i, ly.p(j), -1.0));
                }
            }
        }
        if let Var::State(i) = map.vm[b] {
            push_row(&mut tg, i, &q_injection(net, &ly, b), 1.0);
            tg.push((i, ly.qd(b), 1.0));
        }
    }
    let l_g = SparseMatrix::from_triplets(map.n_x, nbasis, &tg);

    // inequalities
    let m = net.n_ineq();
    let mut th = Vec::new();
    let (mut slo, mut shi) = (Vec::with_capacity(m), Vec::with_capacity(m));
    for (l, line) in net.lines.iter().enumerate() {
        let r2 = line.rate * line.rate;
        th.extend([
            (l, ly.sf(l), 1.0),
            (l, ly.one(), -r2),
            (nl + l, ly.st(l), 1.0),
            (nl + l, ly.one(), -r2),
        ]);
    }
    slo.extend(std::iter::repeat_n(0.0, 2 * nl));
    shi.extend(std::iter::repeat_n(f64::INFINITY, 2 * nl));
    for g in 0..net.n_gen() {
        let b = net.gen_bus[g];
        let share = 1.0 / gens_at[b].len() as f64;
        let row = 2 * nl + g;
        push_row(&mut th, row, &q_injection(net, &ly, b), share);
        th.push((row, ly.qd(b), share));
        slo.push(-net.qmax[g]);
        shi.push(-net.qmin[g]);
    }
    push_row(&mut th, m - 1, &p_reference(net, &ly), 1.0);
    slo.push(-net.pmax[map.ref_gen]);
    shi.push(-net.pmin[map.ref_gen]);
    let l_h = SparseMatrix::from_triplets(m, nbasis, &th);

    // bounds and start
    let mut xl = vec![f64::NEG_INFINITY; map.n_x];
    let mut xu = vec![f64::INFINITY; map.n_x];
    let mut ul = vec![0.0; map.n_u];
    let mut uu = vec![0.0; map.n_u];
    let mut x0 = vec![0.0; map.n_x];
    let mut u0 = vec![0.0; map.n_u];
    for b in 0..nb {
        if let Var::State(i) = map.theta[b] {
            x0[i] = net.va0[b];
        }
        match map.vm[b] {
            Var::State(i) => {
                (xl[i], xu[i], x0[i]) = (net.vmin[b], net.vmax[b], net.vm0[b]);
            }
            Var::Control(j) => {
                let g = gens_at[b][0];
                (ul[j], uu[j], u0[j]) = (net.vmin[b], net.vmax[b], net.vg[g]);
            }
            Var::Fixed => {}
        }
    }
    for g in 0..net.n_gen() {
        if let Var::Control(j) = map.pg[g] {
            (ul[j], uu[j], u0[j]) = (net.pmin[g], net.pmax[g], net.pg0[g]);
        }
    }
    let x0 = DenseMatrix::from_fn(map.n_x, n, |r, _| x0[r]);
    Ok(BlockNlp::new(
        kernel,
        n,
        l_f,
        l_g,
        l_h,
        Bounds::new(xl, xu)?,
        Bounds::new(ul, uu)?,
        Bounds::new(slo, shi)?,
        x0,
        u0,
    )?)
}

/// Random point with angles in ±0.3 rad and voltages and generation in the
/// middle 80% of their ranges.
pub fn random_point<R: Rng>(net: &Network, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let mut inner = |lo: f64, hi: f64| {
        let m = 0.1 * (hi - lo);
        if m > 0.0 {
            rng.random_range(lo + m..hi - m)
        } else {
            lo
        }
    };
    let map = &net.map;
    let mut x = vec![0.0; map.n_x];
    let mut u = vec![0.0; map.n_u];
    for b in 0..net.n_bus() {
        if let Var::State(i) = map.theta[b] {
            x[i] = inner(-0.3, 0.3);
        }
        match map.vm[b] {
            Var::State(i) => x[i] = inner(net.vmin[b], net.vmax[b]),
            Var::Control(j) => u[j] = inner(net.vmin[b], net.vmax[b]),
            Var::Fixed => {}
        }
    }
    for g in 0..net.n_gen() {
        if let Var::Control(j) = map.pg[g] {
            u[j] = inner(net.pmin[g], net.pmax[g]);
        }
    }
    (x, u)
}

/// Size summary of a case with `N` scenarios.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DimsRow {
    pub instance: String,
    pub n_bus: usize,
    pub n_line: usize,
    pub n_gen: usize,
    pub n_blocks: usize,
    pub n_x: usize,
    pub n_u: usize,
    pub m: usize,
    pub nvar: usize,
    pub ncon: usize,
    pub khat_bytes: usize,
}

pub fn dims_row(case: &CaseData, n_blocks: usize) -> Result<DimsRow, OpfError> {
    let net = Network::new(case)?;
    let d = Dims {
        n_blocks,
        n_x: net.map.n_x,
        n_u: net.map.n_u,
        m: net.n_ineq(),
        n_b: 0,
    };
    Ok(DimsRow {
        instance: case.name.clone(),
        n_bus: net.n_bus(),
        n_line: net.n_line(),
        n_gen: net.n_gen(),
        n_blocks,
        n_x: d.n_x,
        n_u: d.n_u,
        m: d.m,
        nvar: d.nvar(),
        ncon: d.ncon(),
        khat_bytes: reduced_matrix_bytes(d.n_u, std::mem::size_of::<f64>()),
    })
}
