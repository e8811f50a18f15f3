//! Basis kernel of the polar power-flow model.
//!
//! Per block the basis holds, for every line `l = (f, t)` with in-service
//! flag `σ_l` of that scenario,
//!
//! ```text
//! σ v_f v_t cos(θ_f − θ_t),  σ v_f v_t sin(θ_f − θ_t),  σ (P_f² + Q_f²),
//! σ (P_t² + Q_t²),  σ v_f²,  σ v_t²
//! ```
//!
//! followed by `v_k²` per bus, the scenario loads `P_d`, `Q_d` per bus, the
//! active-power controls and their squares, the squared reference generation
//! and a constant 1. Bus injections, reference generation and reactive
//! generation are linear in this basis.

use std::sync::Arc;

use crate::autodiff::Scalar;
use crate::linalg::DenseMatrix;
use crate::model::BasisKernel;

use super::network::{Network, Var};

/// Offsets of each basis segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub n_line: usize,
    pub n_bus: usize,
    pub n_pg: usize,
}

impl Layout {
    pub fn c(&self, l: usize) -> usize {
        l
    }
    pub fn s(&self, l: usize) -> usize {
        self.n_line + l
    }
    pub fn sf(&self, l: usize) -> usize {
        2 * self.n_line + l
    }
    pub fn st(&self, l: usize) -> usize {
        3 * self.n_line + l
    }
    pub fn wf(&self, l: usize) -> usize {
        4 * self.n_line + l
    }
    pub fn wt(&self, l: usize) -> usize {
        5 * self.n_line + l
    }
    pub fn w(&self, b: usize) -> usize {
        6 * self.n_line + b
    }
    pub fn pd(&self, b: usize) -> usize {
        6 * self.n_line + self.n_bus + b
    }
    pub fn qd(&self, b: usize) -> usize {
        6 * self.n_line + 2 * self.n_bus + b
    }
    pub fn p(&self, j: usize) -> usize {
        6 * self.n_line + 3 * self.n_bus + j
    }
    pub fn p2(&self, j: usize) -> usize {
        6 * self.n_line + 3 * self.n_bus + self.n_pg + j
    }
    pub fn pref2(&self) -> usize {
        6 * self.n_line + 3 * self.n_bus + 2 * self.n_pg
    }
    pub fn one(&self) -> usize {
        self.pref2() + 1
    }
    pub fn len(&self) -> usize {
        self.one() + 1
    }
    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug)]
pub struct OpfKernel {
    pub net: Arc<Network>,
    pub layout: Layout,
    /// Per-unit loads, n_bus × N.
    pub pd: DenseMatrix,
    pub qd: DenseMatrix,
    /// Line in-service flags as 0/1, n_line × N.
    pub status: DenseMatrix,
    /// Controls of the other generators at the reference bus.
    ref_others: Vec<usize>,
    /// Flips the sign of one angle term in the adjoint; for testing the
    /// derivative checker only.
    pub fault: bool,
}

impl OpfKernel {
    pub fn new(net: Arc<Network>, pd: DenseMatrix, qd: DenseMatrix, status: DenseMatrix) -> Self {
        let map = &net.map;
        let layout = Layout {
            n_line: net.n_line(),
            n_bus: net.n_bus(),
            n_pg: map.n_pg(),
        };
        let ref_others = (0..net.n_gen())
            .filter(|&g| net.gen_bus[g] == map.ref_bus && g != map.ref_gen)
            .filter_map(|g| match map.pg[g] {
                Var::Control(j) => Some(j),
                _ => None,
            })
            .collect();
        Self {
            net,
            layout,
            pd,
            qd,
            status,
            ref_others,
            fault: false,
        }
    }

    pub fn with_fault(mut self, fault: bool) -> Self {
        self.fault = fault;
        self
    }

    fn bus_values<S: Scalar>(&self, x: &[S], u: &[S]) -> (Vec<S>, Vec<S>) {
        let pick = |v: &Var, fixed: f64| match *v {
            Var::State(i) => x[i].clone(),
            Var::Control(i) => u[i].clone(),
            Var::Fixed => S::cst(fixed),
        };
        let map = &self.net.map;
        let theta = map
            .theta
            .iter()
            .enumerate()
            .map(|(b, v)| pick(v, self.net.va0[b]))
            .collect();
        let vm = map
            .vm
            .iter()
            .enumerate()
            .map(|(b, v)| pick(v, self.net.vm0[b]))
            .collect();
        (theta, vm)
    }
}

/// Per-line intermediate values.
struct LineVals<S> {
    cs: S,
    sn: S,
    c: S,
    s: S,
    wf: S,
    wt: S,
    pf: S,
    qf: S,
    pt: S,
    qt: S,
}

impl OpfKernel {
    fn line_vals<S: Scalar>(&self, l: usize, theta: &[S], vm: &[S]) -> LineVals<S> {
        let line = &self.net.lines[l];
        let (f, t) = (line.from, line.to);
        let d = theta[f].clone() - theta[t].clone();
        let (cs, sn) = (d.cos(), d.sin());
        let vv = vm[f].clone() * vm[t].clone();
        let c = vv.clone() * cs.clone();
        let s = vv * sn.clone();
        let wf = vm[f].sqr();
        let wt = vm[t].sqr();
        let (gff, bff) = line.yff;
        let (gft, bft) = line.yft;
        let (gtf, btf) = line.ytf;
        let (gtt, btt) = line.ytt;
        let pf = wf.clone() * gff + c.clone() * gft + s.clone() * bft;
        let qf = wf.clone() * (-bff) + s.clone() * gft - c.clone() * bft;
        let pt = wt.clone() * gtt + c.clone() * gtf - s.clone() * btf;
        let qt = wt.clone() * (-btt) - s.clone() * gtf - c.clone() * btf;
        LineVals {
            cs,
            sn,
            c,
            s,
            wf,
            wt,
            pf,
            qf,
            pt,
            qt,
        }
    }

    /// Reference generation `P_inj(ref) + P_d(ref) − Σ other controls at ref`.
    fn pref<S: Scalar>(&self, block: usize, vals: &[LineVals<S>], vm: &[S], u: &[S]) -> S {
        let r = self.net.map.ref_bus;
        let mut p = vm[r].sqr() * self.net.gs[r] + self.pd[(r, block)];
        for (l, v) in vals.iter().enumerate() {
            let line = &self.net.lines[l];
            let st = self.status[(l, block)];
            if line.from == r {
                p += v.pf.clone() * st;
            }
            if line.to == r {
                p += v.pt.clone() * st;
            }
        }
        for &j in &self.ref_others {
            p -= u[j].clone();
        }
        p
    }
}

impl BasisKernel for OpfKernel {
    fn n_basis(&self) -> usize {
        self.layout.len()
    }

    fn eval<S: Scalar>(&self, block: usize, x: &[S], u: &[S], psi: &mut [S]) {
        let ly = self.layout;
        let (theta, vm) = self.bus_values(x, u);
        let vals: Vec<LineVals<S>> = (0..ly.n_line)
            .map(|l| self.line_vals(l, &theta, &vm))
            .collect();
        for (l, v) in vals.iter().enumerate() {
            let st = self.status[(l, block)];
            psi[ly.c(l)] = v.c.clone() * st;
            psi[ly.s(l)] = v.s.clone() * st;
            psi[ly.sf(l)] = (v.pf.sqr() + v.qf.sqr()) * st;
            psi[ly.st(l)] = (v.pt.sqr() + v.qt.sqr()) * st;
            psi[ly.wf(l)] = v.wf.clone() * st;
            psi[ly.wt(l)] = v.wt.clone() * st;
        }
        for b in 0..ly.n_bus {
            psi[ly.w(b)] = vm[b].sqr();
            psi[ly.pd(b)] = S::cst(self.pd[(b, block)]);
            psi[ly.qd(b)] = S::cst(self.qd[(b, block)]);
        }
        for j in 0..ly.n_pg {
            psi[ly.p(j)] = u[j].clone();
            psi[ly.p2(j)] = u[j].sqr();
        }
        psi[ly.pref2()] = self.pref(block, &vals, &vm, u).sqr();
        psi[ly.one()] = S::cst(1.0);
    }

    fn adjoint<S: Scalar>(
        &self,
        block: usize,
        x: &[S],
        u: &[S],
        omega: &[S],
        grad_x: &mut [S],
        grad_u: &mut [S],
    ) {
        let ly = self.layout;
        let net = &*self.net;
        let (theta, vm) = self.bus_values(x, u);
        let vals: Vec<LineVals<S>> = (0..ly.n_line)
            .map(|l| self.line_vals(l, &theta, &vm))
            .collect();
        let r = net.map.ref_bus;
        let a_pref = self.pref(block, &vals, &vm, u) * omega[ly.pref2()].clone() * 2.0;

        let zero = S::cst(0.0);
        let mut g_theta = vec![zero.clone(); ly.n_bus];
        let mut g_v = vec![zero.clone(); ly.n_bus];
        for (l, v) in vals.iter().enumerate() {
            let st = self.status[(l, block)];
            if st == 0.0 {
                continue;
            }
            let line = &net.lines[l];
            let (f, t) = (line.from, line.to);
            let (gff, bff) = line.yff;
            let (gft, bft) = line.yft;
            let (gtf, btf) = line.ytf;
            let (gtt, btt) = line.ytt;
            let w_sf = omega[ly.sf(l)].clone() * (2.0 * st);
            let w_st = omega[ly.st(l)].clone() * (2.0 * st);
            let mut a_pf = v.pf.clone() * w_sf.clone();
            let a_qf = v.qf.clone() * w_sf;
            let mut a_pt = v.pt.clone() * w_st.clone();
            let a_qt = v.qt.clone() * w_st;
            if f == r {
                a_pf += a_pref.clone() * st;
            }
            if t == r {
                a_pt += a_pref.clone() * st;
            }
            let a_c = omega[ly.c(l)].clone() * st + a_pf.clone() * gft - a_qf.clone() * bft
                + a_pt.clone() * gtf
                - a_qt.clone() * btf;
            let a_s = omega[ly.s(l)].clone() * st + a_pf.clone() * bft + a_qf.clone() * gft
                - a_pt.clone() * btf
                - a_qt.clone() * gtf;
            let a_wf = omega[ly.wf(l)].clone() * st + a_pf * gff - a_qf * bff;
            let a_wt = omega[ly.wt(l)].clone() * st + a_pt * gtt - a_qt * btt;

            let (vf, vt) = (vm[f].clone(), vm[t].clone());
            let dc = a_c.clone() * v.cs.clone() + a_s.clone() * v.sn.clone();
            g_v[f] += dc.clone() * vt.clone() + vf.clone() * a_wf * 2.0;
            g_v[t] += dc * vf + vt * a_wt * 2.0;
            let dth = a_s * v.c.clone() - a_c * v.s.clone();
            g_theta[f] += dth.clone();
            if self.fault && l == 0 {
                g_theta[t] += dth;
            } else {
                g_theta[t] -= dth;
            }
        }
        for b in 0..ly.n_bus {
            let mut a_w = omega[ly.w(b)].clone();
            if b == r {
                a_w += a_pref.clone() * net.gs[r];
            }
            g_v[b] += vm[b].clone() * a_w * 2.0;
        }
        for j in 0..ly.n_pg {
            grad_u[j] += omega[ly.p(j)].clone() + u[j].clone() * omega[ly.p2(j)].clone() * 2.0;
        }
        for &j in &self.ref_others {
            grad_u[j] -= a_pref.clone();
        }
        let map = &net.map;
        for b in 0..ly.n_bus {
            for (var, g) in [(map.theta[b], &g_theta[b]), (map.vm[b], &g_v[b])] {
                match var {
                    Var::State(i) => grad_x[i] += g.clone(),
                    Var::Control(i) => grad_u[i] += g.clone(),
                    Var::Fixed => {}
                }
            }
        }
    }
}
