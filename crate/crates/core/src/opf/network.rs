//! Per-unit network data and the state/control split.

use super::case::{BusType, CaseData};
use super::OpfError;

/// Line limit used when `rateA` is 0 (unlimited), in MVA.
pub const UNLIMITED_RATE_MVA: f64 = 9900.0;

/// Complex number as `(re, im)`.
pub type C64 = (f64, f64);

fn cmul(a: C64, b: C64) -> C64 {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

fn cinv(a: C64) -> C64 {
    let d = a.0 * a.0 + a.1 * a.1;
    (a.0 / d, -a.1 / d)
}

/// In-service branch with its two-port admittances.
#[derive(Clone, Debug, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub yff: C64,
    pub yft: C64,
    pub ytf: C64,
    pub ytt: C64,
    /// Apparent power limit, per unit.
    pub rate: f64,
    /// Row in the case's branch table.
    pub source: usize,
}

impl Line {
    /// `(P_f, Q_f, P_t, Q_t)` from `w_f = v_f²`, `w_t = v_t²`,
    /// `c = v_f v_t cos(θ_f − θ_t)` and `s = v_f v_t sin(θ_f − θ_t)`.
    pub fn flows(&self, wf: f64, wt: f64, c: f64, s: f64) -> (f64, f64, f64, f64) {
        let (gff, bff) = self.yff;
        let (gft, bft) = self.yft;
        let (gtf, btf) = self.ytf;
        let (gtt, btt) = self.ytt;
        (
            gff * wf + gft * c + bft * s,
            -bff * wf + gft * s - bft * c,
            gtt * wt + gtf * c - btf * s,
            -btt * wt - gtf * s - btf * c,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    State(usize),
    Control(usize),
    Fixed,
}

/// Control `u = (P_g of non-reference generators, v at generator buses)`,
/// state `x = (θ at non-reference buses, v at the other buses)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OpfVariableMap {
    pub ref_bus: usize,
    /// Active generator carrying the reference bus's balance.
    pub ref_gen: usize,
    pub theta: Vec<Var>,
    pub vm: Vec<Var>,
    /// Control index of each active generator's active power.
    pub pg: Vec<Var>,
    pub n_x: usize,
    pub n_u: usize,
}

impl OpfVariableMap {
    /// Number of active-power controls.
    pub fn n_pg(&self) -> usize {
        self.pg
            .iter()
            .filter(|v| matches!(v, Var::Control(_)))
            .count()
    }
}

/// Active buses, lines and generators in per unit.
#[derive(Clone, Debug)]
pub struct Network {
    pub base_mva: f64,
    pub bus_ids: Vec<usize>,
    pub pd: Vec<f64>,
    pub qd: Vec<f64>,
    pub gs: Vec<f64>,
    pub bs: Vec<f64>,
    pub vmin: Vec<f64>,
    pub vmax: Vec<f64>,
    pub vm0: Vec<f64>,
    /// Radians.
    pub va0: Vec<f64>,
    pub lines: Vec<Line>,
    pub gen_bus: Vec<usize>,
    pub pmin: Vec<f64>,
    pub pmax: Vec<f64>,
    pub qmin: Vec<f64>,
    pub qmax: Vec<f64>,
    pub pg0: Vec<f64>,
    pub vg: Vec<f64>,
    /// `(c₂, c₁, c₀)` in MW.
    pub cost: Vec<(f64, f64, f64)>,
    pub map: OpfVariableMap,
}

impl Network {
    pub fn n_bus(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn n_line(&self) -> usize {
        self.lines.len()
    }

    pub fn n_gen(&self) -> usize {
        self.gen_bus.len()
    }

    /// Generators at each bus.
    pub fn gens_at(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_bus()];
        for (g, &b) in self.gen_bus.iter().enumerate() {
            out[b].push(g);
        }
        out
    }

    /// Inequalities per block: both line ends, one reactive row per generator
    /// and the reference generator's active power.
    pub fn n_ineq(&self) -> usize {
        2 * self.n_line() + self.n_gen() + 1
    }

    /// Human-readable name of the variable `Var`, e.g. `θ(bus 5)`.
    pub fn describe(&self, var: Var) -> String {
        let map = &self.map;
        let find = |v: &[Var]| v.iter().position(|w| *w == var);
        if let Some(b) = find(&map.theta) {
            format!("θ(bus {})", self.bus_ids[b])
        } else if let Some(b) = find(&map.vm) {
            format!("v(bus {})", self.bus_ids[b])
        } else if let Some(g) = find(&map.pg) {
            format!("Pg(gen {g} at bus {})", self.bus_ids[self.gen_bus[g]])
        } else {
            format!("{var:?}")
        }
    }

    /// Whether the buses stay connected when the given lines are removed.
    pub fn is_connected_without(&self, outages: &[usize]) -> bool {
        let n = self.n_bus();
        let mut adj = vec![Vec::new(); n];
        for (l, line) in self.lines.iter().enumerate() {
            if !outages.contains(&l) {
                adj[line.from].push(line.to);
                adj[line.to].push(line.from);
            }
        }
        let mut seen = vec![false; n];
        let mut stack = vec![self.map.ref_bus];
        seen[self.map.ref_bus] = true;
        while let Some(b) = stack.pop() {
            for &c in &adj[b] {
                if !seen[c] {
                    seen[c] = true;
                    stack.push(c);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

pub fn variable_map(case: &CaseData) -> Result<OpfVariableMap, OpfError> {
    Ok(Network::new(case)?.map)
}

impl Network {
    pub fn new(case: &CaseData) -> Result<Self, OpfError> {
        let base = case.base_mva;
        let buses: Vec<_> = case
            .buses
            .iter()
            .filter(|b| b.kind != BusType::Isolated)
            .collect();
        let nb = buses.len();
        let pos = |id: usize| buses.iter().position(|b| b.id == id);
        let ref_bus = buses
            .iter()
            .position(|b| b.kind == BusType::Ref)
            .ok_or(OpfError::NoReferenceBus)?;

        let mut lines = Vec::new();
        for (k, br) in case.branches.iter().enumerate().filter(|(_, b)| b.status) {
            let (Some(f), Some(t)) = (pos(br.from), pos(br.to)) else {
                return Err(OpfError::UnknownBus {
                    table: "branch",
                    row: k,
                });
            };
            if br.r == 0.0 && br.x == 0.0 {
                return Err(OpfError::InvalidCase(format!(
                    "branch {k} has zero impedance"
                )));
            }
            let ys = cinv((br.r, br.x));
            let tap = if br.tap == 0.0 { 1.0 } else { br.tap };
            let phi = br.shift.to_radians();
            let ytt = (ys.0, ys.1 + br.b / 2.0);
            let yff = (ytt.0 / (tap * tap), ytt.1 / (tap * tap));
            let yft = cmul((-ys.0 / tap, -ys.1 / tap), (phi.cos(), phi.sin()));
            let ytf = cmul((-ys.0 / tap, -ys.1 / tap), (phi.cos(), -phi.sin()));
            let rate = if br.rate_a > 0.0 {
                br.rate_a
            } else {
                UNLIMITED_RATE_MVA
            } / base;
            lines.push(Line {
                from: f,
                to: t,
                yff,
                yft,
                ytf,
                ytt,
                rate,
                source: k,
            });
        }

        let mut gen_bus = Vec::new();
        let (mut pmin, mut pmax, mut qmin, mut qmax, mut pg0, mut vg, mut cost) =
            (vec![], vec![], vec![], vec![], vec![], vec![], vec![]);
        for (k, g) in case.gens.iter().enumerate().filter(|(_, g)| g.status) {
            let b = pos(g.bus).ok_or(OpfError::UnknownBus {
                table: "gen",
                row: k,
            })?;
            gen_bus.push(b);
            pmin.push(g.pmin / base);
            pmax.push(g.pmax / base);
            qmin.push(g.qmin / base);
            qmax.push(g.qmax / base);
            pg0.push(g.pg / base);
            vg.push(g.vg);
            cost.push(case.gencost[k].quadratic());
        }
        let ref_gen = gen_bus.iter().position(|&b| b == ref_bus).ok_or_else(|| {
            OpfError::InvalidCase("no active generator at the reference bus".into())
        })?;

        // controls: P_g of non-reference gens, then v at generator buses
        let mut n_u = 0;
        let pg: Vec<Var> = (0..gen_bus.len())
            .map(|g| {
                if g == ref_gen {
                    Var::Fixed
                } else {
                    n_u += 1;
                    Var::Control(n_u - 1)
                }
            })
            .collect();
        let has_gen: Vec<bool> = (0..nb).map(|b| gen_bus.contains(&b)).collect();
        let mut vm = vec![Var::Fixed; nb];
        for b in (0..nb).filter(|&b| has_gen[b]) {
            vm[b] = Var::Control(n_u);
            n_u += 1;
        }
        let mut n_x = 0;
        let mut theta = vec![Var::Fixed; nb];
        for b in (0..nb).filter(|&b| b != ref_bus) {
            theta[b] = Var::State(n_x);
            n_x += 1;
        }
        for b in (0..nb).filter(|&b| !has_gen[b]) {
            vm[b] = Var::State(n_x);
            n_x += 1;
        }

        let va_ref = buses[ref_bus].va;
        Ok(Self {
            base_mva: base,
            bus_ids: buses.iter().map(|b| b.id).collect(),
            pd: buses.iter().map(|b| b.pd / base).collect(),
            qd: buses.iter().map(|b| b.qd / base).collect(),
            gs: buses.iter().map(|b| b.gs / base).collect(),
            bs: buses.iter().map(|b| b.bs / base).collect(),
            vmin: buses.iter().map(|b| b.vmin).collect(),
            vmax: buses.iter().map(|b| b.vmax).collect(),
            vm0: buses.iter().map(|b| b.vm).collect(),
            va0: buses.iter().map(|b| (b.va - va_ref).to_radians()).collect(),
            lines,
            gen_bus,
            pmin,
            pmax,
            qmin,
            qmax,
            pg0,
            vg,
            cost,
            map: OpfVariableMap {
                ref_bus,
                ref_gen,
                theta,
                vm,
                pg,
                n_x,
                n_u,
            },
        })
    }
}

/// Bytes of a dense `n_u × n_u` matrix.
pub fn reduced_matrix_bytes(n_u: usize, element_size: usize) -> usize {
    n_u * n_u * element_size
}
