//! MATPOWER case files.
//!
//! Only the numeric matrices `mpc.bus`, `mpc.gen`, `mpc.branch` and
//! `mpc.gencost` plus the scalar `mpc.baseMVA` are read. Values stay in the
//! file's units (MW, MVAr, degrees).

use std::path::Path;

use super::OpfError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BusType {
    Pq,
    Pv,
    Ref,
    Isolated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub kind: BusType,
    pub pd: f64,
    pub qd: f64,
    pub gs: f64,
    pub bs: f64,
    pub vm: f64,
    pub va: f64,
    pub vmax: f64,
    pub vmin: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gen {
    pub bus: usize,
    pub pg: f64,
    pub qg: f64,
    pub qmax: f64,
    pub qmin: f64,
    pub vg: f64,
    pub status: bool,
    pub pmax: f64,
    pub pmin: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub b: f64,
    pub rate_a: f64,
    /// Off-nominal ratio; 0 in the file means 1.
    pub tap: f64,
    /// Phase shift in degrees.
    pub shift: f64,
    pub status: bool,
}

/// Polynomial cost, highest degree first.
#[derive(Clone, Debug, PartialEq)]
pub struct GenCost {
    pub coeffs: Vec<f64>,
}

impl GenCost {
    /// `(c₂, c₁, c₀)` of the cost in MW.
    pub fn quadratic(&self) -> (f64, f64, f64) {
        let mut c = [0.0; 3];
        for (k, v) in self.coeffs.iter().rev().enumerate() {
            c[k] = *v;
        }
        (c[2], c[1], c[0])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseData {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub gens: Vec<Gen>,
    pub branches: Vec<Branch>,
    pub gencost: Vec<GenCost>,
}

impl CaseData {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, OpfError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| OpfError::Io(format!("{}: {e}", path.display())))?;
        let mut case = parse_matpower(&text)?;
        if case.name.is_empty() {
            case.name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
        }
        Ok(case)
    }

    /// Position of bus `id` in `buses`.
    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn ref_bus(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusType::Ref)
            .expect("validated case has a reference bus")
    }
}

struct Row {
    line: usize,
    values: Vec<f64>,
}

fn strip_comment(line: &str) -> &str {
    line.split('%').next().unwrap_or("")
}

/// Rows of `mpc.<name> = [ ... ];`, or `None` if absent.
fn matrix(lines: &[&str], name: &str, table: &'static str) -> Result<Option<Vec<Row>>, OpfError> {
    let key = format!("mpc.{name}");
    let Some(start) = lines.iter().position(|l| {
        let l = strip_comment(l).trim_start();
        l.strip_prefix(&key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    }) else {
        return Ok(None);
    };
    let mut rows = Vec::new();
    let mut cur: Vec<f64> = Vec::new();
    let mut cur_line = start + 1;
    let mut opened = false;
    for (k, raw) in lines.iter().enumerate().skip(start) {
        let mut body = strip_comment(raw);
        if !opened {
            let Some(p) = body.find('[') else {
                return Err(OpfError::MalformedRow { table, line: k + 1 });
            };
            body = &body[p + 1..];
            opened = true;
        }
        let (body, closed) = match body.find(']') {
            Some(p) => (&body[..p], true),
            None => (body, false),
        };
        for (n, piece) in body.split(';').enumerate() {
            if n > 0 && !cur.is_empty() {
                rows.push(Row {
                    line: cur_line,
                    values: std::mem::take(&mut cur),
                });
            }
            for tok in piece
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
            {
                if cur.is_empty() {
                    cur_line = k + 1;
                }
                let v = tok
                    .parse::<f64>()
                    .map_err(|_| OpfError::MalformedRow { table, line: k + 1 })?;
                cur.push(v);
            }
        }
        // a newline also ends a row
        if !cur.is_empty() {
            rows.push(Row {
                line: cur_line,
                values: std::mem::take(&mut cur),
            });
        }
        if closed {
            return Ok(Some(rows));
        }
    }
    Err(OpfError::MalformedRow {
        table,
        line: lines.len(),
    })
}

fn need(rows: Option<Vec<Row>>, table: &'static str) -> Result<Vec<Row>, OpfError> {
    rows.ok_or(OpfError::MissingTable(table))
}

fn cols(r: &Row, n: usize, table: &'static str) -> Result<(), OpfError> {
    if r.values.len() < n {
        Err(OpfError::MalformedRow {
            table,
            line: r.line,
        })
    } else {
        Ok(())
    }
}

fn index(v: f64, table: &'static str, line: usize) -> Result<usize, OpfError> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(OpfError::MalformedRow { table, line })
    }
}

pub fn parse_matpower(text: &str) -> Result<CaseData, OpfError> {
    let lines: Vec<&str> = text.lines().collect();
    let name = lines
        .iter()
        .map(|l| strip_comment(l).trim())
        .find_map(|l| l.strip_prefix("function"))
        .and_then(|rest| rest.split('=').nth(1))
        .map(|s| s.trim().trim_end_matches(';').to_string())
        .unwrap_or_default();

    let base_mva = lines
        .iter()
        .find_map(|l| {
            let l = strip_comment(l).trim();
            let rest = l
                .strip_prefix("mpc.baseMVA")?
                .trim_start()
                .strip_prefix('=')?;
            Some(rest.trim().trim_end_matches(';').trim().parse::<f64>())
        })
        .ok_or(OpfError::MissingTable("baseMVA"))?
        .map_err(|_| OpfError::MissingTable("baseMVA"))?;
    if !(base_mva > 0.0) {
        return Err(OpfError::InvalidCase("baseMVA must be positive".into()));
    }

    let mut buses = Vec::new();
    for r in need(matrix(&lines, "bus", "bus")?, "bus")? {
        cols(&r, 13, "bus")?;
        let v = &r.values;
        let kind = match v[1] as i64 {
            1 => BusType::Pq,
            2 => BusType::Pv,
            3 => BusType::Ref,
            4 => BusType::Isolated,
            _ => {
                return Err(OpfError::MalformedRow {
                    table: "bus",
                    line: r.line,
                })
            }
        };
        buses.push(Bus {
            id: index(v[0], "bus", r.line)?,
            kind,
            pd: v[2],
            qd: v[3],
            gs: v[4],
            bs: v[5],
            vm: v[7],
            va: v[8],
            vmax: v[11],
            vmin: v[12],
        });
    }
    let mut gens = Vec::new();
    for r in need(matrix(&lines, "gen", "gen")?, "gen")? {
        cols(&r, 10, "gen")?;
        let v = &r.values;
        gens.push(Gen {
            bus: index(v[0], "gen", r.line)?,
            pg: v[1],
            qg: v[2],
            qmax: v[3],
            qmin: v[4],
            vg: v[5],
            status: v[7] > 0.0,
            pmax: v[8],
            pmin: v[9],
        });
    }
    let mut branches = Vec::new();
    for r in need(matrix(&lines, "branch", "branch")?, "branch")? {
        cols(&r, 11, "branch")?;
        let v = &r.values;
        branches.push(Branch {
            from: index(v[0], "branch", r.line)?,
            to: index(v[1], "branch", r.line)?,
            r: v[2],
            x: v[3],
            b: v[4],
            rate_a: v[5],
            tap: v[8],
            shift: v[9],
            status: v[10] > 0.0,
        });
    }
    let mut gencost = Vec::new();
    for r in need(matrix(&lines, "gencost", "gencost")?, "gencost")? {
        cols(&r, 4, "gencost")?;
        let v = &r.values;
        if v[0] != 2.0 {
            return Err(OpfError::CostModel {
                row: gencost.len(),
                detail: "only polynomial costs are supported".into(),
            });
        }
        let n = v[3] as usize;
        if n > 3 {
            return Err(OpfError::CostModel {
                row: gencost.len(),
                detail: format!("degree {} exceeds 2", n - 1),
            });
        }
        cols(&r, 4 + n, "gencost")?;
        gencost.push(GenCost {
            coeffs: v[4..4 + n].to_vec(),
        });
    }

    let case = CaseData {
        name,
        base_mva,
        buses,
        gens,
        branches,
        gencost,
    };
    validate(&case)?;
    Ok(case)
}

fn validate(case: &CaseData) -> Result<(), OpfError> {
    match case.buses.iter().filter(|b| b.kind == BusType::Ref).count() {
        0 => return Err(OpfError::NoReferenceBus),
        1 => {}
        n => return Err(OpfError::InvalidCase(format!("{n} reference buses"))),
    }
    let mut ids: Vec<usize> = case.buses.iter().map(|b| b.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(OpfError::InvalidCase("duplicate bus id".into()));
    }
    let exists = |id: usize| ids.binary_search(&id).is_ok();
    for (k, br) in case.branches.iter().enumerate() {
        if !exists(br.from) || !exists(br.to) {
            return Err(OpfError::UnknownBus {
                table: "branch",
                row: k,
            });
        }
    }
    for (k, g) in case.gens.iter().enumerate() {
        if !exists(g.bus) {
            return Err(OpfError::UnknownBus {
                table: "gen",
                row: k,
            });
        }
    }
    if case.gencost.len() < case.gens.len() {
        return Err(OpfError::MissingTable("gencost"));
    }
    Ok(())
}
