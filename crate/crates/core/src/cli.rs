//! Command-line front end: `solve`, `bench`, `check-derivatives`, `dims`.
//!
//! Settings resolve as CLI flags over the JSON config file over defaults.
//! Exit codes: 0 success, 2 parse/usage, 3 model, 4 solver, 5 derivative.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{check_derivatives, WorstEntry, FD_STEP};
use crate::executor::{Executor, ReduceMode};
use crate::ipm::{solve, IpmError, IpmOptions, IpmResult, Status};
use crate::kkt::{SolverOptions, Strategy};
use crate::linalg::DenseMatrix;
use crate::opf::{
    build_block_opf, dims_row, generate_scenarios, random_point, CaseData, DimsRow, Network,
    OpfError, ScenarioSet, Var,
};

pub const DERIVATIVE_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Parse(String),
    #[error("model: {0}")]
    Model(String),
    #[error("solver: {0}")]
    Solver(String),
    #[error("derivative mismatch: {0}")]
    Derivative(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Model(_) => 3,
            CliError::Solver(_) => 4,
            CliError::Derivative(_) => 5,
        }
    }
}

impl From<OpfError> for CliError {
    fn from(e: OpfError) -> Self {
        match e {
            OpfError::Io(_)
            | OpfError::MissingTable(_)
            | OpfError::MalformedRow { .. }
            | OpfError::NoReferenceBus
            | OpfError::UnknownBus { .. }
            | OpfError::CostModel { .. } => CliError::Parse(e.to_string()),
            _ => CliError::Model(e.to_string()),
        }
    }
}

impl From<IpmError> for CliError {
    fn from(e: IpmError) -> Self {
        match e {
            IpmError::Model(_) => CliError::Model(e.to_string()),
            IpmError::Options(_) => CliError::Parse(e.to_string()),
            _ => CliError::Solver(e.to_string()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Text,
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

/// One fully resolved run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub case: PathBuf,
    /// Number of scenarios `N`.
    pub scenarios: usize,
    pub sigma: f64,
    /// Branch-table rows taken out round-robin.
    pub contingencies: Vec<usize>,
    pub seed: u64,
    /// Scenario set JSON used instead of generated scenarios.
    pub scenario_file: Option<PathBuf>,
    pub strategy: Strategy,
    pub groups: usize,
    pub workers: usize,
    pub batch: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub format: Format,
    pub deterministic: bool,
    /// Corrupt the basis adjoint (derivative checker self-test).
    pub fault: bool,
    /// Random points per derivative check.
    pub points: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ipm = IpmOptions::default();
        Self {
            case: PathBuf::new(),
            scenarios: 1,
            sigma: 0.0,
            contingencies: Vec::new(),
            seed: 0,
            scenario_file: None,
            strategy: ipm.strategy,
            groups: 1,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            batch: SolverOptions::default().n_batch,
            tol: ipm.tol,
            max_iter: ipm.max_iter,
            format: Format::Text,
            deterministic: true,
            fault: false,
            points: 5,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Parse(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Parse(m));
        if self.scenarios == 0 {
            return bad("at least one scenario is required (N ≥ 1)".into());
        }
        if self.groups == 0 || self.groups > self.scenarios {
            return bad(format!(
                "group count must satisfy 1 ≤ G ≤ N, got G = {} with N = {}",
                self.groups, self.scenarios
            ));
        }
        if self.workers == 0 || self.batch == 0 {
            return bad("workers and batch must be positive".into());
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive".into());
        }
        if !(self.sigma >= 0.0) {
            return bad("sigma must be non-negative".into());
        }
        for p in std::iter::once(&self.case).chain(&self.scenario_file) {
            if !p.is_file() {
                return bad(format!("no such file: {}", p.display()));
            }
        }
        Ok(())
    }

    pub fn ipm_options(&self) -> IpmOptions {
        IpmOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            strategy: self.strategy,
            groups: self.groups,
            kkt: SolverOptions {
                n_batch: self.batch,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn executor(&self) -> Result<Executor, CliError> {
        let mode = if self.deterministic {
            ReduceMode::Deterministic
        } else {
            ReduceMode::Fast
        };
        Executor::new(self.workers, mode).map_err(|e| CliError::Parse(e.to_string()))
    }

    fn load(&self) -> Result<(CaseData, Arc<Network>, ScenarioSet), CliError> {
        self.validate()?;
        let case = CaseData::from_file(&self.case)?;
        let net = Arc::new(Network::new(&case)?);
        let set = match &self.scenario_file {
            Some(p) => {
                let set = read_scenarios(p)?;
                if set.len() != self.scenarios {
                    return Err(CliError::Parse(format!(
                        "{} holds {} scenarios, expected {}",
                        p.display(),
                        set.len(),
                        self.scenarios
                    )));
                }
                set
            }
            None => generate_scenarios(
                &net,
                self.scenarios,
                self.sigma,
                &self.contingencies,
                self.seed,
            )?,
        };
        Ok((case, net, set))
    }
}

/// Reads a scenario set, either bare or embedded in a solve report.
fn read_scenarios(path: &Path) -> Result<ScenarioSet, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    let v: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    let inner = v.get("scenarios").cloned().unwrap_or(v);
    Ok(ScenarioSet::from_json(&inner.to_string())?)
}

#[derive(Parser, Debug)]
#[command(
    name = "blockipm",
    version,
    about = "Block-structured interior-point solver for multi-scenario AC OPF"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve one instance.
    Solve(RunArgs),
    /// Solve every combination of the listed cases, N, strategies and G.
    Bench(RunArgs),
    /// Compare AD derivatives with central differences.
    CheckDerivatives(RunArgs),
    /// Print problem dimensions.
    Dims(RunArgs),
}

#[derive(clap::Args, Debug, Default, Clone)]
pub struct RunArgs {
    /// JSON file with RunConfig fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// MATPOWER case file; repeatable for bench and dims.
    #[arg(long, value_delimiter = ',')]
    pub case: Vec<PathBuf>,
    /// Number of scenarios N; a list for bench and dims.
    #[arg(long, value_delimiter = ',')]
    pub scenarios: Vec<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Branch-table rows (0-based) to take out round-robin.
    #[arg(long, value_delimiter = ',')]
    pub contingencies: Option<Vec<usize>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Scenario set JSON (bare, or a solve report).
    #[arg(long)]
    pub scenario_file: Option<PathBuf>,
    /// augmented, condensed or reduced; a list for bench.
    #[arg(long, value_delimiter = ',')]
    pub strategy: Vec<Strategy>,
    /// Group count G; a list for bench.
    #[arg(long, value_delimiter = ',')]
    pub groups: Vec<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Column tile width of the reduction.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long, value_enum)]
    pub deterministic: Option<Switch>,
    #[arg(long)]
    pub fault: bool,
    /// Random points for check-derivatives.
    #[arg(long)]
    pub points: Option<usize>,
    /// Append the report to this file instead of printing it.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn or_default<T: Clone>(v: &[T], d: T) -> Vec<T> {
    if v.is_empty() {
        vec![d]
    } else {
        v.to_vec()
    }
}

impl RunArgs {
    /// Config file over defaults, then flags over both. List-valued flags
    /// expand into one config per combination.
    pub fn resolve(&self) -> Result<Vec<RunConfig>, CliError> {
        let mut base = match &self.config {
            Some(p) => RunConfig::from_json(
                &std::fs::read_to_string(p)
                    .map_err(|e| CliError::Parse(format!("{}: {e}", p.display())))?,
            )?,
            None => RunConfig::default(),
        };
        macro_rules! overlay {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { base.$f = v; } )* };
        }
        overlay!(
            sigma,
            contingencies,
            seed,
            workers,
            batch,
            tol,
            max_iter,
            format
        );
        if self.scenario_file.is_some() {
            base.scenario_file = self.scenario_file.clone();
        }
        if let Some(d) = self.deterministic {
            base.deterministic = d == Switch::On;
        }
        if let Some(p) = self.points {
            base.points = p;
        }
        base.fault |= self.fault;
        let mut out = Vec::new();
        for case in or_default(&self.case, base.case.clone()) {
            for &n in &or_default(&self.scenarios, base.scenarios) {
                for &strategy in &or_default(&self.strategy, base.strategy) {
                    for &groups in &or_default(&self.groups, base.groups) {
                        out.push(RunConfig {
                            case: case.clone(),
                            scenarios: n,
                            strategy,
                            groups,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        Ok(out)
    }

    fn resolve_one(&self) -> Result<RunConfig, CliError> {
        let mut all = self.resolve()?;
        if all.len() != 1 {
            return Err(CliError::Parse(
                "this command takes a single case, N, strategy and G".into(),
            ));
        }
        Ok(all.remove(0))
    }
}

/// One row of a benchmark table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub instance: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub strategy: Strategy,
    #[serde(rename = "G")]
    pub groups: usize,
    pub iters: usize,
    pub ad_s: f64,
    pub kkt_s: f64,
    pub total_s: f64,
    pub status: String,
    pub objective: Option<f64>,
}

pub const BENCH_COLUMNS: [&str; 10] = [
    "instance",
    "N",
    "strategy",
    "G",
    "iters",
    "ad_s",
    "kkt_s",
    "total_s",
    "status",
    "objective",
];

impl BenchRow {
    fn new(instance: &str, cfg: &RunConfig, r: &IpmResult) -> Self {
        Self {
            instance: instance.to_string(),
            n: cfg.scenarios,
            strategy: cfg.strategy,
            groups: cfg.groups,
            iters: r.iterations,
            ad_s: r.timings.ad_s,
            kkt_s: r.timings.kkt_s,
            total_s: r.timings.total_s,
            status: r.status.to_string(),
            objective: Some(r.objective),
        }
    }

    fn failed(cfg: &RunConfig, e: &CliError) -> Self {
        let instance = cfg
            .case
            .file_stem()
            .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        Self {
            instance,
            n: cfg.scenarios,
            strategy: cfg.strategy,
            groups: cfg.groups,
            iters: 0,
            ad_s: 0.0,
            kkt_s: 0.0,
            total_s: 0.0,
            status: format!("error: {e}"),
            objective: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchReport {
    pub deterministic: bool,
    pub rows: Vec<BenchRow>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    #[serde(flatten)]
    pub row: BenchRow,
    pub deterministic: bool,
    pub kkt_error: f64,
    /// Shared controls at the returned point.
    pub u: Vec<f64>,
    pub scenarios: ScenarioSet,
}

impl SolveReport {
    pub fn exit_code(&self) -> u8 {
        if self.row.status == Status::Optimal.to_string() {
            0
        } else {
            4
        }
    }
}

pub fn cmd_solve(cfg: &RunConfig) -> Result<SolveReport, CliError> {
    let (case, net, set) = cfg.load()?;
    let nlp = build_block_opf(&net, &set, cfg.fault)?;
    let exec = cfg.executor()?;
    let r = solve(&nlp, &exec, &cfg.ipm_options())?;
    Ok(SolveReport {
        row: BenchRow::new(&case.name, cfg, &r),
        deterministic: cfg.deterministic,
        kkt_error: r.kkt_error,
        u: r.iterate.u.clone(),
        scenarios: set,
    })
}

/// Runs every config; failures become rows and the run continues.
pub fn cmd_bench(configs: &[RunConfig]) -> BenchReport {
    let rows = configs
        .iter()
        .map(|c| match cmd_solve(c) {
            Ok(r) => r.row,
            Err(e) => {
                log::warn!("{}: {e}", c.case.display());
                BenchRow::failed(c, &e)
            }
        })
        .collect();
    BenchReport {
        deterministic: configs.iter().all(|c| c.deterministic),
        rows,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DerivativeReport {
    pub instance: String,
    pub points: usize,
    pub jacobian: f64,
    pub gradient: f64,
    pub hessian: f64,
    /// Location of the largest discrepancy.
    pub worst: Option<String>,
    pub passed: bool,
}

fn locate(net: &Network, n_x: usize, w: &WorstEntry) -> String {
    let col = |c: usize| {
        if c < n_x {
            net.describe(Var::State(c))
        } else {
            net.describe(Var::Control(c - n_x))
        }
    };
    let row = match w.kind {
        "gradient" => "∇ωᵀψ".to_string(),
        "jacobian" if w.row < n_x => format!("g[{}]", w.row),
        "jacobian" => format!("h[{}]", w.row - n_x),
        _ => format!("∂/∂{}", col(w.row)),
    };
    format!(
        "{} block {} row {} column {}: ad {:.6e} fd {:.6e} (rel {:.2e})",
        w.kind,
        w.block,
        row,
        col(w.col),
        w.ad,
        w.fd,
        w.error
    )
}

/// Central-difference check at `points` random points. `Err(Derivative)`
/// when the largest relative error exceeds [`DERIVATIVE_TOLERANCE`].
pub fn cmd_check_derivatives(cfg: &RunConfig) -> Result<DerivativeReport, CliError> {
    let (case, net, set) = cfg.load()?;
    let nlp = build_block_opf(&net, &set, cfg.fault)?;
    let d = nlp.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rep = DerivativeReport {
        instance: case.name.clone(),
        points: cfg.points,
        jacobian: 0.0,
        gradient: 0.0,
        hessian: 0.0,
        worst: None,
        passed: true,
    };
    let mut worst: Option<WorstEntry> = None;
    for _ in 0..cfg.points {
        let mut x = DenseMatrix::zeros(d.n_x, d.n_blocks);
        let mut u = Vec::new();
        for i in 0..d.n_blocks {
            let (xi, ui) = random_point(&net, &mut rng);
            x.col_mut(i).copy_from_slice(&xi);
            if i == 0 {
                u = ui;
            }
        }
        let y = DenseMatrix::from_fn(d.n_x, d.n_blocks, |_, _| rng.random_range(-1.0..1.0));
        let z = DenseMatrix::from_fn(d.m, d.n_blocks, |_, _| rng.random_range(-1.0..1.0) * 1e-2);
        let c = check_derivatives(&nlp, &x, &u, &y, &z, 0..d.n_blocks, FD_STEP)
            .map_err(|e| CliError::Derivative(e.to_string()))?;
        rep.jacobian = rep.jacobian.max(c.jacobian);
        rep.gradient = rep.gradient.max(c.gradient);
        rep.hessian = rep.hessian.max(c.hessian);
        if let Some(w) = c.worst.filter(|w| worst.is_none_or(|b| w.error > b.error)) {
            worst = Some(w);
        }
    }
    rep.worst = worst.map(|w| locate(&net, d.n_x, &w));
    rep.passed = rep.jacobian.max(rep.gradient).max(rep.hessian) <= DERIVATIVE_TOLERANCE;
    Ok(rep)
}

pub fn cmd_dims(configs: &[RunConfig]) -> Result<Vec<DimsRow>, CliError> {
    configs
        .iter()
        .map(|c| {
            if c.scenarios == 0 {
                return Err(CliError::Parse(
                    "at least one scenario is required (N ≥ 1)".into(),
                ));
            }
            dims_row(&CaseData::from_file(&c.case)?, c.scenarios).map_err(CliError::from)
        })
        .collect()
}

fn to_csv<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialize");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv")
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("reports serialize") + "\n"
}

fn bench_text(rows: &[BenchRow]) -> String {
    let mut s = format!(
        "{:<16} {:>5} {:<10} {:>3} {:>6} {:>10} {:>10} {:>10} {:<10} {:>16}\n",
        "instance",
        "N",
        "strategy",
        "G",
        "iters",
        "ad_s",
        "kkt_s",
        "total_s",
        "status",
        "objective"
    );
    for r in rows {
        let obj = r
            .objective
            .map_or_else(|| "-".into(), |v| format!("{v:.6}"));
        let _ = writeln!(
            s,
            "{:<16} {:>5} {:<10} {:>3} {:>6} {:>10.4} {:>10.4} {:>10.4} {:<10} {:>16}",
            r.instance,
            r.n,
            r.strategy.to_string(),
            r.groups,
            r.iters,
            r.ad_s,
            r.kkt_s,
            r.total_s,
            r.status,
            obj
        );
    }
    s
}

pub fn render_bench(rep: &BenchReport, format: Format) -> String {
    match format {
        Format::Text => format!(
            "deterministic: {}\n{}",
            if rep.deterministic { "on" } else { "off" },
            bench_text(&rep.rows)
        ),
        Format::Csv => to_csv(&rep.rows),
        Format::Json => json(rep),
    }
}

pub fn render_solve(rep: &SolveReport, format: Format) -> String {
    match format {
        Format::Text => format!(
            "{}kkt error: {:.3e}\n",
            bench_text(std::slice::from_ref(&rep.row)),
            rep.kkt_error
        ),
        Format::Csv => to_csv(std::slice::from_ref(&rep.row)),
        Format::Json => json(rep),
    }
}

pub fn render_dims(rows: &[DimsRow], format: Format) -> String {
    match format {
        Format::Text => {
            let mut s = format!(
                "{:<16} {:>6} {:>6} {:>5} {:>5} {:>7} {:>6} {:>5} {:>10} {:>10} {:>12} {:>9}\n",
                "instance",
                "#bus",
                "#lines",
                "#gen",
                "N",
                "n_x",
                "n_u",
                "m",
                "nvar",
                "ncon",
                "Kuu_bytes",
                "Kuu_MiB"
            );
            for r in rows {
                let _ = writeln!(
                    s,
                    "{:<16} {:>6} {:>6} {:>5} {:>5} {:>7} {:>6} {:>5} {:>10} {:>10} {:>12} {:>9.1}",
                    r.instance,
                    r.n_bus,
                    r.n_line,
                    r.n_gen,
                    r.n_blocks,
                    r.n_x,
                    r.n_u,
                    r.m,
                    r.nvar,
                    r.ncon,
                    r.khat_bytes,
                    r.khat_bytes as f64 / (1024.0 * 1024.0)
                );
            }
            s
        }
        Format::Csv => to_csv(rows),
        Format::Json => json(&rows),
    }
}

pub fn render_derivatives(rep: &DerivativeReport, format: Format) -> String {
    match format {
        Format::Text => format!(
            "{}: {} points, max rel. error jacobian {:.2e} gradient {:.2e} hessian {:.2e} -> {}\n{}",
            rep.instance,
            rep.points,
            rep.jacobian,
            rep.gradient,
            rep.hessian,
            if rep.passed { "pass" } else { "FAIL" },
            rep.worst.as_ref().map_or_else(String::new, |w| format!("worst: {w}\n"))
        ),
        Format::Csv => to_csv(std::slice::from_ref(rep)),
        Format::Json => json(rep),
    }
}

/// Rendered report and process exit code.
#[derive(Debug)]
pub struct Output {
    pub text: String,
    pub code: u8,
}

pub fn execute(cli: &Cli) -> Result<Output, CliError> {
    match &cli.command {
        Command::Solve(a) => {
            let cfg = a.resolve_one()?;
            let rep = cmd_solve(&cfg)?;
            Ok(Output {
                text: render_solve(&rep, cfg.format),
                code: rep.exit_code(),
            })
        }
        Command::Bench(a) => {
            let cfgs = a.resolve()?;
            let format = cfgs[0].format;
            Ok(Output {
                text: render_bench(&cmd_bench(&cfgs), format),
                code: 0,
            })
        }
        Command::CheckDerivatives(a) => {
            let cfg = a.resolve_one()?;
            let rep = cmd_check_derivatives(&cfg)?;
            let text = render_derivatives(&rep, cfg.format);
            if rep.passed {
                Ok(Output { text, code: 0 })
            } else {
                Err(CliError::Derivative(rep.worst.unwrap_or_default()))
            }
        }
        Command::Dims(a) => {
            let cfgs = a.resolve()?;
            let format = cfgs[0].format;
            Ok(Output {
                text: render_dims(&cmd_dims(&cfgs)?, format),
                code: 0,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(name: &str) -> PathBuf {
        PathBuf::from(format!("{}/../../data/{name}", env!("CARGO_MANIFEST_DIR")))
    }

    fn args(list: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("blockipm").chain(list.iter().copied())).unwrap()
    }

    fn run_args(cli: &Cli) -> &RunArgs {
        match &cli.command {
            Command::Solve(a)
            | Command::Bench(a)
            | Command::CheckDerivatives(a)
            | Command::Dims(a) => a,
        }
    }

    #[test]
    fn flags_override_config_over_defaults() {
        let dir = std::env::temp_dir().join(format!("blockipm-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.json");
        std::fs::write(&path, r#"{"scenarios": 4, "sigma": 0.2, "tol": 1e-7}"#).unwrap();
        let cli = args(&[
            "solve",
            "--config",
            path.to_str().unwrap(),
            "--sigma",
            "0.05",
        ]);
        let c = run_args(&cli).resolve_one().unwrap();
        assert_eq!(c.scenarios, 4);
        assert_eq!(c.sigma, 0.05);
        assert_eq!(c.tol, 1e-7);
        assert_eq!(c.max_iter, RunConfig::default().max_iter);
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn unknown_config_field_is_a_parse_error() {
        assert_eq!(
            RunConfig::from_json(r#"{"scenaros": 3}"#)
                .unwrap_err()
                .exit_code(),
            2
        );
    }

    #[test]
    fn lists_expand_for_bench() {
        let cli = args(&[
            "bench",
            "--case",
            "a.m",
            "--strategy",
            "augmented,reduced",
            "--groups",
            "1,2",
        ]);
        let all = run_args(&cli).resolve().unwrap();
        assert_eq!(all.len(), 4);
        assert!(run_args(&cli).resolve_one().is_err());
    }

    #[test]
    fn zero_scenarios_rejected() {
        let cfg = RunConfig {
            case: data("case9.m"),
            scenarios: 0,
            ..Default::default()
        };
        assert_eq!(cmd_check_derivatives(&cfg).unwrap_err().exit_code(), 2);
        assert_eq!(cmd_dims(&[cfg]).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn groups_cannot_exceed_scenarios() {
        let cfg = RunConfig {
            case: data("case9.m"),
            scenarios: 2,
            groups: 3,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(CliError::Parse(_))));
    }

    #[test]
    fn missing_file_exits_2() {
        let cfg = RunConfig {
            case: data("nope.m"),
            ..Default::default()
        };
        let e = cmd_solve(&cfg).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("nope.m"));
    }

    #[test]
    fn disconnecting_contingency_is_a_model_error() {
        let cfg = RunConfig {
            case: data("case9.m"),
            scenarios: 2,
            contingencies: vec![0],
            ..Default::default()
        };
        assert_eq!(cmd_solve(&cfg).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn solve_case9_reduced() {
        let cfg = RunConfig {
            case: data("case9.m"),
            strategy: Strategy::Reduced,
            workers: 2,
            ..Default::default()
        };
        let r = cmd_solve(&cfg).unwrap();
        assert_eq!(r.exit_code(), 0);
        assert!(r.row.ad_s + r.row.kkt_s <= r.row.total_s);
        let a = cmd_solve(&RunConfig {
            strategy: Strategy::Augmented,
            ..cfg
        })
        .unwrap();
        let (o1, o2) = (r.row.objective.unwrap(), a.row.objective.unwrap());
        assert!((o1 - o2).abs() <= 1e-6 * o2.abs());
    }

    #[test]
    fn iteration_limit_exits_4() {
        let cfg = RunConfig {
            case: data("case9.m"),
            max_iter: 2,
            workers: 1,
            ..Default::default()
        };
        assert_eq!(cmd_solve(&cfg).unwrap().exit_code(), 4);
    }

    #[test]
    fn json_report_round_trips_scenarios() {
        let cfg = RunConfig {
            case: data("case9.m"),
            scenarios: 3,
            sigma: 0.05,
            contingencies: vec![4],
            seed: 9,
            workers: 1,
            ..Default::default()
        };
        let r = cmd_solve(&cfg).unwrap();
        let text = render_solve(&r, Format::Json);
        let back: SolveReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back.scenarios, r.scenarios);
        assert_eq!(back.row, r.row);

        let dir = std::env::temp_dir().join(format!("blockipm-rep-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("r.json");
        std::fs::write(&path, &text).unwrap();
        let again = cmd_solve(&RunConfig {
            scenario_file: Some(path),
            sigma: 0.0,
            seed: 0,
            ..cfg
        })
        .unwrap();
        assert_eq!(again.scenarios, r.scenarios);
        assert_eq!(again.row.objective, r.row.objective);
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn bench_rows_and_columns() {
        let base = RunConfig {
            case: data("case9.m"),
            workers: 1,
            ..Default::default()
        };
        let cfgs: Vec<_> = [Strategy::Augmented, Strategy::Reduced]
            .iter()
            .map(|&s| RunConfig {
                strategy: s,
                ..base.clone()
            })
            .collect();
        let rep = cmd_bench(&cfgs);
        assert_eq!(rep.rows.len(), 2);
        let csv = render_bench(&rep, Format::Csv);
        assert_eq!(csv.lines().next().unwrap(), BENCH_COLUMNS.join(","));
        let again = cmd_bench(&cfgs);
        for (a, b) in rep.rows.iter().zip(&again.rows) {
            assert_eq!((a.iters, a.objective), (b.iters, b.objective));
        }
    }

    #[test]
    fn bench_records_failed_rows() {
        let cfgs = vec![
            RunConfig {
                case: data("missing.m"),
                workers: 1,
                ..Default::default()
            },
            RunConfig {
                case: data("case9.m"),
                workers: 1,
                ..Default::default()
            },
        ];
        let rep = cmd_bench(&cfgs);
        assert!(rep.rows[0].status.starts_with("error"));
        assert_eq!(rep.rows[0].objective, None);
        assert_eq!(rep.rows[1].status, "Optimal");
    }

    #[test]
    fn derivative_check_passes_and_locates_fault() {
        let cfg = RunConfig {
            case: data("case9.m"),
            scenarios: 2,
            points: 2,
            ..Default::default()
        };
        let ok = cmd_check_derivatives(&cfg).unwrap();
        assert!(ok.passed, "{ok:?}");
        let bad = cmd_check_derivatives(&RunConfig { fault: true, ..cfg }).unwrap();
        assert!(!bad.passed);
        let w = bad.worst.unwrap();
        assert!(w.contains("bus"), "{w}");
    }

    #[test]
    fn dims_rows() {
        let cfgs = [RunConfig {
            case: data("case118.m"),
            scenarios: 8,
            ..Default::default()
        }];
        let rows = cmd_dims(&cfgs).unwrap();
        assert_eq!((rows[0].n_x, rows[0].n_u), (181, 107));
        let text = render_dims(&rows, Format::Text);
        assert!(text.lines().nth(1).unwrap().starts_with("case118"));
    }
}
