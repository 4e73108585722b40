//! Seeded Monte Carlo sweeps over noise level, sample size and estimator.
//!
//! A sweep samples counts once per `(p_bf, N, run)` and hands the same data
//! to every requested estimator. The counts of run `r` in sampling cell `c`
//! use the seed `seed::derive(master_seed, [c, r])`, where `c` enumerates
//! `(p_bf, N)` pairs with `p_bf` outermost.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::basis::{change_basis, ideal_svd_basis, matrix_to_nested, natural_basis, OperatorBasis};
use crate::channel::{bitflip_channel, ideal_process_matrix, process_matrix, rms_distance, ProcessMatrix};
use crate::error::{Error, Result};
use crate::estimator::{self, EstimationProblem, EstimatorConfig, Mode, Solution, Status};
use crate::matcore::CMatrix;
use crate::seed;
use crate::tomography::{configs_from_pairs, full_pairs, ketset_states, sample_counts, sensing_matrix, sub6_pairs, SensingMap};

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "QPT_WORKERS";

/// Share of failed runs above which a cell is flagged.
pub const FAILURE_FLAG_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfigName {
    Full16,
    Sub6,
}

/// Measurement configuration: a named set or explicit 1-based `(a, b)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConfigChoice {
    Named(ConfigName),
    Custom { pairs: Vec<(usize, usize)> },
}

impl ConfigChoice {
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        match self {
            ConfigChoice::Named(ConfigName::Full16) => full_pairs(),
            ConfigChoice::Named(ConfigName::Sub6) => sub6_pairs(),
            ConfigChoice::Custom { pairs } => pairs.clone(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            ConfigChoice::Named(ConfigName::Full16) => "full16".into(),
            ConfigChoice::Named(ConfigName::Sub6) => "sub6".into(),
            ConfigChoice::Custom { pairs } => format!("custom({})", pairs.len()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisChoice {
    Natural,
    #[default]
    IdealSvd,
}

impl BasisChoice {
    pub fn build(self, n_s: usize) -> Result<OperatorBasis> {
        match self {
            BasisChoice::Natural => natural_basis(n_s),
            BasisChoice::IdealSvd => ideal_svd_basis(&CMatrix::identity(n_s)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BasisChoice::Natural => "natural",
            BasisChoice::IdealSvd => "ideal-svd",
        }
    }
}

impl std::str::FromStr for BasisChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "natural" => Ok(BasisChoice::Natural),
            "ideal-svd" => Ok(BasisChoice::IdealSvd),
            other => Err(Error::InvalidSpec(format!("unknown basis '{other}' (natural | ideal-svd)"))),
        }
    }
}

fn default_qubits() -> usize {
    2
}

fn default_runs() -> usize {
    50
}

/// Description of one sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "default_qubits")]
    pub qubits: usize,
    pub p_bf: Vec<f64>,
    pub config: ConfigChoice,
    #[serde(default)]
    pub basis: BasisChoice,
    /// Trials per `(a, b)` pair; ignored for exact data.
    #[serde(rename = "N", default)]
    pub n: Vec<u64>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    pub estimators: Vec<Mode>,
    #[serde(default)]
    pub infinite_data: bool,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Worker threads; `QPT_WORKERS` takes precedence.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub solver: EstimatorConfig,
}

impl SweepSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SweepSpec = serde_json::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Least squares on all 256 pairs over the default grid.
    pub fn default_l2() -> Self {
        Self {
            qubits: 2,
            p_bf: vec![0.05, 0.2],
            config: ConfigChoice::Named(ConfigName::Full16),
            basis: BasisChoice::IdealSvd,
            n: vec![500, 5_000, 50_000, 500_000],
            runs: 50,
            estimators: vec![Mode::Ls],
            infinite_data: false,
            master_seed: 0,
            output: None,
            workers: None,
            solver: EstimatorConfig::default(),
        }
    }

    /// Reweighted ℓ1 on the 36 pairs over the default grid.
    pub fn default_l1() -> Self {
        Self {
            config: ConfigChoice::Named(ConfigName::Sub6),
            estimators: vec![Mode::L1rw],
            ..Self::default_l2()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.qubits != 2 {
            return bad(format!("qubits = {}: the state set covers two qubits only", self.qubits));
        }
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.p_bf.is_empty() {
            return bad("p_bf list is empty".into());
        }
        if let Some(p) = self.p_bf.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return bad(format!("p_bf {p} outside [0, 1]"));
        }
        if self.estimators.is_empty() {
            return bad("estimator set is empty".into());
        }
        if !self.infinite_data {
            if self.n.is_empty() {
                return bad("N list is empty".into());
            }
            if self.n.contains(&0) {
                return bad("N values must be positive".into());
            }
            if self.estimators.contains(&Mode::Rmsobj) {
                return bad("rmsobj needs infinite_data".into());
            }
        }
        let pairs = self.config.pairs();
        if pairs.is_empty() {
            return bad("configuration has no pairs".into());
        }
        if let Some(p) = pairs.iter().find(|(a, b)| !(1..=16).contains(a) || !(1..=16).contains(b)) {
            return bad(format!("pair {p:?} outside states 1..=16"));
        }
        if self.workers == Some(0) {
            return bad("workers must be positive".into());
        }
        self.solver.validate().map_err(|e| Error::InvalidSpec(e.to_string()))
    }

    /// Sampling cells `(p_bf, N)`; exact data have one cell per `p_bf`.
    fn sampling_cells(&self) -> Vec<(f64, Option<u64>)> {
        let mut cells = Vec::new();
        for &p in &self.p_bf {
            if self.infinite_data {
                cells.push((p, None));
            } else {
                cells.extend(self.n.iter().map(|&n| (p, Some(n))));
            }
        }
        cells
    }
}

/// Outcome of one estimator on one data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub p_bf: f64,
    #[serde(rename = "N")]
    pub n: Option<u64>,
    pub estimator: Mode,
    pub run: usize,
    pub seed: u64,
    /// RMS distance to the true process matrix; NaN if the solver failed.
    pub rms_error: f64,
    /// Solver status, or `error` when no estimate was produced.
    pub status: String,
    pub wall_ms: f64,
    /// Feasibility diagnostics of the estimate (NaN if none); not part of the CSV.
    #[serde(default = "nan")]
    pub min_eigenvalue: f64,
    #[serde(default = "nan")]
    pub tp_residual: f64,
}

fn nan() -> f64 {
    f64::NAN
}

impl RunRecord {
    fn failed(&self) -> bool {
        self.status == "error" || self.status == Status::Infeasible.as_str()
    }
}

/// Aggregate over the runs of one `(p_bf, N, estimator)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub p_bf: f64,
    #[serde(rename = "N")]
    pub n: Option<u64>,
    pub estimator: Mode,
    pub runs: usize,
    /// Mean and sample standard deviation over runs with an estimate.
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub errors: Vec<f64>,
    pub status_counts: BTreeMap<String, usize>,
    pub failures: usize,
    pub flagged: bool,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub p_bf: f64,
    /// RMS distance between the bit-flip channel and the ideal memory.
    pub rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub records: Vec<RunRecord>,
    pub cells: Vec<CellSummary>,
    pub baseline: Vec<Baseline>,
}

impl SweepResult {
    pub fn cell(&self, p_bf: f64, n: Option<u64>, estimator: Mode) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.p_bf == p_bf && c.n == n && c.estimator == estimator)
    }
}

/// How runs are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Data-parallel over runs with the given number of workers.
    #[cfg(feature = "parallel")]
    Parallel(usize),
}

/// Worker count: `QPT_WORKERS`, then the spec, then the machine.
pub fn worker_count(spec: &SweepSpec) -> Result<usize> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        return match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::InvalidSpec(format!("{WORKERS_ENV}='{v}' is not a positive integer"))),
        };
    }
    Ok(spec
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())))
}

/// Runs a sweep with the default schedule for this build.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    #[cfg(feature = "parallel")]
    let exec = Execution::Parallel(worker_count(spec)?);
    #[cfg(not(feature = "parallel"))]
    let exec = {
        worker_count(spec)?;
        Execution::Sequential
    };
    run_sweep_with(spec, exec)
}

struct Setup {
    map: Arc<SensingMap>,
    truths: Vec<ProcessMatrix>,
    report_basis: Arc<OperatorBasis>,
}

struct Job {
    cell: usize,
    p_idx: usize,
    n: Option<u64>,
    run: usize,
}

pub fn run_sweep_with(spec: &SweepSpec, exec: Execution) -> Result<SweepResult> {
    spec.validate()?;
    let n_s = 1 << spec.qubits;
    let basis = Arc::new(spec.basis.build(n_s)?);
    let configs = configs_from_pairs(&ketset_states(), &spec.config.pairs(), &basis)?;
    let map = Arc::new(sensing_matrix(configs, basis.clone())?);
    estimator::admm::factorization(&map)?;
    let truths = spec
        .p_bf
        .iter()
        .map(|&p| process_matrix(&bitflip_channel(spec.qubits, p)?, &basis))
        .collect::<Result<Vec<_>>>()?;
    let report_basis = Arc::new(BasisChoice::IdealSvd.build(n_s)?);
    let setup = Setup {
        map,
        truths,
        report_basis,
    };

    let mut jobs = Vec::new();
    for (cell, (p, n)) in spec.sampling_cells().into_iter().enumerate() {
        let p_idx = spec.p_bf.iter().position(|&q| q == p).expect("cell comes from p_bf");
        // Exact data consume no randomness, so one solve serves every run.
        let runs = if spec.infinite_data { 1 } else { spec.runs };
        jobs.extend((0..runs).map(|run| Job { cell, p_idx, n, run }));
    }

    let run_job = |job: &Job| run_job(spec, &setup, job);
    let mut records: Vec<RunRecord> = match exec {
        Execution::Sequential => jobs.iter().map(run_job).collect::<Result<Vec<_>>>()?,
        #[cfg(feature = "parallel")]
        Execution::Parallel(workers) => {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| Error::InvalidSpec(format!("thread pool: {e}")))?;
            pool.install(|| jobs.par_iter().map(run_job).collect::<Result<Vec<_>>>())?
        }
    }
    .into_iter()
    .flatten()
    .collect();

    if spec.infinite_data {
        records = records
            .into_iter()
            .flat_map(|r| {
                (0..spec.runs).map(move |run| RunRecord {
                    run,
                    ..r.clone()
                })
            })
            .collect();
    }
    records.sort_by(|a, b| {
        let key = |r: &RunRecord| {
            (
                spec.p_bf.iter().position(|&p| p == r.p_bf),
                r.n,
                spec.estimators.iter().position(|&m| m == r.estimator),
                r.run,
            )
        };
        key(a).cmp(&key(b))
    });

    let cells = summarize(spec, &records);
    let baseline = spec
        .p_bf
        .iter()
        .zip(&setup.truths)
        .map(|(&p, x)| {
            let ideal = ideal_process_matrix(&CMatrix::identity(n_s), x.basis())?;
            Ok(Baseline {
                p_bf: p,
                rms: rms_distance(x, &ideal)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        records,
        cells,
        baseline,
    })
}

fn run_job(spec: &SweepSpec, setup: &Setup, job: &Job) -> Result<Vec<RunRecord>> {
    let truth = &setup.truths[job.p_idx];
    let seed = seed::derive(spec.master_seed, &[job.cell as u64, job.run as u64]);
    let base = match job.n {
        Some(n) => {
            let counts = sample_counts(truth, setup.map.configs(), n, seed)?;
            EstimationProblem::from_counts(setup.map.clone(), counts, Mode::Ls)?
        }
        None => EstimationProblem::infinite(truth, setup.map.clone(), Mode::Ls)?,
    }
    .with_config(spec.solver);

    let mut out = Vec::with_capacity(spec.estimators.len());
    for &mode in &spec.estimators {
        let start = Instant::now();
        let outcome = estimate(&base.clone().with_mode(mode));
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        let scored = outcome.and_then(|s| Ok((report_error(&s, truth, &setup.report_basis)?, s)));
        let (rms_error, status, min_eigenvalue, tp_residual) = match scored {
            Ok((e, s)) => (
                e,
                s.status.as_str().to_string(),
                s.cptp_residuals.min_eigenvalue,
                s.cptp_residuals.tp_residual,
            ),
            Err(_) => (f64::NAN, "error".to_string(), f64::NAN, f64::NAN),
        };
        out.push(RunRecord {
            p_bf: spec.p_bf[job.p_idx],
            n: job.n,
            estimator: mode,
            run: job.run,
            seed,
            rms_error,
            status,
            wall_ms,
            min_eigenvalue,
            tp_residual,
        });
    }
    Ok(out)
}

/// One estimate; the finite-data ℓ1 modes take `σ = m·V_LS(X_ℓ2)`.
fn estimate(pr: &EstimationProblem) -> Result<Solution> {
    match pr.mode {
        Mode::L1 if !pr.infinite => {
            let ls = estimator::solve_ls(pr)?;
            let sigma = pr.config.sigma_multiplier * ls.data_residual;
            estimator::solve(&pr.clone().with_sigma(sigma))
        }
        _ => estimator::solve(pr),
    }
}

fn report_error(s: &Solution, truth: &ProcessMatrix, report: &Arc<OperatorBasis>) -> Result<f64> {
    if s.x_est.basis().as_ref() == report.as_ref() {
        return rms_distance(&s.x_est, truth);
    }
    rms_distance(&change_basis(&s.x_est, report)?, &change_basis(truth, report)?)
}

fn summarize(spec: &SweepSpec, records: &[RunRecord]) -> Vec<CellSummary> {
    let mut cells = Vec::new();
    for (p, n) in spec.sampling_cells() {
        for &mode in &spec.estimators {
            let rs: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.p_bf == p && r.n == n && r.estimator == mode)
                .collect();
            let errors: Vec<f64> = rs.iter().map(|r| r.rms_error).collect();
            let (mean, std, min, max) = stats(&errors);
            let mut status_counts = BTreeMap::new();
            for r in &rs {
                *status_counts.entry(r.status.clone()).or_insert(0) += 1;
            }
            let failures = rs.iter().filter(|r| r.failed()).count();
            cells.push(CellSummary {
                p_bf: p,
                n,
                estimator: mode,
                runs: rs.len(),
                mean,
                std,
                min,
                max,
                errors,
                status_counts,
                failures,
                flagged: failures as f64 > FAILURE_FLAG_FRACTION * rs.len() as f64,
                wall_ms: rs.iter().map(|r| r.wall_ms).sum(),
            });
        }
    }
    cells
}

/// Mean, sample standard deviation, min and max of the finite values.
pub fn stats(values: &[f64]) -> (f64, f64, f64, f64) {
    let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, std, min, max)
}

/// Decimal rendering with 12 significant digits.
pub fn format_sig(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.11e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub const CSV_HEADER: &str = "p_bf,N,estimator,run,seed,rms_error,status,wall_ms";

pub fn results_csv(result: &SweepResult) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in &result.records {
        let n = r.n.map_or_else(|| "inf".to_string(), |n| n.to_string());
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            format_sig(r.p_bf),
            n,
            r.estimator,
            r.run,
            r.seed,
            format_sig(r.rms_error),
            r.status,
            format_sig(r.wall_ms)
        );
    }
    s
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryJson {
    pub cells: Vec<CellSummary>,
    pub baseline: Vec<Baseline>,
}

/// Path of the JSON summary written next to a results CSV.
pub fn summary_path(csv: &Path) -> PathBuf {
    csv.with_extension("summary.json")
}

/// Writes the per-run CSV to `path` and the summary next to it.
pub fn emit_results(result: &SweepResult, path: &Path) -> Result<PathBuf> {
    write_file(path, results_csv(result).as_bytes())?;
    let summary = SummaryJson {
        cells: result.cells.clone(),
        baseline: result.baseline.clone(),
    };
    let sp = summary_path(path);
    write_file(&sp, serde_json::to_string_pretty(&summary)?.as_bytes())?;
    Ok(sp)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)?;
    f.flush()?;
    Ok(())
}

/// Parses a CSV written by [`emit_results`].
pub fn parse_results_csv(text: &str) -> Result<Vec<RunRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::InvalidSpec("results CSV header missing".into()));
    }
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::InvalidSpec(format!("bad number '{s}'"))) };
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(Error::InvalidSpec(format!("expected 8 fields in '{line}'")));
            }
            Ok(RunRecord {
                p_bf: num(f[0])?,
                n: if f[1] == "inf" { None } else { Some(num(f[1])? as u64) },
                estimator: serde_json::from_value(serde_json::Value::String(f[2].into()))?,
                run: num(f[3])? as usize,
                seed: f[4].parse().map_err(|_| Error::InvalidSpec(format!("bad seed '{}'", f[4])))?,
                rms_error: num(f[5])?,
                status: f[6].to_string(),
                wall_ms: num(f[7])?,
                min_eigenvalue: f64::NAN,
                tp_residual: f64::NAN,
            })
        })
        .collect()
}

/// Grid of `|X_αβ|` for one bit-flip channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProcessMatrixGrid {
    pub p_bf: f64,
    pub qubits: usize,
    pub basis: BasisChoice,
    pub abs: Vec<Vec<f64>>,
    /// The complex entries as `[re, im]` pairs.
    pub x: Vec<Vec<[f64; 2]>>,
}

pub fn process_matrix_grid(qubits: usize, p_bf: f64, basis: BasisChoice) -> Result<ProcessMatrixGrid> {
    let b = Arc::new(basis.build(1 << qubits)?);
    let x = process_matrix(&bitflip_channel(qubits, p_bf)?, &b)?;
    let m = x.matrix();
    let d = m.rows();
    Ok(ProcessMatrixGrid {
        p_bf,
        qubits,
        basis,
        abs: (0..d).map(|i| (0..d).map(|j| m[(i, j)].norm()).collect()).collect(),
        x: matrix_to_nested(m),
    })
}

/// Writes the `|X_αβ|` grid of `bitflip(qubits, p_bf)` as JSON.
pub fn emit_process_matrix(qubits: usize, p_bf: f64, basis: BasisChoice, path: &Path) -> Result<ProcessMatrixGrid> {
    let grid = process_matrix_grid(qubits, p_bf, basis)?;
    write_file(path, serde_json::to_string_pretty(&grid)?.as_bytes())?;
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> SweepSpec {
        SweepSpec {
            p_bf: vec![0.05],
            n: vec![1000],
            runs: 2,
            ..SweepSpec::default_l2()
        }
    }

    #[test]
    fn spec_json_defaults() {
        let s = SweepSpec::from_json(r#"{"p_bf":[0.05],"config":"sub6","N":[500],"estimators":["l1rw"]}"#).unwrap();
        assert_eq!(s.qubits, 2);
        assert_eq!(s.runs, 50);
        assert_eq!(s.basis, BasisChoice::IdealSvd);
        assert_eq!(s.config.pairs().len(), 36);
        let c = SweepSpec::from_json(r#"{"p_bf":[0.2],"config":{"pairs":[[1,1],[2,1]]},"N":[5],"estimators":["ls"]}"#).unwrap();
        assert_eq!(c.config.pairs(), vec![(1, 1), (2, 1)]);
    }

    #[test]
    fn spec_validation() {
        let cases = [
            r#"{"p_bf":[0.05],"config":"sub6","N":[500],"estimators":[]}"#,
            r#"{"p_bf":[0.05],"config":"sub6","N":[0],"estimators":["ls"]}"#,
            r#"{"p_bf":[0.05],"config":"sub6","N":[5],"runs":0,"estimators":["ls"]}"#,
            r#"{"p_bf":[1.5],"config":"sub6","N":[5],"estimators":["ls"]}"#,
            r#"{"p_bf":[0.05],"config":"full32","N":[5],"estimators":["ls"]}"#,
            r#"{"p_bf":[0.05],"config":{"pairs":[[0,1]]},"N":[5],"estimators":["ls"]}"#,
            r#"{"p_bf":[0.05],"config":"sub6","N":[5],"estimators":["rmsobj"]}"#,
            r#"{"p_bf":[0.05],"config":"sub6","N":[5],"estimators":["ls"],"qubits":3}"#,
            r#"{"p_bf":[0.05],"config":"sub6","N":[5],"estimators":["ls"],"bogus":1}"#,
        ];
        for c in cases {
            assert!(matches!(SweepSpec::from_json(c), Err(Error::InvalidSpec(_))), "{c}");
        }
    }

    #[test]
    fn seeds_follow_the_stated_hash() {
        let spec = tiny_spec();
        let r = run_sweep_with(&spec, Execution::Sequential).unwrap();
        assert_eq!(r.records.len(), 2);
        for rec in &r.records {
            assert_eq!(rec.seed, seed::derive(spec.master_seed, &[0, rec.run as u64]));
        }
    }

    #[test]
    fn summary_recomputable_from_runs() {
        let r = run_sweep_with(&tiny_spec(), Execution::Sequential).unwrap();
        let c = &r.cells[0];
        assert_eq!(c.errors.len(), c.runs);
        let (m, s, lo, hi) = stats(&c.errors);
        assert_eq!((m, s), (c.mean, c.std));
        assert!(lo <= c.mean && c.mean <= hi);
        assert_eq!(r.baseline.len(), 1);
    }

    #[test]
    fn stats_sample_std() {
        let (m, s, lo, hi) = stats(&[1.0, 2.0, 3.0, f64::NAN]);
        assert_eq!((m, lo, hi), (2.0, 1.0, 3.0));
        assert!((s - 1.0).abs() < 1e-15);
        assert_eq!(stats(&[4.0]).1, 0.0);
    }

    #[test]
    fn format_has_twelve_significant_digits() {
        assert_eq!(format_sig(0.0019), "1.90000000000e-3");
        assert_eq!(format_sig(1.0 / 3.0), "3.33333333333e-1");
        assert_eq!(format_sig(f64::NAN), "nan");
    }

    #[test]
    fn empty_result_is_header_only() {
        let r = SweepResult {
            records: vec![],
            cells: vec![],
            baseline: vec![],
        };
        assert_eq!(results_csv(&r), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn worker_env_override() {
        let spec = SweepSpec {
            workers: Some(3),
            ..tiny_spec()
        };
        // Process-wide variable; this is the only test that touches it.
        std::env::remove_var(WORKERS_ENV);
        assert_eq!(worker_count(&spec).unwrap(), 3);
        std::env::set_var(WORKERS_ENV, "2");
        assert_eq!(worker_count(&spec).unwrap(), 2);
        std::env::set_var(WORKERS_ENV, "zero");
        assert!(worker_count(&spec).is_err());
        std::env::remove_var(WORKERS_ENV);
    }
}
