//! Constrained estimation of process matrices over the CPTP set.
//!
//! All estimators share one convex engine ([`admm`]); they differ only in the
//! data term (least squares, likelihood, a residual ball or an equality) and
//! in the regularizer (none, weighted ℓ1, or the squared Frobenius norm).

pub mod admm;
pub mod coords;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::basis::{matrix_to_nested, OperatorBasis};
use crate::channel::{rms_norm, CptpResiduals, ProcessMatrix};
use crate::error::{Error, Result};
use crate::matcore::{hermitian_eig_unchecked, CMatrix};
use crate::tomography::{empirical_probabilities, sensing_matrix, CountData, PairConfig, SensingMap};

use admm::{AdmmSettings, AdmmState, DataTerm, Regularizer};

/// Per-constraint tolerance for equality-constrained (infinite-data) solves.
pub const EQUALITY_TOL: f64 = 1e-8;
/// Slack on the residual budget `V_LS(X) ≤ σ`.
pub const BUDGET_TOL: f64 = 1e-7;
/// Bounds applied to probabilities inside logarithms.
pub const LOG_CLAMP: f64 = 1e-12;
/// Multipliers on the equality tolerance and on σ beyond which an unconverged
/// constrained solve is declared infeasible rather than unfinished.
const UNFINISHED_SLACK: (f64, f64) = (100.0, 2.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Ls,
    Ml,
    L1,
    L1rw,
    Rmsobj,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Ls => "ls",
            Mode::Ml => "ml",
            Mode::L1 => "l1",
            Mode::L1rw => "l1rw",
            Mode::Rmsobj => "rmsobj",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Converged,
    MaxIters,
    Infeasible,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::MaxIters => "max-iters",
            Status::Infeasible => "infeasible",
        }
    }
}

/// Tunable parameters of the estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    /// `σ = sigma_multiplier · V_LS(X_ℓ2)` in the reweighting pipeline.
    pub sigma_multiplier: f64,
    /// Damping `ε` in the weight update `1/(|x| + ε)`.
    pub epsilon: f64,
    pub max_rw_iters: usize,
    /// Relative decrease below which reweighting stops.
    pub rw_tol: f64,
    pub admm: AdmmSettings,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            sigma_multiplier: 1.3,
            epsilon: 0.01,
            max_rw_iters: 6,
            rw_tol: 1e-6,
            admm: AdmmSettings::default(),
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidProblem(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.sigma_multiplier >= 0.0 && self.sigma_multiplier.is_finite()) {
            return Err(Error::InvalidProblem("sigma multiplier must be nonnegative".into()));
        }
        if self.max_rw_iters == 0 {
            return Err(Error::InvalidProblem("max_rw_iters must be positive".into()));
        }
        if !(self.rw_tol >= 0.0) {
            return Err(Error::InvalidProblem("rw_tol must be nonnegative".into()));
        }
        self.admm.validate()
    }
}

/// Data, constraints and knobs of one estimation run.
#[derive(Debug, Clone)]
pub struct EstimationProblem {
    pub map: Arc<SensingMap>,
    /// Empirical or exact probabilities, one per configuration.
    pub data: Vec<f64>,
    pub counts: Option<CountData>,
    /// Exact probabilities: data constraints become equalities.
    pub infinite: bool,
    pub mode: Mode,
    /// Residual budget for the ℓ1 modes.
    pub sigma: f64,
    pub config: EstimatorConfig,
}

impl EstimationProblem {
    /// Finite-data problem from counts aligned with the map's configurations.
    pub fn from_counts(map: Arc<SensingMap>, counts: CountData, mode: Mode) -> Result<Self> {
        if counts.entries.len() != map.len() {
            return Err(Error::DimensionMismatch {
                expected: map.len(),
                got: counts.entries.len(),
            });
        }
        for (e, c) in counts.entries.iter().zip(map.configs()) {
            if (e.a, e.b) != (c.a, c.b) {
                return Err(Error::InvalidProblem(format!(
                    "count for pair ({}, {}) where ({}, {}) expected",
                    e.a, e.b, c.a, c.b
                )));
            }
        }
        let data = empirical_probabilities(&counts)?;
        Ok(Self {
            map,
            data,
            counts: Some(counts),
            infinite: false,
            mode,
            sigma: 0.0,
            config: EstimatorConfig::default(),
        })
    }

    /// Problem whose data are the exact probabilities of `x_true`.
    pub fn infinite(x_true: &ProcessMatrix, map: Arc<SensingMap>, mode: Mode) -> Result<Self> {
        if x_true.basis().as_ref() != map.basis().as_ref() {
            return Err(Error::BasisMismatch(format!(
                "{} vs {}",
                x_true.basis().label(),
                map.basis().label()
            )));
        }
        let data = map.probabilities(x_true)?;
        Ok(Self {
            map,
            data,
            counts: None,
            infinite: true,
            mode,
            sigma: 0.0,
            config: EstimatorConfig::default(),
        })
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_config(mut self, config: EstimatorConfig) -> Self {
        self.config = config;
        self
    }

    pub fn basis(&self) -> &Arc<OperatorBasis> {
        self.map.basis()
    }

    pub fn configs(&self) -> &[PairConfig] {
        self.map.configs()
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.map.len() {
            return Err(Error::DimensionMismatch {
                expected: self.map.len(),
                got: self.data.len(),
            });
        }
        if self.data.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite);
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidProblem(format!("sigma must be nonnegative, got {}", self.sigma)));
        }
        self.config.validate()
    }

    /// `(n_k, N_k)` per configuration; exact data count as fractional single trials.
    fn ml_counts(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        match (&self.counts, self.infinite) {
            (_, true) => Ok((self.data.clone(), vec![1.0; self.data.len()])),
            (Some(c), false) => Ok(c
                .entries
                .iter()
                .map(|e| (e.count as f64, e.trials as f64))
                .unzip()),
            (None, false) => Err(Error::InvalidProblem("likelihood requires counts".into())),
        }
    }
}

/// Exact-data problem over the given configurations.
pub fn infinite_data_problem(
    x_true: &ProcessMatrix,
    configs: Vec<PairConfig>,
    basis: Arc<OperatorBasis>,
    mode: Mode,
) -> Result<EstimationProblem> {
    let map = Arc::new(sensing_matrix(configs, basis)?);
    EstimationProblem::infinite(x_true, map, mode)
}

/// Estimate with diagnostics.
#[derive(Debug, Clone)]
pub struct Solution {
    pub mode: Mode,
    pub x_est: ProcessMatrix,
    pub objective: f64,
    /// `V_ML` for the likelihood estimator, `V_LS` otherwise.
    pub data_residual: f64,
    /// Largest absolute per-configuration residual `|p_k(X) − p_k|`.
    pub max_constraint_residual: f64,
    pub cptp_residuals: CptpResiduals,
    pub rw_iterations: usize,
    pub inner_iterations: usize,
    /// Accepted reweighting objectives, non-increasing.
    pub rw_history: Vec<f64>,
    pub status: Status,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationCounts {
    pub reweighting: usize,
    pub inner: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionJson {
    pub mode: Mode,
    pub objective: f64,
    pub data_residual: f64,
    pub cptp_residuals: CptpResiduals,
    pub iterations: IterationCounts,
    pub status: Status,
    #[serde(rename = "X")]
    pub x: Vec<Vec<[f64; 2]>>,
}

impl Solution {
    pub fn to_json(&self) -> SolutionJson {
        SolutionJson {
            mode: self.mode,
            objective: self.objective,
            data_residual: self.data_residual,
            cptp_residuals: self.cptp_residuals,
            iterations: IterationCounts {
                reweighting: self.rw_iterations,
                inner: self.inner_iterations,
            },
            status: self.status,
            x: matrix_to_nested(self.x_est.matrix()),
        }
    }
}

fn check_basis(x: &ProcessMatrix, pr: &EstimationProblem) -> Result<()> {
    if !Arc::ptr_eq(x.basis(), pr.basis()) && x.basis().as_ref() != pr.basis().as_ref() {
        return Err(Error::BasisMismatch(format!("{} vs {}", x.basis().label(), pr.basis().label())));
    }
    Ok(())
}

/// `Σ_k (p_k − p_k(X))²`.
pub fn v_ls(x: &ProcessMatrix, pr: &EstimationProblem) -> Result<f64> {
    check_basis(x, pr)?;
    let p = pr.map.probabilities(x)?;
    Ok(p.iter().zip(&pr.data).map(|(a, b)| (a - b).powi(2)).sum())
}

/// Bernoulli negative log-likelihood `−Σ [n log p + (N − n) log(1 − p)]`.
///
/// Returns `+∞` when a configuration with clicks has `p ≤ 0`, or one with
/// misses has `p ≥ 1`; otherwise `p` is clamped to `[1e-12, 1 − 1e-12]`.
pub fn v_ml(x: &ProcessMatrix, pr: &EstimationProblem) -> Result<f64> {
    check_basis(x, pr)?;
    let (n, trials) = pr.ml_counts()?;
    let p = pr.map.probabilities(x)?;
    let mut total = 0.0;
    for k in 0..p.len() {
        let miss = trials[k] - n[k];
        if (p[k] <= 0.0 && n[k] > 0.0) || (p[k] >= 1.0 && miss > 0.0) {
            return Ok(f64::INFINITY);
        }
        let q = p[k].clamp(LOG_CLAMP, 1.0 - LOG_CLAMP);
        if n[k] > 0.0 {
            total -= n[k] * q.ln();
        }
        if miss > 0.0 {
            total -= miss * (1.0 - q).ln();
        }
    }
    Ok(total)
}

/// Gradient of [`v_ml`] with respect to `X`: `Σ_k −(n/p − (N−n)/(1−p)) g_k g_k†`.
///
/// For a Hermitian direction `D`, the directional derivative is `Re Tr(G D)`.
pub fn v_ml_gradient(x: &ProcessMatrix, pr: &EstimationProblem) -> Result<CMatrix> {
    check_basis(x, pr)?;
    let (n, trials) = pr.ml_counts()?;
    let p = pr.map.probabilities(x)?;
    let d = pr.basis().dim();
    let mut grad = CMatrix::zeros(d, d);
    for (k, cfg) in pr.configs().iter().enumerate() {
        let q = p[k].clamp(LOG_CLAMP, 1.0 - LOG_CLAMP);
        let coef = -(n[k] / q - (trials[k] - n[k]) / (1.0 - q));
        // d(g†Xg) = Tr(g g† D).
        grad = &grad + &CMatrix::outer(&cfg.g, &cfg.g).scale_real(coef);
    }
    Ok(grad)
}

/// All-ones weights for a `d×d` process matrix.
pub fn unit_weights(d: usize) -> Vec<f64> {
    vec![1.0; d * d]
}

/// `Σ_αβ w (|Re X_αβ| + |Im X_αβ|)` with `w` indexed by interleaved coordinate.
pub fn l1_norm(x: &CMatrix, w: &[f64]) -> Result<f64> {
    let d = x.rows();
    if !x.is_square() {
        return Err(Error::NotSquare(x.rows(), x.cols()));
    }
    if w.len() != d * d {
        return Err(Error::DimensionMismatch {
            expected: d * d,
            got: w.len(),
        });
    }
    if let Some(bad) = w.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidProblem(format!("negative weight {bad}")));
    }
    Ok(coords::interleaved(&x.hermitian_part())
        .iter()
        .zip(coords::multiplicities(d))
        .zip(w)
        .map(|((v, m), wi)| m * wi * v.abs())
        .sum())
}

/// Log-sum surrogate `Σ m_i log(|x_i| + ε)` driving the reweighting.
pub fn log_sum_objective(x: &CMatrix, epsilon: f64) -> f64 {
    coords::interleaved(&x.hermitian_part())
        .iter()
        .zip(coords::multiplicities(x.rows()))
        .map(|(v, m)| m * (v.abs() + epsilon).ln())
        .sum()
}

/// Weights `1/(|x_i| + ε)` on interleaved coordinates.
pub fn reweight(x: &CMatrix, epsilon: f64) -> Vec<f64> {
    coords::interleaved(&x.hermitian_part())
        .iter()
        .map(|v| 1.0 / (v.abs() + epsilon))
        .collect()
}

const REPAIR_ROUNDS: usize = 50;

fn min_eigenvalue(y: &[f64], d: usize) -> f64 {
    hermitian_eig_unchecked(&coords::from_coords(y, d)).values.last().copied().unwrap_or(0.0)
}

struct Inner {
    x: ProcessMatrix,
    iterations: usize,
    converged: bool,
    state: AdmmState,
}

fn run(
    pr: &EstimationProblem,
    data: &DataTerm,
    reg: &Regularizer,
    warm: Option<AdmmState>,
) -> Result<Inner> {
    pr.validate()?;
    let f = admm::factorization(&pr.map)?;
    let out = admm::solve(&f, data, reg, &pr.config.admm, warm);
    let d = f.dim();
    // Alternate PSD clipping and TP projection; this moves the iterate only
    // along its deficient eigendirections.
    let mut y = out.y;
    let mut lmin = min_eigenvalue(&y, d);
    for _ in 0..REPAIR_ROUNDS {
        if lmin >= 0.0 {
            break;
        }
        y = f.project_affine(&admm::psd_prox(&y, d));
        lmin = min_eigenvalue(&y, d);
    }
    let mut x = coords::from_coords(&y, d);
    if lmin < 0.0 {
        // Mix toward the completely depolarizing map I/n_S, which is TP and
        // has all eigenvalues 1/n_S.
        let centre = 1.0 / pr.basis().n_s() as f64;
        let theta = -lmin / (centre - lmin);
        x = &x.scale_real(1.0 - theta) + &CMatrix::identity(d).scale_real(theta * centre);
    }
    Ok(Inner {
        x: ProcessMatrix::new_unchecked(pr.basis().clone(), x),
        iterations: out.iterations,
        converged: out.converged,
        state: out.state,
    })
}

fn constraint_term(pr: &EstimationProblem) -> DataTerm {
    if pr.infinite {
        DataTerm::Point(pr.data.clone())
    } else {
        DataTerm::Ball {
            p: pr.data.clone(),
            radius: pr.sigma.sqrt(),
        }
    }
}

fn finish(pr: &EstimationProblem, mode: Mode, inner: Inner, objective: f64, constrained: bool) -> Result<Solution> {
    let p = pr.map.probabilities(&inner.x)?;
    let max_res = p.iter().zip(&pr.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let ls = p.iter().zip(&pr.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let data_residual = if mode == Mode::Ml { v_ml(&inner.x, pr)? } else { ls };
    // An unconverged iterate can sit somewhat outside the budget; only a
    // gross miss counts as infeasible.
    let (eq_slack, budget_slack) = if inner.converged { (1.0, 1.0) } else { UNFINISHED_SLACK };
    let violated = constrained
        && if pr.infinite {
            max_res > eq_slack * EQUALITY_TOL
        } else {
            ls > budget_slack * pr.sigma + BUDGET_TOL
        };
    let status = if violated {
        Status::Infeasible
    } else if inner.converged {
        Status::Converged
    } else {
        Status::MaxIters
    };
    Ok(Solution {
        mode,
        cptp_residuals: inner.x.residuals(),
        x_est: inner.x,
        objective,
        data_residual,
        max_constraint_residual: max_res,
        rw_iterations: 0,
        inner_iterations: inner.iterations,
        rw_history: Vec::new(),
        status,
    })
}

/// Least-squares estimate over the CPTP set.
pub fn solve_ls(pr: &EstimationProblem) -> Result<Solution> {
    let inner = run(pr, &DataTerm::LeastSquares(pr.data.clone()), &Regularizer::None, None)?;
    let obj = v_ls(&inner.x, pr)?;
    finish(pr, Mode::Ls, inner, obj, false)
}

/// Maximum-likelihood estimate over the CPTP set.
pub fn solve_ml(pr: &EstimationProblem) -> Result<Solution> {
    let (n, trials) = pr.ml_counts()?;
    if let Some(k) = trials.iter().position(|&t| t <= 0.0) {
        return Err(Error::InvalidProblem(format!("zero trials for configuration {k}")));
    }
    let mean = trials.iter().sum::<f64>() / trials.len().max(1) as f64;
    let term = DataTerm::Likelihood {
        c: n.iter().zip(&trials).map(|(a, b)| a / b).collect(),
        w: trials.iter().map(|t| t / mean).collect(),
    };
    let inner = run(pr, &term, &Regularizer::None, None)?;
    let obj = v_ml(&inner.x, pr)?;
    finish(pr, Mode::Ml, inner, obj, false)
}

fn l1_coord_weights(w: &[f64], d: usize) -> Vec<f64> {
    w.iter()
        .zip(coords::multiplicities(d))
        .zip(coords::to_interleaved_scale(d))
        .map(|((wi, m), s)| wi * m * s)
        .collect()
}

fn l1_inner(pr: &EstimationProblem, w: &[f64], warm: Option<AdmmState>) -> Result<Inner> {
    let d = pr.basis().dim();
    if w.len() != d * d {
        return Err(Error::DimensionMismatch {
            expected: d * d,
            got: w.len(),
        });
    }
    if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidProblem("weights must be finite and nonnegative".into()));
    }
    run(pr, &constraint_term(pr), &Regularizer::WeightedL1(l1_coord_weights(w, d)), warm)
}

/// Weighted ℓ1 minimization subject to `V_LS(X) ≤ σ` (or equality for exact data).
pub fn solve_l1(pr: &EstimationProblem, w: &[f64]) -> Result<Solution> {
    let inner = l1_inner(pr, w, None)?;
    let obj = l1_norm(inner.x.matrix(), w)?;
    finish(pr, Mode::L1, inner, obj, true)
}

/// Iteratively reweighted ℓ1 with weights `1/(|x_i| + ε)`.
///
/// Each round solves [`solve_l1`] with the current weights. A round is
/// accepted only if it lowers the log-sum surrogate; the best accepted
/// iterate is returned and `objective` holds its surrogate value.
pub fn reweighted_l1(pr: &EstimationProblem) -> Result<Solution> {
    let eps = pr.config.epsilon;
    let d = pr.basis().dim();
    let mut w = unit_weights(d);
    let mut warm = None;
    let mut best: Option<(Inner, f64)> = None;
    let mut history = Vec::new();
    let mut rounds = 0;
    let mut total = 0;
    for _ in 0..pr.config.max_rw_iters {
        let inner = l1_inner(pr, &w, warm.take())?;
        rounds += 1;
        total += inner.iterations;
        let f = log_sum_objective(inner.x.matrix(), eps);
        let prev = best.as_ref().map(|b| b.1);
        if prev.is_some_and(|p| f >= p) {
            break;
        }
        history.push(f);
        w = reweight(inner.x.matrix(), eps);
        warm = Some(inner.state.clone());
        best = Some((inner, f));
        if let Some(p) = prev {
            if (p - f) / p.abs().max(f64::MIN_POSITIVE) < pr.config.rw_tol {
                break;
            }
        }
    }
    let (inner, f) = best.expect("at least one round runs");
    let mut sol = finish(pr, Mode::L1rw, inner, f, true)?;
    sol.rw_iterations = rounds;
    sol.inner_iterations = total;
    sol.rw_history = history;
    Ok(sol)
}

/// Full reweighting procedure: least squares first, then `σ = m·V_LS(X_ℓ2)`
/// and [`reweighted_l1`]. Exact data skip the first step.
pub fn l1rw_pipeline(pr: &EstimationProblem) -> Result<Solution> {
    if pr.infinite {
        return reweighted_l1(pr);
    }
    let ls = solve_ls(pr)?;
    let sigma = pr.config.sigma_multiplier * ls.data_residual;
    let mut sol = reweighted_l1(&pr.clone().with_sigma(sigma))?;
    sol.inner_iterations += ls.inner_iterations;
    Ok(sol)
}

/// Minimum-Frobenius-norm estimate consistent with the data; `objective` is
/// the RMS norm of the estimate.
pub fn solve_rms_objective(pr: &EstimationProblem) -> Result<Solution> {
    let inner = run(pr, &constraint_term(pr), &Regularizer::HalfSquare, None)?;
    let obj = rms_norm(inner.x.matrix());
    finish(pr, Mode::Rmsobj, inner, obj, true)
}

/// Dispatches on `pr.mode`; `L1` uses unit weights and `L1rw` the full pipeline.
pub fn solve(pr: &EstimationProblem) -> Result<Solution> {
    match pr.mode {
        Mode::Ls => solve_ls(pr),
        Mode::Ml => solve_ml(pr),
        Mode::L1 => solve_l1(pr, &unit_weights(pr.basis().dim())),
        Mode::L1rw => l1rw_pipeline(pr),
        Mode::Rmsobj => solve_rms_objective(pr),
    }
}

#[cfg(test)]
mod tests;
