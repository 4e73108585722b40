//! Measurement configurations and simulated count data.
//!
//! Each configuration pairs an input state `φ_b` with an analyzer state `φ_a`
//! and records how often the analyzer clicks. The click probability is the
//! quadratic form `p_ab(X) = g_ab† X g_ab` with `(g_ab)_α = φ_a† Γ_α φ_b`.
//!
//! State indices are 1-based throughout, matching the numbering of the
//! 16-state set (states 1-4 computational, 5-10 real superpositions,
//! 11-16 superpositions with a `−i` relative phase).

use std::sync::{Arc, OnceLock};

use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::basis::OperatorBasis;
use crate::channel::ProcessMatrix;
use crate::error::{Error, Result};
use crate::estimator::admm::Factorization;
use crate::matcore::{singular_values, CMatrix, C64, ONE, ZERO};
use crate::seed;

/// Relative singular-value threshold used for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

/// Ordered list of pure states.
#[derive(Debug, Clone)]
pub struct StateSet {
    pub states: Vec<Vec<C64>>,
    pub labels: Vec<String>,
}

impl StateSet {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// State by 1-based index.
    pub fn state(&self, index: usize) -> &[C64] {
        &self.states[index - 1]
    }
}

/// The sixteen two-qubit states: `|a⟩`, `(|a⟩+|b⟩)/√2` and `(|a⟩−i|b⟩)/√2`.
pub fn ketset_states() -> StateSet {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
    let mut states = Vec::with_capacity(16);
    let mut labels = Vec::with_capacity(16);
    for a in 0..4 {
        let mut v = vec![ZERO; 4];
        v[a] = ONE;
        states.push(v);
        labels.push(format!("|{}>", a + 1));
    }
    for &(a, b) in &pairs {
        let mut v = vec![ZERO; 4];
        v[a] = C64::new(h, 0.0);
        v[b] = C64::new(h, 0.0);
        states.push(v);
        labels.push(format!("(|{}>+|{}>)/sqrt2", a + 1, b + 1));
    }
    for &(a, b) in &pairs {
        let mut v = vec![ZERO; 4];
        v[a] = C64::new(h, 0.0);
        v[b] = C64::new(0.0, -h);
        states.push(v);
        labels.push(format!("(|{}>-i|{}>)/sqrt2", a + 1, b + 1));
    }
    StateSet { states, labels }
}

/// One input/analyzer pair and its sensing vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PairConfig {
    /// Analyzer (measurement) state, 1-based.
    pub a: usize,
    /// Input state, 1-based.
    pub b: usize,
    pub g: Vec<C64>,
}

/// `(g_ab)_α = φ_a† Γ_α φ_b`.
pub fn g_vector(phi_a: &[C64], phi_b: &[C64], basis: &OperatorBasis) -> Result<Vec<C64>> {
    let n = basis.n_s();
    for phi in [phi_a, phi_b] {
        if phi.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: phi.len(),
            });
        }
    }
    // φ_a† Γ φ_b = Σ_ij conj(φ_a,i) Γ_ij φ_b,j = vec(conj(φ_a) φ_bᵀ)ᵀ-weighted sum.
    let outer: Vec<C64> = (0..n * n)
        .map(|k| phi_a[k % n].conj() * phi_b[k / n])
        .collect();
    let synth = basis.synthesis();
    Ok((0..basis.dim())
        .map(|alpha| {
            synth
                .column(alpha)
                .iter()
                .zip(&outer)
                .map(|(g, w)| g * w)
                .sum()
        })
        .collect())
}

/// Builds configurations from 1-based `(a, b)` pairs over a state set.
pub fn configs_from_pairs(
    states: &StateSet,
    pairs: &[(usize, usize)],
    basis: &OperatorBasis,
) -> Result<Vec<PairConfig>> {
    pairs
        .iter()
        .map(|&(a, b)| {
            for idx in [a, b] {
                if idx == 0 || idx > states.len() {
                    return Err(Error::InvalidProblem(format!(
                        "state index {idx} outside 1..={}",
                        states.len()
                    )));
                }
            }
            Ok(PairConfig {
                a,
                b,
                g: g_vector(states.state(a), states.state(b), basis)?,
            })
        })
        .collect()
}

/// All ordered pairs over the given state indices, input-major.
pub fn all_pairs(indices: impl IntoIterator<Item = usize> + Clone) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for b in indices.clone() {
        for a in indices.clone() {
            out.push((a, b));
        }
    }
    out
}

/// All 256 pairs over the 16 states.
pub fn full_pairs() -> Vec<(usize, usize)> {
    all_pairs(1..=16)
}

/// The 36 pairs over states 5-10.
pub fn sub6_pairs() -> Vec<(usize, usize)> {
    all_pairs(5..=10)
}

pub fn full_config(basis: &OperatorBasis) -> Vec<PairConfig> {
    configs_from_pairs(&ketset_states(), &full_pairs(), basis).expect("fixed 16-state pairs are valid")
}

pub fn sub6_config(basis: &OperatorBasis) -> Vec<PairConfig> {
    configs_from_pairs(&ketset_states(), &sub6_pairs(), basis).expect("fixed 16-state pairs are valid")
}

/// Click probability `g† X g`, clamped to `[0, 1]`.
pub fn probability(x: &ProcessMatrix, cfg: &PairConfig) -> Result<f64> {
    let q = x.matrix().quadratic_form(&cfg.g);
    if q.im.abs() > 1e-9 {
        return Err(Error::ToleranceBreach(format!(
            "imaginary residue {:.3e} for pair ({}, {})",
            q.im, cfg.a, cfg.b
        )));
    }
    if q.re < -1e-9 || q.re > 1.0 + 1e-9 {
        return Err(Error::ToleranceBreach(format!(
            "probability {:.6} for pair ({}, {})",
            q.re, cfg.a, cfg.b
        )));
    }
    Ok(q.re.clamp(0.0, 1.0))
}

/// Linear map from `vec(X)` to outcome probabilities.
#[derive(Debug)]
pub struct SensingMap {
    basis: Arc<OperatorBasis>,
    configs: Vec<PairConfig>,
    g: CMatrix,
    rank: OnceLock<usize>,
    pub(crate) factor: OnceLock<Arc<Factorization>>,
}

impl SensingMap {
    pub fn basis(&self) -> &Arc<OperatorBasis> {
        &self.basis
    }

    pub fn configs(&self) -> &[PairConfig] {
        &self.configs
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    /// Stacked matrix 𝒢 with one row per configuration, `row · vec(X) = g†Xg`.
    pub fn matrix(&self) -> &CMatrix {
        &self.g
    }

    /// Rank of 𝒢 with singular values below `1e-10·s₁` treated as zero.
    pub fn rank(&self) -> usize {
        *self.rank.get_or_init(|| {
            let s = singular_values(&self.g).expect("sensing matrix entries are finite");
            let s1 = s.first().copied().unwrap_or(0.0);
            s.iter().filter(|&&v| s1 > 0.0 && v > RANK_TOL * s1).count()
        })
    }

    /// `𝒢 · vec(X)` (real parts).
    pub fn probabilities(&self, x: &ProcessMatrix) -> Result<Vec<f64>> {
        if x.matrix().rows() * x.matrix().cols() != self.g.cols() {
            return Err(Error::DimensionMismatch {
                expected: self.g.cols(),
                got: x.matrix().rows() * x.matrix().cols(),
            });
        }
        Ok(self
            .g
            .mat_vec(x.matrix().as_slice())
            .iter()
            .map(|z| z.re)
            .collect())
    }
}

pub fn sensing_matrix(configs: Vec<PairConfig>, basis: Arc<OperatorBasis>) -> Result<SensingMap> {
    let d = basis.dim();
    if let Some(c) = configs.iter().find(|c| c.g.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: c.g.len(),
        });
    }
    // vec(X) is column-major: index α + β·d holds X_αβ.
    let m = configs.len();
    let g = CMatrix::from_fn(m, d * d, |k, idx| {
        let (alpha, beta) = (idx % d, idx / d);
        configs[k].g[alpha].conj() * configs[k].g[beta]
    });
    Ok(SensingMap {
        basis,
        configs,
        g,
        rank: OnceLock::new(),
        factor: OnceLock::new(),
    })
}

/// Outcome counts of one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountEntry {
    pub a: usize,
    pub b: usize,
    #[serde(rename = "N")]
    pub trials: u64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountData {
    pub entries: Vec<CountEntry>,
    pub seed: u64,
}

/// One JSON-lines record of [`CountData`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRecord {
    pub a: usize,
    pub b: usize,
    #[serde(rename = "N")]
    pub trials: u64,
    pub count: u64,
    pub seed: u64,
}

impl CountData {
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let rec = CountRecord {
                a: e.a,
                b: e.b,
                trials: e.trials,
                count: e.count,
                seed: self.seed,
            };
            out.push_str(&serde_json::to_string(&rec).expect("plain record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_json_lines(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seed = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let rec: CountRecord = serde_json::from_str(line)?;
            if *seed.get_or_insert(rec.seed) != rec.seed {
                return Err(Error::InvalidProblem("mixed seeds in count data".into()));
            }
            if rec.count > rec.trials {
                return Err(Error::InvalidProblem(format!(
                    "count {} exceeds trials {}",
                    rec.count, rec.trials
                )));
            }
            entries.push(CountEntry {
                a: rec.a,
                b: rec.b,
                trials: rec.trials,
                count: rec.count,
            });
        }
        Ok(Self {
            entries,
            seed: seed.unwrap_or(0),
        })
    }
}

/// Draws `N_ab ~ Binomial(N, p_ab(X_true))` independently per configuration.
///
/// Configuration `k` uses the substream seeded by `seed::derive(seed, [k])`,
/// so results do not depend on iteration order.
pub fn sample_counts(
    x_true: &ProcessMatrix,
    configs: &[PairConfig],
    trials: u64,
    seed_value: u64,
) -> Result<CountData> {
    if trials == 0 {
        return Err(Error::InvalidProblem("trials per configuration must be positive".into()));
    }
    let entries = configs
        .iter()
        .enumerate()
        .map(|(k, cfg)| {
            let p = probability(x_true, cfg)?;
            let mut rng = seed::rng_for(seed::derive(seed_value, &[k as u64]));
            let dist = Binomial::new(trials, p).map_err(|_| Error::InvalidProbability(p))?;
            Ok(CountEntry {
                a: cfg.a,
                b: cfg.b,
                trials,
                count: dist.sample(&mut rng),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CountData {
        entries,
        seed: seed_value,
    })
}

/// `N_ab / N` per configuration.
pub fn empirical_probabilities(d: &CountData) -> Result<Vec<f64>> {
    d.entries
        .iter()
        .map(|e| {
            if e.trials == 0 {
                Err(Error::InvalidProblem(format!(
                    "zero trials for pair ({}, {})",
                    e.a, e.b
                )))
            } else {
                Ok(e.count as f64 / e.trials as f64)
            }
        })
        .collect()
}
