use super::*;
use crate::basis::{ideal_svd_basis, natural_basis};
use crate::channel::{bitflip_channel, ideal_process_matrix, process_matrix, rms_distance, KrausChannel};
use crate::matcore::testutil::*;
use crate::matcore::C64;
use crate::tomography::{
    all_pairs, configs_from_pairs, full_config, probability, sample_counts, sub6_config, CountEntry, StateSet,
};

fn qubit_states() -> StateSet {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let c = |re: f64, im: f64| C64::new(re, im);
    StateSet {
        states: vec![
            vec![c(1.0, 0.0), c(0.0, 0.0)],
            vec![c(0.0, 0.0), c(1.0, 0.0)],
            vec![c(h, 0.0), c(h, 0.0)],
            vec![c(h, 0.0), c(0.0, h)],
        ],
        labels: vec!["0".into(), "1".into(), "+".into(), "+i".into()],
    }
}

fn qubit_map(pairs: &[(usize, usize)]) -> Arc<SensingMap> {
    let basis = Arc::new(natural_basis(2).unwrap());
    let cfgs = configs_from_pairs(&qubit_states(), pairs, &basis).unwrap();
    Arc::new(sensing_matrix(cfgs, basis).unwrap())
}

fn random_process(seed: u64, basis: &Arc<OperatorBasis>, kraus: usize) -> ProcessMatrix {
    let mut r = rng(seed);
    let ch = KrausChannel::new(random_kraus(&mut r, basis.n_s(), kraus)).unwrap();
    process_matrix(&ch, basis).unwrap()
}

fn assert_feasible(s: &Solution) {
    let r = s.x_est.residuals();
    assert!(r.min_eigenvalue >= -1e-8, "min eigenvalue {}", r.min_eigenvalue);
    assert!(r.tp_residual <= 1e-6, "tp residual {}", r.tp_residual);
    let n_s = s.x_est.n_s() as f64;
    assert!((s.x_est.matrix().trace().re - n_s).abs() <= 1e-6);
}

fn sampled_problem(x: &ProcessMatrix, map: &Arc<SensingMap>, trials: u64, seed: u64, mode: Mode) -> EstimationProblem {
    let counts = sample_counts(x, map.configs(), trials, seed).unwrap();
    EstimationProblem::from_counts(map.clone(), counts, mode).unwrap()
}

#[test]
fn v_ls_zero_at_truth() {
    let map = qubit_map(&all_pairs(1..=4));
    let x = random_process(1, map.basis(), 2);
    let pr = EstimationProblem::infinite(&x, map, Mode::Ls).unwrap();
    assert!(v_ls(&x, &pr).unwrap() < 1e-28);
}

#[test]
fn v_ls_single_config() {
    // Bit flip with p = 0.7 keeps |0> with probability 0.3.
    let map = qubit_map(&[(1, 1)]);
    let x = process_matrix(&bitflip_channel(1, 0.7).unwrap(), map.basis()).unwrap();
    let mut pr = EstimationProblem::infinite(&x, map, Mode::Ls).unwrap();
    pr.data = vec![0.5];
    assert!((v_ls(&x, &pr).unwrap() - 0.04).abs() < 1e-14);
}

#[test]
fn v_ls_matches_direct_sum() {
    let map = qubit_map(&all_pairs(1..=4));
    let truth = random_process(2, map.basis(), 3);
    let pr = sampled_problem(&truth, &map, 200, 9, Mode::Ls);
    let x = random_process(3, map.basis(), 2);
    let direct: f64 = map
        .configs()
        .iter()
        .zip(&pr.data)
        .map(|(c, p)| (p - probability(&x, c).unwrap()).powi(2))
        .sum();
    assert!((v_ls(&x, &pr).unwrap() - direct).abs() < 1e-14);
}

#[test]
fn v_ml_minimal_at_matching_probabilities() {
    let map = qubit_map(&all_pairs(1..=4));
    let truth = random_process(4, map.basis(), 2);
    let pr = EstimationProblem::infinite(&truth, map.clone(), Mode::Ml).unwrap();
    let at_truth = v_ml(&truth, &pr).unwrap();
    let entropy: f64 = pr
        .data
        .iter()
        .map(|&p| {
            let q = p.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP);
            -(p * q.ln() + (1.0 - p) * (1.0 - q).ln())
        })
        .sum();
    assert!((at_truth - entropy).abs() < 1e-9);
    for seed in 10..20 {
        let other = random_process(seed, map.basis(), 3);
        assert!(v_ml(&other, &pr).unwrap() >= at_truth - 1e-12);
    }
}

#[test]
fn v_ml_zero_count_keeps_complement_only() {
    let map = qubit_map(&[(1, 1)]);
    let x = process_matrix(&bitflip_channel(1, 0.7).unwrap(), map.basis()).unwrap();
    let counts = CountData {
        entries: vec![CountEntry {
            a: 1,
            b: 1,
            trials: 10,
            count: 0,
        }],
        seed: 0,
    };
    let pr = EstimationProblem::from_counts(map.clone(), counts, Mode::Ml).unwrap();
    assert!((v_ml(&x, &pr).unwrap() + 10.0 * 0.7f64.ln()).abs() < 1e-12);

    // A click where the model says p = 0.
    let flip = process_matrix(&bitflip_channel(1, 1.0).unwrap(), map.basis()).unwrap();
    let counts = CountData {
        entries: vec![CountEntry {
            a: 1,
            b: 1,
            trials: 10,
            count: 1,
        }],
        seed: 0,
    };
    let pr = EstimationProblem::from_counts(map, counts, Mode::Ml).unwrap();
    assert_eq!(v_ml(&flip, &pr).unwrap(), f64::INFINITY);
}

#[test]
fn v_ml_gradient_matches_finite_differences() {
    let map = qubit_map(&all_pairs(1..=4));
    let truth = random_process(5, map.basis(), 2);
    let pr = sampled_problem(&truth, &map, 1000, 3, Mode::Ml);
    let x = random_process(6, map.basis(), 4);
    let grad = v_ml_gradient(&x, &pr).unwrap();
    let mut r = rng(7);
    for _ in 0..5 {
        let dir = random_hermitian(&mut r, 4);
        let h = 1e-6;
        let at = |t: f64| {
            let m = x.matrix() + &dir.scale_real(t);
            v_ml(&ProcessMatrix::new_unchecked(x.basis().clone(), m), &pr).unwrap()
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        let an = (&grad * &dir).trace().re;
        assert!((fd - an).abs() <= 1e-5 * an.abs().max(1.0), "fd {fd} analytic {an}");
    }
}

#[test]
fn l1_norm_examples() {
    let b = Arc::new(ideal_svd_basis(&CMatrix::identity(4)).unwrap());
    let ideal = ideal_process_matrix(&CMatrix::identity(4), &b).unwrap();
    assert!((l1_norm(ideal.matrix(), &unit_weights(16)).unwrap() - 4.0).abs() < 1e-10);
    assert_eq!(l1_norm(&CMatrix::zeros(3, 3), &unit_weights(3)).unwrap(), 0.0);

    let mut r = rng(8);
    let x = random_hermitian(&mut r, 4);
    let base = l1_norm(&x, &unit_weights(4)).unwrap();
    let scaled = l1_norm(&x.scale_real(-2.5), &unit_weights(4)).unwrap();
    assert!((scaled - 2.5 * base).abs() < 1e-12);

    // Brute force over all entries.
    let brute: f64 = x.as_slice().iter().map(|z| z.re.abs() + z.im.abs()).sum();
    assert!((base - brute).abs() < 1e-12);

    let mut w = unit_weights(4);
    w[3] = -1.0;
    assert!(l1_norm(&x, &w).is_err());
}

#[test]
fn reweighting_weights() {
    let x = CMatrix::diag_real(&[1.0, 0.0]);
    let w = reweight(&x, 0.01);
    assert_eq!(w.len(), 4);
    assert!((w[0] - 1.0 / 1.01).abs() < 1e-15);
    assert!(w[1..].iter().all(|&v| (v - 100.0).abs() < 1e-12));
    let f = log_sum_objective(&x, 0.01);
    assert!((f - (1.01f64.ln() + 5.0 * 0.01f64.ln())).abs() < 1e-12);
}

#[test]
fn ls_recovers_truth_from_exact_full_data() {
    let map = qubit_map(&all_pairs(1..=4));
    assert_eq!(map.rank(), 16);
    let truth = random_process(11, map.basis(), 2);
    let pr = EstimationProblem::infinite(&truth, map, Mode::Ls).unwrap();
    let s = solve_ls(&pr).unwrap();
    assert_eq!(s.status, Status::Converged);
    assert_feasible(&s);
    assert!(rms_distance(&s.x_est, &truth).unwrap() < 1e-6);
    assert!(s.objective <= 1e-12);
}

#[test]
fn ls_objective_not_above_truth() {
    let map = qubit_map(&all_pairs(1..=4));
    let truth = random_process(12, map.basis(), 2);
    let pr = sampled_problem(&truth, &map, 300, 5, Mode::Ls);
    let s = solve_ls(&pr).unwrap();
    assert_feasible(&s);
    assert!(s.objective <= v_ls(&truth, &pr).unwrap() + 1e-7);
    for seed in 30..40 {
        let other = random_process(seed, map.basis(), 2);
        assert!(s.objective <= v_ls(&other, &pr).unwrap() + 1e-7);
    }
}

#[test]
fn huge_weight_zeroes_its_coordinate() {
    let map = qubit_map(&all_pairs(1..=4));
    let truth = process_matrix(&bitflip_channel(1, 0.3).unwrap(), map.basis()).unwrap();
    let pr = sampled_problem(&truth, &map, 500, 2, Mode::L1);
    // Budget wide enough that the truth, with its zero entries, is feasible.
    let sigma = (1.3 * solve_ls(&pr).unwrap().data_residual).max(1.1 * v_ls(&truth, &pr).unwrap());
    let pr = pr.with_sigma(sigma);
    let plain = solve_l1(&pr, &unit_weights(4)).unwrap();
    let zeros = coords::interleaved(truth.matrix());
    let free = coords::interleaved(plain.x_est.matrix());
    let k = (0..zeros.len())
        .filter(|&k| zeros[k].abs() < 1e-12)
        .max_by(|&i, &j| free[i].abs().total_cmp(&free[j].abs()))
        .unwrap();
    assert!(free[k].abs() > 1e-6, "{}", free[k]);
    let mut w = unit_weights(4);
    w[k] = 1e6;
    let s = solve_l1(&pr, &w).unwrap();
    assert_feasible(&s);
    assert!(s.data_residual <= sigma + BUDGET_TOL);
    let v = coords::interleaved(s.x_est.matrix())[k];
    assert!(v.abs() < 1e-8, "{v}");
}

#[test]
fn huge_budget_gives_min_l1_over_cptp() {
    let map = qubit_map(&all_pairs(1..=4));
    let truth = random_process(14, map.basis(), 2);
    let pr = sampled_problem(&truth, &map, 100, 4, Mode::L1).with_sigma(1e3);
    let s = solve_l1(&pr, &unit_weights(4)).unwrap();
    assert_feasible(&s);
    // Diagonal processes reach ℓ1 = Tr X = n_S; nothing lower is PSD.
    assert!((s.objective - 2.0).abs() < 1e-6, "{}", s.objective);
}

#[test]
fn tiny_budget_is_infeasible() {
    let map = qubit_map(&all_pairs(1..=4));
    let truth = random_process(15, map.basis(), 2);
    let pr = sampled_problem(&truth, &map, 50, 6, Mode::L1);
    let v = solve_ls(&pr).unwrap().data_residual;
    assert!(v > 1e-4);
    let mut cfg = EstimatorConfig::default();
    cfg.admm.max_iters = 5000;
    let s = solve_l1(&pr.with_sigma(1e-3 * v).with_config(cfg), &unit_weights(4)).unwrap();
    assert_eq!(s.status, Status::Infeasible);
    assert_feasible(&s);
}

#[test]
fn equality_rank_matches_sensing_rank() {
    let b = Arc::new(ideal_svd_basis(&CMatrix::identity(4)).unwrap());
    for cfgs in [full_config(&b), sub6_config(&b)] {
        let map = sensing_matrix(cfgs, b.clone()).unwrap();
        let f = admm::factorization(&map).unwrap();
        assert_eq!(f.data_rank(crate::tomography::RANK_TOL), map.rank());
    }
}

#[test]
fn rms_objective_beats_sampled_feasible_points() {
    let map = qubit_map(&[(1, 1), (2, 1), (3, 3), (4, 3)]);
    let truth = random_process(16, map.basis(), 4);
    let pr = EstimationProblem::infinite(&truth, map.clone(), Mode::Rmsobj).unwrap();
    let s = solve_rms_objective(&pr).unwrap();
    assert_feasible(&s);
    assert!(s.max_constraint_residual <= EQUALITY_TOL);
    // Feasible points: mixtures of the truth and other channels with equal data.
    let mut r = rng(17);
    for _ in 0..20 {
        use rand::Rng;
        let t: f64 = r.random_range(0.0..1.0);
        let mix = &truth.matrix().scale_real(t) + &s.x_est.matrix().scale_real(1.0 - t);
        assert!(s.objective <= rms_norm(&mix) + 1e-9);
    }
    assert!(s.objective <= rms_norm(truth.matrix()) + 1e-9);
}

#[test]
fn ml_single_config_degenerate() {
    let map = qubit_map(&[(3, 1)]);
    let counts = CountData {
        entries: vec![CountEntry {
            a: 3,
            b: 1,
            trials: 10,
            count: 3,
        }],
        seed: 0,
    };
    let pr = EstimationProblem::from_counts(map, counts, Mode::Ml).unwrap();
    let s = solve_ml(&pr).unwrap();
    assert_eq!(s.status, Status::Converged);
    assert_feasible(&s);
    let p = pr.map.probabilities(&s.x_est).unwrap()[0];
    assert!((p - 0.3).abs() < 1e-6);
}

#[test]
fn misaligned_counts_rejected() {
    let map = qubit_map(&[(1, 1), (2, 1)]);
    let counts = CountData {
        entries: vec![
            CountEntry {
                a: 2,
                b: 1,
                trials: 10,
                count: 3,
            },
            CountEntry {
                a: 1,
                b: 1,
                trials: 10,
                count: 3,
            },
        ],
        seed: 0,
    };
    assert!(EstimationProblem::from_counts(map, counts, Mode::Ls).is_err());
}

#[test]
fn reweighting_history_non_increasing() {
    let map = qubit_map(&all_pairs(1..=3));
    let truth = random_process(18, map.basis(), 1);
    let pr = sampled_problem(&truth, &map, 2000, 8, Mode::L1rw);
    let s = l1rw_pipeline(&pr).unwrap();
    assert_feasible(&s);
    assert!(!s.rw_history.is_empty());
    assert!(s.rw_history.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(s.objective, *s.rw_history.last().unwrap());
}

#[test]
fn solves_are_deterministic() {
    let map = qubit_map(&all_pairs(1..=4));
    let truth = random_process(19, map.basis(), 2);
    let pr = sampled_problem(&truth, &map, 400, 1, Mode::Ls);
    let a = solve(&pr).unwrap();
    let b = solve(&pr).unwrap();
    assert_eq!(a.x_est.matrix().as_slice(), b.x_est.matrix().as_slice());
    assert_eq!(a.inner_iterations, b.inner_iterations);
}

#[test]
fn solution_json_fields() {
    let map = qubit_map(&all_pairs(1..=4));
    let truth = random_process(20, map.basis(), 2);
    let pr = EstimationProblem::infinite(&truth, map, Mode::Ls).unwrap();
    let v = serde_json::to_value(solve(&pr).unwrap().to_json()).unwrap();
    for key in ["mode", "objective", "data_residual", "cptp_residuals", "iterations", "status", "X"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["mode"], "ls");
    assert_eq!(v["status"], "converged");
    assert_eq!(v["X"].as_array().unwrap().len(), 4);
}
