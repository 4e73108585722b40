#![allow(dead_code)]

use std::sync::Arc;

use qpt_core::basis::{natural_basis, OperatorBasis};
use qpt_core::channel::{process_matrix, KrausChannel, ProcessMatrix};
use qpt_core::matcore::{svd, CMatrix, C64};
use qpt_core::tomography::{configs_from_pairs, sensing_matrix, SensingMap, StateSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(r: &mut impl Rng, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| C64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
}

pub fn random_unitary(r: &mut impl Rng, n: usize) -> CMatrix {
    let s = svd(&random_matrix(r, n, n)).unwrap();
    &s.u * &s.v.adjoint()
}

/// Channel whose Kraus operators are the row blocks of a random isometry.
pub fn random_channel(seed: u64, n: usize, k: usize) -> KrausChannel {
    let mut r = rng(seed);
    let u = random_unitary(&mut r, n * k);
    KrausChannel::new((0..k).map(|b| CMatrix::from_fn(n, n, |i, j| u[(b * n + i, j)])).collect()).unwrap()
}

pub fn random_process(seed: u64, basis: &Arc<OperatorBasis>, k: usize) -> ProcessMatrix {
    process_matrix(&random_channel(seed, basis.n_s(), k), basis).unwrap()
}

/// `|0>`, `|1>`, `|+>`, `|+i>`.
pub fn qubit_states() -> StateSet {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let c = C64::new;
    StateSet {
        states: vec![
            vec![c(1.0, 0.0), c(0.0, 0.0)],
            vec![c(0.0, 0.0), c(1.0, 0.0)],
            vec![c(h, 0.0), c(h, 0.0)],
            vec![c(h, 0.0), c(0.0, h)],
        ],
        labels: ["0", "1", "+", "+i"].map(String::from).to_vec(),
    }
}

pub fn qubit_map(pairs: &[(usize, usize)]) -> Arc<SensingMap> {
    let basis = Arc::new(natural_basis(2).unwrap());
    let cfgs = configs_from_pairs(&qubit_states(), pairs, &basis).unwrap();
    Arc::new(sensing_matrix(cfgs, basis).unwrap())
}
