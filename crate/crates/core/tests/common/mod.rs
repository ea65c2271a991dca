//! Shared generators and brute-force oracles for the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgnet_core::gainop::{GainOperator, NonnegSeq};
use sgnet_core::kfunc::{self, ScalarFn};
use sgnet_core::sgc::{check_sgc_cycles, Status};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Linear or saturating gain with slope at most `slope_max` at the origin.
pub fn random_gain(rng: &mut ChaCha8Rng, slope_max: f64) -> ScalarFn {
    let slope = rng.gen_range(0.05..slope_max);
    if rng.gen_bool(0.5) {
        ScalarFn::linear(slope)
    } else {
        let halfsat = rng.gen_range(0.2..5.0);
        ScalarFn::saturating(slope * halfsat, halfsat)
    }
}

/// Explicit operator on `n` nodes with each entry present with probability `density`.
pub fn random_explicit(rng: &mut ChaCha8Rng, n: usize, density: f64, slope_max: f64) -> GainOperator {
    let mut entries = Vec::new();
    for i in 1..=n {
        for j in 1..=n {
            if rng.gen_bool(density) {
                entries.push((i, j, random_gain(rng, slope_max)));
            }
        }
    }
    GainOperator::explicit(n, entries).expect("valid random operator")
}

/// Random explicit operators (window 1..=n_max) that the cycle check certifies.
pub fn certified_operators(seed: u64, count: usize, n_max: usize) -> Vec<GainOperator> {
    let mut rng = rng(seed);
    let grid = kfunc::default_grid();
    let mut out = Vec::new();
    while out.len() < count {
        let n = rng.gen_range(1..=n_max);
        let g = random_explicit(&mut rng, n, 0.35, 1.6);
        if check_sgc_cycles(&g, &grid).unwrap().status == Status::Certified {
            out.push(g);
        }
    }
    out
}

pub fn random_seq(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> NonnegSeq {
    let values = (0..n).map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..scale) }).collect();
    NonnegSeq::new(values, 0.0).unwrap()
}

/// Sup over all index sequences `i = j_0, j_1, …, j_n` of
/// `γ_{j_0 j_1} ∘ … ∘ γ_{j_{n-1} j_n}(r)`, found by enumerating `[1, N]^{n+1}`
/// and looking each entry up in the gain table.
pub fn brute_force_chain_sup(g: &GainOperator, n: usize, r: f64) -> f64 {
    let size = g.window();
    let table: Vec<Vec<Option<ScalarFn>>> = (1..=size).map(|i| (1..=size).map(|j| g.gain(i, j)).collect()).collect();
    let total = size.pow(n as u32 + 1);
    let mut best = 0.0f64;
    let mut seq = vec![0usize; n + 1];
    for code in 0..total {
        let mut c = code;
        for slot in seq.iter_mut() {
            *slot = c % size;
            c /= size;
        }
        let mut value = Some(r);
        for k in (0..n).rev() {
            value = match (&table[seq[k]][seq[k + 1]], value) {
                (Some(f), Some(v)) => Some(f.eval(v).unwrap()),
                _ => None,
            };
        }
        if let Some(v) = value {
            best = best.max(v);
        }
    }
    best
}
