mod common;

use chanprune_core::select::{importance_from_matrix, solve_matrix, SolverConfig};
use chanprune_core::tensor::Matrix;
use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn col_sum_error(u: &Matrix) -> f64 {
    let c = u.cols();
    (0..c)
        .map(|j| ((0..u.rows()).map(|i| u.get(i, j) as f64).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max)
}

fn recon_rel(d: &DMatrix<f64>, u: &Matrix) -> f64 {
    (d - d * to_dmatrix(u)).norm() / d.norm()
}

fn penalty(u: &Matrix) -> f64 {
    (0..u.rows())
        .map(|i| u.row(i).iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt())
        .sum()
}

#[test]
fn matches_subgradient_reference_on_three_channels() {
    let mut r = rng(3);
    let m = random_matrix(&mut r, 50, 3);
    let d = to_dmatrix(&m);
    let cfg = SolverConfig::default();
    let res = solve_matrix(&m, &cfg).unwrap();
    let lambda = cfg.lambda_rel as f64 * lambda_ref(&d);
    let ours = objective(&d, &to_dmatrix(&res.u), lambda);
    let reference = projected_subgradient(&d, lambda, 100_000);
    let rel = (ours - reference).abs() / reference;
    assert!(rel < 1e-3, "admm {ours} vs reference {reference} (rel {rel:.2e})");
}

#[test]
fn matches_subgradient_reference_up_to_six_channels() {
    for seed in 0..8u64 {
        let mut r = rng(100 + seed);
        let c = 3 + (seed as usize % 4);
        let m = random_matrix(&mut r, 40 + 10 * c, c);
        let d = to_dmatrix(&m);
        for lam in [0.05f32, 0.3] {
            let res = solve_matrix(&m, &SolverConfig::with_lambda(lam)).unwrap();
            let lambda = lam as f64 * lambda_ref(&d);
            let ours = objective(&d, &to_dmatrix(&res.u), lambda);
            let reference = projected_subgradient(&d, lambda, 40_000);
            // the reference is an upper bound on the optimum
            assert!(ours <= reference * (1.0 + 1e-3), "seed {seed} λ {lam}: {ours} vs {reference}");
            assert!((ours - reference).abs() / reference < 1e-3, "seed {seed} λ {lam}: {ours} vs {reference}");
        }
    }
}

#[test]
fn objective_trace_descends_after_warmup() {
    for seed in 0..60u64 {
        let mut r = rng(1000 + seed);
        let c = r.gen_range(2..=6);
        let rows = r.gen_range(30..=100);
        let m = random_matrix(&mut r, rows, c);
        for lam in [0.01f32, 0.05, 0.2, 0.5, 1.0] {
            let res = solve_matrix(&m, &SolverConfig::with_lambda(lam)).unwrap();
            let tr = &res.objective_trace;
            assert_eq!(tr.len(), res.iters_used);
            for k in 6..tr.len() {
                assert!(tr[k] <= tr[k - 1] + 1e-6, "seed {seed} λ {lam}: trace rises at {k}: {} -> {}", tr[k - 1], tr[k]);
            }
        }
    }
}

#[test]
fn tiny_lambda_reconstructs_almost_exactly() {
    for seed in 0..10u64 {
        let mut r = rng(200 + seed);
        let c = r.gen_range(2..=8);
        let m = random_matrix(&mut r, 60, c);
        let res = solve_matrix(&m, &SolverConfig::with_lambda(1e-6)).unwrap();
        let err = recon_rel(&to_dmatrix(&m), &res.u);
        assert!(err < 1e-4, "seed {seed}: relative reconstruction error {err:.2e}");
    }
}

#[test]
fn ranking_is_translation_invariant() {
    let mut trials = 0;
    let mut seed = 0u64;
    while trials < 50 {
        seed += 1;
        assert!(seed < 500, "too few well-separated trials");
        let mut r = rng(300 + seed);
        let c = r.gen_range(3..=8);
        let m = random_matrix(&mut r, 60, c);
        let cfg = SolverConfig::with_lambda(0.1);
        let base = importance_from_matrix(&solve_matrix(&m, &cfg).unwrap().u, "x");
        let sorted: Vec<f32> = base.ranking.iter().map(|&i| base.factors[i]).collect();
        if sorted.windows(2).any(|w| w[0] - w[1] <= 1e-3) {
            continue;
        }
        trials += 1;
        let shift: f32 = r.gen_range(-3.0..3.0);
        let moved = Matrix::new(m.rows(), c, m.data().iter().map(|v| v + shift).collect()).unwrap();
        let other = importance_from_matrix(&solve_matrix(&moved, &cfg).unwrap().u, "x");
        assert_eq!(base.ranking, other.ranking, "seed {seed} shift {shift}");
    }
}

#[test]
fn larger_lambda_shrinks_group_norm() {
    for seed in 0..10u64 {
        let mut r = rng(400 + seed);
        let c = r.gen_range(3..=6);
        let m = random_matrix(&mut r, 50, c);
        let strict = SolverConfig {
            max_iters: 5000,
            tol_primal: 1e-7,
            tol_dual: 1e-7,
            ..Default::default()
        };
        let lams = [0.02f32, 0.1, 0.3, 0.7];
        let norms: Vec<f64> = lams
            .iter()
            .map(|&l| penalty(&solve_matrix(&m, &SolverConfig { lambda_rel: l, ..strict }).unwrap().u))
            .collect();
        for w in norms.windows(2) {
            assert!(w[1] <= w[0] + 1e-5, "seed {seed}: {norms:?}");
        }
    }
}

#[test]
fn duplicate_columns_get_equal_factors() {
    for seed in 0..10u64 {
        let mut r = rng(500 + seed);
        let c = r.gen_range(3..=7);
        let mut m = random_matrix(&mut r, 60, c);
        let (i, j) = (r.gen_range(0..c), r.gen_range(0..c));
        if i == j {
            continue;
        }
        for row in 0..m.rows() {
            m.set(row, j, m.get(row, i));
        }
        let rep = importance_from_matrix(&solve_matrix(&m, &SolverConfig::default()).unwrap().u, "x");
        let (a, b) = (rep.factors[i], rep.factors[j]);
        assert!((a - b).abs() <= 1e-2 * a.max(b), "seed {seed}: {a} vs {b}");
    }
}

#[test]
fn duplicate_pair_represents_itself() {
    // d1 = d2, d3 orthogonal to both
    let mut r = rng(9);
    let rows = 40;
    let a: Vec<f32> = (0..rows).map(|_| r.gen_range(-1.0..1.0)).collect();
    let mut b: Vec<f32> = (0..rows).map(|_| r.gen_range(-1.0..1.0)).collect();
    let proj = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f32>() / a.iter().map(|x| x * x).sum::<f32>();
    b.iter_mut().zip(&a).for_each(|(y, x)| *y -= proj * x);
    let data: Vec<f32> = (0..rows).flat_map(|k| [a[k], a[k], b[k]]).collect();
    let m = Matrix::new(rows, 3, data).unwrap();
    let res = solve_matrix(&m, &SolverConfig::with_lambda(1e-3)).unwrap();
    assert!(recon_rel(&to_dmatrix(&m), &res.u) < 1e-3);
    // columns 0 and 1 draw on the pair, not on channel 2
    for j in 0..2 {
        let pair = res.u.get(0, j).abs() + res.u.get(1, j).abs();
        assert!(res.u.get(2, j).abs() < 1e-2 * pair, "column {j}: {:?}", res.u.data());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coefficients_stay_affine(seed in any::<u64>(), c in 2usize..=10, extra in 0usize..40, lam in 0.001f32..1.0) {
        let mut r = rng(seed);
        let m = random_matrix(&mut r, c + extra, c);
        let res = solve_matrix(&m, &SolverConfig::with_lambda(lam)).unwrap();
        prop_assert!(col_sum_error(&res.u) <= 1e-4);
        let rep = importance_from_matrix(&res.u, "x");
        prop_assert!(rep.factors.iter().all(|&f| f >= 0.0));
        let mut seen = rep.ranking.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..c).collect::<Vec<_>>());
        prop_assert!(rep.ranking.windows(2).all(|w| rep.factors[w[0]] >= rep.factors[w[1]]));
    }
}
