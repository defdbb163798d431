mod common;

use common::check_tree;
use drbench::glm::{fit_logistic, logistic_log_likelihood, logistic_score};
use drbench::learners::{fit_regression_tree, meta_weights, nnls};
use nalgebra::DMatrix;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// Analytic score against central differences of the log-likelihood.
    #[test]
    fn logistic_score_matches_finite_differences(
        rows in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, 0u8..2, 0.1f64..3.0, -1.0f64..1.0), 5..40),
        coef in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        let n = rows.len();
        let design = DMatrix::from_fn(n, 3, |i, j| if j == 0 { 1.0 } else if j == 1 { rows[i].0 } else { rows[i].1 });
        let y: Vec<f64> = rows.iter().map(|r| f64::from(r.2)).collect();
        let w: Vec<f64> = rows.iter().map(|r| r.3).collect();
        let off: Vec<f64> = rows.iter().map(|r| r.4).collect();
        let score = logistic_score(&design, &y, Some(&w), Some(&off), &coef);
        for j in 0..3 {
            let h = 1e-5;
            let mut up = coef.clone();
            let mut down = coef.clone();
            up[j] += h;
            down[j] -= h;
            let fd = (logistic_log_likelihood(&design, &y, Some(&w), Some(&off), &up)
                - logistic_log_likelihood(&design, &y, Some(&w), Some(&off), &down))
                / (2.0 * h);
            let scale = score[j].abs().max(1e-2);
            prop_assert!((fd - score[j]).abs() / scale < 1e-4, "coef {j}: fd {fd} vs {}", score[j]);
        }
    }

    /// At a converged IRLS fit the score vanishes.
    #[test]
    fn irls_solution_zeroes_the_score(
        rows in prop::collection::vec((-2.0f64..2.0, 0.0f64..1.0), 30..80),
    ) {
        let n = rows.len();
        let design = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { rows[i].0 });
        // noisy labels keep the data from being separable
        let y: Vec<f64> = rows.iter().map(|r| f64::from(u8::from(r.1 < 0.3 + 0.1 * r.0))).collect();
        prop_assume!(y.iter().any(|&v| v == 1.0) && y.iter().any(|&v| v == 0.0));
        let fit = fit_logistic(&design, &y, None, None).unwrap();
        prop_assume!(fit.converged);
        let s = logistic_score(&design, &y, None, None, &fit.coef);
        prop_assert!(s.iter().all(|v| v.abs() < 1e-6), "{s:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    /// Every split is the best admissible split of its node, and every leaf
    /// is a node where splitting was not allowed or gained nothing.
    #[test]
    fn greedy_tree_matches_exhaustive_search(
        p in 1usize..=2,
        raw in prop::collection::vec((0u8..5, 0u8..5, -10.0f64..10.0), 1..=12),
        depth in 0usize..=2,
        min_leaf in 1usize..=3,
    ) {
        let n = raw.len();
        prop_assume!(n >= 2 * min_leaf);
        let features = DMatrix::from_fn(n, p, |i, j| f64::from(if j == 0 { raw[i].0 } else { raw[i].1 }));
        let targets: Vec<f64> = raw.iter().map(|r| r.2).collect();
        let tree = fit_regression_tree(&features, &targets, depth, min_leaf).unwrap();
        let checked = check_tree(tree.nodes(), &features, &targets, depth, min_leaf);
        prop_assert!(checked.is_ok(), "{}", checked.unwrap_err());
    }
}

fn risk(oof: &DMatrix<f64>, y: &[f64], w: &[f64]) -> f64 {
    let n = y.len();
    (0..n).map(|i| (0..w.len()).map(|j| w[j] * oof[(i, j)]).sum::<f64>() - y[i]).map(|e| e * e).sum::<f64>() / n as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn meta_weights_are_convex_and_beat_every_vertex(
        n in 5usize..40,
        k in 1usize..6,
        seed in prop::collection::vec(-5.0f64..5.0, 40 * 7),
        mix in prop::collection::vec(0.0f64..1.0, 6),
    ) {
        let y: Vec<f64> = (0..n).map(|i| seed[i]).collect();
        let oof = DMatrix::from_fn(n, k, |i, j| y[i] * (j as f64 * 0.3) + seed[40 * (j + 1) + i]);
        let usable = vec![true; k];
        let risks: Vec<f64> = (0..k).map(|j| {
            let mut e = vec![0.0; k];
            e[j] = 1.0;
            risk(&oof, &y, &e)
        }).collect();
        let w = meta_weights(&oof, &y, &usable, &risks);
        prop_assert!(w.iter().all(|&v| v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        let r = risk(&oof, &y, &w);
        for (j, &rj) in risks.iter().enumerate() {
            prop_assert!(r <= rj + 1e-8, "ensemble {r} above learner {j} risk {rj}");
        }
        // and no worse than an arbitrary interior point of the simplex
        let s: f64 = mix[..k].iter().sum::<f64>().max(1e-12);
        let interior: Vec<f64> = mix[..k].iter().map(|v| v / s).collect();
        prop_assert!(r <= risk(&oof, &y, &interior) + 1e-8);
    }

    #[test]
    fn nnls_satisfies_kkt(
        m in 3usize..12,
        k in 1usize..5,
        vals in prop::collection::vec(-3.0f64..3.0, 12 * 6),
    ) {
        let a = DMatrix::from_fn(m, k, |i, j| vals[i * 5 + j]);
        let b: Vec<f64> = (0..m).map(|i| vals[60 + i]).collect();
        let x = nnls(&a, &b);
        let resid: Vec<f64> = (0..m).map(|i| b[i] - (0..k).map(|j| a[(i, j)] * x[j]).sum::<f64>()).collect();
        for j in 0..k {
            let g: f64 = (0..m).map(|i| a[(i, j)] * resid[i]).sum();
            prop_assert!(x[j] >= 0.0);
            // dual feasibility and complementary slackness
            prop_assert!(g <= 1e-8 * (1.0 + a.norm() * b.iter().map(|v| v.abs()).sum::<f64>()));
            if x[j] > 1e-10 {
                prop_assert!(g.abs() < 1e-7 * (1.0 + a.norm() * b.iter().map(|v| v.abs()).sum::<f64>()));
            }
        }
    }
}
