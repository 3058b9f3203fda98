use proptest::prelude::*;

use wolcan::harness::metric_coverage;
use wolcan::items::ItemMatrix;
use wolcan::pseudo_weights::selection_ranks;
use wolcan::rng::keyed_uniform;
use wolcan::simgen::solve_offset;
use wolcan::wolca::{
    alignment_cost, best_permutation, from_unconstrained, normalize_weights, summarize,
    to_unconstrained, LcaParams, StackedPosterior,
};

fn simplex(raw: &[f64]) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

fn params_from(k: usize, levels: &[usize], raw: &[f64]) -> LcaParams {
    let r_max = *levels.iter().max().unwrap();
    let mut it = raw.iter().copied().cycle();
    let pi = simplex(&(0..k).map(|_| it.next().unwrap()).collect::<Vec<_>>());
    let mut theta = vec![0.0; levels.len() * k * r_max];
    for (j, &r) in levels.iter().enumerate() {
        for c in 0..k {
            let row = simplex(&(0..r).map(|_| it.next().unwrap()).collect::<Vec<_>>());
            let base = (j * k + c) * r_max;
            theta[base..base + r].copy_from_slice(&row);
        }
    }
    LcaParams::new(pi, theta, levels.to_vec()).unwrap()
}

proptest! {
    #[test]
    fn selection_ranks_are_increasing_and_in_range(m in 1usize..500, d_frac in 0.0f64..1.0) {
        let d = 1 + ((m - 1) as f64 * d_frac) as usize;
        let ranks = selection_ranks(m, d);
        prop_assert_eq!(ranks.len(), d);
        prop_assert!(ranks.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(ranks.iter().all(|&r| (1..=m).contains(&r)));
    }

    #[test]
    fn normalized_weights_sum_to_count(w in proptest::collection::vec(0.01f64..1e4, 1..200)) {
        let n = normalize_weights(&w).unwrap();
        let total: f64 = n.iter().sum();
        prop_assert!((total - w.len() as f64).abs() < 1e-8 * w.len() as f64);
        for (a, b) in w.iter().zip(&n) {
            prop_assert!((b / a - n[0] / w[0]).abs() < 1e-9 * (n[0] / w[0]));
        }
    }

    #[test]
    fn keyed_uniforms_lie_in_the_unit_interval(seed: u64, iter: u64, unit: u64) {
        let u = keyed_uniform(seed, iter, unit);
        prop_assert!((0.0..1.0).contains(&u));
        prop_assert_eq!(u, keyed_uniform(seed, iter, unit));
    }

    #[test]
    fn unconstrained_map_round_trips(
        k in 1usize..4,
        levels in proptest::collection::vec(2usize..5, 1..4),
        raw in proptest::collection::vec(0.05f64..1.0, 40),
    ) {
        let p = params_from(k, &levels, &raw);
        let back = from_unconstrained(&to_unconstrained(&p), k, &levels).unwrap();
        for (a, b) in p.pi.iter().zip(&back.pi) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in p.theta.iter().zip(&back.theta) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn alignment_recovers_a_relabeling(
        raw in proptest::collection::vec(0.05f64..1.0, 60),
        perm_seed in 0usize..24,
    ) {
        let levels = [3, 3, 3, 3];
        let p = params_from(4, &levels, &raw);
        let mut perm: Vec<usize> = (0..4).collect();
        let mut s = perm_seed;
        for i in (1..4).rev() {
            perm.swap(i, s % (i + 1));
            s /= i + 1;
        }
        let q = p.permuted(&perm);
        let cost = alignment_cost(&p.theta, &q.theta, &levels, 4);
        let found = best_permutation(&cost, 4);
        let realigned = q.permuted(&found);
        let total: f64 = (0..4).map(|a| cost[a * 4 + found[a]]).sum();
        prop_assert!(total < 1e-12);
        prop_assert!(p.theta.iter().zip(&realigned.theta).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn summaries_stay_on_the_simplex(raw in proptest::collection::vec(0.05f64..1.0, 30..60), draws in 1usize..8) {
        let levels = vec![2, 3];
        let mut pi = Vec::new();
        let mut theta = Vec::new();
        for d in 0..draws {
            let p = params_from(2, &levels, &raw[d % 5..]);
            pi.push(p.pi.clone());
            theta.push(p.theta.clone());
        }
        let stacked = StackedPosterior { num_classes: 2, levels: levels.clone(), pi, theta, provenance: vec![0; draws] };
        let est = summarize(&stacked).unwrap();
        prop_assert!(est.params.validate().is_ok());
        for k in 0..2 {
            prop_assert!(est.pi_lower[k] <= est.pi_upper[k]);
        }
    }

    #[test]
    fn coverage_is_a_proportion(v in proptest::collection::vec((-1.0f64..1.0, 0.0f64..1.0, -1.0f64..1.0), 1..50)) {
        let lo: Vec<f64> = v.iter().map(|t| t.0).collect();
        let hi: Vec<f64> = v.iter().map(|t| t.0 + t.1).collect();
        let truth: Vec<f64> = v.iter().map(|t| t.2).collect();
        let c = metric_coverage(&lo, &hi, &truth).unwrap();
        prop_assert!((0.0..=1.0).contains(&c));
    }

    #[test]
    fn offsets_hit_their_target(lin in proptest::collection::vec(-3.0f64..3.0, 50..300), frac in 0.01f64..0.5) {
        let target = lin.len() as f64 * frac;
        let o = solve_offset(&lin, target).unwrap();
        let total: f64 = lin.iter().map(|l| 1.0 / (1.0 + (-(o + l)).exp())).sum();
        prop_assert!((total - target).abs() <= 1e-3 * target);
    }

    #[test]
    fn one_based_codes_shift_by_one(rows in proptest::collection::vec(proptest::collection::vec(1u32..5, 3), 1..20)) {
        let m = ItemMatrix::from_one_based(&rows, Some(vec![4, 4, 4])).unwrap();
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                prop_assert_eq!(m.get(i, j) + 1, v as usize);
            }
        }
    }
}
