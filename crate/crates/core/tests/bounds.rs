//! IV bounds against a response-type linear program.

mod common;

use common::*;
use ivregime_core::evaluation::{bp_bounds, bp_bounds_for_actions, stratum_bounds, ProbTable, Stratum};
use ivregime_core::Label;

fn stratum(q: &[f64; 16], weight: f64, point: Vec<f64>) -> Stratum {
    Stratum { weight, p: to_label_table(&table_from_types(q)), point }
}

/// `E[Y_1 - Y_-1]`, `E[Y_1]`, `E[Y_-1]` under response types `q`.
fn truths(q: &[f64; 16]) -> (f64, f64, f64) {
    let mut t = (0.0, 0.0, 0.0);
    for (k, &qk) in q.iter().enumerate() {
        let (_, y) = type_parts(k);
        t.0 += qk * (y[1] as f64 - y[0] as f64);
        t.1 += qk * y[1] as f64;
        t.2 += qk * y[0] as f64;
    }
    t
}

#[test]
fn stratum_bounds_match_the_linear_program() {
    let mut r = rng(1);
    for case in 0..300 {
        let sparsity = [0.0, 0.3, 0.6, 0.85][case % 4];
        let q = random_types(&mut r, sparsity);
        let s = stratum(&q, 1.0, vec![]);
        let b = stratum_bounds(&s);
        let checks = [
            ("effect", Target::Effect, b.lower, b.upper),
            ("treated", Target::Treated, b.lower_pos, b.upper_pos),
            ("untreated", Target::Untreated, b.lower_neg, b.upper_neg),
        ];
        for (name, target, lo, hi) in checks {
            let (lp_lo, lp_hi) = lp_bounds(&s.p, target);
            assert!((lo - lp_lo).abs() < 1e-9, "case {case} {name} lower {lo} vs {lp_lo}");
            assert!((hi - lp_hi).abs() < 1e-9, "case {case} {name} upper {hi} vs {lp_hi}");
        }
    }
}

#[test]
fn perfect_compliance_identifies_the_effect() {
    // Only compliers: Y_1 = 1 with probability 0.7 and Y_-1 = 1 with probability 0.4, independently.
    let mut q = [0.0; 16];
    for y_neg in 0..2 {
        for y_pos in 0..2 {
            let p = if y_pos == 1 { 0.7 } else { 0.3 } * if y_neg == 1 { 0.4 } else { 0.6 };
            q[0b10 | y_neg << 2 | y_pos << 3] = p;
        }
    }
    let b = stratum_bounds(&stratum(&q, 1.0, vec![]));
    assert!((b.lower_pos - 0.7).abs() < 1e-12 && (b.upper_pos - 0.7).abs() < 1e-12);
    assert!((b.lower_neg - 0.4).abs() < 1e-12 && (b.upper_neg - 0.4).abs() < 1e-12);
    assert!((b.lower - 0.3).abs() < 1e-12 && (b.upper - 0.3).abs() < 1e-12);
}

fn random_table(seed: u64, k: usize) -> (ProbTable, Vec<[f64; 16]>) {
    let mut r = rng(seed);
    let mut w: Vec<f64> = (0..k).map(|_| 0.5 + rand::Rng::random::<f64>(&mut r)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    let qs: Vec<[f64; 16]> = (0..k).map(|s| random_types(&mut r, [0.0, 0.5][s % 2])).collect();
    let strata = (0..k).map(|s| stratum(&qs[s], w[s], one_hot(k, s))).collect();
    (ProbTable::new(strata).unwrap(), qs)
}

#[test]
fn every_regime_value_lies_within_its_bounds() {
    for seed in 0..40 {
        let k = 3;
        let (table, qs) = random_table(seed, k);
        for actions in all_actions(k) {
            let truth: f64 = table
                .strata
                .iter()
                .zip(&qs)
                .zip(&actions)
                .map(|((s, q), a)| {
                    let (_, pos, neg) = truths(q);
                    s.weight * if *a == Label::Pos { pos } else { neg }
                })
                .sum();
            for omega in [0.0, 0.5, 1.0] {
                let rep = bp_bounds_for_actions(&table, &actions, &[omega; 3]).unwrap();
                let b = rep.aggregate;
                assert!(b.lower <= truth + 1e-12 && truth <= b.upper + 1e-12, "omega {omega}: {truth} not in [{}, {}]", b.lower, b.upper);
                for d in [rep.direct, rep.omega_one, rep.omega_zero] {
                    assert!(d.lower <= truth + 1e-12 && truth <= d.upper + 1e-12);
                }
            }
        }
    }
}

#[test]
fn rule_actions_follow_stratum_points() {
    let (table, _) = random_table(3, 3);
    let actions = [Label::Neg, Label::Pos, Label::Neg];
    let by_rule = bp_bounds(&table, &rule_for_actions(&actions), 0.5).unwrap();
    let by_actions = bp_bounds_for_actions(&table, &actions, &[0.5; 3]).unwrap();
    assert_eq!(by_rule, by_actions);
}

#[test]
fn mixing_weight_interpolates_linearly() {
    let (table, _) = random_table(9, 3);
    let actions = [Label::Pos, Label::Neg, Label::Pos];
    let at = |w: f64| bp_bounds_for_actions(&table, &actions, &[w; 3]).unwrap().aggregate;
    let (a0, a1, ah) = (at(0.0), at(1.0), at(0.5));
    assert!((ah.lower - 0.5 * (a0.lower + a1.lower)).abs() < 1e-12);
    assert!((ah.upper - 0.5 * (a0.upper + a1.upper)).abs() < 1e-12);
}
