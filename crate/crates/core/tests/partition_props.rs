mod common;

use common::{argmin, exact_oracle, random_instance, rng};
use partcert::partition::{rank_rows, row_scores};
use partcert::relaxation::{certify_lp, exact_value};
use partcert::{
    certify_partitioned, grid_partition, motivating_partition, preact_bounds, refine_recursive,
    select_optimal_row, split_by_row, BoundsMode, CutSense, InputRegion, LayerBounds, Network,
    PartitionPlan, PreactBounds, RowChoice, Strategy,
};
use rand::Rng;

fn schemes(n_z: usize) -> Vec<Strategy> {
    let mut s = vec![
        Strategy::None,
        Strategy::OptimalRow,
        Strategy::Rows(2),
        Strategy::Motivating,
        Strategy::Grid(2),
        Strategy::Recursive(3),
        Strategy::Heuristic,
    ];
    s.extend((0..n_z).map(Strategy::Row));
    s
}

#[test]
fn every_scheme_is_sound_and_tightening() {
    for seed in 0..200 {
        let inst = random_instance(seed, 4, 4, 1.0);
        let exact = exact_oracle(&inst.net, inst.region.lower(), inst.region.upper(), &inst.c);
        let plain = certify_lp(&inst.net, &inst.region, &inst.c, BoundsMode::LpTight).unwrap().bound;
        for s in schemes(inst.c.len()) {
            let plan = PartitionPlan::from_strategy(s, &inst.net, &inst.region, &inst.c).unwrap();
            let cert = certify_partitioned(&inst.net, &inst.region, &inst.c, &plan).unwrap();
            assert!(exact <= cert.overall_bound + 1e-7, "seed {seed} {s}");
            assert!(cert.overall_bound <= plain + 1e-7, "seed {seed} {s}");
            let max = cert
                .leaves()
                .filter_map(|p| p.bound())
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(max, cert.overall_bound);
            if s == Strategy::Motivating {
                assert!((cert.overall_bound - exact).abs() <= 1e-6, "seed {seed}");
            }
        }
    }
}

#[test]
fn parts_cover_the_region() {
    let mut r = rng(7);
    for seed in 0..40 {
        let inst = random_instance(500 + seed, 3, 4, 1.0);
        let mut families = vec![motivating_partition(&inst.net, &inst.region).unwrap()];
        families.push(grid_partition(&inst.region, 3).unwrap());
        for i in 0..inst.c.len() {
            let (a, b) = split_by_row(&inst.region, &inst.net, i).unwrap();
            families.push(vec![a, b]);
        }
        for parts in &families {
            for _ in 0..300 {
                let x = inst.region.sample_box(&mut r);
                let hits = parts.iter().filter(|p| p.contains(&x, 0.0)).count();
                assert!(hits >= 1);
                // interiors are disjoint: a point strictly inside two parts is impossible
                let strict = parts.iter().filter(|p| p.contains(&x, -1e-9)).count();
                assert!(strict <= 1);
            }
        }
    }
}

#[test]
fn split_cuts_follow_the_row() {
    let net = Network::from_parts(vec![(vec![vec![1.0, 1.0], vec![1.0, -1.0]], vec![0.0, 0.5])]).unwrap();
    let region = InputRegion::box_from_center(&[0.0, 0.0], 1.0).unwrap();
    let (a, b) = split_by_row(&region, &net, 1).unwrap();
    assert_eq!(a.cuts()[0].normal, vec![1.0, -1.0]);
    assert_eq!(a.cuts()[0].offset, -0.5);
    assert_eq!(a.cuts()[0].sense, CutSense::Ge);
    assert_eq!(b.cuts()[0].sense, CutSense::Le);
    assert!(split_by_row(&region, &net, 2).is_err());
}

#[test]
fn stable_row_leaves_one_empty_part() {
    let net = Network::from_parts(vec![(vec![vec![1.0, 0.0], vec![1.0, 1.0]], vec![5.0, 0.0])]).unwrap();
    let region = InputRegion::box_from_center(&[0.0, 0.0], 1.0).unwrap();
    let c = [1.0, 1.0];
    let plan = PartitionPlan::from_strategy(Strategy::Row(0), &net, &region, &c).unwrap();
    let cert = certify_partitioned(&net, &region, &c, &plan).unwrap();
    assert_eq!(cert.num_nonempty_leaves(), 1);
    let plain = certify_lp(&net, &region, &c, BoundsMode::LpTight).unwrap().bound;
    assert!((cert.overall_bound - plain).abs() < 1e-9);
}

#[test]
fn optimal_row_has_minimal_score() {
    for seed in 0..200 {
        let inst = random_instance(900 + seed, 4, 5, 1.0);
        let bounds = preact_bounds(&inst.net, &inst.region, BoundsMode::LpTight).unwrap();
        let scores = row_scores(&inst.c, bounds.last());
        match select_optimal_row(&inst.c, &bounds) {
            RowChoice::Row(i) => {
                assert!(scores.iter().all(|s| scores[i] <= *s));
                assert!(scores[i] < 0.0);
            }
            RowChoice::NoGain => assert!(scores.iter().all(|s| *s == 0.0)),
        }
    }
}

#[test]
fn ranking_examples() {
    // scores relu(c)·ul/(u−l): (−1, −0.25, 0)
    let b = PreactBounds::new(vec![LayerBounds {
        lower: vec![-2.0, -1.0, 1.0],
        upper: vec![2.0, 1.0, 2.0],
    }]);
    let c = [1.0, 0.5, 1.0];
    assert_eq!(rank_rows(&c, &b, 2), vec![0, 1]);
    assert_eq!(rank_rows(&c, &b, 5), vec![0, 1]);
    assert_eq!(select_optimal_row(&c, &b), RowChoice::Row(0));
    assert!(rank_rows(&[-1.0, -1.0, -1.0], &b, 3).is_empty());
    let tie = PreactBounds::new(vec![LayerBounds {
        lower: vec![-2.0, -2.0],
        upper: vec![2.0, 2.0],
    }]);
    assert_eq!(select_optimal_row(&[1.0, 1.0], &tie), RowChoice::Row(0));
    assert_eq!(select_optimal_row(&[-1.0, -1.0], &tie), RowChoice::NoGain);
    // the shared oracle agrees
    assert_eq!(argmin(&row_scores(&c, b.last())), 0);
}

#[test]
fn recursive_levels_are_monotone() {
    for seed in 0..40 {
        let inst = random_instance(1500 + seed, 3, 4, 1.0);
        let rec = refine_recursive(&inst.net, &inst.region, &inst.c, 4).unwrap();
        for w in rec.levels.windows(2) {
            assert!(w[1] <= w[0] + 1e-7, "seed {seed}: {:?}", rec.levels);
        }
        let exact = exact_value(&inst.net, &inst.region, &inst.c).unwrap().bound;
        assert!(exact <= rec.overall_bound + 1e-7);
        for (k, p) in rec.parts.iter().enumerate() {
            for &ch in &p.children {
                assert_eq!(rec.parts[ch].parent, Some(k));
            }
        }
    }
}

#[test]
fn multilayer_neuron_splits_are_sound() {
    let mut r = rng(77);
    for _ in 0..30 {
        let n_x = r.gen_range(1..=3);
        let out = r.gen_range(1..=3);
        let net = common::random_deep(&mut r, &[n_x, 3, out]);
        let region = InputRegion::box_from_center(&vec![0.0; n_x], 1.0).unwrap();
        let c: Vec<f64> = (0..net.output_dim()).map(|_| r.gen_range(-1.0..1.0)).collect();
        let exact = exact_value(&net, &region, &c).unwrap().bound;
        let plain = certify_lp(&net, &region, &c, BoundsMode::LpTight).unwrap().bound;
        for s in [Strategy::OptimalRow, Strategy::Rows(2), Strategy::Recursive(3), Strategy::Heuristic] {
            let plan = PartitionPlan::from_strategy(s, &net, &region, &c).unwrap();
            let b = certify_partitioned(&net, &region, &c, &plan).unwrap().overall_bound;
            assert!(exact <= b + 1e-7 && b <= plain + 1e-7, "{s}: {exact} {b} {plain}");
        }
    }
}
