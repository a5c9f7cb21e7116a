use ndarray::{Array2, ArrayView2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rul_core::data::{label_table, synth_generate, train_test_split, RulClass, ScalerParams};
use rul_core::gbdt::{build_tree, gbdt_train, grad_hess, softmax3, GbdtConfig, Node, Presorted, RegTree};
use rul_core::nn::accuracy_of;

const LAMBDA: f64 = 1.0;

/// Recursive brute-force tree builder: tries every feature and every
/// midpoint between distinct values.
fn oracle_tree(x: ArrayView2<f64>, g: &[f64], h: &[f64], rows: &[usize], depth_left: usize) -> OracleNode {
    let (gs, hs): (f64, f64) = rows.iter().fold((0.0, 0.0), |(a, b), &r| (a + g[r], b + h[r]));
    let leaf = OracleNode::Leaf(-gs / (hs + LAMBDA));
    if depth_left == 0 || rows.len() <= 1 {
        return leaf;
    }
    let parent = gs * gs / (hs + LAMBDA);
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..x.ncols() {
        let mut values: Vec<f64> = rows.iter().map(|&r| x[[r, f]]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let t = w[0] + (w[1] - w[0]) / 2.0;
            let (mut gl, mut hl) = (0.0, 0.0);
            for &r in rows {
                if x[[r, f]] <= t {
                    gl += g[r];
                    hl += h[r];
                }
            }
            let (gr, hr) = (gs - gl, hs - hl);
            let gain = gl * gl / (hl + LAMBDA) + gr * gr / (hr + LAMBDA) - parent;
            if best.is_none_or(|(b, _, _)| gain > b) {
                best = Some((gain, f, t));
            }
        }
    }
    match best {
        Some((gain, f, t)) if gain > 0.0 => {
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| x[[r, f]] <= t);
            OracleNode::Split(
                f,
                t,
                Box::new(oracle_tree(x, g, h, &l, depth_left - 1)),
                Box::new(oracle_tree(x, g, h, &r, depth_left - 1)),
            )
        }
        _ => leaf,
    }
}

enum OracleNode {
    Leaf(f64),
    Split(usize, f64, Box<OracleNode>, Box<OracleNode>),
}

impl OracleNode {
    fn eval(&self, row: &[f64]) -> f64 {
        match self {
            OracleNode::Leaf(v) => *v,
            OracleNode::Split(f, t, l, r) => {
                if row[*f] <= *t {
                    l.eval(row)
                } else {
                    r.eval(row)
                }
            }
        }
    }
}

/// Independent walk over the flat node array.
fn walk(tree: &RegTree, row: &[f64]) -> f64 {
    let mut id = 0;
    loop {
        match tree.nodes[id] {
            Node::Leaf { value } => return value,
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => id = if row[feature] <= threshold { left } else { right },
        }
    }
}

fn random_problem(seed: u64, n: usize, d: usize) -> (Array2<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Coarse grid values so that ties occur.
    let x = Array2::from_shape_simple_fn((n, d), || (rng.random_range(0..12) as f64) * 0.5);
    let g = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let h = (0..n).map(|_| rng.random_range(0.05..0.25)).collect();
    (x, g, h)
}

#[test]
fn stump_matches_brute_force() {
    for seed in 0..20 {
        let (x, g, h) = random_problem(seed, 40, 4);
        let rows: Vec<usize> = (0..40).collect();
        let tree = build_tree(&Presorted::new(x.view(), &rows), &g, &h, 1, LAMBDA, 1);
        match (&tree.nodes[0], oracle_tree(x.view(), &g, &h, &rows, 1)) {
            (Node::Split { feature, threshold, .. }, OracleNode::Split(f, t, _, _)) => {
                assert_eq!((*feature, *threshold), (f, t), "seed {seed}");
            }
            (Node::Leaf { value }, OracleNode::Leaf(v)) => assert!((value - v).abs() < 1e-12),
            _ => panic!("seed {seed}: structure differs"),
        }
    }
}

#[test]
fn deep_trees_match_brute_force_everywhere() {
    for seed in 0..10 {
        let (x, g, h) = random_problem(100 + seed, 60, 3);
        let rows: Vec<usize> = (0..60).collect();
        let tree = build_tree(&Presorted::new(x.view(), &rows), &g, &h, 4, LAMBDA, 1);
        let oracle = oracle_tree(x.view(), &g, &h, &rows, 4);
        assert!(tree.is_well_formed() && tree.depth() <= 4);
        for r in x.rows() {
            let row = r.to_vec();
            assert!((tree.predict(&row) - oracle.eval(&row)).abs() < 1e-12, "seed {seed}");
            assert_eq!(tree.predict(&row), walk(&tree, &row));
        }
    }
}

#[test]
fn ensemble_scores_are_base_plus_shrunk_tree_walks() {
    let (x, _, _) = random_problem(7, 90, 3);
    let labels: Vec<RulClass> = (0..90).map(|i| RulClass::ALL[i % 3]).collect();
    let rows: Vec<usize> = (0..90).collect();
    let cfg = GbdtConfig {
        iterations: 15,
        depth: 3,
        ..GbdtConfig::default()
    };
    let ens = gbdt_train(&cfg, x.view(), &labels, &rows).unwrap();
    for r in x.rows() {
        let row = r.to_vec();
        let mut want = ens.base;
        for round in &ens.trees {
            for k in 0..3 {
                want[k] += cfg.learning_rate * walk(&round[k], &row);
            }
        }
        let got = ens.raw_scores(&row).unwrap();
        for k in 0..3 {
            assert!((got[k] - want[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn log_prior_base_score() {
    let x = Array2::from_shape_fn((6, 1), |(i, _)| i as f64);
    let labels = [RulClass::Low, RulClass::Low, RulClass::Low, RulClass::Mid, RulClass::Mid, RulClass::High];
    let ens = gbdt_train(
        &GbdtConfig {
            iterations: 0,
            ..GbdtConfig::default()
        },
        x.view(),
        &labels,
        &[0, 1, 2, 3, 4, 5],
    )
    .unwrap();
    let want = [0.5f64.ln(), (1.0f64 / 3.0).ln(), (1.0f64 / 6.0).ln()];
    for (got, want) in ens.base.iter().zip(want) {
        assert!((got - want).abs() < 1e-15);
    }
    let p = ens.softmax_scores(&[0.0]).unwrap();
    assert!((p[0] - 0.5).abs() < 1e-12);
}

#[test]
fn synthetic_holdout_accuracy_and_monotone_loss() {
    let mut table = synth_generate(14, 1100, 3);
    label_table(&mut table).unwrap();
    let split = train_test_split(table.n_rows(), 0.2, 42).unwrap();
    let scaler = ScalerParams::fit(table.features.view(), &split.train);
    let x = scaler.transform(table.features.view());
    let cfg = GbdtConfig {
        iterations: 60,
        ..GbdtConfig::default()
    };
    let ens = gbdt_train(&cfg, x.view(), table.labels(), &split.train).unwrap();
    let test_x = x.select(ndarray::Axis(0), &split.test);
    let truth: Vec<RulClass> = split.test.iter().map(|&i| table.labels()[i]).collect();
    let acc = accuracy_of(&ens.predict(test_x.view()).unwrap(), &truth);
    assert!(acc >= 0.90, "{acc}");
    for w in ens.loss_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
    }
    let again = gbdt_train(&cfg, x.view(), table.labels(), &split.train).unwrap();
    assert_eq!(again, ens);
}

#[test]
fn constant_feature_never_changes_predictions() {
    let (x, _, _) = random_problem(9, 80, 2);
    let labels: Vec<RulClass> = (0..80).map(|i| RulClass::ALL[(i * 7) % 3]).collect();
    let rows: Vec<usize> = (0..80).collect();
    let cfg = GbdtConfig {
        iterations: 10,
        depth: 3,
        ..GbdtConfig::default()
    };
    let plain = gbdt_train(&cfg, x.view(), &labels, &rows).unwrap();
    let widened = ndarray::concatenate(ndarray::Axis(1), &[x.view(), Array2::from_elem((80, 1), 3.0).view()]).unwrap();
    let wide = gbdt_train(&cfg, widened.view(), &labels, &rows).unwrap();
    assert_eq!(plain.predict(x.view()).unwrap(), wide.predict(widened.view()).unwrap());
}

#[test]
fn predict_agrees_with_softmax_argmax() {
    let (x, _, _) = random_problem(10, 120, 3);
    let labels: Vec<RulClass> = (0..120).map(|i| RulClass::ALL[(i / 7) % 3]).collect();
    let rows: Vec<usize> = (0..120).collect();
    let ens = gbdt_train(
        &GbdtConfig {
            iterations: 8,
            depth: 3,
            ..GbdtConfig::default()
        },
        x.view(),
        &labels,
        &rows,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let probe = Array2::from_shape_simple_fn((1000, 3), || rng.random_range(-1.0..7.0));
    let pred = ens.predict(probe.view()).unwrap();
    for (r, p) in probe.rows().into_iter().zip(pred) {
        let s = ens.softmax_scores(&r.to_vec()).unwrap();
        let best = (0..3).fold(0, |b, k| if s[k] > s[b] { k } else { b });
        assert_eq!(p.index(), best);
    }
}

proptest! {
    #[test]
    fn gradients_sum_to_zero(a in -20.0f64..20.0, b in -20.0f64..20.0, c in -20.0f64..20.0, y in 0usize..3) {
        let p = softmax3(&[a, b, c]);
        let gh = grad_hess(&p, RulClass::ALL[y]);
        let sum: f64 = gh.iter().map(|(g, _)| g).sum();
        prop_assert!(sum.abs() < 1e-12);
        prop_assert!(gh.iter().all(|(_, h)| (0.0..=0.25).contains(h)));
    }

    #[test]
    fn trees_respect_depth_bound(seed in 0u64..1000, depth in 0usize..6) {
        let (x, g, h) = random_problem(seed, 50, 3);
        let rows: Vec<usize> = (0..50).collect();
        let tree = build_tree(&Presorted::new(x.view(), &rows), &g, &h, depth, LAMBDA, 1);
        prop_assert!(tree.depth() <= depth);
        prop_assert!(tree.is_well_formed());
        prop_assert!(tree.n_leaves() <= 1 << depth);
    }
}
