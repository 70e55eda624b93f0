use super::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn names(p: usize) -> Vec<String> {
    (0..p).map(|i| format!("f{i}")).collect()
}

fn random_rows(n: usize, p: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..p).map(|_| rng.random_range(0.0..10.0)).collect())
        .collect()
}

fn single_tree(max_depth: Option<usize>) -> ForestConfig {
    ForestConfig {
        n_trees: 1,
        max_depth,
        bootstrap: false,
        max_features: Some(MaxFeatures::All),
        ..ForestConfig::default()
    }
}

#[derive(Debug, Clone, Copy)]
struct OracleSplit {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

/// Exhaustive root split: every feature, every midpoint of consecutive
/// distinct values, child impurity computed from scratch.
fn brute_force_split(x: &[Vec<f64>], impurity: impl Fn(&[usize]) -> f64) -> Vec<OracleSplit> {
    let n = x.len();
    let mut all = Vec::new();
    for f in 0..x[0].len() {
        let mut vals: Vec<f64> = x.iter().map(|r| r[f]).collect();
        vals.sort_by(|a, b| a.total_cmp(b));
        vals.dedup();
        for w in vals.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let left: Vec<usize> = (0..n).filter(|&i| x[i][f] <= t).collect();
            let right: Vec<usize> = (0..n).filter(|&i| x[i][f] > t).collect();
            all.push(OracleSplit {
                feature: f,
                threshold: t,
                impurity: impurity(&left) + impurity(&right),
            });
        }
    }
    all
}

fn sse(y: &[f64], idx: &[usize]) -> f64 {
    let m = idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64;
    idx.iter().map(|&i| (y[i] - m).powi(2)).sum()
}

fn weighted_gini(labels: &[usize], k: usize, idx: &[usize]) -> f64 {
    let mut c = vec![0.0; k];
    for &i in idx {
        c[labels[i]] += 1.0;
    }
    let n = idx.len() as f64;
    n * (1.0 - c.iter().map(|v| (v / n).powi(2)).sum::<f64>())
}

fn root_split(model: &RandomForestModel) -> (usize, f64) {
    match &model.trees[0].nodes[0] {
        Node::Split {
            feature, threshold, ..
        } => (*feature, *threshold),
        Node::Leaf { .. } => panic!("root is a leaf"),
    }
}

fn check_against_oracle(candidates: &[OracleSplit], chosen: (usize, f64), scale: f64) {
    let best = candidates
        .iter()
        .fold(f64::INFINITY, |m, c| m.min(c.impurity));
    let tol = 1e-9 * scale.max(1.0);
    let chosen_imp = candidates
        .iter()
        .find(|c| c.feature == chosen.0 && c.threshold == chosen.1)
        .expect("chosen split is a midpoint candidate")
        .impurity;
    assert!((chosen_imp - best).abs() <= tol, "{chosen_imp} vs {best}");
    let near: Vec<&OracleSplit> = candidates
        .iter()
        .filter(|c| c.impurity - best <= tol)
        .collect();
    if near.len() == 1 {
        assert_eq!((near[0].feature, near[0].threshold), chosen);
    }
}

#[test]
fn root_split_matches_brute_force_regression() {
    for seed in 0..25 {
        let x = random_rows(20, 4, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let y: Vec<f64> = x
            .iter()
            .map(|r| r[0] * 0.5 - r[2] + rng.random_range(-2.0..2.0))
            .collect();
        let model = train(&x, &Targets::Regression(y.clone()), &names(4), &single_tree(Some(1))).unwrap();
        let candidates = brute_force_split(&x, |idx| sse(&y, idx));
        check_against_oracle(&candidates, root_split(&model), sse(&y, &(0..20).collect::<Vec<_>>()));
    }
}

#[test]
fn root_split_matches_brute_force_classification() {
    for seed in 0..25 {
        let x = random_rows(20, 3, seed + 50);
        let labels: Vec<usize> = x.iter().map(|r| ((r[1] + r[0] * 0.3) as usize / 3).min(2)).collect();
        let targets = Targets::Classification {
            labels: labels.clone(),
            classes: names(3),
        };
        if labels.iter().all(|&l| l == labels[0]) {
            continue;
        }
        let model = train(&x, &targets, &names(3), &single_tree(Some(1))).unwrap();
        let candidates = brute_force_split(&x, |idx| weighted_gini(&labels, 3, idx));
        check_against_oracle(&candidates, root_split(&model), 20.0);
    }
}

#[test]
fn constant_target_predicts_constant() {
    let x = random_rows(30, 3, 1);
    let model = train(&x, &Targets::Regression(vec![2.7; 30]), &names(3), &ForestConfig::default()).unwrap();
    for row in random_rows(10, 3, 2) {
        assert_eq!(model.predict(&row).unwrap(), 2.7);
    }
    assert!(model.trees.iter().all(|t| t.nodes.len() == 1));
}

#[test]
fn unlimited_single_tree_memorizes() {
    let x = random_rows(40, 3, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let y: Vec<f64> = (0..40).map(|_| rng.random_range(1.0..5.0)).collect();
    let model = train(&x, &Targets::Regression(y.clone()), &names(3), &single_tree(None)).unwrap();
    for (row, &t) in x.iter().zip(&y) {
        assert_eq!(model.predict(row).unwrap(), t);
    }
    let labels: Vec<usize> = (0..40).map(|i| i % 6).collect();
    let targets = Targets::Classification {
        labels: labels.clone(),
        classes: names(6),
    };
    let model = train(&x, &targets, &names(3), &single_tree(None)).unwrap();
    for (row, &l) in x.iter().zip(&labels) {
        assert_eq!(model.predict_class(row).unwrap(), l);
    }
}

fn leaf_tree(value: f64) -> Tree {
    Tree {
        nodes: vec![Node::Leaf { value }],
    }
}

fn manual_model(task: Task, trees: Vec<Tree>, classes: Vec<String>) -> RandomForestModel {
    RandomForestModel {
        task,
        feature_names: names(1),
        classes,
        config: ForestConfig::default(),
        trees,
    }
}

#[test]
fn voting_and_averaging() {
    let abc = vec!["A".to_string(), "B".to_string(), "C".to_string()];
    let m = manual_model(Task::Classification, vec![leaf_tree(0.0), leaf_tree(0.0), leaf_tree(1.0)], abc.clone());
    assert_eq!(m.predict_class(&[0.0]).unwrap(), 0);
    assert_eq!(m.votes(&[0.0]).unwrap(), vec![2, 1, 0]);
    let tie = manual_model(Task::Classification, vec![leaf_tree(2.0), leaf_tree(1.0)], abc);
    assert_eq!(tie.predict_class(&[0.0]).unwrap(), 1);
    let one = manual_model(Task::Regression, vec![leaf_tree(3.25)], vec![]);
    assert_eq!(one.predict(&[9.0]).unwrap(), 3.25);
    assert!(matches!(one.predict(&[1.0, 2.0]), Err(ForestError::Shape { expected: 1, got: 2 })));
}

/// Walk a tree by hand from the serialized node list.
fn traverse(nodes: &[Node], row: &[f64]) -> f64 {
    let mut i = 0;
    while let Node::Split {
        feature,
        threshold,
        left,
        right,
    } = &nodes[i]
    {
        i = if row[*feature] <= *threshold { *left } else { *right };
    }
    match &nodes[i] {
        Node::Leaf { value } => *value,
        _ => unreachable!(),
    }
}

#[test]
fn regression_mean_matches_tree_traversals() {
    let x = random_rows(60, 5, 7);
    let y: Vec<f64> = x.iter().map(|r| r[0] + r[1] * r[2] / 10.0).collect();
    let cfg = ForestConfig {
        n_trees: 15,
        ..ForestConfig::default()
    };
    let model = train(&x, &Targets::Regression(y), &names(5), &cfg).unwrap();
    for row in random_rows(20, 5, 8) {
        let mean = model.trees.iter().map(|t| traverse(&t.nodes, &row)).sum::<f64>() / 15.0;
        assert_eq!(model.predict(&row).unwrap(), mean);
    }
}

#[test]
fn classification_votes_sum_to_tree_count() {
    let x = random_rows(50, 4, 9);
    let labels: Vec<usize> = x.iter().map(|r| (r[0] / 2.5) as usize).collect();
    let targets = Targets::Classification {
        labels,
        classes: names(4),
    };
    let cfg = ForestConfig {
        n_trees: 17,
        ..ForestConfig::default()
    };
    let model = train(&x, &targets, &names(4), &cfg).unwrap();
    for row in random_rows(10, 4, 10) {
        assert_eq!(model.votes(&row).unwrap().iter().sum::<usize>(), 17);
    }
}

#[test]
fn result_independent_of_thread_count() {
    let x = random_rows(80, 6, 11);
    let y: Vec<f64> = x.iter().map(|r| r[3] - r[4]).collect();
    let targets = Targets::Regression(y);
    let cfg = ForestConfig {
        n_trees: 12,
        seed: 99,
        ..ForestConfig::default()
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train(&x, &targets, &names(6), &cfg).unwrap())
    };
    let a = run(1);
    assert_eq!(a, run(3));
    assert_eq!(a.to_json(), run(2).to_json());
    let other = train(&x, &targets, &names(6), &cfg.with_seed(100)).unwrap();
    assert_ne!(a, other);
}

#[test]
fn model_json_round_trip() {
    let x = random_rows(30, 2, 12);
    let targets = Targets::Classification {
        labels: (0..30).map(|i| i % 2).collect(),
        classes: vec!["no".into(), "yes".into()],
    };
    let cfg = ForestConfig {
        n_trees: 5,
        ..ForestConfig::default()
    };
    let model = train(&x, &targets, &names(2), &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    model.save(&path).unwrap();
    assert_eq!(RandomForestModel::load(&path).unwrap(), model);
}

#[test]
fn input_validation() {
    let cfg = ForestConfig::default();
    assert!(matches!(
        train(&[], &Targets::Regression(vec![]), &names(1), &cfg),
        Err(ForestError::NoSamples)
    ));
    assert!(matches!(
        train(&[vec![f64::NAN]], &Targets::Regression(vec![1.0]), &names(1), &cfg),
        Err(ForestError::NonFinite { row: 0, col: 0 })
    ));
    assert!(matches!(
        train(&[vec![1.0]], &Targets::Regression(vec![1.0, 2.0]), &names(1), &cfg),
        Err(ForestError::LengthMismatch { .. })
    ));
    let zero = ForestConfig {
        n_trees: 0,
        ..cfg
    };
    assert!(train(&[vec![1.0]], &Targets::Regression(vec![1.0]), &names(1), &zero).is_err());
    assert_eq!(MaxFeatures::Sqrt.resolve(10), 3);
    assert_eq!(MaxFeatures::Third.resolve(10), 3);
    assert_eq!(MaxFeatures::Third.resolve(2), 1);
    assert_eq!(MaxFeatures::Fixed(50).resolve(10), 10);
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i:03}")).collect()
}

#[test]
fn fold_assignment_properties() {
    let id = ids(23);
    let a = fold_assignment(&id, 5, 1).unwrap();
    assert_eq!(a, fold_assignment(&id, 5, 1).unwrap());
    assert_ne!(a, fold_assignment(&id, 5, 2).unwrap());
    for f in 0..5 {
        let size = a.iter().filter(|&&v| v == f).count();
        assert!(size == 4 || size == 5);
    }
    let mut rev = id.clone();
    rev.reverse();
    let b = fold_assignment(&rev, 5, 1).unwrap();
    for (i, s) in rev.iter().enumerate() {
        assert_eq!(b[i], a[id.iter().position(|t| t == s).unwrap()]);
    }
    assert!(matches!(fold_assignment(&ids(3), 5, 0), Err(ForestError::TooFewSamples { .. })));
    let dup = vec!["a".to_string(), "a".to_string(), "b".to_string()];
    assert!(matches!(fold_assignment(&dup, 2, 0), Err(ForestError::DuplicateId(_))));
}

#[test]
fn leave_one_out_structure() {
    let x = random_rows(10, 3, 13);
    let y: Vec<f64> = x.iter().map(|r| r[0]).collect();
    let cfg = ForestConfig {
        n_trees: 10,
        ..ForestConfig::default()
    };
    let cv = cross_validate(&ids(10), &x, &Targets::Regression(y), &names(3), &cfg, 10).unwrap();
    assert_eq!(cv.samples.len(), 10);
    let folds: BTreeSet<usize> = cv.samples.iter().map(|s| s.fold).collect();
    assert_eq!(folds.len(), 10);
    assert!(cv.samples.iter().all(|s| s.prediction.is_finite()));
}

use std::collections::BTreeSet;

#[test]
fn cross_validation_is_row_order_invariant() {
    let n = 60;
    let x = random_rows(n, 4, 14);
    let y: Vec<f64> = x.iter().map(|r| r[0] * 2.0 - r[1]).collect();
    let id = ids(n);
    let cfg = ForestConfig {
        n_trees: 20,
        seed: 5,
        ..ForestConfig::default()
    };
    let base = cross_validate(&id, &x, &Targets::Regression(y.clone()), &names(4), &cfg, 5).unwrap();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(77));
    let px: Vec<Vec<f64>> = perm.iter().map(|&i| x[i].clone()).collect();
    let py: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
    let pid: Vec<String> = perm.iter().map(|&i| id[i].clone()).collect();
    let shuffled = cross_validate(&pid, &px, &Targets::Regression(py), &names(4), &cfg, 5).unwrap();
    assert_eq!(base, shuffled);
    assert!(base.pearson().unwrap() > 0.8, "{:?}", base.correlation);
}

#[test]
fn missing_values_use_training_median() {
    let rows = vec![vec![1.0, f64::NAN], vec![3.0, 4.0], vec![2.0, f64::NAN], vec![f64::NAN, f64::NAN]];
    assert_eq!(impute_median(&rows), vec![2.0, 4.0]);
    assert_eq!(impute_median(&[vec![f64::NAN]]), vec![0.0]);
    let mut x = random_rows(40, 3, 15);
    for i in (0..40).step_by(7) {
        x[i][1] = f64::NAN;
    }
    let y: Vec<f64> = (0..40).map(|i| i as f64).collect();
    let cfg = ForestConfig {
        n_trees: 5,
        ..ForestConfig::default()
    };
    let cv = cross_validate(&ids(40), &x, &Targets::Regression(y), &names(3), &cfg, 4).unwrap();
    assert!(cv.samples.iter().all(|s| s.prediction.is_finite()));
}

fn patch_set(images: usize, per_image: usize, seed: u64, informative: bool) -> (Vec<String>, Vec<String>, Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut pid, mut gid, mut x, mut y) = (vec![], vec![], vec![], vec![]);
    for img in 0..images {
        let label = rng.random_range(0..6);
        for p in 0..per_image {
            pid.push(format!("img{img:04}_p{p}"));
            gid.push(format!("img{img:04}"));
            let mut row: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
            if informative {
                row[2] = label as f64 + rng.random_range(0.0..0.5);
            }
            x.push(row);
            y.push(label);
        }
    }
    (pid, gid, x, y)
}

#[test]
fn detection_separable_labels() {
    let (pid, gid, x, y) = patch_set(60, 3, 16, true);
    let cfg = ForestConfig {
        n_trees: 10,
        max_features: Some(MaxFeatures::All),
        ..ForestConfig::default()
    };
    let d = detect_baseline(&pid, &gid, &gid, &x, &y, &names(6), &names(4), &cfg, 5).unwrap();
    assert_eq!(d.patch.accuracy(), Some(1.0));
    assert_eq!(d.image_accuracy, 1.0);
    assert_eq!(d.images.len(), 60);
    // grouped folds: every patch of an image shares a fold
    let mut fold_of = BTreeMap::new();
    for s in &d.patch.samples {
        let g = &s.stimulus_id[..7];
        assert_eq!(*fold_of.entry(g.to_string()).or_insert(s.fold), s.fold);
    }
}

use std::collections::BTreeMap;

#[test]
fn detection_chance_level_on_uninformative_features() {
    let (pid, gid, x, y) = patch_set(400, 3, 17, false);
    let cfg = ForestConfig {
        n_trees: 25,
        ..ForestConfig::default()
    };
    let d = detect_baseline(&pid, &gid, &gid, &x, &y, &names(6), &names(4), &cfg, 10).unwrap();
    let acc = d.patch.accuracy().unwrap();
    assert!((acc - 1.0 / 6.0).abs() <= 0.05, "{acc}");
    let mut buf = Vec::new();
    write_cv_csv(&d.patch, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("stimulus_id,truth,prediction\nimg0000_p0,f"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn duplicated_column_keeps_training_accuracy(seed in 0u64..10_000, dup in 0usize..3, depth in 1usize..4) {
        let x = random_rows(30, 3, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
        let labels: Vec<usize> = (0..30).map(|_| rng.random_range(0..3)).collect();
        let targets = Targets::Classification { labels: labels.clone(), classes: names(3) };
        let acc = |rows: &[Vec<f64>], p: usize| {
            let m = train(rows, &targets, &names(p), &single_tree(Some(depth))).unwrap();
            rows.iter().zip(&labels).filter(|(r, &l)| m.predict_class(r).unwrap() == l).count()
        };
        let wide: Vec<Vec<f64>> = x.iter().map(|r| { let mut r = r.clone(); r.push(r[dup]); r }).collect();
        prop_assert!(acc(&wide, 4) >= acc(&x, 3));
    }
}
