use super::*;
use crate::rng::seeded;
use rand::Rng as _;

fn random_features(n: usize, tokens: usize, dim: usize, seed: u64) -> Vec<TokenFeatures> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| TokenFeatures {
            cls: Array1::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0)),
            patches: Array2::from_shape_fn((tokens, dim), |_| rng.random_range(-1.0..1.0)),
        })
        .collect()
}

#[test]
fn five_point_metrics() {
    let pred = [1.0, 2.0, 3.0, 4.0, 5.0];
    let actual = [1.0, 2.0, 3.0, 4.0, 6.0];
    // mean 3.2, SS_tot 14.8, SS_res 1.
    assert!((r_squared(&pred, &actual).unwrap() - (1.0 - 1.0 / 14.8)).abs() < 1e-12);
    assert!((mean_absolute_error(&pred, &actual) - 0.2).abs() < 1e-12);
    assert_eq!(r_squared(&pred, &[2.0; 5]), None);
    assert_eq!(accuracy(&[0, 1, 2, 1], &[0, 1, 1, 1]), 0.75);
}

#[test]
fn split_is_seeded_and_disjoint() {
    let a = split_indices(50, 0.8, 0.1, 3).unwrap();
    assert_eq!(a, split_indices(50, 0.8, 0.1, 3).unwrap());
    assert_ne!(a, split_indices(50, 0.8, 0.1, 4).unwrap());
    assert_eq!((a.train.len(), a.val.len(), a.test.len()), (36, 4, 10));
    let mut all: Vec<usize> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
    all.sort();
    assert_eq!(all, (0..50).collect::<Vec<_>>());
}

#[test]
fn pairing_rule_enforced() {
    let mut c = ProbeConfig::new(FeatureMode::Cls, Task::Regression, 0);
    assert!(c.validate().is_ok());
    c.head = HeadKind::AttentivePooler;
    assert!(c.validate().is_err());
    let mut p = ProbeConfig::new(FeatureMode::Patches, Task::Regression, 0);
    p.head = HeadKind::Mlp;
    assert!(p.validate().is_err());
    assert_eq!(FeatureMode::PatchesPlusCls.default_head(), HeadKind::AttentivePooler);
}

#[test]
fn realizable_linear_target_is_recovered() {
    let feats = random_features(400, 2, 8, 1);
    let labels: Vec<f64> = feats.iter().map(|f| 3.0 * f.cls[2] as f64 - 1.0).collect();
    let cfg = ProbeConfig::new(FeatureMode::Cls, Task::Regression, 0);
    let r = fit_probe(&feats, &labels, &cfg).unwrap();
    assert!(r.report().r_squared.unwrap() >= 0.999, "{:?}", r.report());

    let one_token = random_features(400, 1, 8, 2);
    let labels: Vec<f64> = one_token.iter().map(|f| 2.0 * f.patches[[0, 5]] as f64).collect();
    let cfg = ProbeConfig::new(FeatureMode::Patches, Task::Regression, 0);
    let r = fit_probe(&one_token, &labels, &cfg).unwrap();
    assert!(r.report().r_squared.unwrap() >= 0.999, "{:?}", r.report());
}

#[test]
fn permuted_labels_carry_no_signal() {
    let feats = random_features(300, 2, 8, 3);
    let mut labels: Vec<f64> = feats.iter().map(|f| f.cls[0] as f64).collect();
    labels.shuffle(&mut seeded(7));
    for seed in 0..5 {
        let cfg = ProbeConfig::new(FeatureMode::Cls, Task::Regression, seed);
        let r2 = fit_probe(&feats, &labels, &cfg).unwrap().report().r_squared.unwrap();
        assert!(r2 <= 0.05, "seed {seed}: {r2}");
    }
}

#[test]
fn classification_reports_accuracy() {
    let feats = random_features(300, 3, 4, 5);
    let labels: Vec<f64> = feats.iter().map(|f| (f.cls[1] > 0.0) as u8 as f64).collect();
    let cfg = ProbeConfig::new(FeatureMode::Cls, Task::Classification { classes: 2 }, 1);
    let r = fit_probe(&feats, &labels, &cfg).unwrap();
    let acc = r.report().accuracy.unwrap();
    assert!(acc > 0.9, "{acc}");
    assert_eq!(r.report().r_squared, None);
    assert!(fit_probe(&feats, &vec![2.0; 300], &cfg).is_err());
}

#[test]
fn constant_labels_leave_r2_undefined() {
    let feats = random_features(40, 2, 4, 6);
    let cfg = ProbeConfig::new(FeatureMode::Patches, Task::Regression, 0);
    let r = fit_probe(&feats, &vec![1.5; 40], &cfg).unwrap();
    assert_eq!(r.report().r_squared, None);
    assert!(r.report().to_text().contains("r_squared: undefined"));
}

#[test]
fn cls_token_adds_exactly_one_row() {
    let feats = random_features(4, 5, 3, 8);
    let train = [0, 1, 2, 3];
    let a = Inputs::fit(&feats, FeatureMode::Patches, &train);
    let mut b = Inputs::fit(&feats, FeatureMode::PatchesPlusCls, &train);
    b.mean = a.mean.clone();
    b.inv_std = a.inv_std.clone();
    let (ta, tb) = (a.tokens(2), b.tokens(2));
    assert_eq!(tb.nrows(), ta.nrows() + 1);
    assert_eq!(tb.slice(s![1.., ..]), ta);
}

#[test]
fn report_round_trips_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    let feats = random_features(30, 2, 4, 9);
    let labels: Vec<f64> = (0..30).map(|i| i as f64).collect();
    let mut cfg = ProbeConfig::new(FeatureMode::Cls, Task::Regression, 0);
    cfg.epochs = 2;
    let r = fit_probe(&feats, &labels, &cfg).unwrap();
    r.report().append_to_csv(&path).unwrap();
    r.report().append_to_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], RESULTS_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with(&cfg.hash()));
    cfg.label = "other".into();
    assert_ne!(cfg.hash(), r.report().config_hash);
    let text = r.report().to_text();
    let kv: Vec<&str> = text.lines().map(|l| l.split(": ").next().unwrap()).collect();
    assert!(kv.contains(&"mae") && kv.contains(&"n_test"));
}
