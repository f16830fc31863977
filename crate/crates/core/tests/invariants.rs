use std::collections::BTreeSet;

use chrono::NaiveDate;
use proptest::prelude::*;

use crimelab::dataset::{build_grid, make_folds, undersample, CELLS_PER_REGION_YEAR};
use crimelab::eval::metrics::{auc, confusion, metrics, roc_auc_trapezoid, threshold};
use crimelab::features::binning::bin_timestamp;
use crimelab::features::{TimeBinning, YearMonth};
use crimelab::learn::mlp::InputGroup;
use crimelab::learn::{
    fit_forest, fit_gbm, fit_mlp, fit_tree, BoostParams, ForestParams, Matrix, MlpParams, Model, TreeParams,
};

fn labels_and_scores() -> impl Strategy<Value = (Vec<u8>, Vec<f64>)> {
    (2usize..80).prop_flat_map(|n| {
        (
            prop::collection::vec(0u8..=1, n),
            // A small score alphabet forces plenty of ties.
            prop::collection::vec((0u8..12).prop_map(|s| f64::from(s) / 11.0), n),
        )
    })
}

fn has_both(labels: &[u8]) -> bool {
    labels.contains(&0) && labels.contains(&1)
}

proptest! {
    #[test]
    fn rank_auc_equals_trapezoid((labels, scores) in labels_and_scores()) {
        prop_assume!(has_both(&labels));
        let a = auc(&labels, &scores).unwrap();
        let b = roc_auc_trapezoid(&labels, &scores).unwrap();
        prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        prop_assert!((0.0..=1.0).contains(&a));
        let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((auc(&labels, &flipped).unwrap() - (1.0 - a)).abs() <= 1e-12);
    }

    #[test]
    fn constant_scores_give_one_half(labels in prop::collection::vec(0u8..=1, 2..60), s in -5.0f64..5.0) {
        prop_assume!(has_both(&labels));
        let scores = vec![s; labels.len()];
        prop_assert_eq!(auc(&labels, &scores).unwrap(), 0.5);
        prop_assert_eq!(roc_auc_trapezoid(&labels, &scores).unwrap(), 0.5);
    }

    #[test]
    fn metrics_stay_in_range((labels, scores) in labels_and_scores()) {
        let c = confusion(&labels, &threshold(&scores, 0.5)).unwrap();
        prop_assert_eq!(c.total() as usize, labels.len());
        let m = metrics(&c);
        for v in [m.accuracy, m.precision, m.recall, m.f_score, m.macro_f] {
            prop_assert!((0.0..=100.0).contains(&v), "{:?}", m);
        }
    }

    #[test]
    fn grid_has_every_cell_once(n_regions in 1usize..4, years in prop::collection::btree_set(2010i32..2016, 1..3),
                                crimes in prop::collection::vec((0usize..4, 0i64..6 * 365 * 24), 0..60)) {
        let ids: Vec<String> = (0..n_regions).map(|i| format!("r{i}")).collect();
        let years: Vec<i32> = years.into_iter().collect();
        let binning = TimeBinning::default();
        let base = NaiveDate::from_ymd_opt(2010, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let bins: Vec<(&str, _)> = crimes
            .iter()
            .map(|&(r, h)| (ids[r % n_regions].as_str(), bin_timestamp(base + chrono::Duration::hours(h), &binning)))
            .collect();
        let grid = build_grid(&bins, &ids, &years).unwrap();
        prop_assert_eq!(grid.cells.len(), n_regions * years.len() * CELLS_PER_REGION_YEAR);
        prop_assert!(grid.cells.windows(2).all(|w| w[0].key < w[1].key));
        let in_study = bins.iter().filter(|(_, b)| years.contains(&b.year)).count();
        prop_assert_eq!(grid.cells.iter().map(|c| c.crime_count as usize).sum::<usize>(), in_study);
        let distinct: BTreeSet<_> = bins
            .iter()
            .filter(|(_, b)| years.contains(&b.year))
            .map(|(id, b)| (*id, b.year, b.month, b.weekday, b.interval))
            .collect();
        prop_assert_eq!(grid.positives(), distinct.len());
    }

    #[test]
    fn undersampling_balances_and_keeps_crimes(labels in prop::collection::vec(prop::bool::weighted(0.2), 4..300),
                                               seed in any::<u64>()) {
        let ids = vec!["r".to_string()];
        let mut grid = build_grid(&[], &ids, &[2012]).unwrap();
        for (c, &l) in grid.cells.iter_mut().zip(&labels) {
            c.label = u8::from(l);
        }
        let subset: Vec<usize> = (0..labels.len()).collect();
        let pos = labels.iter().filter(|&&l| l).count();
        prop_assume!(pos > 0 && pos < labels.len());
        let kept = undersample(&grid.cells, &subset, 1.0, seed).unwrap();
        prop_assert!(kept.windows(2).all(|w| w[0] < w[1]));
        let kept_pos = kept.iter().filter(|&&i| labels[i]).count();
        prop_assert_eq!(kept_pos, pos);
        prop_assert_eq!(kept.len() - kept_pos, pos.min(labels.len() - pos));
        prop_assert_eq!(undersample(&grid.cells, &subset, 1.0, seed).unwrap(), kept);
    }

    #[test]
    fn folds_are_disjoint_and_slide(n_folds in 1usize..13, y in 2000i32..2030, m in 1u8..=12) {
        let start = YearMonth::new(y, m).unwrap();
        let folds = make_folds(start, n_folds + 23, n_folds).unwrap();
        prop_assert!(make_folds(start, n_folds + 22, n_folds).is_err());
        for (i, f) in folds.iter().enumerate() {
            prop_assert_eq!(f.train.start, start.plus_months(i as i64));
            prop_assert_eq!(f.test.start, f.train.start.plus_months(12));
            for k in 0..12 {
                prop_assert!(!f.test.contains(f.train.start.plus_months(k)));
                prop_assert!(f.train.contains(f.train.start.plus_months(k)));
                prop_assert!(f.test.contains(f.test.start.plus_months(k)));
            }
            prop_assert!(!f.test.contains(f.test.start.plus_months(12)));
        }
    }
}

fn toy(n: usize, seed: u64) -> (Vec<f64>, Vec<u8>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n * 3);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: [f64; 3] = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.0..1.0)];
        y.push(u8::from(row[0] + 0.5 * row[1] + rng.gen_range(-0.5..0.5) > 0.0));
        x.extend_from_slice(&row);
    }
    (x, y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn models_round_trip_and_output_probabilities(seed in any::<u64>()) {
        let (x, y) = toy(120, seed);
        prop_assume!(has_both(&y));
        let m = Matrix::new(&x, 3).unwrap();
        let targets: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
        let groups = [InputGroup { name: "a".into(), columns: vec![0, 1] }, InputGroup { name: "b".into(), columns: vec![2] }];
        let mlp = MlpParams { epochs: 3, batch_size: 32, ..MlpParams::default() };
        let models = [
            Model::Tree(fit_tree(m, &targets, None, TreeParams { max_depth: 4, min_leaf: 1 }).unwrap()),
            Model::Forest(fit_forest(m, &y, &ForestParams { n_trees: 7, ..ForestParams::default() }, seed).unwrap()),
            Model::Gbm(fit_gbm(m, &y, &BoostParams { n_rounds: 10, ..BoostParams::default() }, seed).unwrap()),
            Model::Mlp(fit_mlp(m, &y, &groups, &mlp, seed, None).unwrap().model),
        ];
        for model in &models {
            let p = model.predict_proba(m);
            prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
            let back = Model::from_json(&model.to_json()).unwrap();
            prop_assert_eq!(&back, model);
            let q = back.predict_proba(m);
            prop_assert!(p.iter().zip(&q).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
