//! Property tests for the pipeline invariants.

use proptest::prelude::*;

use innodex::analysis::compare_pair;
use innodex::attribution::{forest_contributions, ContributionVector};
use innodex::dataset::{
    apply_scaler, fit_scaler, load_panel, Panel, SampleId, Schema, SupervisedMatrix,
};
use innodex::forest::{fit_forest, Hyperparams};
use innodex::dataset::ScalerParams;

fn panel_strategy() -> impl Strategy<Value = Panel> {
    (1usize..12, 1usize..6)
        .prop_flat_map(|(rows, cols)| {
            let values = prop::collection::vec(-100.0f64..100.0, rows * cols);
            let missing = prop::collection::vec(prop::bool::weighted(0.25), rows * cols);
            (Just(rows), Just(cols), values, missing)
        })
        .prop_map(|(rows, cols, values, missing)| {
            let row_ids = (0..rows)
                .map(|i| SampleId::new(format!("C{i:03}"), 2010))
                .collect();
            let column_ids = (0..cols).map(|c| format!("m{c}")).collect();
            Panel::new(row_ids, column_ids, values, missing).unwrap()
        })
}

proptest! {
    /// Standardizing the fitting panel gives zero mean and unit population
    /// variance on every non-constant column's observed entries.
    #[test]
    fn scaler_normalizes_fitting_panel(panel in panel_strategy()) {
        let params = fit_scaler(&panel).unwrap();
        let scaled = apply_scaler(&panel, &params).unwrap();
        for c in 0..panel.n_cols() {
            if params.constant[c] {
                continue;
            }
            let observed: Vec<f64> = (0..panel.n_rows())
                .filter(|&r| !scaled.is_missing(r, c))
                .map(|r| scaled.value(r, c))
                .collect();
            let n = observed.len() as f64;
            let mean = observed.iter().sum::<f64>() / n;
            let var = observed.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            prop_assert!(mean.abs() <= 1e-9, "mean {mean}");
            prop_assert!((var - 1.0).abs() <= 1e-9, "var {var}");
        }
    }

    /// mean + std * scaled recovers the original observed values.
    #[test]
    fn scaler_inverse_recovers_values(panel in panel_strategy()) {
        let params = fit_scaler(&panel).unwrap();
        let scaled = apply_scaler(&panel, &params).unwrap();
        for r in 0..panel.n_rows() {
            for c in 0..panel.n_cols() {
                if panel.is_missing(r, c) || params.constant[c] {
                    continue;
                }
                let recovered = params.means[c] + params.stds[c] * scaled.value(r, c);
                let original = panel.value(r, c);
                prop_assert!(
                    (recovered - original).abs() <= 1e-9 * original.abs().max(1.0),
                    "{recovered} vs {original}"
                );
            }
        }
    }

    /// Filling 0 after standardization equals mean-imputing before it.
    #[test]
    fn imputation_equivalence(panel in panel_strategy()) {
        let params = fit_scaler(&panel).unwrap();
        let scaled = apply_scaler(&panel, &params).unwrap();
        for r in 0..panel.n_rows() {
            for c in 0..panel.n_cols() {
                let imputed = if panel.is_missing(r, c) {
                    params.means[c]
                } else {
                    panel.value(r, c)
                };
                let via_mean_imputation = if params.constant[c] {
                    0.0
                } else {
                    (imputed - params.means[c]) / params.stds[c]
                };
                prop_assert_eq!(scaled.value(r, c), via_mean_imputation);
            }
        }
    }

    /// Row order equals first-appearance order in the source.
    #[test]
    fn load_panel_is_order_stable(order in Just((0..15usize).collect::<Vec<_>>()).prop_shuffle()) {
        let mut csv = String::from("country,year,m1\n");
        for &i in &order {
            csv.push_str(&format!("C{i:02},{},{}\n", 2000 + (i % 4) as i32, i));
        }
        let panel = load_panel(csv.as_bytes(), &Schema::default()).unwrap();
        let expected: Vec<SampleId> = order
            .iter()
            .map(|&i| SampleId::new(format!("C{i:02}"), 2000 + (i % 4) as i32))
            .collect();
        prop_assert_eq!(panel.row_ids, expected);
    }
}

fn supervised_strategy() -> impl Strategy<Value = SupervisedMatrix> {
    (8usize..24, 2usize..5)
        .prop_flat_map(|(rows, cols)| {
            let values = prop::collection::vec(-10.0f64..10.0, rows * cols);
            let target = prop::collection::vec(-5.0f64..5.0, rows);
            (Just(rows), Just(cols), values, target)
        })
        .prop_map(|(rows, cols, values, target)| {
            let row_ids = (0..rows)
                .map(|i| SampleId::new(format!("C{i:03}"), 2010))
                .collect();
            let column_ids: Vec<String> = (0..cols).map(|c| format!("m{c}")).collect();
            let missing = vec![false; rows * cols];
            SupervisedMatrix {
                features: Panel::new(row_ids, column_ids, values, missing).unwrap(),
                target,
                target_name: "score".into(),
                dropped_rows: 0,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// prediction = baseline + sum of contributions, for any fitted forest
    /// and sample.
    #[test]
    fn additive_identity(
        data in supervised_strategy(),
        n_trees in 1usize..8,
        seed in 0u64..1000,
    ) {
        let hp = Hyperparams {
            n_trees,
            min_samples_leaf: 1,
            max_depth: Some(4),
            ..Hyperparams::default()
        };
        let scaler = ScalerParams::identity(&data.features.column_ids);
        let model = fit_forest(&data, &hp, seed, scaler).unwrap();
        for r in 0..data.features.n_rows() {
            let cv = forest_contributions(&model, data.features.row(r)).unwrap();
            let residual =
                (cv.predicted - cv.baseline - cv.contributions.iter().sum::<f64>()).abs();
            prop_assert!(residual <= 1e-9 * cv.predicted.abs().max(1.0));
        }
    }

    /// Swapping the pair negates every diff and keeps the metric set.
    #[test]
    fn comparison_antisymmetry(
        ca in prop::collection::vec(-5.0f64..5.0, 1..8),
        cb_seedless in prop::collection::vec(-5.0f64..5.0, 1..8),
    ) {
        let k = ca.len().min(cb_seedless.len());
        let ca = &ca[..k];
        let cb = &cb_seedless[..k];
        let names: Vec<String> = (0..k).map(|c| format!("m{c}")).collect();
        let mk = |id: &str, c: &[f64]| ContributionVector {
            sample_id: SampleId::new(id, 2010),
            baseline: 1.0,
            contributions: c.to_vec(),
            predicted: 1.0 + c.iter().sum::<f64>(),
            model_hash: "h".into(),
        };
        let a = mk("A", ca);
        let b = mk("B", cb);
        let ab = compare_pair(&a, &b, &names, k.max(1)).unwrap();
        let ba = compare_pair(&b, &a, &names, k.max(1)).unwrap();
        prop_assert_eq!(ab.entries.len(), ba.entries.len());
        for e in &ab.entries {
            let mirror = ba.entries.iter().find(|x| x.metric == e.metric).unwrap();
            prop_assert_eq!(mirror.diff, -e.diff);
            prop_assert_eq!(mirror.c_a, e.c_b);
        }
    }
}
