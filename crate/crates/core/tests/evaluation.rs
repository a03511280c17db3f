use proptest::prelude::*;
use sparc_core::envs::{Context, EnvConfig, EnvKind};
use sparc_core::eval::{
    delta_grid, dominates, evaluate_cell, pareto_select, scripted_reference, CheckpointScore, EvalGrid,
    GridCell,
};

fn grid_from(values: &[(f64, bool)]) -> EvalGrid {
    let cells = values
        .iter()
        .enumerate()
        .map(|(i, &(v, ood))| GridCell {
            context: vec![i as f64],
            is_ood: ood,
            valid: true,
            mean_metric: v,
            success_pct: 50.0,
            ratio: v * 0.5,
            n_episodes: 2,
        })
        .collect();
    EvalGrid::new(
        vec!["x".into()],
        vec![(0..values.len()).map(|i| i as f64).collect()],
        false,
        cells,
    )
    .unwrap()
}

proptest! {
    #[test]
    fn pareto_choice_is_never_dominated(points in prop::collection::vec(prop::collection::vec(-5i32..5, 3), 1..12)) {
        let scores: Vec<CheckpointScore> = points
            .iter()
            .enumerate()
            .map(|(i, p)| CheckpointScore { id: i as u64, metrics: p.iter().map(|&v| v as f64).collect() })
            .collect();
        let pick = pareto_select(&scores).unwrap();
        let chosen = &scores[pick as usize].metrics;
        for s in &scores {
            prop_assert!(!dominates(&s.metrics, chosen));
        }
        // brute force: best mean among non-dominated, latest on ties
        let mean = |m: &[f64]| m.iter().sum::<f64>() / m.len() as f64;
        let best = scores
            .iter()
            .filter(|s| scores.iter().all(|o| !dominates(&o.metrics, &s.metrics)))
            .map(|s| mean(&s.metrics))
            .fold(f64::NEG_INFINITY, f64::max);
        let expected = scores
            .iter()
            .filter(|s| scores.iter().all(|o| !dominates(&o.metrics, &s.metrics)) && mean(&s.metrics) == best)
            .map(|s| s.id)
            .max()
            .unwrap();
        prop_assert_eq!(pick, expected);
    }

    #[test]
    fn overall_mean_decomposes_into_ind_and_ood(cells in prop::collection::vec((-100.0f64..100.0, any::<bool>()), 2..40)) {
        let g = grid_from(&cells);
        let s = g.summary();
        let (ni, no) = (s.ind.n_cells as f64, s.ood.n_cells as f64);
        let mut combined = 0.0;
        if ni > 0.0 { combined += ni * s.ind.mean_metric; }
        if no > 0.0 { combined += no * s.ood.mean_metric; }
        combined /= ni + no;
        prop_assert!((combined - s.all.mean_metric).abs() < 1e-9);
    }

    #[test]
    fn delta_is_antisymmetric(a in prop::collection::vec(-10.0f64..10.0, 5), b in prop::collection::vec(-10.0f64..10.0, 5)) {
        let ga = grid_from(&a.iter().map(|&v| (v, false)).collect::<Vec<_>>());
        let gb = grid_from(&b.iter().map(|&v| (v, false)).collect::<Vec<_>>());
        let ab = delta_grid(&ga, &gb).unwrap();
        let ba = delta_grid(&gb, &ga).unwrap();
        for (x, y) in ab.cells.iter().zip(&ba.cells) {
            prop_assert_eq!(x.mean_metric, -y.mean_metric);
            prop_assert_eq!(x.ratio, -y.ratio);
        }
    }
}

#[test]
fn scripted_controller_normalizes_to_exactly_one() {
    for kind in [EnvKind::LinearRacer, EnvKind::WindyPointMass] {
        let env = EnvConfig::default_for(kind);
        let spec = env.default_context_spec(5).unwrap();
        let seeds = [0, 1];
        let probe = env.build();
        for (ctx, ood) in spec.eval_grid() {
            let reference = scripted_reference(&env, &ctx, &seeds).unwrap();
            let cell = evaluate_cell(&env, &ctx, ood, &seeds, 1, &reference, |obs, _| {
                Ok(probe.scripted_action(obs))
            })
            .unwrap();
            if cell.success_pct == 100.0 || !kind.metric_is_time() {
                assert_eq!(cell.ratio, 1.0, "{kind:?} {:?}", ctx.values);
            }
        }
    }
}

#[test]
fn cell_evaluation_is_deterministic_and_rejects_zero_episodes() {
    let env = EnvConfig::default_for(EnvKind::WindyPointMass);
    let ctx = Context::new(vec![0.4, -0.8]);
    let seeds = [3, 4, 5];
    let reference = scripted_reference(&env, &ctx, &seeds).unwrap();
    let run = || {
        evaluate_cell(&env, &ctx, false, &seeds, 4, &reference, |obs, h| {
            Ok(vec![(obs[0] + h.window()[0] as f64).tanh(), -obs[1].tanh()])
        })
        .unwrap()
    };
    let a = run();
    assert_eq!(a, run());
    assert!(evaluate_cell(&env, &ctx, false, &[], 4, &[], |_, _| Ok(vec![0.0, 0.0])).is_err());
}

#[test]
fn invalid_contexts_are_excluded_from_aggregates() {
    let env = EnvConfig::default_for(EnvKind::LinearRacer);
    let ctx = Context::new(vec![-1.0, 1.0]);
    let reference = scripted_reference(&env, &Context::new(vec![1.0, 1.0]), &[0]).unwrap();
    let cell = evaluate_cell(&env, &ctx, true, &[0], 1, &reference, |_, _| Ok(vec![0.0])).unwrap();
    assert!(!cell.valid);
    let mut g = grid_from(&[(1.0, false), (3.0, true)]);
    g.cells[1].valid = false;
    let s = g.summary();
    assert_eq!(s.all.n_cells, 1);
    assert_eq!(s.all.mean_metric, 1.0);
    assert_eq!(s.invalid_cells, 1);
}
