use std::collections::VecDeque;

use gomea_sr::dataio::{synth_problem, DataMatrix, Samples};
use gomea_sr::engine::{
    gom_step, has_converged, init_half_and_half, learn_linkage, run_fixed, run_generation, run_ims, run_ims_with_base,
    BestTracker, EngineOptions, GomTrace, ImsEvent, ScriptedChoices,
};
use gomea_sr::evaluator::{EvaluationBudget, FitnessContext};
use gomea_sr::linkage::{Fos, MeasureKind};
use gomea_sr::template::{OpKind, OperatorSet, Representation, Symbol, Template};

// Ten rows: x0 = 1..10, x1 = 0, y = 2 x0. mean(y) = 11, var(y) = 33,
// mean(y^2) = 154, mean(x0^2) = 38.5.
fn toy_context() -> FitnessContext {
    let rows: Vec<Vec<f64>> = (1..=10).map(|i| vec![i as f64, 0.0]).collect();
    let y = (1..=10).map(|i| 2.0 * i as f64).collect();
    let samples = Samples::new(DataMatrix::from_rows(&rows).unwrap(), y).unwrap();
    let repr = Representation::new(Template::new(1, 2).unwrap(), OperatorSet::base()).unwrap();
    FitnessContext::new(repr, samples, false)
}

fn script(order: &[usize], donors: &[usize]) -> ScriptedChoices {
    ScriptedChoices {
        order: order.to_vec(),
        donors: donors.iter().copied().collect::<VecDeque<_>>(),
    }
}

#[test]
fn scripted_gom_matches_hand_trace() {
    let ctx = toy_context();
    let ops = &ctx.repr.ops;
    let op = |k| Symbol::Op(ops.id_of(k).unwrap());
    let (x0, x1) = (Symbol::Feature(0), Symbol::Feature(1));
    let budget = EvaluationBudget::unlimited();
    let mut tracker = BestTracker::default();
    let mut pop = init_half_and_half(4, &ctx, &EngineOptions::default(), 0, &budget, &mut tracker).unwrap();
    let parents = [
        [op(OpKind::Add), x0, x0],
        [op(OpKind::Sub), x0, x0],
        [op(OpKind::Sin), x1, x0],
        [op(OpKind::Add), x0, x1],
    ];
    for (i, p) in parents.iter().enumerate() {
        pop.genotypes[i].symbols = p.to_vec();
        pop.genotypes[i].constants = vec![0.0; 3];
        pop.masks[i] = ctx.repr.activity(&pop.genotypes[i]).unwrap();
        pop.fitnesses[i] = ctx.score(&pop.genotypes[i]).unwrap();
    }
    let r2_zero = 1.0 - 154.0 / 33.0;
    let r2_x0 = 1.0 - 38.5 / 33.0;
    assert_eq!(pop.fitnesses[0].r2, 1.0);
    assert!((pop.fitnesses[1].r2 - r2_zero).abs() < 1e-12);
    assert!((pop.fitnesses[2].r2 - r2_zero).abs() < 1e-12);
    assert!((pop.fitnesses[3].r2 - r2_x0).abs() < 1e-12);

    let fos = Fos::new(vec![vec![0], vec![1], vec![2], vec![1, 2]]);
    let scripts = [
        script(&[3, 0, 1, 2], &[1, 3, 1, 2]),
        script(&[0, 2, 3, 1], &[0, 2, 3, 0]),
        script(&[2, 0, 1, 3], &[3, 1, 0, 1]),
        script(&[1, 0, 2, 3], &[0, 1, 0, 2]),
    ];
    let start = budget.used();
    let mut trace = GomTrace::default();
    let report = gom_step(
        &ctx,
        &mut pop,
        &fos,
        &budget,
        |i| scripts[i].clone(),
        false,
        &mut tracker,
        Some(&mut trace),
    )
    .unwrap();

    assert_eq!(report.evaluations, 8);
    assert_eq!(budget.used() - start, 8);
    assert_eq!(pop.genotypes[0].symbols, parents[0]);
    assert_eq!(pop.genotypes[1].symbols, [op(OpKind::Add), x0, x0]);
    assert_eq!(pop.genotypes[2].symbols, [op(OpKind::Sub), x0, x1]);
    assert_eq!(pop.genotypes[3].symbols, [op(OpKind::Sub), x0, x1]);
    assert_eq!(pop.fitnesses[1].r2, 1.0);
    assert!((pop.fitnesses[2].r2 - r2_x0).abs() < 1e-12);
    assert!((pop.fitnesses[3].r2 - r2_x0).abs() < 1e-12);

    // (offspring, subset, donor, genes_changed, evaluated, reverted)
    let expected = [
        (0, 3, 1, false, false, false),
        (0, 0, 3, false, false, false),
        (0, 1, 1, false, false, false),
        (0, 2, 2, false, false, false),
        (1, 0, 0, true, true, false),
        (1, 2, 2, false, false, false),
        (1, 3, 3, true, true, true),
        (1, 1, 0, false, false, false),
        (2, 2, 3, true, false, false),
        (2, 0, 1, true, true, false),
        (2, 1, 0, true, true, false),
        (2, 3, 1, true, true, true),
        (3, 1, 0, false, false, false),
        (3, 0, 1, true, true, false),
        (3, 2, 0, true, true, true),
        (3, 3, 2, true, true, true),
    ];
    let got: Vec<_> = trace
        .applications
        .iter()
        .map(|a| (a.offspring, a.subset, a.donor, a.genes_changed, a.evaluated, a.reverted))
        .collect();
    assert_eq!(got, expected);
    assert!(trace.applications[8].intron_only());
    assert_eq!(trace.evaluations(), 8);
}

fn sin_sqrt_context(height: usize, rows: usize) -> FitnessContext {
    let d = synth_problem("sin_plus_sqrt", rows, 0.0, 11).unwrap();
    let all: Vec<usize> = (0..d.rows()).collect();
    let repr = Representation::new(Template::new(height, 2).unwrap(), OperatorSet::base()).unwrap();
    FitnessContext::new(repr, d.select(&all), false)
}

#[test]
fn univariate_and_static_fos() {
    let ctx = sin_sqrt_context(4, 60);
    let budget = EvaluationBudget::unlimited();
    let mut tracker = BestTracker::default();
    for (measure, check_static) in [(MeasureKind::Univariate, false), (MeasureKind::NodeStatic, true)] {
        let opts = EngineOptions {
            measure,
            ..EngineOptions::default()
        };
        let mut pop = init_half_and_half(32, &ctx, &opts, 5, &budget, &mut tracker).unwrap();
        let mut seen = Vec::new();
        for _ in 0..4 {
            let r = run_generation(&ctx, &mut pop, &opts, &budget, &mut tracker, None).unwrap();
            seen.push(r.fos.clone());
        }
        if check_static {
            assert!(seen.windows(2).all(|w| std::sync::Arc::ptr_eq(&w[0], &w[1])));
            assert_eq!(seen[0].len(), 60);
        } else {
            assert!(seen.iter().all(|f| **f == Fos::univariate(31)));
        }
    }
}

#[test]
fn best_fitness_never_drops_across_generations() {
    let ctx = sin_sqrt_context(3, 60);
    for seed in 0..5 {
        let budget = EvaluationBudget::unlimited();
        let mut tracker = BestTracker::default();
        let opts = EngineOptions {
            measure: MeasureKind::MiMasked,
            ..EngineOptions::default()
        };
        let mut pop = init_half_and_half(32, &ctx, &opts, seed, &budget, &mut tracker).unwrap();
        let mut last = pop.best_fitness().r2;
        for _ in 0..10 {
            let before = pop.fitnesses.clone();
            run_generation(&ctx, &mut pop, &opts, &budget, &mut tracker, None).unwrap();
            for (b, a) in before.iter().zip(&pop.fitnesses) {
                assert!(a.r2 >= b.r2);
            }
            assert!(pop.best_fitness().r2 >= last);
            last = pop.best_fitness().r2;
        }
        let trace = tracker.trace();
        assert!(trace.windows(2).all(|w| w[0].evaluations < w[1].evaluations && w[0].r2 < w[1].r2));
    }
}

#[test]
fn budget_exhaustion_mid_step_keeps_elitism() {
    let ctx = sin_sqrt_context(3, 40);
    let budget = EvaluationBudget::new(100);
    let mut tracker = BestTracker::default();
    let opts = EngineOptions::default();
    let mut pop = init_half_and_half(32, &ctx, &opts, 2, &budget, &mut tracker).unwrap();
    let before = pop.fitnesses.clone();
    let r = run_generation(&ctx, &mut pop, &opts, &budget, &mut tracker, None).unwrap();
    assert!(r.step.exhausted);
    assert_eq!(budget.used(), 100);
    for (i, (b, a)) in before.iter().zip(&pop.fitnesses).enumerate() {
        assert!(a.r2 >= b.r2);
        assert_eq!(ctx.score(&pop.genotypes[i]).unwrap(), *a);
    }
}

#[test]
fn parallel_and_serial_steps_agree() {
    let ctx = sin_sqrt_context(3, 60);
    let run = |parallel: bool| {
        let opts = EngineOptions {
            measure: MeasureKind::Mi,
            parallel,
            ..EngineOptions::default()
        };
        let budget = EvaluationBudget::unlimited();
        let mut tracker = BestTracker::default();
        let mut pop = init_half_and_half(48, &ctx, &opts, 21, &budget, &mut tracker).unwrap();
        for _ in 0..5 {
            let r = run_generation(&ctx, &mut pop, &opts, &budget, &mut tracker, None).unwrap();
            assert_eq!(r.step.parallel, parallel);
        }
        (pop.genotypes, budget.used(), tracker.trace().to_vec())
    };
    assert_eq!(run(false), run(true));
}

#[test]
fn ims_with_tiny_budget_uses_one_population() {
    let ctx = sin_sqrt_context(2, 40);
    let budget = EvaluationBudget::new(200);
    let out = run_ims(&ctx, &EngineOptions::default(), &budget, 4, None).unwrap();
    let created = out
        .events
        .iter()
        .filter(|e| matches!(e, ImsEvent::PopulationCreated { .. }))
        .count();
    assert_eq!(created, 1);
    assert_eq!(out.evaluations, 200);
    assert!(out.best.is_some());
}

#[test]
fn ims_small_base_creates_doubling_populations() {
    let ctx = sin_sqrt_context(2, 40);
    let budget = EvaluationBudget::new(20_000);
    let out = run_ims_with_base(&ctx, &EngineOptions::default(), &budget, 4, 4, None).unwrap();
    let sizes: Vec<usize> = out
        .events
        .iter()
        .filter_map(|e| match e {
            ImsEvent::PopulationCreated { size, .. } => Some(*size),
            _ => None,
        })
        .collect();
    assert!(sizes.len() >= 3);
    assert!(sizes.iter().enumerate().all(|(k, &s)| s == 4 << k));
}

#[test]
fn fixed_run_snapshots() {
    let ctx = sin_sqrt_context(2, 40);
    let opts = EngineOptions {
        measure: MeasureKind::Node,
        ..EngineOptions::default()
    };
    let out = run_fixed(&ctx, &opts, &EvaluationBudget::unlimited(), 3, 32, 4).unwrap();
    assert!(!out.snapshots.is_empty() && out.snapshots.len() <= 5);
    let expected = gomea_sr::linkage::measure_node_proximity(&ctx.repr.template);
    for (g, m) in &out.snapshots {
        assert!(*g <= 4);
        assert_eq!(**m, expected);
    }
    let zero = run_fixed(&ctx, &opts, &EvaluationBudget::unlimited(), 3, 32, 0).unwrap();
    assert_eq!(zero.snapshots.len(), 1);
    assert_eq!(zero.generations, 0);
}

#[test]
fn adjusted_baseline_is_captured_at_generation_zero() {
    let ctx = sin_sqrt_context(3, 40);
    let opts = EngineOptions {
        measure: MeasureKind::MiAdjusted,
        ..EngineOptions::default()
    };
    let budget = EvaluationBudget::unlimited();
    let mut tracker = BestTracker::default();
    let mut pop = init_half_and_half(64, &ctx, &opts, 8, &budget, &mut tracker).unwrap();
    let learned = learn_linkage(&ctx, &mut pop).unwrap();
    let m = learned.similarity.unwrap();
    for i in 0..m.len() {
        for j in 0..m.len() {
            if i != j {
                assert_eq!(m.get(i, j), 1.0);
            }
        }
    }
    assert!(pop.linkage.baseline().is_some());
    assert!(!has_converged(&ctx, &pop));
}
