use duom::benchmark::{
    evaluate_methods, generate_dataset, summary_table, write_benchmark_csv, DatasetSpec,
    ImageInstance, Method, ScheduleSource,
};
use duom::problem::{AuxiliaryState, BinaryVector, PenaltyParams};
use duom::samplers::{ExactSampler, MhSampler, Sampler, SamplerConfig, SamplerKind, SamplerSpec};
use duom::solver::{grid_search_step, ohzeki_run, RunOptions, StepSchedule};
use duom::training::{train_with, transfer_execute, LearnedSchedule, TrainConfig};
use proptest::prelude::*;

fn tiny_set(count: usize, seed: u64) -> Vec<ImageInstance> {
    generate_dataset(&DatasetSpec::new(3, 3, 0.5, count, seed)).unwrap()
}

#[test]
fn instances_survive_a_json_round_trip_and_satisfy_their_constraints() {
    for inst in tiny_set(3, 5) {
        let back = ImageInstance::from_json(&inst.to_json().unwrap()).unwrap();
        assert_eq!(back, inst);
        let residuals = inst.problem.constraint_residuals(&inst.x_star).unwrap();
        assert!(residuals.iter().all(|r| *r == 0.0));
    }
}

#[test]
fn exact_solver_shrinks_the_constraint_residual() {
    let inst = &tiny_set(1, 9)[0];
    let sampler = ExactSampler::new(2.0);
    let res = ohzeki_run(
        &inst.problem,
        &sampler,
        &StepSchedule::constant(0.05, 40).unwrap(),
        &PenaltyParams::new(1.0, 2.0).unwrap(),
        &AuxiliaryState::zeros(inst.problem.n_constraints()),
        &RunOptions::default(),
    )
    .unwrap();
    let records = &res.trace.records;
    assert_eq!(records.len(), 41);
    assert!(records.last().unwrap().residual_l2() < records[0].residual_l2());
}

#[test]
fn training_is_reproducible_and_transfer_runs_the_learned_steps() {
    let train_set = tiny_set(4, 1);
    let spec = SamplerSpec::new(SamplerKind::Mh, SamplerConfig::new(1.0).with_reads(20, 20));
    let mut cfg = TrainConfig::reference(spec.clone());
    cfg.iterations = 4;
    cfg.epochs = 2;
    cfg.minibatches_per_epoch = 2;
    cfg.minibatch_size = 2;
    let sampler = spec.build().unwrap();
    let a = train_with(&train_set, &cfg, &*sampler).unwrap();
    let b = train_with(&train_set, &cfg, &*sampler).unwrap();
    assert_eq!(a, b);
    let back = LearnedSchedule::from_json(&a.to_json().unwrap()).unwrap();
    assert_eq!(back, a);

    let inst = &tiny_set(1, 2)[0];
    let sqa = SamplerSpec::new(SamplerKind::Sqa, SamplerConfig::new(1.0).with_reads(10, 10))
        .build()
        .unwrap();
    let out = transfer_execute(
        &a,
        &inst.problem,
        &*sqa,
        &PenaltyParams::new(1.0, 1.0).unwrap(),
        &RunOptions::seeded(3),
    )
    .unwrap();
    assert_eq!(out.label(), "MH-SQA");
    assert_eq!(out.result.trace.records.len(), 5);
}

#[test]
fn benchmark_outputs_have_one_row_per_method_and_iteration() {
    let eval = tiny_set(3, 4);
    let mh = MhSampler::new(SamplerConfig::new(2.0).with_reads(10, 10));
    let methods = [
        Method::new("a", ScheduleSource::Constant(0.05), &mh),
        Method::new("b", ScheduleSource::Constant(0.1), &mh),
    ];
    let res = evaluate_methods(&eval, &methods, 1.0, 6, 0).unwrap();
    let mut csv = Vec::new();
    write_benchmark_csv(&res, &mut csv).unwrap();
    let csv = String::from_utf8(csv).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 7);
    assert!(csv.starts_with("method,iteration,mean_best_mse,ci_halfwidth,frac_solved\n"));
    assert_eq!(summary_table(&res).lines().count(), 3);

    let dup = [
        Method::new("a", ScheduleSource::Constant(0.05), &mh),
        Method::new("a", ScheduleSource::Constant(0.1), &mh),
    ];
    assert!(evaluate_methods(&eval, &dup, 1.0, 6, 0).is_err());
}

#[test]
fn grid_search_picks_a_candidate() {
    let eval = tiny_set(2, 6);
    let sampler = ExactSampler::new(1.0);
    let grid = grid_search_step(
        &eval,
        &[0.01, 0.1],
        &PenaltyParams::new(1.0, 1.0).unwrap(),
        &sampler,
        5,
        0,
    )
    .unwrap();
    assert_eq!(grid.table.len(), 2);
    assert!([0.01, 0.1].contains(&grid.best_eta));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn mh_sampling_is_a_function_of_the_seed(seed in any::<u64>(), beta in 0.0f64..4.0) {
        let inst = &tiny_set(1, 8)[0];
        let q = inst.problem.effective_qubo(&AuxiliaryState::zeros(inst.problem.n_constraints())).unwrap();
        let mh = MhSampler::new(SamplerConfig::new(beta).with_reads(8, 5));
        let a = mh.sample(&q, seed).unwrap();
        let b = mh.sample(&q, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.total_weight(), 8.0);
        for (x, e, _) in a.iter() {
            prop_assert_eq!(e, q.energy(x).unwrap());
        }
    }

    #[test]
    fn penalty_is_nonnegative_and_zero_at_ground_truth(bits in proptest::collection::vec(0u8..2, 9)) {
        let inst = &tiny_set(1, 3)[0];
        let x = BinaryVector::new(bits).unwrap();
        let f0 = |y: &BinaryVector| inst.problem.objective().evaluate(y).unwrap();
        let pen = |y: &BinaryVector| inst.problem.penalty_loss(y, 1.0).unwrap() - f0(y);
        prop_assert!(pen(&x) >= 0.0);
        prop_assert_eq!(pen(&inst.x_star), 0.0);
    }
}
