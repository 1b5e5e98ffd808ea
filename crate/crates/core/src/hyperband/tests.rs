use super::*;
use crate::search::default_space;
use crate::verify::brute_force_brackets;

/// Planner output against the counting oracle.
#[test]
fn plan_matches_brute_force_grid() {
    for eta in 2..=4 {
        for r in 1..=243 {
            let plan = plan_brackets(r, eta).unwrap();
            let got: Vec<_> = plan
                .iter()
                .map(|b| {
                    (
                        b.s,
                        b.n,
                        b.rungs.iter().map(|x| (x.n, x.epochs)).collect::<Vec<_>>(),
                    )
                })
                .collect();
            assert_eq!(got, brute_force_brackets(r, eta), "R={r} eta={eta}");
        }
    }
}

#[test]
fn top_k_examples() {
    assert_eq!(top_k(&[0.3, 0.1, 0.2], 1).unwrap(), vec![1]);
    assert_eq!(top_k(&[0.1, 0.1], 1).unwrap(), vec![0]);
    assert_eq!(top_k(&[0.1, f64::NAN, 0.2], 2).unwrap(), vec![0, 2]);
    assert_eq!(top_k(&[0.5], 0).unwrap(), Vec::<usize>::new());
    assert!(top_k(&[0.5], 2).is_err());
    let k = plan_brackets(81, 3).unwrap()[0].rungs[2].n / 3;
    assert_eq!(k, 3);
}

fn landscape_run(seed: u64, parallel: bool) -> (TuneOutcome, Vec<TrialEvent>) {
    let task = TaskDef::synthetic_landscape(seed);
    let space = default_space();
    let mut events = Vec::new();
    let out = Tuner::new(&task, Rule::Sgdm, &space, seed)
        .parallel(parallel)
        .hyperband(&HyperbandParams::one_pass(9, 3).unwrap(), &mut events)
        .unwrap();
    (out, events)
}

#[test]
fn ledger_matches_rung_sum() {
    let (out, events) = landscape_run(1, false);
    let plan = plan_brackets(9, 3).unwrap();
    assert_eq!(out.passes.len(), 1);
    assert_eq!(out.ledger, pass_epochs(&plan));
    assert_eq!(out.passes[0].configs, pass_configs(&plan));
    let epochs = events
        .iter()
        .filter(|e| matches!(e, TrialEvent::EpochMetric { .. }))
        .count() as u64;
    assert_eq!(epochs, out.ledger);
    assert_eq!(out.trajectory.len() as u64, out.ledger);
    let s_max = s_max(9, 3) as u64;
    let budget = (s_max + 1) * 9;
    assert!(out.ledger <= (s_max + 1) * budget * (1 + 3));
}

#[test]
fn cumulative_epochs_are_sequential() {
    let (_, events) = landscape_run(2, false);
    let mut expected = 1;
    for e in &events {
        if let TrialEvent::EpochMetric {
            cumulative_epoch, ..
        } = e
        {
            assert_eq!(*cumulative_epoch, expected);
            expected += 1;
        }
    }
}

#[test]
fn run_is_deterministic_and_parallel_is_sequential() {
    let (a, ea) = landscape_run(4, false);
    let (b, eb) = landscape_run(4, false);
    let (c, ec) = landscape_run(4, true);
    assert_eq!(ea, eb);
    assert_eq!(ea, ec);
    assert_eq!(a.best, b.best);
    assert_eq!(a.best, c.best);
}

#[test]
fn best_is_no_worse_than_any_evaluation() {
    let (out, events) = landscape_run(6, false);
    for e in &events {
        if let TrialEvent::EpochMetric { value, .. } = e {
            assert!(out.best.value <= *value);
        }
    }
    let trial = &out.trials[out.best.trial];
    assert_eq!(trial.values[(out.best.epoch - 1) as usize], out.best.value);
}

#[test]
fn n_configs_repeats_whole_passes() {
    let task = TaskDef::synthetic_landscape(0);
    let space = default_space();
    let tuner = Tuner::new(&task, Rule::Sgdm, &space, 0);
    let one = HyperbandParams::one_pass(3, 3).unwrap();
    assert_eq!(one.n_configs, 5);
    let out = tuner.hyperband(&one, &mut NullRecorder).unwrap();
    assert_eq!(out.passes.len(), 1);
    let more = HyperbandParams {
        n_configs: 6,
        ..one
    };
    let out = tuner.hyperband(&more, &mut NullRecorder).unwrap();
    assert_eq!(out.passes.len(), 2);
    assert_eq!(out.trials.len(), 10);
}

#[test]
fn diverged_trials_are_not_promoted_over_finite_ones() {
    let (out, events) = landscape_run(8, false);
    assert!(
        out.trials.iter().any(|t| t.is_diverged()),
        "log-uniform learning rates up to 10 must diverge"
    );
    // Rebuild each rung's candidate set and every trial's progress from the
    // event stream; a trial counts as diverged at promotion time only if it
    // diverged within the epochs seen so far.
    let mut seen = vec![0u64; out.trials.len()];
    let mut candidates: Vec<usize> = Vec::new();
    for e in &events {
        match e {
            TrialEvent::ConfigSampled { trial, .. } => {
                if candidates.last().is_some_and(|&c| c + 1 != *trial) {
                    candidates.clear();
                }
                candidates.push(*trial);
            }
            TrialEvent::EpochMetric { trial, epoch, .. } => seen[*trial] = *epoch,
            TrialEvent::RungPromotion { promoted, .. } => {
                let diverged_now =
                    |t: usize| out.trials[t].diverged_at.is_some_and(|d| d <= seen[t]);
                let finite = candidates.iter().filter(|&&c| !diverged_now(c)).count();
                let promoted_diverged = promoted.iter().filter(|&&p| diverged_now(p)).count();
                if promoted_diverged > 0 {
                    assert_eq!(finite, promoted.len() - promoted_diverged);
                }
                candidates = promoted.clone();
            }
            _ => {}
        }
    }
}

#[test]
fn promotion_prefers_finite_losses() {
    let mut run = RunState::new(MetricDirection::LowerBetter);
    let task = TaskDef::synthetic_landscape(0);
    let spec = OptimizerSpec::with_defaults(Rule::Sgdm, 0.1).unwrap();
    let mut a = TrialRecord::new(0, spec.clone(), 0, &task);
    a.values = vec![5.0];
    a.epochs_run = 1;
    let mut b = TrialRecord::new(1, spec, 0, &task);
    b.values = vec![1.0];
    b.epochs_run = 1;
    b.status = TrialStatus::Diverged;
    run.trials = vec![a, b];
    let losses = [run.ranking_loss(0), run.ranking_loss(1)];
    assert_eq!(top_k(&losses, 1).unwrap(), vec![0]);
}

#[test]
fn statuses_follow_checkpoint_invariant() {
    let (out, _) = landscape_run(9, false);
    for t in &out.trials {
        let has = t.checkpoint.is_some();
        let expect = matches!(t.status, TrialStatus::Running | TrialStatus::Stopped);
        assert_eq!(has, expect, "trial {} status {:?}", t.index, t.status);
        assert_eq!(t.epochs_run as usize, t.values.len());
    }
}

#[test]
fn random_search_charges_full_resource() {
    let task = TaskDef::synthetic_landscape(0);
    let space = default_space();
    let out = Tuner::new(&task, Rule::Sgdm, &space, 0)
        .random_search(5, 4, &mut NullRecorder)
        .unwrap();
    assert_eq!(out.ledger, 20);
    assert!(out.trials.iter().all(|t| t.epochs_run == 4));
}

#[test]
fn recorder_failure_aborts() {
    let task = TaskDef::synthetic_landscape(0);
    let mut seen = 0;
    let mut failing = |e: &TrialEvent| {
        if matches!(e, TrialEvent::EpochMetric { .. }) {
            seen += 1;
            if seen == 3 {
                return Err(Error::Log("disk full".into()));
            }
        }
        Ok(())
    };
    let err = run_hyperband(
        &task,
        Rule::Sgdm,
        TuningMode::LrOnly,
        9,
        3,
        1,
        0,
        &mut failing,
    );
    assert!(matches!(err, Err(Error::Log(_))));
}
