//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use optbench::hyperband::{
    plan_brackets, run_trial_to, HyperbandParams, NullRecorder, TrialRecord, Tuner,
};
use optbench::io::{run_bench, Protocol, RunConfigFile, FORMAT_VERSION};
use optbench::metrics::{
    cpe, cpe_weights, default_tau_grid, perf_profile, perf_ratios, ProfileTable,
};
use optbench::optimizers::{apply_step, OptimizerSpec, Rule};
use optbench::protocols::{
    run_data_addition, run_end_to_end, split_dataset, ProtocolConfig, TaskSpec,
};
use optbench::search::{DecayPolicy, SearchSpace, TuningMode};
use optbench::tasks::{MetricDirection, TaskDef};
use optbench::verify::{
    bracket_suite, conformance_suite, conformance_suite_with, gradient_suite, CONFORMANCE_STEPS,
    GRADIENT_POINTS,
};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, elapsed: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || {
        format!("took {:.2?}, limit {:.0?}", elapsed, limit)
    })
}

/// Criterion 1: Update-rule conformance against a straight-line transcription.
fn conformance() -> Check {
    let start = Instant::now();
    let report = conformance_suite();
    let elapsed = start.elapsed();
    ensure(report.passed, || format!("{:?}", report.failures))?;
    let expected_checks = Rule::ALL.len() * CONFORMANCE_STEPS as usize;
    ensure(report.checks == expected_checks, || {
        format!("{} checks, expected {expected_checks}", report.checks)
    })?;
    within(Duration::from_secs(1), elapsed)?;
    // The suite must reject an Adam-family rule with β1 and β2 swapped.
    let mutated = conformance_suite_with(&|spec, state, theta, g, horizon| {
        let mut s = spec.clone();
        std::mem::swap(&mut s.hyperparams.beta1, &mut s.hyperparams.beta2);
        apply_step(&s, state, theta, g, horizon)
    });
    ensure(!mutated.passed, || "beta swap went unnoticed".into())?;
    Ok(format!(
        "7 rules x 10 steps within 1e-12 in {elapsed:.2?}; beta swap caught"
    ))
}

/// Criterion 2: Analytic gradients against central differences.
fn gradients() -> Check {
    let start = Instant::now();
    let report = gradient_suite();
    let elapsed = start.elapsed();
    ensure(report.passed, || format!("{:?}", report.failures))?;
    ensure(report.checks == 5 * GRADIENT_POINTS, || {
        format!("{} checks, expected {}", report.checks, 5 * GRADIENT_POINTS)
    })?;
    within(Duration::from_secs(10), elapsed)?;
    Ok(format!("5 tasks x 20 points in {elapsed:.2?}"))
}

/// Criterion 3: Bracket arithmetic over the whole grid, plus the R=81, η=3 table.
fn brackets() -> Check {
    let start = Instant::now();
    let report = bracket_suite();
    let plan = plan_brackets(81, 3).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(report.passed, || format!("{:?}", report.failures))?;
    ensure(report.checks == 243 * 3, || {
        format!("{} checks", report.checks)
    })?;
    let widest: Vec<(usize, u64)> = plan[0].rungs.iter().map(|r| (r.n, r.epochs)).collect();
    let want = vec![(81, 1), (27, 3), (9, 9), (3, 27), (1, 81)];
    ensure(widest == want, || format!("R=81 eta=3 rungs {widest:?}"))?;
    within(Duration::from_secs(1), elapsed)?;
    Ok(format!(
        "729 (R, eta) pairs and the R=81 table in {elapsed:.2?}"
    ))
}

/// Criterion 4: Checkpointed 3→9 resume equals an uninterrupted 9-epoch run.
fn resume() -> Check {
    let start = Instant::now();
    let task = TaskDef::logreg(400, 6, 3, 17).map_err(|e| e.to_string())?;
    for rule in Rule::ALL {
        let alpha = if rule == Rule::Sgdm || rule == Rule::Lars {
            0.1
        } else {
            0.01
        };
        let hp =
            optbench::optimizers::HyperparamVector::defaults(rule, alpha).with_linear_decay(0.1);
        let spec = OptimizerSpec::new(rule, hp).map_err(|e| e.to_string())?;
        let mut whole = TrialRecord::new(0, spec.clone(), 0, &task);
        run_trial_to(&mut whole, &task, 9, 9).map_err(|e| e.to_string())?;

        let mut first = TrialRecord::new(0, spec, 0, &task);
        run_trial_to(&mut first, &task, 3, 9).map_err(|e| e.to_string())?;
        // Resume from a serialized copy, as a restarted process would.
        let saved = serde_json::to_string(&first).map_err(|e| e.to_string())?;
        let mut resumed: TrialRecord = serde_json::from_str(&saved).map_err(|e| e.to_string())?;
        run_trial_to(&mut resumed, &task, 9, 9).map_err(|e| e.to_string())?;

        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        ensure(bits(&whole.values) == bits(&resumed.values), || {
            format!("{rule}: metrics {:?} vs {:?}", whole.values, resumed.values)
        })?;
        ensure(whole.checkpoint == resumed.checkpoint, || {
            format!("{rule}: final parameters or optimizer state differ")
        })?;
        ensure(whole.status == resumed.status, || {
            format!("{rule}: status differs")
        })?;
    }
    let elapsed = start.elapsed();
    within(Duration::from_secs(30), elapsed)?;
    Ok(format!("7 rules bit-identical in {elapsed:.2?}"))
}

/// Criterion 5: CPE weights, constant trajectories, the published ratio and profiles.
fn cpe_and_profiles() -> Check {
    for horizon in 1..=200usize {
        let w = cpe_weights(horizon).map_err(|e| e.to_string())?;
        let total: usize = horizon * (horizon + 1) / 2;
        for (i, wi) in w.iter().enumerate() {
            // Weight of epoch t = i+1 is (T − t + 1) / (T(T+1)/2).
            let expected = (horizon - i) as f64 / total as f64;
            ensure((wi - expected).abs() <= 1e-15, || {
                format!("T={horizon} weight {i}: {wi} vs {expected}")
            })?;
        }
        let sum: f64 = w.iter().sum();
        ensure((sum - 1.0).abs() <= 1e-12, || {
            format!("T={horizon}: sum {sum}")
        })?;
        ensure(w.windows(2).all(|p| p[0] > p[1]), || {
            format!("T={horizon}: weights not strictly decreasing")
        })?;
        for c in [0.0, 0.37, 65.88, -2.5] {
            let v = cpe(&vec![c; horizon]).map_err(|e| e.to_string())?;
            ensure((v - c).abs() <= 1e-12 * c.abs().max(1.0), || {
                format!("T={horizon}: CPE of constant {c} is {v}")
            })?;
        }
    }

    let mut table = ProfileTable::new();
    let hi = MetricDirection::HigherBetter;
    table
        .insert("published", hi, "lars", 67.48)
        .map_err(|e| e.to_string())?;
    table
        .insert("published", hi, "adam", 65.88)
        .map_err(|e| e.to_string())?;
    let ratios = perf_ratios(&table).map_err(|e| e.to_string())?;
    let r = ratios[&("adam".to_string(), "published".to_string())];
    ensure((r - 1.0243).abs() <= 1e-4, || format!("ratio {r}"))?;
    ensure(
        ratios[&("lars".to_string(), "published".to_string())] == 1.0,
        || "winner ratio is not 1".into(),
    )?;

    // A multi-task table with both metric directions.
    let lo = MetricDirection::LowerBetter;
    let rows = [
        ("a", hi, [("sgdm", 0.91), ("adam", 0.88), ("lamb", 0.93)]),
        ("b", lo, [("sgdm", 0.40), ("adam", 0.36), ("lamb", 0.50)]),
        ("c", hi, [("sgdm", 70.0), ("adam", 72.5), ("lamb", 71.0)]),
    ];
    let mut table = ProfileTable::new();
    for (task, dir, scores) in rows {
        for (o, v) in scores {
            table.insert(task, dir, o, v).map_err(|e| e.to_string())?;
        }
    }
    let ratios = perf_ratios(&table).map_err(|e| e.to_string())?;
    let mut taus = default_tau_grid();
    ensure(
        taus.len() == 31 && taus[0] == 1.0 && (taus[30] - 1.3).abs() < 1e-12,
        || format!("tau grid {taus:?}"),
    )?;
    taus.extend([1.5, 2.0]);
    let profile = perf_profile(&ratios, &taus).map_err(|e| e.to_string())?;
    let mut max_ratio: BTreeMap<&str, f64> = BTreeMap::new();
    for ((o, _), r) in &ratios {
        let e = max_ratio.entry(o.as_str()).or_insert(1.0);
        *e = e.max(*r);
    }
    for (o, curve) in &profile {
        ensure(curve.windows(2).all(|p| p[0] <= p[1]), || {
            format!("{o}: decreasing profile")
        })?;
        for (tau, rho) in taus.iter().zip(curve) {
            if *tau >= max_ratio[o.as_str()] {
                ensure(*rho == 1.0, || {
                    format!("{o}: rho({tau}) = {rho} beyond max ratio")
                })?;
            }
        }
    }
    Ok(format!(
        "weights T=1..200, ratio {r:.4}, {} profiles",
        profile.len()
    ))
}

/// Criterion 6: Hyperband reaches the landscape basin with less compute
/// than random search over the same number of configurations.
fn landscape() -> Check {
    let start = Instant::now();
    let params = HyperbandParams::one_pass(27, 3).map_err(|e| e.to_string())?;
    let space = SearchSpace::default();
    let mut lines = Vec::new();
    let mut ledgers = (0, 0);
    for seed in 0..5u64 {
        let task = TaskDef::synthetic_landscape(seed);
        let optimum = task
            .known_optimum()
            .ok_or("landscape has no known optimum")?;
        let tuner = Tuner::new(&task, Rule::Sgdm, &space, 1000 + seed)
            .mode(TuningMode::LrOnly)
            .decay(DecayPolicy::Never);
        let hb = tuner
            .hyperband(&params, &mut NullRecorder)
            .map_err(|e| e.to_string())?;
        let rs = tuner
            .random_search(params.n_configs, 27, &mut NullRecorder)
            .map_err(|e| e.to_string())?;
        ensure(hb.trials.len() == rs.trials.len(), || {
            format!(
                "seed {seed}: {} vs {} configurations",
                hb.trials.len(),
                rs.trials.len()
            )
        })?;
        ensure(hb.best.value <= 1.02 * optimum, || {
            format!("seed {seed}: best {} above 1.02 x {optimum}", hb.best.value)
        })?;
        ensure(hb.ledger < rs.ledger, || {
            format!(
                "seed {seed}: ledger {} vs random search {}",
                hb.ledger, rs.ledger
            )
        })?;
        lines.push(format!("{:.4}", hb.best.value / optimum));
        ledgers = (hb.ledger, rs.ledger);
    }
    let elapsed = start.elapsed();
    within(Duration::from_secs(120), elapsed)?;
    Ok(format!(
        "best/optimum [{}], {} vs {} epochs, {elapsed:.2?}",
        lines.join(", "),
        ledgers.0,
        ledgers.1
    ))
}

fn end_to_end_config(dir: &Path) -> RunConfigFile {
    RunConfigFile {
        format_version: FORMAT_VERSION,
        protocol: Protocol::End2end,
        optimizers: Rule::ALL.to_vec(),
        tasks: vec![TaskSpec::Logreg {
            name: None,
            n_samples: 1000,
            dim: 10,
            n_classes: 2,
            seed: 4,
            batch_size: None,
            decay: None,
        }],
        mode: TuningMode::LrOnly,
        repetitions: 3,
        hyperband: Some(HyperbandParams::one_pass(27, 3).unwrap()),
        delta: 0.3,
        master_seed: 20240501,
        output_dir: Some(dir.to_path_buf()),
        space: None,
        parallel: false,
    }
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

/// Criterion 7: End-to-end protocol: 7 optimizers on logistic regression.
fn end_to_end() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let file = end_to_end_config(&a);
    let config: ProtocolConfig = file.protocol_config().map_err(|e| e.to_string())?;

    let start = Instant::now();
    let result = run_end_to_end(&config, |_| Ok(())).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    within(Duration::from_secs(600), elapsed)?;
    ensure(result.cells.len() == 21, || {
        format!("{} cells", result.cells.len())
    })?;
    for cell in &result.cells {
        let id = format!("{}/rep {}", cell.id.optimizer, cell.id.repetition);
        let out = cell.outcome.as_ref().map_err(|e| format!("{id}: {e}"))?;
        ensure(out.trajectory.is_monotone(), || {
            format!("{id}: trajectory not monotone")
        })?;
        ensure(out.cpe <= out.peak, || {
            format!("{id}: CPE {} > peak {}", out.cpe, out.peak)
        })?;
        ensure(out.ledger == 357, || format!("{id}: ledger {}", out.ledger))?;
    }

    run_bench(&file, &a, false).map_err(|e| e.to_string())?;
    run_bench(&file, &b, false).map_err(|e| e.to_string())?;
    let (da, db) = (dir_bytes(&a), dir_bytes(&b));
    ensure(da.len() >= 6 && da == db, || {
        let differ: Vec<_> = da.keys().filter(|k| da.get(*k) != db.get(*k)).collect();
        format!("re-run differs in {differ:?}")
    })?;
    Ok(format!(
        "21 cells in {elapsed:.2?}; {} files byte-identical on re-run",
        da.len()
    ))
}

fn addition_config(delta: f64) -> ProtocolConfig {
    ProtocolConfig {
        optimizers: Rule::ALL.to_vec(),
        tasks: vec![
            TaskSpec::Logreg {
                name: None,
                n_samples: 1000,
                dim: 10,
                n_classes: 2,
                seed: 4,
                batch_size: None,
                decay: None,
            },
            TaskSpec::Mlp {
                name: None,
                n_samples: 600,
                dim: 8,
                hidden: 16,
                n_classes: 3,
                seed: 9,
                batch_size: None,
                decay: None,
            },
        ],
        mode: TuningMode::Full,
        repetitions: 3,
        hyperband: HyperbandParams::one_pass(27, 3).unwrap(),
        delta,
        master_seed: 77,
        space: SearchSpace::default(),
        parallel: false,
    }
}

/// Criterion 8: Data-addition protocol on logistic regression and an MLP.
fn data_addition() -> Check {
    let start = Instant::now();
    let config = addition_config(0.3);
    for (task, _) in config.build_tasks().map_err(|e| e.to_string())? {
        let labels = task.train_labels().unwrap().to_vec();
        let (partial, full) = split_dataset(&task, 0.3).map_err(|e| e.to_string())?;
        let got = partial.train_labels().unwrap();
        ensure(full.train_labels().unwrap() == labels.as_slice(), || {
            "full split changed".into()
        })?;
        for class in 0..task.n_classes().unwrap() {
            let n_c = labels.iter().filter(|&&l| l == class).count();
            let want = (0.3 * n_c as f64).round() as usize;
            let have = got.iter().filter(|&&l| l == class).count();
            ensure(have == want, || {
                format!(
                    "{} class {class}: {have} of {n_c}, expected {want}",
                    task.name()
                )
            })?;
        }
    }

    let result = run_data_addition(&config, |_| Ok(())).map_err(|e| e.to_string())?;
    for cell in &result.cells {
        cell.outcome
            .as_ref()
            .map_err(|e| format!("{}/{}: {e}", cell.id.task, cell.id.optimizer))?;
    }
    ensure(result.rankings.len() == 2, || {
        format!("{} rankings", result.rankings.len())
    })?;
    let mut taus = Vec::new();
    for r in &result.rankings {
        ensure(r.before.len() == 7 && r.after.len() == 7, || {
            format!("{}: incomplete ranking", r.task)
        })?;
        let tau = r
            .kendall_tau
            .ok_or_else(|| format!("{}: no Kendall tau", r.task))?;
        ensure((-1.0..=1.0).contains(&tau), || {
            format!("{}: tau {tau}", r.task)
        })?;
        taus.push(format!("{}={tau:.3}", r.task));
    }

    let degenerate =
        run_data_addition(&addition_config(1.0), |_| Ok(())).map_err(|e| e.to_string())?;
    for cell in &degenerate.cells {
        let out = cell.outcome.as_ref().map_err(|e| e.clone())?;
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        ensure(bits(&out.partial_curve) == bits(&out.full_curve), || {
            format!(
                "{}/{}: delta=1 curves differ",
                cell.id.task, cell.id.optimizer
            )
        })?;
    }
    let elapsed = start.elapsed();
    within(Duration::from_secs(600), elapsed)?;
    Ok(format!(
        "split counts exact, tau {}, delta=1 identical, {elapsed:.2?}",
        taus.join(" ")
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("1 optimizer conformance", conformance),
        ("2 gradient oracles", gradients),
        ("3 hyperband arithmetic", brackets),
        ("4 resume equivalence", resume),
        ("5 CPE and profiles", cpe_and_profiles),
        ("6 landscape: hyperband vs random search", landscape),
        ("7 end-to-end protocol", end_to_end),
        ("8 data-addition protocol", data_addition),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|p| Err(format!("panicked: {:?}", p.downcast_ref::<String>())));
        match outcome {
            Ok(detail) => println!("PASS  criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  criterion {name}: {why}");
            }
        }
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
