//! Self-checks run by `optbench verify`: analytic gradients against finite
//! differences, bracket plans against a brute-force enumeration, and the
//! update engine against a direct transcription of each rule.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::hyperband::plan_brackets;
use crate::optimizers::{apply_step, HyperparamVector, OptState, OptimizerSpec, Rule};
use crate::seed::{derive_seed, rng_from};
use crate::tasks::{finite_diff_grad, relative_error, ParamVector, TaskDef};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub passed: bool,
    pub checks: usize,
    pub failures: Vec<String>,
}

impl SuiteReport {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            passed: true,
            checks: 0,
            failures: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.passed = false;
            self.failures.push(what());
        }
    }
}

pub fn run_all() -> Vec<SuiteReport> {
    vec![gradient_suite(), bracket_suite(), conformance_suite()]
}

pub const GRADIENT_POINTS: usize = 20;
const FD_STEP: f64 = 1e-5;

/// Tasks checked by the gradient suite with their relative-error tolerance.
fn gradient_tasks() -> Result<Vec<(TaskDef, f64)>> {
    Ok(vec![
        (
            TaskDef::quadratic(6, 50.0, 11)?.with_name("quadratic"),
            1e-6,
        ),
        (
            TaskDef::quadratic(6, 50.0, 12)?
                .with_gradient_noise(0.5)?
                .with_name("quadratic-noisy"),
            1e-4,
        ),
        (TaskDef::logreg(120, 4, 3, 5)?.with_name("logreg"), 1e-4),
        (TaskDef::mlp(90, 4, 5, 3, 2)?.with_name("mlp"), 1e-4),
        (TaskDef::synthetic_landscape(7).with_name("landscape"), 1e-4),
    ])
}

/// Analytic gradients against central differences at seeded random points.
pub fn gradient_suite() -> SuiteReport {
    let mut report = SuiteReport::new("gradients");
    let tasks = match gradient_tasks() {
        Ok(t) => t,
        Err(e) => {
            report.check(false, || format!("building tasks: {e}"));
            return report;
        }
    };
    for (task, tol) in &tasks {
        for point in 0..GRADIENT_POINTS {
            let mut rng = rng_from(derive_seed(&[
                "verify-gradient".into(),
                task.name().into(),
                (point as u64).into(),
            ]));
            let mut theta = task.initial_params();
            for x in theta.iter_mut() {
                *x += 2.0 * rng.random::<f64>() - 1.0;
            }
            let batches = task.epoch_batches(point as u64);
            let batch = &batches[point % batches.len()];
            let err = task.eval_grad(&theta, batch).and_then(|g| {
                Ok(relative_error(
                    &g,
                    &finite_diff_grad(task, &theta, batch, FD_STEP)?,
                ))
            });
            report.check(matches!(err, Ok(e) if e < *tol), || {
                format!(
                    "{} point {point}: relative error {err:?} (tolerance {tol})",
                    task.name()
                )
            });
        }
    }
    report
}

/// `(s, n, [(n_i, epochs_i)])` of one bracket.
pub type BracketShape = (u32, usize, Vec<(usize, u64)>);

/// Bracket plan by direct enumeration: integer searches instead of the
/// closed forms used by the planner. Brackets come most aggressive
/// first.
pub fn brute_force_brackets(max_resource: u64, eta: u64) -> Vec<BracketShape> {
    let mut s_max = 0u32;
    while eta.pow(s_max + 1) <= max_resource {
        s_max += 1;
    }
    let budget = (s_max as u64 + 1) * max_resource;
    let mut out = Vec::new();
    for s in (0..=s_max).rev() {
        // Smallest n with n·(s+1)·R ≥ B·η^s.
        let mut n = 0u64;
        while n * (s as u64 + 1) * max_resource < budget * eta.pow(s) {
            n += 1;
        }
        let mut rungs = Vec::new();
        let mut n_i = n as usize;
        for i in 0..=s {
            // Smallest whole epoch count covering R·η^(i−s).
            let mut e = 1u64;
            while e * eta.pow(s - i) < max_resource {
                e += 1;
            }
            rungs.push((n_i, e));
            n_i /= eta as usize;
        }
        out.push((s, n as usize, rungs));
    }
    out
}

/// Planner output against [`brute_force_brackets`] for R in 1..=243 and
/// η in {2, 3, 4}.
pub fn bracket_suite() -> SuiteReport {
    let mut report = SuiteReport::new("brackets");
    for eta in 2..=4 {
        for r in 1..=243 {
            let got = plan_brackets(r, eta).map(|plan| {
                plan.iter()
                    .map(|b| {
                        let rungs = b.rungs.iter().map(|x| (x.n, x.epochs)).collect::<Vec<_>>();
                        (b.s, b.n, rungs)
                    })
                    .collect::<Vec<_>>()
            });
            let want = brute_force_brackets(r, eta);
            report.check(matches!(&got, Ok(g) if *g == want), || {
                format!("R={r} eta={eta}: planner {got:?}, enumeration {want:?}")
            });
        }
    }
    report
}

/// Signature of the step function under test.
pub type Stepper =
    dyn Fn(&OptimizerSpec, &mut OptState, &mut ParamVector, &ParamVector, u64) -> Result<()>;

pub const CONFORMANCE_STEPS: u64 = 10;
pub const CONFORMANCE_TOL: f64 = 1e-12;
const LAYER_SIZES: [usize; 2] = [3, 2];

fn conformance_hyperparams(rule: Rule) -> HyperparamVector {
    let mut hp = HyperparamVector::defaults(rule, 0.05).with_linear_decay(0.2);
    match rule {
        Rule::Sgdm | Rule::Lars => hp.mu = Some(0.7),
        _ => {
            hp.beta1 = Some(0.8);
            hp.beta2 = Some(0.95);
        }
    }
    if hp.epsilon.is_some() {
        hp.epsilon = Some(1e-3);
    }
    hp
}

/// Per-rule reference state: plain nested vectors.
struct Reference {
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    slow: Vec<Vec<f64>>,
    inner: u32,
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// One step of `rule`, written out case by case.
#[allow(clippy::needless_range_loop)]
fn reference_step(
    rule: Rule,
    hp: &HyperparamVector,
    st: &mut Reference,
    theta: &mut [Vec<f64>],
    g: &[Vec<f64>],
    horizon: u64,
) {
    st.t += 1;
    let t = st.t as f64;
    let lr = hp.alpha0 - (1.0 - hp.gamma.unwrap()) * hp.alpha0 * t / horizon as f64;
    for l in 0..theta.len() {
        let n = theta[l].len();
        match rule {
            Rule::Sgdm => {
                let mu = hp.mu.unwrap();
                for i in 0..n {
                    st.m[l][i] = mu * st.m[l][i] + g[l][i];
                    theta[l][i] -= lr * st.m[l][i];
                }
            }
            Rule::Lars => {
                let (mu, eps) = (hp.mu.unwrap(), hp.epsilon.unwrap());
                for i in 0..n {
                    st.m[l][i] = mu * st.m[l][i] + g[l][i];
                }
                let (a, b) = (norm(&theta[l]), norm(&st.m[l]));
                let r = if a > 0.0 && b > 0.0 { a / b } else { 1.0 };
                for i in 0..n {
                    theta[l][i] -= lr * r * st.m[l][i] / (1.0 + eps);
                }
            }
            Rule::Adam | Rule::Lookahead => {
                let (b1, b2, eps) = (hp.beta1.unwrap(), hp.beta2.unwrap(), hp.epsilon.unwrap());
                for i in 0..n {
                    st.m[l][i] = b1 * st.m[l][i] + (1.0 - b1) * g[l][i];
                    st.v[l][i] = b2 * st.v[l][i] + (1.0 - b2) * g[l][i] * g[l][i];
                    theta[l][i] -= lr * st.m[l][i] / (st.v[l][i].sqrt() + eps);
                }
            }
            Rule::Radam => {
                let (b1, b2, eps) = (hp.beta1.unwrap(), hp.beta2.unwrap(), hp.epsilon.unwrap());
                let rho_inf = 2.0 / (1.0 - b2) - 1.0;
                let rho = rho_inf - 2.0 * t * b2.powf(t) / (1.0 - b2.powf(t));
                for i in 0..n {
                    st.m[l][i] = b1 * st.m[l][i] + (1.0 - b1) * g[l][i];
                    st.v[l][i] = b2 * st.v[l][i] + (1.0 - b2) * g[l][i] * g[l][i];
                    if rho > 4.0 {
                        let r = ((rho - 4.0) * (rho - 2.0) * rho_inf
                            / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho))
                            .sqrt();
                        theta[l][i] -= lr * r * st.m[l][i] / (st.v[l][i].sqrt() + eps);
                    } else {
                        theta[l][i] -= lr * st.m[l][i];
                    }
                }
            }
            Rule::Yogi => {
                let (b1, b2, eps) = (hp.beta1.unwrap(), hp.beta2.unwrap(), hp.epsilon.unwrap());
                for i in 0..n {
                    let g2 = g[l][i] * g[l][i];
                    st.m[l][i] = b1 * st.m[l][i] + (1.0 - b1) * g[l][i];
                    let d = st.v[l][i] - g2;
                    let sign = if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    st.v[l][i] -= (1.0 - b2) * sign * g2;
                    theta[l][i] -= lr * st.m[l][i] / (st.v[l][i].sqrt() + eps);
                }
            }
            Rule::Lamb => {
                let (b1, b2, eps) = (hp.beta1.unwrap(), hp.beta2.unwrap(), hp.epsilon.unwrap());
                let mut u = vec![0.0; n];
                for i in 0..n {
                    st.m[l][i] = b1 * st.m[l][i] + (1.0 - b1) * g[l][i];
                    st.v[l][i] = b2 * st.v[l][i] + (1.0 - b2) * g[l][i] * g[l][i];
                    u[i] = st.m[l][i] / (st.v[l][i].sqrt() + eps);
                }
                let (a, b) = (norm(&theta[l]), norm(&u));
                let r = if a > 0.0 && b > 0.0 { a / b } else { 1.0 };
                for i in 0..n {
                    theta[l][i] -= lr * r * u[i];
                }
            }
        }
    }
    if rule == Rule::Lookahead {
        st.inner += 1;
        if st.inner == hp.lookahead_k.unwrap() {
            st.inner = 0;
            let a = hp.lookahead_alpha.unwrap();
            for l in 0..theta.len() {
                for i in 0..theta[l].len() {
                    st.slow[l][i] += a * (theta[l][i] - st.slow[l][i]);
                    theta[l][i] = st.slow[l][i];
                }
            }
        }
    }
}

fn random_layers(rng: &mut impl Rng) -> Vec<Vec<f64>> {
    LAYER_SIZES
        .iter()
        .map(|&n| (0..n).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect())
        .collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= CONFORMANCE_TOL * b.abs().max(1.0)
}

/// The library update engine against [`reference_step`].
pub fn conformance_suite() -> SuiteReport {
    conformance_suite_with(&|spec, state, theta, g, horizon| {
        apply_step(spec, state, theta, g, horizon)
    })
}

/// Conformance of an arbitrary stepper, for checking that the suite catches
/// faulty implementations.
pub fn conformance_suite_with(stepper: &Stepper) -> SuiteReport {
    let mut report = SuiteReport::new("conformance");
    for rule in Rule::ALL {
        let hp = conformance_hyperparams(rule);
        let spec = match OptimizerSpec::new(rule, hp.clone()) {
            Ok(s) => s,
            Err(e) => {
                report.check(false, || format!("{rule}: {e}"));
                continue;
            }
        };
        let mut rng = rng_from(derive_seed(&[
            "verify-conformance".into(),
            rule.name().into(),
        ]));
        let theta0 = random_layers(&mut rng);
        let mut want = theta0.clone();
        let zeros: Vec<Vec<f64>> = theta0.iter().map(|l| vec![0.0; l.len()]).collect();
        let ones: Vec<Vec<f64>> = theta0.iter().map(|l| vec![1.0; l.len()]).collect();
        let mut reference = Reference {
            t: 0,
            m: zeros.clone(),
            v: if rule.is_adaptive() { zeros } else { ones },
            slow: theta0.clone(),
            inner: 0,
        };
        let mut got = ParamVector::from_layers(theta0.clone());
        let mut state = OptState::new(rule, &got);
        for step in 1..=CONFORMANCE_STEPS {
            let g = random_layers(&mut rng);
            reference_step(rule, &hp, &mut reference, &mut want, &g, CONFORMANCE_STEPS);
            let outcome = stepper(
                &spec,
                &mut state,
                &mut got,
                &ParamVector::from_layers(g),
                CONFORMANCE_STEPS,
            );
            let ok = outcome.is_ok()
                && got
                    .layers
                    .iter()
                    .flatten()
                    .zip(want.iter().flatten())
                    .all(|(a, b)| close(*a, *b));
            report.check(ok, || {
                format!(
                    "{rule} step {step}: got {:?} ({outcome:?}), expected {want:?}",
                    got.layers
                )
            });
            if !ok {
                break;
            }
        }
    }
    report
}
