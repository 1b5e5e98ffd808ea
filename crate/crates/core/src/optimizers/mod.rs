//! Generic first-order update engine.
//!
//! Every rule is expressed through three per-step quantities: a first moment
//! `m_t`, a second moment `v_t` and a per-layer scale `r_t`, combined as
//!
//! ```text
//! θ_{t+1} = θ_t − α_t · r_t · m_t / (√v_t + ε)
//! ```
//!
//! Moments carry no bias correction. Lookahead wraps the Adam rule with a
//! slow-weight average every `k` steps.

mod hyperparams;

use serde::{Deserialize, Serialize};

use crate::error::{Diverged, Error, Result};
use crate::tasks::{l2_norm, ParamVector};

pub use hyperparams::{
    Field, HyperparamVector, OptimizerSpec, Rule, Schedule, DEFAULT_BETA1, DEFAULT_BETA2,
    DEFAULT_EPSILON, DEFAULT_LARS_MU, DEFAULT_SGD_MU, LOOKAHEAD_ALPHA, LOOKAHEAD_K,
};

/// Learning rate at step `t` of a horizon of `horizon` steps.
pub fn schedule_lr(hp: &HyperparamVector, t: u64, horizon: u64) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::invalid("schedule horizon must be positive"));
    }
    if t == 0 || t > horizon {
        return Err(Error::invalid(format!(
            "step {t} outside schedule horizon 1..={horizon}"
        )));
    }
    Ok(match hp.schedule {
        Schedule::Constant => hp.alpha0,
        Schedule::LinearDecay => {
            hp.alpha0 - (1.0 - hp.gamma()) * hp.alpha0 * (t as f64 / horizon as f64)
        }
    })
}

/// Per-trial optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    /// Steps taken so far.
    pub t: u64,
    pub m: ParamVector,
    /// Second moment; identically 1 for SGDM and LARS.
    pub v: ParamVector,
    /// Lookahead slow weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slow_weights: Option<ParamVector>,
    /// Inner steps since the last Lookahead synchronization.
    #[serde(default)]
    pub inner_counter: u32,
}

impl OptState {
    pub fn new(rule: Rule, theta0: &ParamVector) -> Self {
        let zeros =
            || ParamVector::from_layers(theta0.layers.iter().map(|l| vec![0.0; l.len()]).collect());
        let v = if rule.is_adaptive() {
            zeros()
        } else {
            ParamVector::from_layers(theta0.layers.iter().map(|l| vec![1.0; l.len()]).collect())
        };
        Self {
            t: 0,
            m: zeros(),
            v,
            slow_weights: (rule == Rule::Lookahead).then(|| theta0.clone()),
            inner_counter: 0,
        }
    }
}

/// The `(m_t, v_t, r_t)` triple for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateTerms {
    pub m: ParamVector,
    pub v: ParamVector,
    /// One scale per layer.
    pub r: Vec<f64>,
    /// False when the step ignores `v` (RAdam before its variance estimate is
    /// tractable).
    pub use_second_moment: bool,
}

/// RAdam's rectification factor at step `t`, or `None` while `ρ_t ≤ 4`.
///
/// `ρ_∞ = 2/(1−β2) − 1` and `ρ_t = ρ_∞ − 2tβ2ᵗ/(1−β2ᵗ)`.
pub fn radam_rectifier(beta2: f64, t: u64) -> Option<f64> {
    let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    let b_t = beta2.powf(t as f64);
    let rho_t = rho_inf - 2.0 * t as f64 * b_t / (1.0 - b_t);
    if rho_t > 4.0 {
        Some(
            (((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
                / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                .sqrt(),
        )
    } else {
        None
    }
}

/// Layer-wise trust ratio `‖num‖/‖den‖`, falling back to 1 when either norm
/// vanishes.
fn trust_ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 || den == 0.0 {
        1.0
    } else {
        num / den
    }
}

fn ema(prev: f64, x: f64, beta: f64) -> f64 {
    beta * prev + (1.0 - beta) * x
}

/// Computes the moments and scale for step `state.t + 1` from gradient `g`
/// at parameters `theta`. Lookahead uses the Adam row.
pub fn compute_update_terms(
    spec: &OptimizerSpec,
    state: &OptState,
    theta: &ParamVector,
    g: &ParamVector,
) -> UpdateTerms {
    let hp = &spec.hyperparams;
    let t = state.t + 1;
    let n_layers = theta.layers.len();
    let mut m = state.m.clone();
    let mut v = state.v.clone();
    let mut r = vec![1.0; n_layers];
    let mut use_second_moment = true;

    match spec.rule {
        Rule::Sgdm | Rule::Lars => {
            let mu = hp.mu();
            m.zip_apply(g, |m, g| mu * m + g);
        }
        Rule::Adam | Rule::Radam | Rule::Lamb | Rule::Lookahead => {
            let (b1, b2) = (hp.beta1(), hp.beta2());
            m.zip_apply(g, |m, g| ema(m, g, b1));
            v.zip_apply(g, |v, g| ema(v, g * g, b2));
        }
        Rule::Yogi => {
            let (b1, b2) = (hp.beta1(), hp.beta2());
            m.zip_apply(g, |m, g| ema(m, g, b1));
            v.zip_apply(g, |v, g| {
                let g2 = g * g;
                v - (1.0 - b2) * sign(v - g2) * g2
            });
        }
    }

    match spec.rule {
        Rule::Radam => match radam_rectifier(hp.beta2(), t) {
            Some(rt) => r.fill(rt),
            None => use_second_moment = false,
        },
        Rule::Lars => {
            for (i, ri) in r.iter_mut().enumerate() {
                *ri = trust_ratio(l2_norm(&theta.layers[i]), l2_norm(&m.layers[i]));
            }
        }
        Rule::Lamb => {
            let eps = hp.epsilon();
            for (i, ri) in r.iter_mut().enumerate() {
                let scaled: f64 = m.layers[i]
                    .iter()
                    .zip(&v.layers[i])
                    .map(|(m, v)| {
                        let u = m / (v.sqrt() + eps);
                        u * u
                    })
                    .sum::<f64>()
                    .sqrt();
                *ri = trust_ratio(l2_norm(&theta.layers[i]), scaled);
            }
        }
        _ => {}
    }

    UpdateTerms {
        m,
        v,
        r,
        use_second_moment,
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One in-place update. `horizon` is the schedule horizon in steps.
///
/// A non-finite gradient returns [`Diverged`] and leaves `theta` and `state`
/// untouched. If the update itself produces non-finite parameters the new
/// values are kept and [`Diverged`] is returned.
pub fn apply_step(
    spec: &OptimizerSpec,
    state: &mut OptState,
    theta: &mut ParamVector,
    g: &ParamVector,
    horizon: u64,
) -> Result<()> {
    if !g.same_shape(theta) || !state.m.same_shape(theta) {
        return Err(Error::invalid(
            "gradient/state shapes do not match parameters",
        ));
    }
    if !g.is_finite() {
        return Err(Diverged.into());
    }
    let t = state.t + 1;
    let lr = schedule_lr(&spec.hyperparams, t, horizon)?;
    let terms = compute_update_terms(spec, state, theta, g);
    let eps = spec.hyperparams.epsilon();

    for (i, layer) in theta.layers.iter_mut().enumerate() {
        let scale = lr * terms.r[i];
        let (m, v) = (&terms.m.layers[i], &terms.v.layers[i]);
        for ((p, m), v) in layer.iter_mut().zip(m).zip(v) {
            let denom = if terms.use_second_moment {
                v.sqrt() + eps
            } else {
                1.0
            };
            *p -= scale * m / denom;
        }
    }
    state.m = terms.m;
    state.v = terms.v;
    state.t = t;

    if spec.rule == Rule::Lookahead {
        lookahead_sync(spec, state, theta);
    }
    if theta.is_finite() {
        Ok(())
    } else {
        Err(Diverged.into())
    }
}

/// Counts one inner step and, every `k` steps, pulls the slow weights toward
/// the fast ones and resets the fast weights onto them.
fn lookahead_sync(spec: &OptimizerSpec, state: &mut OptState, theta: &mut ParamVector) {
    let k = spec.hyperparams.lookahead_k();
    let alpha = spec.hyperparams.lookahead_alpha();
    state.inner_counter += 1;
    if state.inner_counter < k {
        return;
    }
    state.inner_counter = 0;
    let slow = state.slow_weights.get_or_insert_with(|| theta.clone());
    slow.zip_apply(theta, |s, f| s + alpha * (f - s));
    theta.clone_from(slow);
}

/// Functional form of [`apply_step`].
pub fn step(
    spec: &OptimizerSpec,
    state: &OptState,
    theta: &ParamVector,
    g: &ParamVector,
    horizon: u64,
) -> Result<(ParamVector, OptState)> {
    let mut theta = theta.clone();
    let mut state = state.clone();
    apply_step(spec, &mut state, &mut theta, g, horizon)?;
    Ok((theta, state))
}

/// Lookahead step with Adam as the inner rule.
pub fn lookahead_step(
    spec: &OptimizerSpec,
    state: &OptState,
    theta: &ParamVector,
    g: &ParamVector,
    horizon: u64,
) -> Result<(ParamVector, OptState)> {
    if spec.rule != Rule::Lookahead {
        return Err(Error::invalid("lookahead_step requires the lookahead rule"));
    }
    step(spec, state, theta, g, horizon)
}
