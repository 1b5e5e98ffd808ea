//! Unified hyperparameter search space and the two tuning modes.
//!
//! Log-uniform ranges are expressed as base-10 exponents: `LogUniform(a, b)`
//! draws `10^u` with `u ~ Uniform(a, b)`. `β1` and `β2` are searched through
//! `1 − β`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizers::{
    HyperparamVector, Rule, Schedule, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON,
    DEFAULT_LARS_MU, DEFAULT_SGD_MU, LOOKAHEAD_ALPHA, LOOKAHEAD_K,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
pub enum Distribution {
    LogUniform { lo_exp: f64, hi_exp: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Distribution {
    fn bounds(&self) -> (f64, f64) {
        match *self {
            Distribution::LogUniform { lo_exp, hi_exp } => (lo_exp, hi_exp),
            Distribution::Uniform { lo, hi } => (lo, hi),
        }
    }

    /// Maps a unit draw `u ∈ [0, 1]` onto the distribution's support.
    pub fn map_unit(&self, u: f64) -> f64 {
        let (lo, hi) = self.bounds();
        let x = lo + u * (hi - lo);
        match self {
            Distribution::LogUniform { .. } => 10f64.powf(x),
            Distribution::Uniform { .. } => x,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        self.map_unit(rng.random::<f64>())
    }

    /// Value range of the support.
    pub fn support(&self) -> (f64, f64) {
        (self.map_unit(0.0), self.map_unit(1.0))
    }

    fn validate(&self, name: &str) -> Result<()> {
        let (lo, hi) = self.bounds();
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid(format!(
                "search range for {name} must satisfy lo < hi, got ({lo}, {hi})"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuningMode {
    /// Tune `α0` only; every other field at its default.
    #[default]
    LrOnly,
    /// Tune every field listed for the rule.
    Full,
}

/// When a task tunes the linear-decay factor `γ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayPolicy {
    /// Constant schedule.
    #[default]
    Never,
    /// Linear decay with tuned `γ` in full mode, constant in lr-only mode.
    FullMode,
    /// Linear decay with tuned `γ` in both modes.
    Always,
}

impl DecayPolicy {
    pub fn tunes_decay(self, mode: TuningMode) -> bool {
        match self {
            DecayPolicy::Never => false,
            DecayPolicy::FullMode => mode == TuningMode::Full,
            DecayPolicy::Always => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub alpha0: Distribution,
    pub mu: Distribution,
    /// Distribution of `1 − β1`.
    pub one_minus_beta1: Distribution,
    /// Distribution of `1 − β2`.
    pub one_minus_beta2: Distribution,
    pub epsilon: Distribution,
    pub gamma: Distribution,
}

impl Default for SearchSpace {
    fn default() -> Self {
        default_space()
    }
}

pub fn default_space() -> SearchSpace {
    SearchSpace {
        alpha0: Distribution::LogUniform {
            lo_exp: -8.0,
            hi_exp: 1.0,
        },
        mu: Distribution::Uniform { lo: 0.0, hi: 1.0 },
        one_minus_beta1: Distribution::LogUniform {
            lo_exp: -4.0,
            hi_exp: 0.0,
        },
        one_minus_beta2: Distribution::LogUniform {
            lo_exp: -6.0,
            hi_exp: 0.0,
        },
        epsilon: Distribution::LogUniform {
            lo_exp: -8.0,
            hi_exp: 1.0,
        },
        gamma: Distribution::LogUniform {
            lo_exp: -4.0,
            hi_exp: 0.0,
        },
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        self.alpha0.validate("alpha0")?;
        self.mu.validate("mu")?;
        self.one_minus_beta1.validate("one_minus_beta1")?;
        self.one_minus_beta2.validate("one_minus_beta2")?;
        self.epsilon.validate("epsilon")?;
        self.gamma.validate("gamma")?;
        let inside = |d: &Distribution, v: f64| {
            let (lo, hi) = d.support();
            v >= lo * (1.0 - 1e-12) && v <= hi * (1.0 + 1e-12)
        };
        let defaults = [
            ("mu", &self.mu, DEFAULT_SGD_MU),
            ("mu", &self.mu, DEFAULT_LARS_MU),
            (
                "one_minus_beta1",
                &self.one_minus_beta1,
                1.0 - DEFAULT_BETA1,
            ),
            (
                "one_minus_beta2",
                &self.one_minus_beta2,
                1.0 - DEFAULT_BETA2,
            ),
            ("epsilon", &self.epsilon, DEFAULT_EPSILON),
        ];
        for (name, dist, value) in defaults {
            if !inside(dist, value) {
                return Err(Error::invalid(format!(
                    "default {value} for {name} lies outside its search range"
                )));
            }
        }
        Ok(())
    }

    /// Draws one configuration for `rule`. Only the rule's tunable fields are
    /// drawn; in lr-only mode everything except `α0` takes its default.
    /// Lookahead's `k` and `α_s` are fixed at their defaults.
    pub fn sample_config(
        &self,
        mode: TuningMode,
        rule: Rule,
        decay: DecayPolicy,
        rng: &mut impl Rng,
    ) -> HyperparamVector {
        let mut hp = HyperparamVector::defaults(rule, self.alpha0.sample(rng));
        if mode == TuningMode::Full {
            match rule {
                Rule::Sgdm => hp.mu = Some(self.mu.sample(rng)),
                Rule::Lars => {
                    hp.mu = Some(self.mu.sample(rng));
                    hp.epsilon = Some(self.epsilon.sample(rng));
                }
                _ => {
                    hp.beta1 = Some(1.0 - self.one_minus_beta1.sample(rng));
                    hp.beta2 = Some(1.0 - self.one_minus_beta2.sample(rng));
                    hp.epsilon = Some(self.epsilon.sample(rng));
                }
            }
        }
        if decay.tunes_decay(mode) {
            hp.schedule = Schedule::LinearDecay;
            hp.gamma = Some(self.gamma.sample(rng));
        }
        if rule == Rule::Lookahead {
            hp.lookahead_k = Some(LOOKAHEAD_K);
            hp.lookahead_alpha = Some(LOOKAHEAD_ALPHA);
        }
        hp
    }
}

/// Draws one configuration from the default space.
pub fn sample_config(
    space: &SearchSpace,
    mode: TuningMode,
    rule: Rule,
    rng: &mut impl Rng,
) -> HyperparamVector {
    space.sample_config(mode, rule, DecayPolicy::Never, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use proptest::prelude::*;

    #[test]
    fn defaults_match_table() {
        let hp = HyperparamVector::defaults(Rule::Adam, 1.0);
        assert_eq!(hp.beta1, Some(0.9));
        assert_eq!(hp.beta2, Some(0.999));
        assert_eq!(hp.epsilon, Some(1e-8));
        assert_eq!(HyperparamVector::defaults(Rule::Sgdm, 1.0).mu, Some(0.0));
        assert_eq!(HyperparamVector::defaults(Rule::Lars, 1.0).mu, Some(0.9));
        default_space().validate().unwrap();
    }

    #[test]
    fn log_uniform_upper_boundary() {
        let d = default_space().alpha0;
        assert_eq!(d.map_unit(1.0), 10.0);
        assert_eq!(d.map_unit(0.0), 1e-8);
    }

    #[test]
    fn lr_only_keeps_defaults() {
        let space = default_space();
        let mut rng = rng_from(1);
        for _ in 0..200 {
            let sgd = space.sample_config(
                TuningMode::LrOnly,
                Rule::Sgdm,
                DecayPolicy::FullMode,
                &mut rng,
            );
            assert_eq!(sgd.mu, Some(0.0));
            assert_eq!(sgd.schedule, Schedule::Constant);
            let lars =
                space.sample_config(TuningMode::LrOnly, Rule::Lars, DecayPolicy::Never, &mut rng);
            assert_eq!(lars.mu, Some(0.9));
            assert_eq!(lars.epsilon, Some(1e-8));
            let la = space.sample_config(
                TuningMode::LrOnly,
                Rule::Lookahead,
                DecayPolicy::Never,
                &mut rng,
            );
            assert_eq!(la, HyperparamVector::defaults(Rule::Lookahead, la.alpha0));
        }
    }

    #[test]
    fn full_mode_varies_every_adam_field() {
        let space = default_space();
        let mut rng = rng_from(7);
        let draws: Vec<_> = (0..100)
            .map(|_| {
                space.sample_config(TuningMode::Full, Rule::Adam, DecayPolicy::Never, &mut rng)
            })
            .collect();
        let distinct = |f: &dyn Fn(&HyperparamVector) -> f64| {
            let mut v: Vec<u64> = draws.iter().map(|h| f(h).to_bits()).collect();
            v.sort_unstable();
            v.dedup();
            v.len()
        };
        assert!(distinct(&|h| h.alpha0) > 1);
        assert!(distinct(&|h| h.beta1.unwrap()) > 1);
        assert!(distinct(&|h| h.beta2.unwrap()) > 1);
        assert!(distinct(&|h| h.epsilon.unwrap()) > 1);
    }

    #[test]
    fn decay_policy_controls_gamma() {
        let space = default_space();
        let mut rng = rng_from(3);
        let hp = space.sample_config(
            TuningMode::Full,
            Rule::Sgdm,
            DecayPolicy::FullMode,
            &mut rng,
        );
        assert_eq!(hp.schedule, Schedule::LinearDecay);
        let g = hp.gamma.unwrap();
        assert!((1e-4..=1.0).contains(&g));
        hp.validate(Rule::Sgdm).unwrap();
        let hp = space.sample_config(
            TuningMode::LrOnly,
            Rule::Sgdm,
            DecayPolicy::Always,
            &mut rng,
        );
        assert!(hp.gamma.is_some());
        let hp = space.sample_config(TuningMode::Full, Rule::Sgdm, DecayPolicy::Never, &mut rng);
        assert!(hp.gamma.is_none());
    }

    #[test]
    fn log10_alpha_is_uniform() {
        // One-sample Kolmogorov–Smirnov against Uniform(-8, 1); the 1% critical
        // value is 1.628/√n.
        let space = default_space();
        let mut rng = rng_from(2024);
        let n = 10_000;
        let mut xs: Vec<f64> = (0..n)
            .map(|_| {
                let hp = space.sample_config(
                    TuningMode::LrOnly,
                    Rule::Adam,
                    DecayPolicy::Never,
                    &mut rng,
                );
                (hp.alpha0.log10() + 8.0) / 9.0
            })
            .collect();
        xs.sort_by(f64::total_cmp);
        let mut d: f64 = 0.0;
        for (i, x) in xs.iter().enumerate() {
            let lo = i as f64 / n as f64;
            let hi = (i + 1) as f64 / n as f64;
            d = d.max((x - lo).abs()).max((hi - x).abs());
        }
        assert!(d < 1.628 / (n as f64).sqrt(), "KS statistic {d}");
    }

    #[test]
    fn rejects_inverted_ranges() {
        let mut space = default_space();
        space.mu = Distribution::Uniform { lo: 1.0, hi: 0.0 };
        assert!(space.validate().is_err());
        let mut space = default_space();
        space.epsilon = Distribution::LogUniform {
            lo_exp: -4.0,
            hi_exp: 1.0,
        };
        assert!(space.validate().is_err(), "default epsilon outside range");
    }

    proptest! {
        #[test]
        fn samples_stay_in_range(seed in any::<u64>(), rule_idx in 0usize..7, full in any::<bool>()) {
            let rule = Rule::ALL[rule_idx];
            let mode = if full { TuningMode::Full } else { TuningMode::LrOnly };
            let space = default_space();
            let mut rng = rng_from(seed);
            let hp = space.sample_config(mode, rule, DecayPolicy::FullMode, &mut rng);
            prop_assert!(hp.alpha0 >= 1e-8 && hp.alpha0 <= 10.0);
            if let Some(b2) = hp.beta2 {
                prop_assert!((1.0 - b2) >= 1e-6 * (1.0 - 1e-9) && (1.0 - b2) <= 1.0);
            }
            prop_assert!(hp.validate(rule).is_ok());
        }

        #[test]
        fn sampling_is_pure(seed in any::<u64>()) {
            let space = default_space();
            let a: Vec<_> = {
                let mut rng = rng_from(seed);
                (0..5).map(|_| space.sample_config(TuningMode::Full, Rule::Lamb, DecayPolicy::Always, &mut rng)).collect()
            };
            let b: Vec<_> = {
                let mut rng = rng_from(seed);
                (0..5).map(|_| space.sample_config(TuningMode::Full, Rule::Lamb, DecayPolicy::Always, &mut rng)).collect()
            };
            prop_assert_eq!(a, b);
        }
    }
}
