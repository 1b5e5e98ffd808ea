use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Update rules covered by the generic `(m_t, v_t, r_t)` framework.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Sgdm,
    Adam,
    Radam,
    Yogi,
    Lars,
    Lamb,
    Lookahead,
}

impl Rule {
    pub const ALL: [Rule; 7] = [
        Rule::Sgdm,
        Rule::Adam,
        Rule::Radam,
        Rule::Yogi,
        Rule::Lars,
        Rule::Lamb,
        Rule::Lookahead,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Rule::Sgdm => "sgdm",
            Rule::Adam => "adam",
            Rule::Radam => "radam",
            Rule::Yogi => "yogi",
            Rule::Lars => "lars",
            Rule::Lamb => "lamb",
            Rule::Lookahead => "lookahead",
        }
    }

    /// Adaptive rules keep a second-moment estimate; SGDM and LARS use `v ≡ 1`.
    pub fn is_adaptive(self) -> bool {
        !matches!(self, Rule::Sgdm | Rule::Lars)
    }

    /// Tunable fields besides the learning rate.
    pub fn tunable(self) -> &'static [Field] {
        match self {
            Rule::Sgdm => &[Field::Mu],
            Rule::Lars => &[Field::Mu, Field::Epsilon],
            _ => &[Field::Beta1, Field::Beta2, Field::Epsilon],
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Rule::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::UnknownRule(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    Mu,
    Beta1,
    Beta2,
    Epsilon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
    LinearDecay,
}

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_SGD_MU: f64 = 0.0;
pub const DEFAULT_LARS_MU: f64 = 0.9;
pub const LOOKAHEAD_K: u32 = 5;
pub const LOOKAHEAD_ALPHA: f64 = 0.5;

/// Realized hyperparameters `Ω`. Only the fields tunable for the owning rule
/// are present; the rest stay `None` and are omitted from serialized records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperparamVector {
    pub alpha0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lookahead_k: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lookahead_alpha: Option<f64>,
}

impl HyperparamVector {
    /// Default configuration of `rule` at learning rate `alpha0`, constant schedule.
    pub fn defaults(rule: Rule, alpha0: f64) -> Self {
        let mut hp = Self {
            alpha0,
            mu: None,
            beta1: None,
            beta2: None,
            epsilon: None,
            schedule: Schedule::Constant,
            gamma: None,
            lookahead_k: None,
            lookahead_alpha: None,
        };
        match rule {
            Rule::Sgdm => hp.mu = Some(DEFAULT_SGD_MU),
            Rule::Lars => {
                hp.mu = Some(DEFAULT_LARS_MU);
                hp.epsilon = Some(DEFAULT_EPSILON);
            }
            _ => {
                hp.beta1 = Some(DEFAULT_BETA1);
                hp.beta2 = Some(DEFAULT_BETA2);
                hp.epsilon = Some(DEFAULT_EPSILON);
            }
        }
        if rule == Rule::Lookahead {
            hp.lookahead_k = Some(LOOKAHEAD_K);
            hp.lookahead_alpha = Some(LOOKAHEAD_ALPHA);
        }
        hp
    }

    pub fn with_linear_decay(mut self, gamma: f64) -> Self {
        self.schedule = Schedule::LinearDecay;
        self.gamma = Some(gamma);
        self
    }

    pub fn mu(&self) -> f64 {
        self.mu.unwrap_or(0.0)
    }

    pub fn beta1(&self) -> f64 {
        self.beta1.unwrap_or(DEFAULT_BETA1)
    }

    pub fn beta2(&self) -> f64 {
        self.beta2.unwrap_or(DEFAULT_BETA2)
    }

    /// `ε`, or zero for rules that do not tune it (SGDM).
    pub fn epsilon(&self) -> f64 {
        self.epsilon.unwrap_or(0.0)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or(1.0)
    }

    pub fn lookahead_k(&self) -> u32 {
        self.lookahead_k.unwrap_or(LOOKAHEAD_K)
    }

    pub fn lookahead_alpha(&self) -> f64 {
        self.lookahead_alpha.unwrap_or(LOOKAHEAD_ALPHA)
    }

    /// Checks that exactly the rule's fields are present and in range.
    pub fn validate(&self, rule: Rule) -> Result<()> {
        let bad = |reason: String| Error::InvalidHyperparams {
            rule: rule.name().to_string(),
            reason,
        };
        let tunable = rule.tunable();
        let fields = [
            (Field::Mu, "mu", self.mu),
            (Field::Beta1, "beta1", self.beta1),
            (Field::Beta2, "beta2", self.beta2),
            (Field::Epsilon, "epsilon", self.epsilon),
        ];
        for (field, name, value) in fields {
            match (tunable.contains(&field), value) {
                (true, None) => return Err(bad(format!("missing `{name}`"))),
                (false, Some(_)) => return Err(bad(format!("`{name}` does not apply"))),
                _ => {}
            }
        }
        if !(self.alpha0.is_finite() && self.alpha0 > 0.0) {
            return Err(bad(format!("alpha0 must be > 0, got {}", self.alpha0)));
        }
        if let Some(mu) = self.mu {
            if !(0.0..=1.0).contains(&mu) {
                return Err(bad(format!("mu must lie in [0, 1], got {mu}")));
            }
        }
        for (name, value) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if let Some(b) = value {
                if !(0.0..1.0).contains(&b) {
                    return Err(bad(format!("{name} must lie in [0, 1), got {b}")));
                }
            }
        }
        if let Some(eps) = self.epsilon {
            if !(eps.is_finite() && eps > 0.0) {
                return Err(bad(format!("epsilon must be > 0, got {eps}")));
            }
        }
        match (self.schedule, self.gamma) {
            (Schedule::Constant, Some(_)) => {
                return Err(bad("`gamma` requires the linear_decay schedule".into()))
            }
            (Schedule::LinearDecay, None) => {
                return Err(bad("linear_decay requires `gamma`".into()))
            }
            (Schedule::LinearDecay, Some(g)) if !(g > 0.0 && g <= 1.0) => {
                return Err(bad(format!("gamma must lie in (0, 1], got {g}")))
            }
            _ => {}
        }
        let is_lookahead = rule == Rule::Lookahead;
        if is_lookahead != self.lookahead_k.is_some()
            || is_lookahead != self.lookahead_alpha.is_some()
        {
            return Err(bad(
                "lookahead_k/lookahead_alpha apply to lookahead only".into()
            ));
        }
        if let Some(k) = self.lookahead_k {
            if k < 1 {
                return Err(bad("lookahead_k must be >= 1".into()));
            }
        }
        if let Some(a) = self.lookahead_alpha {
            if !(a > 0.0 && a <= 1.0) {
                return Err(bad(format!("lookahead_alpha must lie in (0, 1], got {a}")));
            }
        }
        Ok(())
    }
}

/// An optimizer as the pair `(update rule, hyperparameters)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    pub rule: Rule,
    pub hyperparams: HyperparamVector,
}

impl OptimizerSpec {
    pub fn new(rule: Rule, hyperparams: HyperparamVector) -> Result<Self> {
        hyperparams.validate(rule)?;
        Ok(Self { rule, hyperparams })
    }

    pub fn with_defaults(rule: Rule, alpha0: f64) -> Result<Self> {
        Self::new(rule, HyperparamVector::defaults(rule, alpha0))
    }
}
