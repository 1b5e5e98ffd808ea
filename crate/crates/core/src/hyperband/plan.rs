use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One successive-halving stage: `n` trials, each trained to `epochs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rung {
    pub n: usize,
    /// Exact resource `r·η^i`, possibly fractional.
    pub r: f64,
    /// Whole epochs each surviving trial has consumed after this rung,
    /// `⌈r⌉` computed in integer arithmetic.
    pub epochs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketPlan {
    pub s: u32,
    pub n: usize,
    pub r: f64,
    pub rungs: Vec<Rung>,
}

impl BracketPlan {
    /// Epochs charged by this bracket when promoted trials resume.
    pub fn epochs(&self) -> u64 {
        let mut prev = 0;
        let mut total = 0;
        for rung in &self.rungs {
            total += rung.n as u64 * (rung.epochs - prev);
            prev = rung.epochs;
        }
        total
    }
}

/// `⌊log_η R⌋`, computed without floating point.
pub fn s_max(max_resource: u64, eta: u64) -> u32 {
    let mut s = 0;
    let mut power = eta;
    while power <= max_resource {
        s += 1;
        match power.checked_mul(eta) {
            Some(p) => power = p,
            None => break,
        }
    }
    s
}

/// Brackets for `s = s_max, …, 0`.
pub fn plan_brackets(max_resource: u64, eta: u64) -> Result<Vec<BracketPlan>> {
    if max_resource < 1 {
        return Err(Error::invalid("max_resource must be >= 1"));
    }
    if eta < 2 {
        return Err(Error::invalid("eta must be >= 2"));
    }
    let s_max = s_max(max_resource, eta);
    let brackets = (0..=s_max)
        .rev()
        .map(|s| {
            let eta_s = eta.pow(s);
            let n = ((s_max as u64 + 1) * eta_s).div_ceil(s as u64 + 1) as usize;
            let r = max_resource as f64 / eta_s as f64;
            let rungs = (0..=s)
                .map(|i| {
                    let shrink = eta.pow(s - i);
                    Rung {
                        n: n / eta.pow(i) as usize,
                        r: max_resource as f64 / shrink as f64,
                        epochs: max_resource.div_ceil(shrink),
                    }
                })
                .collect();
            BracketPlan { s, n, r, rungs }
        })
        .collect();
    Ok(brackets)
}

/// Configurations sampled by one complete pass.
pub fn pass_configs(plan: &[BracketPlan]) -> usize {
    plan.iter().map(|b| b.n).sum()
}

/// Epochs charged by one complete pass.
pub fn pass_epochs(plan: &[BracketPlan]) -> u64 {
    plan.iter().map(BracketPlan::epochs).sum()
}
