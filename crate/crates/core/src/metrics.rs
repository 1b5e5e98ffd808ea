//! Trajectories, the early-weighted cumulative metric (CPE), peak
//! performance, performance ratios and profiles.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::MetricDirection;

/// Best-so-far values `P_1..P_T`, one per epoch of consumed resource.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub direction: MetricDirection,
    pub values: Vec<f64>,
}

impl Trajectory {
    /// Running best of a raw stream.
    pub fn best_so_far(direction: MetricDirection, raw: &[f64]) -> Self {
        let mut rec = TrajectoryRecorder::new(direction);
        for (i, &v) in raw.iter().enumerate() {
            rec.record(i as u64 + 1, v).expect("epochs are consecutive");
        }
        rec.finish()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_monotone(&self) -> bool {
        self.values.windows(2).all(|w| match self.direction {
            MetricDirection::HigherBetter => w[1] >= w[0],
            MetricDirection::LowerBetter => w[1] <= w[0],
        })
    }

    pub fn cpe(&self) -> Result<f64> {
        cpe(&self.values)
    }

    pub fn peak(&self) -> Result<f64> {
        peak(&self.values)
    }
}

/// Builds a best-so-far trajectory from an epoch-ordered stream.
#[derive(Debug, Clone)]
pub struct TrajectoryRecorder {
    direction: MetricDirection,
    values: Vec<f64>,
}

impl TrajectoryRecorder {
    pub fn new(direction: MetricDirection) -> Self {
        Self {
            direction,
            values: Vec::new(),
        }
    }

    /// Accepts the evaluation at `cumulative_epoch`, which must be exactly
    /// one past the previous event.
    pub fn record(&mut self, cumulative_epoch: u64, value: f64) -> Result<()> {
        let expected = self.values.len() as u64 + 1;
        if cumulative_epoch != expected {
            return Err(Error::OutOfOrder {
                expected,
                got: cumulative_epoch,
            });
        }
        let next = match self.values.last() {
            Some(&best) => self.direction.best(best, value),
            None => value,
        };
        self.values.push(next);
        Ok(())
    }

    pub fn finish(self) -> Trajectory {
        Trajectory {
            direction: self.direction,
            values: self.values,
        }
    }
}

/// Weights `λ_t = (T − t + 1) / Σ_s (T − s + 1)` for `t = 1..T`.
pub fn cpe_weights(horizon: usize) -> Result<Vec<f64>> {
    if horizon == 0 {
        return Err(Error::EmptyTrajectory);
    }
    let total = (horizon * (horizon + 1) / 2) as f64;
    Ok((1..=horizon)
        .map(|t| (horizon - t + 1) as f64 / total)
        .collect())
}

pub fn cpe(values: &[f64]) -> Result<f64> {
    let weights = cpe_weights(values.len())?;
    Ok(weights.iter().zip(values).map(|(w, p)| w * p).sum())
}

/// `P_T`.
pub fn peak(values: &[f64]) -> Result<f64> {
    values.last().copied().ok_or(Error::EmptyTrajectory)
}

/// Arithmetic mean and sample standard deviation (zero for one value).
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::invalid("mean of an empty sample"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// CPE values per task and optimizer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProfileTable {
    pub tasks: BTreeMap<String, TaskScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScores {
    pub direction: MetricDirection,
    pub scores: BTreeMap<String, f64>,
}

impl ProfileTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        task: &str,
        direction: MetricDirection,
        optimizer: &str,
        cpe: f64,
    ) -> Result<()> {
        let entry = self
            .tasks
            .entry(task.to_string())
            .or_insert_with(|| TaskScores {
                direction,
                scores: BTreeMap::new(),
            });
        if entry.direction != direction {
            return Err(Error::invalid(format!(
                "task `{task}` recorded with two metric directions"
            )));
        }
        entry.scores.insert(optimizer.to_string(), cpe);
        Ok(())
    }

    pub fn optimizers(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .tasks
            .values()
            .flat_map(|t| t.scores.keys().cloned())
            .collect();
        names.sort();
        names.dedup();
        names
    }

    fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::invalid("profile table has no tasks"));
        }
        for (task, t) in &self.tasks {
            if t.scores.len() < 2 {
                return Err(Error::invalid(format!(
                    "task `{task}` needs at least two optimizers"
                )));
            }
            if let Some((o, v)) = t.scores.iter().find(|(_, v)| !v.is_finite()) {
                return Err(Error::UndefinedRatio(format!(
                    "CPE of `{o}` on `{task}` is {v}"
                )));
            }
        }
        Ok(())
    }
}

/// `r_{o,a}` keyed by `(optimizer, task)`; every ratio is ≥ 1.
pub fn perf_ratios(table: &ProfileTable) -> Result<BTreeMap<(String, String), f64>> {
    table.validate()?;
    let mut out = BTreeMap::new();
    for (task, t) in &table.tasks {
        if let Some((o, v)) = t.scores.iter().find(|(_, v)| **v <= 0.0) {
            return Err(Error::UndefinedRatio(format!(
                "CPE of `{o}` on `{task}` is {v}, ratios need positive values"
            )));
        }
        let values = t.scores.values().copied();
        let best = match t.direction {
            MetricDirection::HigherBetter => values.fold(f64::NEG_INFINITY, f64::max),
            MetricDirection::LowerBetter => values.fold(f64::INFINITY, f64::min),
        };
        for (o, &v) in &t.scores {
            let r = match t.direction {
                MetricDirection::HigherBetter => best / v,
                MetricDirection::LowerBetter => v / best,
            };
            out.insert((o.clone(), task.clone()), r);
        }
    }
    Ok(out)
}

/// `τ = 1.00, 1.01, …, 1.30`.
pub fn default_tau_grid() -> Vec<f64> {
    (0..=30).map(|i| (100 + i) as f64 / 100.0).collect()
}

/// `ρ_o(τ)` for every optimizer over `taus`: the fraction of tasks whose
/// ratio is at most `τ`. A task the optimizer was not run on counts as a miss.
pub fn perf_profile(
    ratios: &BTreeMap<(String, String), f64>,
    taus: &[f64],
) -> Result<BTreeMap<String, Vec<f64>>> {
    if taus.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("tau grid must be sorted"));
    }
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if taus.iter().any(|&t| !(t >= 1.0)) {
        return Err(Error::invalid("tau values must be >= 1"));
    }
    let mut tasks: Vec<&str> = ratios.keys().map(|(_, a)| a.as_str()).collect();
    tasks.sort_unstable();
    tasks.dedup();
    let n_tasks = tasks.len() as f64;
    let mut per_opt: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for ((o, _), &r) in ratios {
        per_opt.entry(o.clone()).or_default().push(r);
    }
    Ok(per_opt
        .into_iter()
        .map(|(o, rs)| {
            let rho = taus
                .iter()
                .map(|&tau| rs.iter().filter(|&&r| r <= tau).count() as f64 / n_tasks)
                .collect();
            (o, rho)
        })
        .collect())
}

/// Kendall's τ-b between two paired score lists.
pub fn kendall_tau_b(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid(
            "kendall tau needs two equal lists of length >= 2",
        ));
    }
    let (mut concordant, mut discordant, mut ties_a, mut ties_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let da = (a[i] - a[j])
                .partial_cmp(&0.0)
                .unwrap_or(std::cmp::Ordering::Equal);
            let db = (b[i] - b[j])
                .partial_cmp(&0.0)
                .unwrap_or(std::cmp::Ordering::Equal);
            use std::cmp::Ordering::Equal;
            match (da, db) {
                (Equal, Equal) => {}
                (Equal, _) => ties_a += 1,
                (_, Equal) => ties_b += 1,
                _ if da == db => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let denom =
        (((concordant + discordant + ties_a) * (concordant + discordant + ties_b)) as f64).sqrt();
    if denom == 0.0 {
        return Err(Error::invalid(
            "kendall tau undefined for constant rankings",
        ));
    }
    Ok((concordant - discordant) as f64 / denom)
}

/// Names ordered best first by score; ties keep name order.
pub fn rank(scores: &BTreeMap<String, f64>, direction: MetricDirection) -> Vec<String> {
    let mut names: Vec<(&String, f64)> = scores.iter().map(|(k, &v)| (k, v)).collect();
    names.sort_by(|a, b| {
        direction
            .to_loss(a.1)
            .total_cmp(&direction.to_loss(b.1))
            .then(a.0.cmp(b.0))
    });
    names.into_iter().map(|(k, _)| k.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    use MetricDirection::{HigherBetter, LowerBetter};

    #[test]
    fn running_best_examples() {
        let t = Trajectory::best_so_far(HigherBetter, &[0.5, 0.4, 0.7]);
        assert_eq!(t.values, vec![0.5, 0.5, 0.7]);
        let t = Trajectory::best_so_far(LowerBetter, &[3.0, 2.0, 4.0]);
        assert_eq!(t.values, vec![3.0, 2.0, 2.0]);
        let t = Trajectory::best_so_far(LowerBetter, &[1.5]);
        assert_eq!(t.values, vec![1.5]);
        assert_eq!(t.peak().unwrap(), 1.5);
    }

    #[test]
    fn out_of_order_is_rejected() {
        let mut rec = TrajectoryRecorder::new(HigherBetter);
        rec.record(1, 0.1).unwrap();
        assert!(matches!(
            rec.record(3, 0.2),
            Err(Error::OutOfOrder {
                expected: 2,
                got: 3
            })
        ));
    }

    #[test]
    fn cpe_examples() {
        assert!((cpe(&[1.0, 2.0, 3.0]).unwrap() - 10.0 / 6.0).abs() < 1e-15);
        assert_eq!(cpe(&[0.7]).unwrap(), 0.7);
        assert!(matches!(cpe(&[]), Err(Error::EmptyTrajectory)));
        assert!(matches!(peak(&[]), Err(Error::EmptyTrajectory)));
        assert_eq!(peak(&[0.5, 0.5, 0.7]).unwrap(), 0.7);
    }

    #[test]
    fn published_ratio_fixture() {
        let mut table = ProfileTable::new();
        table
            .insert("published", HigherBetter, "lars", 67.48)
            .unwrap();
        table
            .insert("published", HigherBetter, "adam", 65.88)
            .unwrap();
        let r = perf_ratios(&table).unwrap();
        let adam = r[&("adam".to_string(), "published".to_string())];
        assert!((adam - 67.48 / 65.88).abs() < 1e-15);
        assert!((adam - 1.0243).abs() < 1e-4);
        assert_eq!(r[&("lars".to_string(), "published".to_string())], 1.0);
    }

    #[test]
    fn lower_better_ratios() {
        let mut table = ProfileTable::new();
        table.insert("q", LowerBetter, "a", 0.10).unwrap();
        table.insert("q", LowerBetter, "b", 0.20).unwrap();
        let r = perf_ratios(&table).unwrap();
        assert_eq!(r[&("a".into(), "q".into())], 1.0);
        assert_eq!(r[&("b".into(), "q".into())], 2.0);
    }

    #[test]
    fn ratio_errors() {
        let mut table = ProfileTable::new();
        table.insert("t", HigherBetter, "a", 0.5).unwrap();
        assert!(perf_ratios(&table).is_err(), "single optimizer");
        table.insert("t", HigherBetter, "b", 0.0).unwrap();
        assert!(matches!(perf_ratios(&table), Err(Error::UndefinedRatio(_))));
        assert!(table.insert("t", LowerBetter, "c", 1.0).is_err());
    }

    #[test]
    fn profile_examples() {
        let mut ratios = BTreeMap::new();
        ratios.insert(("a".to_string(), "t1".to_string()), 1.0);
        ratios.insert(("a".to_string(), "t2".to_string()), 1.1);
        let rho = perf_profile(&ratios, &[1.0, 1.05, 1.1]).unwrap();
        assert_eq!(rho["a"], vec![0.5, 0.5, 1.0]);
        assert!(perf_profile(&ratios, &[1.1, 1.0]).is_err());
        assert!(perf_profile(&ratios, &[0.9]).is_err());

        let mut table = ProfileTable::new();
        table.insert("t", HigherBetter, "win", 0.9).unwrap();
        table.insert("t", HigherBetter, "lose", 0.8).unwrap();
        let rho = perf_profile(&perf_ratios(&table).unwrap(), &default_tau_grid()).unwrap();
        assert_eq!(rho["win"][0], 1.0);
        assert_eq!(rho["lose"][0], 0.0);
    }

    #[test]
    fn tau_grid_spans_range() {
        let g = default_tau_grid();
        assert_eq!(g.len(), 31);
        assert_eq!(g[0], 1.0);
        assert_eq!(g[30], 1.3);
        assert_eq!(g[5], 1.05);
    }

    #[test]
    fn mean_std_uses_sample_variance() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
        assert_eq!(mean_std(&[4.0]).unwrap(), (4.0, 0.0));
    }

    #[test]
    fn kendall_examples() {
        assert_eq!(
            kendall_tau_b(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(),
            1.0
        );
        assert_eq!(
            kendall_tau_b(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(),
            -1.0
        );
        // One discordant pair of three, no ties.
        let t = kendall_tau_b(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert!((t - 1.0 / 3.0).abs() < 1e-15);
        // Ties in one list: (C − D)/sqrt((n0−n1)(n0−n2)) = 2/sqrt(2·3).
        let t = kendall_tau_b(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((t - 2.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!(kendall_tau_b(&[1.0, 1.0], &[2.0, 3.0]).is_err());
    }

    #[test]
    fn rank_respects_direction() {
        let scores: BTreeMap<String, f64> =
            [("a".into(), 0.2), ("b".into(), 0.9), ("c".into(), 0.5)].into();
        assert_eq!(rank(&scores, HigherBetter), vec!["b", "c", "a"]);
        assert_eq!(rank(&scores, LowerBetter), vec!["a", "c", "b"]);
    }

    proptest! {
        #[test]
        fn weights_sum_to_one_and_decrease(t in 1usize..2000) {
            let w = cpe_weights(t).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.windows(2).all(|p| p[0] > p[1] && p[1] > 0.0));
        }

        #[test]
        fn constant_trajectory_cpe_is_constant(c in -1e3f64..1e3, t in 1usize..500) {
            let v = vec![c; t];
            prop_assert!((cpe(&v).unwrap() - c).abs() <= 1e-12 * c.abs().max(1.0));
        }

        #[test]
        fn cpe_at_most_peak(raw in prop::collection::vec(0.0f64..1.0, 1..60)) {
            let t = Trajectory::best_so_far(HigherBetter, &raw);
            prop_assert!(t.is_monotone());
            let (c, p) = (t.cpe().unwrap(), t.peak().unwrap());
            let constant = t.values.iter().all(|&v| v == t.values[0]);
            if constant {
                prop_assert!((c - p).abs() <= 1e-12);
            } else {
                prop_assert!(c < p);
            }
            let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(p, max);
        }

        #[test]
        fn profiles_are_monotone_and_scale_free(
            scores in prop::collection::vec(prop::collection::vec(0.1f64..10.0, 3), 1..5),
            scale in 0.01f64..100.0,
        ) {
            let names = ["a", "b", "c"];
            let mut table = ProfileTable::new();
            let mut scaled = ProfileTable::new();
            for (i, row) in scores.iter().enumerate() {
                let task = format!("t{i}");
                let dir = if i % 2 == 0 { HigherBetter } else { LowerBetter };
                for (o, &v) in names.iter().zip(row) {
                    table.insert(&task, dir, o, v).unwrap();
                    scaled.insert(&task, dir, o, v * scale).unwrap();
                }
            }
            let ratios = perf_ratios(&table).unwrap();
            let ratios_scaled = perf_ratios(&scaled).unwrap();
            for (k, r) in &ratios {
                prop_assert!(*r >= 1.0);
                prop_assert!((r - ratios_scaled[k]).abs() <= 1e-12 * r);
            }
            for (i, _) in scores.iter().enumerate() {
                let task = format!("t{i}");
                prop_assert!(names.iter().any(|o| ratios[&(o.to_string(), task.clone())] == 1.0));
            }
            let taus = default_tau_grid();
            let rho = perf_profile(&ratios, &taus).unwrap();
            for (o, curve) in &rho {
                prop_assert!(curve.windows(2).all(|w| w[1] >= w[0]));
                let max_r = ratios.iter().filter(|((oo, _), _)| oo == o).map(|(_, r)| *r).fold(1.0, f64::max);
                for (tau, rho) in taus.iter().zip(curve) {
                    if *tau >= max_r {
                        prop_assert_eq!(*rho, 1.0);
                    }
                }
            }
        }
    }
}
