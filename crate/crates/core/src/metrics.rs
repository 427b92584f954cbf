//! Tracking error of a run and its aggregation over runs and environments.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;

/// Weight applied when the detected best looks better than the true optimum.
pub const OVERESTIMATE_PENALTY: f64 = 1.5;

/// One row of a run trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub g_x: f64,
    pub g_y: f64,
    /// True utility of the detected best at `t`.
    pub util_g: f64,
    pub a_x: f64,
    pub a_y: f64,
    pub util_a: f64,
    pub distance: f64,
    pub lambda: f64,
}

impl StepRecord {
    pub fn new(t: usize, g: Vec2, util_g: f64, a: Vec2, util_a: f64) -> Self {
        Self {
            t,
            g_x: g.x,
            g_y: g.y,
            util_g,
            a_x: a.x,
            a_y: a.y,
            util_a,
            distance: g.distance(a),
            lambda: penalty(util_g, util_a),
        }
    }

    pub fn g(&self) -> Vec2 {
        Vec2::new(self.g_x, self.g_y)
    }

    pub fn a(&self) -> Vec2 {
        Vec2::new(self.a_x, self.a_y)
    }
}

/// λ(t): 1 when `util_g ≤ util_a`, otherwise the overestimate penalty.
pub fn penalty(util_g: f64, util_a: f64) -> f64 {
    if util_g <= util_a {
        1.0
    } else {
        OVERESTIMATE_PENALTY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RunId {
    pub group: usize,
    pub env: usize,
    pub run: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub id: RunId,
    pub steps: Vec<StepRecord>,
}

impl RunRecord {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        for step in &self.steps {
            writer.serialize(step)?;
        }
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path, id: RunId) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let steps = reader
            .deserialize()
            .collect::<std::result::Result<Vec<StepRecord>, _>>()?;
        Ok(Self { id, steps })
    }
}

/// Σ_t λ(t)·‖g(t) − a(t)‖ over the whole run, recomputed from positions and
/// utilities rather than trusting the stored columns.
pub fn tracking_error(record: &RunRecord) -> f64 {
    record
        .steps
        .iter()
        .map(|s| penalty(s.util_g, s.util_a) * s.g().distance(s.a()))
        .sum()
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
}

/// Mean and population SD of the tracking errors of one environment's runs.
pub fn aggregate_env(errors: &[f64]) -> Result<Summary> {
    if errors.is_empty() {
        return Err(Error::Contract("aggregating zero runs".into()));
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    Ok(Summary {
        mean,
        sd: var.sqrt(),
    })
}

/// Pools per-environment summaries: the group mean is the mean of means and
/// the group variance adds within-environment and between-environment parts.
pub fn aggregate_group(envs: &[Summary]) -> Result<Summary> {
    if envs.is_empty() {
        return Err(Error::Contract("aggregating zero environments".into()));
    }
    let n = envs.len() as f64;
    let mean = envs.iter().map(|s| s.mean).sum::<f64>() / n;
    let var = envs
        .iter()
        .map(|s| s.sd * s.sd + (s.mean - mean).powi(2))
        .sum::<f64>()
        / n;
    Ok(Summary {
        mean,
        sd: var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(steps: Vec<StepRecord>) -> RunRecord {
        RunRecord {
            id: RunId {
                group: 0,
                env: 0,
                run: 0,
            },
            steps,
        }
    }

    #[test]
    fn perfect_tracking_has_zero_error() {
        let steps = (0..10)
            .map(|t| {
                let p = Vec2::new(t as f64, -1.0);
                StepRecord::new(t, p, 0.5, p, 0.5)
            })
            .collect();
        assert_eq!(tracking_error(&record(steps)), 0.0);
    }

    #[test]
    fn three_four_five_with_and_without_penalty() {
        let under = StepRecord::new(0, Vec2::ZERO, 0.1, Vec2::new(3.0, 4.0), 0.2);
        assert!((tracking_error(&record(vec![under])) - 5.0).abs() < 1e-9);
        let tie = StepRecord::new(0, Vec2::ZERO, 0.2, Vec2::new(3.0, 4.0), 0.2);
        assert!((tracking_error(&record(vec![tie])) - 5.0).abs() < 1e-9);
        let over = StepRecord::new(0, Vec2::ZERO, 0.3, Vec2::new(3.0, 4.0), 0.2);
        assert!((tracking_error(&record(vec![over])) - 7.5).abs() < 1e-9);
    }

    #[test]
    fn env_aggregation_examples() {
        let s = aggregate_env(&[1.0, 2.0, 3.0]).unwrap();
        assert!((s.mean - 2.0).abs() < 1e-9);
        assert!((s.sd - (2.0f64 / 3.0).sqrt()).abs() < 1e-9);
        assert!((s.sd - 0.81650).abs() < 1e-5);
        assert_eq!(aggregate_env(&[5.0, 5.0, 5.0]).unwrap(), Summary { mean: 5.0, sd: 0.0 });
        assert_eq!(aggregate_env(&[7.0]).unwrap(), Summary { mean: 7.0, sd: 0.0 });
        assert!(aggregate_env(&[]).is_err());
    }

    #[test]
    fn group_aggregation_examples() {
        let s = aggregate_group(&[Summary { mean: 2.0, sd: 0.0 }, Summary { mean: 4.0, sd: 0.0 }])
            .unwrap();
        assert!((s.mean - 3.0).abs() < 1e-9 && (s.sd - 1.0).abs() < 1e-9);
        let same = Summary { mean: 3.0, sd: 2.0 };
        let s = aggregate_group(&[same, same]).unwrap();
        assert!((s.mean - 3.0).abs() < 1e-9 && (s.sd - 2.0).abs() < 1e-9);
        let one = Summary { mean: 1.5, sd: 0.25 };
        assert_eq!(aggregate_group(&[one]).unwrap(), one);
        assert!(aggregate_group(&[]).is_err());
    }

    #[test]
    fn run_trace_csv_round_trip() {
        let steps: Vec<StepRecord> = (0..5)
            .map(|t| StepRecord::new(t, Vec2::new(0.1 * t as f64, 1.0 / 3.0), 0.2, Vec2::ZERO, 0.25))
            .collect();
        let rec = record(steps);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.csv");
        rec.write_csv(&path).unwrap();
        let back = RunRecord::read_csv(&path, rec.id).unwrap();
        assert_eq!(back, rec);
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("t,g_x,g_y,util_g,a_x,a_y,util_a,distance,lambda\n"));
    }

    proptest! {
        #[test]
        fn error_nonnegative_and_zero_iff_exact(
            pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0, 0.0f64..1.0, 0.0f64..1.0), 1..30)
        ) {
            let steps: Vec<StepRecord> = pts.iter().enumerate()
                .map(|(t, &(gx, gy, ax, ay, ug, ua))| StepRecord::new(t, Vec2::new(gx, gy), ug, Vec2::new(ax, ay), ua))
                .collect();
            let exact = steps.iter().all(|s| s.g() == s.a());
            let err = tracking_error(&record(steps));
            prop_assert!(err >= 0.0);
            prop_assert_eq!(err == 0.0, exact);
        }

        #[test]
        fn group_variance_decomposes(
            envs in prop::collection::vec((0.0f64..100.0, 0.0f64..10.0), 1..10),
            shift in 0usize..10,
        ) {
            let summaries: Vec<Summary> = envs.iter().map(|&(mean, sd)| Summary { mean, sd }).collect();
            let g = aggregate_group(&summaries).unwrap();
            let n = summaries.len() as f64;
            let between = summaries.iter().map(|s| (s.mean - g.mean).powi(2)).sum::<f64>() / n;
            prop_assert!(g.sd * g.sd >= between * (1.0 - 1e-12) - 1e-12);
            let mut rotated = summaries.clone();
            rotated.rotate_left(shift % summaries.len());
            let r = aggregate_group(&rotated).unwrap();
            prop_assert!((r.mean - g.mean).abs() < 1e-9 && (r.sd - g.sd).abs() < 1e-9);
        }

        #[test]
        fn env_aggregation_is_permutation_invariant(
            errs in prop::collection::vec(0.0f64..1e4, 1..12), shift in 0usize..12,
        ) {
            let a = aggregate_env(&errs).unwrap();
            let mut rotated = errs.clone();
            rotated.rotate_left(shift % errs.len());
            let b = aggregate_env(&rotated).unwrap();
            prop_assert!((a.mean - b.mean).abs() < 1e-9 * a.mean.max(1.0));
            prop_assert!((a.sd - b.sd).abs() < 1e-9 * a.mean.max(1.0));
        }
    }
}
