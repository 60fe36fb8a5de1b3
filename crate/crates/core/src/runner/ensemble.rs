use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::MeanVar;

use super::config::RunConfig;
use super::trajectory::{run_trajectory, TrajectoryRecord};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "RBL_THREADS";

/// Worker count from `RBL_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!(
                "{THREADS_ENV} = `{v}` is not a positive integer"
            ))),
        },
        Err(_) => Ok(None),
    }
}

/// Sizes the global worker pool from `RBL_THREADS`. Only the first call in a
/// process has any effect.
pub fn init_thread_pool() -> Result<()> {
    if let Some(n) = thread_cap()? {
        // Fails only if the pool was already built, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(())
}

/// Runs trajectories 0..n_runs in parallel. Results are in run order and do
/// not depend on the worker count.
pub fn run_batch(config: &RunConfig, n_runs: usize) -> Vec<Result<TrajectoryRecord>> {
    (0..n_runs)
        .into_par_iter()
        .map(|run| run_trajectory(config, run))
        .collect()
}

/// Cross-run statistics of the correlation path.
#[derive(Debug, Clone, Serialize)]
pub struct EnsembleSummary {
    pub t: Vec<u64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Runs contributing at each logged step.
    pub count: Vec<usize>,
    /// Final correlation of each completed run, in run order.
    pub final_m: Vec<f64>,
    pub hit_times: Vec<Option<u64>>,
    /// (run, message) of runs that errored.
    pub failures: Vec<(usize, String)>,
}

impl EnsembleSummary {
    /// Aggregates by logged step. A run that stopped early keeps its last
    /// correlation for the rest of the grid.
    pub fn from_records(results: &[Result<TrajectoryRecord>]) -> Self {
        let mut failures = Vec::new();
        let mut ok = Vec::new();
        for (i, r) in results.iter().enumerate() {
            match r {
                Ok(rec) => ok.push(rec),
                Err(e) => failures.push((i, e.to_string())),
            }
        }
        let t: Vec<u64> = ok
            .iter()
            .max_by_key(|r| r.rows.len())
            .map(|r| r.rows.iter().map(|row| row.t).collect())
            .unwrap_or_default();
        let mut acc = vec![MeanVar::new(); t.len()];
        for rec in &ok {
            for (j, a) in acc.iter_mut().enumerate() {
                let m = rec.rows.get(j).map_or(rec.final_m, |row| row.m);
                a.push(m);
            }
        }
        Self {
            t,
            mean: acc.iter().map(MeanVar::mean).collect(),
            std: acc
                .iter()
                .map(|a| if a.count() > 1 { a.std_dev() } else { 0.0 })
                .collect(),
            count: acc.iter().map(|a| a.count() as usize).collect(),
            final_m: ok.iter().map(|r| r.final_m).collect(),
            hit_times: ok.iter().map(|r| r.hit_time).collect(),
            failures,
        }
    }

    pub fn n_runs(&self) -> usize {
        self.final_m.len()
    }

    /// Mean of the final correlations.
    pub fn mean_final(&self) -> f64 {
        self.final_m.iter().copied().collect::<MeanVar>().mean()
    }

    /// Writes `t,mean,std,count` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,mean,std,count")?;
        for j in 0..self.t.len() {
            writeln!(
                w,
                "{},{:.16e},{:.16e},{}",
                self.t[j], self.mean[j], self.std[j], self.count[j]
            )?;
        }
        Ok(())
    }
}

/// Runs `n_runs` trajectories and aggregates them. Row thinning comes from
/// `record_every`, which bounds memory for long horizons.
pub fn run_ensemble(config: &RunConfig, n_runs: usize) -> Result<EnsembleSummary> {
    if n_runs < 1 {
        return Err(Error::Config("n_runs must be at least 1".into()));
    }
    config.validate()?;
    Ok(EnsembleSummary::from_records(&run_batch(config, n_runs)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_run_has_zero_spread() {
        let c = RunConfig::from_json(r#"{"d": 8, "horizon": 50}"#).unwrap();
        let s = run_ensemble(&c, 1).unwrap();
        let rec = run_trajectory(&c, 0).unwrap();
        assert_eq!(s.t.len(), rec.rows.len());
        for (row, (mean, std)) in rec.rows.iter().zip(s.mean.iter().zip(&s.std)) {
            assert_eq!(row.m, *mean);
            assert_eq!(*std, 0.0);
        }
        assert_eq!(s.final_m, vec![rec.final_m]);
    }

    #[test]
    fn failures_are_collected() {
        let c = RunConfig::from_json(r#"{"d": 8, "horizon": 5}"#).unwrap();
        let mut results = run_batch(&c, 2);
        results.push(Err(Error::Numerical("boom".into())));
        let s = EnsembleSummary::from_records(&results);
        assert_eq!(s.n_runs(), 2);
        assert_eq!(s.failures.len(), 1);
        assert_eq!(s.failures[0].0, 2);
        assert!(s.mean.iter().all(|m| (-1.0..=1.0).contains(m)));
    }
}
