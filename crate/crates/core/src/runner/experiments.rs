use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::analysis::{
    burnin_integral, martingale_monitor, ConcentrationParams, DriftProxy, MonitorReport,
};
use crate::dynamics::Environment;
use crate::error::{Error, Result};
use crate::linkfn::LinkFunction;
use crate::rng::SimRng;
use crate::schedules::ScheduleKind;
use crate::sphere::{sample_unit, UnitVector};
use crate::stats::{fit_line, median, LineFit, MeanVar};

use super::config::{Init, RunConfig};
use super::trajectory::run_trajectory;

/// Step budget after which a hitting-time run reports a timeout.
pub const DEFAULT_MAX_T: u64 = 10_000_000;

/// Outcome of a hitting-time run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HitResult {
    /// First t with m_t at or above the target.
    Hit(u64),
    /// Target not reached within this many steps.
    Timeout(u64),
}

impl HitResult {
    pub fn time(self) -> Option<u64> {
        match self {
            Self::Hit(t) => Some(t),
            Self::Timeout(_) => None,
        }
    }

    pub fn is_timeout(self) -> bool {
        matches!(self, Self::Timeout(_))
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(Error::Range {
            name: "epsilon",
            value: epsilon,
            range: "(0, 1)",
        })
    }
}

fn hitting_config(config: &RunConfig, epsilon: f64, max_t: u64) -> RunConfig {
    let mut c = config.clone();
    c.stop_at = Some(1.0 - epsilon);
    c.horizon = max_t.max(1);
    c.record_every = c.horizon;
    c.log_half_step = false;
    if c.schedule.epsilon.is_none() {
        c.schedule.epsilon = Some(epsilon);
    }
    c
}

/// First t with m_t >= 1 - ε on trajectory `run`, or a timeout after `max_t`
/// steps.
pub fn sample_complexity(
    config: &RunConfig,
    run: usize,
    epsilon: f64,
    max_t: u64,
) -> Result<HitResult> {
    check_epsilon(epsilon)?;
    let rec = run_trajectory(&hitting_config(config, epsilon, max_t), run)?;
    Ok(match rec.hit_time {
        Some(t) if t <= max_t => HitResult::Hit(t),
        _ => HitResult::Timeout(max_t),
    })
}

/// Hitting times of several runs.
#[derive(Debug, Clone, Serialize)]
pub struct HitSummary {
    pub results: Vec<HitResult>,
    /// Median over the runs that hit; `None` if none did.
    pub median: Option<f64>,
    pub timeouts: usize,
}

impl HitSummary {
    pub fn from_results(results: Vec<HitResult>) -> Self {
        let mut times: Vec<f64> = results
            .iter()
            .filter_map(|r| r.time())
            .map(|t| t as f64)
            .collect();
        let timeouts = results.len() - times.len();
        Self {
            median: median(&mut times),
            timeouts,
            results,
        }
    }
}

/// Hitting times of runs 0..n_runs in parallel.
pub fn hitting_times(
    config: &RunConfig,
    epsilon: f64,
    max_t: u64,
    n_runs: usize,
) -> Result<HitSummary> {
    check_epsilon(epsilon)?;
    let c = hitting_config(config, epsilon, max_t);
    c.validate()?;
    let results: Result<Vec<HitResult>> = (0..n_runs)
        .into_par_iter()
        .map(|run| sample_complexity(&c, run, epsilon, max_t))
        .collect();
    Ok(HitSummary::from_results(results?))
}

/// What a scaling sweep measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepTask {
    /// Time to m >= 1 - ε under the pure-exploration schedule.
    PureExploration,
    /// Time to m >= 1 - γ0/4 under the burn-in schedule, from m1 = 1/√d.
    Burnin,
}

impl std::str::FromStr for SweepTask {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pure_exploration" => Ok(Self::PureExploration),
            "burnin" => Ok(Self::Burnin),
            _ => Err(Error::Config(format!(
                "unknown sweep task `{s}` (pure_exploration, burnin)"
            ))),
        }
    }
}

/// The run configuration used for one sweep point, and its target ε.
pub fn sweep_config(base: &RunConfig, task: SweepTask, d: usize) -> Result<(RunConfig, f64)> {
    let mut c = base.clone();
    c.d = d;
    let link = c.resolve_link()?;
    match task {
        SweepTask::PureExploration => {
            if !matches!(
                c.schedule.kind,
                ScheduleKind::PureExploration | ScheduleKind::PureExplorationEpochs
            ) {
                c.schedule.kind = ScheduleKind::PureExploration;
            }
            c.schedule.then = None;
            Ok((c.clone(), c.schedule.epsilon_or_default()))
        }
        SweepTask::Burnin => {
            c.schedule.kind = if link.convex_on_unit {
                ScheduleKind::BurninConvexEpochs
            } else {
                ScheduleKind::BurninGlb
            };
            c.schedule.then = None;
            if c.init == Init::Random {
                c.init = Init::Correlation(1.0 / (d as f64).sqrt());
            }
            Ok((c, link.gamma0 / 4.0))
        }
    }
}

/// Hitting times at one dimension.
#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub d: usize,
    pub epsilon: f64,
    pub hits: HitSummary,
}

/// Hitting-time summaries for each dimension, in input order.
pub fn sweep_points(
    base: &RunConfig,
    task: SweepTask,
    dims: &[usize],
    runs_per_dim: usize,
    max_t: u64,
) -> Result<Vec<SweepPoint>> {
    dims.iter()
        .map(|&d| {
            let (c, eps) = sweep_config(base, task, d)?;
            Ok(SweepPoint {
                d,
                epsilon: eps,
                hits: hitting_times(&c, eps, max_t, runs_per_dim)?,
            })
        })
        .collect()
}

/// Log-log fit of median hitting time against d.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingFit {
    pub points: Vec<SweepPoint>,
    pub fit: LineFit,
    /// 95% interval on the slope from the t distribution.
    pub slope_ci: (f64, f64),
    /// Dimensions left out because every run timed out.
    pub excluded: Vec<usize>,
}

/// Least-squares slope of log median hitting time on log d.
pub fn fit_scaling(points: Vec<SweepPoint>) -> Result<ScalingFit> {
    let (mut xs, mut ys, mut excluded) = (Vec::new(), Vec::new(), Vec::new());
    for p in &points {
        match p.hits.median {
            Some(m) if m > 0.0 => {
                xs.push((p.d as f64).ln());
                ys.push(m.ln());
            }
            _ => excluded.push(p.d),
        }
    }
    let fit = fit_line(&xs, &ys).ok_or_else(|| {
        Error::Numerical(format!(
            "need two dimensions with hits to fit a slope, have {}",
            xs.len()
        ))
    })?;
    let slope_ci = if xs.len() > 2 && fit.slope_se.is_finite() {
        let t = StudentsT::new(0.0, 1.0, (xs.len() - 2) as f64)
            .map_err(|e| Error::Numerical(e.to_string()))?
            .inverse_cdf(0.975);
        (fit.slope - t * fit.slope_se, fit.slope + t * fit.slope_se)
    } else {
        (f64::NEG_INFINITY, f64::INFINITY)
    };
    Ok(ScalingFit {
        points,
        fit,
        slope_ci,
        excluded,
    })
}

/// Runs the sweep over `dims` (at least three, each at least 4) and fits the
/// log-log slope.
pub fn scaling_sweep(
    base: &RunConfig,
    dims: &[usize],
    task: SweepTask,
    runs_per_dim: usize,
    max_t: u64,
) -> Result<ScalingFit> {
    if dims.len() < 3 {
        return Err(Error::Config(format!(
            "scaling sweep needs >= 3 entries in dims, got {}",
            dims.len()
        )));
    }
    if let Some(&d) = dims.iter().find(|&&d| d < 4) {
        return Err(Error::Config(format!(
            "scaling sweep needs every d >= 4, got {d}"
        )));
    }
    if runs_per_dim < 1 {
        return Err(Error::Config("runs_per_dim must be at least 1".into()));
    }
    fit_scaling(sweep_points(base, task, dims, runs_per_dim, max_t)?)
}

/// Median hitting times at fixed d for each ε.
pub fn epsilon_sweep(
    base: &RunConfig,
    epsilons: &[f64],
    runs: usize,
    max_t: u64,
) -> Result<Vec<(f64, HitSummary)>> {
    epsilons
        .iter()
        .map(|&eps| {
            let mut c = base.clone();
            c.schedule.epsilon = Some(eps);
            Ok((eps, hitting_times(&c, eps, max_t, runs)?))
        })
        .collect()
}

/// Parameters of the non-monotone-link experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterexampleParams {
    /// Link under test; the identity link serves as a control.
    pub link: String,
    pub d: usize,
    pub horizon: u64,
    pub eta: f64,
    pub sigma: f64,
    /// Initial correlation; every run is projected onto it.
    pub m1: f64,
    pub n_runs: usize,
    pub seed: u64,
    pub noise_std: f64,
    /// Failure probability entering the step-size cap c/ln(T/δ).
    pub delta: f64,
    /// Constant c of the step-size cap.
    pub c: f64,
}

/// Escape level.
pub const ESCAPE_LEVEL: f64 = 0.2;
/// Largest admissible initial correlation.
pub const M1_CAP: f64 = 0.1;
/// Largest admissible exploration.
pub const SIGMA_CAP: f64 = 0.1;
/// Default constant in the step-size cap.
pub const DEFAULT_STEP_CAP_C: f64 = 0.05;

impl Default for CounterexampleParams {
    fn default() -> Self {
        Self {
            link: "counterexample".into(),
            d: 20,
            horizon: 100_000,
            eta: 0.001,
            sigma: 0.1,
            m1: 0.05,
            n_runs: 100,
            seed: 0,
            noise_std: 1.0,
            delta: 0.01,
            c: DEFAULT_STEP_CAP_C,
        }
    }
}

impl CounterexampleParams {
    /// c / ln(T/δ).
    pub fn step_cap(&self) -> f64 {
        self.c / (self.horizon as f64 / self.delta).ln()
    }

    /// Rejects parameters outside the regime where escape is ruled out.
    pub fn check_hypotheses(&self) -> Result<()> {
        if self.m1 > M1_CAP {
            return Err(Error::Hypothesis(format!(
                "m1 = {} exceeds {M1_CAP}",
                self.m1
            )));
        }
        if !(0.0..=SIGMA_CAP).contains(&self.sigma) {
            return Err(Error::Hypothesis(format!(
                "sigma = {} outside [0, {SIGMA_CAP}]",
                self.sigma
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Hypothesis(format!(
                "delta = {} outside (0, 1)",
                self.delta
            )));
        }
        let cap = self.step_cap();
        if !(self.eta >= 0.0 && self.eta <= cap) {
            return Err(Error::Hypothesis(format!(
                "eta = {} outside [0, c/ln(T/delta)] = [0, {cap}]",
                self.eta
            )));
        }
        Ok(())
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        let mut c = RunConfig::from_json(
            &serde_json::json!({
                "d": self.d,
                "link": self.link,
                "schedule.kind": "counterexample",
                "schedule.eta": self.eta,
                "schedule.sigma": self.sigma,
                "noise_std": self.noise_std,
                "horizon": self.horizon,
                "seed": self.seed,
                "init.m1": self.m1,
            })
            .to_string(),
        )?;
        c.n_runs = self.n_runs.max(1);
        c.record_every = c.horizon;
        c.validate()?;
        Ok(c)
    }
}

/// One histogram bin [lo, hi).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Counts of `xs` in `n_bins` equal bins on [lo, hi]; the ends absorb
/// anything outside.
pub fn histogram(xs: &[f64], lo: f64, hi: f64, n_bins: usize) -> Vec<Bin> {
    let w = (hi - lo) / n_bins as f64;
    let mut bins: Vec<Bin> = (0..n_bins)
        .map(|i| Bin {
            lo: lo + i as f64 * w,
            hi: lo + (i + 1) as f64 * w,
            count: 0,
        })
        .collect();
    for &x in xs {
        let i = (((x - lo) / w).floor().max(0.0) as usize).min(n_bins - 1);
        bins[i].count += 1;
    }
    bins
}

/// Result of the escape experiment.
#[derive(Debug, Clone, Serialize)]
pub struct CounterexampleResult {
    /// Share of runs with max_t m_t <= 0.2.
    pub fraction: f64,
    /// max_t m_t of each run, in run order.
    pub max_m: Vec<f64>,
    pub histogram: Vec<Bin>,
    pub final_m_mean: f64,
    /// Mean action regret per step.
    pub regret_rate: f64,
}

/// Runs the escape experiment. Hypotheses are checked for the
/// non-monotone link only; a control link runs with the same numbers.
pub fn counterexample_experiment(params: &CounterexampleParams) -> Result<CounterexampleResult> {
    let link = LinkFunction::resolve(&params.link)?;
    if link.is_counterexample() {
        params.check_hypotheses()?;
    }
    let config = params.run_config()?;
    let records: Result<Vec<_>> = (0..config.n_runs)
        .into_par_iter()
        .map(|run| run_trajectory(&config, run))
        .collect();
    let records = records?;
    let max_m: Vec<f64> = records.iter().map(|r| r.max_m).collect();
    let escaped_not = max_m.iter().filter(|&&m| m <= ESCAPE_LEVEL).count();
    let steps: f64 = records.iter().map(|r| r.steps as f64).sum();
    Ok(CounterexampleResult {
        fraction: escaped_not as f64 / max_m.len() as f64,
        histogram: histogram(&max_m, -0.2, 1.0, 24),
        final_m_mean: records
            .iter()
            .map(|r| r.final_m)
            .collect::<MeanVar>()
            .mean(),
        regret_rate: records.iter().map(|r| r.cum_regret_a).sum::<f64>() / steps.max(1.0),
        max_m,
    })
}

/// Draws θ uniformly, pulls ⌊n/2⌋ rewards at θ and at -θ, and keeps the
/// direction with the larger sample mean.
pub fn certify_initialization(
    env: &Environment,
    n_samples: usize,
    init_rng: &mut SimRng,
    noise_rng: &mut SimRng,
) -> Result<UnitVector> {
    if n_samples < 2 {
        return Err(Error::Range {
            name: "n_samples",
            value: n_samples as f64,
            range: "[2, inf)",
        });
    }
    let theta = sample_unit(env.dim(), init_rng)?;
    let flipped = theta.neg();
    let half = n_samples / 2;
    let (mut plus, mut minus) = (0.0, 0.0);
    for _ in 0..half {
        plus += env.pull_unchecked(theta.coords(), noise_rng);
        minus += env.pull_unchecked(flipped.coords(), noise_rng);
    }
    Ok(if plus >= minus { theta } else { flipped })
}

/// Regret at one checkpoint horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegretRow {
    pub t: u64,
    /// Median over runs of Σ_{s<=t} (f(1) - f(m_s)); absent for non-monotone links.
    pub regret_m: Option<f64>,
    /// Median over runs of Σ_{s<=t} (f(1) - f(<θ*, a_s>)).
    pub regret_a: f64,
    /// d √t.
    pub d_sqrt_t: f64,
    /// min{t, d² ∫ m/f'(m)² dm + d √t}; absent when the integral diverges.
    pub burnin_reference: Option<f64>,
}

/// Cumulative regret at checkpoint horizons, median over runs 0..n_runs.
pub fn regret_report(
    config: &RunConfig,
    checkpoints: &[u64],
    n_runs: usize,
) -> Result<Vec<RegretRow>> {
    let s = &config.schedule;
    let admissible = s.kind == ScheduleKind::RegretMin
        || (s.kind.is_burnin() && s.then.is_some())
        || s.kind == ScheduleKind::Counterexample;
    if !admissible {
        return Err(Error::Config(format!(
            "regret report needs regret_min, a burn-in schedule with `then`, or counterexample; got `{}`",
            s.kind
        )));
    }
    let mut cps = checkpoints.to_vec();
    cps.sort_unstable();
    cps.dedup();
    let Some(&last) = cps.last() else {
        return Err(Error::Config("no regret checkpoints".into()));
    };
    if cps[0] == 0 {
        return Err(Error::Config("regret checkpoints start at 1".into()));
    }
    let link = config.resolve_link()?;
    let mut c = config.clone();
    c.horizon = last;
    c.stop_at = None;
    c.log_half_step = false;
    c.record_every = cps.iter().fold(0, |g, &t| gcd(g, t));
    c.validate()?;
    let records: Result<Vec<_>> = (0..n_runs.max(1))
        .into_par_iter()
        .map(|run| run_trajectory(&c, run))
        .collect();
    let records = records?;
    let integral = burnin_integral(&link, c.d, link.gamma0, None, None).ok();
    let df = c.d as f64;
    Ok(cps
        .iter()
        .map(|&t| {
            let rows: Vec<_> = records
                .iter()
                .map(|r| {
                    r.rows
                        .iter()
                        .find(|row| row.t == t)
                        .copied()
                        .expect("checkpoint row is logged")
                })
                .collect();
            let mut ra: Vec<f64> = rows.iter().map(|r| r.cum_regret_a).collect();
            let mut rm: Vec<f64> = rows.iter().filter_map(|r| r.cum_regret_m).collect();
            let tf = t as f64;
            let d_sqrt_t = df * tf.sqrt();
            RegretRow {
                t,
                regret_m: median(&mut rm),
                regret_a: median(&mut ra).unwrap_or(f64::NAN),
                d_sqrt_t,
                burnin_reference: integral.map(|b| tf.min(b.scaled + d_sqrt_t)),
            }
        })
        .collect())
}

/// Envelope-crossing statistics over an ensemble.
#[derive(Debug, Clone, Serialize)]
pub struct MonitorSummary {
    pub reports: Vec<MonitorReport>,
    /// Share of runs whose |S_t| ever left the envelope.
    pub crossing_rate: f64,
    /// Largest |S_t| / envelope over all runs and steps.
    pub max_ratio: f64,
}

/// Runs trajectories 0..n_runs with half-step logging and passes each
/// through the martingale monitor. Only the reports are kept.
pub fn monitor_ensemble(
    config: &RunConfig,
    n_runs: usize,
    params: &ConcentrationParams,
    proxy: &DriftProxy,
) -> Result<MonitorSummary> {
    let mut c = config.clone();
    c.log_half_step = true;
    c.record_every = c.horizon;
    c.validate()?;
    let link = c.resolve_link()?;
    let reports: Result<Vec<MonitorReport>> = (0..n_runs.max(1))
        .into_par_iter()
        .map(|run| {
            let rec = run_trajectory(&c, run)?;
            martingale_monitor(&rec.half_steps, &link, c.d, params, proxy)
        })
        .collect();
    let reports = reports?;
    let crossed = reports.iter().filter(|r| r.ever_violated).count();
    Ok(MonitorSummary {
        crossing_rate: crossed as f64 / reports.len() as f64,
        max_ratio: reports.iter().map(|r| r.max_ratio).fold(0.0, f64::max),
        reports,
    })
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::NoiseModel;
    use crate::rng::StreamKey;

    fn cfg(json: &str) -> RunConfig {
        RunConfig::from_json(json).unwrap()
    }

    #[test]
    fn already_above_threshold_hits_at_one() {
        let c = cfg(
            r#"{"d": 10, "link": "identity", "schedule.kind": "pure_exploration", "init.m1": 0.95}"#,
        );
        assert_eq!(
            sample_complexity(&c, 0, 0.1, 100).unwrap(),
            HitResult::Hit(1)
        );
    }

    #[test]
    fn timeout_is_reported() {
        let c = cfg(
            r#"{"d": 10, "link": "identity", "schedule.kind": "pure_exploration", "init.m1": 0.0}"#,
        );
        assert_eq!(
            sample_complexity(&c, 0, 0.1, 10).unwrap(),
            HitResult::Timeout(10)
        );
        assert!(sample_complexity(&c, 0, 1.5, 10).is_err());
    }

    #[test]
    fn sweep_needs_three_dims() {
        let c = cfg(r#"{"link": "identity"}"#);
        let err = scaling_sweep(&c, &[10], SweepTask::PureExploration, 1, 10).unwrap_err();
        assert!(err.to_string().contains(">= 3 entries"));
        assert!(scaling_sweep(&c, &[3, 5, 6], SweepTask::PureExploration, 1, 10).is_err());
    }

    #[test]
    fn frozen_dynamics_never_escape() {
        let p = CounterexampleParams {
            eta: 0.0,
            horizon: 200,
            n_runs: 5,
            ..Default::default()
        };
        let r = counterexample_experiment(&p).unwrap();
        assert_eq!(r.fraction, 1.0);
        for m in &r.max_m {
            assert!((m - 0.05).abs() < 1e-12);
        }
        assert_eq!(r.histogram.iter().map(|b| b.count).sum::<usize>(), 5);
    }

    #[test]
    fn hypotheses_are_enforced() {
        let base = CounterexampleParams::default();
        assert!(base.check_hypotheses().is_ok());
        for bad in [
            CounterexampleParams {
                m1: 0.3,
                ..base.clone()
            },
            CounterexampleParams {
                sigma: 0.5,
                ..base.clone()
            },
            CounterexampleParams {
                eta: 0.1,
                ..base.clone()
            },
        ] {
            assert!(matches!(
                counterexample_experiment(&bad),
                Err(Error::Hypothesis(_))
            ));
        }
    }

    #[test]
    fn noiseless_certification_picks_the_positive_side() {
        let star = UnitVector::basis(6, 0).unwrap();
        let env = Environment::new(
            star.clone(),
            LinkFunction::identity(),
            NoiseModel::gaussian(0.0).unwrap(),
        )
        .unwrap();
        let key = StreamKey::new(11);
        let (mut a, mut b) = (key.named("a").rng(), key.named("b").rng());
        for _ in 0..200 {
            let th = certify_initialization(&env, 2, &mut a, &mut b).unwrap();
            assert!(th.dot(&star) >= 0.0);
        }
        assert!(certify_initialization(&env, 1, &mut a, &mut b).is_err());
    }

    #[test]
    fn single_step_regret() {
        let c = cfg(
            r#"{"d": 6, "link": "identity", "schedule.kind": "regret_min", "init.m1": 0.3, "noise_std": 0}"#,
        );
        let rows = regret_report(&c, &[1], 1).unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].regret_m.unwrap() - 0.7).abs() < 1e-12);
        assert!((rows[0].d_sqrt_t - 6.0).abs() < 1e-15);
    }

    #[test]
    fn histogram_counts_everything() {
        let h = histogram(&[-5.0, 0.0, 0.49, 0.5, 9.0], 0.0, 1.0, 2);
        assert_eq!(h[0].count, 3);
        assert_eq!(h[1].count, 2);
    }
}
