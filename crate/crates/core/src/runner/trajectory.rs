use std::io::Write;

use serde::Serialize;

use crate::analysis::MonitorStep;
use crate::dynamics::{
    half_step_full_projection, init_with_correlation, propose_into, step_coefficient,
    update_in_place, Environment, Observer,
};
use crate::error::{Error, Result};
use crate::rng::{SimRng, StreamKey};
use crate::schedules::{Schedule, StepRates};
use crate::sphere::{dot, norm, sample_unit, UnitVector};

use super::config::{Init, RunConfig};
use super::experiments::certify_initialization;

/// One logged step: the state at the start of step t and what happened in it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Row {
    pub t: u64,
    pub m: f64,
    pub eta: f64,
    pub sigma: f64,
    pub reward: f64,
    /// <θ*, a_t>.
    pub align: f64,
    /// f(1) - f(m_t); absent for non-monotone links.
    pub regret_m: Option<f64>,
    /// f(1) - f(<θ*, a_t>).
    pub regret_a: f64,
    pub cum_regret_m: Option<f64>,
    pub cum_regret_a: f64,
}

/// Log of one trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryRecord {
    pub run: usize,
    pub rows: Vec<Row>,
    /// First step whose starting correlation reached `stop_at`.
    pub hit_time: Option<u64>,
    /// Steps executed.
    pub steps: u64,
    pub initial_m: f64,
    /// Correlation after the last executed step.
    pub final_m: f64,
    pub max_m: f64,
    pub cum_regret_m: Option<f64>,
    pub cum_regret_a: f64,
    /// Per-step half-step data when `log_half_step` is on.
    #[serde(skip)]
    pub half_steps: Vec<MonitorStep>,
    /// Step at which a composite schedule switched to its learning phase.
    pub switched_at: Option<u64>,
}

pub(crate) struct Streams {
    pub theta_star: StreamKey,
    pub init: StreamKey,
    pub explore: StreamKey,
    pub noise: StreamKey,
}

pub(crate) fn streams(config: &RunConfig, run: usize) -> Streams {
    let root = StreamKey::new(config.seed).child(run as u64);
    Streams {
        theta_star: match config.theta_star_seed {
            Some(s) => StreamKey::new(s).named("theta_star"),
            None => root.named("theta_star"),
        },
        init: root.named("init"),
        explore: root.named("explore"),
        noise: root.named("noise"),
    }
}

pub(crate) fn initial_iterate(
    config: &RunConfig,
    env: &Environment,
    init_rng: &mut SimRng,
    noise_rng: &mut SimRng,
) -> Result<UnitVector> {
    match config.init {
        Init::Random => sample_unit(config.d, init_rng),
        Init::Correlation(m1) => init_with_correlation(&env.theta_star, m1, init_rng),
        Init::Certified(n) => certify_initialization(env, n, init_rng, noise_rng),
    }
}

/// Runs trajectory `run` of `config`. Bitwise reproducible from
/// (seed, run) whatever thread executes it.
pub fn run_trajectory(config: &RunConfig, run: usize) -> Result<TrajectoryRecord> {
    config.validate()?;
    let link = config.resolve_link()?;
    let keys = streams(config, run);
    let theta_star = sample_unit(config.d, &mut keys.theta_star.rng())?;
    let env = Environment::new(theta_star, link.clone(), config.noise()?)?;
    let mut schedule = Schedule::new(config.schedule_for(&link), &link)?;
    let mut init_rng = keys.init.rng();
    let mut explore_rng = keys.explore.rng();
    let mut noise_rng = keys.noise.rng();
    let theta0 = initial_iterate(config, &env, &mut init_rng, &mut noise_rng)?;
    run_from(
        config,
        run,
        &env,
        &mut schedule,
        theta0,
        &mut explore_rng,
        &mut noise_rng,
    )
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn run_from(
    config: &RunConfig,
    run: usize,
    env: &Environment,
    schedule: &mut Schedule,
    theta0: UnitVector,
    explore_rng: &mut SimRng,
    noise_rng: &mut SimRng,
) -> Result<TrajectoryRecord> {
    let d = config.d;
    let link = &env.link;
    let obs: Observer<'_> = env.observer();
    let star = env.theta_star.coords();
    let monotone = !link.is_counterexample();
    let f1 = link.f(1.0);
    let c_se = crate::analysis::ConcentrationParams::default().c_se;
    let needs_m = schedule.needs_observation();

    let mut theta = theta0.into_inner();
    let (mut z, mut a) = (vec![0.0; d], vec![0.0; d]);
    let mut m = obs.correlation(&theta)?;
    let initial_m = m;
    let mut max_m = m;
    let (mut cum_m, mut cum_a) = (0.0f64, 0.0f64);
    let mut rows = Vec::new();
    let mut half_steps = Vec::new();
    if config.log_half_step {
        half_steps.reserve(config.horizon.min(1 << 24) as usize);
    }
    let mut hit_time = None;
    let mut steps = 0u64;

    for t in 1..=config.horizon {
        if let Some(thr) = config.stop_at {
            if m >= thr {
                hit_time = Some(t);
                break;
            }
        }
        let step = |e: Error| e.at_step(t);
        let rates: StepRates = schedule.rates(t, needs_m.then_some(m)).map_err(step)?;
        if config.monitor {
            schedule
                .check_preconditions(&rates, link, c_se)
                .map_err(step)?;
        }
        let (eta, sigma) = (rates.eta, rates.sigma);
        if !(0.0..=1.0).contains(&sigma) || !(eta >= 0.0) {
            return Err(step(Error::Numerical(format!(
                "invalid rates η = {eta}, σ = {sigma}"
            ))));
        }
        propose_into(&theta, sigma, explore_rng, &mut z, &mut a).map_err(step)?;
        let align = dot(star, &a);
        let reward = env.pull_unchecked(&a, noise_rng);
        let coef = step_coefficient(link, sigma, reward, eta);
        let m_half = m - coef * dot(star, &z);
        let full = config
            .verify_projection
            .then(|| half_step_full_projection(&theta, &a, reward, eta, link));
        update_in_place(&mut theta, &z, coef).map_err(step)?;
        if let Some(full) = full {
            let n = norm(&full);
            let gap = full
                .iter()
                .zip(&theta)
                .map(|(f, t)| (f / n - t).abs())
                .fold(0.0, f64::max);
            if gap > 1e-12 {
                return Err(step(Error::Numerical(format!(
                    "projection form disagrees with tangent form by {gap:e}"
                ))));
            }
        }

        let regret_a = f1 - link.f(align);
        cum_a += regret_a;
        let regret_m = monotone.then(|| f1 - link.f(m));
        if let Some(r) = regret_m {
            cum_m += r;
        }
        if config.log_half_step {
            half_steps.push(MonitorStep {
                m,
                m_half,
                eta,
                sigma,
            });
        }
        let last = t == config.horizon;
        if t == 1 || last || t % config.record_every == 0 {
            rows.push(Row {
                t,
                m,
                eta,
                sigma,
                reward,
                align,
                regret_m,
                regret_a,
                cum_regret_m: monotone.then_some(cum_m),
                cum_regret_a: cum_a,
            });
        }
        steps = t;
        m = obs.correlation(&theta).map_err(step)?;
        max_m = max_m.max(m);
    }
    if hit_time.is_none() {
        if let Some(thr) = config.stop_at {
            if m >= thr {
                hit_time = Some(steps + 1);
            }
        }
    }
    Ok(TrajectoryRecord {
        run,
        rows,
        hit_time,
        steps,
        initial_m,
        final_m: m,
        max_m,
        cum_regret_m: monotone.then_some(cum_m),
        cum_regret_a: cum_a,
        half_steps,
        switched_at: schedule.switched_at(),
    })
}

/// CSV header of trajectory output.
pub const CSV_HEADER: &str =
    "run,t,m,eta,sigma,reward,align,regret_m,regret_a,cum_regret_m,cum_regret_a";

fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f).unwrap_or_default()
}

/// Writes the header and every row of `records`, in order, with LF endings
/// and 17 significant digits.
pub fn write_csv<W: Write>(records: &[TrajectoryRecord], mut w: W) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for rec in records {
        for r in &rec.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                rec.run,
                r.t,
                fmt_f(r.m),
                fmt_f(r.eta),
                fmt_f(r.sigma),
                fmt_f(r.reward),
                fmt_f(r.align),
                fmt_opt(r.regret_m),
                fmt_f(r.regret_a),
                fmt_opt(r.cum_regret_m),
                fmt_f(r.cum_regret_a),
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(json: &str) -> RunConfig {
        RunConfig::from_json(json).unwrap()
    }

    #[test]
    fn fixed_point_single_row() {
        let c = cfg(
            r#"{"d": 5, "link": "identity", "schedule.kind": "constant", "schedule.eta": 0.1,
                       "schedule.sigma": 0.5, "noise_std": 0, "horizon": 1, "init.m1": 1.0}"#,
        );
        let rec = run_trajectory(&c, 0).unwrap();
        assert_eq!(rec.rows.len(), 1);
        let r = rec.rows[0];
        assert_eq!(r.t, 1);
        assert!((r.m - 1.0).abs() < 1e-12);
        assert!(r.regret_m.unwrap().abs() < 1e-12);
        assert!((rec.final_m - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_shape() {
        let c = cfg(
            r#"{"d": 6, "link": "counterexample", "schedule.kind": "counterexample", "horizon": 3}"#,
        );
        let rec = run_trajectory(&c, 2).unwrap();
        let mut buf = Vec::new();
        write_csv(&[rec], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 4);
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields.len(), 11);
        assert_eq!(fields[0], "2");
        assert_eq!(fields[7], "");
        assert_eq!(fields[9], "");
        assert!(!text.contains('\r'));
    }

    #[test]
    fn stop_at_reports_first_hit() {
        let c = cfg(
            r#"{"d": 5, "link": "identity", "schedule.kind": "pure_exploration",
                       "init.m1": 0.95, "stop_at": 0.9, "horizon": 10}"#,
        );
        let rec = run_trajectory(&c, 0).unwrap();
        assert_eq!(rec.hit_time, Some(1));
        assert_eq!(rec.steps, 0);
    }

    #[test]
    fn thinning_keeps_first_and_last() {
        let c = cfg(r#"{"d": 5, "link": "cubic", "horizon": 25, "record_every": 10}"#);
        let rec = run_trajectory(&c, 0).unwrap();
        let ts: Vec<u64> = rec.rows.iter().map(|r| r.t).collect();
        assert_eq!(ts, vec![1, 10, 20, 25]);
    }
}
