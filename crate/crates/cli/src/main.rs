use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rbl_core::runner::{
    counterexample_experiment, epsilon_sweep, fit_scaling, init_thread_pool, run_batch,
    sweep_points, verify_suite, write_csv, CounterexampleParams, EnsembleSummary, HitResult,
    HitSummary, RunConfig, SuiteSize, SweepTask, DEFAULT_MAX_T,
};
use rbl_core::Error;

/// Interactive SGD on the sphere: simulations, sweeps and numerical checks.
#[derive(Parser)]
#[command(name = "rbl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trajectory or an ensemble and write the per-step CSV.
    Run(RunArgs),
    /// Median hitting times across dimensions or target accuracies.
    Sweep(SweepArgs),
    /// Run the numerical oracle suite and print one verdict per check.
    Verify(VerifyArgs),
    /// Escape experiment for the non-monotone link.
    Counterexample(CounterexampleArgs),
    /// Ensemble mean and spread of m_t for the cubic link with a latched σ.
    Fig1(Fig1Args),
}

/// Options mirroring configuration keys. Later sources win:
/// defaults, then `--config`, then these flags, then `--set` in order.
#[derive(Args, Default)]
struct ConfigArgs {
    /// JSON configuration file (flat dotted keys or nested objects).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override any key, e.g. `--set schedule.C=8`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    d: Option<String>,
    /// Catalog id or path to a knot file.
    #[arg(long)]
    link: Option<String>,
    /// Schedule kind.
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    /// Small schedule constant c.
    #[arg(long = "c-small")]
    c_small: Option<String>,
    /// Large schedule constant C.
    #[arg(long = "c-big")]
    c_big: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    noise: Option<String>,
    #[arg(long = "noise-std")]
    noise_std: Option<String>,
    #[arg(long)]
    horizon: Option<String>,
    #[arg(long = "n-runs")]
    n_runs: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Draw θ* from this seed for every run.
    #[arg(long = "theta-star-seed")]
    theta_star_seed: Option<String>,
    /// Initial correlation with θ*.
    #[arg(long)]
    m1: Option<String>,
    #[arg(long = "stop-at")]
    stop_at: Option<String>,
    #[arg(long = "record-every")]
    record_every: Option<String>,
    /// Check the concentration preconditions at every step.
    #[arg(long)]
    monitor: bool,
    /// Output path; stdout if absent.
    #[arg(long)]
    out: Option<String>,
}

impl ConfigArgs {
    fn build(&self, base: RunConfig) -> Result<RunConfig, Error> {
        let mut c = base;
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            c.merge_json(&text)?;
        }
        let flags = [
            ("d", &self.d),
            ("link", &self.link),
            ("schedule.kind", &self.schedule),
            ("schedule.eta", &self.eta),
            ("schedule.sigma", &self.sigma),
            ("schedule.c", &self.c_small),
            ("schedule.C", &self.c_big),
            ("schedule.delta", &self.delta),
            ("schedule.epsilon", &self.epsilon),
            ("noise", &self.noise),
            ("noise_std", &self.noise_std),
            ("horizon", &self.horizon),
            ("n_runs", &self.n_runs),
            ("seed", &self.seed),
            ("theta_star_seed", &self.theta_star_seed),
            ("init.m1", &self.m1),
            ("stop_at", &self.stop_at),
            ("record_every", &self.record_every),
        ];
        for (key, v) in flags {
            if let Some(v) = v {
                c.set_str(key, v)?;
            }
        }
        if let Some(out) = &self.out {
            c.set_str(
                "out",
                &format!("\"{}\"", out.replace('\\', "\\\\").replace('"', "\\\"")),
            )?;
        }
        if self.monitor {
            c.monitor = true;
        }
        for kv in &self.sets {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("`--set {kv}` is not KEY=VALUE")))?;
            c.set_str(k.trim(), v.trim())?;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Also write per-step ensemble mean and std here.
    #[arg(long, value_name = "FILE")]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated dimensions.
    #[arg(long, value_delimiter = ',', conflicts_with = "epsilons")]
    dims: Vec<usize>,
    /// Comma-separated targets ε at the configured d.
    #[arg(long, value_delimiter = ',')]
    epsilons: Vec<f64>,
    /// `pure_exploration` or `burnin`.
    #[arg(long, default_value = "pure_exploration")]
    task: String,
    /// Runs per sweep point.
    #[arg(long, default_value_t = 20)]
    runs: usize,
    /// Step budget per run.
    #[arg(long = "max-t", default_value_t = DEFAULT_MAX_T)]
    max_t: u64,
}

#[derive(Args)]
struct VerifyArgs {
    /// Acceptance-level sample sizes (slower).
    #[arg(long)]
    full: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CounterexampleArgs {
    /// Link to run; `identity` gives the control.
    #[arg(long, default_value = "counterexample")]
    link: String,
    #[arg(long, default_value_t = 20)]
    d: usize,
    #[arg(long, default_value_t = 100_000)]
    horizon: u64,
    #[arg(long, default_value_t = 0.001)]
    eta: f64,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long, default_value_t = 0.05)]
    m1: f64,
    #[arg(long = "n-runs", default_value_t = 100)]
    n_runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "noise-std", default_value_t = 1.0)]
    noise_std: f64,
}

/// Default horizon of the `fig1` command.
const FIG1_HORIZON: u64 = 500_000;

#[derive(Args)]
struct Fig1Args {
    #[command(flatten)]
    config: ConfigArgs,
    /// Write every step of run 0 instead of the ensemble summary.
    #[arg(long)]
    single: bool,
}

enum Failure {
    Config(Error),
    Run(Error),
    Io(io::Error),
    Verdict(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::Parse { .. }
            | Error::Range { .. }
            | Error::Dimension { .. }
            | Error::UnsupportedSchedule(..)
            | Error::RegimeMismatch { .. }
            | Error::Hypothesis(_) => Failure::Config(e),
            other => Failure::Run(other),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

fn open_out(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(args: &RunArgs) -> Result<(), Failure> {
    let c = args.config.build(RunConfig::default())?;
    let results = run_batch(&c, c.n_runs);
    let summary = EnsembleSummary::from_records(&results);
    let ok: Vec<_> = results.into_iter().filter_map(|r| r.ok()).collect();
    let mut w = open_out(c.out.as_deref())?;
    write_csv(&ok, &mut w)?;
    w.flush()?;
    if let Some(p) = &args.summary {
        let mut s = open_out(Some(p))?;
        summary.write_csv(&mut s)?;
        s.flush()?;
    }
    eprintln!(
        "runs={} failed={} mean_final_m={:.6}",
        summary.n_runs(),
        summary.failures.len(),
        summary.mean_final()
    );
    for (run, msg) in &summary.failures {
        eprintln!("run {run} failed: {msg}");
    }
    if ok.is_empty() {
        return Err(Failure::Run(Error::Numerical("every run failed".into())));
    }
    Ok(())
}

fn hit_line(label: &str, h: &HitSummary) -> String {
    let times: Vec<String> = h
        .results
        .iter()
        .map(|r| match r {
            HitResult::Hit(t) => t.to_string(),
            HitResult::Timeout(_) => "timeout".into(),
        })
        .collect();
    let median = h.median.map_or("none".into(), |m| format!("{m:.1}"));
    format!("{label},{median},{},{}", h.timeouts, times.join(" "))
}

fn sweep(args: &SweepArgs) -> Result<(), Failure> {
    let c = args.config.build(RunConfig::default())?;
    let task: SweepTask = args.task.parse()?;
    let mut w = open_out(c.out.as_deref())?;
    if !args.epsilons.is_empty() {
        writeln!(w, "epsilon,median,timeouts,times")?;
        let rows = epsilon_sweep(&c, &args.epsilons, args.runs, args.max_t)?;
        for (eps, h) in &rows {
            writeln!(w, "{}", hit_line(&eps.to_string(), h))?;
        }
        for pair in rows.windows(2) {
            if let (Some(a), Some(b)) = (pair[0].1.median, pair[1].1.median) {
                eprintln!("ratio eps {} -> {}: {:.3}", pair[0].0, pair[1].0, b / a);
            }
        }
        return Ok(w.flush()?);
    }
    if args.dims.is_empty() {
        return Err(Failure::Config(Error::Config(
            "sweep needs --dims or --epsilons".into(),
        )));
    }
    if let Some(&d) = args.dims.iter().find(|&&d| d < 4) {
        return Err(Failure::Config(Error::Config(format!(
            "sweep needs every d >= 4, got {d}"
        ))));
    }
    let points = sweep_points(&c, task, &args.dims, args.runs, args.max_t)?;
    writeln!(w, "d,median,timeouts,times")?;
    for p in &points {
        writeln!(w, "{}", hit_line(&p.d.to_string(), &p.hits))?;
    }
    w.flush()?;
    if args.dims.len() >= 3 {
        let fit = fit_scaling(points)?;
        eprintln!(
            "slope={:.4} se={:.4} ci95=[{:.4}, {:.4}] excluded={:?}",
            fit.fit.slope, fit.fit.slope_se, fit.slope_ci.0, fit.slope_ci.1, fit.excluded
        );
    } else if let [a, b] = points.as_slice() {
        if let (Some(x), Some(y)) = (a.hits.median, b.hits.median) {
            eprintln!("ratio d {} -> {}: {:.3}", a.d, b.d, y / x);
        }
    }
    Ok(())
}

fn verify(args: &VerifyArgs) -> Result<(), Failure> {
    let size = if args.full {
        SuiteSize::Full
    } else {
        SuiteSize::Quick
    };
    let reports = verify_suite(size, args.seed)?;
    let mut out = io::stdout().lock();
    for r in &reports {
        writeln!(out, "{r}")?;
    }
    let failed = reports.iter().filter(|r| !r.pass).count();
    writeln!(out, "{} checks, {failed} failed", reports.len())?;
    if failed > 0 {
        return Err(Failure::Verdict(failed));
    }
    Ok(())
}

fn counterexample(args: &CounterexampleArgs) -> Result<(), Failure> {
    let p = CounterexampleParams {
        link: args.link.clone(),
        d: args.d,
        horizon: args.horizon,
        eta: args.eta,
        sigma: args.sigma,
        m1: args.m1,
        n_runs: args.n_runs,
        seed: args.seed,
        noise_std: args.noise_std,
        ..CounterexampleParams::default()
    };
    let r = counterexample_experiment(&p)?;
    let mut out = io::stdout().lock();
    writeln!(
        out,
        "link={} runs={} fraction_max_m_le_0.2={}",
        p.link,
        r.max_m.len(),
        r.fraction
    )?;
    writeln!(
        out,
        "mean_final_m={:.6} action_regret_per_step={:.6}",
        r.final_m_mean, r.regret_rate
    )?;
    writeln!(out, "lo,hi,count")?;
    for b in r.histogram.iter().filter(|b| b.count > 0) {
        writeln!(out, "{:.2},{:.2},{}", b.lo, b.hi, b.count)?;
    }
    Ok(())
}

fn fig1(args: &Fig1Args) -> Result<(), Failure> {
    let base = RunConfig {
        horizon: FIG1_HORIZON,
        n_runs: 100,
        record_every: 500,
        ..RunConfig::default()
    };
    let mut c = args.config.build(base)?;
    if args.single {
        c.n_runs = 1;
        let rec = rbl_core::runner::run_trajectory(&c, 0)?;
        let mut w = open_out(c.out.as_deref())?;
        write_csv(&[rec], &mut w)?;
        return Ok(w.flush()?);
    }
    let results = run_batch(&c, c.n_runs);
    let s = EnsembleSummary::from_records(&results);
    let mut w = open_out(c.out.as_deref())?;
    s.write_csv(&mut w)?;
    w.flush()?;
    eprintln!(
        "runs={} failed={} mean_final_m={:.6}",
        s.n_runs(),
        s.failures.len(),
        s.mean_final()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = init_thread_pool() {
        eprintln!("error: {e}");
        return ExitCode::from(3);
    }
    let result = match &cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Verify(a) => verify(a),
        Command::Counterexample(a) => counterexample(a),
        Command::Fig1(a) => fig1(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("{e}");
            ExitCode::from(3)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Io(e)) => {
            eprintln!("i/o error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Verdict(n)) => {
            eprintln!("{n} check(s) failed");
            ExitCode::from(2)
        }
    }
}
