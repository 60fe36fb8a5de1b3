use rand::Rng;

use crate::analysis::{
    burnin_integral, coin_flip_crossing_rate, drift_expected, epoch_plan_sum, increment_tail_check,
    normalization_quantile_check, replicate_steps, BoundReport, Check, ConcentrationParams,
};
use crate::dynamics::{propose_into, step_coefficient, update_in_place, NoiseModel};
use crate::error::Result;
use crate::linkfn::{LinkFunction, CATALOG};
use crate::rng::StreamKey;
use crate::schedules::{build_epoch_plan, m_lower};
use crate::sphere::{convex_order_gap, dot, norm, sample_unit, stein_residual, ConvexTest};
use crate::stats::MeanVar;

/// Sample sizes of the oracle suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteSize {
    /// Seconds; coarse Monte Carlo.
    Quick,
    /// Acceptance-level sample sizes.
    Full,
}

impl SuiteSize {
    fn mc(self) -> usize {
        match self {
            Self::Quick => 100_000,
            Self::Full => 1_000_000,
        }
    }
}

/// Replicated single steps against the drift identity: the empirical mean
/// of m_{t+1/2} - m_t must match the Monte-Carlo identity within three
/// combined standard errors.
#[allow(clippy::too_many_arguments)]
pub fn drift_agreement(
    link: &LinkFunction,
    d: usize,
    m: f64,
    eta: f64,
    sigma: f64,
    noise: NoiseModel,
    n: usize,
    key: StreamKey,
) -> Result<BoundReport> {
    let steps = replicate_steps(link, d, m, eta, sigma, noise, n, key.named("steps"))?;
    let emp: MeanVar = steps.drift();
    let theory = drift_expected(link, d, m, eta, sigma, n, key.named("identity"))?;
    let se_theory = theory.std_error.unwrap_or(0.0);
    let se = (emp.std_error().powi(2) + se_theory.powi(2)).sqrt();
    let mut r = BoundReport::compare(
        format!("drift_steps[{},d={d},m={m},sigma={sigma}]", link.name()),
        Check::TwoSided,
        theory.theory,
        emp.mean(),
        se,
        3.0 * se,
    )
    .with("se_steps", emp.std_error())
    .with("se_identity", se_theory)
    .with("n", n as f64);
    if let Some(closed) = theory.meta("closed_form") {
        let se_e = emp.std_error();
        let ok = (emp.mean() - closed).abs() <= 3.0 * se_e;
        r = r
            .with("closed_form", closed)
            .with("closed_form_ok", ok as u8 as f64);
        r.pass &= ok && theory.pass;
    }
    Ok(r)
}

/// Unit norms, the half-step norm identity ‖θ_{t+1/2}‖² = 1 + k² and
/// m_{t+1} <= m_{t+1/2} for m_{t+1/2} >= 0, over `n` random steps with random
/// links, dimensions, rates and rewards.
pub fn normalization_invariants(n: usize, key: StreamKey) -> Result<BoundReport> {
    let links: Vec<LinkFunction> = CATALOG
        .iter()
        .map(|id| LinkFunction::from_id(id))
        .collect::<Result<_>>()?;
    let mut rng = key.rng();
    let (mut unit_err, mut identity_err): (f64, f64) = (0.0, 0.0);
    let mut violations = 0usize;
    let mut checked = 0usize;
    for _ in 0..n {
        let d = rng.random_range(3..=40);
        let link = &links[rng.random_range(0..links.len())];
        let star = sample_unit(d, &mut rng)?;
        let theta = sample_unit(d, &mut rng)?.into_inner();
        let sigma: f64 = rng.random_range(0.0..1.0);
        let eta: f64 = 10f64.powf(rng.random_range(-4.0..0.0));
        let reward: f64 = rng.random_range(-3.0..3.0);
        let (mut z, mut a) = (vec![0.0; d], vec![0.0; d]);
        propose_into(&theta, sigma, &mut rng, &mut z, &mut a)?;
        let coef = step_coefficient(link, sigma, reward, eta);
        let half: Vec<f64> = theta.iter().zip(&z).map(|(t, zi)| t - coef * zi).collect();
        let h = norm(&half);
        identity_err = identity_err.max((h * h - (1.0 + coef * coef)).abs());
        let m_half = dot(star.coords(), &half);
        let mut next = theta.clone();
        update_in_place(&mut next, &z, coef)?;
        unit_err = unit_err.max((norm(&next) - 1.0).abs());
        let m_next = dot(star.coords(), &next);
        if m_half >= 0.0 {
            checked += 1;
            if m_next > m_half {
                violations += 1;
            }
        }
    }
    let mut r = BoundReport::compare(
        "normalization_invariants",
        Check::AtMost,
        0.0,
        violations as f64,
        0.0,
        0.0,
    )
    .with("steps", n as f64)
    .with("checked", checked as f64)
    .with("max_unit_norm_error", unit_err)
    .with("max_half_norm_identity_error", identity_err);
    r.pass = violations == 0 && unit_err <= 1e-12 && identity_err <= 1e-10;
    Ok(r)
}

/// Quadrature against ∫ m dm and ∫ m/(9 m⁴) dm on the default burn-in
/// range, plus the epoch-plan sum against the integral over the planned
/// range at d = 16.
pub fn burnin_oracles() -> Result<Vec<BoundReport>> {
    let mut out = Vec::new();
    let d = 16usize;
    let id = LinkFunction::identity();
    let cubic = LinkFunction::cubic();
    let g = 0.1;
    let (lo, hi) = (0.5 / (d as f64).sqrt(), 1.0 - g / 4.0);
    let closed_id = (hi * hi - lo * lo) / 2.0;
    let closed_cubic = (lo.powi(-2) - hi.powi(-2)) / 18.0;
    for (link, closed) in [(&id, closed_id), (&cubic, closed_cubic)] {
        let b = burnin_integral(link, d, g, None, None)?;
        let rel = (b.integral - closed).abs() / closed.abs();
        out.push(
            BoundReport::compare(
                format!("burnin_integral[{}]", link.name()),
                Check::TwoSided,
                closed,
                b.integral,
                0.0,
                1e-6 * closed.abs(),
            )
            .with("relative_error", rel),
        );
    }
    for link in [&id, &cubic] {
        let plan = build_epoch_plan(link, d, g, 0.5, 4.0, 0.01)?;
        let sum = epoch_plan_sum(&plan, link);
        let b = burnin_integral(link, d, g, Some(m_lower(1, d, g)), Some(m_lower(d, d, g)))?;
        let ratio = sum / b.scaled;
        let mut r = BoundReport::compare(
            format!("epoch_sum_ratio[{}]", link.name()),
            Check::TwoSided,
            1.0,
            ratio,
            0.0,
            0.0,
        )
        .with("plan_sum", sum)
        .with("integral_scaled", b.scaled);
        r.pass = (0.5..=2.0).contains(&ratio);
        out.push(r);
    }
    Ok(out)
}

/// Runs the oracle suite and returns one report per check.
pub fn verify_suite(size: SuiteSize, seed: u64) -> Result<Vec<BoundReport>> {
    let root = StreamKey::new(seed).named("verify");
    let n = size.mc();
    let mut out = Vec::new();

    for (i, id) in CATALOG.iter().enumerate() {
        let link = LinkFunction::from_id(id)?;
        for d in [5usize, 20] {
            out.push(stein_residual(
                &link,
                d,
                0.0,
                1.0,
                n,
                root.named("stein").child(i as u64).child(d as u64),
            )?);
        }
    }
    for (i, g) in ConvexTest::ALL.iter().enumerate() {
        for d in [3usize, 10] {
            let mut r = convex_order_gap(
                d,
                *g,
                n,
                root.named("convex").child(i as u64).child(d as u64),
            )?;
            if *g == ConvexTest::Linear {
                let (emp, se) = (r.empirical.unwrap_or(f64::NAN), r.std_error.unwrap_or(0.0));
                r.check = Check::TwoSided;
                r.pass = emp.abs() <= 3.0 * se;
            }
            out.push(r);
        }
    }

    let noise = NoiseModel::gaussian(1.0)?;
    let grid: &[(usize, f64, f64)] = match size {
        SuiteSize::Quick => &[(10, 0.5, 0.7)],
        SuiteSize::Full => &[
            (10, 0.1, 0.3),
            (10, 0.5, 0.7),
            (20, 0.1, 0.7),
            (20, 0.5, 0.3),
        ],
    };
    for (i, id) in ["identity", "cubic", "pow5", "logistic"].iter().enumerate() {
        let link = LinkFunction::from_id(id)?;
        for (j, &(d, m, sigma)) in grid.iter().enumerate() {
            let key = root.named("drift").child(i as u64).child(j as u64);
            out.push(drift_agreement(&link, d, m, 0.01, sigma, noise, n, key)?);
        }
    }

    out.push(normalization_invariants(n / 10, root.named("norm"))?);
    out.extend(burnin_oracles()?);

    let params = ConcentrationParams::default();
    let cubic = LinkFunction::cubic();
    out.push(increment_tail_check(
        &cubic,
        20,
        0.5,
        0.01,
        0.5,
        noise,
        n,
        3.0,
        &params,
        root.named("tail"),
    )?);
    out.push(normalization_quantile_check(
        &cubic,
        20,
        0.5,
        0.01,
        0.5,
        noise,
        n,
        params.delta,
        &params,
        root.named("normq"),
    )?);
    let paths = match size {
        SuiteSize::Quick => 200,
        SuiteSize::Full => 1000,
    };
    out.push(coin_flip_crossing_rate(
        1.0,
        2000,
        paths,
        &params,
        root.named("coin"),
    )?);
    Ok(out)
}
