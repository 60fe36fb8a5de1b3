//! Numerical counterparts of the quantitative statements about the SGD
//! dynamics: drift, increment scale, martingale envelope, normalization
//! error and the burn-in cost integral.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

pub use crate::report::{BoundReport, Check};

use crate::dynamics::{propose_into, step_coefficient, update_in_place, Environment, NoiseModel};
use crate::error::{Error, Result};
use crate::linkfn::LinkFunction;
use crate::quadrature;
use crate::rng::StreamKey;
use crate::schedules::EpochPlan;
use crate::sphere::{SphereMarginal, UnitVector};
use crate::stats::{mc_chunks, merge_all, MeanVar};

/// Universal constants of the concentration argument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationParams {
    pub c_se: f64,
    pub c_mt: f64,
    pub c_nm: f64,
    pub c_dr: f64,
    /// Largest admissible λ; `None` means 1/(2 C_se K̄) with K̄ the largest
    /// increment scale seen along the trajectory.
    pub lambda_max: Option<f64>,
    pub omega: f64,
    pub delta: f64,
}

impl Default for ConcentrationParams {
    fn default() -> Self {
        Self {
            c_se: 1.0,
            c_mt: 1.0,
            c_nm: 2.0,
            c_dr: 0.2,
            lambda_max: None,
            omega: 1.0,
            delta: 0.05,
        }
    }
}

impl ConcentrationParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("C_se", self.c_se),
            ("C_mt", self.c_mt),
            ("C_nm", self.c_nm),
            ("c_dr", self.c_dr),
            ("omega", self.omega),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Range {
                    name,
                    value: v,
                    range: "(0, inf)",
                });
            }
        }
        if let Some(l) = self.lambda_max {
            if !(l > 0.0) {
                return Err(Error::Range {
                    name: "lambda_max",
                    value: l,
                    range: "(0, inf]",
                });
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Range {
                name: "delta",
                value: self.delta,
                range: "(0, 1)",
            });
        }
        Ok(())
    }
}

fn check_d(d: usize) -> Result<()> {
    if d < 3 {
        Err(Error::Dimension {
            d,
            reason: "the drift needs d >= 3",
        })
    } else {
        Ok(())
    }
}

fn check_sigma(sigma: f64, allow_zero: bool) -> Result<()> {
    let ok = if allow_zero {
        (0.0..=1.0).contains(&sigma)
    } else {
        sigma > 0.0 && sigma <= 1.0
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Range {
            name: "sigma",
            value: sigma,
            range: if allow_zero { "[0, 1]" } else { "(0, 1]" },
        })
    }
}

/// Monte-Carlo estimate of E[f'(s m + σ√(1-m²) X)(1 - X²)] with
/// s = √(1-σ²) and X a coordinate of a uniform point on S^{d-2}, using
/// antithetic pairs (X, -X). `n_mc` counts draws of X.
pub fn drift_kernel(
    link: &LinkFunction,
    d: usize,
    m: f64,
    sigma: f64,
    n_mc: usize,
    key: StreamKey,
) -> Result<MeanVar> {
    check_d(d)?;
    let marg = SphereMarginal::new(d - 1)?;
    let s = (1.0 - sigma * sigma).sqrt();
    let a = s * m;
    let b = sigma * (1.0 - m * m).max(0.0).sqrt();
    let parts = mc_chunks(n_mc.max(1), key, |rng, n| {
        let mut acc = MeanVar::new();
        for _ in 0..n {
            let x = marg.sample(rng);
            let w = 1.0 - x * x;
            acc.push(0.5 * w * (link.df(a + b * x) + link.df(a - b * x)));
        }
        acc
    });
    Ok(merge_all(&parts))
}

/// Prefactor η σ² f'(s)(1 - m²)/(d - 2) of the drift identity.
pub fn drift_prefactor(link: &LinkFunction, d: usize, m: f64, eta: f64, sigma: f64) -> f64 {
    let s = (1.0 - sigma * sigma).sqrt();
    eta * sigma * sigma * link.df(s) * (1.0 - m * m) / (d as f64 - 2.0)
}

/// Expected one-step change E[m_{t+1/2}] - m_t. For the identity link the
/// report also compares against the closed form ησ²(1 - m²)/(d - 1).
pub fn drift_expected(
    link: &LinkFunction,
    d: usize,
    m: f64,
    eta: f64,
    sigma: f64,
    n_mc: usize,
    key: StreamKey,
) -> Result<BoundReport> {
    check_d(d)?;
    check_sigma(sigma, false)?;
    if !(-1.0..=1.0).contains(&m) {
        return Err(Error::Range {
            name: "m",
            value: m,
            range: "[-1, 1]",
        });
    }
    let pre = drift_prefactor(link, d, m, eta, sigma);
    let kernel = drift_kernel(link, d, m, sigma, n_mc, key)?;
    let value = pre * kernel.mean();
    let se = pre.abs() * kernel.std_error();
    let name = format!("drift[{},d={d},m={m}]", link.name());
    let mut report = if link.is_identity() {
        let closed = eta * sigma * sigma * (1.0 - m * m) / (d as f64 - 1.0);
        BoundReport::compare(name, Check::TwoSided, closed, value, se, 3.0 * se + 1e-15)
            .with("closed_form", closed)
    } else {
        let mut r = BoundReport::value(name, value);
        r.std_error = Some(se);
        r
    };
    report = report
        .with("mc", value)
        .with("d", d as f64)
        .with("m", m)
        .with("eta", eta)
        .with("sigma", sigma)
        .with("n_mc", n_mc as f64);
    report.theory = value;
    Ok(report)
}

/// Regime of the drift lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Global derivative lower bound on [0, 1].
    Glb,
    /// Convex on [0, 1].
    Convex,
}

/// c_dr (ησ²/d) f'(s)(1 - m²), times f'(s m) in the convex regime.
pub fn drift_lower_bound(
    link: &LinkFunction,
    d: usize,
    m: f64,
    eta: f64,
    sigma: f64,
    regime: Regime,
    params: &ConcentrationParams,
) -> Result<f64> {
    if !(m > 0.0 && m <= 1.0) {
        return Err(Error::Range {
            name: "m",
            value: m,
            range: "(0, 1]",
        });
    }
    check_sigma(sigma, true)?;
    let s = (1.0 - sigma * sigma).sqrt();
    let base = params.c_dr * eta * sigma * sigma / d as f64 * link.df(s) * (1.0 - m * m);
    match regime {
        Regime::Glb => {
            if link.c0.is_none() {
                return Err(Error::RegimeMismatch {
                    link: link.name().to_string(),
                    regime: "global derivative lower bound",
                });
            }
            Ok(base)
        }
        Regime::Convex => {
            if !link.convex_on_unit {
                return Err(Error::RegimeMismatch {
                    link: link.name().to_string(),
                    regime: "convex",
                });
            }
            Ok(base * link.df(s * m))
        }
    }
}

/// Sub-exponential scale K = C_se √((1 - m²)/d) η σ f'(s) of one increment.
pub fn subexp_norm_bound(
    link: &LinkFunction,
    d: usize,
    m: f64,
    eta: f64,
    sigma: f64,
    params: &ConcentrationParams,
) -> f64 {
    let s = (1.0 - sigma * sigma).sqrt();
    params.c_se * ((1.0 - m * m).max(0.0) / d as f64).sqrt() * eta * sigma * link.df(s)
}

/// ℓ_ω(v) = 2 ln(1 + ln(vω ∨ 1)) + ln(1/δ).
pub fn ell_omega(v: f64, omega: f64, delta: f64) -> f64 {
    2.0 * (1.0 + (v * omega).max(1.0).ln()).ln() + (1.0 / delta).ln()
}

/// C_mt (√((V ∨ 1/ω) ℓ_ω(V)) + ℓ_ω(V)/λ_max). Requires λ_max to be set
/// (use [`ConcentrationParams::lambda_max`] or pass it through the monitor).
pub fn concentration_envelope(v: f64, params: &ConcentrationParams) -> f64 {
    let lambda = params.lambda_max.unwrap_or(f64::INFINITY);
    let ell = ell_omega(v, params.omega, params.delta);
    params.c_mt * ((v.max(1.0 / params.omega) * ell).sqrt() + ell / lambda)
}

/// C_nm η²σ² f'(s)² ln(1/δ).
pub fn normalization_error_bound(
    link: &LinkFunction,
    eta: f64,
    sigma: f64,
    delta: f64,
    params: &ConcentrationParams,
) -> f64 {
    let s = (1.0 - sigma * sigma).sqrt();
    let fp = link.df(s);
    params.c_nm * eta * eta * sigma * sigma * fp * fp * (1.0 / delta).ln()
}

/// ∫ m/f'(m)² dm and the same times d².
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BurninIntegral {
    pub lower: f64,
    pub upper: f64,
    pub integral: f64,
    pub scaled: f64,
}

/// Burn-in cost ∫_{lower}^{upper} m/f'(m)² dm; the default range is
/// [1/(2√d), 1 - γ0/4].
pub fn burnin_integral(
    link: &LinkFunction,
    d: usize,
    gamma0: f64,
    lower: Option<f64>,
    upper: Option<f64>,
) -> Result<BurninIntegral> {
    let lower = lower.unwrap_or(0.5 / (d as f64).sqrt());
    let upper = upper.unwrap_or(1.0 - gamma0 / 4.0);
    if !(lower < upper) {
        return Err(Error::Range {
            name: "burn-in integral lower limit",
            value: lower,
            range: "below the upper limit",
        });
    }
    let probe = 4096;
    for i in 0..=probe {
        let m = lower + (upper - lower) * i as f64 / probe as f64;
        if !(link.df(m) > 0.0) {
            return Err(Error::Divergence { m });
        }
    }
    let integral = quadrature::integrate_default(
        |m| {
            let fp = link.df(m);
            m / (fp * fp)
        },
        lower,
        upper,
    )?;
    let df = d as f64;
    Ok(BurninIntegral {
        lower,
        upper,
        integral,
        scaled: df * df * integral,
    })
}

/// d² Σ_k m̲_k (m̲_{k+1} - m̲_k)/f'(m̲_k)², the plan length without the
/// (C ι / c) factor.
pub fn epoch_plan_sum(plan: &EpochPlan, link: &LinkFunction) -> f64 {
    let d = plan.d;
    let g = plan.gamma0;
    let df = d as f64;
    let mut total = 0.0;
    for e in &plan.epochs {
        let next = crate::schedules::m_lower(e.k + 1, d, g);
        let fp = link.df(e.m_lower);
        total += e.m_lower * (next - e.m_lower) / (fp * fp);
    }
    df * df * total
}

/// Replicated single steps from one frozen state.
#[derive(Debug, Clone, Default)]
pub struct ReplicatedSteps {
    /// m_{t+1/2} - m_t per replicate.
    pub dm_half: Vec<f64>,
    /// m_{t+1/2} - m_{t+1} per replicate.
    pub norm_err: Vec<f64>,
}

impl ReplicatedSteps {
    pub fn drift(&self) -> MeanVar {
        self.dm_half.iter().copied().collect()
    }
}

/// Runs `n` independent single SGD steps from an iterate with correlation
/// `m`, each with a fresh action and reward.
#[allow(clippy::too_many_arguments)]
pub fn replicate_steps(
    link: &LinkFunction,
    d: usize,
    m: f64,
    eta: f64,
    sigma: f64,
    noise: NoiseModel,
    n: usize,
    key: StreamKey,
) -> Result<ReplicatedSteps> {
    check_d(d)?;
    check_sigma(sigma, true)?;
    let star = UnitVector::basis(d, 0)?;
    let mut base = vec![0.0; d];
    base[0] = m;
    base[1] = (1.0 - m * m).sqrt();
    let env = Environment::new(star, link.clone(), noise)?;
    let parts = mc_chunks(n, key, |rng, len| -> Result<Vec<(f64, f64)>> {
        let (mut z, mut a, mut theta) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            propose_into(&base, sigma, rng, &mut z, &mut a)?;
            let r = env.pull_unchecked(&a, rng);
            let coef = step_coefficient(link, sigma, r, eta);
            let m_half = m - coef * z[0];
            theta.copy_from_slice(&base);
            update_in_place(&mut theta, &z, coef)?;
            out.push((m_half - m, m_half - theta[0]));
        }
        Ok(out)
    });
    let mut steps = ReplicatedSteps {
        dm_half: Vec::with_capacity(n),
        norm_err: Vec::with_capacity(n),
    };
    for part in parts {
        for (a, b) in part? {
            steps.dm_half.push(a);
            steps.norm_err.push(b);
        }
    }
    Ok(steps)
}

/// Tail check of centred increments against 2 exp(-u/(κK)) on a u-grid of
/// multiples of K. Passes if every empirical tail is below the envelope plus
/// three binomial standard errors.
#[allow(clippy::too_many_arguments)]
pub fn increment_tail_check(
    link: &LinkFunction,
    d: usize,
    m: f64,
    eta: f64,
    sigma: f64,
    noise: NoiseModel,
    n: usize,
    kappa: f64,
    params: &ConcentrationParams,
    key: StreamKey,
) -> Result<BoundReport> {
    let steps = replicate_steps(link, d, m, eta, sigma, noise, n, key)?;
    let k = subexp_norm_bound(link, d, m, eta, sigma, params);
    let mean = steps.drift().mean();
    let mut dev: Vec<f64> = steps.dm_half.iter().map(|x| (x - mean).abs()).collect();
    dev.sort_by(|a, b| a.total_cmp(b));
    let nf = dev.len() as f64;
    let mut worst_ratio: f64 = 0.0;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut pass = true;
    for j in 1..=40 {
        let u = 0.25 * j as f64 * k;
        let above = dev.len() - dev.partition_point(|&x| x <= u);
        let p = above as f64 / nf;
        let env = (2.0 * (-u / (kappa * k)).exp()).min(1.0);
        let se = (env * (1.0 - env) / nf).sqrt();
        if p > env + 3.0 * se {
            pass = false;
        }
        if env > 0.0 {
            worst_ratio = worst_ratio.max(p / env);
        }
        worst_excess = worst_excess.max(p - env);
    }
    let mut r = BoundReport::compare(
        format!("increment_tail[{},d={d},m={m}]", link.name()),
        Check::AtMost,
        0.0,
        worst_excess,
        0.0,
        0.0,
    )
    .with("K", k)
    .with("kappa", kappa)
    .with("max_tail_ratio", worst_ratio)
    .with("n", nf);
    r.pass = pass;
    Ok(r)
}

/// Quantile check of the normalization error: the `q`-quantile of
/// m_{t+1/2} - m_{t+1} over replicated steps against the bound at δ = 1 - q.
#[allow(clippy::too_many_arguments)]
pub fn normalization_quantile_check(
    link: &LinkFunction,
    d: usize,
    m: f64,
    eta: f64,
    sigma: f64,
    noise: NoiseModel,
    n: usize,
    delta: f64,
    params: &ConcentrationParams,
    key: StreamKey,
) -> Result<BoundReport> {
    let mut steps = replicate_steps(link, d, m, eta, sigma, noise, n, key)?;
    let bound = normalization_error_bound(link, eta, sigma, delta, params);
    let errs = &mut steps.norm_err;
    errs.sort_by(|a, b| a.total_cmp(b));
    let idx = (((1.0 - delta) * errs.len() as f64).ceil() as usize).clamp(1, errs.len()) - 1;
    let q = errs[idx];
    Ok(BoundReport::compare(
        format!("normalization[{},d={d},m={m}]", link.name()),
        Check::AtMost,
        bound,
        q,
        0.0,
        0.0,
    )
    .with("quantile", 1.0 - delta)
    .with("n", n as f64))
}

type DriftTable = Arc<Vec<(f64, f64)>>;

/// Drift lookup used by the martingale monitor: for each exploration level σ
/// a table of the drift kernel on an m-grid, scaled by the prefactor at use.
/// Tables are built on first use and shared between threads.
#[derive(Debug)]
pub struct DriftProxy {
    link: LinkFunction,
    d: usize,
    grid: usize,
    n_mc: usize,
    key: StreamKey,
    tables: RwLock<HashMap<u64, DriftTable>>,
}

impl DriftProxy {
    /// `grid + 1` nodes on [-1, 1], `n_mc` draws per node.
    pub fn new(
        link: LinkFunction,
        d: usize,
        grid: usize,
        n_mc: usize,
        key: StreamKey,
    ) -> Result<Self> {
        check_d(d)?;
        Ok(Self {
            link,
            d,
            grid: grid.max(2),
            n_mc: n_mc.max(2),
            key,
            tables: RwLock::new(HashMap::new()),
        })
    }

    fn table(&self, sigma: f64) -> Result<DriftTable> {
        let bits = sigma.to_bits();
        if let Some(t) = self.tables.read().expect("drift table lock").get(&bits) {
            return Ok(Arc::clone(t));
        }
        // Built outside the lock; a racing thread computes the same table
        // from the same stream, so whichever insert wins is identical.
        let key = self.key.child(bits);
        let mut table = Vec::with_capacity(self.grid + 1);
        for i in 0..=self.grid {
            let m = -1.0 + 2.0 * i as f64 / self.grid as f64;
            let k = drift_kernel(&self.link, self.d, m, sigma, self.n_mc, key.child(i as u64))?;
            table.push((k.mean(), k.std_error()));
        }
        let mut w = self.tables.write().expect("drift table lock");
        Ok(Arc::clone(w.entry(bits).or_insert_with(|| Arc::new(table))))
    }

    /// Builds the tables for these σ values ahead of use.
    pub fn prepare(&self, sigmas: &[f64]) -> Result<()> {
        for &s in sigmas {
            if s > 0.0 {
                self.table(s)?;
            }
        }
        Ok(())
    }

    /// (drift, standard error) at correlation m.
    pub fn drift(&self, m: f64, eta: f64, sigma: f64) -> Result<(f64, f64)> {
        if sigma == 0.0 || eta == 0.0 {
            return Ok((0.0, 0.0));
        }
        let pre = drift_prefactor(&self.link, self.d, m, eta, sigma);
        let grid = self.grid as f64;
        let table = self.table(sigma)?;
        let pos = ((m.clamp(-1.0, 1.0) + 1.0) * 0.5 * grid).min(grid);
        let i = (pos.floor() as usize).min(table.len() - 2);
        let w = pos - i as f64;
        let (k0, s0) = table[i];
        let (k1, s1) = table[i + 1];
        Ok((pre * ((1.0 - w) * k0 + w * k1), pre.abs() * s0.max(s1)))
    }
}

/// Per-step inputs of the martingale monitor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonitorStep {
    pub m: f64,
    pub m_half: f64,
    pub eta: f64,
    pub sigma: f64,
}

/// Outcome of monitoring one trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct MonitorReport {
    pub steps: usize,
    /// Steps where |S_t| exceeded the widened envelope.
    pub violations: usize,
    pub ever_violated: bool,
    /// max_t |S_t| / widened envelope.
    pub max_ratio: f64,
    pub s_final: f64,
    pub v_final: f64,
    /// 3 Σ SE_s added to the envelope for the Monte-Carlo drift proxy.
    pub widening: f64,
    pub lambda_max: f64,
    pub v_nondecreasing: bool,
}

impl MonitorReport {
    pub fn violation_fraction(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.violations as f64 / self.steps as f64
        }
    }

    pub fn to_bound_report(&self, delta: f64) -> BoundReport {
        let mut r = BoundReport::compare(
            "martingale_monitor",
            Check::AtMost,
            0.0,
            self.violation_fraction(),
            0.0,
            0.0,
        )
        .with("steps", self.steps as f64)
        .with("ever_violated", self.ever_violated as u8 as f64)
        .with("max_ratio", self.max_ratio)
        .with("S_final", self.s_final)
        .with("V_final", self.v_final)
        .with("widening", self.widening)
        .with("lambda_max", self.lambda_max)
        .with("delta", delta);
        r.pass = !self.ever_violated;
        r
    }
}

/// Reconstructs S_t = Σ (m_{s+1/2} - m_s - drift_s) and V_t = Σ K_s² along a
/// trajectory and counts the steps where |S_t| leaves the envelope. The
/// drift is a Monte-Carlo proxy, so the envelope is widened by 3 Σ SE_s.
pub fn martingale_monitor(
    steps: &[MonitorStep],
    link: &LinkFunction,
    d: usize,
    params: &ConcentrationParams,
    proxy: &DriftProxy,
) -> Result<MonitorReport> {
    params.validate()?;
    if steps.iter().any(|s| s.m_half.is_nan()) {
        return Err(Error::MissingInstrumentation(
            "half-step correlations were not logged",
        ));
    }
    let ks: Vec<f64> = steps
        .iter()
        .map(|s| subexp_norm_bound(link, d, s.m, s.eta, s.sigma, params))
        .collect();
    let k_bar = ks.iter().copied().fold(0.0, f64::max);
    let lambda = params.lambda_max.unwrap_or(if k_bar > 0.0 {
        1.0 / (2.0 * params.c_se * k_bar)
    } else {
        f64::INFINITY
    });
    let p = ConcentrationParams {
        lambda_max: Some(lambda),
        ..*params
    };
    let (mut s_sum, mut v, mut widening) = (0.0, 0.0, 0.0);
    let (mut violations, mut max_ratio) = (0usize, 0.0f64);
    let mut v_nondecreasing = true;
    for (step, k) in steps.iter().zip(&ks) {
        let (drift, se) = proxy.drift(step.m, step.eta, step.sigma)?;
        s_sum += step.m_half - step.m - drift;
        let v_next = v + k * k;
        v_nondecreasing &= v_next >= v;
        v = v_next;
        widening += 3.0 * se;
        let env = concentration_envelope(v, &p) + widening;
        let ratio = s_sum.abs() / env;
        max_ratio = max_ratio.max(ratio);
        if ratio > 1.0 {
            violations += 1;
        }
    }
    Ok(MonitorReport {
        steps: steps.len(),
        violations,
        ever_violated: violations > 0,
        max_ratio,
        s_final: s_sum,
        v_final: v,
        widening,
        lambda_max: lambda,
        v_nondecreasing,
    })
}

/// Fraction of `n_paths` Rademacher martingales S_t = K Σ ε_s, t <= horizon,
/// that ever leave the envelope with V_t = t K² and λ_max = 1/(2K).
pub fn coin_flip_crossing_rate(
    k: f64,
    horizon: usize,
    n_paths: usize,
    params: &ConcentrationParams,
    key: StreamKey,
) -> Result<BoundReport> {
    use rand::Rng;
    params.validate()?;
    let p = ConcentrationParams {
        lambda_max: Some(params.lambda_max.unwrap_or(1.0 / (2.0 * k))),
        ..*params
    };
    let envelope: Vec<f64> = (1..=horizon)
        .map(|t| concentration_envelope(t as f64 * k * k, &p))
        .collect();
    let crossed: usize = (0..n_paths)
        .map(|i| {
            let mut rng = key.child(i as u64).rng();
            let mut s = 0.0;
            for env in &envelope {
                s += if rng.random::<bool>() { k } else { -k };
                if s.abs() > *env {
                    return 1;
                }
            }
            0
        })
        .sum();
    let rate = crossed as f64 / n_paths as f64;
    let tol = 3.0 * (params.delta / n_paths as f64).sqrt();
    Ok(BoundReport::compare(
        "coin_flip_crossing",
        Check::AtMost,
        params.delta,
        rate,
        0.0,
        tol,
    )
    .with("paths", n_paths as f64)
    .with("horizon", horizon as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_drift_closed_form() {
        let id = LinkFunction::identity();
        let r = drift_expected(&id, 11, 0.0, 0.01, 0.5, 200_000, StreamKey::new(1)).unwrap();
        assert!((r.meta("closed_form").unwrap() - 2.5e-4).abs() < 1e-18);
        assert!(r.pass, "{r}");
        let r = drift_expected(&id, 11, 1.0, 0.01, 0.5, 1000, StreamKey::new(1)).unwrap();
        assert_eq!(r.theory, 0.0);
    }

    #[test]
    fn lower_bound_values() {
        let id = LinkFunction::identity();
        let p = ConcentrationParams {
            c_dr: 0.25,
            ..Default::default()
        };
        let b = drift_lower_bound(&id, 10, 0.5, 0.01, 0.1f64.sqrt(), Regime::Glb, &p).unwrap();
        assert!((b - 1.875e-5).abs() < 1e-18);
        let b1 = drift_lower_bound(&id, 10, 1.0, 0.01, 0.3, Regime::Glb, &p).unwrap();
        assert_eq!(b1, 0.0);
        let cubic = LinkFunction::cubic();
        assert!(drift_lower_bound(&cubic, 10, 0.5, 0.01, 0.3, Regime::Glb, &p).is_err());
        assert!(drift_lower_bound(
            &LinkFunction::logistic(),
            10,
            0.5,
            0.01,
            0.3,
            Regime::Convex,
            &p
        )
        .is_err());
        assert!(drift_lower_bound(&id, 10, -0.1, 0.01, 0.3, Regime::Glb, &p).is_err());
    }

    #[test]
    fn k_and_normalization_values() {
        let id = LinkFunction::identity();
        let p = ConcentrationParams::default();
        assert!((subexp_norm_bound(&id, 100, 0.0, 0.01, 0.5, &p) - 5e-4).abs() < 1e-18);
        assert_eq!(subexp_norm_bound(&id, 100, 1.0, 0.01, 0.5, &p), 0.0);
        let q = ConcentrationParams { c_nm: 1.0, ..p };
        let v = normalization_error_bound(&id, 0.01, 0.5, (-1f64).exp(), &q);
        assert!((v - 2.5e-5).abs() < 1e-18);
        assert_eq!(normalization_error_bound(&id, 0.0, 0.5, 0.1, &q), 0.0);
        let b1 = normalization_error_bound(&LinkFunction::cubic(), 0.003, 0.4, 0.01, &p);
        let b2 = normalization_error_bound(&LinkFunction::cubic(), 0.006, 0.4, 0.01, &p);
        assert!((b2 - 4.0 * b1).abs() <= 1e-15 * b2);
    }

    #[test]
    fn envelope_worked_value() {
        let p = ConcentrationParams {
            c_mt: 1.0,
            omega: 1.0,
            delta: 0.1,
            lambda_max: Some(2.0),
            ..Default::default()
        };
        let e = concentration_envelope(0.5, &p);
        let l10 = 10f64.ln();
        assert!((e - (l10.sqrt() + 0.5 * l10)).abs() < 1e-12);
        assert!((e - 2.6687).abs() < 1e-4);
    }

    #[test]
    fn burnin_integral_closed_forms() {
        let r = burnin_integral(&LinkFunction::identity(), 16, 0.1, None, None).unwrap();
        assert!((r.integral - 0.4675).abs() < 1e-12);
        assert!((r.scaled - 256.0 * 0.4675).abs() < 1e-9);
        let r = burnin_integral(&LinkFunction::cubic(), 16, 0.1, None, None).unwrap();
        let exact = (64.0 - 1.0 / (0.975f64 * 0.975)) / 18.0;
        assert!(((r.integral - exact) / exact).abs() < 1e-9);
    }

    #[test]
    fn burnin_integral_divergence() {
        let r = burnin_integral(&LinkFunction::cubic(), 16, 0.1, Some(0.0), None);
        assert!(matches!(r, Err(Error::Divergence { .. })));
        let r = burnin_integral(&LinkFunction::counterexample(), 16, 0.1, None, None);
        assert!(matches!(r, Err(Error::Divergence { .. })));
    }

    #[test]
    fn replicated_steps_are_thread_independent() {
        let link = LinkFunction::cubic();
        let noise = NoiseModel::Gaussian { std: 1.0 };
        let a =
            replicate_steps(&link, 8, 0.3, 0.01, 0.5, noise, 70_000, StreamKey::new(9)).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool
            .install(|| replicate_steps(&link, 8, 0.3, 0.01, 0.5, noise, 70_000, StreamKey::new(9)))
            .unwrap();
        assert_eq!(a.dm_half, b.dm_half);
    }

    #[test]
    fn monitor_fixed_point() {
        let link = LinkFunction::identity();
        let steps = vec![
            MonitorStep {
                m: 1.0,
                m_half: 1.0,
                eta: 0.01,
                sigma: 0.3
            };
            50
        ];
        let proxy = DriftProxy::new(link.clone(), 10, 20, 100, StreamKey::new(0)).unwrap();
        let r =
            martingale_monitor(&steps, &link, 10, &ConcentrationParams::default(), &proxy).unwrap();
        assert_eq!(r.violations, 0);
        assert_eq!(r.s_final, 0.0);
        assert!(r.v_nondecreasing);
        let mut bad = steps.clone();
        bad[3].m_half = f64::NAN;
        assert!(matches!(
            martingale_monitor(&bad, &link, 10, &ConcentrationParams::default(), &proxy),
            Err(Error::MissingInstrumentation(_))
        ));
    }
}
