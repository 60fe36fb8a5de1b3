//! Learning-rate and exploration schedules.
//!
//! Closed-form rules are evaluated by [`rates_at`]. The convex burn-in plan
//! ([`EpochPlan`]) and the threshold latch ([`Fig1Latch`]) need extra state
//! and have their own entry points; [`Schedule`] wraps all of them for the
//! trajectory loop.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linkfn::LinkFunction;

/// Default small constant c.
pub const DEFAULT_C_SMALL: f64 = 0.5;
/// Default large constant C.
pub const DEFAULT_C_BIG: f64 = 4.0;
pub const DEFAULT_DELTA: f64 = 0.01;
/// Accuracy used by the learning-phase log factor when none is configured.
pub const DEFAULT_EPSILON: f64 = 0.1;
/// Cap on c·C.
pub const MAX_CONSTANT_PRODUCT: f64 = 1e3;

/// Counterexample regime: constant rates inside the stalling hypothesis.
pub const COUNTEREXAMPLE_ETA: f64 = 0.001;
pub const COUNTEREXAMPLE_SIGMA: f64 = 0.1;

/// Threshold schedule used for the cubic-link reference experiment.
pub const FIG1_ETA: f64 = 0.002;
pub const FIG1_SIGMA_HI: f64 = 0.5;
pub const FIG1_SIGMA_LO: f64 = 0.2;
pub const FIG1_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    /// η_t = min(c/(ιd), C d/t), σ² = γ0.
    PureExploration,
    /// Piecewise-constant version of the above: ε halves each epoch.
    PureExplorationEpochs,
    /// η_t = min(c/(ιd), √(cC/(ιt))), σ² = min(1, C d/√t).
    RegretMin,
    /// η = c/(dι), σ² = γ0 with ι = ln²(d/δ).
    BurninGlb,
    BurninConvexEpochs,
    Fig1Threshold,
    Counterexample,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 8] = [
        ScheduleKind::Constant,
        ScheduleKind::PureExploration,
        ScheduleKind::PureExplorationEpochs,
        ScheduleKind::RegretMin,
        ScheduleKind::BurninGlb,
        ScheduleKind::BurninConvexEpochs,
        ScheduleKind::Fig1Threshold,
        ScheduleKind::Counterexample,
    ];

    pub fn id(self) -> &'static str {
        match self {
            ScheduleKind::Constant => "constant",
            ScheduleKind::PureExploration => "pure_exploration",
            ScheduleKind::PureExplorationEpochs => "pure_exploration_epochs",
            ScheduleKind::RegretMin => "regret_min",
            ScheduleKind::BurninGlb => "burnin_glb",
            ScheduleKind::BurninConvexEpochs => "burnin_convex_epochs",
            ScheduleKind::Fig1Threshold => "fig1_threshold",
            ScheduleKind::Counterexample => "counterexample",
        }
    }

    /// Burn-in schedules, which may hand over to a learning schedule.
    pub fn is_burnin(self) -> bool {
        matches!(
            self,
            ScheduleKind::BurninGlb | ScheduleKind::BurninConvexEpochs
        )
    }

    /// Schedules whose emitted σ² must stay below γ0.
    fn bounded_exploration(self) -> bool {
        matches!(
            self,
            ScheduleKind::PureExploration
                | ScheduleKind::PureExplorationEpochs
                | ScheduleKind::BurninGlb
                | ScheduleKind::BurninConvexEpochs
        )
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown schedule kind `{s}`")))
    }
}

/// When a burn-in schedule hands over to its learning schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SwitchRule {
    /// At the planned burn-in horizon; needs nothing the learner cannot see.
    #[default]
    Time,
    /// When the observed correlation first reaches 1 - γ0/4.
    State,
}

/// Schedule parameters. `d` and `gamma0` are filled from the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub c_small: f64,
    pub c_big: f64,
    pub delta: f64,
    pub epsilon: Option<f64>,
    pub d: usize,
    pub gamma0: f64,
    /// Fixed step size for `constant`, `fig1_threshold` and `counterexample`.
    pub eta: Option<f64>,
    /// Fixed exploration for `constant` and `counterexample`; the pre-latch
    /// value for `fig1_threshold`.
    pub sigma: Option<f64>,
    /// Post-latch exploration for `fig1_threshold`.
    pub sigma_lo: Option<f64>,
    pub threshold: Option<f64>,
    /// Replaces the computed log factor; for worked examples only.
    pub iota_override: Option<f64>,
    /// Learning schedule run after a burn-in schedule.
    pub then: Option<ScheduleKind>,
    pub switch: SwitchRule,
}

impl ScheduleConfig {
    pub fn new(kind: ScheduleKind, d: usize, gamma0: f64) -> Self {
        Self {
            kind,
            c_small: DEFAULT_C_SMALL,
            c_big: DEFAULT_C_BIG,
            delta: DEFAULT_DELTA,
            epsilon: None,
            d,
            gamma0,
            eta: None,
            sigma: None,
            sigma_lo: None,
            threshold: None,
            iota_override: None,
            then: None,
            switch: SwitchRule::Time,
        }
    }

    pub fn constant(d: usize, eta: f64, sigma: f64) -> Self {
        Self {
            eta: Some(eta),
            sigma: Some(sigma),
            ..Self::new(ScheduleKind::Constant, d, 0.1)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Range {
                    name,
                    value: v,
                    range: "(0, inf)",
                })
            }
        };
        positive("schedule.c", self.c_small)?;
        positive("schedule.C", self.c_big)?;
        if self.c_small * self.c_big > MAX_CONSTANT_PRODUCT {
            return Err(Error::Range {
                name: "schedule.c * schedule.C",
                value: self.c_small * self.c_big,
                range: "(0, 1000]",
            });
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Range {
                name: "schedule.delta",
                value: self.delta,
                range: "(0, 1)",
            });
        }
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(Error::Range {
                    name: "schedule.epsilon",
                    value: eps,
                    range: "(0, 1)",
                });
            }
        }
        if !(self.gamma0 > 0.0 && self.gamma0 <= 0.1) {
            return Err(Error::Range {
                name: "gamma0",
                value: self.gamma0,
                range: "(0, 0.1]",
            });
        }
        if let Some(eta) = self.eta {
            positive("schedule.eta", eta).or_else(|e| if eta == 0.0 { Ok(()) } else { Err(e) })?;
        }
        for (name, s) in [
            ("schedule.sigma", self.sigma),
            ("schedule.sigma_lo", self.sigma_lo),
        ] {
            if let Some(s) = s {
                if !(0.0..=1.0).contains(&s) {
                    return Err(Error::Range {
                        name,
                        value: s,
                        range: "[0, 1]",
                    });
                }
            }
        }
        if let Some(then) = self.then {
            if !self.kind.is_burnin() {
                return Err(Error::Config(format!(
                    "`then` follows burn-in schedules only, not `{}`",
                    self.kind
                )));
            }
            if !matches!(
                then,
                ScheduleKind::PureExploration
                    | ScheduleKind::PureExplorationEpochs
                    | ScheduleKind::RegretMin
            ) {
                return Err(Error::Config(format!(
                    "`{then}` is not a learning schedule"
                )));
            }
        }
        Ok(())
    }

    pub fn epsilon_or_default(&self) -> f64 {
        self.epsilon.unwrap_or(DEFAULT_EPSILON)
    }

    /// Log-squared factor with natural logs: ln²(d/(εδ)) for the learning
    /// phase, ln²(d/δ) for burn-in.
    pub fn iota(&self) -> f64 {
        if let Some(i) = self.iota_override {
            return i;
        }
        let d = self.d as f64;
        match self.kind {
            ScheduleKind::PureExploration
            | ScheduleKind::PureExplorationEpochs
            | ScheduleKind::RegretMin => {
                (d / (self.epsilon_or_default() * self.delta)).ln().powi(2)
            }
            _ => (d / self.delta).ln().powi(2),
        }
    }

    /// Planned length of the constant-rate burn-in under a global derivative
    /// lower bound: C d / η with η = c/(dι).
    pub fn glb_horizon(&self) -> u64 {
        let eta = self.c_small / (self.d as f64 * self.iota());
        (self.c_big * self.d as f64 / eta).ceil() as u64
    }
}

/// Step size and exploration for one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rates {
    pub eta: f64,
    pub sigma: f64,
}

/// Closed-form rates at step `t >= 1`.
pub fn rates_at(config: &ScheduleConfig, t: u64) -> Result<Rates> {
    if t == 0 {
        return Err(Error::Range {
            name: "t",
            value: 0.0,
            range: "[1, inf)",
        });
    }
    let d = config.d as f64;
    let c = config.c_small;
    let big = config.c_big;
    let tf = t as f64;
    let sigma_g = config.gamma0.sqrt();
    match config.kind {
        ScheduleKind::Constant => Ok(Rates {
            eta: config
                .eta
                .ok_or_else(|| Error::Config("constant schedule needs schedule.eta".into()))?,
            sigma: config
                .sigma
                .ok_or_else(|| Error::Config("constant schedule needs schedule.sigma".into()))?,
        }),
        ScheduleKind::Counterexample => Ok(Rates {
            eta: config.eta.unwrap_or(COUNTEREXAMPLE_ETA),
            sigma: config.sigma.unwrap_or(COUNTEREXAMPLE_SIGMA),
        }),
        ScheduleKind::PureExploration => {
            let iota = config.iota();
            Ok(Rates {
                eta: (c / (iota * d)).min(big * d / tf),
                sigma: sigma_g,
            })
        }
        ScheduleKind::PureExplorationEpochs => {
            let plan = ExplorationEpochs::new(config);
            Ok(plan.rates_at(t))
        }
        ScheduleKind::RegretMin => {
            let iota = config.iota();
            Ok(Rates {
                eta: (c / (iota * d)).min((c * big / (iota * tf)).sqrt()),
                sigma: (big * d / tf.sqrt()).min(1.0).sqrt(),
            })
        }
        ScheduleKind::BurninGlb => Ok(Rates {
            eta: c / (d * config.iota()),
            sigma: sigma_g,
        }),
        ScheduleKind::BurninConvexEpochs => Err(Error::UnsupportedSchedule(
            "burnin_convex_epochs",
            "use epoch_rates_at with a built EpochPlan",
        )),
        ScheduleKind::Fig1Threshold => Err(Error::UnsupportedSchedule(
            "fig1_threshold",
            "it depends on the observed correlation; use Fig1Latch",
        )),
    }
}

/// Epoch-halving driver for the pure-exploration phase: epoch j runs
/// η_j = c ε_j/(d ι_j) for Δ_j = ⌈C d/η_j⌉ steps, with ε_j = (γ0/4) 2^{-j}
/// and ι_j = ln²(d/(ε_j δ)).
#[derive(Debug, Clone)]
pub struct ExplorationEpochs {
    c: f64,
    big: f64,
    d: f64,
    eps0: f64,
    delta: f64,
    sigma: f64,
    iota_override: Option<f64>,
}

impl ExplorationEpochs {
    pub fn new(config: &ScheduleConfig) -> Self {
        Self {
            c: config.c_small,
            big: config.c_big,
            d: config.d as f64,
            eps0: config.gamma0 / 4.0,
            delta: config.delta,
            sigma: config.gamma0.sqrt(),
            iota_override: config.iota_override,
        }
    }

    /// (ε_j, η_j, Δ_j) for epoch j.
    pub fn epoch(&self, j: u32) -> (f64, f64, u64) {
        let eps = self.eps0 * 0.5f64.powi(j as i32);
        let iota = self
            .iota_override
            .unwrap_or_else(|| (self.d / (eps * self.delta)).ln().powi(2));
        let eta = self.c * eps / (self.d * iota);
        let len = (self.big * self.d / eta).ceil().max(1.0) as u64;
        (eps, eta, len)
    }

    /// Epoch index containing step t.
    pub fn locate(&self, t: u64) -> u32 {
        let mut start = 1u64;
        let mut j = 0;
        loop {
            let (_, _, len) = self.epoch(j);
            if t < start.saturating_add(len) || j >= 60 {
                return j;
            }
            start += len;
            j += 1;
        }
    }

    pub fn rates_at(&self, t: u64) -> Rates {
        let (_, eta, _) = self.epoch(self.locate(t));
        Rates {
            eta,
            sigma: self.sigma,
        }
    }
}

/// One epoch of the convex burn-in plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Epoch {
    pub k: usize,
    pub m_lower: f64,
    pub m_upper: f64,
    pub eta: f64,
    /// Δ_k before rounding.
    pub length_exact: f64,
    /// ⌈Δ_k⌉, at least 1.
    pub length: u64,
    /// First step of the epoch.
    pub start: u64,
}

/// Piecewise-constant burn-in plan for links convex on [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochPlan {
    pub d: usize,
    pub gamma0: f64,
    pub iota: f64,
    pub sigma: f64,
    pub epochs: Vec<Epoch>,
}

/// m̲_k = (1-γ0)² √(k/d).
pub fn m_lower(k: usize, d: usize, gamma0: f64) -> f64 {
    (1.0 - gamma0).powi(2) * (k as f64 / d as f64).sqrt()
}

/// m̄_k = (1-γ0/4) √(k/d).
pub fn m_upper(k: usize, d: usize, gamma0: f64) -> f64 {
    (1.0 - gamma0 / 4.0) * (k as f64 / d as f64).sqrt()
}

/// Builds epochs k = 1..d-1 with η_k = c f'(m̲_k)/(ι d m̲_k) and
/// Δ_k = C d (m̲_{k+1} - m̲_k)/(η_k f'(m̲_k)), ι = ln²(d/δ).
pub fn build_epoch_plan(
    link: &LinkFunction,
    d: usize,
    gamma0: f64,
    c_small: f64,
    c_big: f64,
    delta: f64,
) -> Result<EpochPlan> {
    let iota = (d as f64 / delta).ln().powi(2);
    build_epoch_plan_with_iota(link, d, gamma0, c_small, c_big, iota)
}

pub fn build_epoch_plan_with_iota(
    link: &LinkFunction,
    d: usize,
    gamma0: f64,
    c_small: f64,
    c_big: f64,
    iota: f64,
) -> Result<EpochPlan> {
    if d < 4 {
        return Err(Error::Dimension {
            d,
            reason: "the epoch plan needs d >= 4",
        });
    }
    if !link.convex_on_unit {
        return Err(Error::RegimeMismatch {
            link: link.name().to_string(),
            regime: "convex",
        });
    }
    let df = d as f64;
    let first = link.df(m_lower(1, d, gamma0));
    if first == 0.0 {
        return Err(Error::ZeroDerivative {
            m: m_lower(1, d, gamma0),
        });
    }
    if first < 0.0 {
        return Err(Error::RegimeMismatch {
            link: link.name().to_string(),
            regime: "monotone",
        });
    }
    let mut epochs = Vec::with_capacity(d - 1);
    let mut start = 1u64;
    for k in 1..d {
        let lo = m_lower(k, d, gamma0);
        let next = m_lower(k + 1, d, gamma0);
        let fp = link.df(lo);
        if !(fp > 0.0) {
            return Err(Error::ZeroDerivative { m: lo });
        }
        let eta = c_small * fp / (iota * df * lo);
        let length_exact = c_big * df * (next - lo) / (eta * fp);
        let length = length_exact.ceil().max(1.0) as u64;
        epochs.push(Epoch {
            k,
            m_lower: lo,
            m_upper: m_upper(k, d, gamma0),
            eta,
            length_exact,
            length,
            start,
        });
        start += length;
    }
    Ok(EpochPlan {
        d,
        gamma0,
        iota,
        sigma: gamma0.sqrt(),
        epochs,
    })
}

impl EpochPlan {
    /// Total planned steps.
    pub fn total_length(&self) -> u64 {
        self.epochs.iter().map(|e| e.length).sum()
    }

    /// Total planned steps before rounding.
    pub fn total_length_exact(&self) -> f64 {
        self.epochs.iter().map(|e| e.length_exact).sum()
    }

    /// Rates and epoch index (1-based k) at step t.
    pub fn rates_at(&self, t: u64) -> Result<(Rates, usize)> {
        let horizon = self.total_length();
        if t == 0 || t > horizon {
            return Err(Error::HorizonExceeded { t, horizon });
        }
        let i = self.epochs.partition_point(|e| e.start <= t) - 1;
        let e = &self.epochs[i];
        Ok((
            Rates {
                eta: e.eta,
                sigma: self.sigma,
            },
            e.k,
        ))
    }
}

/// Epoch-plan rates at step t: (η, σ, epoch index).
pub fn epoch_rates_at(plan: &EpochPlan, t: u64) -> Result<(f64, f64, usize)> {
    plan.rates_at(t).map(|(r, k)| (r.eta, r.sigma, k))
}

/// Threshold schedule with a permanent latch: (η, σ_hi) until the observed
/// correlation first reaches the threshold, (η, σ_lo) from then on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fig1Latch {
    pub eta: f64,
    pub sigma_hi: f64,
    pub sigma_lo: f64,
    pub threshold: f64,
    latched: bool,
}

impl Default for Fig1Latch {
    fn default() -> Self {
        Self::new(FIG1_ETA, FIG1_SIGMA_HI, FIG1_SIGMA_LO, FIG1_THRESHOLD)
    }
}

impl Fig1Latch {
    pub fn new(eta: f64, sigma_hi: f64, sigma_lo: f64, threshold: f64) -> Self {
        Self {
            eta,
            sigma_hi,
            sigma_lo,
            threshold,
            latched: false,
        }
    }

    pub fn latched(&self) -> bool {
        self.latched
    }

    pub fn rates(&mut self, m: f64) -> Rates {
        if m >= self.threshold {
            self.latched = true;
        }
        Rates {
            eta: self.eta,
            sigma: if self.latched {
                self.sigma_lo
            } else {
                self.sigma_hi
            },
        }
    }
}

/// Stateless form of the latch for a single decision; `latched` carries the
/// state between calls.
pub fn fig1_rates(
    state_m: f64,
    eta_const: f64,
    sigma_hi: f64,
    sigma_lo: f64,
    threshold: f64,
    latched: &mut bool,
) -> Rates {
    let mut latch = Fig1Latch {
        latched: *latched,
        ..Fig1Latch::new(eta_const, sigma_hi, sigma_lo, threshold)
    };
    let r = latch.rates(state_m);
    *latched = latch.latched;
    r
}

/// Which part of a schedule produced a step's rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Burnin,
    Learning,
    Fixed,
}

/// Rates plus bookkeeping for one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRates {
    pub eta: f64,
    pub sigma: f64,
    pub phase: Phase,
    pub epoch: Option<usize>,
}

/// A schedule instance owned by one trajectory.
#[derive(Debug, Clone)]
pub struct Schedule {
    config: ScheduleConfig,
    plan: Option<EpochPlan>,
    exploration: Option<ExplorationEpochs>,
    latch: Option<Fig1Latch>,
    learning: Option<ScheduleConfig>,
    switched_at: Option<u64>,
    burnin_horizon: u64,
}

impl Schedule {
    pub fn new(config: ScheduleConfig, link: &LinkFunction) -> Result<Self> {
        config.validate()?;
        let plan = match config.kind {
            ScheduleKind::BurninConvexEpochs => Some(build_epoch_plan(
                link,
                config.d,
                config.gamma0,
                config.c_small,
                config.c_big,
                config.delta,
            )?),
            _ => None,
        };
        let exploration = match config.kind {
            ScheduleKind::PureExplorationEpochs => Some(ExplorationEpochs::new(&config)),
            _ => None,
        };
        let latch = match config.kind {
            ScheduleKind::Fig1Threshold => Some(Fig1Latch::new(
                config.eta.unwrap_or(FIG1_ETA),
                config.sigma.unwrap_or(FIG1_SIGMA_HI),
                config.sigma_lo.unwrap_or(FIG1_SIGMA_LO),
                config.threshold.unwrap_or(FIG1_THRESHOLD),
            )),
            _ => None,
        };
        let burnin_horizon = match (&plan, config.kind) {
            (Some(p), _) => p.total_length(),
            (None, ScheduleKind::BurninGlb) => config.glb_horizon(),
            _ => u64::MAX,
        };
        let learning = config.then.map(|kind| ScheduleConfig {
            kind,
            then: None,
            ..config.clone()
        });
        Ok(Self {
            config,
            plan,
            exploration,
            latch,
            learning,
            switched_at: None,
            burnin_horizon,
        })
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    pub fn plan(&self) -> Option<&EpochPlan> {
        self.plan.as_ref()
    }

    /// Planned burn-in length (u64::MAX for schedules without one).
    pub fn burnin_horizon(&self) -> u64 {
        self.burnin_horizon
    }

    /// Whether this schedule reads the observed correlation.
    pub fn needs_observation(&self) -> bool {
        self.latch.is_some() || (self.learning.is_some() && self.config.switch == SwitchRule::State)
    }

    /// Step at which the learning schedule took over, if it has.
    pub fn switched_at(&self) -> Option<u64> {
        self.switched_at
    }

    /// Rates at step t. `m` is the observed correlation, consulted only by
    /// threshold rules. Past the end of an epoch plan the last epoch's rates
    /// are held.
    pub fn rates(&mut self, t: u64, m: Option<f64>) -> Result<StepRates> {
        if let Some(learning) = &self.learning {
            if self.switched_at.is_none() {
                let switch = match self.config.switch {
                    SwitchRule::Time => t > self.burnin_horizon,
                    SwitchRule::State => {
                        let m = m.ok_or(Error::MissingInstrumentation(
                            "state-based phase switch needs the observed correlation",
                        ))?;
                        m >= 1.0 - self.config.gamma0 / 4.0
                    }
                };
                if switch {
                    self.switched_at = Some(t);
                }
            }
            if let Some(t0) = self.switched_at {
                let r = rates_at(learning, t - t0 + 1)?;
                return Ok(StepRates {
                    eta: r.eta,
                    sigma: r.sigma,
                    phase: Phase::Learning,
                    epoch: None,
                });
            }
        }
        if let Some(latch) = &mut self.latch {
            let m = m.ok_or(Error::MissingInstrumentation(
                "fig1_threshold needs the observed correlation",
            ))?;
            let r = latch.rates(m);
            return Ok(StepRates {
                eta: r.eta,
                sigma: r.sigma,
                phase: Phase::Fixed,
                epoch: None,
            });
        }
        if let Some(plan) = &self.plan {
            let tt = t.min(plan.total_length());
            let (r, k) = plan.rates_at(tt)?;
            return Ok(StepRates {
                eta: r.eta,
                sigma: r.sigma,
                phase: Phase::Burnin,
                epoch: Some(k),
            });
        }
        if let Some(ex) = &self.exploration {
            let r = ex.rates_at(t);
            return Ok(StepRates {
                eta: r.eta,
                sigma: r.sigma,
                phase: Phase::Learning,
                epoch: Some(ex.locate(t) as usize),
            });
        }
        let r = rates_at(&self.config, t)?;
        let phase = match self.config.kind {
            ScheduleKind::BurninGlb => Phase::Burnin,
            ScheduleKind::PureExploration | ScheduleKind::RegretMin => Phase::Learning,
            _ => Phase::Fixed,
        };
        Ok(StepRates {
            eta: r.eta,
            sigma: r.sigma,
            phase,
            epoch: None,
        })
    }

    /// Checks the step-size and exploration preconditions of the
    /// concentration argument: η <= 1/(C_se γ2), and σ² <= γ0 on burn-in and
    /// learning schedules (regret_min may use σ² up to 1 early on).
    pub fn check_preconditions(
        &self,
        rates: &StepRates,
        link: &LinkFunction,
        c_se: f64,
    ) -> Result<()> {
        let cap = 1.0 / (c_se * link.gamma2);
        if rates.eta > cap {
            return Err(Error::Hypothesis(format!(
                "step size {} exceeds 1/(C_se gamma2) = {cap}",
                rates.eta
            )));
        }
        let kind = match rates.phase {
            Phase::Learning => self.learning.as_ref().map_or(self.config.kind, |l| l.kind),
            _ => self.config.kind,
        };
        if kind.bounded_exploration()
            && rates.sigma * rates.sigma > self.config.gamma0 * (1.0 + 1e-12)
        {
            return Err(Error::Hypothesis(format!(
                "sigma² = {} exceeds gamma0 = {}",
                rates.sigma * rates.sigma,
                self.config.gamma0
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_logs(kind: ScheduleKind, d: usize) -> ScheduleConfig {
        ScheduleConfig {
            c_small: 1.0,
            c_big: 1.0,
            iota_override: Some(1.0),
            ..ScheduleConfig::new(kind, d, 0.1)
        }
    }

    #[test]
    fn pure_exploration_worked_values() {
        let cfg = unit_logs(ScheduleKind::PureExploration, 20);
        assert!((rates_at(&cfg, 1).unwrap().eta - 0.05).abs() < 1e-15);
        assert!((rates_at(&cfg, 10_000).unwrap().eta - 0.002).abs() < 1e-15);
        assert!((rates_at(&cfg, 1).unwrap().sigma - 0.1f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn regret_min_worked_values() {
        let cfg = unit_logs(ScheduleKind::RegretMin, 20);
        let r = rates_at(&cfg, 1_000_000).unwrap();
        assert!((r.sigma * r.sigma - 0.02).abs() < 1e-12);
        assert!((r.eta - 1e-3).abs() < 1e-15);
        assert_eq!(rates_at(&cfg, 1).unwrap().sigma, 1.0);
    }

    #[test]
    fn unsupported_kinds() {
        let cfg = ScheduleConfig::new(ScheduleKind::BurninConvexEpochs, 16, 0.1);
        assert!(matches!(
            rates_at(&cfg, 1),
            Err(Error::UnsupportedSchedule(..))
        ));
        let cfg = ScheduleConfig::new(ScheduleKind::Fig1Threshold, 16, 0.1);
        assert!(matches!(
            rates_at(&cfg, 1),
            Err(Error::UnsupportedSchedule(..))
        ));
        assert!(rates_at(&ScheduleConfig::new(ScheduleKind::Constant, 16, 0.1), 1).is_err());
    }

    #[test]
    fn iota_uses_natural_logs() {
        let mut cfg = ScheduleConfig::new(ScheduleKind::BurninGlb, 10, 0.1);
        cfg.delta = 0.1;
        assert!((cfg.iota() - 100f64.ln().powi(2)).abs() < 1e-12);
        cfg.kind = ScheduleKind::PureExploration;
        cfg.epsilon = Some(0.5);
        assert!((cfg.iota() - 200f64.ln().powi(2)).abs() < 1e-12);
    }

    #[test]
    fn identity_plan_first_epoch() {
        let link = LinkFunction::identity();
        let plan = build_epoch_plan_with_iota(&link, 16, 0.1, 1.0, 1.0, 1.0).unwrap();
        let e1 = plan.epochs[0];
        assert!((e1.m_lower - 0.2025).abs() < 1e-15);
        let eta1 = 1.0 / (16.0 * 0.2025);
        assert!((e1.eta - eta1).abs() < 1e-15);
        let delta1 = 16.0 * 0.81 * ((2.0f64 / 16.0).sqrt() - 0.25) / eta1;
        assert!((e1.length_exact - delta1).abs() < 1e-12);
        assert_eq!(plan.epochs.len(), 15);
    }

    #[test]
    fn cubic_plan_fourth_epoch() {
        let plan =
            build_epoch_plan_with_iota(&LinkFunction::cubic(), 16, 0.1, 1.0, 1.0, 1.0).unwrap();
        let e4 = plan.epochs[3];
        let fp = 3.0 * (0.81f64 * 0.5).powi(2);
        assert!((fp - 0.492_075).abs() < 1e-12);
        assert!((e4.eta - fp / (16.0 * 0.405)).abs() < 1e-15);
    }

    #[test]
    fn plan_rejections() {
        let ce = LinkFunction::counterexample();
        assert!(build_epoch_plan(&ce, 16, 0.1, 0.5, 4.0, 0.01).is_err());
        assert!(build_epoch_plan(&LinkFunction::logistic(), 16, 0.1, 0.5, 4.0, 0.01).is_err());
        assert!(build_epoch_plan(&LinkFunction::cubic(), 3, 0.1, 0.5, 4.0, 0.01).is_err());
        let flat =
            LinkFunction::piecewise("flat", vec![(-1.0, 0.0), (0.5, 0.0), (1.0, 1.0)]).unwrap();
        assert!(matches!(
            build_epoch_plan(&flat, 16, 0.1, 0.5, 4.0, 0.01),
            Err(Error::ZeroDerivative { .. })
        ));
    }

    #[test]
    fn plan_lookup_and_end() {
        let plan = build_epoch_plan(&LinkFunction::identity(), 8, 0.1, 0.5, 4.0, 0.01).unwrap();
        let end = plan.total_length();
        assert_eq!(epoch_rates_at(&plan, 1).unwrap().2, 1);
        assert_eq!(epoch_rates_at(&plan, end).unwrap().2, 7);
        let second = plan.epochs[1].start;
        assert_eq!(epoch_rates_at(&plan, second - 1).unwrap().2, 1);
        assert_eq!(epoch_rates_at(&plan, second).unwrap().2, 2);
        assert!(matches!(
            epoch_rates_at(&plan, end + 1),
            Err(Error::HorizonExceeded { .. })
        ));
    }

    #[test]
    fn latch_semantics() {
        let mut latch = Fig1Latch::default();
        assert_eq!(
            latch.rates(0.3),
            Rates {
                eta: 0.002,
                sigma: 0.5
            }
        );
        assert_eq!(
            latch.rates(0.71),
            Rates {
                eta: 0.002,
                sigma: 0.2
            }
        );
        assert_eq!(
            latch.rates(0.6),
            Rates {
                eta: 0.002,
                sigma: 0.2
            }
        );
        let mut latched = false;
        fig1_rates(0.8, 0.002, 0.5, 0.2, 0.7, &mut latched);
        assert!(latched);
    }

    #[test]
    fn counterexample_defaults() {
        let cfg = ScheduleConfig::new(ScheduleKind::Counterexample, 20, 0.1);
        assert_eq!(
            rates_at(&cfg, 5).unwrap(),
            Rates {
                eta: 0.001,
                sigma: 0.1
            }
        );
    }

    #[test]
    fn config_validation() {
        let mut cfg = ScheduleConfig::new(ScheduleKind::PureExploration, 10, 0.1);
        cfg.c_small = 100.0;
        cfg.c_big = 100.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ScheduleConfig::new(ScheduleKind::PureExploration, 10, 0.1);
        cfg.then = Some(ScheduleKind::RegretMin);
        assert!(cfg.validate().is_err());
        let mut cfg = ScheduleConfig::new(ScheduleKind::BurninGlb, 10, 0.1);
        cfg.then = Some(ScheduleKind::Constant);
        assert!(cfg.validate().is_err());
        cfg.then = Some(ScheduleKind::RegretMin);
        assert!(cfg.validate().is_ok());
        assert!("nope".parse::<ScheduleKind>().is_err());
        for k in ScheduleKind::ALL {
            assert_eq!(k.id().parse::<ScheduleKind>().unwrap(), k);
        }
    }

    #[test]
    fn composite_switches_on_time() {
        let link = LinkFunction::identity();
        let mut cfg = ScheduleConfig::new(ScheduleKind::BurninGlb, 10, 0.1);
        cfg.then = Some(ScheduleKind::PureExploration);
        let mut s = Schedule::new(cfg, &link).unwrap();
        let h = s.burnin_horizon();
        assert_eq!(s.rates(h, None).unwrap().phase, Phase::Burnin);
        assert_eq!(s.rates(h + 1, None).unwrap().phase, Phase::Learning);
        assert_eq!(s.switched_at(), Some(h + 1));
    }

    #[test]
    fn composite_switches_on_state() {
        let link = LinkFunction::identity();
        let mut cfg = ScheduleConfig::new(ScheduleKind::BurninGlb, 10, 0.1);
        cfg.then = Some(ScheduleKind::RegretMin);
        cfg.switch = SwitchRule::State;
        let mut s = Schedule::new(cfg, &link).unwrap();
        assert!(s.needs_observation());
        assert_eq!(s.rates(5, Some(0.5)).unwrap().phase, Phase::Burnin);
        assert_eq!(s.rates(6, Some(0.98)).unwrap().phase, Phase::Learning);
        assert_eq!(s.rates(7, Some(0.5)).unwrap().phase, Phase::Learning);
        assert!(s.rates(8, None).is_ok());
    }

    #[test]
    fn exploration_epochs_halve() {
        let cfg = ScheduleConfig::new(ScheduleKind::PureExplorationEpochs, 10, 0.1);
        let ex = ExplorationEpochs::new(&cfg);
        let (e0, eta0, len0) = ex.epoch(0);
        let (e1, eta1, _) = ex.epoch(1);
        assert!((e0 - 0.025).abs() < 1e-15 && (e1 - 0.0125).abs() < 1e-15);
        assert!(eta1 < eta0);
        assert_eq!(ex.locate(1), 0);
        assert_eq!(ex.locate(len0), 0);
        assert_eq!(ex.locate(len0 + 1), 1);
    }

    #[test]
    fn preconditions() {
        let link = LinkFunction::cubic();
        let s = Schedule::new(
            ScheduleConfig::new(ScheduleKind::BurninConvexEpochs, 8, 0.1),
            &link,
        )
        .unwrap();
        let ok = StepRates {
            eta: 0.01,
            sigma: 0.3,
            phase: Phase::Burnin,
            epoch: Some(1),
        };
        assert!(s.check_preconditions(&ok, &link, 1.0).is_ok());
        let wide = StepRates { sigma: 0.5, ..ok };
        assert!(s.check_preconditions(&wide, &link, 1.0).is_err());
        let big = StepRates { eta: 0.5, ..ok };
        assert!(s.check_preconditions(&big, &link, 1.0).is_err());
    }
}
