//! The bandit environment and the interactive spherical SGD learner.
//!
//! The learner only sees its own iterate, the actions it plays and the
//! rewards it receives. Correlations with the hidden direction are computed
//! by an [`Observer`], which the learner never consults.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linkfn::LinkFunction;
use crate::rng::SimRng;
use crate::sphere::{dot, fill_tangent, norm, sample_unit, UnitVector};

/// Correlations may leave [-1, 1] by this much through rounding and are
/// clamped; larger excursions abort.
pub const CORRELATION_TOL: f64 = 1e-9;

/// Reward noise. Both variants are 1-sub-Gaussian within their ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    /// N(0, std²) with std <= 1.
    Gaussian { std: f64 },
    /// Uniform on [-√3 std, √3 std] with std <= 1/√3, so |noise| <= 1.
    Uniform { std: f64 },
}

impl NoiseModel {
    pub fn gaussian(std: f64) -> Result<Self> {
        let model = NoiseModel::Gaussian { std };
        model.validate()?;
        Ok(model)
    }

    pub fn uniform(std: f64) -> Result<Self> {
        let model = NoiseModel::Uniform { std };
        model.validate()?;
        Ok(model)
    }

    pub fn std(&self) -> f64 {
        match *self {
            NoiseModel::Gaussian { std } | NoiseModel::Uniform { std } => std,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::Gaussian { std } if !(0.0..=1.0).contains(&std) => Err(Error::Range {
                name: "noise_std",
                value: std,
                range: "[0, 1]",
            }),
            NoiseModel::Uniform { std } if !(0.0..=1.0 / 3f64.sqrt()).contains(&std) => {
                Err(Error::Range {
                    name: "noise_std",
                    value: std,
                    range: "[0, 1/sqrt(3)] for uniform noise",
                })
            }
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn sample(&self, rng: &mut SimRng) -> f64 {
        match *self {
            NoiseModel::Gaussian { std } => {
                if std == 0.0 {
                    0.0
                } else {
                    std * rng.sample::<f64, _>(StandardNormal)
                }
            }
            NoiseModel::Uniform { std } => {
                if std == 0.0 {
                    0.0
                } else {
                    std * 3f64.sqrt() * rng.random_range(-1.0..=1.0)
                }
            }
        }
    }
}

/// Hidden direction, link and reward noise.
#[derive(Debug, Clone)]
pub struct Environment {
    pub theta_star: UnitVector,
    pub link: LinkFunction,
    pub noise: NoiseModel,
}

impl Environment {
    pub fn new(theta_star: UnitVector, link: LinkFunction, noise: NoiseModel) -> Result<Self> {
        noise.validate()?;
        Ok(Self {
            theta_star,
            link,
            noise,
        })
    }

    pub fn dim(&self) -> usize {
        self.theta_star.dim()
    }

    /// Observer bound to this environment, for instrumentation only.
    pub fn observer(&self) -> Observer<'_> {
        Observer {
            theta_star: self.theta_star.coords(),
            link: &self.link,
        }
    }

    /// Reward f(<θ*, a>) + noise for a unit-norm action.
    pub fn pull(&self, action: &[f64], rng: &mut SimRng) -> Result<f64> {
        let n = norm(action);
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::Norm { norm: n });
        }
        Ok(self.pull_unchecked(action, rng))
    }

    #[inline]
    pub(crate) fn pull_unchecked(&self, action: &[f64], rng: &mut SimRng) -> f64 {
        let x = dot(self.theta_star.coords(), action);
        self.link.f(x) + self.noise.sample(rng)
    }
}

/// The learner's iterate and step counter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SgdState {
    pub theta: UnitVector,
    /// Index of the next step, starting at 1.
    pub t: u64,
}

impl SgdState {
    pub fn new(theta: UnitVector) -> Self {
        Self { theta, t: 1 }
    }

    pub fn dim(&self) -> usize {
        self.theta.dim()
    }
}

/// One proposed action a = √(1-σ²) θ + σ Z.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionSample {
    pub action: UnitVector,
    pub tangent: UnitVector,
    pub sigma: f64,
    /// <θ, a>, equal to √(1-σ²) by construction.
    pub align_current: f64,
}

fn check_sigma(sigma: f64) -> Result<()> {
    if (0.0..=1.0).contains(&sigma) {
        Ok(())
    } else {
        Err(Error::Range {
            name: "sigma",
            value: sigma,
            range: "[0, 1]",
        })
    }
}

/// Writes a fresh tangent direction into `z` and the action into `a`.
/// Returns √(1-σ²).
#[inline]
pub(crate) fn propose_into(
    theta: &[f64],
    sigma: f64,
    rng: &mut SimRng,
    z: &mut [f64],
    a: &mut [f64],
) -> Result<f64> {
    fill_tangent(theta, rng, z)?;
    if sigma == 0.0 {
        a.copy_from_slice(theta);
        return Ok(1.0);
    }
    compose_action(theta, z, sigma, a);
    Ok((1.0 - sigma * sigma).sqrt())
}

#[inline]
fn compose_action(theta: &[f64], z: &[f64], sigma: f64, a: &mut [f64]) {
    let s = (1.0 - sigma * sigma).sqrt();
    for ((ai, ti), zi) in a.iter_mut().zip(theta).zip(z) {
        *ai = s * ti + sigma * zi;
    }
}

/// Samples an action around the current iterate; σ = 0 plays θ itself.
/// A tangent is drawn either way (d = 2 uses the two-point tangent sphere).
pub fn propose_action(state: &SgdState, sigma: f64, rng: &mut SimRng) -> Result<ActionSample> {
    check_sigma(sigma)?;
    let d = state.dim();
    let (mut z, mut a) = (vec![0.0; d], vec![0.0; d]);
    let s = propose_into(state.theta.coords(), sigma, rng, &mut z, &mut a)?;
    Ok(ActionSample {
        action: UnitVector::from_raw(a),
        tangent: UnitVector::from_raw(z),
        sigma,
        align_current: s,
    })
}

/// Builds the action for a given tangent, e.g. to force Z in tests.
pub fn propose_with_tangent(
    state: &SgdState,
    sigma: f64,
    tangent: UnitVector,
) -> Result<ActionSample> {
    check_sigma(sigma)?;
    if tangent.dim() != state.dim() {
        return Err(Error::Dimension {
            d: tangent.dim(),
            reason: "tangent dimension differs from the iterate",
        });
    }
    let ortho = state.theta.dot(&tangent);
    if ortho.abs() > 1e-10 {
        return Err(Error::Numerical(format!(
            "tangent is not orthogonal to θ (<θ, Z> = {ortho:e})"
        )));
    }
    let mut a = vec![0.0; state.dim()];
    compose_action(state.theta.coords(), tangent.coords(), sigma, &mut a);
    Ok(ActionSample {
        action: UnitVector::from_raw(a),
        tangent,
        sigma,
        align_current: (1.0 - sigma * sigma).sqrt(),
    })
}

/// Scalar pieces of one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfStep {
    /// Coefficient k with θ_{t+1/2} = θ_t - k Z.
    pub coef: f64,
    /// ‖θ_{t+1/2}‖.
    pub half_norm: f64,
}

/// Spherical gradient step coefficient η (f(s) - r) f'(s) σ with s = √(1-σ²).
#[inline]
pub fn step_coefficient(link: &LinkFunction, sigma: f64, reward: f64, eta: f64) -> f64 {
    let s = (1.0 - sigma * sigma).sqrt();
    eta * (link.f(s) - reward) * link.df(s) * sigma
}

/// Applies θ ← (θ - k Z) / ‖θ - k Z‖ in place.
#[inline]
pub(crate) fn update_in_place(theta: &mut [f64], z: &[f64], coef: f64) -> Result<HalfStep> {
    for (ti, zi) in theta.iter_mut().zip(z) {
        *ti -= coef * zi;
    }
    let half_norm = norm(theta);
    if !(half_norm >= 1e-8) || !half_norm.is_finite() {
        return Err(Error::Numerical(format!("half-step norm {half_norm:e}")));
    }
    theta.iter_mut().for_each(|x| *x /= half_norm);
    Ok(HalfStep { coef, half_norm })
}

/// Half-step through the full projection form θ - η (f(<θ,a>) - r) f'(<θ,a>) (I - θθᵀ) a.
pub fn half_step_full_projection(
    theta: &[f64],
    action: &[f64],
    reward: f64,
    eta: f64,
    link: &LinkFunction,
) -> Vec<f64> {
    let x = dot(theta, action);
    let g = eta * (link.f(x) - reward) * link.df(x);
    theta
        .iter()
        .zip(action)
        .map(|(t, a)| t - g * (a - x * t))
        .collect()
}

fn check_sample(state: &SgdState, sample: &ActionSample, eta: f64) -> Result<()> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::Range {
            name: "eta",
            value: eta,
            range: "(0, inf)",
        });
    }
    let s = (1.0 - sample.sigma * sample.sigma).sqrt();
    let align = state.theta.dot(&sample.action);
    if (align - s).abs() > 1e-10 || (sample.align_current - s).abs() > 1e-10 {
        return Err(Error::Numerical(format!(
            "action was not proposed from this iterate (<θ, a> = {align}, expected {s})"
        )));
    }
    Ok(())
}

/// One SGD update. With `verify_projection` the result is recomputed through
/// the full projection form and required to agree within 1e-12.
pub fn sgd_step_with(
    state: &SgdState,
    sample: &ActionSample,
    reward: f64,
    eta: f64,
    link: &LinkFunction,
    verify_projection: bool,
) -> Result<(SgdState, HalfStep)> {
    check_sample(state, sample, eta)?;
    let coef = step_coefficient(link, sample.sigma, reward, eta);
    let mut theta = state.theta.coords().to_vec();
    let half = update_in_place(&mut theta, sample.tangent.coords(), coef)?;
    if verify_projection {
        let full = half_step_full_projection(
            state.theta.coords(),
            sample.action.coords(),
            reward,
            eta,
            link,
        );
        let full_norm = norm(&full);
        let gap = full
            .iter()
            .zip(&theta)
            .map(|(f, t)| (f / full_norm - t).abs())
            .fold(0.0, f64::max);
        if gap > 1e-12 {
            return Err(Error::Numerical(format!(
                "projection form disagrees with tangent form by {gap:e}"
            )));
        }
    }
    Ok((
        SgdState {
            theta: UnitVector::from_raw(theta),
            t: state.t + 1,
        },
        half,
    ))
}

/// One SGD update through the tangent form.
pub fn sgd_step(
    state: &SgdState,
    sample: &ActionSample,
    reward: f64,
    eta: f64,
    link: &LinkFunction,
) -> Result<SgdState> {
    sgd_step_with(state, sample, reward, eta, link, cfg!(debug_assertions)).map(|(s, _)| s)
}

/// Correlations (m_{t+1/2}, m_{t+1}) of one update with θ*, plus the
/// correlation of the normalized iterate itself. m_{t+1} is taken from the
/// scalar recursion m_{t+1/2}/√(1 + k²), so m_{t+1} <= m_{t+1/2} holds exactly
/// when m_{t+1/2} >= 0; the vector value agrees with it to rounding.
pub fn half_step_correlation(
    state: &SgdState,
    sample: &ActionSample,
    reward: f64,
    eta: f64,
    link: &LinkFunction,
    theta_star: &UnitVector,
) -> Result<StepCorrelations> {
    let (next, half) = sgd_step_with(state, sample, reward, eta, link, false)?;
    let m = state.theta.dot(theta_star);
    let m_half = m - half.coef * sample.tangent.dot(theta_star);
    let m_next = clamp_correlation(m_half / (1.0 + half.coef * half.coef).sqrt())?;
    Ok(StepCorrelations {
        m_half,
        m_next,
        m_iterate: clamp_correlation(next.theta.dot(theta_star))?,
        next,
    })
}

/// Output of [`half_step_correlation`].
#[derive(Debug, Clone)]
pub struct StepCorrelations {
    pub m_half: f64,
    pub m_next: f64,
    /// <θ*, θ_{t+1}> computed from the stored iterate.
    pub m_iterate: f64,
    pub next: SgdState,
}

/// Clamps rounding excursions of a correlation; rejects real ones.
pub fn clamp_correlation(m: f64) -> Result<f64> {
    if m.abs() <= 1.0 {
        Ok(m)
    } else if m.abs() <= 1.0 + CORRELATION_TOL {
        Ok(m.clamp(-1.0, 1.0))
    } else {
        Err(Error::Numerical(format!("correlation {m} outside [-1, 1]")))
    }
}

/// Instrumentation-side view of θ*: correlations and regrets.
#[derive(Debug, Clone, Copy)]
pub struct Observer<'a> {
    theta_star: &'a [f64],
    link: &'a LinkFunction,
}

impl<'a> Observer<'a> {
    pub fn new(theta_star: &'a UnitVector, link: &'a LinkFunction) -> Self {
        Self {
            theta_star: theta_star.coords(),
            link,
        }
    }

    /// <θ*, v> with rounding clamp.
    pub fn correlation(&self, v: &[f64]) -> Result<f64> {
        clamp_correlation(dot(self.theta_star, v))
    }

    /// Unclamped <θ*, v>.
    #[inline]
    pub fn project(&self, v: &[f64]) -> f64 {
        dot(self.theta_star, v)
    }

    /// f(1) - f(x).
    #[inline]
    pub fn regret(&self, x: f64) -> f64 {
        self.link.f(1.0) - self.link.f(x)
    }
}

/// A point with prescribed correlation `m` with θ*, in a uniformly random
/// direction orthogonal to θ*.
pub fn init_with_correlation(
    theta_star: &UnitVector,
    m: f64,
    rng: &mut SimRng,
) -> Result<UnitVector> {
    if !(-1.0..=1.0).contains(&m) {
        return Err(Error::Range {
            name: "initial correlation",
            value: m,
            range: "[-1, 1]",
        });
    }
    let mut z = vec![0.0; theta_star.dim()];
    fill_tangent(theta_star.coords(), rng, &mut z)?;
    let r = (1.0 - m * m).sqrt();
    let v = theta_star
        .coords()
        .iter()
        .zip(&z)
        .map(|(t, zi)| m * t + r * zi)
        .collect();
    Ok(UnitVector::from_raw(v))
}

/// Keeps the direction of `theta` orthogonal to θ* but sets its correlation
/// with θ* to `m`.
pub fn project_to_correlation(
    theta: &UnitVector,
    theta_star: &UnitVector,
    m: f64,
) -> Result<UnitVector> {
    if !(-1.0..=1.0).contains(&m) {
        return Err(Error::Range {
            name: "initial correlation",
            value: m,
            range: "[-1, 1]",
        });
    }
    let c = theta.dot(theta_star);
    let mut perp: Vec<f64> = theta
        .coords()
        .iter()
        .zip(theta_star.coords())
        .map(|(t, s)| t - c * s)
        .collect();
    let n = norm(&perp);
    if n < 1e-12 {
        return Err(Error::Numerical("iterate is parallel to θ*".into()));
    }
    let r = (1.0 - m * m).sqrt();
    perp.iter_mut()
        .zip(theta_star.coords())
        .for_each(|(p, s)| *p = m * s + r * *p / n);
    Ok(UnitVector::from_raw(perp))
}

/// Uniform initial iterate.
pub fn random_init(d: usize, rng: &mut SimRng) -> Result<UnitVector> {
    sample_unit(d, rng)
}
