//! Sampling on the unit sphere and its one-dimensional marginals.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::Serialize;
use statrs::function::beta::{beta_reg, ln_beta};

use crate::error::{Error, Result};
use crate::linkfn::LinkFunction;
use crate::report::{BoundReport, Check};
use crate::rng::{SimRng, StreamKey};
use crate::stats::{mc_chunks, MeanVar};

/// Norm tolerance for vectors accepted as unit vectors.
pub const NORM_TOL: f64 = 1e-9;

/// A point on the unit sphere in R^d.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitVector(Vec<f64>);

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

impl UnitVector {
    /// Accepts `coords` whose norm is within [`NORM_TOL`] of 1 and rescales
    /// them to unit norm exactly (up to rounding).
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        let n = norm(&coords);
        if !((n - 1.0).abs() <= NORM_TOL) {
            return Err(Error::Norm { norm: n });
        }
        Ok(Self::from_raw(coords))
    }

    /// Normalizes an arbitrary nonzero vector.
    pub fn normalize(coords: Vec<f64>) -> Result<Self> {
        let n = norm(&coords);
        if !(n > 1e-300) || !n.is_finite() {
            return Err(Error::Numerical(format!(
                "cannot normalize vector of norm {n}"
            )));
        }
        Ok(Self(coords.into_iter().map(|x| x / n).collect()))
    }

    pub(crate) fn from_raw(mut coords: Vec<f64>) -> Self {
        let n = norm(&coords);
        if n != 1.0 {
            coords.iter_mut().for_each(|x| *x /= n);
        }
        Self(coords)
    }

    /// The `i`-th standard basis vector of R^d.
    pub fn basis(d: usize, i: usize) -> Result<Self> {
        if i >= d {
            return Err(Error::Dimension {
                d,
                reason: "basis index out of range",
            });
        }
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        Ok(Self(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &UnitVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn neg(&self) -> Self {
        Self(self.0.iter().map(|x| -x).collect())
    }
}

fn fill_gaussian(rng: &mut SimRng, out: &mut [f64]) {
    for x in out.iter_mut() {
        *x = rng.sample(StandardNormal);
    }
}

/// Uniform draw from S^{d-1} (normalized standard Gaussian).
pub fn sample_unit(d: usize, rng: &mut SimRng) -> Result<UnitVector> {
    if d < 2 {
        return Err(Error::Dimension {
            d,
            reason: "the sphere needs d >= 2",
        });
    }
    let mut v = vec![0.0; d];
    loop {
        fill_gaussian(rng, &mut v);
        let n = norm(&v);
        if n > 1e-150 {
            v.iter_mut().for_each(|x| *x /= n);
            return Ok(UnitVector(v));
        }
    }
}

/// Writes a uniform unit vector orthogonal to `theta` into `out`.
///
/// For d >= 3 this projects a Gaussian onto the tangent space and normalizes.
/// For d = 2 the tangent sphere is the two points ±theta^perp, each returned
/// with probability 1/2.
pub fn fill_tangent(theta: &[f64], rng: &mut SimRng, out: &mut [f64]) -> Result<()> {
    let d = theta.len();
    if d < 2 {
        return Err(Error::Dimension {
            d,
            reason: "tangent sampling needs d >= 2",
        });
    }
    if d == 2 {
        let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
        out[0] = -s * theta[1];
        out[1] = s * theta[0];
        return Ok(());
    }
    loop {
        fill_gaussian(rng, out);
        let p = dot(out, theta);
        out.iter_mut().zip(theta).for_each(|(z, t)| *z -= p * t);
        // Second pass removes the rounding residue along theta.
        let p = dot(out, theta);
        out.iter_mut().zip(theta).for_each(|(z, t)| *z -= p * t);
        let n = norm(out);
        if n > 1e-150 {
            out.iter_mut().for_each(|z| *z /= n);
            return Ok(());
        }
    }
}

/// Uniform draw from the unit sphere of the tangent space at `theta`.
pub fn sample_tangent(theta: &UnitVector, rng: &mut SimRng) -> Result<UnitVector> {
    let mut out = vec![0.0; theta.dim()];
    fill_tangent(&theta.0, rng, &mut out)?;
    Ok(UnitVector(out))
}

/// Law of one coordinate of a uniform point on S^{d-1}: density proportional
/// to (1 - x²)^{(d-3)/2} on [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereMarginal {
    d: usize,
    beta: Beta<f64>,
    ln_norm: f64,
}

impl SphereMarginal {
    /// `d` is the ambient dimension. d = 2 (the arcsine law) is accepted for
    /// internal use; its density is unbounded at ±1.
    pub fn new(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::Dimension {
                d,
                reason: "sphere marginal needs d >= 2",
            });
        }
        let a = (d as f64 - 1.0) / 2.0;
        Ok(Self {
            d,
            beta: Beta::new(a, a).map_err(|e| Error::Numerical(e.to_string()))?,
            ln_norm: ln_beta(0.5, a),
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Normalized density; zero outside [-1, 1].
    pub fn pdf(&self, x: f64) -> f64 {
        if !(x.abs() <= 1.0) {
            return 0.0;
        }
        let k = (self.d as f64 - 3.0) / 2.0;
        if k == 0.0 {
            return (-self.ln_norm).exp();
        }
        (k * (1.0 - x * x).ln() - self.ln_norm).exp()
    }

    /// CDF via the regularized incomplete beta function.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= -1.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        let a = (self.d as f64 - 1.0) / 2.0;
        beta_reg(a, a, 0.5 * (1.0 + x))
    }

    /// X = 2B - 1 with B ~ Beta((d-1)/2, (d-1)/2).
    #[inline]
    pub fn sample(&self, rng: &mut SimRng) -> f64 {
        2.0 * self.beta.sample(rng) - 1.0
    }

    /// First coordinate of a uniform point on S^{d-1}; slower, kept as an
    /// independent construction of the same law.
    pub fn sample_via_coordinate(&self, rng: &mut SimRng) -> f64 {
        sample_unit(self.d, rng).expect("d >= 2").0[0]
    }
}

/// Monte-Carlo check of the spherical Stein identity
/// E[X g(X)] = E[g'(X)(1 - X²)] / (d - 1) for g(x) = f(shift + scale x)
/// and X a coordinate of a uniform point on S^{d-1}.
pub fn stein_residual(
    link: &LinkFunction,
    d: usize,
    shift: f64,
    scale: f64,
    n_mc: usize,
    key: StreamKey,
) -> Result<BoundReport> {
    if d < 3 {
        return Err(Error::Dimension {
            d,
            reason: "Stein identity needs d >= 3",
        });
    }
    if shift.abs() + scale.abs() > 1.0 + 1e-12 {
        return Err(Error::Range {
            name: "|shift| + |scale|",
            value: shift.abs() + scale.abs(),
            range: "[0, 1]",
        });
    }
    let marg = SphereMarginal::new(d)?;
    let k = 1.0 / (d as f64 - 1.0);
    let parts = mc_chunks(n_mc, key, |rng, n| {
        let (mut lhs, mut rhs, mut diff) = (MeanVar::new(), MeanVar::new(), MeanVar::new());
        for _ in 0..n {
            let x = marg.sample(rng);
            let u = shift + scale * x;
            let l = x * link.f(u);
            let r = k * scale * link.df(u) * (1.0 - x * x);
            lhs.push(l);
            rhs.push(r);
            diff.push(l - r);
        }
        [lhs, rhs, diff]
    });
    let mut acc = [MeanVar::new(); 3];
    for p in &parts {
        for (a, b) in acc.iter_mut().zip(p) {
            a.merge(b);
        }
    }
    let [lhs, rhs, diff] = acc;
    let tol = 3.0 * (lhs.std_error() + rhs.std_error());
    Ok(BoundReport::compare(
        format!("stein[{},d={d}]", link.name()),
        Check::TwoSided,
        rhs.mean(),
        lhs.mean(),
        diff.std_error(),
        tol,
    )
    .with("d", d as f64)
    .with("shift", shift)
    .with("scale", scale)
    .with("lhs", lhs.mean())
    .with("rhs", rhs.mean())
    .with("se_lhs", lhs.std_error())
    .with("se_rhs", rhs.std_error())
    .with("residual", diff.mean())
    .with("n_mc", n_mc as f64))
}

/// Convex test functions for the convex-order comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvexTest {
    /// g(u) = u; both convex and concave, so the gap must vanish.
    Linear,
    Square,
    /// g(u) = exp(u / 2).
    ExpHalf,
    /// g(u) = ln(1 + exp(d u - 1)).
    SoftplusShift,
}

impl ConvexTest {
    pub const ALL: [ConvexTest; 4] = [
        ConvexTest::Linear,
        ConvexTest::Square,
        ConvexTest::ExpHalf,
        ConvexTest::SoftplusShift,
    ];

    pub fn id(self) -> &'static str {
        match self {
            ConvexTest::Linear => "linear",
            ConvexTest::Square => "square",
            ConvexTest::ExpHalf => "exp_half",
            ConvexTest::SoftplusShift => "softplus_shift",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|g| g.id() == id)
            .ok_or_else(|| Error::Config(format!("unknown convex test function `{id}`")))
    }

    fn apply(self, u: f64, d: f64) -> f64 {
        match self {
            ConvexTest::Linear => u,
            ConvexTest::Square => u * u,
            ConvexTest::ExpHalf => (0.5 * u).exp(),
            ConvexTest::SoftplusShift => {
                let z = d * u - 1.0;
                if z > 30.0 {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                }
            }
        }
    }
}

/// E[g(Y_gauss²)] - E[g(Y_sphere²)] with Y_gauss = <α, N(0, I/d)> and
/// Y_sphere = <α, Unif(S^{d-1})>. Both are built from the same Gaussian draw
/// G (Y_sphere uses G / |G|), so the paired difference has small variance.
/// The verdict requires gap >= -3 SE.
pub fn convex_order_gap(
    d: usize,
    g: ConvexTest,
    n_mc: usize,
    key: StreamKey,
) -> Result<BoundReport> {
    if d < 2 {
        return Err(Error::Dimension {
            d,
            reason: "convex-order check needs d >= 2",
        });
    }
    let alpha = sample_unit(d, &mut key.named("alpha").rng())?;
    let df = d as f64;
    let sqrt_d = df.sqrt();
    let parts = mc_chunks(n_mc, key.named("draws"), |rng, n| {
        let mut v = vec![0.0; d];
        let (mut diff, mut gauss) = (MeanVar::new(), MeanVar::new());
        for _ in 0..n {
            fill_gaussian(rng, &mut v);
            let proj = dot(&v, &alpha.0);
            let yg = proj / sqrt_d;
            let ys = proj / norm(&v);
            let a = g.apply(yg * yg, df);
            let b = g.apply(ys * ys, df);
            diff.push(a - b);
            gauss.push(a);
        }
        [diff, gauss]
    });
    let (mut diff, mut gauss) = (MeanVar::new(), MeanVar::new());
    for [a, b] in &parts {
        diff.merge(a);
        gauss.merge(b);
    }
    let se = diff.std_error();
    Ok(BoundReport::compare(
        format!("convex_order[{},d={d}]", g.id()),
        Check::AtLeast,
        0.0,
        diff.mean(),
        se,
        3.0 * se,
    )
    .with("d", df)
    .with("gauss_mean", gauss.mean())
    .with("n_mc", n_mc as f64))
}
