//! Link functions: the catalog, custom piecewise-linear links, and grid
//! checks of the shape assumptions the learning guarantees rely on.

use std::fmt;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Width of the band outside [-1, 1] that is clamped instead of rejected.
pub const DOMAIN_TOL: f64 = 1e-9;

/// Catalog identifiers accepted by [`LinkFunction::from_id`].
pub const CATALOG: [&str; 6] = [
    "identity",
    "pow2",
    "cubic",
    "pow5",
    "counterexample",
    "logistic",
];

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    Identity,
    Power(i32),
    /// 0 on [-1, 0], then -x up to 1/3, then x - 2/3.
    Counterexample,
    /// tanh(2x) / tanh(2).
    Logistic,
    Piecewise(Vec<(f64, f64)>),
}

/// A known link `f` together with its declared shape constants.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkFunction {
    name: String,
    shape: Shape,
    /// Local-linearity radius near x = 1.
    pub gamma0: f64,
    /// Lower derivative bound on [1 - gamma0, 1].
    pub gamma1: f64,
    /// Upper derivative bound on [1 - gamma0, 1].
    pub gamma2: f64,
    /// Global derivative lower bound on [0, 1], when one exists.
    pub c0: Option<f64>,
    /// Whether f is convex on [0, 1].
    pub convex_on_unit: bool,
    /// Even links only need to be non-decreasing on [0, 1].
    pub even: bool,
}

impl fmt::Display for LinkFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

fn logistic_scale() -> f64 {
    2f64.tanh()
}

impl LinkFunction {
    /// f(x) = x.
    pub fn identity() -> Self {
        Self {
            name: "identity".into(),
            shape: Shape::Identity,
            gamma0: 0.1,
            gamma1: 1.0,
            gamma2: 1.0,
            c0: Some(1.0),
            convex_on_unit: true,
            even: false,
        }
    }

    /// f(x) = x^p for p >= 2. Even powers are flagged as even links.
    pub fn power(p: i32) -> Result<Self> {
        if p < 2 {
            return Err(Error::Config(format!("power link needs p >= 2, got {p}")));
        }
        let name = match p {
            3 => "cubic".to_string(),
            _ => format!("pow{p}"),
        };
        let gamma0 = 0.1;
        Ok(Self {
            name,
            shape: Shape::Power(p),
            gamma0,
            gamma1: p as f64 * (1.0 - gamma0).powi(p - 1),
            gamma2: p as f64,
            c0: None,
            convex_on_unit: true,
            even: p % 2 == 0,
        })
    }

    pub fn cubic() -> Self {
        Self::power(3).expect("p = 3 is valid")
    }

    /// The non-monotone link on which interactive SGD stalls near m = 0.
    pub fn counterexample() -> Self {
        Self {
            name: "counterexample".into(),
            shape: Shape::Counterexample,
            gamma0: 0.1,
            gamma1: 1.0,
            gamma2: 1.0,
            c0: None,
            convex_on_unit: true,
            even: false,
        }
    }

    /// A sigmoid rescaled to map [-1, 1] onto [-1, 1]: tanh(2x) / tanh(2),
    /// i.e. an affine transform of 1 / (1 + exp(-4x)). Its derivative is
    /// smallest at x = 1, so that value serves as c0.
    pub fn logistic() -> Self {
        let mut link = Self {
            name: "logistic".into(),
            shape: Shape::Logistic,
            gamma0: 0.1,
            gamma1: 0.0,
            gamma2: 0.0,
            c0: None,
            convex_on_unit: false,
            even: false,
        };
        link.gamma1 = link.df(1.0);
        link.gamma2 = link.df(1.0 - link.gamma0);
        link.c0 = Some(link.gamma1);
        link
    }

    /// Looks up a catalog id (`identity`, `pow2`, `cubic`/`pow3`, `pow5`,
    /// `counterexample`, `logistic`).
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "identity" => Ok(Self::identity()),
            "cubic" | "pow3" => Ok(Self::cubic()),
            "counterexample" => Ok(Self::counterexample()),
            "logistic" => Ok(Self::logistic()),
            _ => match id.strip_prefix("pow").and_then(|p| p.parse::<i32>().ok()) {
                Some(p) if (2..=9).contains(&p) => Self::power(p),
                _ => Err(Error::Config(format!(
                    "unknown link `{id}` (catalog: {})",
                    CATALOG.join(", ")
                ))),
            },
        }
    }

    /// Resolves a catalog id, or failing that, a knot file path.
    pub fn resolve(spec: &str) -> Result<Self> {
        match Self::from_id(spec) {
            Ok(link) => Ok(link),
            Err(e) => {
                let path = Path::new(spec);
                if path.is_file() {
                    Self::from_knot_file(path)
                } else {
                    Err(e)
                }
            }
        }
    }

    /// Piecewise-linear link through `knots`, which must have strictly
    /// increasing x, span [-1, 1], and stay within [-1, 1]. Shape constants
    /// are read off the segment slopes with gamma0 = 0.1.
    pub fn piecewise(name: impl Into<String>, knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Config(
                "a piecewise link needs at least two knots".into(),
            ));
        }
        if knots.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(Error::Config(
                "knot x values must be strictly increasing".into(),
            ));
        }
        if knots[0].0 > -1.0 || knots[knots.len() - 1].0 < 1.0 {
            return Err(Error::Config("knots must cover [-1, 1]".into()));
        }
        if let Some(&(x, y)) = knots
            .iter()
            .find(|(x, y)| x.abs() <= 1.0 && (!y.is_finite() || y.abs() > 1.0))
        {
            return Err(Error::Config(format!("f({x}) = {y} is outside [-1, 1]")));
        }
        let gamma0 = 0.1;
        let mut link = Self {
            name: name.into(),
            shape: Shape::Piecewise(knots.clone()),
            gamma0,
            gamma1: 0.0,
            gamma2: 0.0,
            c0: None,
            convex_on_unit: false,
            even: false,
        };
        let slopes_on = |lo: f64, hi: f64| -> Vec<f64> {
            knots
                .windows(2)
                .filter(|w| w[1].0 > lo && w[0].0 < hi)
                .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
                .collect()
        };
        let near_one = slopes_on(1.0 - gamma0, 1.0);
        link.gamma1 = near_one.iter().copied().fold(f64::INFINITY, f64::min);
        link.gamma2 = near_one.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(link.gamma1 > 0.0) {
            return Err(Error::Config(
                "piecewise link must have positive slope on [0.9, 1]".into(),
            ));
        }
        let unit = slopes_on(0.0, 1.0);
        let min_unit = unit.iter().copied().fold(f64::INFINITY, f64::min);
        link.c0 = (min_unit > 0.0).then_some(min_unit);
        link.convex_on_unit = unit.windows(2).all(|w| w[0] <= w[1]);
        Ok(link)
    }

    /// Parses a knot list: one `x f(x)` pair per line, `#` starts a comment.
    pub fn parse_knots(text: &str) -> Result<Vec<(f64, f64)>> {
        let mut knots = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: format!("`{s}`: {e}"),
                })
            };
            match fields.as_slice() {
                [x, y] => knots.push((parse(x)?, parse(y)?)),
                _ => {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: format!("expected two numbers, found {}", fields.len()),
                    })
                }
            }
        }
        Ok(knots)
    }

    pub fn from_knot_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "custom".into());
        Self::piecewise(name, Self::parse_knots(&text)?)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.shape, Shape::Identity)
    }

    /// Whether the link is the non-monotone counterexample.
    pub fn is_counterexample(&self) -> bool {
        matches!(self.shape, Shape::Counterexample)
    }

    fn check(x: f64) -> Result<f64> {
        if x.is_nan() || x.abs() > 1.0 + DOMAIN_TOL {
            Err(Error::Domain { x })
        } else {
            Ok(x.clamp(-1.0, 1.0))
        }
    }

    /// f(x), rejecting arguments farther than [`DOMAIN_TOL`] from [-1, 1].
    pub fn eval(&self, x: f64) -> Result<f64> {
        Self::check(x).map(|x| self.f(x))
    }

    /// f'(x) (right derivative at kinks), with the same domain handling.
    pub fn deriv(&self, x: f64) -> Result<f64> {
        Self::check(x).map(|x| self.df(x))
    }

    /// f(x) for callers that already guarantee the domain; out-of-range
    /// arguments are clamped.
    #[inline]
    pub fn f(&self, x: f64) -> f64 {
        let x = x.clamp(-1.0, 1.0);
        match &self.shape {
            Shape::Identity => x,
            Shape::Power(p) => x.powi(*p),
            Shape::Counterexample => {
                if x <= 0.0 {
                    0.0
                } else if x <= 1.0 / 3.0 {
                    -x
                } else {
                    x - 2.0 / 3.0
                }
            }
            Shape::Logistic => (2.0 * x).tanh() / logistic_scale(),
            Shape::Piecewise(knots) => {
                let i = segment(knots, x);
                let (x0, y0) = knots[i];
                let (x1, y1) = knots[i + 1];
                y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            }
        }
    }

    /// f'(x) for callers that already guarantee the domain.
    #[inline]
    pub fn df(&self, x: f64) -> f64 {
        let x = x.clamp(-1.0, 1.0);
        match &self.shape {
            Shape::Identity => 1.0,
            Shape::Power(p) => *p as f64 * x.powi(*p - 1),
            Shape::Counterexample => {
                if x < 0.0 {
                    0.0
                } else if x < 1.0 / 3.0 {
                    -1.0
                } else {
                    1.0
                }
            }
            Shape::Logistic => {
                let t = (2.0 * x).tanh();
                2.0 * (1.0 - t * t) / logistic_scale()
            }
            Shape::Piecewise(knots) => {
                let i = segment(knots, x);
                let (x0, y0) = knots[i];
                let (x1, y1) = knots[i + 1];
                (y1 - y0) / (x1 - x0)
            }
        }
    }

    /// Kink locations inside (-1, 1), where only one-sided derivatives exist.
    pub fn kinks(&self) -> Vec<f64> {
        match &self.shape {
            Shape::Counterexample => vec![0.0, 1.0 / 3.0],
            Shape::Piecewise(knots) => knots
                .iter()
                .map(|k| k.0)
                .filter(|x| x.abs() < 1.0)
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Checks the shape assumptions on a uniform grid of `grid_size + 1`
    /// points over [-1, 1]. Failures are reported, never raised.
    pub fn verify_assumptions(&self, grid_size: usize) -> AssumptionReport {
        let n = grid_size.max(100);
        let xs: Vec<f64> = (0..=n).map(|i| -1.0 + 2.0 * i as f64 / n as f64).collect();
        let tol = 1e-12;

        let mono_from = if self.even { 0.0 } else { -1.0 };
        let mut monotone_violation = None;
        for w in xs.windows(2).filter(|w| w[0] >= mono_from - tol) {
            if self.f(w[1]) < self.f(w[0]) - tol {
                monotone_violation = Some(w[0]);
                break;
            }
        }

        let max_abs = xs.iter().map(|&x| self.f(x).abs()).fold(0.0, f64::max);

        let near_one: Vec<f64> = xs
            .iter()
            .copied()
            .filter(|&x| x >= 1.0 - self.gamma0 - tol)
            .collect();
        let local_linear = self.gamma1 > 0.0
            && self.gamma1 <= self.gamma2
            && self.gamma0 > 0.0
            && self.gamma0 <= 0.1
            && near_one.iter().all(|&x| {
                let d = self.df(x);
                d >= self.gamma1 - tol && d <= self.gamma2 + tol
            });

        let unit: Vec<f64> = xs.iter().copied().filter(|&x| x >= 0.0).collect();
        let min_deriv_unit = unit
            .iter()
            .map(|&x| self.df(x))
            .fold(f64::INFINITY, f64::min);
        let derivative_lower_bound = match self.c0 {
            Some(c0) => c0 > 0.0 && min_deriv_unit >= c0 - tol,
            None => false,
        };

        let mut midpoint_convex = true;
        'outer: for &x in &unit {
            for &y in &unit {
                let mid = self.f(0.5 * (x + y));
                if mid > 0.5 * (self.f(x) + self.f(y)) + tol {
                    midpoint_convex = false;
                    break 'outer;
                }
            }
        }

        AssumptionReport {
            link: self.name.clone(),
            grid_size: n,
            monotone: monotone_violation.is_none(),
            monotone_violation,
            sup_bound: max_abs <= 1.0 + tol,
            max_abs,
            local_linear,
            derivative_lower_bound,
            min_deriv_unit,
            convex_on_unit: midpoint_convex,
            convex_flag_consistent: midpoint_convex == self.convex_on_unit,
        }
    }
}

/// Index of the segment `[knots[i], knots[i+1])` holding x; the last segment
/// also holds its right end.
fn segment(knots: &[(f64, f64)], x: f64) -> usize {
    let i = knots.partition_point(|k| k.0 <= x);
    i.saturating_sub(1).min(knots.len() - 2)
}

/// Grid verdicts for the link-shape assumptions.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub link: String,
    pub grid_size: usize,
    /// Non-decreasing on [-1, 1] (on [0, 1] for even links).
    pub monotone: bool,
    /// Left end of the first grid cell where f decreases.
    pub monotone_violation: Option<f64>,
    pub sup_bound: bool,
    pub max_abs: f64,
    /// gamma1 <= f' <= gamma2 on [1 - gamma0, 1] with declared constants.
    pub local_linear: bool,
    /// f' >= c0 on [0, 1]; false when no c0 is declared.
    pub derivative_lower_bound: bool,
    pub min_deriv_unit: f64,
    /// Midpoint convexity on the [0, 1] grid.
    pub convex_on_unit: bool,
    /// The declared convexity flag agrees with the grid check.
    pub convex_flag_consistent: bool,
}

impl AssumptionReport {
    /// Monotone, bounded and locally linear near 1.
    pub fn assumption1(&self) -> bool {
        self.monotone && self.sup_bound && self.local_linear
    }

    /// Global derivative lower bound on [0, 1].
    pub fn assumption2(&self) -> bool {
        self.derivative_lower_bound
    }

    /// Convexity on [0, 1].
    pub fn assumption3(&self) -> bool {
        self.convex_on_unit
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        let cubic = LinkFunction::cubic();
        assert_eq!(cubic.eval(0.5).unwrap(), 0.125);
        assert_eq!(cubic.deriv(0.5).unwrap(), 0.75);
        assert_eq!(LinkFunction::identity().eval(1.0).unwrap(), 1.0);
        let ce = LinkFunction::counterexample();
        assert_eq!(ce.eval(0.2).unwrap(), -0.2);
        assert_eq!(ce.deriv(0.5).unwrap(), 1.0);
        assert_eq!(ce.deriv(1.0 / 3.0).unwrap(), 1.0);
        assert_eq!(ce.deriv(0.0).unwrap(), -1.0);
    }

    #[test]
    fn domain_band_clamps_then_rejects() {
        let id = LinkFunction::identity();
        assert_eq!(id.eval(1.0 + 5e-10).unwrap(), 1.0);
        assert!(matches!(id.eval(1.0 + 1e-8), Err(Error::Domain { .. })));
        assert!(id.deriv(f64::NAN).is_err());
    }

    #[test]
    fn catalog_reports() {
        let cubic = LinkFunction::cubic().verify_assumptions(1000);
        assert!(cubic.assumption1() && cubic.assumption3() && !cubic.assumption2());
        let id = LinkFunction::identity().verify_assumptions(1000);
        assert!(id.assumption1() && id.assumption2() && id.assumption3());
        let ce = LinkFunction::counterexample().verify_assumptions(1000);
        assert!(!ce.monotone);
        let v = ce.monotone_violation.unwrap();
        assert!((0.0..1.0 / 3.0).contains(&v), "{v}");
        let lg = LinkFunction::logistic().verify_assumptions(1000);
        assert!(lg.assumption1() && lg.assumption2() && !lg.assumption3());
        for id in CATALOG {
            let r = LinkFunction::from_id(id).unwrap().verify_assumptions(1000);
            assert!(r.convex_flag_consistent, "{id}");
            assert!(r.sup_bound && r.local_linear, "{id}");
        }
    }

    #[test]
    fn pow2_is_even_and_monotone_on_unit() {
        let r = LinkFunction::from_id("pow2")
            .unwrap()
            .verify_assumptions(500);
        assert!(r.monotone && r.assumption1());
    }

    #[test]
    fn knot_parsing_and_eval() {
        let text = "# two pieces\n-1 -1\n0 0   # kink\n1 1\n";
        let knots = LinkFunction::parse_knots(text).unwrap();
        let link = LinkFunction::piecewise("tri", knots).unwrap();
        assert_eq!(link.f(0.25), 0.25);
        assert_eq!(link.df(1.0), 1.0);
        assert_eq!(link.c0, Some(1.0));
        assert!(link.convex_on_unit);
        let knots = LinkFunction::parse_knots("-1 0\n0 0\n0.5 0.8\n1 1\n").unwrap();
        let link = LinkFunction::piecewise("bent", knots).unwrap();
        assert!(!link.convex_on_unit);
        assert!((link.gamma1 - 0.4).abs() < 1e-12);
    }

    #[test]
    fn knot_errors() {
        assert!(matches!(
            LinkFunction::parse_knots("0 1\n0.5\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        let bad_order = vec![(-1.0, -1.0), (0.5, 0.0), (0.2, 0.1), (1.0, 1.0)];
        assert!(LinkFunction::piecewise("x", bad_order).is_err());
        let short = vec![(-0.5, -1.0), (1.0, 1.0)];
        assert!(LinkFunction::piecewise("x", short).is_err());
    }

    #[test]
    fn unknown_id() {
        assert!(LinkFunction::from_id("quartic").is_err());
        assert_eq!(LinkFunction::from_id("pow3").unwrap().name(), "cubic");
    }
}
