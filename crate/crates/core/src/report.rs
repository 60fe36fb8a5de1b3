use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

/// How a [`BoundReport`] turns its numbers into a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    /// |theory - empirical| <= tolerance.
    TwoSided,
    /// empirical >= theory - tolerance.
    AtLeast,
    /// empirical <= theory + tolerance.
    AtMost,
    /// No empirical counterpart; the theory value is reported as is.
    Value,
}

/// A theoretical quantity next to its empirical estimate, with a verdict.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub quantity: String,
    pub theory: f64,
    pub empirical: Option<f64>,
    pub std_error: Option<f64>,
    pub tolerance: f64,
    pub check: Check,
    pub pass: bool,
    /// Parameter echo and auxiliary numbers.
    pub meta: BTreeMap<String, f64>,
}

impl BoundReport {
    pub fn value(quantity: impl Into<String>, theory: f64) -> Self {
        Self {
            quantity: quantity.into(),
            theory,
            empirical: None,
            std_error: None,
            tolerance: 0.0,
            check: Check::Value,
            pass: theory.is_finite(),
            meta: BTreeMap::new(),
        }
    }

    pub fn compare(
        quantity: impl Into<String>,
        check: Check,
        theory: f64,
        empirical: f64,
        std_error: f64,
        tolerance: f64,
    ) -> Self {
        let pass = match check {
            Check::TwoSided => (theory - empirical).abs() <= tolerance,
            Check::AtLeast => empirical >= theory - tolerance,
            Check::AtMost => empirical <= theory + tolerance,
            Check::Value => theory.is_finite(),
        };
        Self {
            quantity: quantity.into(),
            theory,
            empirical: Some(empirical),
            std_error: Some(std_error),
            tolerance,
            check,
            pass,
            meta: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.meta.insert(key.to_string(), value);
        self
    }

    pub fn meta(&self, key: &str) -> Option<f64> {
        self.meta.get(key).copied()
    }
}

impl fmt::Display for BoundReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        write!(
            f,
            "{verdict} {:<28} theory={:<14.6e}",
            self.quantity, self.theory
        )?;
        if let Some(e) = self.empirical {
            write!(f, " empirical={e:<14.6e}")?;
        }
        if let Some(se) = self.std_error {
            write!(f, " se={se:<11.3e}")?;
        }
        if self.check != Check::Value {
            write!(f, " tol={:.3e}", self.tolerance)?;
        }
        Ok(())
    }
}
