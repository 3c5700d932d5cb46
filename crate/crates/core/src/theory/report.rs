use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// How a measured value is compared with its target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `measured <= target + tolerance`
    AtMost,
    /// `measured >= target - tolerance`
    AtLeast,
    /// `measured > target + tolerance`
    Above,
    /// `|measured - target| <= tolerance`
    Within,
    /// `|measured - target| <= tolerance * |target|`
    WithinRelative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub measured: f64,
    pub relation: Relation,
    pub target: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Condition {
    pub fn new(name: impl Into<String>, measured: f64, relation: Relation, target: f64, tolerance: f64) -> Self {
        let mut c = Condition { name: name.into(), measured, relation, target, tolerance, pass: false };
        c.pass = c.holds();
        c
    }

    /// Verdict recomputed from the stored numbers.
    pub fn holds(&self) -> bool {
        let (m, t, tol) = (self.measured, self.target, self.tolerance);
        if !(m.is_finite() && t.is_finite() && tol.is_finite()) {
            return false;
        }
        match self.relation {
            Relation::AtMost => m <= t + tol,
            Relation::AtLeast => m >= t - tol,
            Relation::Above => m > t + tol,
            Relation::Within => (m - t).abs() <= tol,
            Relation::WithinRelative => (m - t).abs() <= tol * t.abs(),
        }
    }
}

/// Outcome of one check. `measured`, `target` and `tolerance` describe the
/// headline comparison; `conditions` hold every comparison that decides `pass`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub check: String,
    pub inputs: serde_json::Value,
    pub measured: f64,
    pub target: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub stderr: Option<f64>,
    pub samples: Option<u64>,
    /// False when the check cannot be evaluated on the given inputs.
    pub applicable: bool,
    pub conditions: Vec<Condition>,
    pub details: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl VerificationReport {
    /// Report whose headline is `conditions[0]`.
    pub fn from_conditions(check: &str, inputs: serde_json::Value, conditions: Vec<Condition>) -> Self {
        let head = conditions.first().cloned();
        let mut r = VerificationReport {
            check: check.to_owned(),
            inputs,
            measured: head.as_ref().map_or(f64::NAN, |c| c.measured),
            target: head.as_ref().map_or(f64::NAN, |c| c.target),
            tolerance: head.as_ref().map_or(f64::NAN, |c| c.tolerance),
            pass: false,
            stderr: None,
            samples: None,
            applicable: true,
            conditions,
            details: BTreeMap::new(),
            notes: Vec::new(),
        };
        r.pass = r.recompute();
        r
    }

    pub fn not_applicable(check: &str, inputs: serde_json::Value, reason: &str) -> Self {
        let mut r = Self::from_conditions(check, inputs, Vec::new());
        r.applicable = false;
        r.measured = 0.0;
        r.target = 0.0;
        r.tolerance = 0.0;
        r.notes.push(reason.to_owned());
        r.pass = false;
        r
    }

    /// Verdict from the stored values alone.
    pub fn recompute(&self) -> bool {
        self.applicable
            && !self.conditions.is_empty()
            && self.conditions.iter().all(Condition::holds)
            && self.numbers_finite()
    }

    pub fn numbers_finite(&self) -> bool {
        self.measured.is_finite()
            && self.target.is_finite()
            && self.tolerance.is_finite()
            && self.stderr.is_none_or(f64::is_finite)
            && self.details.values().all(|v| v.is_finite())
    }

    pub fn with_stderr(mut self, stderr: f64, samples: u64) -> Self {
        self.stderr = Some(stderr);
        self.samples = Some(samples);
        self.pass = self.recompute();
        self
    }

    pub fn detail(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.to_owned(), value);
        self.pass = self.recompute();
        self
    }

    pub fn note(mut self, text: impl Into<String>) -> Self {
        self.notes.push(text.into());
        self
    }

    /// One-line summary.
    pub fn summary(&self) -> String {
        format!(
            "{} {}: measured {:.6} target {:.6} tol {:.3e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.check,
            self.measured,
            self.target,
            self.tolerance
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relations() {
        assert!(Condition::new("a", 1.0, Relation::AtMost, 1.0, 0.0).pass);
        assert!(!Condition::new("a", 1.1, Relation::AtMost, 1.0, 0.05).pass);
        assert!(Condition::new("a", 0.96, Relation::AtLeast, 1.0, 0.05).pass);
        assert!(!Condition::new("a", 0.5, Relation::Above, 0.5, 0.0).pass);
        assert!(Condition::new("a", 0.491, Relation::WithinRelative, 0.5, 0.02).pass);
        assert!(!Condition::new("a", f64::NAN, Relation::Within, 0.5, 1.0).pass);
    }

    #[test]
    fn recompute_is_idempotent_after_serde() {
        let r = VerificationReport::from_conditions(
            "x",
            serde_json::json!({"k": 1}),
            vec![Condition::new("c", 0.3, Relation::AtMost, 0.4, 0.0)],
        )
        .with_stderr(0.01, 100);
        let s = serde_json::to_string(&r).unwrap();
        let back: VerificationReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.recompute(), r.pass);
        assert!(r.pass);
    }

    #[test]
    fn not_applicable_never_passes() {
        let r = VerificationReport::not_applicable("x", serde_json::Value::Null, "no noisy samples");
        assert!(!r.pass && !r.recompute() && !r.applicable);
    }
}
