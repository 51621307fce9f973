//! Structured pass/fail verdicts for admissibility and fixed-point checks.

use crate::fmt_f64;

/// One named check with its signed margin: `slack >= 0` means the condition
/// holds with that much room, negative slack is the size of the violation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionCheck {
    pub name: &'static str,
    pub pass: bool,
    pub slack: f64,
}

/// A bundle of condition checks; a verdict object, never an error.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerdictReport {
    pub checks: Vec<ConditionCheck>,
}

impl VerdictReport {
    pub fn push(&mut self, name: &'static str, slack: f64, tol: f64) {
        self.checks.push(ConditionCheck { name, pass: slack >= -tol, slack });
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failed(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.pass).map(|c| c.name).collect()
    }

    pub fn get(&self, name: &str) -> Option<&ConditionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        let mut out = String::from("{\"pass\":");
        out.push_str(if self.all_pass() { "true" } else { "false" });
        out.push_str(",\"checks\":[");
        for (i, c) in self.checks.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!(
                "{{\"name\":\"{}\",\"pass\":{},\"slack\":{}}}",
                c.name,
                c.pass,
                fmt_f64(c.slack)
            ));
        }
        out.push_str("]}");
        out
    }
}
