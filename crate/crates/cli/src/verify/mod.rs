//! Executable checks of the theory, one suite per result.
//!
//! Every suite seeds its own generator, so suites are independent of each
//! other and of execution order.

mod suites;

use std::fmt;
use std::time::Instant;

use crate::error::{CliError, CliResult};

pub const DEFAULT_SEED: u64 = 20_240_517;

/// Suite names accepted by `precond-lab verify`, in run order.
pub const SUITES: [&str; 12] = [
    "rate-law",
    "perfect-preconditioning",
    "van-der-sluis",
    "theorem3-hessian",
    "theorem4-centering",
    "standardization",
    "reg-equivalence",
    "adamw-inequivalence",
    "rmsprop-closed-form",
    "bnp-vector-form",
    "bnp-conditioning",
    "gradient-proxy",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    AtMost(f64),
    Below(f64),
    AtLeast(f64),
    Above(f64),
}

impl Bound {
    fn holds(self, x: f64) -> bool {
        match self {
            Bound::AtMost(b) => x <= b,
            Bound::Below(b) => x < b,
            Bound::AtLeast(b) => x >= b,
            Bound::Above(b) => x > b,
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::AtMost(b) => write!(f, "<= {b:.3e}"),
            Bound::Below(b) => write!(f, "< {b:.3e}"),
            Bound::AtLeast(b) => write!(f, ">= {b:.3e}"),
            Bound::Above(b) => write!(f, "> {b:.3e}"),
        }
    }
}

/// One checked quantity.
#[derive(Debug, Clone)]
pub struct Case {
    pub name: String,
    pub observed: f64,
    pub bound: Bound,
    pub passed: bool,
    pub detail: Option<String>,
}

impl Case {
    pub fn new(name: impl Into<String>, observed: f64, bound: Bound) -> Self {
        Self {
            name: name.into(),
            observed,
            bound,
            passed: !observed.is_nan() && bound.holds(observed),
            detail: None,
        }
    }

    pub fn at_most(name: impl Into<String>, observed: f64, tol: f64) -> Self {
        Self::new(name, observed, Bound::AtMost(tol))
    }

    pub fn below(name: impl Into<String>, observed: f64, tol: f64) -> Self {
        Self::new(name, observed, Bound::Below(tol))
    }

    pub fn at_least(name: impl Into<String>, observed: f64, tol: f64) -> Self {
        Self::new(name, observed, Bound::AtLeast(tol))
    }

    pub fn above(name: impl Into<String>, observed: f64, tol: f64) -> Self {
        Self::new(name, observed, Bound::Above(tol))
    }

    fn errored(err: &CliError) -> Self {
        Self {
            name: "suite raised an error".into(),
            observed: f64::NAN,
            bound: Bound::AtMost(0.0),
            passed: false,
            detail: Some(err.to_string()),
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(
            f,
            "[{tag}] {}: observed {:.6e} {}",
            self.name, self.observed, self.bound
        )?;
        if let Some(d) = &self.detail {
            write!(f, " ({d})")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: Vec<Case>,
    pub elapsed_secs: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        !self.cases.is_empty() && self.cases.iter().all(|c| c.passed)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed() { "PASS" } else { "FAIL" };
        writeln!(
            f,
            "suite {} ... {tag} ({:.2}s)",
            self.name, self.elapsed_secs
        )?;
        for c in &self.cases {
            writeln!(f, "  {c}")?;
        }
        Ok(())
    }
}

/// Runs one suite by name. An error inside a suite becomes a failed case.
pub fn run_suite(name: &str, seed: u64) -> CliResult<SuiteReport> {
    let Some(&name) = SUITES.iter().find(|s| **s == name) else {
        return Err(CliError::validation(format!(
            "unknown suite '{name}'; expected one of: all, {}",
            SUITES.join(", ")
        )));
    };
    let start = Instant::now();
    let outcome = match name {
        "rate-law" => suites::rate_law(seed),
        "perfect-preconditioning" => suites::perfect_preconditioning(seed),
        "van-der-sluis" => suites::van_der_sluis(seed),
        "theorem3-hessian" => suites::theorem3_hessian(seed),
        "theorem4-centering" => suites::theorem4_centering(seed),
        "standardization" => suites::standardization(seed),
        "reg-equivalence" => suites::reg_equivalence(seed),
        "adamw-inequivalence" => suites::adamw_inequivalence(seed),
        "rmsprop-closed-form" => suites::rmsprop_closed_form(seed),
        "bnp-vector-form" => suites::bnp_vector_form(seed),
        "bnp-conditioning" => suites::bnp_conditioning(seed),
        "gradient-proxy" => suites::gradient_proxy(seed),
        _ => unreachable!("name comes from SUITES"),
    };
    let cases = outcome.unwrap_or_else(|e| vec![Case::errored(&e)]);
    Ok(SuiteReport {
        name,
        cases,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

/// `all` or a single suite name.
pub fn run_selection(selection: &str, seed: u64) -> CliResult<Vec<SuiteReport>> {
    if selection == "all" {
        SUITES.iter().map(|s| run_suite(s, seed)).collect()
    } else {
        Ok(vec![run_suite(selection, seed)?])
    }
}
