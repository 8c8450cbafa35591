//! `gradcheck` and `audit`.

use std::time::Instant;

use s2gan_core::gradcheck::{corrupted_case, registry, CaseOutcome, GradCase, Scope};
use s2gan_core::networks::{build, table, NetworkKind, Scale};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckScope {
    Ops,
    Networks,
    All,
}

pub fn cases(scope: CheckScope, corrupt: bool) -> Vec<GradCase> {
    let mut v = match scope {
        CheckScope::Ops => registry(Scope::Ops),
        CheckScope::Networks => registry(Scope::Networks),
        CheckScope::All => {
            let mut v = registry(Scope::Ops);
            v.extend(registry(Scope::Networks));
            v
        }
    };
    if corrupt {
        v.push(corrupted_case());
    }
    v
}

pub struct GradReport {
    pub outcomes: Vec<CaseOutcome>,
    pub seconds: f64,
}

impl GradReport {
    pub fn worst(&self) -> Option<&CaseOutcome> {
        self.outcomes
            .iter()
            .max_by(|a, b| (a.report.max_error / a.tolerance).total_cmp(&(b.report.max_error / b.tolerance)))
    }

    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    pub fn text(&self) -> String {
        let mut s = String::new();
        for o in &self.outcomes {
            s.push_str(&format!(
                "{:<32} {:>10.3e}  tol {:.0e}  {}\n",
                o.name,
                o.report.max_error,
                o.tolerance,
                if o.passed { "ok" } else { "FAIL" }
            ));
        }
        if let Some(w) = self.worst() {
            s.push_str(&format!(
                "worst: {} rel. err {:.3e} at input {} coord {} (analytic {:.6e}, numeric {:.6e})\n",
                w.name, w.report.max_error, w.report.worst.0, w.report.worst.1, w.report.analytic, w.report.numeric
            ));
        }
        s.push_str(&format!("{} cases in {:.1}s\n", self.outcomes.len(), self.seconds));
        s
    }
}

pub fn run_gradcheck(cases: &[GradCase], seed: u64) -> Result<GradReport> {
    let t = Instant::now();
    let outcomes = cases.iter().map(|c| c.run(seed)).collect::<s2gan_core::Result<Vec<_>>>()?;
    Ok(GradReport {
        outcomes,
        seconds: t.elapsed().as_secs_f64(),
    })
}

/// Print the report; an error if any case is over tolerance.
pub fn gradcheck(scope: CheckScope, corrupt: bool, seed: u64) -> Result<GradReport> {
    let report = run_gradcheck(&cases(scope, corrupt), seed)?;
    print!("{}", report.text());
    if !report.passed() {
        let w = report.worst().expect("a failing case");
        return Err(Error::Check(format!(
            "gradient check failed: worst {} at {:.3e}",
            w.name, w.report.max_error
        )));
    }
    Ok(report)
}

/// Layer shape tables of every network.
pub fn audit(scale: Scale) -> Result<String> {
    let mut s = String::new();
    for kind in NetworkKind::ALL {
        s.push_str(&table(&build(kind, scale))?);
        s.push('\n');
    }
    Ok(s)
}
