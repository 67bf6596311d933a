//! Reporting helpers for the acceptance run in `tests/acceptance.rs`.
//!
//! The run lives in its own package so that it executes after the unit and
//! integration suites of the other crates.

use std::time::{Duration, Instant};

/// Result of one acceptance criterion.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub id: u32,
    pub title: &'static str,
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl Outcome {
    /// The one-line summary printed by the acceptance run.
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} [{}] {}: {} ({:.1}s)",
            self.id,
            if self.pass { "PASS" } else { "FAIL" },
            self.title,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

/// Runs one check, timing it. Errors count as failures.
pub fn run<F>(id: u32, title: &'static str, check: F) -> Outcome
where
    F: FnOnce() -> Result<(bool, String), String>,
{
    let start = Instant::now();
    let (pass, detail) = match check() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    Outcome {
        id,
        title,
        pass,
        detail,
        elapsed: start.elapsed(),
    }
}

/// Whether criterion `id` was selected on the command line (`cN` arguments).
/// No selection means all criteria.
pub fn selected(args: &[String], id: u32) -> bool {
    let picks: Vec<&String> = args.iter().filter(|a| a.starts_with('c')).collect();
    picks.is_empty() || picks.iter().any(|a| a[1..].parse::<u32>().ok() == Some(id))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lines_and_selection() {
        let o = run(3, "demo", || Ok((true, "fine".into())));
        assert!(o.line().starts_with("criterion  3 [PASS] demo: fine"));
        let e = run(4, "broken", || Err("boom".into()));
        assert!(!e.pass && e.detail.contains("boom"));
        let args = vec!["c2".to_string(), "c11".to_string()];
        assert!(selected(&args, 11) && selected(&args, 2) && !selected(&args, 1));
        assert!(selected(&[], 7));
    }
}
