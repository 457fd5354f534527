//! Criterion checks shared by the focused suites and the acceptance report.
#![allow(dead_code)]

pub mod gradient;
pub mod oracle;
pub mod scenario;

/// `Ok(detail)` on success, `Err(reason)` on failure.
pub type Outcome = Result<String, String>;

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}
