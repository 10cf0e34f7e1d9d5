//! Scenario files and subcommands of the `codesign` tool.

pub mod commands;
pub mod scenario;

pub use commands::Status;
pub use scenario::{Scenario, ScenarioError, ScenarioFile};

/// Exit code for unreadable or invalid scenario files and arguments.
pub const EXIT_PARSE: i32 = 2;
/// Exit code for any other failure.
pub const EXIT_FAILURE: i32 = 1;

/// Parse `a:b` into an inclusive range.
pub fn parse_range(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected a:b, got `{s}`"))?;
    let a: u32 = a.trim().parse().map_err(|_| format!("bad range start `{a}`"))?;
    let b: u32 = b.trim().parse().map_err(|_| format!("bad range end `{b}`"))?;
    if a == 0 || a > b {
        return Err(format!("range {a}:{b} must satisfy 1 <= a <= b"));
    }
    Ok((a, b))
}
