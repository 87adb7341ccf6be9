//! Subcommand implementations. Each command reads the artifacts earlier
//! stages wrote, never global state, so reruns are reproducible.

mod analyze;
mod baseline;
mod gen;
mod knockout;
mod report;
mod sweep;

pub use analyze::run_analyze;
pub use baseline::run_baseline;
pub use gen::run_gen;
pub use knockout::run_knockout;
pub use report::run_report;
pub use sweep::run_sweep;
