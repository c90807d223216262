//! Scenario files, single runs, parameter sweeps and oracle checks.

pub mod oracle;
pub mod run;
pub mod scenario;
pub mod sweep;

pub use run::run_scenario;
pub use scenario::{parse_scenario, Scenario};
