//! Scenario parsing, analysis dispatch and report output for `railprice`.

pub mod report;
pub mod run;
pub mod scenario;

pub use report::{emit_report, to_json, Check, Format, Report, Status, Table};
pub use run::{run_scenario, verify_saved, RunError};
pub use scenario::{parse_scenario, Analysis, Scenario, ScenarioErrors};
