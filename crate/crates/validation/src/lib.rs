//! Property checks shared by the test suites and the acceptance run.

pub mod checks;
