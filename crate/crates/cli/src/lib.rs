//! Rule/fact file parsing and report rendering for the `chase` binary.

pub mod parser;
pub mod report;
