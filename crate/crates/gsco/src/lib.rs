//! File formats, backends, evaluation and the command-line front end for the
//! collaborative diagnosis pipeline in `gsco-core`.

pub mod index_file;
pub mod manifest;
pub mod records;
pub mod report;
pub mod backend;
pub mod cli;
