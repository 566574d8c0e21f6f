//! Fortran-to-C++ translation assistant.
//!
//! The pipeline: [`indexer`] maps constructs to files, [`drafter`] writes an
//! annotated C++ draft, [`prompt`] builds chat prompts, [`gateway`] talks to
//! a model and [`translator`] extracts and writes the results.

pub mod cli;
pub mod config;
pub mod drafter;
pub mod error;
pub mod fortran;
pub mod gateway;
pub mod indexer;
pub mod inspector;
pub mod prompt;
pub mod translator;

pub use error::{Diagnostic, Error, Result, Stage};
