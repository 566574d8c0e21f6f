//! Single-shot questions about source files, answered with index context.

use std::fs;
use std::path::PathBuf;

use crate::error::{Error, Result, Stage};
use crate::fortran;
use crate::gateway::{self, BackendConfig};
use crate::indexer::ConstructMap;
use crate::prompt;

#[derive(Debug, Clone)]
pub struct InspectionRequest {
    pub files: Vec<PathBuf>,
    pub query: String,
    pub cfg: BackendConfig,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InspectOutcome {
    Answer(String),
    Exported(PathBuf),
}

pub fn inspect(req: &InspectionRequest, cmap: &ConstructMap) -> Result<InspectOutcome> {
    if req.files.is_empty() {
        return Err(Error::Config("inspect needs at least one file".into()));
    }
    if req.query.trim().is_empty() {
        return Err(Error::Config("inspect needs a non-empty query".into()));
    }
    let mut files = Vec::with_capacity(req.files.len());
    for path in &req.files {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        files.push((path.clone(), fortran::decode(&bytes)));
    }
    let prompt = prompt::assemble_inspect_prompt(&req.query, &files, cmap).map_err(|e| e.at(Stage::Assemble))?;
    let response = gateway::complete(&prompt, &req.cfg).map_err(|e| Error::from(e).at(Stage::Complete))?;
    Ok(match response.exported_to {
        Some(path) => InspectOutcome::Exported(path),
        None => InspectOutcome::Answer(response.text),
    })
}
