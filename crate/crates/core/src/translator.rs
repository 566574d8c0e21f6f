//! Per-file translation: draft, assemble, complete, extract and write
//! `<stem>.cpp` and `<stem>_fi.f90`.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::drafter::{self, TypeMapping};
use crate::error::{Error, Result, Stage};
use crate::fortran;
use crate::gateway::{self, BackendConfig, BackendError, BackendKind, CompletionResponse, FinishReason};
use crate::indexer::{self, ConstructMap};
use crate::prompt::{self, tags, AssembledPrompt, ChatTemplate};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Warning {
    /// No `<fsource>` block: only the C++ file is written.
    MissingFsource,
    /// More than one block of `tag`; the first one is used.
    DuplicateBlock { tag: &'static str, count: usize },
    /// A markdown code fence wrapped the block and was removed.
    FenceStripped { tag: &'static str },
    /// The backend stopped at the token limit.
    Truncated,
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::MissingFsource => {
                f.write_str("missing-fsource: response has no <fsource> block; no interface file written")
            }
            Warning::DuplicateBlock { tag, count } => {
                write!(f, "duplicate-block: response has {count} <{tag}> blocks; using the first")
            }
            Warning::FenceStripped { tag } => write!(f, "fence-stripped: removed a code fence inside <{tag}>"),
            Warning::Truncated => f.write_str("truncated: the completion stopped at max_tokens"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("response has no <csource> block")]
    MissingCsource { raw: String },
    #[error("the <csource> block is empty")]
    EmptyCsource { raw: String },
}

impl ExtractError {
    /// The full response, kept for manual salvage.
    pub fn raw(&self) -> &str {
        match self {
            ExtractError::MissingCsource { raw } | ExtractError::EmptyCsource { raw } => raw,
        }
    }
}

/// First `<csource>` and `<fsource>` blocks of a response.
pub fn extract_tagged(response_text: &str) -> std::result::Result<(String, String, Vec<Warning>), ExtractError> {
    let mut warnings = Vec::new();
    let cblocks = tags::blocks(response_text, tags::CSOURCE);
    let fblocks = tags::blocks(response_text, tags::FSOURCE);
    let Some(csource) = cblocks.first() else {
        return Err(ExtractError::MissingCsource { raw: response_text.to_owned() });
    };
    if csource.trim().is_empty() {
        return Err(ExtractError::EmptyCsource { raw: response_text.to_owned() });
    }
    if cblocks.len() > 1 {
        warnings.push(Warning::DuplicateBlock { tag: tags::CSOURCE, count: cblocks.len() });
    }
    let fsource = match fblocks.first() {
        Some(f) => {
            if fblocks.len() > 1 {
                warnings.push(Warning::DuplicateBlock { tag: tags::FSOURCE, count: fblocks.len() });
            }
            f.to_string()
        }
        None => String::new(),
    };
    if fsource.trim().is_empty() {
        warnings.push(Warning::MissingFsource);
    }
    Ok((csource.to_string(), fsource, warnings))
}

/// Removes a markdown fence (```` ```lang ```` … ```` ``` ````) wrapping the
/// whole block.
pub fn strip_fence(block: &str) -> Option<String> {
    let trimmed = block.trim();
    let rest = trimmed.strip_prefix("```")?;
    let (_, body) = rest.split_once('\n')?;
    let body = body.trim_end().strip_suffix("```")?;
    Some(body.trim_end().to_owned())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BackendMeta {
    pub backend: BackendKind,
    pub model_name: String,
    pub finish_reason: FinishReason,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranslationResult {
    pub source_file: PathBuf,
    pub csource: String,
    pub fsource: String,
    pub warnings: Vec<Warning>,
    /// Absent for pasted responses.
    pub backend_meta: Option<BackendMeta>,
}

impl TranslationResult {
    /// Builds a result from response text, applying fence stripping.
    pub fn from_response(
        source_file: &Path,
        text: &str,
        meta: Option<BackendMeta>,
    ) -> std::result::Result<TranslationResult, ExtractError> {
        let (mut csource, mut fsource, mut warnings) = extract_tagged(text)?;
        if let Some(c) = strip_fence(&csource) {
            csource = c;
            warnings.push(Warning::FenceStripped { tag: tags::CSOURCE });
        }
        if let Some(f) = strip_fence(&fsource) {
            fsource = f;
            warnings.push(Warning::FenceStripped { tag: tags::FSOURCE });
        }
        if meta.as_ref().is_some_and(|m| m.finish_reason == FinishReason::Truncated) {
            warnings.push(Warning::Truncated);
        }
        Ok(TranslationResult { source_file: source_file.to_owned(), csource, fsource, warnings, backend_meta: meta })
    }
}

pub fn cpp_name(stem: &str) -> String {
    format!("{stem}.cpp")
}

pub fn interface_name(stem: &str) -> String {
    format!("{stem}_fi.f90")
}

fn with_newline(text: &str) -> String {
    if text.ends_with('\n') {
        text.to_owned()
    } else {
        format!("{text}\n")
    }
}

/// Writes `<stem>.cpp`, and `<stem>_fi.f90` when there is interface code.
///
/// Existing files are refused unless `force` is set; the check covers both
/// files before either is written, and a failed second write removes the
/// first.
pub fn write_outputs(stem: &str, result: &TranslationResult, out_dir: &Path, force: bool) -> Result<Vec<PathBuf>> {
    let mut planned = vec![(out_dir.join(cpp_name(stem)), with_newline(&result.csource))];
    if !result.fsource.trim().is_empty() {
        planned.push((out_dir.join(interface_name(stem)), with_newline(&result.fsource)));
    }
    if !force {
        if let Some((path, _)) = planned.iter().find(|(p, _)| p.exists()) {
            return Err(Error::Overwrite(path.clone()));
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written: Vec<PathBuf> = Vec::new();
    for (path, content) in planned {
        if let Err(e) = write_atomic(&path, &content, force) {
            for done in &written {
                let _ = fs::remove_file(done);
            }
            return Err(e);
        }
        written.push(path);
    }
    Ok(written)
}

fn write_atomic(path: &Path, content: &str, force: bool) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(content.as_bytes()).map_err(|e| Error::io(tmp.path(), e))?;
    let persisted = if force { tmp.persist(path) } else { tmp.persist_noclobber(path) };
    match persisted {
        Ok(_) => Ok(()),
        Err(e) if e.error.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Overwrite(path.to_owned())),
        Err(e) => Err(Error::io(path, e.error)),
    }
}

/// Output placement for translated files.
#[derive(Debug, Clone, Default)]
pub struct OutputOptions {
    /// Mirror tree root; `None` writes beside each source.
    pub out_dir: Option<PathBuf>,
    pub force: bool,
}

impl OutputOptions {
    /// Directory receiving the outputs for `file`. Under `--out` the
    /// source's position relative to `project_root` is mirrored.
    pub fn dir_for(&self, file: &Path, project_root: &Path) -> PathBuf {
        let parent = file.parent().map(Path::to_owned).unwrap_or_default();
        let Some(out) = &self.out_dir else {
            return if parent.as_os_str().is_empty() { PathBuf::from(".") } else { parent };
        };
        let abs_parent = fs::canonicalize(&parent).unwrap_or(parent);
        match indexer::relative_dir(&abs_parent, project_root) {
            Some(rel) if rel != "." => out.join(rel),
            _ => out.clone(),
        }
    }
}

pub fn stem_of(file: &Path) -> String {
    file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TranslateOutcome {
    Written { result: TranslationResult, files: Vec<PathBuf> },
    /// Export backend: the prompt was written for manual completion.
    Exported { source_file: PathBuf, prompt_file: PathBuf },
}

/// Draft and prompt for one file.
fn prepare(
    file: &Path,
    template: &ChatTemplate,
    cmap: &ConstructMap,
    mapping: &TypeMapping,
) -> Result<AssembledPrompt> {
    let artifact = drafter::generate_draft(file, cmap, mapping).map_err(|e| e.at(Stage::Draft))?;
    let bytes = fs::read(file).map_err(|e| Error::io(file, e).at(Stage::Draft))?;
    prompt::assemble_translate_prompt(template, &fortran::decode(&bytes), &artifact)
        .map_err(|e| e.at(Stage::Assemble))
}

fn finish(
    file: &Path,
    response: std::result::Result<CompletionResponse, BackendError>,
    project_root: &Path,
    opts: &OutputOptions,
) -> Result<TranslateOutcome> {
    let response = response.map_err(|e| Error::from(e).at(Stage::Complete))?;
    if let Some(prompt_file) = response.exported_to {
        return Ok(TranslateOutcome::Exported { source_file: file.to_owned(), prompt_file });
    }
    let meta = BackendMeta {
        backend: response.backend,
        model_name: response.model_name.clone(),
        finish_reason: response.finish_reason,
    };
    let result = TranslationResult::from_response(file, &response.text, Some(meta))
        .map_err(|e| Error::from(e).at(Stage::Extract))?;
    let files = write_outputs(&stem_of(file), &result, &opts.dir_for(file, project_root), opts.force)
        .map_err(|e| e.at(Stage::Write))?;
    Ok(TranslateOutcome::Written { result, files })
}

/// Runs the whole pipeline for one file. Nothing but the draft is written
/// unless every stage succeeds.
pub fn translate_file(
    file: &Path,
    template: &ChatTemplate,
    cfg: &BackendConfig,
    cmap: &ConstructMap,
    mapping: &TypeMapping,
    opts: &OutputOptions,
) -> Result<TranslateOutcome> {
    let prompt = prepare(file, template, cmap, mapping)?;
    finish(file, gateway::complete(&prompt, cfg), cmap.root(), opts)
}

/// Translates `files` with completions batched per `cfg.batch_size`.
/// Results are in input order; failures stay with their file.
pub fn translate_batch(
    files: &[PathBuf],
    template: &ChatTemplate,
    cfg: &BackendConfig,
    cmap: &ConstructMap,
    mapping: &TypeMapping,
    opts: &OutputOptions,
) -> Vec<Result<TranslateOutcome>> {
    let prepared: Vec<Result<AssembledPrompt>> =
        files.iter().map(|f| prepare(f, template, cmap, mapping)).collect();
    let ready: Vec<AssembledPrompt> = prepared.iter().filter_map(|p| p.as_ref().ok().cloned()).collect();
    let mut responses = gateway::complete_batch(&ready, cfg).into_iter();
    files
        .iter()
        .zip(prepared)
        .map(|(file, p)| {
            p?;
            let response = responses.next().expect("one response per prompt");
            finish(file, response, cmap.root(), opts)
        })
        .collect()
}

/// Extracts and writes a reply pasted back from a manual chat session.
pub fn resume(
    stem: &str,
    pasted_response_path: &Path,
    out_dir: &Path,
    force: bool,
) -> Result<(TranslationResult, Vec<PathBuf>)> {
    let bytes = fs::read(pasted_response_path).map_err(|e| Error::io(pasted_response_path, e))?;
    let text = String::from_utf8_lossy(&bytes);
    let result = TranslationResult::from_response(pasted_response_path, &text, None)
        .map_err(|e| Error::from(e).at(Stage::Extract))?;
    let files = write_outputs(stem, &result, out_dir, force).map_err(|e| e.at(Stage::Write))?;
    Ok((result, files))
}

/// One line of the JSON Lines report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportEntry {
    pub stem: String,
    pub source: String,
    pub status: &'static str,
    pub warnings: Vec<String>,
    pub finish_reason: Option<FinishReason>,
    pub outputs: Vec<String>,
    pub error: Option<String>,
}

impl ReportEntry {
    pub fn new(source: &Path, outcome: &Result<TranslateOutcome>) -> ReportEntry {
        let mut entry = ReportEntry {
            stem: stem_of(source),
            source: source.display().to_string(),
            status: "failed",
            warnings: Vec::new(),
            finish_reason: None,
            outputs: Vec::new(),
            error: None,
        };
        match outcome {
            Ok(TranslateOutcome::Written { result, files }) => {
                entry.status = "written";
                entry.warnings = result.warnings.iter().map(ToString::to_string).collect();
                entry.finish_reason = result.backend_meta.as_ref().map(|m| m.finish_reason);
                entry.outputs = files.iter().map(|f| f.display().to_string()).collect();
            }
            Ok(TranslateOutcome::Exported { prompt_file, .. }) => {
                entry.status = "exported";
                entry.outputs = vec![prompt_file.display().to_string()];
            }
            Err(e) => entry.error = Some(e.to_string()),
        }
        entry
    }
}

/// Writes one JSON object per line.
pub fn write_report(path: &Path, entries: &[ReportEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&serde_json::to_string(e).expect("report entry serializes"));
        text.push('\n');
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
