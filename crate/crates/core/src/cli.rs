//! Command-line driver: `index`, `inspect`, `draft`, `translate`, `resume`.
//!
//! Exit status: 0 on success, 1 when any file failed, 2 on usage or
//! configuration errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigFile, GlobalConfig};
use crate::drafter::{self, TypeMapping};
use crate::error::{Error, Result};
use crate::gateway::{BackendConfig, BackendKind};
use crate::indexer::{self, ConstructMap};
use crate::inspector::{self, InspectOutcome, InspectionRequest};
use crate::prompt;
use crate::translator::{self, OutputOptions, ReportEntry, TranslateOutcome};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FILE_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "scribe", version, about = "Index Fortran trees and translate them to C++ with an LLM")]
pub struct Cli {
    /// Project root; defaults to the root recorded in the nearest index file
    #[arg(long, global = true, value_name = "DIR")]
    pub root: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a .scribe-index.yaml into every directory holding Fortran sources
    Index {
        #[arg(value_name = "ROOT")]
        root: PathBuf,
    },
    /// Ask a question about one or more source files
    Inspect {
        #[arg(required = true, value_name = "FILE")]
        files: Vec<String>,
        #[arg(short, long)]
        query: String,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Write <stem>.scribe drafts beside the given sources
    Draft {
        #[arg(required = true, value_name = "FILE")]
        files: Vec<String>,
    },
    /// Translate sources to <stem>.cpp and <stem>_fi.f90
    Translate {
        #[arg(required = true, value_name = "FILE")]
        files: Vec<String>,
        /// TOML chat template (seed prompt)
        #[arg(long, value_name = "PATH")]
        template: Option<PathBuf>,
        /// Mirror output tree; outputs go beside the sources otherwise
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Overwrite existing output files
        #[arg(long)]
        force: bool,
        /// Write a JSON Lines report, one object per file
        #[arg(long, value_name = "PATH")]
        report: Option<PathBuf>,
        /// Use a pasted model reply instead of calling a backend
        #[arg(long, value_name = "REPLY")]
        resume: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Write outputs for STEM from a pasted model reply
    Resume {
        stem: String,
        #[arg(value_name = "REPLY")]
        response: PathBuf,
        #[arg(long, value_name = "DIR", default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

#[derive(Debug, Default, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, value_name = "URL")]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub top_p: Option<f64>,
    /// Environment variable holding the API token
    #[arg(long, value_name = "VAR")]
    pub token_env: Option<String>,
    /// Write prompts as JSON (a .json file or a directory) instead of calling a model
    #[arg(long, value_name = "PATH")]
    pub export: Option<PathBuf>,
}

impl BackendArgs {
    fn apply(&self, mut cfg: BackendConfig) -> BackendConfig {
        if let Some(path) = &self.export {
            cfg.export_path = Some(path.clone());
            cfg.kind = BackendKind::Export;
        }
        if let Some(kind) = self.backend {
            cfg.kind = kind;
        }
        if let Some(m) = &self.model {
            cfg.model_name = m.clone();
        }
        if let Some(e) = &self.endpoint {
            cfg.endpoint_url = Some(e.clone());
        }
        if let Some(n) = self.max_tokens {
            cfg.max_tokens = n;
        }
        if let Some(n) = self.batch_size {
            cfg.batch_size = n;
        }
        if self.temperature.is_some() {
            cfg.temperature = self.temperature;
        }
        if self.top_p.is_some() {
            cfg.top_p = self.top_p;
        }
        if let Some(v) = &self.token_env {
            cfg.auth_token_env_var = Some(v.clone());
        }
        cfg
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

/// Errors returned here are configuration problems (exit 2); per-file
/// failures are reported inline and turn into exit 1.
fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Index { root } => cmd_index(cli.root.as_deref().unwrap_or(&root)),
        Command::Inspect { files, query, backend } => cmd_inspect(cli.root, &files, &query, &backend),
        Command::Draft { files } => cmd_draft(cli.root, &files),
        Command::Translate { files, template, out, force, report, resume, backend } => {
            let files = expand_files(&files)?;
            let project_root = match &cli.root {
                Some(r) => r.clone(),
                None if resume.is_some() => indexer::find_root(&files[0]).unwrap_or_else(|_| parent_of(&files[0])),
                None => indexer::find_root(&files[0])?,
            };
            let file_cfg = ConfigFile::load(&project_root)?;
            let global = GlobalConfig {
                backend: backend.apply(file_cfg.backend),
                template_path: template.or(file_cfg.translate.template),
                out_dir: out.or(file_cfg.translate.out_dir),
                force_overwrite: force,
                report_path: report,
                project_root,
            };
            match resume {
                Some(reply) => cmd_translate_resume(&global, &files, &reply),
                None => cmd_translate(&global, &files),
            }
        }
        Command::Resume { stem, response, out, force } => cmd_resume(&stem, &response, &out, force),
    }
}

fn parent_of(file: &Path) -> PathBuf {
    file.parent().filter(|p| !p.as_os_str().is_empty()).map(Path::to_owned).unwrap_or_else(|| ".".into())
}

/// Expands glob patterns; plain paths must exist.
pub fn expand_files(patterns: &[String]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for pattern in patterns {
        if pattern.contains(['*', '?', '[']) {
            let paths = glob::glob(pattern).map_err(|e| Error::Config(format!("bad pattern `{pattern}`: {e}")))?;
            let before = files.len();
            for p in paths {
                let p = p.map_err(|e| Error::io(e.path().to_owned(), e.into()))?;
                if p.is_file() {
                    files.push(p);
                }
            }
            if files.len() == before {
                return Err(Error::Config(format!("`{pattern}` matches no files")));
            }
        } else {
            let p = PathBuf::from(pattern);
            if !p.is_file() {
                return Err(Error::Config(format!("{pattern}: no such file")));
            }
            files.push(p);
        }
    }
    Ok(files)
}

fn load_map(root: Option<PathBuf>, first_file: &Path) -> Result<ConstructMap> {
    let root = match root {
        Some(r) => r,
        None => indexer::find_root(first_file)?,
    };
    Ok(indexer::load_tree(&root)?.1)
}

pub fn cmd_index(root: &Path) -> Result<i32> {
    let tree = indexer::index_tree(root)?;
    let files: usize = tree.indexes.iter().map(|i| i.files.len()).sum();
    eprintln!(
        "indexed {} directories, {} files, {} constructs",
        tree.indexes.len(),
        files,
        tree.map.len()
    );
    for dup in tree.map.duplicates() {
        eprintln!("warning: {dup}");
    }
    for d in &tree.diagnostics {
        eprintln!("error: {d}");
    }
    for path in &tree.written {
        println!("{}", path.display());
    }
    Ok(if tree.diagnostics.is_empty() { EXIT_OK } else { EXIT_FILE_FAILURE })
}

pub fn cmd_inspect(root: Option<PathBuf>, patterns: &[String], query: &str, args: &BackendArgs) -> Result<i32> {
    let files = expand_files(patterns)?;
    let root = root.or_else(|| indexer::find_root(&files[0]).ok());
    let (cmap, file_cfg) = match &root {
        Some(r) => (indexer::load_tree(r).map(|(_, m)| m).unwrap_or_default(), ConfigFile::load(r)?),
        None => {
            eprintln!("warning: no index found; inspecting without project context");
            (ConstructMap::default(), ConfigFile::default())
        }
    };
    let cfg = args.apply(file_cfg.backend);
    cfg.validate()?;
    let req = InspectionRequest { files, query: query.to_owned(), cfg };
    match inspector::inspect(&req, &cmap) {
        Ok(InspectOutcome::Answer(text)) => {
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
            Ok(EXIT_OK)
        }
        Ok(InspectOutcome::Exported(path)) => {
            eprintln!("prompt exported to {}", path.display());
            println!("{}", path.display());
            Ok(EXIT_OK)
        }
        Err(e @ Error::Config(_)) => Err(e),
        Err(e) => {
            eprintln!("error: {e}");
            Ok(EXIT_FILE_FAILURE)
        }
    }
}

pub fn cmd_draft(root: Option<PathBuf>, patterns: &[String]) -> Result<i32> {
    let files = expand_files(patterns)?;
    let cmap = load_map(root, &files[0])?;
    let mapping = TypeMapping::default();
    let mut code = EXIT_OK;
    for file in &files {
        match drafter::generate_draft(file, &cmap, &mapping) {
            Ok(artifact) => {
                let out = drafter::draft_path(file);
                eprintln!("drafted {} ({} annotations)", out.display(), artifact.annotations.len());
                println!("{}", out.display());
            }
            Err(e) => {
                eprintln!("error: {}: {e}", file.display());
                code = EXIT_FILE_FAILURE;
            }
        }
    }
    Ok(code)
}

pub fn cmd_translate(global: &GlobalConfig, files: &[PathBuf]) -> Result<i32> {
    let template_path = global.template_path.as_ref().ok_or_else(|| {
        let mut cmd = <Cli as clap::CommandFactory>::command();
        cmd.build();
        let usage = cmd.find_subcommand_mut("translate").map(|c| c.render_usage().to_string()).unwrap_or_default();
        Error::Config(format!(
            "translate requires --template <PATH> (or `template` under [translate] in scribe.toml)\n\n{usage}"
        ))
    })?;
    let template = prompt::load_template(template_path)?;
    global.backend.validate()?;
    if global.backend.kind == BackendKind::Export && files.len() > 1 {
        if let Some(p) = global.backend.export_path.as_ref().filter(|p| p.extension().is_some_and(|e| e == "json")) {
            return Err(Error::Config(format!(
                "--export {} names a single file but {} sources were given; pass a directory",
                p.display(),
                files.len()
            )));
        }
    }
    let (_, cmap) = indexer::load_tree(&global.project_root)?;
    let opts = OutputOptions { out_dir: global.out_dir.clone(), force: global.force_overwrite };
    let outcomes = translator::translate_batch(files, &template, &global.backend, &cmap, &TypeMapping::default(), &opts);

    let mut code = EXIT_OK;
    let mut report = Vec::new();
    for (file, outcome) in files.iter().zip(&outcomes) {
        report_outcome(file, outcome);
        if outcome.is_err() {
            code = EXIT_FILE_FAILURE;
        }
        report.push(ReportEntry::new(file, outcome));
    }
    if let Some(path) = &global.report_path {
        translator::write_report(path, &report)?;
    }
    Ok(code)
}

fn report_outcome(file: &Path, outcome: &Result<TranslateOutcome>) {
    match outcome {
        Ok(TranslateOutcome::Written { result, files }) => {
            for w in &result.warnings {
                eprintln!("warning: {}: {w}", file.display());
            }
            let names: Vec<String> = files.iter().map(|f| f.display().to_string()).collect();
            eprintln!("translated {} -> {}", file.display(), names.join(", "));
            for f in files {
                println!("{}", f.display());
            }
        }
        Ok(TranslateOutcome::Exported { prompt_file, .. }) => {
            eprintln!(
                "exported prompt for {} to {}; paste the reply into a file and run \
                 `scribe translate --resume <reply-file> {}`",
                file.display(),
                prompt_file.display(),
                file.display()
            );
            println!("{}", prompt_file.display());
        }
        Err(e) => {
            eprintln!("error: {}: {e}", file.display());
            if let Error::Extraction(x) = e.root_cause() {
                eprintln!("--- raw response ---\n{}\n--- end raw response ---", x.raw());
            }
        }
    }
}

pub fn cmd_translate_resume(global: &GlobalConfig, files: &[PathBuf], reply: &Path) -> Result<i32> {
    let [file] = files else {
        return Err(Error::Config("--resume takes exactly one source file".into()));
    };
    let opts = OutputOptions { out_dir: global.out_dir.clone(), force: global.force_overwrite };
    let out_dir = opts.dir_for(file, &global.project_root);
    let outcome = translator::resume(&translator::stem_of(file), reply, &out_dir, global.force_overwrite)
        .map(|(mut result, files)| {
            result.source_file = file.clone();
            TranslateOutcome::Written { result, files }
        });
    report_outcome(file, &outcome);
    if let Some(path) = &global.report_path {
        translator::write_report(path, &[ReportEntry::new(file, &outcome)])?;
    }
    Ok(if outcome.is_ok() { EXIT_OK } else { EXIT_FILE_FAILURE })
}

pub fn cmd_resume(stem: &str, reply: &Path, out: &Path, force: bool) -> Result<i32> {
    if !reply.is_file() {
        return Err(Error::Config(format!("{}: no such file", reply.display())));
    }
    let outcome = translator::resume(stem, reply, out, force)
        .map(|(result, files)| TranslateOutcome::Written { result, files });
    report_outcome(reply, &outcome);
    Ok(if outcome.is_ok() { EXIT_OK } else { EXIT_FILE_FAILURE })
}
