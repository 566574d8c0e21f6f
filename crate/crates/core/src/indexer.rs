//! Per-directory construct indexes and the project-wide inverse map.
//!
//! Every directory holding Fortran sources gets a `.scribe-index.yaml`
//! listing the modules, subroutines and functions defined in each file.
//! Loading all of them and inverting yields a [`ConstructMap`] from
//! construct name to defining file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Component, Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::error::{Diagnostic, Error, Result};
use crate::fortran::{self, Header, SourceFile, SourceForm};

/// Name of the per-directory index file.
pub const INDEX_FILE_NAME: &str = ".scribe-index.yaml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstructKind {
    Module,
    Subroutine,
    Function,
}

impl ConstructKind {
    pub const ALL: [ConstructKind; 3] =
        [ConstructKind::Module, ConstructKind::Subroutine, ConstructKind::Function];

    pub fn as_str(self) -> &'static str {
        match self {
            ConstructKind::Module => "module",
            ConstructKind::Subroutine => "subroutine",
            ConstructKind::Function => "function",
        }
    }
}

impl fmt::Display for ConstructKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Constructs defined in one file. Names are lowercase, sorted and unique.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileConstructs {
    #[serde(skip)]
    pub filename: String,
    #[serde(default)]
    pub modules: Vec<String>,
    #[serde(default)]
    pub subroutines: Vec<String>,
    #[serde(default)]
    pub functions: Vec<String>,
}

impl FileConstructs {
    pub fn names(&self, kind: ConstructKind) -> &[String] {
        match kind {
            ConstructKind::Module => &self.modules,
            ConstructKind::Subroutine => &self.subroutines,
            ConstructKind::Function => &self.functions,
        }
    }

    fn names_mut(&mut self, kind: ConstructKind) -> &mut Vec<String> {
        match kind {
            ConstructKind::Module => &mut self.modules,
            ConstructKind::Subroutine => &mut self.subroutines,
            ConstructKind::Function => &mut self.functions,
        }
    }

    /// All (kind, name) pairs in kind order.
    pub fn iter(&self) -> impl Iterator<Item = (ConstructKind, &str)> {
        ConstructKind::ALL
            .into_iter()
            .flat_map(move |k| self.names(k).iter().map(move |n| (k, n.as_str())))
    }

    pub fn is_empty(&self) -> bool {
        self.modules.is_empty() && self.subroutines.is_empty() && self.functions.is_empty()
    }

    fn normalize(&mut self) {
        for kind in ConstructKind::ALL {
            let names = self.names_mut(kind);
            names.sort();
            names.dedup();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectoryIndex {
    pub root: String,
    /// Path relative to `root`, `/`-separated; `.` for the root itself.
    pub directory: String,
    pub files: BTreeMap<String, FileConstructs>,
}

impl DirectoryIndex {
    pub fn dir_path(&self) -> PathBuf {
        if self.directory == "." {
            PathBuf::from(&self.root)
        } else {
            Path::new(&self.root).join(&self.directory)
        }
    }
}

/// Result of scanning one source file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileScan {
    pub constructs: FileConstructs,
    pub diagnostics: Vec<Diagnostic>,
}

/// Finds every module, subroutine and function defined in `source_text`.
///
/// Names declared inside `interface` blocks are declarations, not
/// definitions, and are skipped. Statement functions are not indexed.
pub fn scan_file(filename: &str, source_text: &str) -> FileScan {
    let form = SourceForm::from_path(Path::new(filename)).unwrap_or(SourceForm::Free);
    let source = SourceFile::parse(source_text, form);
    let mut constructs = FileConstructs { filename: filename.to_owned(), ..Default::default() };
    let mut diagnostics: Vec<Diagnostic> = source
        .problems
        .iter()
        .map(|(line, msg)| Diagnostic::new(filename, Some(*line), msg.clone()))
        .collect();

    let mut interface_depth = 0usize;
    for (line, stmt) in source.statements() {
        match fortran::parse_header(&stmt.key) {
            Ok(Some(Header::InterfaceStart)) => interface_depth += 1,
            Ok(Some(Header::InterfaceEnd)) => interface_depth = interface_depth.saturating_sub(1),
            Ok(Some(_)) if interface_depth > 0 => {}
            Ok(Some(Header::Module(name))) => constructs.modules.push(name),
            Ok(Some(Header::Subroutine { name, .. })) => constructs.subroutines.push(name),
            Ok(Some(Header::Function { name, .. })) => constructs.functions.push(name),
            Ok(Some(Header::Program(_))) | Ok(None) => {}
            Err(word) => diagnostics.push(Diagnostic::new(
                filename,
                Some(line.start),
                format!("malformed {word} statement: {}", stmt.text),
            )),
        }
    }
    if interface_depth > 0 {
        diagnostics.push(Diagnostic::new(filename, None, "unterminated interface block"));
    }
    constructs.normalize();
    FileScan { constructs, diagnostics }
}

/// `/`-separated path of `dir` relative to `root`; `.` when equal.
pub fn relative_dir(dir: &Path, root: &Path) -> Option<String> {
    let rel = dir.strip_prefix(root).ok()?;
    let parts: Vec<String> = rel
        .components()
        .filter_map(|c| match c {
            Component::Normal(s) => Some(s.to_string_lossy().into_owned()),
            _ => None,
        })
        .collect();
    Some(if parts.is_empty() { ".".to_owned() } else { parts.join("/") })
}

/// Indexes the Fortran files directly inside `dir` (not recursive).
///
/// Unreadable files become diagnostics; only an unreadable directory fails.
pub fn index_directory(dir: &Path, root: &Path) -> Result<(DirectoryIndex, Vec<Diagnostic>)> {
    let directory = relative_dir(dir, root).ok_or_else(|| {
        Error::Config(format!("{} is not inside {}", dir.display(), root.display()))
    })?;
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() && fortran::is_fortran_path(&path) {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();

    let mut files = BTreeMap::new();
    let mut diagnostics = Vec::new();
    for name in names {
        let path = dir.join(&name);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) => {
                diagnostics.push(Diagnostic::new(&path, None, format!("unreadable: {e}")));
                continue;
            }
        };
        let scan = scan_file(&name, &fortran::decode(&bytes));
        diagnostics.extend(scan.diagnostics.into_iter().map(|mut d| {
            d.path = path.clone();
            d
        }));
        files.insert(name, scan.constructs);
    }
    let index = DirectoryIndex {
        root: root.to_string_lossy().into_owned(),
        directory,
        files,
    };
    Ok((index, diagnostics))
}

/// Writes `index` as `.scribe-index.yaml` inside `dir`.
pub fn write_index(index: &DirectoryIndex, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(INDEX_FILE_NAME);
    let yaml = serde_yaml::to_string(index).map_err(|e| Error::IndexFormat {
        path: path.clone(),
        message: e.to_string(),
    })?;
    fs::write(&path, yaml).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_index(path: &Path) -> Result<DirectoryIndex> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut index: DirectoryIndex = serde_yaml::from_str(&text).map_err(|e| Error::IndexFormat {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    for (name, fc) in index.files.iter_mut() {
        fc.filename = name.clone();
    }
    Ok(index)
}

/// A file identified by its directory (relative to the root) and name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FileRef {
    pub directory: String,
    pub filename: String,
}

impl FileRef {
    /// Root-relative path, e.g. `lib/lnrat.f`.
    pub fn path(&self) -> String {
        if self.directory == "." {
            self.filename.clone()
        } else {
            format!("{}/{}", self.directory, self.filename)
        }
    }
}

impl fmt::Display for FileRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.path())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DuplicateDefinition {
    pub kind: ConstructKind,
    pub name: String,
    pub files: Vec<FileRef>,
}

impl fmt::Display for DuplicateDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let files: Vec<String> = self.files.iter().map(FileRef::path).collect();
        write!(
            f,
            "{} `{}` is defined in {} files: {}",
            self.kind,
            self.name,
            self.files.len(),
            files.join(", ")
        )
    }
}

/// Inverse dictionary: (kind, name) → defining files.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConstructMap {
    root: PathBuf,
    entries: BTreeMap<(ConstructKind, String), Vec<FileRef>>,
    files: BTreeSet<FileRef>,
}

impl ConstructMap {
    pub fn build(indexes: &[DirectoryIndex]) -> ConstructMap {
        let mut map = ConstructMap::default();
        if let Some(first) = indexes.first() {
            map.root = PathBuf::from(&first.root);
        }
        for index in indexes {
            for (filename, fc) in &index.files {
                let file = FileRef {
                    directory: index.directory.clone(),
                    filename: filename.clone(),
                };
                for (kind, name) in fc.iter() {
                    let slot = map.entries.entry((kind, name.to_ascii_lowercase())).or_default();
                    if !slot.contains(&file) {
                        slot.push(file.clone());
                    }
                }
                map.files.insert(file);
            }
        }
        for files in map.entries.values_mut() {
            files.sort();
        }
        map
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Defining files of `name` (case-insensitive). Empty when undefined.
    pub fn lookup(&self, kind: ConstructKind, name: &str) -> &[FileRef] {
        self.entries
            .get(&(kind, name.to_ascii_lowercase()))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn entries(&self) -> impl Iterator<Item = (ConstructKind, &str, &[FileRef])> {
        self.entries
            .iter()
            .map(|((k, n), files)| (*k, n.as_str(), files.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn duplicates(&self) -> Vec<DuplicateDefinition> {
        self.entries
            .iter()
            .filter(|(_, files)| files.len() > 1)
            .map(|((kind, name), files)| DuplicateDefinition {
                kind: *kind,
                name: name.clone(),
                files: files.clone(),
            })
            .collect()
    }

    pub fn contains_file(&self, file: &FileRef) -> bool {
        self.files.contains(file)
    }

    /// Constructs defined in `file`, reconstructed from the inverse entries.
    pub fn constructs_in(&self, file: &FileRef) -> Vec<(ConstructKind, &str)> {
        self.entries
            .iter()
            .filter(|(_, files)| files.contains(file))
            .map(|((k, n), _)| (*k, n.as_str()))
            .collect()
    }

    /// Identifies a filesystem path relative to this map's root.
    pub fn file_ref(&self, path: &Path) -> Option<FileRef> {
        let abs = absolute(path);
        let dir = relative_dir(abs.parent()?, &self.root)?;
        Some(FileRef {
            directory: dir,
            filename: abs.file_name()?.to_string_lossy().into_owned(),
        })
    }
}

/// Builds the inverse map over all loaded directory indexes.
pub fn build_construct_map(indexes: &[DirectoryIndex]) -> ConstructMap {
    ConstructMap::build(indexes)
}

fn absolute(path: &Path) -> PathBuf {
    fs::canonicalize(path).unwrap_or_else(|_| {
        if path.is_absolute() {
            path.to_owned()
        } else {
            std::env::current_dir().map(|d| d.join(path)).unwrap_or_else(|_| path.to_owned())
        }
    })
}

fn is_hidden(entry: &walkdir::DirEntry) -> bool {
    entry.depth() > 0 && entry.file_name().to_string_lossy().starts_with('.')
}

/// Output of [`index_tree`].
#[derive(Debug, Clone)]
pub struct TreeIndex {
    pub indexes: Vec<DirectoryIndex>,
    pub map: ConstructMap,
    pub written: Vec<PathBuf>,
    /// Per-file parse and read problems; non-empty means some file failed.
    pub diagnostics: Vec<Diagnostic>,
}

/// Indexes every directory under `root` and writes one index file per
/// directory that holds Fortran sources. Stale index files in directories
/// without sources are removed.
pub fn index_tree(root: &Path) -> Result<TreeIndex> {
    let root = fs::canonicalize(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in WalkDir::new(&root).sort_by_file_name().into_iter().filter_entry(|e| !is_hidden(e)) {
        let entry = entry.map_err(|e| {
            let path = e.path().map(Path::to_owned).unwrap_or_else(|| root.clone());
            Error::io(path, e.into())
        })?;
        if entry.file_type().is_dir() {
            dirs.push(entry.into_path());
        }
    }

    let scanned: Vec<(PathBuf, DirectoryIndex, Vec<Diagnostic>)> = dirs
        .par_iter()
        .map(|dir| index_directory(dir, &root).map(|(idx, diags)| (dir.clone(), idx, diags)))
        .collect::<Result<_>>()?;

    let mut indexes = Vec::new();
    let mut written = Vec::new();
    let mut diagnostics = Vec::new();
    for (dir, index, diags) in scanned {
        diagnostics.extend(diags);
        if index.files.is_empty() {
            let stale = dir.join(INDEX_FILE_NAME);
            if stale.exists() {
                fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
            }
            continue;
        }
        written.push(write_index(&index, &dir)?);
        indexes.push(index);
    }
    let mut map = ConstructMap::build(&indexes);
    map.root = root;
    Ok(TreeIndex { indexes, map, written, diagnostics })
}

/// Loads every index file under `root`.
pub fn load_tree(root: &Path) -> Result<(Vec<DirectoryIndex>, ConstructMap)> {
    let root = fs::canonicalize(root).map_err(|e| Error::io(root, e))?;
    let mut indexes = Vec::new();
    for entry in WalkDir::new(&root).sort_by_file_name().into_iter().filter_entry(|e| !is_hidden(e)) {
        let entry = entry.map_err(|e| Error::io(&root, e.into()))?;
        if entry.file_type().is_dir() {
            let candidate = entry.path().join(INDEX_FILE_NAME);
            if candidate.is_file() {
                indexes.push(read_index(&candidate)?);
            }
        }
    }
    if indexes.is_empty() {
        return Err(Error::NotIndexed { path: root });
    }
    let mut map = ConstructMap::build(&indexes);
    map.root = root;
    Ok((indexes, map))
}

/// Project root recorded by the nearest index file at or above `path`.
pub fn find_root(path: &Path) -> Result<PathBuf> {
    let abs = absolute(path);
    let start = if abs.is_dir() { abs.as_path() } else { abs.parent().unwrap_or(&abs) };
    for dir in start.ancestors() {
        let candidate = dir.join(INDEX_FILE_NAME);
        if candidate.is_file() {
            return Ok(PathBuf::from(read_index(&candidate)?.root));
        }
    }
    Err(Error::NotIndexed { path: path.to_owned() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_module() {
        let s = scan_file("a.f90", "module foo\nend module foo\n");
        assert_eq!(s.constructs.modules, ["foo"]);
        assert!(s.constructs.subroutines.is_empty());
        assert!(s.constructs.functions.is_empty());
        assert!(s.diagnostics.is_empty());
    }

    #[test]
    fn two_modules_in_one_file() {
        let src = "module alpha\nend module\nmodule beta\ncontains\nsubroutine s()\nend subroutine\nend module\n";
        let s = scan_file("file1.f90", src);
        assert_eq!(s.constructs.modules, ["alpha", "beta"]);
        assert_eq!(s.constructs.subroutines, ["s"]);
    }

    #[test]
    fn case_is_normalized() {
        let upper = scan_file("a.f90", "MODULE Foo\nCONTAINS\nSUBROUTINE Bar()\nEND SUBROUTINE\nEND MODULE\n");
        let lower = scan_file("a.f90", "module foo\ncontains\nsubroutine bar()\nend subroutine\nend module\n");
        assert_eq!(upper, lower);
    }

    #[test]
    fn interface_blocks_and_statement_functions_are_not_definitions() {
        let src = "\
subroutine outer(f)
  interface
    real function f(x)
      real x
    end function
  end interface
  real sq, y
  sq(y) = y*y
end subroutine
";
        let s = scan_file("a.f90", src);
        assert_eq!(s.constructs.subroutines, ["outer"]);
        assert!(s.constructs.functions.is_empty());
    }

    #[test]
    fn keywords_in_comments_and_strings_are_ignored() {
        let src = "      program p\nc     subroutine fake\n      print *, 'subroutine nope'\n      end\n";
        let s = scan_file("p.f", src);
        assert!(s.constructs.is_empty());
        assert!(s.diagnostics.is_empty());
    }

    #[test]
    fn duplicate_names_in_one_file_are_listed_once() {
        let src = "subroutine a()\nend\nsubroutine A()\nend\n";
        assert_eq!(scan_file("x.f90", src).constructs.subroutines, ["a"]);
    }

    #[test]
    fn malformed_header_is_a_diagnostic_not_a_panic() {
        let s = scan_file("bad.f90", "subroutine 9lives(\nend\n");
        assert_eq!(s.diagnostics.len(), 1);
        assert_eq!(s.diagnostics[0].line, Some(1));
        assert!(s.diagnostics[0].to_string().starts_with("bad.f90:1:"));
    }

    #[test]
    fn relative_dir_forms() {
        assert_eq!(relative_dir(Path::new("/r"), Path::new("/r")).as_deref(), Some("."));
        assert_eq!(relative_dir(Path::new("/r/a/b"), Path::new("/r")).as_deref(), Some("a/b"));
        assert_eq!(relative_dir(Path::new("/x"), Path::new("/r")), None);
    }

    #[test]
    fn undefined_lookup_is_empty() {
        let map = ConstructMap::build(&[]);
        assert!(map.lookup(ConstructKind::Subroutine, "nothing").is_empty());
    }
}
