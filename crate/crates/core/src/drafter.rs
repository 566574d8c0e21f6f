//! Preliminary C++ drafts (`<stem>.scribe`) for Fortran sources.
//!
//! Declarations are rewritten through a [`TypeMapping`]; executable
//! statements are carried over verbatim behind a `// fortran: ` marker.
//! Index lookups add `// scribe: ...` annotation lines that tell the model
//! which names are defined elsewhere in the project, so it refers to them
//! instead of inventing bodies for them.
//!
//! Annotation grammar, one per line:
//!
//! ```text
//! // scribe: <kind> <name> defined in <file>|<unresolved>
//! // scribe: unconverted-declaration <name>
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use regex::Regex;

use crate::error::{Error, Result};
use crate::fortran::{self, Attr, BaseType, Declaration, Entity, Header, LineKind, SourceFile, SourceForm, StmtKind};
use crate::indexer::{ConstructKind, ConstructMap};

/// Prefix for Fortran lines carried into the draft unchanged.
pub const SOURCE_MARKER: &str = "// fortran: ";
/// Prefix for annotation lines.
pub const ANNOTATION_PREFIX: &str = "// scribe: ";
/// Placeholder location for names the index cannot resolve.
pub const UNRESOLVED: &str = "<unresolved>";
/// Extension of draft files.
pub const DRAFT_EXTENSION: &str = "scribe";

/// Ordered first-match rules from a Fortran type spelling to a C++ type.
#[derive(Debug, Clone)]
pub struct TypeMapping {
    rules: Vec<TypeRule>,
}

#[derive(Debug, Clone)]
pub struct TypeRule {
    /// Matched against the whitespace-free lowercase type, e.g. `real(dp)`.
    pub pattern: Regex,
    pub cpp_type: String,
}

impl TypeMapping {
    pub fn new(rules: Vec<TypeRule>) -> Self {
        Self { rules }
    }

    pub fn rule(pattern: &str, cpp_type: &str) -> TypeRule {
        TypeRule {
            pattern: Regex::new(pattern).expect("valid type pattern"),
            cpp_type: cpp_type.to_owned(),
        }
    }

    pub fn rules(&self) -> &[TypeRule] {
        &self.rules
    }

    /// C++ type for a Fortran type spelling, or `None` when no rule matches.
    pub fn cpp_type(&self, canonical: &str) -> Option<&str> {
        self.rules
            .iter()
            .find(|r| r.pattern.is_match(canonical))
            .map(|r| r.cpp_type.as_str())
    }
}

impl Default for TypeMapping {
    fn default() -> Self {
        Self::new(vec![
            Self::rule(r"^(real\*4|real\((kind=)?(4|sp|r4|real32)\))$", "float"),
            Self::rule(r"^(real(\*\d+|\(.*\))?|doubleprecision)$", "double"),
            Self::rule(r"^(integer\*8|integer\((kind=)?(8|i8|int64)\))$", "std::int64_t"),
            Self::rule(r"^integer(\*\d+|\(.*\))?$", "int"),
            Self::rule(r"^(complex\*8|complex\((kind=)?(4|sp|r4|real32)\))$", "std::complex<float>"),
            Self::rule(r"^(complex(\*\d+|\(.*\))?|doublecomplex)$", "std::complex<double>"),
            Self::rule(r"^logical(\*\d+|\(.*\))?$", "bool"),
            Self::rule(r"^character(\*.*|\(.*\))?$", "char"),
        ])
    }
}

/// Element types the FArray containers are instantiated for.
const FARRAY_ELEMENTS: &[&str] = &["double", "std::complex<double>", "int"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AnnotationKind {
    ExternalFunction,
    ExternalSubroutine,
    ExternalModule,
    StatementFunctionCandidate,
    UnconvertedDeclaration,
}

impl AnnotationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AnnotationKind::ExternalFunction => "external-function",
            AnnotationKind::ExternalSubroutine => "external-subroutine",
            AnnotationKind::ExternalModule => "external-module",
            AnnotationKind::StatementFunctionCandidate => "statement-function-candidate",
            AnnotationKind::UnconvertedDeclaration => "unconverted-declaration",
        }
    }

    pub fn is_external(self) -> bool {
        matches!(
            self,
            AnnotationKind::ExternalFunction
                | AnnotationKind::ExternalSubroutine
                | AnnotationKind::ExternalModule
        )
    }

    /// Index construct kind an external annotation resolves against.
    pub fn construct_kind(self) -> Option<ConstructKind> {
        match self {
            AnnotationKind::ExternalFunction => Some(ConstructKind::Function),
            AnnotationKind::ExternalSubroutine => Some(ConstructKind::Subroutine),
            AnnotationKind::ExternalModule => Some(ConstructKind::Module),
            _ => None,
        }
    }
}

impl fmt::Display for AnnotationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnnotationKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "external-function" => AnnotationKind::ExternalFunction,
            "external-subroutine" => AnnotationKind::ExternalSubroutine,
            "external-module" => AnnotationKind::ExternalModule,
            "statement-function-candidate" => AnnotationKind::StatementFunctionCandidate,
            "unconverted-declaration" => AnnotationKind::UnconvertedDeclaration,
            other => return Err(format!("unknown annotation kind `{other}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DraftAnnotation {
    pub kind: AnnotationKind,
    /// Name as first spelled in the source.
    pub name: String,
    /// Root-relative defining file, when the index resolves the name.
    pub resolved_file: Option<String>,
    /// Source line (1-based) the annotation belongs to.
    pub line: usize,
}

impl DraftAnnotation {
    pub fn render(&self) -> String {
        match self.kind {
            AnnotationKind::UnconvertedDeclaration => {
                format!("{ANNOTATION_PREFIX}{} {}", self.kind, self.name)
            }
            _ => format!(
                "{ANNOTATION_PREFIX}{} {} defined in {}",
                self.kind,
                self.name,
                self.resolved_file.as_deref().unwrap_or(UNRESOLVED)
            ),
        }
    }

    /// Parses an annotation line back; the line number is not recoverable
    /// and is set to 0.
    pub fn parse(line: &str) -> Option<DraftAnnotation> {
        let body = line.trim().strip_prefix(ANNOTATION_PREFIX)?;
        let mut words = body.splitn(3, ' ');
        let kind: AnnotationKind = words.next()?.parse().ok()?;
        let name = words.next()?.to_owned();
        let resolved_file = match (kind, words.next()) {
            (AnnotationKind::UnconvertedDeclaration, None) => None,
            (AnnotationKind::UnconvertedDeclaration, Some(_)) => return None,
            (_, Some(rest)) => {
                let loc = rest.strip_prefix("defined in ")?;
                (loc != UNRESOLVED).then(|| loc.to_owned())
            }
            (_, None) => return None,
        };
        Some(DraftAnnotation { kind, name, resolved_file, line: 0 })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DraftArtifact {
    pub source_file: PathBuf,
    pub draft_text: String,
    pub annotations: Vec<DraftAnnotation>,
}

/// A declaration entity rewritten as C++.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvertedEntity {
    pub name: String,
    pub cpp: String,
}

/// One logical source line after declaration conversion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DraftContent {
    Blank,
    Comment(String),
    Directive(String),
    Declaration { entities: Vec<ConvertedEntity>, comment: Option<String> },
    /// A declaration no rule covers; `names` label the annotation(s).
    Unconverted { names: Vec<String> },
    /// `external` statement naming procedures.
    External { names: Vec<String> },
    /// Executable or structural statement copied with the source marker.
    Copied,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DraftLine {
    /// First physical source line.
    pub line: usize,
    /// Physical lines of a statement, without comment lines that sit
    /// inside a continuation (those get their own [`DraftLine`]).
    pub raw: Vec<String>,
    pub content: DraftContent,
}

/// Rewrites declarations per `mapping`; every logical line yields exactly one
/// [`DraftLine`].
pub fn convert_declarations(source: &SourceFile, mapping: &TypeMapping) -> Vec<DraftLine> {
    let mut out = Vec::with_capacity(source.lines.len());
    let mut dummies: HashSet<String> = HashSet::new();
    let standalone: HashSet<usize> =
        source.lines.iter().filter(|l| l.kind != LineKind::Statement).map(|l| l.start).collect();
    for line in &source.lines {
        let raw: Vec<String> = match line.kind {
            LineKind::Statement => (line.start..=line.end)
                .filter(|n| !standalone.contains(n))
                .map(|n| source.raw_lines[n - 1].trim_end().to_owned())
                .collect(),
            _ => Vec::new(),
        };
        let content = match line.kind {
            LineKind::Blank => DraftContent::Blank,
            LineKind::Comment => DraftContent::Comment(line.code.clone()),
            LineKind::Preprocessor => DraftContent::Directive(line.code.clone()),
            LineKind::Statement => {
                let kinds: Vec<StmtKind> = line.stmts.iter().map(fortran::classify).collect();
                for k in &kinds {
                    match k {
                        StmtKind::Header(Header::Subroutine { args, .. } | Header::Function { args, .. }) => {
                            dummies = args.iter().map(|a| a.to_ascii_lowercase()).collect();
                        }
                        StmtKind::Header(Header::Module(_) | Header::Program(_)) => dummies.clear(),
                        _ => {}
                    }
                }
                match kinds.as_slice() {
                    [StmtKind::Declaration(decl)] => match convert_declaration(decl, mapping, &dummies) {
                        Ok(entities) => DraftContent::Declaration {
                            entities,
                            comment: line.comment.clone(),
                        },
                        Err(names) => DraftContent::Unconverted { names },
                    },
                    [StmtKind::External(names)] => DraftContent::External { names: names.clone() },
                    [StmtKind::MalformedDeclaration(word)] => {
                        DraftContent::Unconverted { names: vec![word.clone()] }
                    }
                    [StmtKind::OtherDeclaration(word)] => {
                        DraftContent::Unconverted { names: vec![(*word).to_owned()] }
                    }
                    many => {
                        let names: Vec<String> = many
                            .iter()
                            .filter_map(|k| match k {
                                StmtKind::Declaration(d) => Some(d.spec.canonical()),
                                StmtKind::MalformedDeclaration(w) => Some(w.clone()),
                                StmtKind::OtherDeclaration(w) => Some((*w).to_owned()),
                                StmtKind::External(_) => Some("external".to_owned()),
                                _ => None,
                            })
                            .collect();
                        if names.is_empty() {
                            DraftContent::Copied
                        } else {
                            DraftContent::Unconverted { names }
                        }
                    }
                }
            }
        };
        out.push(DraftLine { line: line.start, raw, content });
    }
    out
}

/// Converts every entity, or returns the names of those no rule covers.
fn convert_declaration(
    decl: &Declaration,
    mapping: &TypeMapping,
    dummies: &HashSet<String>,
) -> std::result::Result<Vec<ConvertedEntity>, Vec<String>> {
    let unsupported_attr = decl.attrs.iter().any(|a| matches!(a, Attr::Unsupported(_)));
    let cpp_type = mapping.cpp_type(&decl.spec.canonical());
    let mut converted = Vec::new();
    let mut failed = Vec::new();
    for e in &decl.entities {
        let result = match cpp_type {
            Some(t) if !unsupported_attr => {
                let dummy = dummies.contains(&e.name.to_ascii_lowercase());
                convert_entity(decl, e, t, dummy)
            }
            _ => None,
        };
        match result {
            Some(cpp) => converted.push(ConvertedEntity { name: e.name.clone(), cpp }),
            None => failed.push(e.name.clone()),
        }
    }
    if failed.is_empty() {
        Ok(converted)
    } else {
        Err(failed)
    }
}

fn convert_entity(decl: &Declaration, e: &Entity, cpp_type: &str, dummy: bool) -> Option<String> {
    let parameter = decl.has(&Attr::Parameter);
    let save = decl.has(&Attr::Save);
    let dims = decl.dims_of(e);
    let init = match &e.init {
        Some(text) => {
            if text.contains("(/") || text.contains('[') {
                return None;
            }
            Some(convert_expr(text))
        }
        None => None,
    };

    if decl.spec.base == BaseType::Character {
        if dims.is_some() {
            return None;
        }
        let len = e.char_len.clone().or_else(|| character_len(decl.spec.selector.as_deref()));
        let len = len.as_deref().unwrap_or("1");
        let assumed = matches!(len, "*" | "(*)" | ":" | "(:)");
        return Some(match (parameter, init) {
            (true, Some(v)) => format!("constexpr const char* {} = {v};", e.name),
            (true, None) => return None,
            (false, _) if assumed => format!("std::string {};", e.name),
            (false, Some(v)) => format!("char {}[{}] = {v};", e.name, convert_expr(len)),
            (false, None) => format!("char {}[{}];", e.name, convert_expr(len)),
        });
    }

    let storage = if parameter {
        "constexpr "
    } else if save {
        "static "
    } else {
        ""
    };
    match dims {
        None => Some(match (parameter, init) {
            (true, None) => return None,
            (_, Some(v)) => format!("{storage}{cpp_type} {} = {v};", e.name),
            (_, None) => format!("{storage}{cpp_type} {};", e.name),
        }),
        Some(dims) => {
            if parameter || init.is_some() || dims.is_empty() || dims.len() > 4 {
                return None;
            }
            if !FARRAY_ELEMENTS.contains(&cpp_type) {
                return None;
            }
            if dims.iter().any(|d| d.contains(':') || d.contains('*') || d.is_empty()) {
                return None;
            }
            let extents: Vec<String> = dims.iter().map(|d| convert_expr(d)).collect();
            let rank = extents.len();
            let view = format!("FArray{rank}D<{cpp_type}>");
            if dummy {
                Some(format!("{view} {name}({name}_ptr, {});", extents.join(", "), name = e.name))
            } else {
                let count = extents
                    .iter()
                    .map(|x| {
                        if x.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                            x.clone()
                        } else {
                            format!("({x})")
                        }
                    })
                    .collect::<Vec<_>>()
                    .join(" * ");
                Some(format!(
                    "{storage}std::vector<{cpp_type}> {name}_data({count}); {view} {name}({name}_data.data(), {});",
                    extents.join(", "),
                    name = e.name
                ))
            }
        }
    }
}

/// Length from a character selector: `*10`, `*(*)`, `(len=10)`, `(10)`, `(kind=1,len=n)`.
fn character_len(selector: Option<&str>) -> Option<String> {
    let sel = selector?;
    if let Some(star) = sel.strip_prefix('*') {
        let inner = star.strip_prefix('(').and_then(|s| s.strip_suffix(')')).unwrap_or(star);
        return Some(inner.to_owned());
    }
    let inner = sel.strip_prefix('(')?.strip_suffix(')')?;
    for part in inner.split(',') {
        if let Some(v) = part.strip_prefix("len=") {
            return Some(v.to_owned());
        }
    }
    let first = inner.split(',').next()?;
    (!first.contains('=')).then(|| first.to_owned())
}

/// Rewrites Fortran literal and operator spellings inside an expression:
/// `1.5d0` → `1.5e0`, `1.0_dp` → `1.0`, `.true.` → `true`, `.and.` → `&&`,
/// `'s'` → `"s"`. Anything else is kept as written.
pub fn convert_expr(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    let ident = |c: char| c.is_ascii_alphanumeric() || c == '_';
    while i < chars.len() {
        let c = chars[i];
        if c == '\'' || c == '"' {
            let q = c;
            let mut lit = String::new();
            i += 1;
            while i < chars.len() {
                if chars[i] == q {
                    if chars.get(i + 1) == Some(&q) {
                        lit.push(q);
                        i += 2;
                        continue;
                    }
                    i += 1;
                    break;
                }
                lit.push(chars[i]);
                i += 1;
            }
            out.push('"');
            for ch in lit.chars() {
                if ch == '"' || ch == '\\' {
                    out.push('\\');
                }
                out.push(ch);
            }
            out.push('"');
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && ident(chars[i]) {
                out.push(chars[i]);
                i += 1;
            }
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(char::is_ascii_digit)) {
            // numeric literal
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                // stop before a dotted operator such as `1.eq.`
                if chars[i] == '.' && chars.get(i + 1).is_some_and(|n| n.is_ascii_alphabetic())
                    && !matches!(chars.get(i + 1), Some('d' | 'D' | 'e' | 'E' | 'q' | 'Q'))
                {
                    break;
                }
                out.push(chars[i]);
                i += 1;
            }
            if matches!(chars.get(i), Some('d' | 'D' | 'e' | 'E' | 'q' | 'Q')) {
                let mut j = i + 1;
                if matches!(chars.get(j), Some('+' | '-')) {
                    j += 1;
                }
                if chars.get(j).is_some_and(char::is_ascii_digit) {
                    out.push('e');
                    out.extend(&chars[i + 1..j]);
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        out.push(chars[i]);
                        i += 1;
                    }
                }
            }
            if chars.get(i) == Some(&'_') {
                i += 1;
                while i < chars.len() && ident(chars[i]) {
                    i += 1;
                }
            }
        } else if c == '.' {
            let rest: String = chars[i..].iter().take(8).collect::<String>().to_ascii_lowercase();
            let ops = [
                (".true.", "true"),
                (".false.", "false"),
                (".and.", "&&"),
                (".or.", "||"),
                (".not.", "!"),
                (".eq.", "=="),
                (".ne.", "!="),
                (".lt.", "<"),
                (".le.", "<="),
                (".gt.", ">"),
                (".ge.", ">="),
            ];
            match ops.iter().find(|(f, _)| rest.starts_with(f)) {
                Some((f, cpp)) => {
                    out.push_str(cpp);
                    i += f.len();
                }
                None => {
                    out.push(c);
                    i += 1;
                }
            }
        } else if c == '/' && chars.get(i + 1) == Some(&'=') {
            out.push_str("!=");
            i += 2;
        } else {
            out.push(c);
            i += 1;
        }
    }
    out
}

struct ScalarDecl {
    name: String,
    line: usize,
    external: bool,
}

/// Flags scalars that are later applied to an argument list.
///
/// A name declared as a scalar in this file and used as `name(...)` before
/// any assignment defines it is either an external function (when the index
/// resolves it) or a statement function the model should turn into a local
/// callable. Names declared `external` are always reported.
pub fn detect_statement_functions(source: &SourceFile, cmap: &ConstructMap) -> Vec<DraftAnnotation> {
    let mut scalars: BTreeMap<String, ScalarDecl> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut declare = |name: &str, line: usize, external: bool| {
        let key = name.to_ascii_lowercase();
        match scalars.get_mut(&key) {
            Some(d) => d.external |= external,
            None => {
                order.push(key.clone());
                scalars.insert(key, ScalarDecl { name: name.to_owned(), line, external });
            }
        }
    };

    let mut executable = Vec::new();
    for (line, stmt) in source.statements() {
        match fortran::classify(stmt) {
            StmtKind::Declaration(decl) => {
                let external = decl.has(&Attr::External);
                let typed_scalar = !matches!(decl.spec.base, BaseType::Character | BaseType::Derived(_))
                    && !decl.has(&Attr::Parameter);
                for e in &decl.entities {
                    if external || (typed_scalar && decl.dims_of(e).is_none()) {
                        declare(&e.name, line.start, external);
                    }
                }
            }
            StmtKind::External(names) => {
                for n in names {
                    declare(&n, line.start, true);
                }
            }
            StmtKind::Executable => executable.push(stmt),
            _ => {}
        }
    }

    let mut applied: HashSet<String> = HashSet::new();
    let mut assigned: HashSet<String> = HashSet::new();
    for stmt in executable {
        let key = stmt.key.as_str();
        let bytes = key.as_bytes();
        for (a, b) in fortran::identifiers(key) {
            let name = &key[a..b];
            if !scalars.contains_key(name) || assigned.contains(name) {
                continue;
            }
            let before = key[..a].trim_end();
            let prev_word = before.rsplit(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).next();
            if before.ends_with('%') || prev_word == Some("call") {
                continue;
            }
            let next = bytes[b..].iter().find(|c| !c.is_ascii_whitespace());
            if next == Some(&b'(') {
                applied.insert(name.to_owned());
            }
        }
        let at = fortran::action_offset(key);
        let action = &key[at..];
        if let Some(&(a, b)) = fortran::identifiers(action).first() {
            if a == 0 {
                let rest = action[b..].trim_start();
                if rest.starts_with('=') && !rest.starts_with("==") {
                    assigned.insert(action[a..b].to_owned());
                }
            }
        }
    }

    let mut out = Vec::new();
    for key in order {
        let decl = &scalars[&key];
        if !(decl.external || applied.contains(&key)) {
            continue;
        }
        let files = cmap.lookup(ConstructKind::Function, &key);
        let (kind, resolved_file) = match files.first() {
            Some(f) => (AnnotationKind::ExternalFunction, Some(f.path())),
            None if decl.external => (AnnotationKind::ExternalFunction, None),
            None => (AnnotationKind::StatementFunctionCandidate, None),
        };
        out.push(DraftAnnotation { kind, name: decl.name.clone(), resolved_file, line: decl.line });
    }
    out.sort_by_key(|a| a.line);
    out
}

/// One annotation per distinct `use`d module and `call`ed subroutine, at
/// its first occurrence.
pub fn annotate_external_uses(source: &SourceFile, cmap: &ConstructMap) -> Vec<DraftAnnotation> {
    let mut seen: HashSet<(AnnotationKind, String)> = HashSet::new();
    let mut out = Vec::new();
    for (line, stmt) in source.statements() {
        let found = fortran::use_target(&stmt.key)
            .map(|r| (AnnotationKind::ExternalModule, r))
            .or_else(|| fortran::call_target(&stmt.key).map(|r| (AnnotationKind::ExternalSubroutine, r)));
        let Some((kind, (a, b))) = found else {
            continue;
        };
        let key = stmt.key[a..b].to_owned();
        if !seen.insert((kind, key.clone())) {
            continue;
        }
        let construct = kind.construct_kind().expect("external kind");
        let resolved_file = cmap.lookup(construct, &key).first().map(|f| f.path());
        out.push(DraftAnnotation {
            kind,
            name: stmt.text[a..b].to_owned(),
            resolved_file,
            line: line.start,
        });
    }
    out
}

/// Builds the draft for `source_text` without touching the filesystem.
pub fn draft_source(
    source_file: &Path,
    source_text: &str,
    cmap: &ConstructMap,
    mapping: &TypeMapping,
) -> DraftArtifact {
    let form = SourceForm::from_path(source_file).unwrap_or(SourceForm::Free);
    let source = SourceFile::parse(source_text, form);
    let lines = convert_declarations(&source, mapping);
    let mut by_line: BTreeMap<usize, Vec<DraftAnnotation>> = BTreeMap::new();
    for a in detect_statement_functions(&source, cmap)
        .into_iter()
        .chain(annotate_external_uses(&source, cmap))
    {
        by_line.entry(a.line).or_default().push(a);
    }
    let callable: HashSet<String> = by_line
        .values()
        .flatten()
        .filter(|a| {
            matches!(a.kind, AnnotationKind::ExternalFunction | AnnotationKind::StatementFunctionCandidate)
        })
        .map(|a| a.name.to_ascii_lowercase())
        .collect();

    let mut body: Vec<String> = Vec::new();
    let mut annotations = Vec::new();
    let marker = |raw: &[String], body: &mut Vec<String>| {
        for r in raw {
            body.push(format!("{SOURCE_MARKER}{r}").trim_end().to_owned());
        }
    };
    for dl in &lines {
        let here = by_line.remove(&dl.line).unwrap_or_default();
        let annotated_here = !here.is_empty();
        for a in here {
            body.push(a.render());
            annotations.push(a);
        }
        match &dl.content {
            DraftContent::Blank => body.push(String::new()),
            DraftContent::Comment(text) => body.push(format!("//{}", text.trim_end())),
            DraftContent::Directive(text) => body.push(text.trim_end().to_owned()),
            DraftContent::Declaration { entities, comment } => {
                let kept: Vec<&str> = entities
                    .iter()
                    .filter(|e| !callable.contains(&e.name.to_ascii_lowercase()))
                    .map(|e| e.cpp.as_str())
                    .collect();
                if kept.is_empty() {
                    if !annotated_here {
                        marker(&dl.raw, &mut body);
                    }
                } else {
                    let mut text = kept.join(" ");
                    if let Some(c) = comment {
                        text.push_str(" //");
                        text.push_str(c.trim_end());
                    }
                    body.push(text);
                }
            }
            DraftContent::Unconverted { names } => {
                for name in names {
                    let a = DraftAnnotation {
                        kind: AnnotationKind::UnconvertedDeclaration,
                        name: name.clone(),
                        resolved_file: None,
                        line: dl.line,
                    };
                    body.push(a.render());
                    annotations.push(a);
                }
                marker(&dl.raw, &mut body);
            }
            DraftContent::External { names } => {
                let covered = names.iter().all(|n| callable.contains(&n.to_ascii_lowercase()));
                if !(covered && annotated_here) {
                    marker(&dl.raw, &mut body);
                }
            }
            DraftContent::Copied => marker(&dl.raw, &mut body),
        }
    }

    let mut text = String::new();
    let includes = includes_for(&body);
    if !includes.is_empty() {
        for inc in &includes {
            text.push_str(inc);
            text.push('\n');
        }
        text.push('\n');
    }
    for line in &body {
        text.push_str(line);
        text.push('\n');
    }
    DraftArtifact { source_file: source_file.to_owned(), draft_text: text, annotations }
}

fn includes_for(body: &[String]) -> Vec<&'static str> {
    let code: Vec<&String> = body.iter().filter(|l| !l.starts_with("//")).collect();
    let uses = |needle: &str| code.iter().any(|l| l.contains(needle));
    let mut out = Vec::new();
    if uses("std::complex") {
        out.push("#include <complex>");
    }
    if uses("std::int64_t") {
        out.push("#include <cstdint>");
    }
    if uses("std::string") {
        out.push("#include <string>");
    }
    if uses("std::vector") {
        out.push("#include <vector>");
    }
    if uses("FArray") {
        out.push("#include \"FArray.hpp\"");
    }
    out
}

/// Path of the draft file for `source`: `<dir>/<stem>.scribe`.
pub fn draft_path(source: &Path) -> PathBuf {
    source.with_extension(DRAFT_EXTENSION)
}

/// Drafts `file` and writes `<stem>.scribe` beside it.
pub fn generate_draft(file: &Path, cmap: &ConstructMap, mapping: &TypeMapping) -> Result<DraftArtifact> {
    let bytes = fs::read(file).map_err(|e| Error::io(file, e))?;
    let artifact = draft_source(file, &fortran::decode(&bytes), cmap, mapping);
    let out = draft_path(file);
    fs::write(&out, &artifact.draft_text).map_err(|e| Error::io(&out, e))?;
    Ok(artifact)
}
