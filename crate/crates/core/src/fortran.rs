//! Line-oriented Fortran reader shared by the indexer and the drafter.
//!
//! Physical lines are grouped into logical lines (continuations joined,
//! comments split off, character literals respected). Each logical
//! statement line carries its text twice: as written, and as a "key" that
//! is lowercased with literal contents blanked out. Both strings have the
//! same byte length, so offsets found in the key slice the original text.

use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;

/// File extensions recognized as Fortran sources.
pub const FORTRAN_EXTENSIONS: &[&str] = &["f", "F", "f90", "F90"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceForm {
    Fixed,
    Free,
}

impl SourceForm {
    /// `.f`/`.F` are fixed form, `.f90`/`.F90` free form; anything else is not Fortran.
    pub fn from_path(path: &Path) -> Option<SourceForm> {
        match path.extension()?.to_str()? {
            "f" | "F" => Some(SourceForm::Fixed),
            "f90" | "F90" => Some(SourceForm::Free),
            _ => None,
        }
    }
}

pub fn is_fortran_path(path: &Path) -> bool {
    SourceForm::from_path(path).is_some()
}

/// Decodes source bytes as UTF-8, falling back to Latin-1 so any 8-bit
/// input yields text.
pub fn decode(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(s) => s.to_owned(),
        Err(_) => bytes.iter().map(|&b| b as char).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineKind {
    Blank,
    Comment,
    Preprocessor,
    Statement,
}

/// One statement of a logical line (logical lines may hold several
/// statements separated by `;`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stmt {
    pub text: String,
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogicalLine {
    pub kind: LineKind,
    /// First physical line, 1-based.
    pub start: usize,
    /// Last physical line, 1-based, inclusive.
    pub end: usize,
    pub label: Option<String>,
    /// Comment text for comment lines, the directive for preprocessor
    /// lines, the joined statement text otherwise.
    pub code: String,
    /// Trailing `!` comment on a statement line.
    pub comment: Option<String>,
    pub stmts: Vec<Stmt>,
}

#[derive(Debug, Clone)]
pub struct SourceFile {
    pub form: SourceForm,
    pub raw_lines: Vec<String>,
    pub lines: Vec<LogicalLine>,
    /// (line, message) problems found while reading.
    pub problems: Vec<(usize, String)>,
}

impl SourceFile {
    pub fn parse(text: &str, form: SourceForm) -> SourceFile {
        let raw_lines: Vec<String> = text
            .split('\n')
            .map(|l| l.strip_suffix('\r').unwrap_or(l).to_owned())
            .collect();
        // A trailing newline does not start another line.
        let raw_lines = match raw_lines.split_last() {
            Some((last, rest)) if last.is_empty() => rest.to_vec(),
            _ => raw_lines,
        };
        let mut reader = Reader::new(form);
        for (idx, line) in raw_lines.iter().enumerate() {
            reader.push(idx + 1, line);
        }
        let (lines, problems) = reader.finish();
        SourceFile { form, raw_lines, lines, problems }
    }

    /// Physical lines making up a logical line.
    pub fn raw(&self, line: &LogicalLine) -> &[String] {
        &self.raw_lines[line.start - 1..line.end]
    }

    pub fn statements(&self) -> impl Iterator<Item = (&LogicalLine, &Stmt)> {
        self.lines
            .iter()
            .filter(|l| l.kind == LineKind::Statement)
            .flat_map(|l| l.stmts.iter().map(move |s| (l, s)))
    }
}

struct Pending {
    start: usize,
    end: usize,
    label: Option<String>,
    code: String,
    comments: Vec<String>,
}

struct Reader {
    form: SourceForm,
    out: Vec<LogicalLine>,
    problems: Vec<(usize, String)>,
    pending: Option<Pending>,
    quote: Option<u8>,
    // Free form: the pending statement ended with `&`.
    continued: bool,
    // Comment/blank lines seen inside a free-form continuation sequence.
    held: Vec<LogicalLine>,
}

impl Reader {
    fn new(form: SourceForm) -> Self {
        Reader {
            form,
            out: Vec::new(),
            problems: Vec::new(),
            pending: None,
            quote: None,
            continued: false,
            held: Vec::new(),
        }
    }

    fn push(&mut self, n: usize, line: &str) {
        if let Some(pos) = line
            .chars()
            .position(|c| c.is_control() && c != '\t' && c != '\x0c')
        {
            self.problems
                .push((n, format!("control character in source text at column {}", pos + 1)));
        }
        match self.form {
            SourceForm::Fixed => self.push_fixed(n, line),
            SourceForm::Free => self.push_free(n, line),
        }
    }

    fn simple(kind: LineKind, n: usize, code: String) -> LogicalLine {
        LogicalLine {
            kind,
            start: n,
            end: n,
            label: None,
            code,
            comment: None,
            stmts: Vec::new(),
        }
    }

    fn push_fixed(&mut self, n: usize, line: &str) {
        if line.trim().is_empty() {
            self.flush();
            self.out.push(Self::simple(LineKind::Blank, n, String::new()));
            return;
        }
        let first = line.chars().next().unwrap_or(' ');
        if matches!(first, 'c' | 'C' | '*' | '!' | 'd' | 'D') {
            self.flush();
            let text = line[first.len_utf8()..].to_owned();
            self.out.push(Self::simple(LineKind::Comment, n, text));
            return;
        }
        if first == '#' {
            self.flush();
            self.out.push(Self::simple(LineKind::Preprocessor, n, line.to_owned()));
            return;
        }
        if line.trim_start().starts_with('!') && !is_fixed_continuation(line) {
            self.flush();
            let text = line.trim_start()[1..].to_owned();
            self.out.push(Self::simple(LineKind::Comment, n, text));
            return;
        }

        let (label, body, continuation) = split_fixed_columns(line);
        if continuation {
            let quote = &mut self.quote;
            let (code, comment) = split_comment(body, quote);
            match self.pending.as_mut() {
                Some(p) => {
                    if self.quote.is_none() && !p.code.ends_with(['\'', '"']) {
                        let trimmed = p.code.trim_end().len();
                        p.code.truncate(trimmed);
                    }
                    p.code.push_str(code);
                    p.end = n;
                    if let Some(c) = comment {
                        p.comments.push(c.to_owned());
                    }
                }
                None => {
                    self.problems
                        .push((n, "continuation line without a preceding statement".into()));
                    self.pending = Some(Pending {
                        start: n,
                        end: n,
                        label: None,
                        code: code.to_owned(),
                        comments: comment.map(|c| vec![c.to_owned()]).unwrap_or_default(),
                    });
                }
            }
            return;
        }

        self.flush();
        let (code, comment) = split_comment(body, &mut self.quote);
        self.pending = Some(Pending {
            start: n,
            end: n,
            label: label.filter(|l| !l.is_empty()).map(str::to_owned),
            code: code.to_owned(),
            comments: comment.map(|c| vec![c.to_owned()]).unwrap_or_default(),
        });
    }

    fn push_free(&mut self, n: usize, line: &str) {
        let trimmed = line.trim_start();
        if self.continued && self.quote.is_none() {
            if trimmed.is_empty() {
                self.held.push(Self::simple(LineKind::Blank, n, String::new()));
                return;
            }
            if let Some(text) = trimmed.strip_prefix('!') {
                self.held.push(Self::simple(LineKind::Comment, n, text.to_owned()));
                return;
            }
        }
        if !self.continued {
            if trimmed.is_empty() {
                self.out.push(Self::simple(LineKind::Blank, n, String::new()));
                return;
            }
            if let Some(text) = trimmed.strip_prefix('!') {
                self.out.push(Self::simple(LineKind::Comment, n, text.to_owned()));
                return;
            }
            if line.starts_with('#') {
                self.out.push(Self::simple(LineKind::Preprocessor, n, line.to_owned()));
                return;
            }
        }

        let body = if self.continued {
            match trimmed.strip_prefix('&') {
                Some(rest) => rest,
                None if self.quote.is_some() => line,
                None => trimmed,
            }
        } else {
            trimmed
        };
        let joined_directly = self.continued && (trimmed.starts_with('&') || self.quote.is_some());
        let (code, comment) = split_comment(body, &mut self.quote);
        let mut code = code.trim_end();
        let more = code.ends_with('&');
        if more {
            code = &code[..code.len() - 1];
        }

        match self.pending.as_mut() {
            Some(p) if self.continued => {
                if joined_directly {
                    p.code.push_str(code);
                } else {
                    let keep = p.code.trim_end().len();
                    p.code.truncate(keep);
                    if !p.code.is_empty() && !code.is_empty() {
                        p.code.push(' ');
                    }
                    p.code.push_str(code.trim_start());
                }
                p.end = n;
                if let Some(c) = comment {
                    p.comments.push(c.to_owned());
                }
            }
            _ => {
                self.pending = Some(Pending {
                    start: n,
                    end: n,
                    label: None,
                    code: code.to_owned(),
                    comments: comment.map(|c| vec![c.to_owned()]).unwrap_or_default(),
                });
            }
        }
        self.continued = more;
        if !more {
            self.flush();
        }
    }

    fn flush(&mut self) {
        if let Some(p) = self.pending.take() {
            if self.quote.take().is_some() {
                self.problems
                    .push((p.start, "unterminated character literal".into()));
            }
            let mut code = p.code.trim().to_owned();
            let mut label = p.label;
            if self.form == SourceForm::Free {
                if let Some((l, rest)) = split_free_label(&code) {
                    label = Some(l.to_owned());
                    code = rest.to_owned();
                }
            }
            let stmts = split_statements(&code);
            let comment = if p.comments.is_empty() {
                None
            } else {
                Some(p.comments.join(" "))
            };
            self.out.push(LogicalLine {
                kind: LineKind::Statement,
                start: p.start,
                end: p.end,
                label,
                code,
                comment,
                stmts,
            });
        }
        self.continued = false;
        self.out.append(&mut self.held);
    }

    fn finish(mut self) -> (Vec<LogicalLine>, Vec<(usize, String)>) {
        if self.continued {
            let line = self.pending.as_ref().map_or(0, |p| p.end);
            self.problems
                .push((line, "continuation `&` at end of file".into()));
        }
        self.flush();
        self.out.sort_by_key(|l| l.start);
        (self.out, self.problems)
    }
}

fn is_fixed_continuation(line: &str) -> bool {
    split_fixed_columns(line).2
}

/// Splits a fixed-form line into (label field, statement body, is-continuation).
fn split_fixed_columns(line: &str) -> (Option<&str>, &str, bool) {
    if let Some(rest) = line.strip_prefix('\t') {
        // Tab format: a nonzero digit right after the tab marks a continuation.
        return match rest.chars().next() {
            Some(c) if c.is_ascii_digit() && c != '0' => (None, &rest[1..], true),
            _ => (None, rest, false),
        };
    }
    let mut cols = line.char_indices();
    let mut label_end = line.len();
    let mut col6 = None;
    for (col, (idx, c)) in cols.by_ref().enumerate() {
        if c == '\t' && col < 5 {
            // Tab inside the label field: statement text follows.
            let rest = &line[idx + 1..];
            return (Some(line[..idx].trim()), rest, false);
        }
        if col == 5 {
            label_end = idx;
            col6 = Some((idx, c));
            break;
        }
    }
    match col6 {
        None => (Some(line.trim()), "", false),
        Some((idx, c)) => {
            let body = &line[idx + c.len_utf8()..];
            let label = line[..label_end].trim();
            let continuation = c != ' ' && c != '0' && label.is_empty();
            (Some(label), body, continuation)
        }
    }
}

fn split_free_label(code: &str) -> Option<(&str, &str)> {
    let digits = code.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 || digits > 5 {
        return None;
    }
    let rest = &code[digits..];
    if rest.starts_with([' ', '\t']) {
        Some((&code[..digits], rest.trim_start()))
    } else {
        None
    }
}

/// Splits a line body into code and `!` comment, tracking open character
/// literals across calls.
fn split_comment<'a>(body: &'a str, quote: &mut Option<u8>) -> (&'a str, Option<&'a str>) {
    let bytes = body.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match *quote {
            Some(q) => {
                if b == q {
                    if bytes.get(i + 1) == Some(&q) {
                        i += 1;
                    } else {
                        *quote = None;
                    }
                }
            }
            None => match b {
                b'\'' | b'"' => *quote = Some(b),
                b'!' => return (&body[..i], Some(&body[i + 1..])),
                _ => {}
            },
        }
        i += 1;
    }
    (body, None)
}

/// Lowercases `code` and blanks the contents of character literals. The
/// result has exactly the byte length of the input.
pub fn mask(code: &str) -> String {
    let mut out = Vec::with_capacity(code.len());
    let mut quote: Option<u8> = None;
    let bytes = code.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match quote {
            Some(q) if b == q => {
                if bytes.get(i + 1) == Some(&q) {
                    out.extend_from_slice(b"  ");
                    i += 2;
                    continue;
                }
                quote = None;
                out.push(b);
            }
            Some(_) => out.push(b' '),
            None => {
                if b == b'\'' || b == b'"' {
                    quote = Some(b);
                }
                out.push(b.to_ascii_lowercase());
            }
        }
        i += 1;
    }
    String::from_utf8(out).expect("masking keeps UTF-8 boundaries")
}

fn split_statements(code: &str) -> Vec<Stmt> {
    let key = mask(code);
    let mut stmts = Vec::new();
    let mut start = 0;
    for (i, b) in key.bytes().enumerate().chain(std::iter::once((key.len(), b';'))) {
        if b == b';' {
            let text = &code[start..i];
            let lead = text.len() - text.trim_start().len();
            let text = text.trim();
            if !text.is_empty() {
                let k = &key[start + lead..start + lead + text.len()];
                stmts.push(Stmt { text: text.to_owned(), key: k.to_owned() });
            }
            start = i + 1;
        }
    }
    stmts
}

// ---------------------------------------------------------------------------
// Statement recognizers. All take the masked key of a single statement.

/// Program-unit and interface-block boundaries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Header {
    Module(String),
    Subroutine { name: String, args: Vec<String> },
    Function { name: String, args: Vec<String> },
    Program(String),
    InterfaceStart,
    InterfaceEnd,
}

const PREFIX_WORDS: &[&str] = &["recursive", "pure", "elemental", "impure", "non_recursive", "module"];

static IDENT: &str = r"[a-z][a-z0-9_]*";

static MODULE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"^module\s+({IDENT})\s*$")).unwrap());
static PROGRAM_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"^program\s+({IDENT})\s*$")).unwrap());
static SUBROUTINE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"^subroutine\s+({IDENT})\s*(?:\(([^()]*)\))?\s*(?:bind\s*\(.*\))?\s*$"
    ))
    .unwrap()
});
static FUNCTION_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"^function\s+({IDENT})\s*\(([^()]*)\)\s*(?:(?:result|bind)\s*\([^()]*\)\s*)*$"
    ))
    .unwrap()
});
static INTERFACE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:abstract\s+)?interface\b").unwrap());
static END_INTERFACE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^end\s*interface\b").unwrap());
static MALFORMED_UNIT_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(subroutine|function)\s+[^\s=]").unwrap());
static BAD_NAME_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(module|program)\s+[^a-z\s=]").unwrap());

fn arg_list(list: Option<&str>) -> Vec<String> {
    list.map(|l| {
        l.split(',')
            .map(|a| a.trim().to_owned())
            .filter(|a| !a.is_empty())
            .collect()
    })
    .unwrap_or_default()
}

/// Recognizes a construct header, or reports the keyword of a malformed one.
pub fn parse_header(key: &str) -> Result<Option<Header>, &'static str> {
    let key = key.trim();
    if END_INTERFACE_RE.is_match(key) {
        return Ok(Some(Header::InterfaceEnd));
    }
    if INTERFACE_RE.is_match(key) {
        return Ok(Some(Header::InterfaceStart));
    }
    if let Some(c) = MODULE_RE.captures(key) {
        let name = &c[1];
        if name != "procedure" {
            return Ok(Some(Header::Module(name.to_owned())));
        }
        return Ok(None);
    }
    if let Some(c) = PROGRAM_RE.captures(key) {
        return Ok(Some(Header::Program(c[1].to_owned())));
    }

    let rest = strip_unit_prefix(key);
    if let Some(c) = SUBROUTINE_RE.captures(rest) {
        return Ok(Some(Header::Subroutine {
            name: c[1].to_owned(),
            args: arg_list(c.get(2).map(|m| m.as_str())),
        }));
    }
    if let Some(c) = FUNCTION_RE.captures(rest) {
        return Ok(Some(Header::Function {
            name: c[1].to_owned(),
            args: arg_list(c.get(2).map(|m| m.as_str())),
        }));
    }
    if let Some(c) = MALFORMED_UNIT_RE.captures(rest) {
        return Err(if &c[1] == "function" { "function" } else { "subroutine" });
    }
    if let Some(c) = BAD_NAME_RE.captures(key) {
        return Err(if &c[1] == "module" { "module" } else { "program" });
    }
    Ok(None)
}

/// Skips `recursive`/`pure`/... prefixes and a function result type.
fn strip_unit_prefix(key: &str) -> &str {
    let mut rest = key;
    loop {
        let trimmed = rest.trim_start();
        if let Some(word) = PREFIX_WORDS
            .iter()
            .find(|w| starts_with_word(trimmed, w))
        {
            rest = &trimmed[word.len()..];
            continue;
        }
        if let Some((_, used)) = parse_type_spec(trimmed) {
            let after = &trimmed[used..];
            if after.starts_with(char::is_whitespace) {
                let next = after.trim_start();
                if PREFIX_WORDS.iter().any(|w| starts_with_word(next, w))
                    || starts_with_word(next, "function")
                {
                    rest = after;
                    continue;
                }
            }
        }
        return trimmed;
    }
}

pub fn starts_with_word(s: &str, word: &str) -> bool {
    s.starts_with(word)
        && !s[word.len()..]
            .chars()
            .next()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BaseType {
    Integer,
    Real,
    DoublePrecision,
    Complex,
    DoubleComplex,
    Logical,
    Character,
    Derived(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeSpec {
    pub base: BaseType,
    /// Kind or length selector with whitespace removed, e.g. `*8`, `(dp)`, `(len=10)`.
    pub selector: Option<String>,
}

impl TypeSpec {
    /// Whitespace-free lowercase spelling, e.g. `real(dp)`, `doubleprecision`, `character*(*)`.
    pub fn canonical(&self) -> String {
        let base = match &self.base {
            BaseType::Integer => "integer",
            BaseType::Real => "real",
            BaseType::DoublePrecision => "doubleprecision",
            BaseType::Complex => "complex",
            BaseType::DoubleComplex => "doublecomplex",
            BaseType::Logical => "logical",
            BaseType::Character => "character",
            BaseType::Derived(d) => return d.clone(),
        };
        format!("{base}{}", self.selector.as_deref().unwrap_or(""))
    }
}

static TYPE_WORD_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(integer|real|double\s*precision|double\s*complex|complex|logical|character|type|class)")
        .unwrap()
});
static STAR_SELECTOR_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*\*\s*(\d+|\(\s*[^()]*\s*\))").unwrap());

/// Byte length of a balanced parenthesized group at the start of `s`.
pub fn balanced_len(s: &str) -> Option<usize> {
    if !s.starts_with('(') {
        return None;
    }
    let mut depth = 0usize;
    for (i, b) in s.bytes().enumerate() {
        match b {
            b'(' => depth += 1,
            b')' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// Parses a type specification at the start of `key`; returns it with the
/// number of bytes consumed.
pub fn parse_type_spec(key: &str) -> Option<(TypeSpec, usize)> {
    let m = TYPE_WORD_RE.find(key)?;
    let word: String = m.as_str().split_whitespace().collect();
    let mut used = m.end();
    let rest = &key[used..];
    let base = match word.as_str() {
        "integer" => BaseType::Integer,
        "real" => BaseType::Real,
        "doubleprecision" => BaseType::DoublePrecision,
        "doublecomplex" => BaseType::DoubleComplex,
        "complex" => BaseType::Complex,
        "logical" => BaseType::Logical,
        "character" => BaseType::Character,
        _ => {
            let lead = rest.len() - rest.trim_start().len();
            let len = balanced_len(&rest[lead..])?;
            used += lead + len;
            let canon: String = key[..used].split_whitespace().collect();
            return Some((TypeSpec { base: BaseType::Derived(canon), selector: None }, used));
        }
    };
    let mut selector = None;
    if matches!(base, BaseType::DoublePrecision | BaseType::DoubleComplex) {
        // no selector
    } else if let Some(c) = STAR_SELECTOR_RE.find(rest) {
        selector = Some(c.as_str().split_whitespace().collect::<String>());
        used += c.end();
    } else {
        let lead = rest.len() - rest.trim_start().len();
        if let Some(len) = balanced_len(&rest[lead..]) {
            selector = Some(rest[lead..lead + len].split_whitespace().collect::<String>());
            used += lead + len;
        }
    }
    // `reality = 1` is an assignment to a variable, not a type.
    if key[used..]
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_alphanumeric() || c == '_')
        && selector.is_none()
        && !key[m.end()..].starts_with(char::is_whitespace)
    {
        return None;
    }
    Some((TypeSpec { base, selector }, used))
}

/// Splits `s` at top-level commas (outside parentheses), returning byte ranges.
pub fn split_top_level(s: &str) -> Vec<(usize, usize)> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, b) in s.bytes().enumerate() {
        match b {
            b'(' | b'[' => depth += 1,
            b')' | b']' => depth -= 1,
            b',' if depth == 0 => {
                parts.push((start, i));
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push((start, s.len()));
    parts
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Attr {
    Parameter,
    Dimension(Vec<String>),
    Save,
    External,
    /// Attributes that carry no meaning for a draft (intent, optional, ...).
    Ignored,
    /// Attributes the draft cannot express (allocatable, pointer, ...).
    Unsupported(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    /// Name as written.
    pub name: String,
    /// Array bounds as written, one per dimension.
    pub dims: Option<Vec<String>>,
    /// `*len` override on a character entity.
    pub char_len: Option<String>,
    /// Initializer as written.
    pub init: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Declaration {
    pub spec: TypeSpec,
    pub attrs: Vec<Attr>,
    pub entities: Vec<Entity>,
}

impl Declaration {
    pub fn has(&self, attr: &Attr) -> bool {
        self.attrs.iter().any(|a| a == attr)
    }

    pub fn dimension(&self) -> Option<&[String]> {
        self.attrs.iter().find_map(|a| match a {
            Attr::Dimension(d) => Some(d.as_slice()),
            _ => None,
        })
    }

    /// Bounds of an entity, from its own array spec or a `dimension` attribute.
    pub fn dims_of<'a>(&'a self, e: &'a Entity) -> Option<&'a [String]> {
        e.dims.as_deref().or_else(|| self.dimension())
    }
}

/// What a single statement is, as far as the indexer and drafter care.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StmtKind {
    Header(Header),
    Declaration(Declaration),
    /// Starts with a type but could not be parsed as a declaration.
    MalformedDeclaration(String),
    /// `external a, b`
    External(Vec<String>),
    /// Other specification statements (`common`, `data`, `dimension`, ...).
    OtherDeclaration(&'static str),
    /// Anything executable or structural (`end`, `contains`, assignments, ...).
    Executable,
}

const OTHER_DECL_WORDS: &[&str] = &[
    "dimension",
    "parameter",
    "common",
    "data",
    "equivalence",
    "save",
    "intrinsic",
    "namelist",
    "implicit",
];

pub fn classify(stmt: &Stmt) -> StmtKind {
    let key = stmt.key.trim();
    if let Ok(Some(h)) = parse_header(key) {
        return StmtKind::Header(h);
    }
    if is_assignment_like(key) {
        return StmtKind::Executable;
    }
    if let Some(names) = parse_external(stmt) {
        return StmtKind::External(names);
    }
    if let Some(kw) = OTHER_DECL_WORDS.iter().find(|w| starts_with_word(key, w)) {
        if *kw == "implicit" && key.split_whitespace().collect::<String>() == "implicitnone" {
            return StmtKind::Executable;
        }
        return StmtKind::OtherDeclaration(kw);
    }
    if parse_type_spec(key).is_some() {
        return match parse_declaration(stmt) {
            Some(d) => StmtKind::Declaration(d),
            None => StmtKind::MalformedDeclaration(
                key.split(|c: char| !c.is_ascii_alphanumeric()).next().unwrap_or("").to_owned(),
            ),
        };
    }
    StmtKind::Executable
}

/// `name = ...` or `name(...) = ...` at the start of a statement: an
/// assignment (or statement-function definition), whatever the name.
fn is_assignment_like(key: &str) -> bool {
    let Some(m) = IDENT_START_RE.find(key) else {
        return false;
    };
    let mut rest = key[m.end()..].trim_start();
    if let Some(len) = balanced_len(rest) {
        rest = rest[len..].trim_start();
    }
    rest.starts_with('=') && !rest.starts_with("==") && !rest.starts_with("=>")
}

static IDENT_START_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"^{IDENT}")).unwrap());

fn parse_external(stmt: &Stmt) -> Option<Vec<String>> {
    let key = stmt.key.trim_start();
    if !starts_with_word(key, "external") {
        return None;
    }
    let offset = stmt.key.len() - key.len() + "external".len();
    let rest_key = &stmt.key[offset..];
    let rest_text = &stmt.text[offset..];
    let (rest_key, rest_text) = match rest_key.find("::") {
        Some(p) => (&rest_key[p + 2..], &rest_text[p + 2..]),
        None => (rest_key, rest_text),
    };
    let names: Vec<String> = split_top_level(rest_key)
        .into_iter()
        .map(|(a, b)| rest_text[a..b].trim().to_owned())
        .filter(|n| !n.is_empty())
        .collect();
    let valid = names.iter().all(|n| IDENT_START_RE.find(&n.to_ascii_lowercase()).is_some_and(|m| m.end() == n.len()));
    (valid && !names.is_empty()).then_some(names)
}

fn parse_attr(key: &str, text: &str) -> Attr {
    let word_end = key
        .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .unwrap_or(key.len());
    let word = &key[..word_end];
    match word {
        "parameter" => Attr::Parameter,
        "save" => Attr::Save,
        "external" => Attr::External,
        "dimension" => {
            let rest = key[word_end..].trim_start();
            let lead = key.len() - rest.len();
            match balanced_len(rest) {
                Some(len) => Attr::Dimension(split_dims(&key[lead..lead + len], &text[lead..lead + len])),
                None => Attr::Unsupported(text.to_owned()),
            }
        }
        "intent" | "optional" | "value" | "target" | "contiguous" | "volatile" | "asynchronous"
        | "public" | "private" | "protected" => Attr::Ignored,
        _ => Attr::Unsupported(text.to_owned()),
    }
}

/// `(2, n+1)` → `["2", "n+1"]` using original spelling.
fn split_dims(key: &str, text: &str) -> Vec<String> {
    let inner_key = &key[1..key.len() - 1];
    let inner_text = &text[1..text.len() - 1];
    split_top_level(inner_key)
        .into_iter()
        .map(|(a, b)| inner_text[a..b].trim().to_owned())
        .collect()
}

static ENTITY_NAME_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"^\s*({IDENT})\s*")).unwrap());
static CHAR_LEN_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\*\s*(\d+|\(\s*[^()]*\s*\))\s*").unwrap());

fn parse_entity(key: &str, text: &str) -> Option<Entity> {
    let c = ENTITY_NAME_RE.captures(key)?;
    let name_m = c.get(1)?;
    let name = text[name_m.start()..name_m.end()].to_owned();
    let mut pos = c.get(0)?.end();
    let mut dims = None;
    if let Some(len) = balanced_len(&key[pos..]) {
        dims = Some(split_dims(&key[pos..pos + len], &text[pos..pos + len]));
        pos += len;
        pos += key[pos..].len() - key[pos..].trim_start().len();
    }
    let mut char_len = None;
    if let Some(m) = CHAR_LEN_RE.captures(&key[pos..]) {
        let g = m.get(1)?;
        char_len = Some(text[pos + g.start()..pos + g.end()].split_whitespace().collect());
        pos += m.get(0)?.end();
    }
    let rest = key[pos..].trim_start();
    let rest_at = key.len() - rest.len();
    let init = if rest.is_empty() {
        None
    } else if let Some(r) = rest.strip_prefix("=>") {
        let at = key.len() - r.len();
        Some(text[at..].trim().to_owned())
    } else if let Some(r) = rest.strip_prefix('=') {
        let at = key.len() - r.len();
        Some(text[at..].trim().to_owned())
    } else {
        let _ = rest_at;
        return None;
    };
    Some(Entity { name, dims, char_len, init })
}

/// Parses a type declaration statement (`real(dp), dimension(3) :: a, b = 1`).
pub fn parse_declaration(stmt: &Stmt) -> Option<Declaration> {
    let lead = stmt.key.len() - stmt.key.trim_start().len();
    let key = &stmt.key[lead..];
    let text = &stmt.text[lead..];
    let (spec, used) = parse_type_spec(key)?;
    let mut rest_key = &key[used..];
    let mut rest_text = &text[used..];

    let mut attrs = Vec::new();
    if let Some(sep) = rest_key.find("::") {
        let head_key = &rest_key[..sep];
        let head_text = &rest_text[..sep];
        let head_trim = head_key.trim_start();
        if !head_trim.is_empty() {
            let head_key = head_trim.strip_prefix(',')?;
            let off = head_text.len() - head_key.len();
            let head_text = &head_text[off..];
            for (a, b) in split_top_level(head_key) {
                let k = head_key[a..b].trim();
                if k.is_empty() {
                    return None;
                }
                let t_lead = head_key[a..b].len() - head_key[a..b].trim_start().len();
                let t = &head_text[a + t_lead..a + t_lead + k.len()];
                attrs.push(parse_attr(k, t));
            }
        }
        rest_key = &rest_key[sep + 2..];
        rest_text = &rest_text[sep + 2..];
    } else if !rest_key.starts_with(char::is_whitespace) && !rest_key.is_empty() {
        return None;
    }

    let mut entities = Vec::new();
    for (a, b) in split_top_level(rest_key) {
        entities.push(parse_entity(&rest_key[a..b], &rest_text[a..b])?);
    }
    if entities.is_empty() {
        return None;
    }
    Some(Declaration { spec, attrs, entities })
}

/// For `if (cond) stmt`, the trailing action statement; otherwise the
/// statement itself. Returned as a byte offset into the key.
pub fn action_offset(key: &str) -> usize {
    let trimmed = key.trim_start();
    let lead = key.len() - trimmed.len();
    if starts_with_word(trimmed, "if") || trimmed.starts_with("if(") {
        let after = &trimmed[2..];
        let ws = after.len() - after.trim_start().len();
        if let Some(len) = balanced_len(&after[ws..]) {
            let tail = &after[ws + len..];
            let tail_trim = tail.trim_start();
            if !tail_trim.is_empty() && !starts_with_word(tail_trim, "then") {
                return lead + 2 + ws + len + (tail.len() - tail_trim.len());
            }
        }
    }
    lead
}

static USE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"^use\s*(?:,\s*(?:intrinsic|non_intrinsic)\s*)?(?:::)?\s*({IDENT})\s*(?:,|$)"
    ))
    .unwrap()
});
static CALL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"^call\s+({IDENT})\s*(?:\(|$)")).unwrap());

/// Module named by a `use` statement, as (byte range in the key).
pub fn use_target(key: &str) -> Option<(usize, usize)> {
    let lead = key.len() - key.trim_start().len();
    let c = USE_RE.captures(key.trim_start())?;
    let m = c.get(1)?;
    Some((lead + m.start(), lead + m.end()))
}

/// Subroutine named by a `call` statement (possibly behind a logical `if`).
pub fn call_target(key: &str) -> Option<(usize, usize)> {
    let at = action_offset(key);
    let c = CALL_RE.captures(&key[at..])?;
    let m = c.get(1)?;
    Some((at + m.start(), at + m.end()))
}

/// Identifier tokens of a masked key with their byte ranges, skipping
/// numeric literals and dotted operators (`.and.`, `.true.`).
pub fn identifiers(key: &str) -> Vec<(usize, usize)> {
    let bytes = key.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b.is_ascii_digit() {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
        } else if b.is_ascii_lowercase() {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let dotted = start > 0 && bytes[start - 1] == b'.' && bytes.get(i) == Some(&b'.');
            if !dotted {
                out.push((start, i));
            }
        } else {
            i += 1;
        }
    }
    out
}
